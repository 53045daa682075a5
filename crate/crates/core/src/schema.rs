//! Database schemas, linking schemas and dataset records.
//!
//! Schemas are loaded from Spider-format `tables.json` files or read straight
//! from SQLite catalogs. Identifier lookups are case-insensitive everywhere;
//! the original casing is kept for display and prompt rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("failed to read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("sqlite error reading {path}")]
    Sqlite {
        path: PathBuf,
        #[source]
        source: rusqlite::Error,
    },
}

pub type Result<T, E = SchemaError> = std::result::Result<T, E>;

/// A column reference by table and column name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Self {
            table: table.into(),
            column: column.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ForeignKey {
    pub child: ColumnRef,
    pub parent: ColumnRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub decl_type: String,
}

impl ColumnDef {
    pub fn new(name: impl Into<String>, decl_type: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            decl_type: decl_type.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnDef>,
}

impl TableDef {
    pub fn new(name: impl Into<String>, columns: Vec<ColumnDef>) -> Self {
        Self {
            name: name.into(),
            columns,
        }
    }

    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name.eq_ignore_ascii_case(name))
    }
}

/// Full schema of one database.
///
/// Construct through [`DatabaseSchema::new`], which enforces uniqueness of
/// table and column names and that every key endpoint exists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct DatabaseSchema {
    pub db_id: String,
    tables: Vec<TableDef>,
    foreign_keys: Vec<ForeignKey>,
    primary_keys: Vec<ColumnRef>,
}

#[derive(Deserialize)]
struct RawSchema {
    db_id: String,
    tables: Vec<TableDef>,
    #[serde(default)]
    foreign_keys: Vec<ForeignKey>,
    #[serde(default)]
    primary_keys: Vec<ColumnRef>,
}

impl TryFrom<RawSchema> for DatabaseSchema {
    type Error = SchemaError;

    fn try_from(raw: RawSchema) -> Result<Self> {
        DatabaseSchema::new(raw.db_id, raw.tables, raw.foreign_keys, raw.primary_keys)
    }
}

impl DatabaseSchema {
    pub fn new(
        db_id: impl Into<String>,
        tables: Vec<TableDef>,
        foreign_keys: Vec<ForeignKey>,
        primary_keys: Vec<ColumnRef>,
    ) -> Result<Self> {
        let schema = Self {
            db_id: db_id.into(),
            tables,
            foreign_keys,
            primary_keys,
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for table in &self.tables {
            if !seen.insert(table.name.to_ascii_lowercase()) {
                return Err(SchemaError::Integrity(format!(
                    "{}: duplicate table name {:?}",
                    self.db_id, table.name
                )));
            }
            if table.columns.is_empty() {
                return Err(SchemaError::Integrity(format!(
                    "{}: table {:?} has no columns",
                    self.db_id, table.name
                )));
            }
            let mut cols = BTreeSet::new();
            for col in &table.columns {
                if col.name.is_empty() {
                    return Err(SchemaError::Integrity(format!(
                        "{}: table {:?} has an empty column name",
                        self.db_id, table.name
                    )));
                }
                if !cols.insert(col.name.to_ascii_lowercase()) {
                    return Err(SchemaError::Integrity(format!(
                        "{}: duplicate column {:?} in table {:?}",
                        self.db_id, col.name, table.name
                    )));
                }
            }
        }
        let keys = self
            .primary_keys
            .iter()
            .chain(self.foreign_keys.iter().flat_map(|fk| [&fk.child, &fk.parent]));
        for key in keys {
            if self.column(&key.table, &key.column).is_none() {
                return Err(SchemaError::Integrity(format!(
                    "{}: key references unknown column {}.{}",
                    self.db_id, key.table, key.column
                )));
            }
        }
        Ok(())
    }

    pub fn tables(&self) -> &[TableDef] {
        &self.tables
    }

    pub fn foreign_keys(&self) -> &[ForeignKey] {
        &self.foreign_keys
    }

    pub fn primary_keys(&self) -> &[ColumnRef] {
        &self.primary_keys
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Position of a table in declaration order.
    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnDef> {
        self.table(table).and_then(|t| t.column(column))
    }

    fn is_primary_key(&self, table: &str, column: &str) -> bool {
        self.primary_keys
            .iter()
            .any(|k| k.table.eq_ignore_ascii_case(table) && k.column.eq_ignore_ascii_case(column))
    }

    fn references_from(&self, table: &str, column: &str) -> impl Iterator<Item = &ColumnRef> {
        self.foreign_keys
            .iter()
            .filter(move |fk| {
                fk.child.table.eq_ignore_ascii_case(table) && fk.child.column.eq_ignore_ascii_case(column)
            })
            .map(|fk| &fk.parent)
    }
}

/// Lookup of loaded schemas by `db_id`.
#[derive(Debug, Clone, Default)]
pub struct SchemaIndex {
    by_id: BTreeMap<String, DatabaseSchema>,
}

impl SchemaIndex {
    pub fn new(schemas: impl IntoIterator<Item = DatabaseSchema>) -> Self {
        Self {
            by_id: schemas.into_iter().map(|s| (s.db_id.clone(), s)).collect(),
        }
    }

    pub fn get(&self, db_id: &str) -> Option<&DatabaseSchema> {
        self.by_id.get(db_id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &DatabaseSchema> {
        self.by_id.values()
    }
}

/// Where a linking schema came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkSource {
    Gold,
    Round(u32),
}

/// Per-question subset of a schema: table name to the set of linked columns.
///
/// Names carry the casing of the owning [`DatabaseSchema`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkingSchema {
    pub db_id: String,
    pub entries: BTreeMap<String, BTreeSet<String>>,
    pub source: LinkSource,
}

impl LinkingSchema {
    pub fn empty(db_id: impl Into<String>, source: LinkSource) -> Self {
        Self {
            db_id: db_id.into(),
            entries: BTreeMap::new(),
            source,
        }
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn table_count(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks every table and column against `schema`.
    pub fn validate(&self, schema: &DatabaseSchema) -> Result<()> {
        for (table, columns) in &self.entries {
            let def = schema.table(table).ok_or_else(|| {
                SchemaError::Integrity(format!(
                    "linking schema references unknown table {table:?} in {}",
                    schema.db_id
                ))
            })?;
            if let Some(col) = columns.iter().find(|c| def.column(c).is_none()) {
                return Err(SchemaError::Integrity(format!(
                    "linking schema references unknown column {table}.{col} in {}",
                    schema.db_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: usize,
    pub question: String,
    pub db_id: String,
    pub gold_sql: String,
}

// ---------------------------------------------------------------------------
// Spider ingestion

#[derive(Deserialize)]
#[serde(untagged)]
enum SpiderKey {
    Single(i64),
    Composite(Vec<i64>),
}

#[derive(Deserialize)]
struct SpiderTableEntry {
    db_id: String,
    table_names_original: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    column_types: Vec<String>,
    #[serde(default)]
    primary_keys: Vec<SpiderKey>,
    #[serde(default)]
    foreign_keys: Vec<(i64, i64)>,
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads every database schema from a Spider `tables.json` file.
pub fn load_spider_tables(path: impl AsRef<Path>) -> Result<Vec<DatabaseSchema>> {
    let path = path.as_ref();
    parse_spider_tables(&read_file(path)?)
}

pub fn parse_spider_tables(json: &str) -> Result<Vec<DatabaseSchema>> {
    let entries: Vec<serde_json::Value> = serde_json::from_str(json).map_err(|e| SchemaError::Parse {
        context: "tables.json".into(),
        message: e.to_string(),
    })?;
    entries
        .into_iter()
        .enumerate()
        .map(|(i, value)| {
            let label = value
                .get("db_id")
                .and_then(|v| v.as_str())
                .map(|id| format!("tables.json entry {i} ({id})"))
                .unwrap_or_else(|| format!("tables.json entry {i}"));
            let entry: SpiderTableEntry = serde_json::from_value(value).map_err(|e| SchemaError::Parse {
                context: label.clone(),
                message: e.to_string(),
            })?;
            spider_entry_to_schema(entry, &label)
        })
        .collect()
}

fn spider_entry_to_schema(entry: SpiderTableEntry, label: &str) -> Result<DatabaseSchema> {
    if entry.column_types.len() != entry.column_names_original.len() {
        return Err(SchemaError::Integrity(format!(
            "{label}: {} column types for {} columns",
            entry.column_types.len(),
            entry.column_names_original.len()
        )));
    }
    let mut tables: Vec<TableDef> = entry
        .table_names_original
        .iter()
        .map(|name| TableDef::new(name.clone(), Vec::new()))
        .collect();
    // Global column index -> (table, column) after the `*` sentinel is dropped.
    let mut resolved: Vec<Option<ColumnRef>> = Vec::with_capacity(entry.column_names_original.len());
    for ((table_idx, name), decl_type) in entry.column_names_original.iter().zip(&entry.column_types) {
        if *table_idx < 0 {
            resolved.push(None);
            continue;
        }
        let table = tables.get_mut(*table_idx as usize).ok_or_else(|| {
            SchemaError::Integrity(format!(
                "{label}: column {name:?} names missing table index {table_idx}"
            ))
        })?;
        table
            .columns
            .push(ColumnDef::new(name.clone(), decl_type.clone()));
        resolved.push(Some(ColumnRef::new(table.name.clone(), name.clone())));
    }
    let lookup = |idx: i64| -> Result<ColumnRef> {
        usize::try_from(idx)
            .ok()
            .and_then(|i| resolved.get(i))
            .and_then(Clone::clone)
            .ok_or_else(|| SchemaError::Integrity(format!("{label}: dangling column index {idx}")))
    };
    let mut primary_keys = Vec::new();
    for key in &entry.primary_keys {
        match key {
            SpiderKey::Single(idx) => primary_keys.push(lookup(*idx)?),
            SpiderKey::Composite(idxs) => {
                for idx in idxs {
                    primary_keys.push(lookup(*idx)?);
                }
            }
        }
    }
    let foreign_keys = entry
        .foreign_keys
        .iter()
        .map(|&(child, parent)| {
            Ok(ForeignKey {
                child: lookup(child)?,
                parent: lookup(parent)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DatabaseSchema::new(entry.db_id, tables, foreign_keys, primary_keys)
}

#[derive(Deserialize)]
struct SpiderQuestion {
    question: String,
    db_id: String,
    query: String,
}

/// Loads Spider question records (`dev.json`) in file order.
pub fn load_questions(path: impl AsRef<Path>) -> Result<Vec<QuestionRecord>> {
    parse_questions(&read_file(path.as_ref())?)
}

pub fn parse_questions(json: &str) -> Result<Vec<QuestionRecord>> {
    let values: Vec<serde_json::Value> = serde_json::from_str(json).map_err(|e| SchemaError::Parse {
        context: "questions".into(),
        message: e.to_string(),
    })?;
    values
        .into_iter()
        .enumerate()
        .map(|(i, value)| {
            let q: SpiderQuestion = serde_json::from_value(value).map_err(|e| SchemaError::Parse {
                context: format!("question record {i}"),
                message: e.to_string(),
            })?;
            if q.query.trim().is_empty() {
                return Err(SchemaError::Parse {
                    context: format!("question record {i}"),
                    message: "empty gold query".into(),
                });
            }
            Ok(QuestionRecord {
                question_id: i,
                question: q.question,
                db_id: q.db_id,
                gold_sql: q.query,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// SQLite catalog ingestion

/// Reads a schema from a SQLite database file. `db_id` is the file stem.
pub fn schema_from_sqlite(db_path: impl AsRef<Path>) -> Result<DatabaseSchema> {
    let path = db_path.as_ref();
    if !path.is_file() {
        return Err(SchemaError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "database file not found"),
        });
    }
    let sqlite_err = |source| SchemaError::Sqlite {
        path: path.to_path_buf(),
        source,
    };
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(sqlite_err)?;
    let db_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let table_names: Vec<String> = {
        let mut stmt = conn
            .prepare(
                "SELECT name FROM sqlite_master WHERE type = 'table' \
                 AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
            )
            .map_err(sqlite_err)?;
        let rows = stmt
            .query_map([], |row| row.get::<_, String>(0))
            .map_err(sqlite_err)?;
        rows.collect::<Result<_, _>>().map_err(sqlite_err)?
    };

    let mut tables = Vec::new();
    let mut primary_keys = Vec::new();
    let mut raw_fks = Vec::new();
    for name in &table_names {
        let quoted = quote_ident(name);
        let mut stmt = conn
            .prepare(&format!("PRAGMA table_info({quoted})"))
            .map_err(sqlite_err)?;
        let cols = stmt
            .query_map([], |row| {
                Ok((
                    row.get::<_, String>(1)?,
                    row.get::<_, Option<String>>(2)?.unwrap_or_default(),
                    row.get::<_, i64>(5)?,
                ))
            })
            .map_err(sqlite_err)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(sqlite_err)?;
        let mut pk: Vec<(i64, String)> = Vec::new();
        let mut columns = Vec::new();
        for (col, decl_type, pk_pos) in cols {
            if pk_pos > 0 {
                pk.push((pk_pos, col.clone()));
            }
            columns.push(ColumnDef::new(col, decl_type));
        }
        pk.sort();
        primary_keys.extend(pk.into_iter().map(|(_, c)| ColumnRef::new(name.clone(), c)));

        let mut stmt = conn
            .prepare(&format!("PRAGMA foreign_key_list({quoted})"))
            .map_err(sqlite_err)?;
        let fks = stmt
            .query_map([], |row| {
                Ok((
                    row.get::<_, String>(2)?,
                    row.get::<_, String>(3)?,
                    row.get::<_, Option<String>>(4)?,
                ))
            })
            .map_err(sqlite_err)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(sqlite_err)?;
        raw_fks.extend(
            fks.into_iter()
                .map(|(parent, from, to)| (name.clone(), from, parent, to)),
        );
        tables.push(TableDef::new(name.clone(), columns));
    }

    let mut foreign_keys = Vec::new();
    for (child_table, child_col, parent_table, parent_col) in raw_fks {
        let Some(parent_def) = tables.iter().find(|t| t.name.eq_ignore_ascii_case(&parent_table)) else {
            tracing::warn!(db = %db_id, "dropping foreign key to missing table {parent_table}");
            continue;
        };
        // A bare `REFERENCES t` targets the parent's primary key.
        let parent_col = match parent_col {
            Some(c) => c,
            None => match primary_keys
                .iter()
                .find(|k| k.table.eq_ignore_ascii_case(&parent_table))
            {
                Some(k) => k.column.clone(),
                None => {
                    tracing::warn!(db = %db_id, "dropping foreign key to {parent_table} without key");
                    continue;
                }
            },
        };
        let Some(parent_col_def) = parent_def.column(&parent_col) else {
            tracing::warn!(db = %db_id, "dropping foreign key to missing column {parent_table}.{parent_col}");
            continue;
        };
        foreign_keys.push(ForeignKey {
            child: ColumnRef::new(child_table, child_col),
            parent: ColumnRef::new(parent_def.name.clone(), parent_col_def.name.clone()),
        });
    }

    DatabaseSchema::new(db_id, tables, foreign_keys, primary_keys)
}

/// Maps a `db_id` to its SQLite file.
#[derive(Debug, Clone)]
pub struct DbResolver {
    data_root: PathBuf,
    overrides: BTreeMap<String, PathBuf>,
}

impl DbResolver {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        Self {
            data_root: data_root.into(),
            overrides: BTreeMap::new(),
        }
    }

    pub fn with_override(mut self, db_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        self.overrides.insert(db_id.into(), path.into());
        self
    }

    /// `<data_root>/database/<db_id>/<db_id>.sqlite` unless overridden.
    pub fn resolve(&self, db_id: &str) -> PathBuf {
        self.overrides.get(db_id).cloned().unwrap_or_else(|| {
            self.data_root
                .join("database")
                .join(db_id)
                .join(format!("{db_id}.sqlite"))
        })
    }
}

// ---------------------------------------------------------------------------
// Prompt rendering

fn is_plain_ident(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Double-quotes an identifier unless it is a plain `[A-Za-z_][A-Za-z0-9_]*` word.
pub fn quote_ident(name: &str) -> String {
    if is_plain_ident(name) {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

/// Renders the schema as `CREATE TABLE` blocks in declaration order, with
/// primary and foreign keys noted as trailing comments.
pub fn render_schema_text(schema: &DatabaseSchema) -> String {
    let mut out = String::new();
    for (ti, table) in schema.tables().iter().enumerate() {
        if ti > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "CREATE TABLE {} (", quote_ident(&table.name));
        let last = table.columns.len() - 1;
        for (ci, col) in table.columns.iter().enumerate() {
            let mut line = format!("  {}", quote_ident(&col.name));
            if !col.decl_type.is_empty() {
                line.push(' ');
                line.push_str(&col.decl_type);
            }
            if ci != last {
                line.push(',');
            }
            let mut notes = Vec::new();
            if schema.is_primary_key(&table.name, &col.name) {
                notes.push("primary key".to_string());
            }
            for parent in schema.references_from(&table.name, &col.name) {
                notes.push(format!(
                    "references {}({})",
                    quote_ident(&parent.table),
                    quote_ident(&parent.column)
                ));
            }
            if !notes.is_empty() {
                line.push_str(" -- ");
                line.push_str(&notes.join("; "));
            }
            out.push_str(&line);
            out.push('\n');
        }
        out.push_str(");\n");
    }
    out
}

/// Renders `table(col, col)` lines in schema order; `(none)` when empty.
pub fn render_linking_text(linking: &LinkingSchema, schema: &DatabaseSchema) -> Result<String> {
    linking.validate(schema)?;
    if linking.is_empty() {
        return Ok("(none)".to_string());
    }
    let lines: Vec<String> = schema
        .tables()
        .iter()
        .filter_map(|table| {
            let linked = linking
                .entries
                .iter()
                .find(|(name, _)| name.eq_ignore_ascii_case(&table.name))?
                .1;
            let cols: Vec<&str> = table
                .columns
                .iter()
                .filter(|c| linked.iter().any(|l| l.eq_ignore_ascii_case(&c.name)))
                .map(|c| c.name.as_str())
                .collect();
            Some(format!("{}({})", table.name, cols.join(", ")))
        })
        .collect();
    Ok(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONCERT_TABLES: &str = r#"[{
        "db_id": "concert_singer",
        "table_names_original": ["singer", "concert"],
        "table_names": ["singer", "concert"],
        "column_names_original": [[-1, "*"], [0, "name"], [0, "age"], [1, "year"]],
        "column_names": [[-1, "*"], [0, "name"], [0, "age"], [1, "year"]],
        "column_types": ["text", "text", "number", "text"],
        "primary_keys": [1],
        "foreign_keys": [[3, 1]]
    }]"#;

    fn singer_schema() -> DatabaseSchema {
        DatabaseSchema::new(
            "concert_singer",
            vec![TableDef::new(
                "singer",
                vec![ColumnDef::new("name", "text"), ColumnDef::new("age", "number")],
            )],
            vec![],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn spider_entry_drops_sentinel_and_resolves_keys() {
        let schemas = parse_spider_tables(CONCERT_TABLES).unwrap();
        assert_eq!(schemas.len(), 1);
        let s = &schemas[0];
        assert_eq!(s.db_id, "concert_singer");
        let names: Vec<Vec<&str>> = s
            .tables()
            .iter()
            .map(|t| t.columns.iter().map(|c| c.name.as_str()).collect())
            .collect();
        assert_eq!(names, vec![vec!["name", "age"], vec!["year"]]);
        assert_eq!(s.tables()[1].name, "concert");
        assert_eq!(
            s.foreign_keys(),
            &[ForeignKey {
                child: ColumnRef::new("concert", "year"),
                parent: ColumnRef::new("singer", "name"),
            }]
        );
        assert_eq!(s.primary_keys(), &[ColumnRef::new("singer", "name")]);
    }

    #[test]
    fn empty_tables_file() {
        assert!(parse_spider_tables("[]").unwrap().is_empty());
    }

    #[test]
    fn dangling_index_is_integrity_error() {
        let bad = CONCERT_TABLES.replace("[[3, 1]]", "[[3, 9]]");
        assert!(matches!(
            parse_spider_tables(&bad),
            Err(SchemaError::Integrity(_))
        ));
    }

    #[test]
    fn malformed_entry_names_offender() {
        let bad = r#"[{"db_id": "broken", "table_names_original": 3}]"#;
        match parse_spider_tables(bad) {
            Err(SchemaError::Parse { context, .. }) => assert!(context.contains("broken")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn composite_primary_keys_are_flattened() {
        let json = CONCERT_TABLES.replace("\"primary_keys\": [1]", "\"primary_keys\": [[1, 2]]");
        let s = &parse_spider_tables(&json).unwrap()[0];
        assert_eq!(s.primary_keys().len(), 2);
    }

    #[test]
    fn duplicate_tables_rejected_case_insensitively() {
        let err = DatabaseSchema::new(
            "x",
            vec![
                TableDef::new("T", vec![ColumnDef::new("a", "")]),
                TableDef::new("t", vec![ColumnDef::new("b", "")]),
            ],
            vec![],
            vec![],
        );
        assert!(err.is_err());
    }

    #[test]
    fn questions_load_in_order() {
        let json = r#"[{"question":"How many singers?","db_id":"concert_singer","query":"SELECT count(*) FROM singer"}]"#;
        let qs = parse_questions(json).unwrap();
        assert_eq!(
            qs,
            vec![QuestionRecord {
                question_id: 0,
                question: "How many singers?".into(),
                db_id: "concert_singer".into(),
                gold_sql: "SELECT count(*) FROM singer".into(),
            }]
        );
        assert!(parse_questions("[]").unwrap().is_empty());
    }

    #[test]
    fn question_missing_field_reports_index() {
        let json = r#"[{"question":"a","db_id":"d","query":"SELECT 1"},{"question":"b","db_id":"d"}]"#;
        match parse_questions(json) {
            Err(SchemaError::Parse { context, .. }) => assert_eq!(context, "question record 1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sqlite_catalog_with_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.sqlite");
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch(
            "CREATE TABLE u(c INT PRIMARY KEY, d TEXT);
             CREATE TABLE t(a INT PRIMARY KEY, b TEXT REFERENCES u(c));",
        )
        .unwrap();
        drop(conn);
        let s = schema_from_sqlite(&path).unwrap();
        assert_eq!(s.db_id, "fixture");
        let t = s.table("t").unwrap();
        assert_eq!(
            t.columns.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(),
            ["a", "b"]
        );
        assert!(s.primary_keys().contains(&ColumnRef::new("t", "a")));
        assert_eq!(
            s.foreign_keys(),
            &[ForeignKey {
                child: ColumnRef::new("t", "b"),
                parent: ColumnRef::new("u", "c"),
            }]
        );
    }

    #[test]
    fn empty_sqlite_database() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.sqlite");
        Connection::open(&path)
            .unwrap()
            .execute_batch("PRAGMA user_version = 1;")
            .unwrap();
        let s = schema_from_sqlite(&path).unwrap();
        assert!(s.tables().is_empty());
        assert_eq!(render_schema_text(&s), "");
    }

    #[test]
    fn missing_sqlite_file_is_io_error() {
        assert!(matches!(
            schema_from_sqlite("/nonexistent/x.sqlite"),
            Err(SchemaError::Io { .. })
        ));
    }

    #[test]
    fn schema_text_golden() {
        let schemas = parse_spider_tables(CONCERT_TABLES).unwrap();
        let text = render_schema_text(&schemas[0]);
        let expected = "\
CREATE TABLE singer (
  name text, -- primary key
  age number
);

CREATE TABLE concert (
  year text -- references singer(name)
);
";
        assert_eq!(text, expected);
        assert_eq!(text, render_schema_text(&schemas[0]));
    }

    #[test]
    fn schema_text_declares_each_column_once() {
        let text = render_schema_text(&singer_schema());
        assert_eq!(text.matches("name text").count(), 1);
        assert_eq!(text.matches("age number").count(), 1);
        assert!(text.starts_with("CREATE TABLE singer ("));
    }

    #[test]
    fn odd_identifiers_are_quoted() {
        assert_eq!(quote_ident("Home Town"), "\"Home Town\"");
        assert_eq!(quote_ident("a\"b"), "\"a\"\"b\"");
        assert_eq!(quote_ident("year"), "year");
    }

    #[test]
    fn linking_text_rendering() {
        let schema = singer_schema();
        let mut linking = LinkingSchema::empty("concert_singer", LinkSource::Round(1));
        assert_eq!(render_linking_text(&linking, &schema).unwrap(), "(none)");
        linking
            .entries
            .insert("singer".into(), ["age".to_string(), "name".to_string()].into());
        assert_eq!(
            render_linking_text(&linking, &schema).unwrap(),
            "singer(name, age)"
        );
    }

    #[test]
    fn linking_text_two_tables_in_schema_order() {
        let schema = &parse_spider_tables(CONCERT_TABLES).unwrap()[0];
        let mut linking = LinkingSchema::empty("concert_singer", LinkSource::Gold);
        linking
            .entries
            .insert("concert".into(), ["year".to_string()].into());
        linking
            .entries
            .insert("singer".into(), ["name".to_string()].into());
        assert_eq!(
            render_linking_text(&linking, schema).unwrap(),
            "singer(name)\nconcert(year)"
        );
    }

    #[test]
    fn linking_text_rejects_unknown_names() {
        let schema = singer_schema();
        let mut linking = LinkingSchema::empty("concert_singer", LinkSource::Gold);
        linking.entries.insert("stadium".into(), BTreeSet::new());
        assert!(render_linking_text(&linking, &schema).is_err());
        let mut linking = LinkingSchema::empty("concert_singer", LinkSource::Gold);
        linking
            .entries
            .insert("singer".into(), ["height".to_string()].into());
        assert!(render_linking_text(&linking, &schema).is_err());
    }

    #[test]
    fn schema_json_roundtrip_validates() {
        let schema = singer_schema();
        let json = serde_json::to_string(&schema).unwrap();
        let back: DatabaseSchema = serde_json::from_str(&json).unwrap();
        assert_eq!(back, schema);
        let bad = json.replace("\"age\"", "\"name\"");
        assert!(serde_json::from_str::<DatabaseSchema>(&bad).is_err());
    }
}
