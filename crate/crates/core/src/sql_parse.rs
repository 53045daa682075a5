//! Linking-schema extraction from SQL text.
//!
//! Extraction runs in four steps:
//!
//! 1. find the schema tables the query reads from (aliases resolved,
//!    subqueries and set operations included);
//! 2. split the SQL into a lowercase target list on whitespace and
//!    punctuation;
//! 3. link every column of those tables whose name appears in the target list;
//! 4. if the query contains `*`, a linked table with no matched column gets
//!    all of its columns.
//!
//! Column matching is purely lexical, so a column is linked whenever its name
//! shows up anywhere in the query, including inside string literals or as a
//! column of a different table.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};
use sqlparser::ast::{TableFactor, Visit, Visitor};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

use crate::schema::{DatabaseSchema, LinkSource, LinkingSchema, QuestionRecord};

/// Characters that split the target list, in addition to whitespace.
pub const PUNCTUATION: &[char] = &[
    ',', '.', '(', ')', '=', '<', '>', '!', ';', '\'', '"', '`', '+', '-', '*', '/', '%',
];

/// Lowercase fragments of a SQL string split on whitespace and [`PUNCTUATION`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlTokenList {
    pub tokens: Vec<String>,
    /// Whether the SQL contained a `*` anywhere.
    pub asterisk: bool,
}

impl SqlTokenList {
    pub fn contains(&self, word: &str) -> bool {
        self.tokens.iter().any(|t| t == word)
    }
}

pub fn tokenize_sql(sql: &str) -> SqlTokenList {
    let tokens = sql
        .split(|c: char| c.is_whitespace() || PUNCTUATION.contains(&c))
        .filter(|frag| !frag.is_empty())
        .map(str::to_lowercase)
        .collect();
    SqlTokenList {
        tokens,
        asterisk: sql.contains('*'),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableReference {
    /// Table name as declared in the schema.
    pub real_name: String,
    /// First alias the table was bound to, if any.
    pub alias: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableExtraction {
    /// Referenced tables in order of first appearance, deduplicated.
    pub tables: Vec<TableReference>,
    /// The SQL did not parse and tables were found by `FROM`/`JOIN` token matching.
    pub fallback_used: bool,
}

struct TableCollector<'a> {
    schema: &'a DatabaseSchema,
    found: Vec<TableReference>,
}

impl TableCollector<'_> {
    fn push(&mut self, name: &str, alias: Option<String>) {
        let Some(def) = self.schema.table(name) else {
            return;
        };
        if let Some(existing) = self.found.iter_mut().find(|t| t.real_name == def.name) {
            if existing.alias.is_none() {
                existing.alias = alias;
            }
            return;
        }
        self.found.push(TableReference {
            real_name: def.name.clone(),
            alias,
        });
    }
}

impl Visitor for TableCollector<'_> {
    type Break = ();

    fn pre_visit_table_factor(&mut self, factor: &TableFactor) -> ControlFlow<()> {
        if let TableFactor::Table { name, alias, .. } = factor
            && let Some(ident) = name.0.last().and_then(|part| part.as_ident())
        {
            let alias = alias.as_ref().map(|a| a.name.value.clone());
            self.push(&ident.value, alias);
        }
        ControlFlow::Continue(())
    }
}

/// Finds the schema tables referenced in `FROM`/`JOIN` clauses anywhere in `sql`.
///
/// SQL that fails to parse falls back to matching tokens that follow a
/// `from` or `join` token against the schema's table names.
pub fn extract_tables(sql: &str, schema: &DatabaseSchema) -> TableExtraction {
    let mut collector = TableCollector {
        schema,
        found: Vec::new(),
    };
    match Parser::parse_sql(&SQLiteDialect {}, sql) {
        Ok(statements) => {
            let _ = statements.visit(&mut collector);
            TableExtraction {
                tables: collector.found,
                fallback_used: false,
            }
        }
        Err(err) => {
            tracing::debug!(%err, "sql did not parse, matching tables by token");
            let tokens = tokenize_sql(sql).tokens;
            for pair in tokens.windows(2) {
                if pair[0] == "from" || pair[0] == "join" {
                    collector.push(&pair[1], None);
                }
            }
            TableExtraction {
                tables: collector.found,
                fallback_used: true,
            }
        }
    }
}

/// A linking schema together with how its tables were found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkExtraction {
    pub linking: LinkingSchema,
    pub fallback_used: bool,
}

pub fn link_sql(sql: &str, schema: &DatabaseSchema, source: LinkSource) -> LinkExtraction {
    let tables = extract_tables(sql, schema);
    let targets = tokenize_sql(sql);
    let target_set: HashSet<&str> = targets.tokens.iter().map(String::as_str).collect();

    let mut entries = BTreeMap::new();
    for table in &tables.tables {
        let Some(def) = schema.table(&table.real_name) else {
            continue;
        };
        let mut linked: BTreeSet<String> = def
            .columns
            .iter()
            .filter(|c| target_set.contains(c.name.to_lowercase().as_str()))
            .map(|c| c.name.clone())
            .collect();
        if targets.asterisk && linked.is_empty() {
            linked = def.columns.iter().map(|c| c.name.clone()).collect();
        }
        entries.insert(def.name.clone(), linked);
    }
    LinkExtraction {
        linking: LinkingSchema {
            db_id: schema.db_id.clone(),
            entries,
            source,
        },
        fallback_used: tables.fallback_used,
    }
}

/// Extracts the linking schema of `sql` against `schema`.
pub fn extract_linking_schema(sql: &str, schema: &DatabaseSchema, source: LinkSource) -> LinkingSchema {
    link_sql(sql, schema, source).linking
}

/// Ground-truth linking schema parsed from a record's gold SQL.
pub fn gold_labels(record: &QuestionRecord, schema: &DatabaseSchema) -> LinkingSchema {
    extract_linking_schema(&record.gold_sql, schema, LinkSource::Gold)
}
