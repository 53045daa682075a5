//! Fixture datasets and replay files for tests and benchmarks.
//!
//! [`write_fixture_dataset`] lays out a small Spider-style dataset
//! (`tables.json`, `dev.json`, `database/<db>/<db>.sqlite`) and
//! [`synthesize_replay`] produces the replay records a pipeline run over it
//! will request, given a function choosing each round's model reply.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rusqlite::Connection;
use serde_json::json;

use crate::llm_client::{CacheRecord, CompletionRequest, extract_sql};
use crate::pipeline::RunConfig;
use crate::prompting::{Prompt, PromptTemplates};
use crate::schema::{DatabaseSchema, LinkSource, QuestionRecord, SchemaIndex, schema_from_sqlite};
use crate::sql_parse::link_sql;

const CONCERT_SINGER: &str = "
CREATE TABLE stadium (
  stadium_id INTEGER PRIMARY KEY,
  location TEXT,
  name TEXT,
  capacity INTEGER,
  average REAL
);
CREATE TABLE singer (
  singer_id INTEGER PRIMARY KEY,
  name TEXT,
  country TEXT,
  age INTEGER,
  is_male TEXT
);
CREATE TABLE concert (
  concert_id INTEGER PRIMARY KEY,
  concert_name TEXT,
  theme TEXT,
  stadium_id INTEGER REFERENCES stadium(stadium_id),
  year TEXT
);
CREATE TABLE singer_in_concert (
  concert_id INTEGER REFERENCES concert(concert_id),
  singer_id INTEGER REFERENCES singer(singer_id),
  PRIMARY KEY (concert_id, singer_id)
);
INSERT INTO stadium VALUES
  (1, 'Raith Rovers', 'Stark''s Park', 10104, 2106.0),
  (2, 'Ayr United', 'Somerset Park', 11998, 1477.0),
  (3, 'East Fife', 'Bayview Stadium', 2000, 864.0),
  (4, 'Queen''s Park', 'Hampden Park', 52500, 730.0),
  (5, 'Stirling Albion', 'Forthbank Stadium', 3808, 1125.5);
INSERT INTO singer VALUES
  (1, 'Joe Sharp', 'Netherlands', 52, 'F'),
  (2, 'Timbaland', 'United States', 32, 'T'),
  (3, 'Justin Brown', 'France', 29, 'T'),
  (4, 'Rose White', 'France', 41, 'F'),
  (5, 'John Nizinik', 'France', 43, 'T'),
  (6, 'Tribal King', 'France', 25, 'T');
INSERT INTO concert VALUES
  (1, 'Auditions', 'Free choice', 1, '2014'),
  (2, 'Super bootcamp', 'Free choice 2', 2, '2014'),
  (3, 'Home Visits', 'Bleeding Love', 2, '2015'),
  (4, 'Week 1', 'Wide Awake', 4, '2014'),
  (5, 'Week 2', 'Party All Night', 5, '2015');
INSERT INTO singer_in_concert VALUES
  (1, 2), (1, 3), (1, 5), (2, 3), (2, 6), (3, 5), (4, 4), (5, 3), (5, 6);
";

const PETS: &str = "
CREATE TABLE student (
  stuid INTEGER PRIMARY KEY,
  lname TEXT,
  fname TEXT,
  age INTEGER,
  sex TEXT,
  major INTEGER,
  city_code TEXT
);
CREATE TABLE pets (
  petid INTEGER PRIMARY KEY,
  pettype TEXT,
  pet_age INTEGER,
  weight REAL
);
CREATE TABLE has_pet (
  stuid INTEGER REFERENCES student(stuid),
  petid INTEGER REFERENCES pets(petid)
);
INSERT INTO student VALUES
  (1001, 'Smith', 'Linda', 18, 'F', 600, 'BAL'),
  (1002, 'Kim', 'Tracy', 19, 'F', 600, 'HKG'),
  (1003, 'Jones', 'Shiela', 21, 'F', 600, 'WAS'),
  (1004, 'Kumar', 'Dinesh', 20, 'M', 600, 'WAS'),
  (1005, 'Gompers', 'Paul', 26, 'M', 600, 'YYZ'),
  (1006, 'Schultz', 'Andy', 18, 'M', 600, 'BAL');
INSERT INTO pets VALUES
  (2001, 'cat', 3, 12.0),
  (2002, 'dog', 2, 13.4),
  (2003, 'dog', 1, 9.3);
INSERT INTO has_pet VALUES (1001, 2001), (1002, 2002), (1002, 2003);
";

const WORLD: &str = "
CREATE TABLE country (
  code TEXT PRIMARY KEY,
  name TEXT,
  continent TEXT,
  population INTEGER,
  lifeexpectancy REAL
);
CREATE TABLE city (
  id INTEGER PRIMARY KEY,
  name TEXT,
  countrycode TEXT REFERENCES country(code),
  population INTEGER
);
CREATE TABLE countrylanguage (
  countrycode TEXT REFERENCES country(code),
  language TEXT,
  isofficial TEXT,
  percentage REAL,
  PRIMARY KEY (countrycode, language)
);
INSERT INTO country VALUES
  ('ABW', 'Aruba', 'North America', 103000, 78.4),
  ('AFG', 'Afghanistan', 'Asia', 22720000, 45.9),
  ('NLD', 'Netherlands', 'Europe', 15864000, 78.3),
  ('FRA', 'France', 'Europe', 59225700, 78.8),
  ('BRA', 'Brazil', 'South America', 170115000, 62.9);
INSERT INTO city VALUES
  (1, 'Kabul', 'AFG', 1780000),
  (2, 'Qandahar', 'AFG', 237500),
  (5, 'Amsterdam', 'NLD', 731200),
  (6, 'Rotterdam', 'NLD', 593321),
  (129, 'Oranjestad', 'ABW', 29034),
  (2974, 'Paris', 'FRA', 2125246),
  (206, 'Sao Paulo', 'BRA', 9968485);
INSERT INTO countrylanguage VALUES
  ('ABW', 'Dutch', 'T', 5.3),
  ('ABW', 'Papiamento', 'F', 76.7),
  ('AFG', 'Pashto', 'T', 52.4),
  ('NLD', 'Dutch', 'T', 95.6),
  ('FRA', 'French', 'T', 93.6),
  ('BRA', 'Portuguese', 'T', 97.5);
";

/// (db_id, question, gold SQL)
const QUESTIONS: &[(&str, &str, &str)] = &[
    (
        "concert_singer",
        "How many singers do we have?",
        "SELECT count(*) FROM singer",
    ),
    (
        "concert_singer",
        "What are the names and ages of singers from France?",
        "SELECT name, age FROM singer WHERE country = 'France'",
    ),
    (
        "concert_singer",
        "List singer names ordered by age from oldest to youngest.",
        "SELECT name FROM singer ORDER BY age DESC",
    ),
    (
        "concert_singer",
        "What is the average, minimum, and maximum age of French singers?",
        "SELECT avg(age), min(age), max(age) FROM singer WHERE country = 'France'",
    ),
    (
        "concert_singer",
        "Show each country and the number of singers from it.",
        "SELECT country, count(*) FROM singer GROUP BY country",
    ),
    (
        "concert_singer",
        "What is the name and capacity of the stadium with the highest average attendance?",
        "SELECT name, capacity FROM stadium ORDER BY average DESC LIMIT 1",
    ),
    (
        "concert_singer",
        "How many concerts took place in 2014 or 2015?",
        "SELECT count(*) FROM concert WHERE year = '2014' OR year = '2015'",
    ),
    (
        "concert_singer",
        "Show the stadium name and the number of concerts held there.",
        "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
    ),
    (
        "concert_singer",
        "Which stadiums never hosted a concert?",
        "SELECT name FROM stadium WHERE stadium_id NOT IN (SELECT stadium_id FROM concert)",
    ),
    (
        "concert_singer",
        "List the names of singers who performed in a concert in 2014.",
        "SELECT DISTINCT T2.name FROM singer_in_concert AS T1 JOIN singer AS T2 ON T1.singer_id = T2.singer_id JOIN concert AS T3 ON T1.concert_id = T3.concert_id WHERE T3.year = '2014'",
    ),
    (
        "concert_singer",
        "Show the names of concerts and the number of singers in each.",
        "SELECT T2.concert_name, count(*) FROM singer_in_concert AS T1 JOIN concert AS T2 ON T1.concert_id = T2.concert_id GROUP BY T1.concert_id",
    ),
    (
        "concert_singer",
        "Which countries have singers both older than 40 and younger than 30?",
        "SELECT country FROM singer WHERE age > 40 INTERSECT SELECT country FROM singer WHERE age < 30",
    ),
    (
        "concert_singer",
        "List all stadium locations and singer countries.",
        "SELECT location FROM stadium UNION SELECT country FROM singer",
    ),
    (
        "concert_singer",
        "What is the total capacity of all stadiums?",
        "SELECT sum(capacity) FROM stadium",
    ),
    ("pets_1", "How many pets are there?", "SELECT count(*) FROM pets"),
    (
        "pets_1",
        "What is the average weight of each pet type?",
        "SELECT avg(weight), pettype FROM pets GROUP BY pettype",
    ),
    (
        "pets_1",
        "Find the first names of students who own a dog.",
        "SELECT T1.fname FROM student AS T1 JOIN has_pet AS T2 ON T1.stuid = T2.stuid JOIN pets AS T3 ON T3.petid = T2.petid WHERE T3.pettype = 'dog'",
    ),
    (
        "pets_1",
        "How many students do not own any pet?",
        "SELECT count(*) FROM student WHERE stuid NOT IN (SELECT stuid FROM has_pet)",
    ),
    (
        "pets_1",
        "List the ids of students older than 20, youngest first.",
        "SELECT stuid FROM student WHERE age > 20 ORDER BY age",
    ),
    (
        "pets_1",
        "Show every pet's type, age and weight.",
        "SELECT pettype, pet_age, weight FROM pets",
    ),
    (
        "pets_1",
        "Find the number of pets owned by each student who has any.",
        "SELECT stuid, count(*) FROM has_pet GROUP BY stuid",
    ),
    (
        "world_1",
        "How many countries are in Europe?",
        "SELECT count(*) FROM country WHERE continent = 'Europe'",
    ),
    (
        "world_1",
        "What are the names of cities in the Netherlands?",
        "SELECT T1.name FROM city AS T1 JOIN country AS T2 ON T1.countrycode = T2.code WHERE T2.name = 'Netherlands'",
    ),
    (
        "world_1",
        "Which languages are official in some country?",
        "SELECT DISTINCT language FROM countrylanguage WHERE isofficial = 'T'",
    ),
    (
        "world_1",
        "What is the average life expectancy of countries where Dutch is spoken?",
        "SELECT avg(lifeexpectancy) FROM country WHERE code IN (SELECT countrycode FROM countrylanguage WHERE language = 'Dutch')",
    ),
    (
        "world_1",
        "Give the name and population of the three most populous cities.",
        "SELECT name, population FROM city ORDER BY population DESC LIMIT 3",
    ),
    (
        "world_1",
        "List all information about countries in Asia.",
        "SELECT * FROM country WHERE continent = 'Asia'",
    ),
    (
        "world_1",
        "How many cities does each country have?",
        "SELECT countrycode, count(*) FROM city GROUP BY countrycode",
    ),
];

/// A fixture dataset written to disk.
#[derive(Debug, Clone)]
pub struct FixtureDataset {
    pub root: PathBuf,
    pub records: Vec<QuestionRecord>,
    pub schemas: SchemaIndex,
}

/// Number of distinct questions in the fixture dataset.
pub fn base_question_count() -> usize {
    QUESTIONS.len()
}

/// Writes the fixture dataset under `root` with `question_count` questions.
///
/// Past the base set, questions repeat with a numbered suffix so every
/// question text (and therefore every prompt) is distinct.
pub fn write_fixture_dataset(root: &Path, question_count: usize) -> io::Result<FixtureDataset> {
    let mut schemas = Vec::new();
    for (db_id, ddl) in [
        ("concert_singer", CONCERT_SINGER),
        ("pets_1", PETS),
        ("world_1", WORLD),
    ] {
        let dir = root.join("database").join(db_id);
        fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{db_id}.sqlite"));
        if path.exists() {
            fs::remove_file(&path)?;
        }
        Connection::open(&path)
            .and_then(|c| c.execute_batch(ddl))
            .map_err(io::Error::other)?;
        schemas.push(schema_from_sqlite(&path).map_err(io::Error::other)?);
    }
    let tables: Vec<_> = schemas.iter().map(spider_entry).collect();
    let tables_json = serde_json::to_string_pretty(&tables)?;
    fs::write(root.join("tables.json"), &tables_json)?;
    // Hand back the schemas as a loader of tables.json sees them.
    let schemas = crate::schema::parse_spider_tables(&tables_json).map_err(io::Error::other)?;

    let records: Vec<QuestionRecord> = (0..question_count)
        .map(|i| {
            let (db_id, question, gold) = QUESTIONS[i % QUESTIONS.len()];
            let question = if i < QUESTIONS.len() {
                question.to_string()
            } else {
                format!("{question} (variant {})", i / QUESTIONS.len())
            };
            QuestionRecord {
                question_id: i,
                question,
                db_id: db_id.to_string(),
                gold_sql: gold.to_string(),
            }
        })
        .collect();
    let dev: Vec<_> = records
        .iter()
        .map(|r| json!({"db_id": r.db_id, "question": r.question, "query": r.gold_sql}))
        .collect();
    fs::write(root.join("dev.json"), serde_json::to_string_pretty(&dev)?)?;

    Ok(FixtureDataset {
        root: root.to_path_buf(),
        records,
        schemas: SchemaIndex::new(schemas),
    })
}

fn spider_entry(schema: &DatabaseSchema) -> serde_json::Value {
    let mut columns = vec![json!([-1, "*"])];
    let mut types = vec![json!("text")];
    let mut index_of = std::collections::HashMap::new();
    for (t, table) in schema.tables().iter().enumerate() {
        for col in &table.columns {
            index_of.insert((table.name.clone(), col.name.clone()), columns.len());
            columns.push(json!([t, col.name]));
            let upper = col.decl_type.to_ascii_uppercase();
            let ty = if upper.contains("INT") || upper.contains("REAL") {
                "number"
            } else {
                "text"
            };
            types.push(json!(ty));
        }
    }
    let idx = |c: &crate::schema::ColumnRef| index_of[&(c.table.clone(), c.column.clone())];
    let primary_keys: Vec<usize> = schema.primary_keys().iter().map(idx).collect();
    let foreign_keys: Vec<[usize; 2]> = schema
        .foreign_keys()
        .iter()
        .map(|fk| [idx(&fk.child), idx(&fk.parent)])
        .collect();
    let names: Vec<&str> = schema.tables().iter().map(|t| t.name.as_str()).collect();
    json!({
        "db_id": schema.db_id,
        "table_names_original": names,
        "table_names": names,
        "column_names_original": columns,
        "column_names": columns,
        "column_types": types,
        "primary_keys": primary_keys,
        "foreign_keys": foreign_keys,
    })
}

/// Replay records for every request a run with `config` will make, where
/// `answer(record, round)` is the raw model reply for that round.
///
/// Rounds with the same prompt share a request key, so `answer` must give
/// them the same reply; a conflicting reply panics.
pub fn synthesize_replay(
    records: &[QuestionRecord],
    schemas: &SchemaIndex,
    templates: &PromptTemplates,
    config: &RunConfig,
    answer: impl Fn(&QuestionRecord, u32) -> String,
) -> Vec<CacheRecord> {
    let mut out: Vec<CacheRecord> = Vec::new();
    let mut seen: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for record in records {
        let schema = schemas.get(&record.db_id).expect("fixture schema");
        let mut push = |prompt: &Prompt, text: String| {
            let req =
                CompletionRequest::from_prompt(&config.model, prompt, config.temperature, config.max_tokens);
            let key = req.request_key();
            if let Some(&i) = seen.get(&key) {
                assert_eq!(out[i].raw_text, text, "conflicting replies for request {key}");
                return;
            }
            seen.insert(key.clone(), out.len());
            out.push(CacheRecord {
                request_key: key,
                model: config.model.clone(),
                raw_text: text,
                timestamp: 0,
            });
        };
        let first = answer(record, 0);
        let mut last = (0, extract_sql(&first));
        push(&templates.build_initial_prompt(schema, &record.question), first);
        for k in 1..=config.rounds {
            let linking = link_sql(&last.1, schema, LinkSource::Round(last.0)).linking;
            let prompt = templates
                .build_refine_prompt(schema, &linking, &record.question, k)
                .expect("linking drawn from schema");
            let text = answer(record, k);
            let sql = extract_sql(&text);
            push(&prompt, text);
            last = (k, sql);
        }
    }
    out
}

/// Model replies that always repeat the gold SQL.
pub fn gold_answer(record: &QuestionRecord, _round: u32) -> String {
    record.gold_sql.clone()
}

/// Deterministic mix of replies: mostly gold SQL, with fenced output, a
/// wrong first attempt, prose and a broken query spread across questions.
pub fn varied_answer(record: &QuestionRecord, round: u32) -> String {
    let id = record.question_id;
    match (id % 6, round) {
        (1, 0) => format!("```sql\n{};\n```", record.gold_sql),
        (2, 0) => "SELECT 1".to_string(),
        (3, 1) => "I could not find a suitable query.".to_string(),
        (4, 1) => "SELECT FROM WHERE".to_string(),
        (5, 0) => format!("Here is the query:\n{}", record.gold_sql),
        _ => record.gold_sql.clone(),
    }
}

/// Checks that every stored Schema k is exactly what parsing its source
/// round's SQL yields, and that the source is the latest earlier round that
/// produced SQL.
pub fn check_trace_chain(
    trace: &crate::pipeline::PipelineTrace,
    schemas: &SchemaIndex,
) -> Result<(), String> {
    let schema = schemas
        .get(&trace.db_id)
        .ok_or_else(|| format!("question {}: unknown database {}", trace.question_id, trace.db_id))?;
    for stored in &trace.schemas {
        let expected_from = trace
            .rounds
            .iter()
            .filter(|r| r.round < stored.index && r.sql.is_some())
            .map(|r| r.round)
            .max()
            .ok_or_else(|| {
                format!(
                    "question {}: Schema{} has no source SQL",
                    trace.question_id, stored.index
                )
            })?;
        if stored.parsed_from != expected_from {
            return Err(format!(
                "question {}: Schema{} parsed from SQL{}, expected SQL{expected_from}",
                trace.question_id, stored.index, stored.parsed_from
            ));
        }
        let sql = trace.sql(stored.parsed_from).expect("round has SQL");
        let again = link_sql(sql, schema, LinkSource::Round(stored.parsed_from));
        if again.linking != stored.linking || again.fallback_used != stored.fallback_used {
            return Err(format!(
                "question {}: Schema{} does not match a re-parse of SQL{}",
                trace.question_id, stored.index, stored.parsed_from
            ));
        }
    }
    Ok(())
}
