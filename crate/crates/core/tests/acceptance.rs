//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{AssertUnwindSafe, catch_unwind};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use proptest::collection::vec as pvec;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use schemalink_core::evaluation::{
    Cell, EvalOptions, ResultTable, Verdict, VerdictMatrix, build_report, execution_accuracy, results_match,
    table_recall_at_4, upper_limit,
};
use schemalink_core::llm_client::ReplayBackend;
use schemalink_core::pipeline::{
    Checkpoint, Pipeline, PipelineTrace, RoundRecord, RunConfig, Strategy as Sql, self_consistency_vote,
};
use schemalink_core::prompting::{PromptTemplates, TemplateId};
use schemalink_core::schema::{ColumnDef, DatabaseSchema, DbResolver, LinkSource, SchemaIndex, TableDef};
use schemalink_core::sql_parse::{gold_labels, link_sql};
use schemalink_core::testkit::{self, FixtureDataset};

/// Traces from every pipeline run in this suite, re-checked by criterion 8.
static TRACES: Mutex<Vec<(PipelineTrace, SchemaIndex)>> = Mutex::new(Vec::new());

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

// ---------------------------------------------------------------------------
// 1. SQL parse oracle

fn sp_schema() -> DatabaseSchema {
    let t = |name: &str, cols: &[&str]| {
        TableDef::new(name, cols.iter().map(|c| ColumnDef::new(*c, "text")).collect())
    };
    DatabaseSchema::new(
        "sp_oracle",
        vec![
            t("singer", &["singer_id", "name", "country", "age", "is_male"]),
            t(
                "concert",
                &["concert_id", "concert_name", "theme", "stadium_id", "year"],
            ),
            t(
                "stadium",
                &["stadium_id", "location", "name", "capacity", "average"],
            ),
            t("singer_in_concert", &["concert_id", "singer_id"]),
            t("schedule", &["id", "order", "limit", "count", "date"]),
        ],
        vec![],
        vec![],
    )
    .unwrap()
}

const SINGER_ALL: &str = "singer: singer_id, name, country, age, is_male";
const CONCERT_ALL: &str = "concert: concert_id, concert_name, theme, stadium_id, year";
const STADIUM_ALL: &str = "stadium: stadium_id, location, name, capacity, average";

/// (SQL, expected linking written as `table: c1, c2; table2: c3`)
const SP_CASES: &[(&str, &str)] = &[
    ("SELECT count(*) FROM singer", SINGER_ALL),
    (
        "SELECT name, country, age FROM singer ORDER BY age DESC",
        "singer: name, country, age",
    ),
    (
        "SELECT avg(age), min(age), max(age) FROM singer WHERE country = 'France'",
        "singer: age, country",
    ),
    (
        "SELECT DISTINCT country FROM singer WHERE age > 20",
        "singer: country, age",
    ),
    ("SELECT song_name FROM singer", "singer:"),
    (
        "SELECT T2.name, count(*) FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
        "concert: stadium_id; stadium: stadium_id, name",
    ),
    (
        "SELECT T1.name FROM singer AS T1 JOIN singer_in_concert AS T2 ON T1.singer_id = T2.singer_id",
        "singer: name, singer_id; singer_in_concert: singer_id",
    ),
    (
        "SELECT name FROM stadium WHERE stadium_id NOT IN (SELECT stadium_id FROM concert)",
        "stadium: name, stadium_id; concert: stadium_id",
    ),
    (
        "SELECT country FROM singer WHERE age > 40 INTERSECT SELECT country FROM singer WHERE age < 30",
        "singer: country, age",
    ),
    (
        "SELECT location FROM stadium UNION SELECT country FROM singer",
        "stadium: location; singer: country",
    ),
    (
        "SELECT name FROM stadium EXCEPT SELECT T2.name FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id WHERE T1.year = 2014",
        "stadium: name, stadium_id; concert: stadium_id, year",
    ),
    ("SELECT * FROM concert", CONCERT_ALL),
    ("SELECT * FROM concert WHERE year = 2014", "concert: year"),
    (
        "SELECT count(*) FROM concert WHERE year = 2014 OR year = 2015",
        "concert: year",
    ),
    (
        "SELECT * FROM singer JOIN concert",
        "singer: singer_id, name, country, age, is_male; concert: concert_id, concert_name, theme, stadium_id, year",
    ),
    (
        "SELECT T1.*, T2.year FROM singer AS T1 JOIN concert AS T2",
        "singer: singer_id, name, country, age, is_male; concert: year",
    ),
    ("SELECT \"order\" FROM schedule", "schedule: order"),
    (
        "SELECT date FROM schedule ORDER BY id",
        "schedule: date, order, id",
    ),
    ("SELECT count(*) FROM schedule", "schedule: count"),
    ("SELECT id FROM schedule LIMIT 5", "schedule: id, limit"),
    (
        "SELECT count(*) FROM schedule WHERE date > '2020' ORDER BY \"order\" LIMIT 1",
        "schedule: count, date, order, limit",
    ),
    ("SELEC name FROM singer WHERE", "singer: name"),
    ("I think the answer uses the singer table", ""),
    ("You can get it from stadium records", "stadium:"),
    ("", ""),
    ("select NAME from SINGER where AGE > 30", "singer: name, age"),
    ("SELECT name FROM performer", ""),
    (
        "SELECT T1.name FROM singer AS T1 JOIN performer AS T2 ON T1.singer_id = T2.id",
        "singer: name, singer_id",
    ),
    (
        "WITH old AS (SELECT * FROM singer WHERE age > 40) SELECT name FROM old",
        "singer: name, age",
    ),
    (
        "WITH c AS (SELECT * FROM concert) SELECT count(*) FROM c",
        CONCERT_ALL,
    ),
    (
        "SELECT name FROM singer WHERE singer_id IN (SELECT singer_id FROM singer_in_concert WHERE concert_id IN (SELECT concert_id FROM concert WHERE year = 2014))",
        "singer: name, singer_id; singer_in_concert: concert_id, singer_id; concert: concert_id, year",
    ),
    (
        "SELECT max(c) FROM (SELECT count(*) AS c FROM singer_in_concert GROUP BY concert_id)",
        "singer_in_concert: concert_id",
    ),
    ("SELECT count(*) FROM (SELECT * FROM stadium)", STADIUM_ALL),
    (
        "SELECT name FROM singer WHERE country = 'age'",
        "singer: name, country, age",
    ),
    (
        "SELECT concert_name FROM concert WHERE theme LIKE '%name%'",
        "concert: concert_name, theme",
    ),
    (
        "SELECT T1.concert_name, T2.name FROM concert AS T1 JOIN stadium AS T2 ON T1.stadium_id = T2.stadium_id",
        "concert: concert_name, stadium_id; stadium: name, stadium_id",
    ),
    (
        "SELECT name FROM singer JOIN stadium ON singer.singer_id = stadium.stadium_id",
        "singer: name, singer_id; stadium: name, stadium_id",
    ),
    (
        "SELECT name, (SELECT count(*) FROM concert) FROM stadium",
        "stadium: name; concert: concert_id, concert_name, theme, stadium_id, year",
    ),
    (
        "SELECT T1.location, count(T2.concert_id) FROM stadium AS T1 LEFT JOIN concert AS T2 ON T1.stadium_id = T2.stadium_id GROUP BY T1.location",
        "stadium: location, stadium_id; concert: concert_id, stadium_id",
    ),
    (
        "SELECT country FROM singer GROUP BY country HAVING count(*) > 1",
        "singer: country",
    ),
    ("SELECT `name` FROM `singer`", "singer: name"),
    (
        "SELECT \"capacity\" FROM \"stadium\" WHERE \"average\" > 1000",
        "stadium: capacity, average",
    ),
    (
        "SELECT name FROM singer; SELECT year FROM concert;",
        "singer: name; concert: year",
    ),
    ("SELECT capacity * 2 FROM stadium", "stadium: capacity"),
    ("SELECT 2 * 3 FROM stadium", STADIUM_ALL),
    (
        "SELECT name FROM singer JOIN concert ON WHERE year",
        "singer: name; concert: year",
    ),
    ("SELECT * FROM stadium WHERE", STADIUM_ALL),
    ("SELECT name FROM main.singer", "singer: name"),
    (
        "SELECT T1.name FROM singer AS T1 JOIN singer AS T2 ON T1.age = T2.age",
        "singer: name, age",
    ),
];

fn parse_expected(text: &str) -> BTreeMap<String, BTreeSet<String>> {
    text.split(';')
        .map(str::trim)
        .filter(|part| !part.is_empty())
        .map(|part| {
            let (table, cols) = part.split_once(':').expect("table: columns");
            let cols = cols
                .split(',')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(String::from)
                .collect();
            (table.trim().to_string(), cols)
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let schema = sp_schema();
    let started = Instant::now();
    let mut failures = Vec::new();
    for (sql, expected) in SP_CASES {
        let got = link_sql(sql, &schema, LinkSource::Gold).linking.entries;
        if got != parse_expected(expected) {
            failures.push(format!("{sql:?} gave {got:?}"));
        }
    }
    let elapsed = started.elapsed();
    ensure(SP_CASES.len() >= 40, || format!("only {} cases", SP_CASES.len()))?;
    ensure(failures.is_empty(), || failures.join("; "))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("{} cases exact, {elapsed:.2?}", SP_CASES.len()))
}

// ---------------------------------------------------------------------------
// 2. Gold self-recall

fn criterion_2() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = testkit::write_fixture_dataset(dir.path(), testkit::base_question_count()).unwrap();
    let gold: Vec<_> = data
        .records
        .iter()
        .map(|r| gold_labels(r, data.schemas.get(&r.db_id).unwrap()))
        .collect();
    let recall = table_recall_at_4(&gold, &gold).map_err(|e| e.to_string())?;
    ensure(recall.ratio == Some(1.0), || format!("recall {recall:?}"))?;
    Ok(format!("{}/{} questions", recall.correct, recall.total))
}

// ---------------------------------------------------------------------------
// 3. EA self-match

fn gold_trace(record: &schemalink_core::schema::QuestionRecord) -> PipelineTrace {
    PipelineTrace {
        question_id: record.question_id,
        db_id: record.db_id.clone(),
        rounds: vec![RoundRecord {
            round: 0,
            template: TemplateId::Isg,
            prompt_key: None,
            raw_text: Some(record.gold_sql.clone()),
            sql: Some(record.gold_sql.clone()),
            source: None,
            latency_ms: 0,
            usage: None,
            error: None,
        }],
        schemas: vec![],
        scv_sql: None,
        scv_round: None,
        notes: vec![],
    }
}

fn criterion_3() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = testkit::write_fixture_dataset(dir.path(), testkit::base_question_count()).unwrap();
    ensure(data.records.len() >= 20, || "fewer than 20 questions".into())?;
    let started = Instant::now();
    let traces: Vec<_> = data.records.iter().map(gold_trace).collect();
    let score = execution_accuracy(
        &traces,
        &data.records,
        Sql::Round(0),
        &DbResolver::new(&data.root),
        10_000,
    )
    .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(score.score.ratio == Some(1.0), || format!("EA {:?}", score.score))?;
    ensure(score.score.total == data.records.len(), || {
        "unexpected exclusions".into()
    })?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{}/{} questions, {elapsed:.2?}",
        score.score.correct, score.score.total
    ))
}

// ---------------------------------------------------------------------------
// 4. results_match properties

fn cell() -> impl proptest::strategy::Strategy<Value = Cell> {
    prop_oneof![
        Just(Cell::Null),
        (-5i64..5).prop_map(Cell::Integer),
        (-1.0e6f64..1.0e6).prop_map(Cell::Real),
        "[a-c]{0,2}".prop_map(Cell::Text),
    ]
}

fn table() -> impl proptest::strategy::Strategy<Value = ResultTable> {
    (1usize..4).prop_flat_map(|cols| {
        pvec(pvec(cell(), cols), 0..6).prop_map(move |rows| ResultTable::new(cols, rows).unwrap())
    })
}

/// A second table related to the first: identical, row-permuted, or unrelated.
fn table_pair() -> impl proptest::strategy::Strategy<Value = (ResultTable, ResultTable)> {
    (table(), table(), 0u8..3, any::<u64>()).prop_map(|(a, other, mode, seed)| {
        let b = match mode {
            0 => a.clone(),
            1 => {
                let mut rows = a.rows.clone();
                if !rows.is_empty() {
                    let k = (seed as usize) % rows.len();
                    rows.rotate_left(k);
                }
                ResultTable::new(a.column_count, rows).unwrap()
            }
            _ => other,
        };
        (a, b)
    })
}

fn criterion_4() -> Outcome {
    const CASES: u32 = 1000;
    let mut runner = TestRunner::new(Config::with_cases(CASES));
    runner
        .run(&table_pair(), |(a, b)| {
            prop_assert!(results_match(&a, &a, true));
            prop_assert!(results_match(&a, &a, false));
            prop_assert_eq!(results_match(&a, &b, false), results_match(&b, &a, false));
            prop_assert_eq!(results_match(&a, &b, true), results_match(&b, &a, true));
            if results_match(&a, &b, true) {
                prop_assert!(results_match(&a, &b, false));
            }
            Ok(())
        })
        .map_err(|e| format!("table properties: {e}"))?;

    let mut runner = TestRunner::new(Config::with_cases(CASES));
    runner
        .run(&(-1.0e9f64..1.0e9, any::<bool>()), |(x, up)| {
            let scale = x.abs().max(1.0);
            let sign = if up { 1.0 } else { -1.0 };
            let single = |v: f64| ResultTable::new(1, vec![vec![Cell::Real(v)]]).unwrap();
            let base = single(x);
            let near = single(x + sign * 1e-6 * scale);
            let far = single(x + sign * 1e-5 * scale);
            prop_assert!(
                results_match(&near, &base, false),
                "1e-6 * scale must pass at {}",
                x
            );
            prop_assert!(
                !results_match(&far, &base, false),
                "1e-5 * scale must fail at {}",
                x
            );
            Ok(())
        })
        .map_err(|e| format!("tolerance boundary: {e}"))?;
    Ok(format!(
        "{CASES} randomized table pairs, {CASES} tolerance boundaries"
    ))
}

// ---------------------------------------------------------------------------
// 5. Determinism across worker counts

fn run_replay(
    data: &FixtureDataset,
    config: &RunConfig,
    backend: &ReplayBackend,
    checkpoint: &Path,
) -> Result<Vec<PipelineTrace>, String> {
    let templates = PromptTemplates::default();
    let resolver = DbResolver::new(&data.root);
    let pipeline = Pipeline {
        backend,
        templates: &templates,
        resolver: &resolver,
        config,
    };
    let cp = Checkpoint::open(checkpoint, false).map_err(|e| e.to_string())?;
    let traces = pipeline
        .run_dataset(&data.records, &data.schemas, Some(&cp))
        .map_err(|e| e.to_string())?;
    let mut store = TRACES.lock().unwrap();
    store.extend(traces.iter().map(|t| (t.clone(), data.schemas.clone())));
    Ok(traces)
}

fn replay_backend(
    data: &FixtureDataset,
    config: &RunConfig,
    answer: fn(&schemalink_core::schema::QuestionRecord, u32) -> String,
) -> ReplayBackend {
    ReplayBackend::from_records(testkit::synthesize_replay(
        &data.records,
        &data.schemas,
        &PromptTemplates::default(),
        config,
        answer,
    ))
}

fn report_json(
    data: &FixtureDataset,
    config: &RunConfig,
    traces: &[PipelineTrace],
) -> Result<String, String> {
    let opts = EvalOptions {
        rounds: config.rounds,
        exec_timeout_ms: config.exec_timeout_ms,
    };
    build_report(
        traces,
        &data.records,
        &data.schemas,
        &DbResolver::new(&data.root),
        &opts,
    )
    .map(|r| r.to_json())
    .map_err(|e| e.to_string())
}

fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = testkit::write_fixture_dataset(&dir.path().join("data"), 25).unwrap();
    let mut outputs = Vec::new();
    for workers in [1, 8] {
        let config = RunConfig {
            worker_count: workers,
            ..RunConfig::default()
        };
        let backend = replay_backend(&data, &config, testkit::varied_answer);
        let cp = dir.path().join(format!("traces_w{workers}.jsonl"));
        let traces = run_replay(&data, &config, &backend, &cp)?;
        let failed: Vec<_> = traces
            .iter()
            .flat_map(|t| &t.rounds)
            .filter_map(|r| r.error.clone())
            .collect();
        let ids: Vec<_> = traces
            .iter()
            .filter(|t| t.rounds.iter().any(|r| r.error.is_some()))
            .map(|t| {
                (
                    t.question_id,
                    t.rounds
                        .iter()
                        .filter(|r| r.error.is_some())
                        .map(|r| r.round)
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        ensure(failed.is_empty(), || format!("replay misses: {ids:?}"))?;
        outputs.push((fs::read(&cp).unwrap(), report_json(&data, &config, &traces)?));
    }
    ensure(outputs[0].0 == outputs[1].0, || "checkpoint files differ".into())?;
    ensure(outputs[0].1 == outputs[1].1, || "report JSON differs".into())?;
    Ok(format!(
        "25 questions, checkpoint {} bytes and report {} bytes identical for 1 and 8 workers",
        outputs[0].0.len(),
        outputs[0].1.len()
    ))
}

// ---------------------------------------------------------------------------
// 6. Self-consistency voting

fn cands(items: &[(u32, &str)]) -> Vec<(u32, String)> {
    items.iter().map(|(r, s)| (*r, s.to_string())).collect()
}

const VOTE_POOL: &[&str] = &[
    "SELECT count(*) FROM singer",
    "SELECT count(singer_id) FROM singer",
    "SELECT count(*) FROM singer WHERE age > 30",
    "SELECT max(age) FROM singer",
    "SELECT name FROM singer",
    "SELECT nme FROM singer",
    "SELECT FROM",
];

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = testkit::write_fixture_dataset(dir.path(), 1).unwrap();
    let db = DbResolver::new(&data.root).resolve("concert_singer");
    let vote = |c: &[(u32, String)]| self_consistency_vote(c, &db, 5_000).map_err(|e| e.to_string());

    let a = vote(&cands(&[
        (0, "SELECT count(*) FROM singer WHERE age > 30"),
        (1, "SELECT count(*) FROM singer"),
        (2, "SELECT count(singer_id) FROM singer"),
    ]))?;
    ensure(a.round == 2, || format!("(a) majority picked SQL{}", a.round))?;
    let a2 = vote(&cands(&[
        (0, "SELECT count(*) FROM singer"),
        (1, "SELECT count(singer_id) FROM singer"),
        (2, "SELECT max(age) FROM singer"),
    ]))?;
    ensure(a2.round == 1, || {
        format!("(a) majority over latest picked SQL{}", a2.round)
    })?;

    let b = vote(&cands(&[
        (0, "SELECT max(age) FROM singer"),
        (1, "SELECT count(*) FROM singer"),
        (2, "SELECT nme FROM singer"),
    ]))?;
    ensure(b.round == 1, || format!("(b) tie picked SQL{}", b.round))?;

    let c = vote(&cands(&[
        (0, "SELECT FROM"),
        (1, "SELECT nme FROM singer"),
        (2, "garbage"),
    ]))?;
    ensure(c.round == 2 && c.sql == "garbage", || {
        format!("(c) all-error picked SQL{}", c.round)
    })?;

    let mut runner = TestRunner::new(Config::with_cases(200));
    let gen_candidates = pvec(0..VOTE_POOL.len(), 1..5).prop_map(|picks| {
        picks
            .into_iter()
            .enumerate()
            .map(|(round, i)| (round as u32, VOTE_POOL[i].to_string()))
            .collect::<Vec<_>>()
    });
    runner
        .run(&gen_candidates, |candidates| {
            let got = self_consistency_vote(&candidates, &db, 5_000).unwrap();
            prop_assert!(candidates.contains(&(got.round, got.sql.clone())));
            Ok(())
        })
        .map_err(|e| format!("(d) membership: {e}"))?;
    Ok("majority, tie-break, all-error fallback, 200 randomized membership cases".into())
}

// ---------------------------------------------------------------------------
// 7. Upper limit

fn criterion_7() -> Outcome {
    use Verdict::{Correct as C, Error as E, Excluded as X, Incorrect as I};
    let matrix = VerdictMatrix {
        question_ids: (0..8).collect(),
        strategies: vec![Sql::Round(0), Sql::Round(1), Sql::Scv],
        verdicts: vec![
            vec![C, C, I, I, E, I, X, I],
            vec![I, C, C, I, I, I, X, I],
            vec![I, I, I, C, C, I, X, E],
        ],
    };
    let sets: Vec<BTreeSet<usize>> = matrix
        .verdicts
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, v)| **v == C)
                .map(|(q, _)| q)
                .collect()
        })
        .collect();
    for (i, a) in sets.iter().enumerate() {
        for (j, b) in sets.iter().enumerate() {
            ensure(i == j || !a.is_subset(b), || {
                format!("strategy {i} contained in {j}")
            })?;
        }
    }
    let counted: Vec<usize> = (0..8)
        .filter(|&q| matrix.verdicts.iter().all(|row| row[q] != X))
        .collect();
    let union = counted
        .iter()
        .filter(|&&q| matrix.verdicts.iter().any(|row| row[q] == C))
        .count();
    let brute = union as f64 / counted.len() as f64;
    let got = upper_limit(&matrix);
    ensure(got.ratio == Some(brute), || {
        format!("upper limit {got:?}, brute force {brute}")
    })?;
    for row in &matrix.verdicts {
        let correct = row.iter().filter(|v| **v == C).count();
        let total = row.iter().filter(|v| **v != X).count();
        let ea = correct as f64 / total as f64;
        ensure(got.ratio.unwrap() > ea, || {
            format!("upper limit {got:?} not above {ea}")
        })?;
    }
    Ok(format!("upper limit {}/{} = {brute:.4}", got.correct, got.total))
}

// ---------------------------------------------------------------------------
// 8. Trace chain integrity

fn criterion_8() -> Outcome {
    let store = TRACES.lock().unwrap();
    ensure(!store.is_empty(), || "no traces recorded".into())?;
    let mut schemas_checked = 0;
    for (trace, schemas) in store.iter() {
        testkit::check_trace_chain(trace, schemas)?;
        schemas_checked += trace.schemas.len();
    }
    Ok(format!(
        "{} traces, {schemas_checked} linking schemas re-derived",
        store.len()
    ))
}

// ---------------------------------------------------------------------------
// 9. Throughput

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = testkit::write_fixture_dataset(&dir.path().join("data"), 1034).unwrap();
    let config = RunConfig {
        worker_count: 4,
        ..RunConfig::default()
    };
    let backend = replay_backend(&data, &config, testkit::gold_answer);
    let started = Instant::now();
    let traces = run_replay(&data, &config, &backend, &dir.path().join("traces.jsonl"))?;
    let report = report_json(&data, &config, &traces)?;
    let elapsed = started.elapsed();
    ensure(traces.len() == 1034, || format!("{} traces", traces.len()))?;
    ensure(report.contains("\"SCVSQL\""), || "report lacks vote row".into())?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("1034 questions run and evaluated in {elapsed:.2?}"))
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        (1, "SQL parse oracle suite", criterion_1),
        (2, "gold self-recall", criterion_2),
        (3, "execution accuracy self-match", criterion_3),
        (4, "results_match properties", criterion_4),
        (5, "pipeline determinism", criterion_5),
        (6, "self-consistency voting", criterion_6),
        (7, "upper-limit metric", criterion_7),
        (9, "throughput sanity", criterion_9),
        // Runs last so it sees the traces of every other run.
        (8, "trace chain integrity", criterion_8),
    ];
    let mut results: Vec<(u32, &str, Outcome)> = criteria
        .iter()
        .map(|(n, name, f)| {
            let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                Err(format!("panicked: {msg}"))
            });
            (*n, *name, outcome)
        })
        .collect();
    results.sort_by_key(|(n, _, _)| *n);

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {n}: {name} ({detail})"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n}: {name} ({why})");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
