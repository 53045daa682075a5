//! Schema linking for text-to-SQL by parsing model-generated SQL.
//!
//! An initial query is generated from the complete schema, parsed back into
//! the tables and columns it touches, and that linking schema is handed to
//! the model as a reference for the next attempt. Candidates from each round
//! are combined by voting over execution results.

pub mod evaluation;
pub mod llm_client;
pub mod pipeline;
pub mod prompting;
pub mod schema;
pub mod sql_parse;
#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

pub use evaluation::{EvalReport, ResultTable, Verdict, results_match};
pub use llm_client::{CompletionBackend, CompletionRequest, CompletionResult, LlmError};
pub use pipeline::{PipelineTrace, RunConfig, Strategy};
pub use prompting::{Prompt, PromptTemplates, TemplateId};
pub use schema::{DatabaseSchema, LinkSource, LinkingSchema, QuestionRecord, SchemaIndex};
pub use sql_parse::{extract_linking_schema, gold_labels};
