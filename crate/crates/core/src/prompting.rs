//! Prompt construction for initial and refinement SQL generation.
//!
//! Templates are plain UTF-8 files with a `[system]` and a `[user]` section.
//! The user section takes `{schema}`, `{question}` and, for refinement,
//! `{linking}` placeholders. Substitution is a single pass, so placeholder
//! text inside a substituted value is left alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::schema::{DatabaseSchema, LinkingSchema, SchemaError, render_linking_text, render_schema_text};

const DEFAULT_ISG: &str = include_str!("../templates/isg.txt");
const DEFAULT_SG: &str = include_str!("../templates/sg.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    /// Initial generation from the complete schema.
    #[serde(rename = "ISG")]
    Isg,
    /// Refinement with a linking schema as reference.
    #[serde(rename = "SG")]
    Sg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system_text: String,
    pub user_text: String,
    pub template_id: TemplateId,
    pub round: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("failed to read template {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid template {name}: {message}")]
    Template { name: String, message: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("refinement round must be at least 1")]
    Round,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    system: String,
    user: String,
}

impl Template {
    /// Parses template text, requiring each of `placeholders` exactly once in
    /// the user section.
    pub fn parse(name: &str, text: &str, placeholders: &[&str]) -> Result<Self, PromptError> {
        let invalid = |message: String| PromptError::Template {
            name: name.to_string(),
            message,
        };
        let text = text.replace("\r\n", "\n");
        let sys_at = text
            .find("[system]\n")
            .ok_or_else(|| invalid("missing [system] section".into()))?;
        let user_at = text
            .find("\n[user]\n")
            .ok_or_else(|| invalid("missing [user] section".into()))?;
        if user_at < sys_at {
            return Err(invalid("[system] must precede [user]".into()));
        }
        let system = text[sys_at + "[system]\n".len()..user_at].trim().to_string();
        let user = text[user_at + "\n[user]\n".len()..].trim().to_string();
        for ph in placeholders {
            let n = user.matches(&format!("{{{ph}}}")).count();
            if n != 1 {
                return Err(invalid(format!("{{{ph}}} must appear exactly once, found {n}")));
            }
        }
        Ok(Self { system, user })
    }

    fn fill(&self, values: &[(&str, &str)]) -> String {
        let mut out =
            String::with_capacity(self.user.len() + values.iter().map(|v| v.1.len()).sum::<usize>());
        let mut rest = self.user.as_str();
        'scan: while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open + 1..];
            for (key, value) in values {
                if let Some(after) = tail.strip_prefix(key).and_then(|t| t.strip_prefix('}')) {
                    out.push_str(value);
                    rest = after;
                    continue 'scan;
                }
            }
            out.push('{');
            rest = tail;
        }
        out.push_str(rest);
        out
    }
}

/// The two prompt families.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    initial: Template,
    refine: Template,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::from_texts(DEFAULT_ISG, DEFAULT_SG).expect("bundled templates are valid")
    }
}

impl PromptTemplates {
    pub fn from_texts(isg: &str, sg: &str) -> Result<Self, PromptError> {
        let initial = Template::parse("isg", isg, &["schema", "question"])?;
        let refine = Template::parse("sg", sg, &["schema", "linking", "question"])?;
        if initial.system == refine.system {
            return Err(PromptError::Template {
                name: "sg".into(),
                message: "system text must differ from the initial template".into(),
            });
        }
        Ok(Self { initial, refine })
    }

    /// Loads `isg.txt` and `sg.txt` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let path = dir.as_ref().join(name);
            fs::read_to_string(&path).map_err(|source| PromptError::Io { path, source })
        };
        Self::from_texts(&read("isg.txt")?, &read("sg.txt")?)
    }

    pub fn build_initial_prompt(&self, schema: &DatabaseSchema, question: &str) -> Prompt {
        let schema_text = render_schema_text(schema);
        Prompt {
            system_text: self.initial.system.clone(),
            user_text: self
                .initial
                .fill(&[("schema", &schema_text), ("question", question)]),
            template_id: TemplateId::Isg,
            round: 0,
        }
    }

    pub fn build_refine_prompt(
        &self,
        schema: &DatabaseSchema,
        linking: &LinkingSchema,
        question: &str,
        round: u32,
    ) -> Result<Prompt, PromptError> {
        if round == 0 {
            return Err(PromptError::Round);
        }
        let linking_text = render_linking_text(linking, schema)?;
        let schema_text = render_schema_text(schema);
        Ok(Prompt {
            system_text: self.refine.system.clone(),
            user_text: self.refine.fill(&[
                ("schema", &schema_text),
                ("linking", &linking_text),
                ("question", question),
            ]),
            template_id: TemplateId::Sg,
            round,
        })
    }
}
