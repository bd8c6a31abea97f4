use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dsl::{parse_action, Action};

#[derive(Debug, Error)]
pub enum ExampleDbError {
    #[error("example database line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("cannot read example database: {0}")]
    Io(#[from] std::io::Error),
}

fn action_from_text<'de, D: Deserializer<'de>>(d: D) -> Result<Action, D::Error> {
    let text = String::deserialize(d)?;
    parse_action(&text).map_err(serde::de::Error::custom)
}

fn action_to_text<S: Serializer>(a: &Action, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&a.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainStep {
    pub thought: String,
    #[serde(deserialize_with = "action_from_text", serialize_with = "action_to_text")]
    pub action: Action,
    #[serde(default)]
    pub observation: String,
}

/// A curated thought/action/observation chain for one kind of request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainExample {
    pub id: String,
    pub instruction: String,
    pub steps: Vec<ChainStep>,
}

/// One JSON record per line; blank lines and `#` comments are skipped.
pub fn parse_examples(text: &str) -> Result<Vec<ChainExample>, ExampleDbError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let ex: ChainExample =
            serde_json::from_str(trimmed).map_err(|e| ExampleDbError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        if ex.steps.is_empty() {
            return Err(ExampleDbError::Malformed {
                line: line_no,
                message: format!("example `{}` has no steps", ex.id),
            });
        }
        if ex.instruction.trim().is_empty() {
            return Err(ExampleDbError::Malformed {
                line: line_no,
                message: format!("example `{}` has an empty instruction", ex.id),
            });
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_examples(path: &Path) -> Result<Vec<ChainExample>, ExampleDbError> {
    parse_examples(&std::fs::read_to_string(path)?)
}

pub const EXAMPLES_HEADER: &str = "## Examples";
pub const EXAMPLES_FOOTER: &str = "## End of examples";

/// Appends the selected examples, in order, after the full base prompt.
pub fn assemble_prompt(base_system_prompt: &str, selected: &[&ChainExample]) -> String {
    let mut out = String::from(base_system_prompt.trim_end());
    out.push_str("\n\n");
    out.push_str(EXAMPLES_HEADER);
    out.push('\n');
    for (i, ex) in selected.iter().enumerate() {
        let _ = writeln!(out, "### Example {}", i + 1);
        let _ = writeln!(out, "Instruction: {}", ex.instruction);
        for step in &ex.steps {
            let _ = writeln!(out, "Thought: {}", step.thought);
            let _ = writeln!(out, "Action: {}", step.action);
            if !step.observation.is_empty() {
                let _ = writeln!(out, "Observation: {}", step.observation);
            }
        }
    }
    out.push_str(EXAMPLES_FOOTER);
    out
}
