//! Instruction evolution: rewrite a simple request into a professional
//! instruction with a constraint block, then review it against the four
//! evolving criteria.

mod user_spec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{chat, BackendError, ChatBackend, ChatMessage};
use crate::constraints::{
    check_inheritance, extract_constraint_block, BlockError, ConstraintSpec, Dimension,
    InheritanceReport,
};
use crate::context::ContextBundle;
use crate::judge;
use crate::model::{EvolvedInstruction, Instruction, Provenance};
use crate::prompts;

pub use user_spec::extract_user_spec;

/// What each dimension lets the evolver control, as listed in the prompt.
pub fn dimension_guide(dim: Dimension) -> &'static str {
    match dim {
        Dimension::View => "the viewpoint or perspective the caption is written from",
        Dimension::Sentiment => "the emotional tone of the caption (positive, negative or neutral)",
        Dimension::FocusContent => "specific objects or details the caption must concentrate on",
        Dimension::Keywords => "exact words or phrases that must appear in the caption",
        Dimension::Length => "the number of words or sentences",
        Dimension::Format => "plain prose, bullet points, or a numbered list",
        Dimension::Genre => "the style or genre of writing, such as news, poetry or advertising",
    }
}

pub fn dimensions_section() -> String {
    Dimension::ALL
        .iter()
        .map(|d| format!("- {}: {}", d.key(), dimension_guide(*d)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The full evolver prompt. With an empty bundle there is no context section.
pub fn evolver_prompt(user_instruction: &str, context: &ContextBundle) -> String {
    let context_section = if context.summary.trim().is_empty() {
        String::new()
    } else {
        format!(
            "Context about this image found on the web:\n{}\n\n",
            context.summary.trim()
        )
    };
    prompts::render(
        prompts::EVOLVER,
        &[
            ("dimensions", &dimensions_section()),
            ("context_section", &context_section),
            ("instruction", user_instruction),
        ],
    )
}

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("no valid constraint block after {attempts} attempts: {last_error}")]
    EvolveFailed {
        attempts: usize,
        last_error: String,
        /// Backend text of the last attempt.
        raw: String,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// A successful evolution and the exchange that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evolution {
    pub evolved: EvolvedInstruction,
    pub prompt: String,
    pub responses: Vec<String>,
}

impl Evolution {
    pub fn attempts(&self) -> usize {
        self.responses.len()
    }
}

fn parse_reply(text: &str) -> Result<ConstraintSpec, String> {
    match extract_constraint_block(text) {
        Ok(spec) if spec.is_empty() => Err("the constraint block sets no dimension".into()),
        Ok(spec) => Ok(spec),
        Err(BlockError::MissingBlock) => Err("no ---constraints block found".into()),
        Err(e) => Err(e.to_string()),
    }
}

/// `s* = A(s, c, x)`, retrying up to `retries` times on a malformed block.
pub fn evolve(
    instruction: &Instruction,
    context: &ContextBundle,
    backend: &dyn ChatBackend,
    retries: usize,
) -> Result<Evolution, EvolveError> {
    let prompt = evolver_prompt(instruction.text(), context);
    let mut messages = vec![ChatMessage::user(prompt.clone()).with_image(instruction.image())];
    let mut responses = Vec::new();
    loop {
        let reply = chat(&messages, backend)?;
        responses.push(reply.clone());
        match parse_reply(&reply) {
            Ok(spec) => {
                let provenance = if backend.id().is_fixture() {
                    Provenance::Fixture
                } else {
                    Provenance::Model
                };
                return Ok(Evolution {
                    evolved: EvolvedInstruction {
                        text: reply.trim().to_string(),
                        spec,
                        provenance,
                    },
                    prompt,
                    responses,
                });
            }
            Err(err) if responses.len() > retries => {
                return Err(EvolveError::EvolveFailed {
                    attempts: responses.len(),
                    last_error: err,
                    raw: reply,
                });
            }
            Err(err) => {
                messages.push(ChatMessage::assistant(reply));
                messages.push(ChatMessage::user(prompts::render(
                    prompts::EVOLVER_RETRY,
                    &[("error", &err)],
                )));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionVerdict {
    Pass,
    Fail,
    /// The judge call failed.
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedCriterion {
    pub verdict: CriterionVerdict,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub correctness: JudgedCriterion,
    pub content_specificity: JudgedCriterion,
    pub consistency: JudgedCriterion,
    pub constraint_inheritance: InheritanceReport,
}

impl CriteriaReport {
    pub fn all_pass(&self) -> bool {
        self.judged().iter().all(|(_, c)| c.verdict == CriterionVerdict::Pass)
            && self.constraint_inheritance.holds
    }

    pub fn is_incomplete(&self) -> bool {
        self.judged()
            .iter()
            .any(|(_, c)| c.verdict == CriterionVerdict::Incomplete)
    }

    pub fn judged(&self) -> [(&'static str, &JudgedCriterion); 3] {
        [
            ("correctness", &self.correctness),
            ("content_specificity", &self.content_specificity),
            ("consistency", &self.consistency),
        ]
    }

    pub fn render(&self) -> String {
        let mut lines: Vec<String> = self
            .judged()
            .iter()
            .map(|(name, c)| {
                let v = match c.verdict {
                    CriterionVerdict::Pass => "pass",
                    CriterionVerdict::Fail => "fail",
                    CriterionVerdict::Incomplete => "incomplete",
                };
                format!("{name}: {v} - {}", c.rationale)
            })
            .collect();
        let inh = &self.constraint_inheritance;
        lines.push(if inh.holds {
            "constraint_inheritance: pass".to_string()
        } else {
            let dims: Vec<&str> = inh.violations.iter().map(|d| d.key()).collect();
            format!("constraint_inheritance: fail - loosened or dropped: {}", dims.join(", "))
        });
        lines.join("\n")
    }
}

const CRITERIA: [(&str, &str); 3] = [
    (
        "correctness",
        "the instruction asks only for content a person could describe from the image; it does not request invisible or invented objects",
    ),
    (
        "content specificity",
        "the instruction is tailored to the visual content of this particular image rather than generic",
    ),
    (
        "consistency",
        "the constraints are logically coherent and do not contradict each other",
    ),
];

/// Inheritance is checked locally; the other three criteria take one judge
/// call each, in order.
pub fn validate_evolution(
    user_instruction: &Instruction,
    user_spec: &ConstraintSpec,
    evolved: &EvolvedInstruction,
    judge_backend: &dyn ChatBackend,
) -> CriteriaReport {
    let mut judged = CRITERIA.iter().map(|(name, definition)| {
        let prompt = prompts::render(
            prompts::JUDGE_CRITERION,
            &[
                ("criterion", name),
                ("definition", definition),
                ("user_instruction", user_instruction.text()),
                ("evolved_instruction", &evolved.text),
            ],
        );
        match judge::ask(judge_backend, prompt, Some(user_instruction.image())) {
            Ok(j) => JudgedCriterion {
                verdict: if j.pass {
                    CriterionVerdict::Pass
                } else {
                    CriterionVerdict::Fail
                },
                rationale: j.rationale,
            },
            Err(e) => JudgedCriterion {
                verdict: CriterionVerdict::Incomplete,
                rationale: e.to_string(),
            },
        }
    });
    let correctness = judged.next().expect("three criteria");
    let content_specificity = judged.next().expect("three criteria");
    let consistency = judged.next().expect("three criteria");
    CriteriaReport {
        correctness,
        content_specificity,
        consistency,
        constraint_inheritance: check_inheritance(user_spec, &evolved.spec),
    }
}
