//! PASS/FAIL judge calls.
//!
//! A judge answer must start with `PASS` or `FAIL`; anything after an optional
//! colon on the first line is kept as the rationale.

use serde::{Deserialize, Serialize};

use crate::backends::{chat, BackendError, ChatBackend, ChatMessage};
use crate::constraints::Dimension;
use crate::model::ImageRef;
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub pass: bool,
    pub rationale: String,
}

pub fn parse_judgment(answer: &str) -> Result<Judgment, BackendError> {
    let first = answer.trim().lines().next().unwrap_or_default().trim();
    let (pass, rest) = if let Some(rest) = first.strip_prefix("PASS") {
        (true, rest)
    } else if let Some(rest) = first.strip_prefix("FAIL") {
        (false, rest)
    } else {
        return Err(BackendError::Malformed(format!(
            "judge answer must start with PASS or FAIL: {first:?}"
        )));
    };
    let rationale = rest.trim_start_matches([':', ' ', '-']).trim();
    Ok(Judgment {
        pass,
        rationale: if rationale.is_empty() {
            if pass { "PASS" } else { "FAIL" }.to_string()
        } else {
            rationale.to_string()
        },
    })
}

pub fn ask(
    judge: &dyn ChatBackend,
    prompt: String,
    image: Option<&ImageRef>,
) -> Result<Judgment, BackendError> {
    let mut msg = ChatMessage::user(prompt);
    if let Some(img) = image {
        msg = msg.with_image(img);
    }
    parse_judgment(&chat(&[msg], judge)?)
}

pub fn judge_dimension(
    judge: &dyn ChatBackend,
    caption: &str,
    dim: Dimension,
    requirement: &str,
) -> Result<Judgment, BackendError> {
    let prompt = prompts::render(
        prompts::JUDGE_DIMENSION,
        &[
            ("dimension", dim.key()),
            ("requirement", requirement),
            ("caption", caption),
        ],
    );
    ask(judge, prompt, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_answers() {
        assert_eq!(
            parse_judgment("PASS").unwrap(),
            Judgment {
                pass: true,
                rationale: "PASS".into()
            }
        );
        assert_eq!(
            parse_judgment("  FAIL: tone is neutral\nmore").unwrap(),
            Judgment {
                pass: false,
                rationale: "tone is neutral".into()
            }
        );
        assert!(parse_judgment("Yes it passes").is_err());
    }
}
