//! Versioned prompt templates shipped as asset files.

pub const EVOLVER: &str = include_str!("../assets/evolver_prompt.v1.txt");
pub const EVOLVER_RETRY: &str = include_str!("../assets/evolver_retry.v1.txt");
pub const REACT_SYSTEM: &str = include_str!("../assets/react_system.v1.txt");
pub const JUDGE_DIMENSION: &str = include_str!("../assets/judge_dimension.v1.txt");
pub const JUDGE_CRITERION: &str = include_str!("../assets/judge_criterion.v1.txt");
pub const CONTEXT_QUERIES: &str = include_str!("../assets/context_queries.v1.txt");
pub const CONTEXT_SUMMARY: &str = include_str!("../assets/context_summary.v1.txt");
pub const TOOL_SENTIMENT: &str = include_str!("../assets/tool_sentiment.v1.txt");
pub const TOOL_EXPAND_QUESTION: &str = include_str!("../assets/tool_expand_question.v1.txt");
pub const TOOL_EXPAND_MERGE: &str = include_str!("../assets/tool_expand_merge.v1.txt");
pub const TOOL_CONDENSE: &str = include_str!("../assets/tool_condense.v1.txt");

/// Version tag recorded in traces next to captured prompts.
pub const PROMPT_VERSION: &str = "v1";

/// Substitutes `{{key}}` placeholders in a single pass, so substituted values
/// are never re-scanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                let key = &after[..close];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        debug_assert!(false, "template variable `{key}` not supplied");
                        out.push_str(&rest[open..open + 4 + close]);
                    }
                }
                rest = &after[close + 2..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out.trim_end().to_string()
}
