use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CaptionFormat, ConstraintSpec, Dimension};
use crate::backends::{BackendError, ChatBackend};
use crate::judge;
use crate::model::Caption;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NeedsJudge,
    JudgedPass,
    JudgedFail,
}

impl Verdict {
    pub fn is_failure(self) -> bool {
        matches!(self, Verdict::Fail | Verdict::JudgedFail)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::NeedsJudge => "needs_judge",
            Verdict::JudgedPass => "judged_pass",
            Verdict::JudgedFail => "judged_fail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionResult {
    pub dimension: Dimension,
    pub verdict: Verdict,
    pub detail: String,
}

/// One entry per dimension set in the spec, in canonical dimension order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub results: Vec<DimensionResult>,
    pub overall: bool,
    /// Set when a judge call failed and some dimension was left unjudged.
    pub incomplete: bool,
}

impl VerificationReport {
    fn from_results(results: Vec<DimensionResult>) -> Self {
        let overall = !results.iter().any(|r| r.verdict.is_failure());
        Self {
            results,
            overall,
            incomplete: false,
        }
    }

    pub fn get(&self, dim: Dimension) -> Option<&DimensionResult> {
        self.results.iter().find(|r| r.dimension == dim)
    }

    pub fn failures(&self) -> impl Iterator<Item = &DimensionResult> {
        self.results.iter().filter(|r| r.verdict.is_failure())
    }

    /// Plain-text rendering, one line per dimension.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            out.push_str(&format!(
                "{}: {} - {}\n",
                r.dimension,
                r.verdict.as_str(),
                r.detail
            ));
        }
        out.push_str(if self.overall {
            "overall: pass"
        } else {
            "overall: fail"
        });
        if self.incomplete {
            out.push_str(" (incomplete)");
        }
        out
    }
}

#[derive(Debug, Error)]
#[error("judge call for {dimension} failed: {source}")]
pub struct JudgeFailure {
    pub dimension: Dimension,
    #[source]
    pub source: BackendError,
    /// Report with every dimension judged before the failure filled in.
    pub partial: VerificationReport,
}

fn is_bullet(line: &str) -> bool {
    line.starts_with("- ") || line.starts_with("• ")
}

fn is_numbered(line: &str) -> bool {
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    digits > 0
        && matches!(
            line[digits..].chars().next(),
            Some('.') | Some(')')
        )
        && line[digits + 1..].starts_with(' ')
}

fn check_format(text: &str, format: CaptionFormat) -> (bool, String) {
    let lines: Vec<&str> = text
        .lines()
        .map(str::trim_start)
        .filter(|l| !l.trim().is_empty())
        .collect();
    match format {
        CaptionFormat::Bullets => {
            let bad = lines.iter().filter(|l| !is_bullet(l)).count();
            if lines.is_empty() {
                (false, "no bullet lines".into())
            } else if bad == 0 {
                (true, format!("{} bullet lines", lines.len()))
            } else {
                (false, format!("{bad} of {} lines are not bullets", lines.len()))
            }
        }
        CaptionFormat::Numbered => {
            let bad = lines.iter().filter(|l| !is_numbered(l)).count();
            if lines.is_empty() {
                (false, "no numbered lines".into())
            } else if bad == 0 {
                (true, format!("{} numbered lines", lines.len()))
            } else {
                (false, format!("{bad} of {} lines are not numbered", lines.len()))
            }
        }
        CaptionFormat::Plain => {
            let listy = lines
                .iter()
                .filter(|l| is_bullet(l) || is_numbered(l))
                .count();
            if listy == 0 {
                (true, "plain prose".into())
            } else {
                (false, format!("{listy} lines are list items"))
            }
        }
    }
}

/// Checks length, keywords and format locally; the remaining dimensions are
/// marked `needs_judge`.
pub fn verify_deterministic(caption: &Caption, spec: &ConstraintSpec) -> VerificationReport {
    let text = caption.text();
    let results = spec
        .dimensions()
        .into_iter()
        .map(|dim| {
            let (verdict, detail) = match dim {
                Dimension::Length => {
                    let length = spec.length.expect("set");
                    let n = length.unit.measure(text);
                    let ok = length.admits(n);
                    (
                        if ok { Verdict::Pass } else { Verdict::Fail },
                        format!("{n} {}; required {length}", length.unit.as_str()),
                    )
                }
                Dimension::Keywords => {
                    let haystack = text.to_lowercase();
                    let missing: Vec<String> = spec
                        .keywords
                        .as_ref()
                        .expect("set")
                        .iter()
                        .filter(|k| !haystack.contains(&k.to_lowercase()))
                        .map(|k| format!("\"{k}\""))
                        .collect();
                    if missing.is_empty() {
                        (Verdict::Pass, "all keywords present".to_string())
                    } else {
                        (
                            Verdict::Fail,
                            format!("missing keywords: {}", missing.join(", ")),
                        )
                    }
                }
                Dimension::Format => {
                    let (ok, detail) = check_format(text, spec.format.expect("set"));
                    (if ok { Verdict::Pass } else { Verdict::Fail }, detail)
                }
                _ => (
                    Verdict::NeedsJudge,
                    format!("requires judge: {}", spec.describe(dim).unwrap_or_default()),
                ),
            };
            DimensionResult {
                dimension: dim,
                verdict,
                detail,
            }
        })
        .collect();
    VerificationReport::from_results(results)
}

/// Deterministic reports for a batch of candidates against one spec, in input order.
pub fn verify_all_sequential(captions: &[Caption], spec: &ConstraintSpec) -> Vec<VerificationReport> {
    captions.iter().map(|c| verify_deterministic(c, spec)).collect()
}

#[cfg(feature = "parallel")]
pub fn verify_all_parallel(captions: &[Caption], spec: &ConstraintSpec) -> Vec<VerificationReport> {
    use rayon::prelude::*;
    captions.par_iter().map(|c| verify_deterministic(c, spec)).collect()
}

pub fn verify_all(captions: &[Caption], spec: &ConstraintSpec) -> Vec<VerificationReport> {
    #[cfg(feature = "parallel")]
    {
        verify_all_parallel(captions, spec)
    }
    #[cfg(not(feature = "parallel"))]
    {
        verify_all_sequential(captions, spec)
    }
}

/// Deterministic checks plus one judge call per subjective dimension.
pub fn verify_judged(
    caption: &Caption,
    spec: &ConstraintSpec,
    judge: &dyn ChatBackend,
) -> Result<VerificationReport, JudgeFailure> {
    let mut report = verify_deterministic(caption, spec);
    for i in 0..report.results.len() {
        if report.results[i].verdict != Verdict::NeedsJudge {
            continue;
        }
        let dim = report.results[i].dimension;
        let requirement = spec.describe(dim).unwrap_or_default();
        match judge::judge_dimension(judge, caption.text(), dim, &requirement) {
            Ok(j) => {
                report.results[i].verdict = if j.pass {
                    Verdict::JudgedPass
                } else {
                    Verdict::JudgedFail
                };
                report.results[i].detail = j.rationale;
            }
            Err(source) => {
                let mut partial = VerificationReport::from_results(report.results);
                partial.incomplete = true;
                return Err(JudgeFailure {
                    dimension: dim,
                    source,
                    partial,
                });
            }
        }
    }
    Ok(VerificationReport::from_results(report.results))
}

#[cfg(test)]
mod tests {
    use super::super::{strategies, LengthConstraint, LengthUnit, PhraseList};
    use super::*;
    use crate::backends::ScriptedChat;
    use proptest::prelude::*;

    #[test]
    fn short_caption_meets_max() {
        let spec = ConstraintSpec {
            length: Some(LengthConstraint::max_words(5)),
            ..Default::default()
        };
        let r = verify_deterministic(&Caption::new("A dog."), &spec);
        assert_eq!(r.get(Dimension::Length).unwrap().verdict, Verdict::Pass);
        assert!(r.overall);
    }

    #[test]
    fn batch_matches_single_reports() {
        let spec = ConstraintSpec {
            length: Some(LengthConstraint::max_words(3)),
            ..Default::default()
        };
        let caps: Vec<Caption> = ["A dog.", "A dog runs far away.", "Cat."]
            .into_iter()
            .map(Caption::new)
            .collect();
        let single: Vec<_> = caps.iter().map(|c| verify_deterministic(c, &spec)).collect();
        assert_eq!(verify_all_sequential(&caps, &spec), single);
        assert_eq!(verify_all(&caps, &spec), single);
    }

    #[test]
    fn missing_keyword_fails() {
        let spec = ConstraintSpec {
            keywords: PhraseList::new(["Cybercab"]),
            ..Default::default()
        };
        let r = verify_deterministic(&Caption::new("A silver car parked outside."), &spec);
        let k = r.get(Dimension::Keywords).unwrap();
        assert_eq!(k.verdict, Verdict::Fail);
        assert!(k.detail.contains("\"Cybercab\""));
        assert!(!r.overall);
    }

    #[test]
    fn bullets_and_sentences() {
        // Hand check: three lines, each starting with "- ", each ending in a
        // period followed by newline or end, so three sentences.
        let caption = Caption::new("- A grey sofa faces the window.\n- A brass lamp stands nearby.\n- A wool rug covers the floor.");
        let spec = ConstraintSpec {
            format: Some(CaptionFormat::Bullets),
            length: Some(LengthConstraint::new(LengthUnit::Sentences, Some(3), None).unwrap()),
            ..Default::default()
        };
        let r = verify_deterministic(&caption, &spec);
        assert_eq!(r.get(Dimension::Format).unwrap().verdict, Verdict::Pass);
        assert_eq!(r.get(Dimension::Length).unwrap().verdict, Verdict::Pass);
    }

    #[test]
    fn format_rules() {
        assert!(check_format("1. one\n2) two", CaptionFormat::Numbered).0);
        assert!(!check_format("1.one", CaptionFormat::Numbered).0);
        assert!(!check_format("", CaptionFormat::Bullets).0);
        assert!(check_format("• a\n\n  - b", CaptionFormat::Bullets).0);
        assert!(check_format("A calm lake at dawn.", CaptionFormat::Plain).0);
        assert!(!check_format("Intro\n- item", CaptionFormat::Plain).0);
    }

    #[test]
    fn judged_dimensions() {
        let spec = ConstraintSpec {
            sentiment: Some(super::super::Sentiment {
                polarity: Some(super::super::Polarity::Positive),
                tone: None,
            }),
            genre: Some("poetry".into()),
            ..Default::default()
        };
        let judge = ScriptedChat::new(["PASS", "FAIL: tone is neutral"]);
        let r = verify_judged(&Caption::new("A bright day."), &spec, &judge).unwrap();
        assert_eq!(r.get(Dimension::Sentiment).unwrap().verdict, Verdict::JudgedPass);
        let g = r.get(Dimension::Genre).unwrap();
        assert_eq!(g.verdict, Verdict::JudgedFail);
        assert_eq!(g.detail, "tone is neutral");
        assert!(!r.overall);
    }

    #[test]
    fn judge_failure_marks_incomplete() {
        let spec = ConstraintSpec {
            view: Some("from above".into()),
            genre: Some("poetry".into()),
            ..Default::default()
        };
        let judge = ScriptedChat::new(["PASS"]);
        let err = verify_judged(&Caption::new("x"), &spec, &judge).unwrap_err();
        assert_eq!(err.dimension, Dimension::Genre);
        assert!(err.partial.incomplete);
        assert_eq!(err.partial.results[0].verdict, Verdict::JudgedPass);
        assert_eq!(err.partial.results[1].verdict, Verdict::NeedsJudge);
    }

    proptest! {
        #[test]
        fn verdict_classes_follow_dimension(spec in strategies::spec(), text in "[a-zA-Z .\n-]{0,80}") {
            let r = verify_deterministic(&Caption::new(text), &spec);
            prop_assert_eq!(r.results.len(), spec.dimensions().len());
            for res in &r.results {
                if res.dimension.is_deterministic() {
                    prop_assert!(matches!(res.verdict, Verdict::Pass | Verdict::Fail));
                } else {
                    prop_assert_eq!(res.verdict, Verdict::NeedsJudge);
                }
            }
        }

        #[test]
        fn passing_word_max_implies_count(max in 0u32..30, text in "[a-z ]{0,120}") {
            let spec = ConstraintSpec { length: Some(LengthConstraint::max_words(max)), ..Default::default() };
            let r = verify_deterministic(&Caption::new(text.clone()), &spec);
            if r.get(Dimension::Length).unwrap().verdict == Verdict::Pass {
                prop_assert!(crate::text::word_count(&text) <= max as usize);
            }
        }
    }
}
