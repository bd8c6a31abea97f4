//! The seven caption constraint dimensions, their machine-readable block form,
//! and checks of captions and evolved specs against them.

mod block;
mod inherit;
mod verify;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use block::{extract_constraint_block, render_constraint_block, BlockError};
pub use inherit::{check_inheritance, InheritanceReport};
#[cfg(feature = "parallel")]
pub use verify::verify_all_parallel;
pub use verify::{
    verify_all, verify_all_sequential, verify_deterministic, verify_judged, DimensionResult, JudgeFailure, Verdict,
    VerificationReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    View,
    Sentiment,
    FocusContent,
    Keywords,
    Length,
    Format,
    Genre,
}

impl Dimension {
    pub const ALL: [Dimension; 7] = [
        Dimension::View,
        Dimension::Sentiment,
        Dimension::FocusContent,
        Dimension::Keywords,
        Dimension::Length,
        Dimension::Format,
        Dimension::Genre,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Dimension::View => "view",
            Dimension::Sentiment => "sentiment",
            Dimension::FocusContent => "focus_content",
            Dimension::Keywords => "keywords",
            Dimension::Length => "length",
            Dimension::Format => "format",
            Dimension::Genre => "genre",
        }
    }

    pub fn from_key(key: &str) -> Option<Dimension> {
        Dimension::ALL.into_iter().find(|d| d.key() == key)
    }

    /// Dimensions checked without a judge.
    pub fn is_deterministic(self) -> bool {
        matches!(self, Dimension::Keywords | Dimension::Length | Dimension::Format)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
        }
    }
}

impl FromStr for Polarity {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "positive" => Ok(Polarity::Positive),
            "negative" => Ok(Polarity::Negative),
            "neutral" => Ok(Polarity::Neutral),
            _ => Err(()),
        }
    }
}

/// Closed polarity plus an optional free-text tone. At least one is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentiment {
    pub polarity: Option<Polarity>,
    pub tone: Option<String>,
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.polarity, &self.tone) {
            (Some(p), Some(t)) => write!(f, "{} ({t})", p.as_str()),
            (Some(p), None) => f.write_str(p.as_str()),
            (None, Some(t)) => f.write_str(t),
            (None, None) => f.write_str("unspecified"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    Words,
    Sentences,
}

impl LengthUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            LengthUnit::Words => "words",
            LengthUnit::Sentences => "sentences",
        }
    }

    pub fn measure(self, text: &str) -> usize {
        match self {
            LengthUnit::Words => crate::text::word_count(text),
            LengthUnit::Sentences => crate::text::sentence_count(text),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LengthConstraint {
    pub unit: LengthUnit,
    pub min: Option<u32>,
    pub max: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LengthError {
    #[error("length constraint needs a min or a max")]
    Unbounded,
    #[error("length min {min} exceeds max {max}")]
    Inverted { min: u32, max: u32 },
}

impl LengthConstraint {
    pub fn new(unit: LengthUnit, min: Option<u32>, max: Option<u32>) -> Result<Self, LengthError> {
        match (min, max) {
            (None, None) => Err(LengthError::Unbounded),
            (Some(lo), Some(hi)) if lo > hi => Err(LengthError::Inverted { min: lo, max: hi }),
            _ => Ok(Self { unit, min, max }),
        }
    }

    pub fn max_words(max: u32) -> Self {
        Self {
            unit: LengthUnit::Words,
            min: None,
            max: Some(max),
        }
    }

    pub fn min_words(min: u32) -> Self {
        Self {
            unit: LengthUnit::Words,
            min: Some(min),
            max: None,
        }
    }

    /// Bounds are inclusive.
    pub fn admits(&self, count: usize) -> bool {
        let count = count as u64;
        self.min.is_none_or(|lo| count >= lo as u64) && self.max.is_none_or(|hi| count <= hi as u64)
    }

    pub fn is_met_by(&self, text: &str) -> bool {
        self.admits(self.unit.measure(text))
    }
}

impl fmt::Display for LengthConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let unit = self.unit.as_str();
        match (self.min, self.max) {
            (Some(lo), Some(hi)) => write!(f, "min {lo} {unit}, max {hi} {unit}"),
            (Some(lo), None) => write!(f, "min {lo} {unit}"),
            (None, Some(hi)) => write!(f, "max {hi} {unit}"),
            (None, None) => f.write_str("unbounded"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionFormat {
    Plain,
    Bullets,
    Numbered,
}

impl CaptionFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            CaptionFormat::Plain => "plain",
            CaptionFormat::Bullets => "bullets",
            CaptionFormat::Numbered => "numbered",
        }
    }
}

impl FromStr for CaptionFormat {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "plain" => Ok(CaptionFormat::Plain),
            "bullets" => Ok(CaptionFormat::Bullets),
            "numbered" => Ok(CaptionFormat::Numbered),
            _ => Err(()),
        }
    }
}

/// Case-insensitively deduplicated phrase list; the first spelling wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhraseList(Vec<String>);

impl PhraseList {
    /// Returns `None` if any entry is blank.
    pub fn new<I, S>(items: I) -> Option<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for item in items {
            let item = item.into();
            if item.trim().is_empty() {
                return None;
            }
            if !out.iter().any(|o| o.to_lowercase() == item.to_lowercase()) {
                out.push(item);
            }
        }
        Some(Self(out))
    }

    pub fn contains_ci(&self, needle: &str) -> bool {
        let needle = needle.to_lowercase();
        self.0.iter().any(|o| o.to_lowercase() == needle)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Structured constraints; `None` means the dimension is unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub view: Option<String>,
    pub sentiment: Option<Sentiment>,
    pub focus_content: Option<PhraseList>,
    pub keywords: Option<PhraseList>,
    pub length: Option<LengthConstraint>,
    pub format: Option<CaptionFormat>,
    pub genre: Option<String>,
}

impl ConstraintSpec {
    pub fn is_set(&self, dim: Dimension) -> bool {
        match dim {
            Dimension::View => self.view.is_some(),
            Dimension::Sentiment => self.sentiment.is_some(),
            Dimension::FocusContent => self.focus_content.is_some(),
            Dimension::Keywords => self.keywords.is_some(),
            Dimension::Length => self.length.is_some(),
            Dimension::Format => self.format.is_some(),
            Dimension::Genre => self.genre.is_some(),
        }
    }

    /// Set dimensions in canonical order.
    pub fn dimensions(&self) -> Vec<Dimension> {
        Dimension::ALL.into_iter().filter(|d| self.is_set(*d)).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.dimensions().is_empty()
    }

    /// Human-readable value of one dimension, used in prompts and reports.
    pub fn describe(&self, dim: Dimension) -> Option<String> {
        let list = |l: &PhraseList| {
            l.iter()
                .map(|s| format!("\"{s}\""))
                .collect::<Vec<_>>()
                .join(", ")
        };
        Some(match dim {
            Dimension::View => self.view.clone()?,
            Dimension::Sentiment => self.sentiment.as_ref()?.to_string(),
            Dimension::FocusContent => list(self.focus_content.as_ref()?),
            Dimension::Keywords => list(self.keywords.as_ref()?),
            Dimension::Length => self.length.as_ref()?.to_string(),
            Dimension::Format => self.format?.as_str().to_string(),
            Dimension::Genre => self.genre.clone()?,
        })
    }
}

#[cfg(test)]
pub(crate) mod strategies {
    use super::*;
    use proptest::prelude::*;

    fn phrase() -> impl Strategy<Value = String> {
        "[A-Za-z0-9 \"\\\\,]{0,12}[A-Za-z0-9]"
    }

    pub fn phrase_list() -> impl Strategy<Value = PhraseList> {
        prop::collection::vec(phrase(), 1..4).prop_map(|v| PhraseList::new(v).unwrap())
    }

    pub fn length() -> impl Strategy<Value = LengthConstraint> {
        (
            prop_oneof![Just(LengthUnit::Words), Just(LengthUnit::Sentences)],
            prop::option::of(0u32..200),
            prop::option::of(0u32..200),
        )
            .prop_filter_map("bounded", |(unit, a, b)| {
                let (min, max) = match (a, b) {
                    (Some(x), Some(y)) => (Some(x.min(y)), Some(x.max(y))),
                    other => other,
                };
                LengthConstraint::new(unit, min, max).ok()
            })
    }

    pub fn sentiment() -> impl Strategy<Value = Sentiment> {
        (
            prop::option::of(prop_oneof![
                Just(Polarity::Positive),
                Just(Polarity::Negative),
                Just(Polarity::Neutral)
            ]),
            prop::option::of(phrase()),
        )
            .prop_filter("one part set", |(p, t)| p.is_some() || t.is_some())
            .prop_map(|(polarity, tone)| Sentiment { polarity, tone })
    }

    pub fn spec() -> impl Strategy<Value = ConstraintSpec> {
        (
            prop::option::of(phrase()),
            prop::option::of(sentiment()),
            prop::option::of(phrase_list()),
            prop::option::of(phrase_list()),
            prop::option::of(length()),
            prop::option::of(prop_oneof![
                Just(CaptionFormat::Plain),
                Just(CaptionFormat::Bullets),
                Just(CaptionFormat::Numbered)
            ]),
            prop::option::of(phrase()),
        )
            .prop_map(
                |(view, sentiment, focus_content, keywords, length, format, genre)| {
                    ConstraintSpec {
                        view,
                        sentiment,
                        focus_content,
                        keywords,
                        length,
                        format,
                        genre,
                    }
                },
            )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phrase_list_dedups_case_insensitively() {
        let list = PhraseList::new(["Tesla", "tesla", "Cybercab"]).unwrap();
        assert_eq!(list.iter().collect::<Vec<_>>(), vec!["Tesla", "Cybercab"]);
        assert!(PhraseList::new(["ok", "  "]).is_none());
    }

    #[test]
    fn length_bounds_are_inclusive() {
        let c = LengthConstraint::new(LengthUnit::Words, Some(3), Some(5)).unwrap();
        assert!(!c.admits(2));
        assert!(c.admits(3));
        assert!(c.admits(5));
        assert!(!c.admits(6));
        assert_eq!(
            LengthConstraint::new(LengthUnit::Words, Some(6), Some(5)),
            Err(LengthError::Inverted { min: 6, max: 5 })
        );
        assert_eq!(
            LengthConstraint::new(LengthUnit::Words, None, None),
            Err(LengthError::Unbounded)
        );
    }
}
