//! Pattern pass over a plain user request for the constraints it states
//! explicitly: length bounds, quoted keywords, and a sentiment from a closed
//! word list. Anything else is left unconstrained.

use std::sync::LazyLock;

use regex::Regex;

use crate::constraints::{
    ConstraintSpec, LengthConstraint, LengthUnit, PhraseList, Polarity, Sentiment,
};

const NUMBER: &str = r"(\d+|one|two|three|four|five|six|seven|eight|nine|ten)";

static BETWEEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i)\bbetween\s+{NUMBER}\s+and\s+{NUMBER}[\s-]+(words?|sentences?)\b"
    ))
    .unwrap()
});

static SINGLE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(&format!(
        r"(?i)(?:\b(at most|no more than|up to|a maximum of|maximum of|max|within|under|fewer than|less than|at least|no fewer than|no less than|a minimum of|minimum of|min|more than|over|exactly)\s+)?\b{NUMBER}[\s-]+(words?|sentences?)\b"
    ))
    .unwrap()
});

static QUOTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#""([^"\n]+)"|“([^”\n]+)”"#).unwrap());

const POSITIVE: &[&str] = &[
    "positive", "happy", "cheerful", "joyful", "upbeat", "optimistic", "uplifting", "warm",
];
const NEGATIVE: &[&str] = &[
    "negative", "sad", "gloomy", "melancholic", "melancholy", "somber", "sombre", "pessimistic",
];
const NEUTRAL: &[&str] = &["neutral", "objective", "factual", "impartial"];

static SENTIMENT: LazyLock<Regex> = LazyLock::new(|| {
    let words = [POSITIVE, NEGATIVE, NEUTRAL].concat().join("|");
    Regex::new(&format!(
        r"(?i)\b(?:({words})\s+(?:tone|sentiment|mood|manner|way|feeling|style)|(?:tone|sentiment|mood)\s+(?:is\s+|should\s+be\s+|of\s+|:\s*)?({words}))\b"
    ))
    .unwrap()
});

fn number(s: &str) -> u32 {
    match s.to_ascii_lowercase().as_str() {
        "one" => 1,
        "two" => 2,
        "three" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "eight" => 8,
        "nine" => 9,
        "ten" => 10,
        digits => digits.parse().unwrap_or(u32::MAX),
    }
}

fn unit(s: &str) -> LengthUnit {
    if s.to_ascii_lowercase().starts_with("sentence") {
        LengthUnit::Sentences
    } else {
        LengthUnit::Words
    }
}

/// Bare counts ("in 50 words") are read as an upper bound. Only the first
/// unit mentioned is used; later bounds of the same kind are ignored.
fn length(text: &str) -> Option<LengthConstraint> {
    let mut found: Option<(LengthUnit, Option<u32>, Option<u32>)> = None;
    let mut merge = |u: LengthUnit, lo: Option<u32>, hi: Option<u32>| match &mut found {
        None => found = Some((u, lo, hi)),
        Some((fu, flo, fhi)) if *fu == u => {
            if flo.is_none() {
                *flo = lo;
            }
            if fhi.is_none() {
                *fhi = hi;
            }
        }
        Some(_) => {}
    };

    let mut spans = Vec::new();
    let mut hits: Vec<(usize, LengthUnit, Option<u32>, Option<u32>)> = Vec::new();
    for c in BETWEEN.captures_iter(text) {
        let m = c.get(0).unwrap();
        spans.push(m.range());
        let (a, b) = (number(&c[1]), number(&c[2]));
        hits.push((m.start(), unit(&c[3]), Some(a.min(b)), Some(a.max(b))));
    }
    for c in SINGLE.captures_iter(text) {
        let m = c.get(0).unwrap();
        if spans.iter().any(|r| r.contains(&m.start()) || r.contains(&(m.end() - 1))) {
            continue;
        }
        let n = number(&c[2]);
        let u = unit(&c[3]);
        let cue = c.get(1).map(|m| m.as_str().to_ascii_lowercase());
        let (lo, hi) = match cue.as_deref() {
            Some("under" | "fewer than" | "less than") => (None, n.checked_sub(1)),
            Some("more than" | "over") => (n.checked_add(1), None),
            Some("at least" | "no fewer than" | "no less than" | "a minimum of" | "minimum of" | "min") => {
                (Some(n), None)
            }
            Some("exactly") => (Some(n), Some(n)),
            _ => (None, Some(n)),
        };
        hits.push((m.start(), u, lo, hi));
    }
    hits.sort_by_key(|h| h.0);
    for (_, u, lo, hi) in hits {
        merge(u, lo, hi);
    }
    let (u, lo, hi) = found?;
    let hi = hi.filter(|h| *h > 0);
    LengthConstraint::new(u, lo, hi).ok()
}

fn keywords(text: &str) -> Option<PhraseList> {
    let items: Vec<String> = QUOTED
        .captures_iter(text)
        .filter_map(|c| c.get(1).or_else(|| c.get(2)))
        .map(|m| m.as_str().trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        None
    } else {
        PhraseList::new(items)
    }
}

fn sentiment(text: &str) -> Option<Sentiment> {
    let c = SENTIMENT.captures(text)?;
    let word = c.get(1).or_else(|| c.get(2))?.as_str().to_ascii_lowercase();
    let polarity = if POSITIVE.contains(&word.as_str()) {
        Polarity::Positive
    } else if NEGATIVE.contains(&word.as_str()) {
        Polarity::Negative
    } else {
        Polarity::Neutral
    };
    let tone = (word != polarity.as_str()).then_some(word);
    Some(Sentiment {
        polarity: Some(polarity),
        tone,
    })
}

pub fn extract_user_spec(text: &str) -> ConstraintSpec {
    ConstraintSpec {
        length: length(text),
        keywords: keywords(text),
        sentiment: sentiment(text),
        ..ConstraintSpec::default()
    }
}
