//! Fenced constraint blocks embedded in evolved instructions.
//!
//! ```text
//! ---constraints
//! keywords: "Venom 3", "HD wallpapers"
//! length: min 40 words, max 80 words
//! sentiment: positive "awe-struck"
//! format: bullets
//! ---
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use super::{
    CaptionFormat, ConstraintSpec, Dimension, LengthConstraint, LengthUnit, PhraseList, Polarity,
    Sentiment,
};
use crate::dsl::{quote, Cursor};

const OPEN: &str = "---constraints";
const CLOSE: &str = "---";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockError {
    #[error("no ---constraints block found")]
    MissingBlock,
    #[error("malformed constraint block at line {line}, column {column}: {message}")]
    MalformedBlock {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate key `{key}` at line {line}")]
    DuplicateKey { key: String, line: usize },
}

fn malformed(line: usize, column: usize, message: impl Into<String>) -> BlockError {
    BlockError::MalformedBlock {
        line,
        column,
        message: message.into(),
    }
}

/// Parses the single constraint block inside `text`. Line numbers in errors are
/// 1-based and relative to `text`.
pub fn extract_constraint_block(text: &str) -> Result<ConstraintSpec, BlockError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut openers = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.trim() == OPEN)
        .map(|(i, _)| i);
    let start = openers.next().ok_or(BlockError::MissingBlock)?;
    if let Some(second) = openers.next() {
        return Err(malformed(second + 1, 1, "more than one constraint block"));
    }
    let end = lines[start + 1..]
        .iter()
        .position(|l| l.trim() == CLOSE)
        .map(|off| start + 1 + off)
        .ok_or_else(|| malformed(start + 1, 1, "constraint block is never closed by ---"))?;

    let mut spec = ConstraintSpec::default();
    for (idx, raw) in lines.iter().enumerate().take(end).skip(start + 1) {
        let line_no = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let Some(colon) = raw.find(':') else {
            return Err(malformed(line_no, 1, "expected `key: value`"));
        };
        let key = raw[..colon].trim();
        let dim = Dimension::from_key(key).ok_or_else(|| {
            malformed(
                line_no,
                column_of(raw, raw.len() - raw.trim_start().len()),
                format!("unknown key `{key}`"),
            )
        })?;
        if spec.is_set(dim) {
            return Err(BlockError::DuplicateKey {
                key: key.to_string(),
                line: line_no,
            });
        }
        let value_offset = colon + 1;
        parse_value(&mut spec, dim, raw, value_offset)
            .map_err(|(byte, msg)| malformed(line_no, column_of(raw, byte), msg))?;
    }
    Ok(spec)
}

fn column_of(line: &str, byte: usize) -> usize {
    line[..byte.min(line.len())].chars().count() + 1
}

type ValueResult<T> = Result<T, (usize, String)>;

struct ValueCursor<'a> {
    cur: Cursor<'a>,
    base: usize,
}

impl<'a> ValueCursor<'a> {
    fn new(line: &'a str, offset: usize) -> Self {
        let mut cur = Cursor::new(&line[offset..]);
        cur.skip_ws();
        Self { cur, base: offset }
    }

    fn at(&self) -> usize {
        self.base + self.cur.pos
    }

    fn fail<T>(&self, msg: impl Into<String>) -> ValueResult<T> {
        Err((self.at(), msg.into()))
    }

    fn string(&mut self) -> ValueResult<String> {
        self.cur
            .string()
            .map_err(|e| (self.base + e.position, format!("bad string literal ({:?})", e.kind)))
    }

    fn word(&mut self) -> Option<String> {
        self.cur.ident()
    }

    fn finish(&mut self) -> ValueResult<()> {
        self.cur.skip_ws();
        if self.cur.peek().is_some() {
            return self.fail("unexpected trailing text");
        }
        Ok(())
    }

    fn quoted_list(&mut self) -> ValueResult<Vec<String>> {
        let mut items = Vec::new();
        loop {
            self.cur.skip_ws();
            if self.cur.peek() != Some('"') {
                return self.fail("expected a double-quoted item");
            }
            let at = self.at();
            let item = self.string()?;
            if item.trim().is_empty() {
                return Err((at, "list items must be non-empty".into()));
            }
            items.push(item);
            self.cur.skip_ws();
            if !self.cur.eat(',') {
                return Ok(items);
            }
        }
    }

    fn text(&mut self) -> ValueResult<String> {
        if self.cur.peek() == Some('"') {
            let at = self.at();
            let s = self.string()?;
            if s.trim().is_empty() {
                return Err((at, "value must be non-empty".into()));
            }
            return Ok(s);
        }
        let rest = self.cur.rest().trim();
        if rest.is_empty() {
            return self.fail("value must be non-empty");
        }
        self.cur.pos += self.cur.rest().len();
        Ok(rest.to_string())
    }
}

fn parse_value(
    spec: &mut ConstraintSpec,
    dim: Dimension,
    line: &str,
    offset: usize,
) -> ValueResult<()> {
    let mut v = ValueCursor::new(line, offset);
    match dim {
        Dimension::View => spec.view = Some(v.text()?),
        Dimension::Genre => spec.genre = Some(v.text()?),
        Dimension::Keywords | Dimension::FocusContent => {
            let at = v.at();
            let items = v.quoted_list()?;
            let list = PhraseList::new(items).ok_or((at, "list items must be non-empty".into()))?;
            if dim == Dimension::Keywords {
                spec.keywords = Some(list);
            } else {
                spec.focus_content = Some(list);
            }
        }
        Dimension::Format => {
            let at = v.at();
            let word = v.word().unwrap_or_default();
            let format = word
                .parse::<CaptionFormat>()
                .map_err(|_| (at, "format must be plain, bullets or numbered".to_string()))?;
            spec.format = Some(format);
        }
        Dimension::Sentiment => spec.sentiment = Some(parse_sentiment(&mut v)?),
        Dimension::Length => spec.length = Some(parse_length(&mut v)?),
    }
    v.finish()
}

fn parse_sentiment(v: &mut ValueCursor<'_>) -> ValueResult<Sentiment> {
    let mut polarity = None;
    if v.cur.peek() != Some('"') {
        let at = v.at();
        let word = v.word().unwrap_or_default();
        polarity = Some(word.parse::<Polarity>().map_err(|_| {
            (
                at,
                "sentiment must be positive, negative or neutral, optionally followed by a quoted tone"
                    .to_string(),
            )
        })?);
        v.cur.skip_ws();
        v.cur.eat(',');
        v.cur.skip_ws();
    }
    let mut tone = None;
    if v.cur.peek() == Some('"') {
        let at = v.at();
        let t = v.string()?;
        if t.trim().is_empty() {
            return Err((at, "tone must be non-empty".into()));
        }
        tone = Some(t);
    }
    Ok(Sentiment { polarity, tone })
}

fn parse_length(v: &mut ValueCursor<'_>) -> ValueResult<LengthConstraint> {
    let mut unit: Option<LengthUnit> = None;
    let mut min = None;
    let mut max = None;
    loop {
        v.cur.skip_ws();
        let at = v.at();
        let bound = match v.word().as_deref() {
            Some("min") => &mut min,
            Some("max") => &mut max,
            _ => return Err((at, "expected `min` or `max`".into())),
        };
        if bound.is_some() {
            return Err((at, "bound given twice".into()));
        }
        v.cur.skip_ws();
        let num_at = v.at();
        let digits: String = v.cur.rest().chars().take_while(char::is_ascii_digit).collect();
        if digits.is_empty() {
            return Err((num_at, "expected a nonnegative integer".into()));
        }
        v.cur.pos += digits.len();
        let n: u32 = digits
            .parse()
            .map_err(|_| (num_at, "integer out of range".to_string()))?;
        v.cur.skip_ws();
        let unit_at = v.at();
        let this_unit = match v.word().as_deref() {
            Some("words") => LengthUnit::Words,
            Some("sentences") => LengthUnit::Sentences,
            _ => return Err((unit_at, "expected `words` or `sentences`".into())),
        };
        if unit.is_some_and(|u| u != this_unit) {
            return Err((unit_at, "min and max must use the same unit".into()));
        }
        unit = Some(this_unit);
        *bound = Some(n);
        v.cur.skip_ws();
        if !v.cur.eat(',') {
            break;
        }
    }
    let at = v.at();
    LengthConstraint::new(unit.unwrap_or(LengthUnit::Words), min, max)
        .map_err(|e| (at, e.to_string()))
}

/// Canonical block text for `spec`: fixed key order, quoted strings.
pub fn render_constraint_block(spec: &ConstraintSpec) -> String {
    let list = |l: &PhraseList| l.iter().map(quote).collect::<Vec<_>>().join(", ");
    let mut out = String::from(OPEN);
    out.push('\n');
    for dim in spec.dimensions() {
        let value = match dim {
            Dimension::View => quote(spec.view.as_deref().unwrap_or_default()),
            Dimension::Genre => quote(spec.genre.as_deref().unwrap_or_default()),
            Dimension::Keywords => spec.keywords.as_ref().map(list).unwrap_or_default(),
            Dimension::FocusContent => spec.focus_content.as_ref().map(list).unwrap_or_default(),
            Dimension::Format => spec.format.map(|f| f.as_str().to_string()).unwrap_or_default(),
            Dimension::Length => spec.length.map(|l| l.to_string()).unwrap_or_default(),
            Dimension::Sentiment => {
                let s = spec.sentiment.as_ref();
                let parts: Vec<String> = s
                    .and_then(|s| s.polarity)
                    .map(|p| p.as_str().to_string())
                    .into_iter()
                    .chain(s.and_then(|s| s.tone.as_deref()).map(quote))
                    .collect();
                parts.join(" ")
            }
        };
        let _ = writeln!(out, "{}: {}", dim.key(), value);
    }
    out.push_str(CLOSE);
    out
}
