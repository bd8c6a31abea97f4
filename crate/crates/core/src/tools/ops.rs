//! The caption-control operations, independent of the action language.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{chat, detect, estimate_depth, BackendError, ChatBackend, ChatMessage};
use crate::backends::{DepthBackend, DetectBackend};
use crate::constraints::{LengthConstraint, Polarity};
use crate::model::ImageRef;
use crate::prompts;
use crate::vision::BoundingBox;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("{0}")]
    Argument(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolConfig {
    pub detection_threshold: f64,
    /// Minimum center distance, as a fraction of image height, for above/below.
    pub vertical_separation: f64,
    /// Minimum relative difference of mean box depth for nearer/farther.
    pub depth_separation: f64,
    pub expand_max_rounds: usize,
    pub condense_attempts: usize,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            detection_threshold: 0.35,
            vertical_separation: 0.10,
            depth_separation: 0.15,
            expand_max_rounds: 5,
            condense_attempts: 3,
        }
    }
}

fn reply_text(raw: String) -> Result<String, ToolError> {
    let t = raw.trim();
    if t.is_empty() {
        return Err(BackendError::Malformed("backend returned empty text".into()).into());
    }
    Ok(t.to_string())
}

pub fn vqa(image: &ImageRef, question: &str, backend: &dyn ChatBackend) -> Result<String, ToolError> {
    if question.trim().is_empty() {
        return Err(ToolError::Precondition("question is empty".into()));
    }
    Ok(chat(&[ChatMessage::user(question).with_image(image)], backend)?)
}

/// Target tone for [`modify_sentiment`]: a closed-set polarity, or free tone
/// text when the polarity is not one of the three.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentimentTarget(String);

impl SentimentTarget {
    pub fn parse(sentiment: &str, tone: Option<&str>) -> Result<Self, ToolError> {
        let tone = tone.map(str::trim).filter(|t| !t.is_empty());
        match (sentiment.parse::<Polarity>(), tone) {
            (Ok(p), Some(t)) => Ok(Self(format!("{} ({t})", p.as_str()))),
            (Ok(p), None) => Ok(Self(p.as_str().to_string())),
            (Err(()), Some(t)) => Ok(Self(t.to_string())),
            (Err(()), None) => Err(ToolError::Argument(format!(
                "sentiment {sentiment:?} is not positive, negative or neutral; pass tone=\"...\" to describe it"
            ))),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn modify_sentiment(
    caption: &str,
    target: &SentimentTarget,
    backend: &dyn ChatBackend,
) -> Result<String, ToolError> {
    if caption.trim().is_empty() {
        return Err(ToolError::Precondition("caption is empty".into()));
    }
    let prompt = prompts::render(
        prompts::TOOL_SENTIMENT,
        &[("sentiment", target.as_str()), ("caption", caption)],
    );
    reply_text(chat(&[ChatMessage::user(prompt)], backend)?)
}

/// Result of a length-adjusting tool. `met` is true exactly when `caption`
/// satisfies the target constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthAdjustment {
    pub caption: String,
    pub met: bool,
    pub rounds: usize,
    pub error: Option<String>,
}

impl LengthAdjustment {
    fn new(caption: String, target: &LengthConstraint, rounds: usize, error: Option<String>) -> Self {
        let met = target.is_met_by(&caption);
        Self {
            caption,
            met,
            rounds,
            error,
        }
    }
}

/// Ask a question about the image, answer it, merge the answer into the
/// caption; repeat until the minimum length is reached or rounds run out.
pub fn expand_caption(
    image: &ImageRef,
    caption: &str,
    target: &LengthConstraint,
    backend: &dyn ChatBackend,
    max_rounds: usize,
) -> Result<LengthAdjustment, ToolError> {
    let min = target
        .min
        .ok_or_else(|| ToolError::Precondition("expansion target has no minimum".into()))?
        as usize;
    let unit = target.unit;
    if unit.measure(caption) >= min {
        return Ok(LengthAdjustment::new(caption.to_string(), target, 0, None));
    }
    let mut current = caption.to_string();
    let mut best = current.clone();
    let mut rounds = 0;
    let mut error = None;
    while rounds < max_rounds {
        let step = (|| -> Result<String, ToolError> {
            let ask = prompts::render(prompts::TOOL_EXPAND_QUESTION, &[("caption", &current)]);
            let question = reply_text(chat(&[ChatMessage::user(ask).with_image(image)], backend)?)?;
            let answer = reply_text(vqa(image, &question, backend)?)?;
            let merge = prompts::render(
                prompts::TOOL_EXPAND_MERGE,
                &[("caption", &current), ("question", &question), ("answer", &answer)],
            );
            reply_text(chat(&[ChatMessage::user(merge)], backend)?)
        })();
        rounds += 1;
        match step {
            Ok(next) => {
                current = next;
                if unit.measure(&current) > unit.measure(&best) {
                    best = current.clone();
                }
                if unit.measure(&current) >= min {
                    best = current;
                    break;
                }
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    Ok(LengthAdjustment::new(best, target, rounds, error))
}

/// Rewrite to at most the target maximum, re-checking after each attempt.
/// Returns the shortest version seen, the input included.
pub fn condense_caption(
    caption: &str,
    target: &LengthConstraint,
    backend: &dyn ChatBackend,
    attempts: usize,
) -> Result<LengthAdjustment, ToolError> {
    let max = target
        .max
        .ok_or_else(|| ToolError::Precondition("condensing target has no maximum".into()))?
        as usize;
    let unit = target.unit;
    if unit.measure(caption) <= max {
        return Ok(LengthAdjustment::new(caption.to_string(), target, 0, None));
    }
    let mut best = caption.to_string();
    let mut rounds = 0;
    let mut error = None;
    while rounds < attempts {
        rounds += 1;
        let prompt = prompts::render(
            prompts::TOOL_CONDENSE,
            &[
                ("max", &max.to_string()),
                ("unit", unit.as_str()),
                ("attempt", &rounds.to_string()),
                ("current", &unit.measure(&best).to_string()),
                ("caption", &best),
            ],
        );
        match chat(&[ChatMessage::user(prompt)], backend) {
            Ok(raw) => {
                let candidate = raw.trim();
                if !candidate.is_empty() && unit.measure(candidate) < unit.measure(&best) {
                    best = candidate.to_string();
                }
                if unit.measure(&best) <= max {
                    break;
                }
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        }
    }
    Ok(LengthAdjustment::new(best, target, rounds, error))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectCount {
    pub label: String,
    pub count: usize,
    pub threshold: f64,
    pub boxes: Vec<BoundingBox>,
}

pub fn count_boxes(boxes: &[BoundingBox], threshold: f64) -> usize {
    boxes.iter().filter(|b| b.score >= threshold).count()
}

pub fn count_objects(
    image: &ImageRef,
    label: &str,
    detector: &dyn DetectBackend,
    threshold: f64,
) -> Result<ObjectCount, ToolError> {
    if label.trim().is_empty() {
        return Err(ToolError::Precondition("label is empty".into()));
    }
    let boxes = detect(image, label, detector)?;
    Ok(ObjectCount {
        label: label.to_string(),
        count: count_boxes(&boxes, threshold),
        threshold,
        boxes,
    })
}

/// One pairwise relation, as `subject <relation> object`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
    Nearer,
    Farther,
}

impl Relation {
    pub fn phrase(self) -> &'static str {
        match self {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::Nearer => "nearer than",
            Relation::Farther => "farther than",
        }
    }

    pub fn inverse(self) -> Relation {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
            Relation::Nearer => Relation::Farther,
            Relation::Farther => Relation::Nearer,
        }
    }
}

/// Placed object: the best-scoring detection for a label and its mean depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placed {
    pub label: String,
    pub bbox: BoundingBox,
    pub depth: f64,
}

/// Relations of `a` to `b` under the separation thresholds.
pub fn relate(a: &Placed, b: &Placed, config: &ToolConfig) -> Vec<Relation> {
    let (ax, ay) = a.bbox.center();
    let (bx, by) = b.bbox.center();
    let mut out = Vec::new();
    if ax < bx {
        out.push(Relation::LeftOf);
    } else if ax > bx {
        out.push(Relation::RightOf);
    }
    // Image y grows downward.
    if (ay - by).abs() > config.vertical_separation {
        out.push(if ay < by { Relation::Above } else { Relation::Below });
    }
    let scale = a.depth.max(b.depth);
    if scale > 0.0 && (a.depth - b.depth).abs() / scale > config.depth_separation {
        out.push(if a.depth < b.depth {
            Relation::Nearer
        } else {
            Relation::Farther
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialReport {
    pub placed: Vec<Placed>,
    pub absent: Vec<String>,
    /// `(subject index, object index, relations)` into `placed`, in label order.
    pub pairs: Vec<(usize, usize, Vec<Relation>)>,
}

impl SpatialReport {
    /// One sentence per line, in label order.
    pub fn render(&self) -> String {
        let mut lines = Vec::new();
        for (i, j, rels) in &self.pairs {
            let (a, b) = (&self.placed[*i].label, &self.placed[*j].label);
            if rels.is_empty() {
                lines.push(format!("no clear spatial relation between the {a} and the {b}."));
            }
            for r in rels {
                lines.push(format!("the {a} is {} the {b}.", r.phrase()));
            }
        }
        for label in &self.absent {
            lines.push(format!("no {label} detected."));
        }
        lines.join("\n")
    }
}

pub fn spatial_relations(
    image: &ImageRef,
    labels: &[String],
    detector: &dyn DetectBackend,
    depth: &dyn DepthBackend,
    config: &ToolConfig,
) -> Result<SpatialReport, ToolError> {
    if labels.len() < 2 {
        return Err(ToolError::Precondition(
            "spatial relations need at least two labels".into(),
        ));
    }
    let mut found = Vec::new();
    let mut absent = Vec::new();
    for label in labels {
        let boxes = detect(image, label, detector)?;
        let best = boxes
            .into_iter()
            .filter(|b| b.score >= config.detection_threshold)
            .fold(None::<BoundingBox>, |acc, b| match acc {
                Some(a) if a.score >= b.score => Some(a),
                _ => Some(b),
            });
        match best {
            Some(b) => found.push((label.clone(), b)),
            None => absent.push(label.clone()),
        }
    }
    let placed: Vec<Placed> = if found.len() >= 2 {
        let map = estimate_depth(image, depth)?;
        found
            .into_iter()
            .map(|(label, bbox)| Placed {
                depth: map.mean_in(&bbox),
                label,
                bbox,
            })
            .collect()
    } else {
        found
            .into_iter()
            .map(|(label, bbox)| Placed {
                label,
                bbox,
                depth: 0.0,
            })
            .collect()
    };
    let mut pairs = Vec::new();
    for i in 0..placed.len() {
        for j in i + 1..placed.len() {
            pairs.push((i, j, relate(&placed[i], &placed[j], config)));
        }
    }
    Ok(SpatialReport {
        placed,
        absent,
        pairs,
    })
}
