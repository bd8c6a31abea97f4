use std::sync::Arc;

use super::ops::{self, SentimentTarget, ToolConfig, ToolError};
use super::{ArgSpec, ArgType, Tool, ToolContext, ToolDescriptor, ToolRegistry};
use crate::backends::{ChatBackend, DepthBackend, DetectBackend};
use crate::constraints::{LengthConstraint, LengthUnit};
use crate::dsl::{ArgValue, ToolCall};

pub const STANDARD_TOOLS: [&str; 6] = [
    "condense_caption",
    "count_objects",
    "expand_caption",
    "modify_sentiment",
    "spatial_relations",
    "vqa",
];

/// Backends shared by the standard tools.
#[derive(Clone)]
pub struct ToolBackends {
    pub chat: Arc<dyn ChatBackend>,
    pub detector: Arc<dyn DetectBackend>,
    pub depth: Arc<dyn DepthBackend>,
    pub config: ToolConfig,
}

fn s(v: &str) -> ArgValue {
    ArgValue::Str(v.into())
}

fn id(v: &str) -> ArgValue {
    ArgValue::Ident(v.into())
}

fn text<'a>(call: &'a ToolCall, name: &str) -> Option<&'a str> {
    call.get(name).and_then(ArgValue::as_str)
}

fn required_text<'a>(call: &'a ToolCall, name: &str) -> Result<&'a str, ToolError> {
    text(call, name).ok_or_else(|| ToolError::Argument(format!("missing `{name}`")))
}

fn length_target(call: &ToolCall, minimum: bool) -> Result<LengthConstraint, ToolError> {
    let n = match call.get("target") {
        Some(ArgValue::Int(n)) if *n > 0 && *n <= u32::MAX as i64 => *n as u32,
        _ => return Err(ToolError::Argument("`target` must be a positive integer".into())),
    };
    let unit = match text(call, "unit") {
        None | Some("words") => LengthUnit::Words,
        Some("sentences") => LengthUnit::Sentences,
        Some(other) => {
            return Err(ToolError::Argument(format!(
                "unit must be words or sentences, got {other:?}"
            )))
        }
    };
    let (min, max) = if minimum { (Some(n), None) } else { (None, Some(n)) };
    LengthConstraint::new(unit, min, max).map_err(|e| ToolError::Argument(e.to_string()))
}

fn length_observation(adj: &ops::LengthAdjustment, target: &LengthConstraint) -> String {
    let unit = target.unit;
    let mut obs = format!(
        "{}\n[{} {}; target {target}; {} after {} round(s)",
        adj.caption,
        unit.measure(&adj.caption),
        unit.as_str(),
        if adj.met { "met" } else { "not met" },
        adj.rounds
    );
    if let Some(e) = &adj.error {
        obs.push_str(&format!("; stopped early: {e}"));
    }
    obs.push(']');
    obs
}

struct Vqa(ToolBackends);

impl Tool for Vqa {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "vqa".into(),
            summary: "answer a question about the image, or describe it".into(),
            args: vec![ArgSpec::required("question", ArgType::Text, s("What is in the image?"))],
            returns: "the answer text".into(),
        }
    }

    fn invoke(&self, ctx: &ToolContext<'_>, call: &ToolCall) -> Result<String, ToolError> {
        ops::vqa(ctx.image, required_text(call, "question")?, self.0.chat.as_ref())
    }
}

struct ModifySentiment(ToolBackends);

impl Tool for ModifySentiment {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "modify_sentiment".into(),
            summary: "rewrite the caption in a positive, negative or neutral tone, keeping its content".into(),
            args: vec![
                ArgSpec::required("caption", ArgType::Text, s("A red car.")),
                ArgSpec::required("sentiment", ArgType::Identifier, id("positive")),
                ArgSpec::optional("tone", ArgType::Text, s("warm")),
            ],
            returns: "the rewritten caption".into(),
        }
    }

    fn invoke(&self, _ctx: &ToolContext<'_>, call: &ToolCall) -> Result<String, ToolError> {
        let target = SentimentTarget::parse(required_text(call, "sentiment")?, text(call, "tone"))?;
        ops::modify_sentiment(required_text(call, "caption")?, &target, self.0.chat.as_ref())
    }
}

struct ExpandCaption(ToolBackends);

impl Tool for ExpandCaption {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "expand_caption".into(),
            summary: "lengthen the caption to at least `target` units with new visual details".into(),
            args: vec![
                ArgSpec::required("caption", ArgType::Text, s("A red car.")),
                ArgSpec::required("target", ArgType::Integer, ArgValue::Int(50)),
                ArgSpec::optional("unit", ArgType::Identifier, id("words")),
            ],
            returns: "the expanded caption and whether the minimum was met".into(),
        }
    }

    fn invoke(&self, ctx: &ToolContext<'_>, call: &ToolCall) -> Result<String, ToolError> {
        let target = length_target(call, true)?;
        let adj = ops::expand_caption(
            ctx.image,
            required_text(call, "caption")?,
            &target,
            self.0.chat.as_ref(),
            self.0.config.expand_max_rounds,
        )?;
        Ok(length_observation(&adj, &target))
    }
}

struct CondenseCaption(ToolBackends);

impl Tool for CondenseCaption {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "condense_caption".into(),
            summary: "shorten the caption to at most `target` units, dropping superfluous details".into(),
            args: vec![
                ArgSpec::required("caption", ArgType::Text, s("A red car.")),
                ArgSpec::required("target", ArgType::Integer, ArgValue::Int(50)),
                ArgSpec::optional("unit", ArgType::Identifier, id("words")),
            ],
            returns: "the condensed caption and whether the maximum was met".into(),
        }
    }

    fn invoke(&self, _ctx: &ToolContext<'_>, call: &ToolCall) -> Result<String, ToolError> {
        let target = length_target(call, false)?;
        let adj = ops::condense_caption(
            required_text(call, "caption")?,
            &target,
            self.0.chat.as_ref(),
            self.0.config.condense_attempts,
        )?;
        Ok(length_observation(&adj, &target))
    }
}

struct CountObjects(ToolBackends);

impl Tool for CountObjects {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "count_objects".into(),
            summary: "count instances of an object label in the image".into(),
            args: vec![ArgSpec::required("label", ArgType::Text, s("car"))],
            returns: "the count above the detection threshold".into(),
        }
    }

    fn invoke(&self, ctx: &ToolContext<'_>, call: &ToolCall) -> Result<String, ToolError> {
        let c = ops::count_objects(
            ctx.image,
            required_text(call, "label")?,
            self.0.detector.as_ref(),
            self.0.config.detection_threshold,
        )?;
        Ok(format!(
            "{} {} detected (score >= {})",
            c.count, c.label, c.threshold
        ))
    }
}

struct SpatialRelations(ToolBackends);

impl Tool for SpatialRelations {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: "spatial_relations".into(),
            summary: "describe left/right, above/below and near/far relations between comma-separated labels".into(),
            args: vec![ArgSpec::required("labels", ArgType::Text, s("sofa, lamp"))],
            returns: "one sentence per relation".into(),
        }
    }

    fn invoke(&self, ctx: &ToolContext<'_>, call: &ToolCall) -> Result<String, ToolError> {
        let labels: Vec<String> = required_text(call, "labels")?
            .split(',')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let report = ops::spatial_relations(
            ctx.image,
            &labels,
            self.0.detector.as_ref(),
            self.0.depth.as_ref(),
            &self.0.config,
        )?;
        Ok(report.render())
    }
}

/// The six standard tools, each registered once.
pub fn standard_registry(backends: ToolBackends) -> ToolRegistry {
    let mut r = ToolRegistry::new();
    let tools: [Arc<dyn Tool>; 6] = [
        Arc::new(Vqa(backends.clone())),
        Arc::new(ModifySentiment(backends.clone())),
        Arc::new(ExpandCaption(backends.clone())),
        Arc::new(CondenseCaption(backends.clone())),
        Arc::new(CountObjects(backends.clone())),
        Arc::new(SpatialRelations(backends)),
    ];
    for t in tools {
        r.register(t).expect("standard tools are distinct");
    }
    r
}
