//! Caption-control tools and the registry the planner calls them through.

mod ops;
mod standard;

use std::collections::BTreeMap;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{ArgValue, ToolCall};
use crate::model::ImageRef;

pub use ops::{
    condense_caption, count_boxes, count_objects, expand_caption, modify_sentiment, relate,
    spatial_relations, vqa, LengthAdjustment, ObjectCount, Placed, Relation, SentimentTarget,
    SpatialReport, ToolConfig, ToolError,
};
pub use standard::{standard_registry, ToolBackends, STANDARD_TOOLS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgType {
    /// Quoted string. A bare identifier is accepted too.
    Text,
    Integer,
    /// Bare identifier. A quoted string is accepted too.
    Identifier,
}

impl ArgType {
    fn as_str(self) -> &'static str {
        match self {
            ArgType::Text => "a string",
            ArgType::Integer => "an integer",
            ArgType::Identifier => "a name",
        }
    }

    fn accepts(self, v: &ArgValue) -> bool {
        matches!(
            (self, v),
            (ArgType::Text | ArgType::Identifier, ArgValue::Str(_) | ArgValue::Ident(_))
                | (ArgType::Integer, ArgValue::Int(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub ty: ArgType,
    pub required: bool,
    /// Sample value shown to the planner.
    pub example: ArgValue,
}

impl ArgSpec {
    pub fn required(name: &str, ty: ArgType, example: ArgValue) -> Self {
        Self {
            name: name.into(),
            ty,
            required: true,
            example,
        }
    }

    pub fn optional(name: &str, ty: ArgType, example: ArgValue) -> Self {
        Self {
            name: name.into(),
            ty,
            required: false,
            example,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub summary: String,
    pub args: Vec<ArgSpec>,
    pub returns: String,
}

impl ToolDescriptor {
    /// A sample call using each argument's example value.
    pub fn skeleton(&self) -> String {
        let mut call = ToolCall::new(&self.name);
        for a in &self.args {
            call = call.arg(&a.name, a.example.clone());
        }
        call.to_string()
    }

    fn check(&self, call: &ToolCall) -> Result<(), String> {
        for (name, value) in &call.args {
            match self.args.iter().find(|a| &a.name == name) {
                None => return Err(format!("`{}` has no argument `{name}`", self.name)),
                Some(spec) if !spec.ty.accepts(value) => {
                    return Err(format!(
                        "argument `{name}` of `{}` expects {}",
                        self.name,
                        spec.ty.as_str()
                    ))
                }
                Some(_) => {}
            }
        }
        if let Some(missing) = self
            .args
            .iter()
            .find(|a| a.required && call.get(&a.name).is_none())
        {
            return Err(format!(
                "`{}` requires argument `{}`",
                self.name, missing.name
            ));
        }
        Ok(())
    }
}

/// What a tool sees besides its arguments.
pub struct ToolContext<'a> {
    pub image: &'a ImageRef,
}

pub trait Tool: Send + Sync {
    fn descriptor(&self) -> ToolDescriptor;
    /// Arguments have already been checked against the descriptor.
    fn invoke(&self, ctx: &ToolContext<'_>, call: &ToolCall) -> Result<String, ToolError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("tool `{0}` is already registered")]
    Duplicate(String),
    #[error("tool name `{0}` is not an identifier")]
    BadName(String),
    #[error("tool `{tool}` declares argument `{arg}` twice")]
    DuplicateArg { tool: String, arg: String },
}

#[derive(Default, Clone)]
pub struct ToolRegistry {
    tools: BTreeMap<String, (ToolDescriptor, Arc<dyn Tool>)>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) -> Result<(), RegistryError> {
        let d = tool.descriptor();
        if !crate::dsl::is_identifier(&d.name) || d.name == "finish" {
            return Err(RegistryError::BadName(d.name));
        }
        if self.tools.contains_key(&d.name) {
            return Err(RegistryError::Duplicate(d.name));
        }
        for (i, a) in d.args.iter().enumerate() {
            if d.args[..i].iter().any(|b| b.name == a.name) {
                return Err(RegistryError::DuplicateArg {
                    tool: d.name.clone(),
                    arg: a.name.clone(),
                });
            }
        }
        self.tools.insert(d.name.clone(), (d, tool));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.tools.get(name).map(|(_, t)| t)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &ToolDescriptor> {
        self.tools.values().map(|(d, _)| d)
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.keys().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

/// One `call name(args) - summary` line per tool, sorted by name. Optional
/// arguments are marked in the summary.
pub fn registry_describe(registry: &ToolRegistry) -> String {
    registry
        .descriptors()
        .map(|d| {
            let optional: Vec<&str> = d
                .args
                .iter()
                .filter(|a| !a.required)
                .map(|a| a.name.as_str())
                .collect();
            if optional.is_empty() {
                format!("{} - {}", d.skeleton(), d.summary)
            } else {
                format!(
                    "{} - {} (optional: {})",
                    d.skeleton(),
                    d.summary,
                    optional.join(", ")
                )
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub const ERROR_PREFIX: &str = "ERROR:";

/// Runs a call and always returns an observation. Unknown tools, argument
/// mismatches, tool errors and panics become `ERROR: ...` text.
pub fn execute(call: &ToolCall, registry: &ToolRegistry, ctx: &ToolContext<'_>) -> String {
    let Some((descriptor, tool)) = registry.tools.get(&call.tool) else {
        return format!(
            "{ERROR_PREFIX} unknown tool `{}`; available: {}",
            call.tool,
            registry.names().join(", ")
        );
    };
    if let Err(msg) = descriptor.check(call) {
        return format!("{ERROR_PREFIX} argument mismatch: {msg}");
    }
    match catch_unwind(AssertUnwindSafe(|| tool.invoke(ctx, call))) {
        Ok(Ok(obs)) => obs,
        Ok(Err(e)) => format!("{ERROR_PREFIX} {e}"),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            format!("{ERROR_PREFIX} tool `{}` crashed: {msg}", call.tool)
        }
    }
}

#[cfg(test)]
mod tests;
