//! Line-delimited run records. One JSON object per line, tagged by `record`.
//! Field order follows struct declaration order and nothing time- or
//! machine-dependent is written, so two identical runs give identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentConfig;
use crate::backends::BackendId;
use crate::constraints::ConstraintSpec;
use crate::context::ContextBundle;
use crate::evolver::CriteriaReport;
use crate::model::{Caption, EvolvedInstruction, TerminationReason, Trace, TraceStep};
use crate::retrieval::ScoredId;

pub const TRACE_FORMAT: &str = "caption-agent-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    /// `evolve` or `caption`.
    pub command: String,
    pub user_instruction: String,
    pub image_sha256: String,
    /// Backend identity per slot, e.g. `planner` or `embed`.
    pub backends: BTreeMap<String, BackendId>,
}

impl TraceHeader {
    pub fn new(
        command: &str,
        user_instruction: &str,
        image_sha256: &str,
        backends: BTreeMap<String, BackendId>,
    ) -> Self {
        Self {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            command: command.into(),
            user_instruction: user_instruction.into(),
            image_sha256: image_sha256.into(),
            backends,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolveRecord {
    pub prompt: String,
    pub responses: Vec<String>,
    pub evolved: Option<EvolvedInstruction>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub instruction: String,
    pub spec: ConstraintSpec,
    pub config: AgentConfig,
    pub examples: Vec<ScoredId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFooter {
    pub terminated_reason: TerminationReason,
    pub final_caption: Option<String>,
    pub steps: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceRecord {
    Header(TraceHeader),
    Context(ContextBundle),
    Evolve(EvolveRecord),
    Criteria(CriteriaReport),
    Plan(PlanRecord),
    Step(TraceStep),
    Footer(TraceFooter),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("trace has no header")]
    NoHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceFile {
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    pub fn new(header: TraceHeader) -> Self {
        Self {
            records: vec![TraceRecord::Header(header)],
        }
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    /// Appends every step and then the footer.
    pub fn push_trace(&mut self, trace: &Trace) {
        for s in &trace.steps {
            self.records.push(TraceRecord::Step(s.clone()));
        }
        self.records.push(TraceRecord::Footer(TraceFooter {
            terminated_reason: trace.terminated_reason,
            final_caption: trace.final_caption.as_ref().map(|c| c.text().to_string()),
            steps: trace.steps.len(),
            error: trace.error.clone(),
        }));
    }

    pub fn header(&self) -> Option<&TraceHeader> {
        self.records.iter().find_map(|r| match r {
            TraceRecord::Header(h) => Some(h),
            _ => None,
        })
    }

    /// Rebuilds the agent trace from step and footer records.
    pub fn trace(&self) -> Option<Trace> {
        let footer = self.records.iter().find_map(|r| match r {
            TraceRecord::Footer(f) => Some(f),
            _ => None,
        })?;
        let steps = self
            .records
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Step(s) => Some(s.clone()),
                _ => None,
            })
            .collect();
        Some(Trace {
            steps,
            final_caption: footer.final_caption.clone().map(Caption::new),
            terminated_reason: footer.terminated_reason,
            error: footer.error.clone(),
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| TraceError::Format {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let file = Self { records };
        if !matches!(file.records.first(), Some(TraceRecord::Header(_))) {
            return Err(TraceError::NoHeader);
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), TraceError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TraceError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::Role;
    use crate::dsl::{parse_action, Action};
    use crate::model::StepAction;

    fn sample() -> TraceFile {
        let mut backends = BTreeMap::new();
        backends.insert("planner".into(), BackendId::new(Role::Chat, "fixture", "planner"));
        let mut f = TraceFile::new(TraceHeader::new("caption", "describe it", "ab12", backends));
        f.push(TraceRecord::Plan(PlanRecord {
            instruction: "Describe.\n---constraints\nlength: max 5 words\n---".into(),
            spec: ConstraintSpec::default(),
            config: AgentConfig::default(),
            examples: vec![ScoredId {
                id: "ex".into(),
                score: 0.25,
            }],
        }));
        let call = parse_action("call count_objects(label=\"car\")").unwrap();
        let finish = parse_action("finish(caption=\"Two cars.\")").unwrap();
        f.push_trace(&Trace {
            steps: vec![
                TraceStep {
                    index: 0,
                    thought: "count".into(),
                    action: StepAction::Action(call),
                    observation: "2 car detected".into(),
                },
                TraceStep {
                    index: 1,
                    thought: "bad".into(),
                    action: StepAction::Invalid("call (".into()),
                    observation: "ERROR: x".into(),
                },
                TraceStep {
                    index: 2,
                    thought: "done".into(),
                    action: StepAction::Action(finish),
                    observation: String::new(),
                },
            ],
            final_caption: Some(Caption::new("Two cars.")),
            terminated_reason: TerminationReason::FinalAnswer,
            error: None,
        });
        f
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let f = sample();
        let text = f.render();
        let back = TraceFile::parse(&text).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.render(), text);
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("{\"record\":\"header\",\"format\":\"caption-agent-trace\""));
    }

    #[test]
    fn rebuilds_trace() {
        let t = sample().trace().unwrap();
        assert!(t.is_well_formed());
        assert_eq!(t.steps.len(), 3);
        assert!(matches!(
            &t.steps[0].action,
            StepAction::Action(Action::Call(c)) if c.tool == "count_objects"
        ));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let mut text = sample().render();
        text.push_str("{not json}\n");
        match TraceFile::parse(&text) {
            Err(TraceError::Format { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
        let no_header = sample().render().lines().skip(1).collect::<Vec<_>>().join("\n");
        assert!(matches!(TraceFile::parse(&no_header), Err(TraceError::NoHeader)));
    }
}
