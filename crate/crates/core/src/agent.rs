//! The planning loop: ask the planner for a thought and an action, run the
//! action, feed the observation back, and stop on an accepted caption or when
//! the step budget runs out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{chat, ChatBackend, ChatMessage};
use crate::constraints::{verify_deterministic, ConstraintSpec, VerificationReport};
use crate::dsl::{parse_action, Action, FinalAnswer};
use crate::model::{
    Caption, EvolvedInstruction, Instruction, StepAction, TerminationReason, Trace, TraceStep,
};
use crate::prompts;
use crate::retrieval::{assemble_prompt, RetrievalPlanner, ScoredId};
use crate::tools::{execute, registry_describe, ToolContext, ToolRegistry, ERROR_PREFIX};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub max_steps: usize,
    /// Number of retrieved chain examples in the system prompt.
    pub n_examples: usize,
    pub verify_before_finish: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_steps: 8,
            n_examples: 4,
            verify_before_finish: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentConfigError {
    #[error("max_steps must be at least 1")]
    ZeroSteps,
    #[error("n_examples must be at least 1")]
    ZeroExamples,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentConfigError> {
        if self.max_steps == 0 {
            return Err(AgentConfigError::ZeroSteps);
        }
        if self.n_examples == 0 {
            return Err(AgentConfigError::ZeroExamples);
        }
        Ok(())
    }
}

pub const REJECTED_PREFIX: &str = "REJECTED:";

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Accept,
    Reject(VerificationReport),
}

/// Gate on the deterministic dimensions only. Judged ones never block.
pub fn should_terminate(candidate: &FinalAnswer, spec: &ConstraintSpec) -> Termination {
    let report = verify_deterministic(&Caption::new(candidate.caption.clone()), spec);
    if report.overall {
        Termination::Accept
    } else {
        Termination::Reject(report)
    }
}

pub fn rejection_observation(report: &VerificationReport) -> String {
    format!(
        "{REJECTED_PREFIX} the caption fails these checks; repair it and finish again.\n{}",
        report.render()
    )
}

pub struct AgentDeps<'a> {
    pub planner: &'a dyn ChatBackend,
    pub registry: &'a ToolRegistry,
    pub retrieval: &'a RetrievalPlanner,
    pub config: &'a AgentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    pub trace: Trace,
    /// Chain examples placed in the system prompt, best first.
    pub examples: Vec<ScoredId>,
    pub system_prompt: String,
}

/// Splits a planner reply into its thought and the raw action text. The action
/// is everything after the last `Action:` marker up to an `Observation:` the
/// planner may have invented.
pub fn split_reply(reply: &str) -> (String, Option<String>) {
    let Some(at) = reply.rfind("Action:") else {
        return (strip_label(reply, "Thought:"), None);
    };
    let thought = strip_label(&reply[..at], "Thought:");
    let mut action = &reply[at + "Action:".len()..];
    if let Some(end) = action.find("\nObservation:") {
        action = &action[..end];
    }
    let action = action
        .trim()
        .trim_start_matches("```")
        .trim_end_matches("```")
        .trim()
        .trim_matches('`')
        .trim();
    (thought, Some(action.to_string()))
}

fn strip_label(text: &str, label: &str) -> String {
    let t = text.trim();
    t.strip_prefix(label).unwrap_or(t).trim().to_string()
}

fn system_prompt(registry: &ToolRegistry, examples: &[&crate::retrieval::ChainExample]) -> String {
    let base = prompts::render(prompts::REACT_SYSTEM, &[("tools", &registry_describe(registry))]);
    assemble_prompt(&base, examples)
}

fn step_messages(step: &TraceStep) -> [ChatMessage; 2] {
    let action = match &step.action {
        StepAction::Action(a) => a.to_string(),
        StepAction::Invalid(raw) => raw.clone(),
    };
    [
        ChatMessage::assistant(format!("Thought: {}\nAction: {action}", step.thought)),
        ChatMessage::user(format!("Observation: {}", step.observation)),
    ]
}

fn finished(steps: Vec<TraceStep>, reason: TerminationReason, error: Option<String>) -> Trace {
    Trace {
        steps,
        final_caption: None,
        terminated_reason: reason,
        error,
    }
}

/// Runs the loop for one instruction. The retrieval query is the user's own
/// request; the planner sees the evolved instruction.
pub fn run(user: &Instruction, evolved: &EvolvedInstruction, deps: &AgentDeps<'_>) -> AgentRun {
    let config = deps.config;
    let selected = match deps.retrieval.select(user.text(), config.n_examples) {
        Ok(s) => s,
        Err(e) => {
            return AgentRun {
                trace: finished(Vec::new(), TerminationReason::Error, Some(e.to_string())),
                examples: Vec::new(),
                system_prompt: String::new(),
            }
        }
    };
    let examples: Vec<ScoredId> = selected.iter().map(|(s, _)| s.clone()).collect();
    let chain: Vec<_> = selected.iter().map(|(_, e)| *e).collect();
    let system = system_prompt(deps.registry, &chain);
    let opening = ChatMessage::user(format!("Instruction:\n{}", evolved.text.trim()))
        .with_image(user.image());
    let ctx = ToolContext {
        image: user.image(),
    };

    let mut steps: Vec<TraceStep> = Vec::new();
    let trace = loop {
        if steps.len() >= config.max_steps.max(1) {
            break finished(steps, TerminationReason::StepBudget, None);
        }
        let mut messages = vec![ChatMessage::system(system.clone()), opening.clone()];
        for s in &steps {
            messages.extend(step_messages(s));
        }
        let reply = match chat(&messages, deps.planner) {
            Ok(r) => r,
            Err(e) => break finished(steps, TerminationReason::Error, Some(e.to_string())),
        };
        let index = steps.len();
        let (thought, action_text) = split_reply(&reply);
        let Some(action_text) = action_text else {
            steps.push(TraceStep {
                index,
                thought,
                action: StepAction::Invalid(String::new()),
                observation: format!(
                    "{ERROR_PREFIX} no `Action:` line found; reply with `Thought:` and `Action:`"
                ),
            });
            continue;
        };
        match parse_action(&action_text) {
            Err(e) => steps.push(TraceStep {
                index,
                thought,
                action: StepAction::Invalid(action_text),
                observation: format!("{ERROR_PREFIX} could not parse action: {e}"),
            }),
            Ok(Action::Call(call)) => {
                let observation = execute(&call, deps.registry, &ctx);
                steps.push(TraceStep {
                    index,
                    thought,
                    action: StepAction::Action(Action::Call(call)),
                    observation,
                });
            }
            Ok(Action::Finish(answer)) => {
                let verdict = if config.verify_before_finish {
                    should_terminate(&answer, &evolved.spec)
                } else {
                    Termination::Accept
                };
                let observation = match &verdict {
                    Termination::Accept => String::new(),
                    Termination::Reject(report) => rejection_observation(report),
                };
                let caption = Caption::new(answer.caption.clone());
                steps.push(TraceStep {
                    index,
                    thought,
                    action: StepAction::Action(Action::Finish(answer)),
                    observation,
                });
                if verdict == Termination::Accept {
                    break Trace {
                        steps,
                        final_caption: Some(caption),
                        terminated_reason: TerminationReason::FinalAnswer,
                        error: None,
                    };
                }
            }
        }
    };
    AgentRun {
        trace,
        examples,
        system_prompt: system,
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::backends::{
        BackendError, DetectBackend, EmbedBackend, FixtureDepth, FixtureDetector, HashEmbedder,
        ScriptedChat,
    };
    use crate::constraints::{extract_constraint_block, Dimension};
    use crate::dsl::ToolCall;
    use crate::model::Provenance;
    use crate::retrieval::{build_index, parse_examples};
    use crate::testutil::png;
    use crate::tools::{standard_registry, Tool, ToolBackends, ToolConfig, ToolDescriptor, ToolError};

    const DB: &str = r#"{"id":"kw","instruction":"mention the brand name","steps":[{"thought":"check","action":"finish(caption=\"A Tesla.\")"}]}
{"id":"count","instruction":"how many cars","steps":[{"thought":"count","action":"call count_objects(label=\"car\")","observation":"2 car detected"}]}
"#;

    fn retrieval() -> RetrievalPlanner {
        let ex = parse_examples(DB).unwrap();
        let e: Arc<dyn EmbedBackend> = Arc::new(HashEmbedder::new(16));
        let store = build_index(&ex, e.as_ref()).unwrap();
        RetrievalPlanner::new(store, ex, e).unwrap()
    }

    fn registry(chat: Arc<ScriptedChat>) -> ToolRegistry {
        let det: Arc<dyn DetectBackend> = Arc::new(
            FixtureDetector::parse(
                r#"[{"label":"car","score":0.9,"box":[0.1,0.1,0.3,0.3]},
                   {"label":"car","score":0.5,"box":[0.5,0.1,0.7,0.3]}]"#,
            )
            .unwrap(),
        );
        standard_registry(ToolBackends {
            chat,
            detector: det,
            depth: Arc::new(FixtureDepth::constant(4, 4, 1.0)),
            config: ToolConfig::default(),
        })
    }

    fn evolved(block: &str) -> EvolvedInstruction {
        let text = format!("Caption the car.\n---constraints\n{block}\n---");
        EvolvedInstruction {
            spec: extract_constraint_block(&text).unwrap(),
            text,
            provenance: Provenance::Fixture,
        }
    }

    fn run_with(planner: &ScriptedChat, block: &str, max_steps: usize) -> AgentRun {
        let user = Instruction::new("mention the brand name", png()).unwrap();
        let tools_chat = Arc::new(ScriptedChat::new(["A silver car at night."]));
        let reg = registry(tools_chat);
        let r = retrieval();
        let config = AgentConfig {
            max_steps,
            ..AgentConfig::default()
        };
        run(
            &user,
            &evolved(block),
            &AgentDeps {
                planner,
                registry: &reg,
                retrieval: &r,
                config: &config,
            },
        )
    }

    #[test]
    fn immediate_finish() {
        let p = ScriptedChat::new(["Thought: easy\nAction: finish(caption=\"A Tesla car.\")"]);
        let out = run_with(&p, "keywords: \"Tesla\"", 8);
        assert_eq!(out.trace.steps.len(), 1);
        assert_eq!(out.trace.terminated_reason, TerminationReason::FinalAnswer);
        assert_eq!(out.trace.final_caption.as_ref().unwrap().text(), "A Tesla car.");
        assert!(out.trace.steps[0].observation.is_empty());
        assert!(out.trace.is_well_formed());
    }

    #[test]
    fn two_calls_then_finish() {
        let p = ScriptedChat::new([
            "Thought: count first\nAction: call count_objects(label=\"car\")",
            "Thought: describe\nAction: call vqa(question=\"Describe the car.\")",
            "Thought: done\nAction: finish(caption=\"Two cars, one Tesla.\")",
        ]);
        let out = run_with(&p, "keywords: \"Tesla\"", 8);
        let t = &out.trace;
        assert_eq!(t.steps.len(), 3);
        assert_eq!(t.steps[0].observation, "2 car detected (score >= 0.35)");
        assert_eq!(t.steps[1].observation, "A silver car at night.");
        assert_eq!(t.terminated_reason, TerminationReason::FinalAnswer);

        // Each prompt carries the full history so far.
        let prompts = p.prompts();
        assert_eq!(prompts[0].len(), 2);
        assert_eq!(prompts[2].len(), 6);
        assert_eq!(
            prompts[2][3].text,
            "Observation: 2 car detected (score >= 0.35)"
        );
        assert!(prompts[0][0].text.contains("## Examples"));
        assert!(prompts[0][0].text.contains("call vqa(question="));
        assert_eq!(out.examples.len(), 2);
    }

    #[test]
    fn never_finishing_planner_hits_budget() {
        let p = ScriptedChat::new(vec!["Thought: t\nAction: call count_objects(label=\"car\")"; 10]);
        let out = run_with(&p, "keywords: \"Tesla\"", 3);
        assert_eq!(out.trace.steps.len(), 3);
        assert_eq!(out.trace.terminated_reason, TerminationReason::StepBudget);
        assert!(out.trace.final_caption.is_none());
        assert_eq!(p.calls(), 3);
    }

    #[test]
    fn rejected_finish_is_repaired() {
        let p = ScriptedChat::new([
            "Thought: t\nAction: finish(caption=\"A silver car.\")",
            "Thought: add brand\nAction: finish(caption=\"A silver Tesla car.\")",
        ]);
        let out = run_with(&p, "keywords: \"Tesla\"", 8);
        let t = &out.trace;
        assert_eq!(t.steps.len(), 2);
        assert!(t.steps[0].observation.starts_with(REJECTED_PREFIX));
        assert!(t.steps[0].observation.contains("Tesla"));
        assert!(p.prompts()[1][3].text.contains("keywords: fail"));
        assert_eq!(t.terminated_reason, TerminationReason::FinalAnswer);
        assert!(t.is_well_formed());
    }

    #[test]
    fn rejection_on_last_step_is_budget() {
        let p = ScriptedChat::new([
            "Thought: t\nAction: call count_objects(label=\"car\")",
            "Thought: t\nAction: finish(caption=\"A silver car.\")",
        ]);
        let out = run_with(&p, "keywords: \"Tesla\"", 2);
        assert_eq!(out.trace.terminated_reason, TerminationReason::StepBudget);
        assert!(out.trace.final_caption.is_none());
        assert!(out.trace.is_well_formed());
    }

    #[test]
    fn unverified_finish_is_accepted() {
        let p = ScriptedChat::new(["Thought: t\nAction: finish(caption=\"A silver car.\")"]);
        let user = Instruction::new("x", png()).unwrap();
        let reg = registry(Arc::new(ScriptedChat::new(Vec::<String>::new())));
        let r = retrieval();
        let config = AgentConfig {
            verify_before_finish: false,
            ..AgentConfig::default()
        };
        let out = run(
            &user,
            &evolved("keywords: \"Tesla\""),
            &AgentDeps {
                planner: &p,
                registry: &reg,
                retrieval: &r,
                config: &config,
            },
        );
        assert_eq!(out.trace.terminated_reason, TerminationReason::FinalAnswer);
    }

    #[test]
    fn malformed_and_unknown_actions_become_observations() {
        let p = ScriptedChat::new([
            "I will think without acting.",
            "Thought: t\nAction: call count_objects(label=",
            "Thought: t\nAction: call fly(to=\"moon\")",
            "Thought: t\nAction: finish(caption=\"A Tesla.\")",
        ]);
        let out = run_with(&p, "keywords: \"Tesla\"", 8);
        let obs: Vec<&str> = out.trace.steps.iter().map(|s| s.observation.as_str()).collect();
        assert!(obs[0].starts_with("ERROR: no `Action:`"));
        assert!(obs[1].starts_with("ERROR: could not parse action"));
        assert!(obs[2].starts_with("ERROR: unknown tool"));
        assert!(matches!(out.trace.steps[1].action, StepAction::Invalid(_)));
        assert_eq!(out.trace.terminated_reason, TerminationReason::FinalAnswer);
    }

    struct Faulty;
    impl Tool for Faulty {
        fn descriptor(&self) -> ToolDescriptor {
            ToolDescriptor {
                name: "faulty".into(),
                summary: "always fails".into(),
                args: vec![],
                returns: "nothing".into(),
            }
        }
        fn invoke(&self, _: &ToolContext<'_>, _: &ToolCall) -> Result<String, ToolError> {
            panic!("boom")
        }
    }

    #[test]
    fn faulty_tool_does_not_stop_the_loop() {
        let p = ScriptedChat::new([
            "Thought: t\nAction: call faulty()",
            "Thought: t\nAction: finish(caption=\"A Tesla.\")",
        ]);
        let user = Instruction::new("x", png()).unwrap();
        let mut reg = ToolRegistry::new();
        reg.register(Arc::new(Faulty)).unwrap();
        let r = retrieval();
        let config = AgentConfig::default();
        let out = run(
            &user,
            &evolved("keywords: \"Tesla\""),
            &AgentDeps {
                planner: &p,
                registry: &reg,
                retrieval: &r,
                config: &config,
            },
        );
        assert!(out.trace.steps[0].observation.starts_with("ERROR:"));
        assert_eq!(out.trace.terminated_reason, TerminationReason::FinalAnswer);
    }

    #[test]
    fn backend_error_keeps_partial_trace() {
        let p = ScriptedChat::with_outcomes([
            Ok("Thought: t\nAction: call count_objects(label=\"car\")".to_string()),
            Err(BackendError::Transport {
                message: "down".into(),
                retriable: true,
            }),
        ]);
        let out = run_with(&p, "keywords: \"Tesla\"", 8);
        assert_eq!(out.trace.steps.len(), 1);
        assert_eq!(out.trace.terminated_reason, TerminationReason::Error);
        assert!(out.trace.error.as_deref().unwrap().contains("down"));
    }

    #[test]
    fn judged_dimensions_do_not_gate() {
        let spec = evolved("sentiment: positive\nkeywords: \"Tesla\"").spec;
        let t = should_terminate(
            &FinalAnswer {
                caption: "A gloomy Tesla.".into(),
            },
            &spec,
        );
        assert_eq!(t, Termination::Accept);
        assert!(spec.is_set(Dimension::Sentiment));
    }

    #[test]
    fn split_reply_variants() {
        assert_eq!(
            split_reply("Thought: a\nAction: `finish(caption=\"x\")`"),
            ("a".into(), Some("finish(caption=\"x\")".into()))
        );
        assert_eq!(
            split_reply("Thought: a\nAction: call vqa(question=\"q\")\nObservation: made up"),
            ("a".into(), Some("call vqa(question=\"q\")".into()))
        );
        assert_eq!(split_reply("just text"), ("just text".into(), None));
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        let bad = AgentConfig {
            max_steps: 0,
            ..AgentConfig::default()
        };
        assert_eq!(bad.validate(), Err(AgentConfigError::ZeroSteps));
    }
}
