//! Command-line surface: evolve, caption, index, verify and replay.
//!
//! Commands return an [`Outcome`] instead of printing, so tests can run them
//! in-process with an injected [`Transport`].

pub mod wiring;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use caption_agent::agent::{run as run_agent, AgentDeps};
use caption_agent::backends::{BackendError, Transport};
use caption_agent::config::{Mode, RunConfig};
use caption_agent::constraints::{extract_constraint_block, verify_deterministic, verify_judged};
use caption_agent::context::{build_context, ContextBundle, SearchClients};
use caption_agent::evolver::{evolve, extract_user_spec, validate_evolution, EvolveError};
use caption_agent::model::{ImageRef, Instruction, TerminationReason};
use caption_agent::retrieval::{build_index, load_examples, RetrievalPlanner, VectorStore};
use caption_agent::tools::{standard_registry, ToolBackends};
use caption_agent::trace::{EvolveRecord, PlanRecord, TraceFile, TraceHeader, TraceRecord};
use caption_agent::Caption;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use wiring::{Scenario, Wiring};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONSTRAINT: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

/// Config file picked up from the working directory when `--config` is absent.
pub const DEFAULT_CONFIG: &str = "caption-agent.toml";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Backend(#[from] BackendError),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io(_) => EXIT_INPUT,
            CliError::Backend(_) => EXIT_BACKEND,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "caption-agent", version, about = "Controllable image captioning agent")]
pub struct Cli {
    /// Run configuration (TOML). Defaults to ./caption-agent.toml when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `mode` from the config.
    #[arg(long, global = true)]
    pub mode: Option<Mode>,
    /// Overrides `paths.trace_dir`.
    #[arg(long, global = true)]
    pub trace_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve a request into a professional instruction and review it.
    Evolve(EvolveArgs),
    /// Evolve, then run the agent to a final caption.
    Caption(CaptionArgs),
    /// Embed the example database into a vector index.
    Index(IndexArgs),
    /// Check a caption against a constraint block.
    Verify(VerifyArgs),
    /// Rerun scenarios from their cassettes and compare traces.
    Replay(ReplayArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct InputArgs {
    /// Scenario directory; supplies the image, request and fixture files.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub instruction: Option<String>,
    /// Skip web context; the evolver sees an empty bundle.
    #[arg(long)]
    pub no_context: bool,
    /// Cassette file for record/replay. Defaults to a per-scenario file in
    /// `paths.cassette_dir`.
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    /// Trace output file. Defaults to a per-scenario file in the trace dir.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub input: InputArgs,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    /// Scenario directories; repeat to run several.
    #[arg(long)]
    pub scenario: Vec<PathBuf>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub instruction: Option<String>,
    #[arg(long)]
    pub no_context: bool,
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Overrides `agent.max_steps`.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Scenarios run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Example database (JSONL). Defaults to `paths.examples`.
    #[arg(long)]
    pub examples: Option<PathBuf>,
    /// Index output. Defaults to `paths.index`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub cassette: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// File holding the caption.
    #[arg(long)]
    pub caption: PathBuf,
    /// File holding a constraint block, alone or inside an instruction.
    #[arg(long)]
    pub spec: PathBuf,
    /// Also judge the subjective dimensions with the `judge` chat backend.
    #[arg(long)]
    pub judge: bool,
    /// Scenario supplying the judge fixture in fixture mode.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub cassette: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long, required = true)]
    pub scenario: Vec<PathBuf>,
    /// Trace to compare against, byte for byte. With several scenarios, a
    /// directory holding `<scenario>.caption.jsonl` files.
    #[arg(long)]
    pub against: Option<PathBuf>,
    #[arg(long)]
    pub no_context: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

/// What a command printed and how it exited.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn error(e: &CliError) -> Self {
        Self {
            code: e.code(),
            stdout: String::new(),
            stderr: format!("error: {e}\n"),
        }
    }

    fn absorb(&mut self, other: Outcome) {
        self.code = self.code.max(other.code);
        self.stdout.push_str(&other.stdout);
        self.stderr.push_str(&other.stderr);
    }
}

/// Process-wide dependencies. Tests swap in a counting transport.
#[derive(Clone)]
pub struct Runtime {
    pub transport: Arc<dyn Transport>,
}

impl Runtime {
    pub fn live() -> Self {
        Self {
            transport: Arc::new(caption_agent::backends::UreqTransport::new(
                std::time::Duration::from_secs(120),
            )),
        }
    }
}

/// Flags override the config file, which overrides built-in defaults.
pub fn resolve_config(cli: &Cli) -> Result<(RunConfig, Mode), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Input(e.to_string()))?,
        None if Path::new(DEFAULT_CONFIG).exists() => {
            RunConfig::load(Path::new(DEFAULT_CONFIG)).map_err(|e| CliError::Input(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.trace_dir {
        cfg.paths.trace_dir = d.clone();
    }
    let mode = cli.mode.unwrap_or(cfg.mode);
    Ok((cfg, mode))
}

pub fn run(cli: Cli, rt: &Runtime) -> Outcome {
    let (cfg, mode) = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => return Outcome::error(&e),
    };
    let result = match &cli.command {
        Command::Evolve(a) => cmd_evolve(a, &cfg, mode, rt),
        Command::Caption(a) => cmd_caption(a, &cfg, mode, rt),
        Command::Index(a) => cmd_index(a, &cfg, mode, rt),
        Command::Verify(a) => cmd_verify(a, &cfg, mode, rt),
        Command::Replay(a) => cmd_replay(a, &cfg, rt),
    };
    result.unwrap_or_else(|e| Outcome::error(&e))
}

/// One resolved unit of work: an image, a request and where its files go.
#[derive(Debug, Clone)]
struct Job {
    name: String,
    scenario: Option<Scenario>,
    image: PathBuf,
    instruction: String,
    no_context: bool,
    max_steps: Option<usize>,
    cassette: PathBuf,
    trace: PathBuf,
}

fn job(
    command: &str,
    input: &InputArgs,
    cfg: &RunConfig,
    max_steps: Option<usize>,
) -> Result<Job, CliError> {
    let scenario = input.scenario.as_deref().map(Scenario::load).transpose()?;
    let name = scenario
        .as_ref()
        .map(|s| s.name.clone())
        .unwrap_or_else(|| "run".into());
    let image = input
        .image
        .clone()
        .or_else(|| scenario.as_ref().map(|s| s.image.clone()))
        .ok_or_else(|| CliError::Input("an image is required (--image or --scenario)".into()))?;
    let instruction = input
        .instruction
        .clone()
        .or_else(|| scenario.as_ref().map(|s| s.instruction.clone()))
        .ok_or_else(|| {
            CliError::Input("an instruction is required (--instruction or --scenario)".into())
        })?;
    let max_steps = max_steps.or_else(|| scenario.as_ref().and_then(|s| s.max_steps));
    Ok(Job {
        cassette: input
            .cassette
            .clone()
            .unwrap_or_else(|| cfg.paths.cassette_dir.join(format!("{name}.{command}.jsonl"))),
        trace: input
            .trace
            .clone()
            .unwrap_or_else(|| cfg.paths.trace_dir.join(format!("{name}.{command}.jsonl"))),
        name,
        scenario,
        image,
        instruction,
        no_context: input.no_context,
        max_steps,
    })
}

fn load_request(job: &Job) -> Result<Instruction, CliError> {
    let image = ImageRef::from_path(&job.image).map_err(|e| CliError::Input(e.to_string()))?;
    Instruction::new(job.instruction.clone(), image).map_err(|e| CliError::Input(e.to_string()))
}

fn save_trace(file: &TraceFile, path: &Path) -> Result<(), CliError> {
    file.save(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Context then evolution, appending both records. `Err` carries the exit
/// code of an evolution that did not produce an instruction.
fn evolve_stage(
    job: &Job,
    cfg: &RunConfig,
    w: &Wiring,
    request: &Instruction,
    file: &mut TraceFile,
) -> Result<caption_agent::EvolvedInstruction, (i32, String)> {
    let bundle = if cfg.context.enabled && !job.no_context {
        let clients = SearchClients {
            image: w.image_search.as_ref(),
            text: w.text_search.as_ref(),
        };
        build_context(
            request.image(),
            request.text(),
            &clients,
            w.chat("context").as_ref(),
            &cfg.context.config(),
        )
    } else {
        ContextBundle::empty()
    };
    file.push(TraceRecord::Context(bundle.clone()));
    match evolve(request, &bundle, w.chat("evolver").as_ref(), cfg.evolver.retries) {
        Ok(ev) => {
            file.push(TraceRecord::Evolve(EvolveRecord {
                prompt: ev.prompt.clone(),
                responses: ev.responses.clone(),
                evolved: Some(ev.evolved.clone()),
                error: None,
            }));
            Ok(ev.evolved)
        }
        Err(e) => {
            let (code, prompt, responses) = match &e {
                EvolveError::EvolveFailed { raw, .. } => (EXIT_INPUT, String::new(), vec![raw.clone()]),
                EvolveError::Backend(_) => (EXIT_BACKEND, String::new(), Vec::new()),
            };
            file.push(TraceRecord::Evolve(EvolveRecord {
                prompt,
                responses,
                evolved: None,
                error: Some(e.to_string()),
            }));
            Err((code, e.to_string()))
        }
    }
}

fn cmd_evolve(a: &EvolveArgs, cfg: &RunConfig, mode: Mode, rt: &Runtime) -> Result<Outcome, CliError> {
    let job = job("evolve", &a.input, cfg, None)?;
    let request = load_request(&job)?;
    let w = Wiring::build(mode, cfg, job.scenario.as_ref().map(|s| s.dir.as_path()), &job.cassette, &rt.transport)?;
    let mut file = TraceFile::new(TraceHeader::new(
        "evolve",
        request.text(),
        &request.image().digest(),
        w.backend_ids(),
    ));
    let evolved = match evolve_stage(&job, cfg, &w, &request, &mut file) {
        Ok(ev) => ev,
        Err((code, msg)) => {
            save_trace(&file, &job.trace)?;
            w.finish(&job.cassette)?;
            return Ok(Outcome {
                code,
                stdout: String::new(),
                stderr: format!("error: {msg}\n"),
            });
        }
    };
    let report = validate_evolution(
        &request,
        &extract_user_spec(request.text()),
        &evolved,
        w.chat("judge").as_ref(),
    );
    file.push(TraceRecord::Criteria(report.clone()));
    save_trace(&file, &job.trace)?;
    w.finish(&job.cassette)?;
    let code = if report.all_pass() || report.is_incomplete() && !has_failure(&report) {
        EXIT_OK
    } else {
        EXIT_CONSTRAINT
    };
    Ok(Outcome {
        code,
        stdout: format!("{}\n\n{}\n", evolved.text, report.render()),
        stderr: String::new(),
    })
}

fn has_failure(report: &caption_agent::evolver::CriteriaReport) -> bool {
    use caption_agent::evolver::CriterionVerdict;
    !report.constraint_inheritance.holds
        || report
            .judged()
            .iter()
            .any(|(_, j)| j.verdict == CriterionVerdict::Fail)
}

fn retrieval(cfg: &RunConfig, w: &Wiring) -> Result<RetrievalPlanner, CliError> {
    let examples = load_examples(&cfg.paths.examples).map_err(|e| CliError::Input(e.to_string()))?;
    let store = VectorStore::load(&cfg.paths.index).map_err(|e| {
        CliError::Input(format!(
            "{}: {e} (build it with `caption-agent index`)",
            cfg.paths.index.display()
        ))
    })?;
    RetrievalPlanner::new(store, examples, w.embed.clone()).map_err(|e| CliError::Input(e.to_string()))
}

fn caption_job(job: &Job, cfg: &RunConfig, mode: Mode, rt: &Runtime) -> Result<Outcome, CliError> {
    let request = load_request(job)?;
    let w = Wiring::build(mode, cfg, job.scenario.as_ref().map(|s| s.dir.as_path()), &job.cassette, &rt.transport)?;
    let planner = retrieval(cfg, &w)?;
    let mut file = TraceFile::new(TraceHeader::new(
        "caption",
        request.text(),
        &request.image().digest(),
        w.backend_ids(),
    ));
    let evolved = match evolve_stage(job, cfg, &w, &request, &mut file) {
        Ok(ev) => ev,
        Err((code, msg)) => {
            save_trace(&file, &job.trace)?;
            w.finish(&job.cassette)?;
            return Ok(Outcome {
                code,
                stdout: String::new(),
                stderr: format!("error: [{}] {msg}\n", job.name),
            });
        }
    };
    let registry = standard_registry(ToolBackends {
        chat: w.chat("tools").clone(),
        detector: w.detect.clone(),
        depth: w.depth.clone(),
        config: cfg.tools,
    });
    let mut agent = cfg.agent_config();
    if let Some(n) = job.max_steps {
        agent.max_steps = n;
    }
    agent.validate().map_err(|e| CliError::Input(e.to_string()))?;
    let out = run_agent(
        &request,
        &evolved,
        &AgentDeps {
            planner: w.chat("planner").as_ref(),
            registry: &registry,
            retrieval: &planner,
            config: &agent,
        },
    );
    file.push(TraceRecord::Plan(PlanRecord {
        instruction: evolved.text.clone(),
        spec: evolved.spec.clone(),
        config: agent,
        examples: out.examples.clone(),
    }));
    file.push_trace(&out.trace);
    save_trace(&file, &job.trace)?;
    w.finish(&job.cassette)?;

    let t = &out.trace;
    Ok(match (t.terminated_reason, &t.final_caption) {
        (TerminationReason::FinalAnswer, Some(c)) => Outcome {
            code: EXIT_OK,
            stdout: format!("{}\n", c.text()),
            stderr: String::new(),
        },
        (reason, _) => Outcome {
            code: EXIT_BACKEND,
            stdout: String::new(),
            stderr: format!(
                "error: [{}] run ended with {} after {} step(s){}\n",
                job.name,
                serde_json::to_value(reason)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
                t.steps.len(),
                t.error.as_deref().map(|e| format!(": {e}")).unwrap_or_default()
            ),
        },
    })
}

fn run_jobs(jobs: &[Job], workers: usize, cfg: &RunConfig, mode: Mode, rt: &Runtime) -> Vec<Outcome> {
    let one = |j: &Job| caption_job(j, cfg, mode, rt).unwrap_or_else(|e| Outcome::error(&e));
    #[cfg(feature = "parallel")]
    if workers > 1 && jobs.len() > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| jobs.par_iter().map(one).collect());
        }
    }
    let _ = workers;
    jobs.iter().map(one).collect()
}

fn caption_jobs(a: &CaptionArgs, cfg: &RunConfig, command: &str) -> Result<Vec<Job>, CliError> {
    let base = InputArgs {
        scenario: None,
        image: a.image.clone(),
        instruction: a.instruction.clone(),
        no_context: a.no_context,
        cassette: a.cassette.clone(),
        trace: a.trace.clone(),
    };
    if a.scenario.is_empty() {
        return Ok(vec![job(command, &base, cfg, a.max_steps)?]);
    }
    if a.scenario.len() > 1 && (a.trace.is_some() || a.cassette.is_some()) {
        return Err(CliError::Input(
            "--trace and --cassette name one file; use them with a single scenario".into(),
        ));
    }
    a.scenario
        .iter()
        .map(|s| {
            job(
                command,
                &InputArgs {
                    scenario: Some(s.clone()),
                    ..base.clone()
                },
                cfg,
                a.max_steps,
            )
        })
        .collect()
}

fn cmd_caption(a: &CaptionArgs, cfg: &RunConfig, mode: Mode, rt: &Runtime) -> Result<Outcome, CliError> {
    let jobs = caption_jobs(a, cfg, "caption")?;
    let mut total = Outcome::default();
    for o in run_jobs(&jobs, a.jobs.max(1), cfg, mode, rt) {
        total.absorb(o);
    }
    Ok(total)
}

fn cmd_replay(a: &ReplayArgs, cfg: &RunConfig, rt: &Runtime) -> Result<Outcome, CliError> {
    let tmp = cfg.paths.trace_dir.join("replay");
    let mut jobs = caption_jobs(
        &CaptionArgs {
            scenario: a.scenario.clone(),
            image: None,
            instruction: None,
            no_context: a.no_context,
            cassette: None,
            trace: None,
            max_steps: None,
            jobs: a.jobs,
        },
        cfg,
        "caption",
    )?;
    for j in &mut jobs {
        j.trace = tmp.join(format!("{}.caption.jsonl", j.name));
    }
    let outcomes = run_jobs(&jobs, a.jobs.max(1), cfg, Mode::Replay, rt);
    let mut total = Outcome::default();
    for (j, mut o) in jobs.iter().zip(outcomes) {
        if let Some(against) = &a.against {
            let reference = if against.is_dir() {
                against.join(format!("{}.caption.jsonl", j.name))
            } else {
                against.clone()
            };
            match compare_files(&j.trace, &reference) {
                Ok(None) => o.stdout.push_str(&format!("{}: identical\n", j.name)),
                Ok(Some(line)) => {
                    o.code = o.code.max(EXIT_CONSTRAINT);
                    o.stderr
                        .push_str(&format!("{}: trace differs at line {line}\n", j.name));
                }
                Err(e) => {
                    o.code = o.code.max(EXIT_INPUT);
                    o.stderr.push_str(&format!("error: {e}\n"));
                }
            }
        }
        total.absorb(o);
    }
    Ok(total)
}

/// First differing line (1-based), or `None` when the bytes match.
fn compare_files(a: &Path, b: &Path) -> Result<Option<usize>, CliError> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
    };
    let (x, y) = (read(a)?, read(b)?);
    if x == y {
        return Ok(None);
    }
    let mut lx = x.lines();
    let mut ly = y.lines();
    let mut n = 1;
    loop {
        match (lx.next(), ly.next()) {
            (Some(p), Some(q)) if p == q => n += 1,
            _ => return Ok(Some(n)),
        }
    }
}

fn cmd_index(a: &IndexArgs, cfg: &RunConfig, mode: Mode, rt: &Runtime) -> Result<Outcome, CliError> {
    let examples_path = a.examples.clone().unwrap_or_else(|| cfg.paths.examples.clone());
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.index.clone());
    let cassette = a
        .cassette
        .clone()
        .unwrap_or_else(|| cfg.paths.cassette_dir.join("index.jsonl"));
    let examples = load_examples(&examples_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", examples_path.display())))?;
    let w = Wiring::build(mode, cfg, None, &cassette, &rt.transport)?;
    let store = build_index(&examples, w.embed.as_ref()).map_err(|e| match e {
        caption_agent::retrieval::IndexError::Embed { source, .. } => CliError::Backend(source),
        other => CliError::Input(other.to_string()),
    })?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(e.to_string()))?;
    }
    store
        .save(&out)
        .map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    w.finish(&cassette)?;
    Ok(Outcome {
        code: EXIT_OK,
        stdout: format!(
            "T={} dim={} embedder={}\nwrote {}\n",
            store.len(),
            store.dim(),
            store.embedder_id(),
            out.display()
        ),
        stderr: String::new(),
    })
}

fn cmd_verify(a: &VerifyArgs, cfg: &RunConfig, mode: Mode, rt: &Runtime) -> Result<Outcome, CliError> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
    };
    let caption = Caption::new(read(&a.caption)?.trim_end_matches(['\n', '\r']).to_string());
    let spec_text = read(&a.spec)?;
    let spec = extract_constraint_block(&spec_text)
        .map_err(|e| CliError::Input(format!("{}: {e}", a.spec.display())))?;
    let report = if a.judge {
        let cassette = a
            .cassette
            .clone()
            .unwrap_or_else(|| cfg.paths.cassette_dir.join("verify.jsonl"));
        let w = Wiring::build(mode, cfg, a.scenario.as_deref(), &cassette, &rt.transport)?;
        let judged = verify_judged(&caption, &spec, w.chat("judge").as_ref());
        w.finish(&cassette)?;
        match judged {
            Ok(r) => r,
            Err(f) => {
                return Ok(Outcome {
                    code: EXIT_BACKEND,
                    stdout: format!("{}\n", f.partial.render()),
                    stderr: format!("error: {f}\n"),
                })
            }
        }
    } else {
        verify_deterministic(&caption, &spec)
    };
    Ok(Outcome {
        code: if report.overall { EXIT_OK } else { EXIT_CONSTRAINT },
        stdout: format!("{}\n", report.render()),
        stderr: String::new(),
    })
}
