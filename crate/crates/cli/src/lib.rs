//! `kcfg-rl` subcommands: dataset validation, two-phase training, greedy
//! evaluation and benchmark scoring.
//!
//! Exit codes: 0 success, 1 invalid data or a failed domain check, 2 I/O
//! failures and usage errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use kcfg_core::dataset::{lint_dataset, read_dataset, split_indices, Dataset};
use kcfg_core::env::{KnowledgeBase, SyntheticBenchmark};
use kcfg_core::policy::{ActionSpace, PolicyParams};
use kcfg_core::rng::derive_seed;
use kcfg_core::score::{BenchEntry, BenchReport};
use kcfg_core::trainer::{
    evaluate_greedy, run_exploration, run_warmup, CurvePoint, EvalReport, Objective, Phase, Task, TrainConfig,
};
use kcfg_core::{ConfigSpace, Weights};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const CURVE_FILE: &str = "curve.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug)]
pub enum Failure {
    /// Invalid input data or a domain check that did not pass.
    Domain(anyhow::Error),
    /// Unreadable or unwritable files.
    Io(anyhow::Error),
    Usage(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Io(_) | Failure::Usage(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Domain(e) | Failure::Io(e) => write!(f, "{e:#}"),
            Failure::Usage(m) => write!(f, "usage: {m}"),
        }
    }
}

fn domain<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Domain(e.into())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Io)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::Io)?;
    }
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Io)
}

#[derive(Debug, Parser)]
#[command(name = "kcfg-rl", version, about = "Kernel configuration tuning with group-relative policy optimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dataset against a configuration space.
    Validate(ValidateArgs),
    /// Run the warm-up or exploration phase.
    Train(TrainArgs),
    /// Re-run a training command from its manifest.
    Replay(ReplayArgs),
    /// Greedy decoding of a checkpoint into a complete assignment.
    Evaluate(EvaluateArgs),
    /// Aggregate a benchmark metrics CSV.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Warmup,
    Explore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Literal,
    TwoSided,
}

fn parse_weights(s: &str) -> Result<Weights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, g] => Ok(Weights::new(a, b, g)),
        _ => Err(format!("expected three comma-separated weights, got {}", parts.len())),
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub phase: PhaseArg,
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for the checkpoint, reward curve and manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "KCFG_RL_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub group_size: usize,
    #[arg(long, default_value_t = 0.2)]
    pub clip_eps: f64,
    #[arg(long, default_value_t = 0.99)]
    pub discount: f64,
    #[arg(long, default_value_t = 0.2)]
    pub explore_eps: f64,
    #[arg(long, default_value_t = 0.95)]
    pub explore_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub smoothing: f64,
    /// alpha,beta,gamma_perf
    #[arg(long, value_parser = parse_weights, default_value = "1,1,1")]
    pub weights: Weights,
    /// Exploration episodes, or warm-up update steps.
    #[arg(long, default_value_t = 500)]
    pub episodes: usize,
    #[arg(long)]
    pub steps_per_episode: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    pub format_noise: f64,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Literal)]
    pub objective: ObjectiveArg,
    #[arg(long, default_value_t = 10)]
    pub eval_every: usize,
    #[arg(long, default_value = "unixbench")]
    pub workload: String,
    /// Workload scoring the periodic evaluation; defaults to `--workload`.
    #[arg(long)]
    pub eval_workload: Option<String>,
    /// Complexity weight of the synthetic benchmark.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Fraction of the dataset used for warm-up; exploration uses the rest.
    #[arg(long)]
    pub split: Option<f64>,
    /// Knowledge base JSONL; defaults to per-symbol help text.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Warm-up checkpoint to continue from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub from_scratch: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, env = "KCFG_RL_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "unixbench")]
    pub workload: String,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Where to write the complete assignment (JSONL).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// CSV with header `test,measured,reference`.
    pub metrics: PathBuf,
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub space: PathBuf,
    pub dataset: PathBuf,
    pub kb: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub from_scratch: bool,
    pub seed: u64,
    pub split: Option<f64>,
    pub lambda: f64,
    pub eval_workload: Option<String>,
    pub config: TrainConfig,
}

impl TrainArgs {
    pub fn request(&self) -> TrainRequest {
        TrainRequest {
            space: self.space.clone(),
            dataset: self.dataset.clone(),
            kb: self.kb.clone(),
            checkpoint: self.checkpoint.clone(),
            from_scratch: self.from_scratch,
            seed: self.seed,
            split: self.split,
            lambda: self.lambda,
            eval_workload: self.eval_workload.clone(),
            config: TrainConfig {
                group_size: self.group_size,
                clip_eps: self.clip_eps,
                discount: self.discount,
                explore_eps0: self.explore_eps,
                explore_decay: self.explore_decay,
                learning_rate: self.lr,
                smoothing_coef: self.smoothing,
                steps_per_episode: self.steps_per_episode,
                episodes: self.episodes,
                weights: self.weights,
                phase: match self.phase {
                    PhaseArg::Warmup => Phase::Warmup,
                    PhaseArg::Explore => Phase::Exploration,
                },
                format_noise: self.format_noise,
                objective: match self.objective {
                    ObjectiveArg::Literal => Objective::Literal,
                    ObjectiveArg::TwoSided => Objective::TwoSided,
                },
                tool_calls: true,
                eval_every: self.eval_every,
                workload: self.workload.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episode: usize,
    pub validity_rate: f64,
    pub perf_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutputs {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub request: TrainRequest,
    pub outputs: RunOutputs,
    pub elapsed_ms: u128,
    pub curve: Vec<CurvePoint>,
    pub evals: Vec<EvalSummary>,
    pub final_params: Vec<f64>,
}

/// Loaded space and dataset.
pub struct Inputs {
    pub space: ConfigSpace,
    pub dataset: Dataset,
}

pub fn load_inputs(space: &Path, dataset: &Path) -> Result<Inputs, Failure> {
    let space = ConfigSpace::load(&read(space)?)
        .with_context(|| format!("loading {}", space.display()))
        .map_err(Failure::Domain)?;
    let (dataset, _) = read_dataset(&read(dataset)?, &space)
        .with_context(|| format!("loading {}", dataset.display()))
        .map_err(Failure::Domain)?;
    Ok(Inputs { space, dataset })
}

/// Report text and whether every record is valid.
pub fn cmd_validate(space: &Path, dataset: &Path) -> Result<(String, bool), Failure> {
    let space_src = read(space)?;
    let data_src = read(dataset)?;
    let space = ConfigSpace::load(&space_src)
        .with_context(|| format!("loading {}", space.display()))
        .map_err(Failure::Domain)?;
    let errors = lint_dataset(&data_src, &space);
    let mut out = String::new();
    for e in &errors {
        let _ = writeln!(out, "{}: {e}", dataset.display());
    }
    if errors.is_empty() {
        let (ds, warnings) = read_dataset(&data_src, &space).map_err(domain)?;
        for w in &warnings {
            let _ = writeln!(out, "{}: warning: {w}", dataset.display());
        }
        let _ = writeln!(out, "{}: {} groups ok", dataset.display(), ds.len());
    }
    Ok((out, errors.is_empty()))
}

fn phase_indices(len: usize, split: Option<f64>, seed: u64, phase: Phase) -> Result<Vec<usize>, Failure> {
    match split {
        None => Ok((0..len).collect()),
        Some(frac) => {
            let (warm, explore) = split_indices(len, frac, derive_seed(seed, 3)).map_err(domain)?;
            Ok(match phase {
                Phase::Warmup => warm,
                Phase::Exploration => explore,
            })
        }
    }
}

fn curve_csv(curve: &[CurvePoint]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in curve {
        w.serialize(p).map_err(|e| Failure::Io(e.into()))?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Io(anyhow!("{e}")))?;
    String::from_utf8(bytes).map_err(|e| Failure::Io(e.into()))
}

/// Train one phase and write the checkpoint, reward curve and manifest
/// under `out`.
pub fn cmd_train(req: &TrainRequest, out: &Path) -> Result<RunManifest, Failure> {
    let started = Instant::now();
    let phase = req.config.phase;
    if phase == Phase::Exploration && req.checkpoint.is_none() && !req.from_scratch {
        return Err(Failure::Usage(
            "exploration needs --checkpoint from a warm-up run or --from-scratch".into(),
        ));
    }
    req.config.validate().map_err(domain)?;
    let Inputs { space, dataset } = load_inputs(&req.space, &req.dataset)?;
    if dataset.is_empty() {
        return Err(Failure::Domain(anyhow!("dataset {} has no groups", req.dataset.display())));
    }
    let groups = dataset.group_list();
    let actions = ActionSpace::new(&space, &groups);
    let kb = match &req.kb {
        Some(p) => KnowledgeBase::load(&read(p)?).map_err(domain)?,
        None => KnowledgeBase::from_space(&space),
    };
    let params = match (&req.checkpoint, phase) {
        (Some(path), _) if !(req.from_scratch && phase == Phase::Exploration) => {
            let p = PolicyParams::from_checkpoint(&read(path)?)
                .with_context(|| format!("loading {}", path.display()))
                .map_err(Failure::Domain)?;
            p.check_compatible(&actions)
                .with_context(|| format!("checkpoint {} does not fit this dataset", path.display()))
                .map_err(Failure::Domain)?;
            p
        }
        _ => PolicyParams::init(&actions, derive_seed(req.seed, 0)),
    };
    let indices = phase_indices(dataset.len(), req.split, req.seed, phase)?;
    let task = Task {
        space: &space,
        groups: &groups,
        actions: &actions,
        kb: Some(&kb),
    };
    let outcome = match phase {
        Phase::Warmup => run_warmup(&task, &indices, params, &req.config, req.seed),
        Phase::Exploration => {
            let mut bench = SyntheticBenchmark::generate(&space, req.seed, &req.config.workload);
            bench.lambda = req.lambda;
            let held_out = req.eval_workload.as_ref().map(|w| {
                let mut b = SyntheticBenchmark::generate(&space, req.seed, w);
                b.lambda = req.lambda;
                b
            });
            run_exploration(
                &task,
                &indices,
                &bench,
                held_out.as_ref().map(|b| b as &dyn kcfg_core::ScoringOracle),
                params,
                &req.config,
                req.seed,
            )
        }
    }
    .map_err(domain)?;

    let outputs = RunOutputs {
        checkpoint: out.join(CHECKPOINT_FILE),
        curve: out.join(CURVE_FILE),
        manifest: out.join(MANIFEST_FILE),
    };
    write(&outputs.checkpoint, &outcome.params.to_checkpoint())?;
    write(&outputs.curve, &curve_csv(&outcome.curve)?)?;
    let manifest = RunManifest {
        command: format!("train --phase {}", phase.as_str()),
        request: req.clone(),
        outputs: outputs.clone(),
        elapsed_ms: started.elapsed().as_millis(),
        evals: outcome
            .evals
            .iter()
            .map(|e| EvalSummary {
                episode: e.episode,
                validity_rate: e.report.validity_rate,
                perf_gain: e.report.perf_gain,
            })
            .collect(),
        curve: outcome.curve,
        final_params: outcome.params.theta.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Io(e.into()))?;
    write(&outputs.manifest, &(text + "\n"))?;
    Ok(manifest)
}

pub fn cmd_replay(manifest: &Path, out: &Path) -> Result<RunManifest, Failure> {
    let m: RunManifest = serde_json::from_str(&read(manifest)?)
        .with_context(|| format!("parsing {}", manifest.display()))
        .map_err(Failure::Domain)?;
    cmd_train(&m.request, out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationSummary {
    pub groups: usize,
    pub valid: usize,
    pub validity_rate: f64,
    pub base_score: f64,
    pub final_score: f64,
    pub perf_gain: f64,
    pub r_perf: f64,
    pub answers: Vec<serde_json::Value>,
}

/// One `{"symbol":…,"value":…}` line per symbol, in name order.
pub fn assignment_jsonl(space: &ConfigSpace, report: &EvalReport) -> String {
    let mut out = String::new();
    for sym in space.symbols() {
        let line = serde_json::json!({
            "symbol": sym.name,
            "value": report.assignment.effective(sym).to_json(),
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(EvaluationSummary, String), Failure> {
    let Inputs { space, dataset } = load_inputs(&args.space, &args.dataset)?;
    let groups = dataset.group_list();
    let actions = ActionSpace::new(&space, &groups);
    let params = PolicyParams::from_checkpoint(&read(&args.checkpoint)?)
        .with_context(|| format!("loading {}", args.checkpoint.display()))
        .map_err(Failure::Domain)?;
    params
        .check_compatible(&actions)
        .with_context(|| format!("checkpoint {} does not fit this dataset", args.checkpoint.display()))
        .map_err(Failure::Domain)?;
    let mut bench = SyntheticBenchmark::generate(&space, args.seed, &args.workload);
    bench.lambda = args.lambda;
    let task = Task {
        space: &space,
        groups: &groups,
        actions: &actions,
        kb: None,
    };
    let indices: Vec<usize> = (0..groups.len()).collect();
    let report = evaluate_greedy(&task, &indices, &params, &bench, &args.workload).map_err(domain)?;
    let assignment = assignment_jsonl(&space, &report);
    if let Some(path) = &args.out {
        write(path, &assignment)?;
    }
    let summary = EvaluationSummary {
        groups: report.total,
        valid: report.valid,
        validity_rate: report.validity_rate,
        base_score: report.base_score,
        final_score: report.final_score,
        perf_gain: report.perf_gain,
        r_perf: report.r_perf,
        answers: report.answers.iter().map(|(_, a)| a.to_json()).collect(),
    };
    Ok((summary, assignment))
}

pub fn cmd_score(metrics: &Path) -> Result<BenchReport, Failure> {
    let text = read(metrics)?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let entries: Vec<BenchEntry> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing {}", metrics.display()))
        .map_err(Failure::Domain)?;
    BenchReport::from_entries(entries)
        .with_context(|| format!("scoring {}", metrics.display()))
        .map_err(Failure::Domain)
}

fn to_json<T: Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Failure::Io(e.into()))
}

/// Run a parsed command line, returning what to print on stdout and the
/// exit code.
pub fn run(cli: Cli) -> Result<(String, i32), Failure> {
    match cli.command {
        Command::Validate(a) => {
            let (report, ok) = cmd_validate(&a.space, &a.dataset)?;
            Ok((report, if ok { 0 } else { 1 }))
        }
        Command::Train(a) => {
            let m = cmd_train(&a.request(), &a.out)?;
            Ok((format!("wrote {}\n", m.outputs.manifest.display()), 0))
        }
        Command::Replay(a) => {
            let m = cmd_replay(&a.manifest, &a.out)?;
            Ok((format!("wrote {}\n", m.outputs.manifest.display()), 0))
        }
        Command::Evaluate(a) => {
            let (summary, _) = cmd_evaluate(&a)?;
            Ok((to_json(&summary)?, 0))
        }
        Command::Score(a) => Ok((to_json(&cmd_score(&a.metrics)?)?, 0)),
    }
}
