//! Subcommands. Each one is driven entirely by flat settings so a run can be
//! replayed from the pairs stored in its manifest.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use pop_core::baselines::{run_baseline, Accounting, BaselineConfig, Method};
use pop_core::checkpoint::load_checkpoint;
use pop_core::env::{run_tasks, ActionMode, EnvConfig, EpisodeStatus, Trajectory};
use pop_core::metrics::mean_ci;
use pop_core::objective::Objective;
use pop_core::policy::TransformerPolicy;
use pop_core::rng::stream;
use pop_core::transform::TrajectoryRecord;
use pop_core::{PopError, Result};

use crate::kv::{self, Pairs};
use crate::manifest::{sha256_file, FileHash, RunManifest};
use crate::output::{f, Outputs};

mod eval_bench;
mod eval_prior;
mod sample_prior;
mod sweep_lr;
mod train;

pub use eval_bench::EvalBenchSettings;
pub use eval_prior::EvalPriorSettings;
pub use sample_prior::SamplePriorSettings;
pub use sweep_lr::SweepLrSettings;
pub use train::TrainSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Train,
    EvalPrior,
    EvalBench,
    SweepLr,
    SamplePrior,
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Train => "train",
            CommandKind::EvalPrior => "eval-prior",
            CommandKind::EvalBench => "eval-bench",
            CommandKind::SweepLr => "sweep-lr",
            CommandKind::SamplePrior => "sample-prior",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => CommandKind::Train,
            "eval-prior" => CommandKind::EvalPrior,
            "eval-bench" => CommandKind::EvalBench,
            "sweep-lr" => CommandKind::SweepLr,
            "sample-prior" => CommandKind::SamplePrior,
            _ => return Err(PopError::Artifact(format!("unknown command '{s}' in run manifest"))),
        })
    }
}

/// Settings of one subcommand, built from defaults plus `key = value` pairs.
pub trait Settings: Sized {
    fn defaults() -> Self;
    fn set(&mut self, key: &str, value: &str) -> Result<()>;
    fn pairs(&self) -> Pairs;
    fn seed(&self) -> u64;

    fn validate(&self) -> Result<()> {
        Ok(())
    }

    fn from_pairs(pairs: &Pairs) -> Result<Self> {
        let mut s = Self::defaults();
        for (k, v) in pairs {
            s.set(k, v)?;
        }
        s.validate()?;
        Ok(s)
    }
}

/// What a command needs besides its settings.
pub struct Context<'a> {
    pub out: &'a mut Outputs,
    pub workers: usize,
    pub inputs: Vec<FileHash>,
}

impl Context<'_> {
    /// Load a checkpoint and record its files as run inputs.
    pub fn load_policy(&mut self, path: &str) -> Result<TransformerPolicy> {
        if path.is_empty() {
            return Err(PopError::Config("key 'checkpoint' is required".into()));
        }
        let (policy, manifest) = load_checkpoint(Path::new(path))?;
        let json = Path::new(path).with_extension("json");
        self.inputs.push(sha256_file(&json)?);
        self.inputs.push(sha256_file(&json.with_file_name(&manifest.blob))?);
        Ok(policy)
    }
}

fn dispatch<S: Settings>(
    pairs: &Pairs,
    ctx: &mut Context,
    body: impl FnOnce(&S, &mut Context) -> Result<()>,
) -> Result<(Pairs, u64)> {
    let s = S::from_pairs(pairs)?;
    body(&s, ctx)?;
    Ok((s.pairs(), s.seed()))
}

/// Resolve settings, run the command in a pool of `workers` threads, and
/// write `manifest.json` into `out_root`.
pub fn execute(kind: CommandKind, pairs: &Pairs, out_root: &Path, workers: usize) -> Result<RunManifest> {
    let workers = workers.max(1);
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PopError::Usage(format!("cannot start worker pool: {e}")))?;
    let mut out = Outputs::new(out_root)?;
    let mut ctx = Context { out: &mut out, workers, inputs: Vec::new() };
    let (resolved, seed) = pool.install(|| match kind {
        CommandKind::Train => dispatch::<TrainSettings>(pairs, &mut ctx, train::run),
        CommandKind::EvalPrior => dispatch::<EvalPriorSettings>(pairs, &mut ctx, eval_prior::run),
        CommandKind::EvalBench => dispatch::<EvalBenchSettings>(pairs, &mut ctx, eval_bench::run),
        CommandKind::SweepLr => dispatch::<SweepLrSettings>(pairs, &mut ctx, sweep_lr::run),
        CommandKind::SamplePrior => dispatch::<SamplePriorSettings>(pairs, &mut ctx, sample_prior::run),
    })?;
    let inputs = std::mem::take(&mut ctx.inputs);
    let manifest =
        RunManifest::new(kind.name(), resolved, seed, workers, inputs, out.root(), out.files(), start.elapsed())?;
    manifest.save(out.root())?;
    Ok(manifest)
}

/// Outcome of replaying a manifest.
#[derive(Debug)]
pub struct RerunReport {
    pub manifest: RunManifest,
    pub mismatched: Vec<String>,
}

/// Re-execute a run from its manifest with one worker and compare outputs.
pub fn rerun(manifest_path: &Path, out_root: &Path) -> Result<RerunReport> {
    let original = RunManifest::load(manifest_path)?;
    for input in &original.inputs {
        let now = sha256_file(Path::new(&input.path))?;
        if now.sha256 != input.sha256 {
            return Err(PopError::Artifact(format!("input {} changed since the original run", input.path)));
        }
    }
    let kind = CommandKind::from_name(&original.command)?;
    let manifest = execute(kind, &original.config, out_root, 1)?;
    let mut mismatched = Vec::new();
    for o in &original.outputs {
        match manifest.outputs.iter().find(|n| n.path == o.path) {
            Some(n) if n.sha256 == o.sha256 => {}
            _ => mismatched.push(o.path.clone()),
        }
    }
    for n in &manifest.outputs {
        if !original.outputs.iter().any(|o| o.path == n.path) {
            mismatched.push(n.path.clone());
        }
    }
    Ok(RerunReport { manifest, mismatched })
}

// ---- pieces shared by the evaluation commands ----

/// A method under evaluation: the learned policy or a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMethod {
    Pop,
    Baseline(Method),
}

impl EvalMethod {
    pub fn parse(key: &str, s: &str) -> Result<Self> {
        if s == "pop" {
            return Ok(EvalMethod::Pop);
        }
        s.parse()
            .map(EvalMethod::Baseline)
            .map_err(|_| PopError::Config(format!("unknown method '{s}' for key '{key}'")))
    }

    pub fn name(self) -> String {
        match self {
            EvalMethod::Pop => "pop".into(),
            EvalMethod::Baseline(m) => m.to_string(),
        }
    }

    fn salt(self) -> u64 {
        match self {
            EvalMethod::Pop => 0,
            EvalMethod::Baseline(m) => 1 + Method::ALL.iter().position(|x| *x == m).unwrap_or(0) as u64,
        }
    }
}

pub fn all_methods() -> Vec<EvalMethod> {
    std::iter::once(EvalMethod::Pop).chain(Method::ALL.iter().map(|m| EvalMethod::Baseline(*m))).collect()
}

pub fn parse_methods(key: &str, v: &str) -> Result<Vec<EvalMethod>> {
    let methods = v.split(',').map(|s| EvalMethod::parse(key, s.trim())).collect::<Result<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(PopError::Config(format!("key '{key}' lists no methods")));
    }
    Ok(methods)
}

pub fn methods_string(methods: &[EvalMethod]) -> String {
    methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")
}

/// Baseline knobs shared by the evaluation commands.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOptions {
    pub lr_gd: f64,
    pub lr_adam: f64,
    pub lr_lbfgs: f64,
    pub lbfgs_per_evaluation: bool,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            lr_gd: Method::Gd.tuned_lr(),
            lr_adam: Method::Adam.tuned_lr(),
            lr_lbfgs: Method::Lbfgs.tuned_lr(),
            lbfgs_per_evaluation: false,
        }
    }
}

impl BaselineOptions {
    /// Returns `false` when the key is not a baseline option.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr.gd" => self.lr_gd = kv::num(key, value)?,
            "lr.adam" => self.lr_adam = kv::num(key, value)?,
            "lr.lbfgs" => self.lr_lbfgs = kv::num(key, value)?,
            "lbfgs.accounting" => {
                self.lbfgs_per_evaluation = match value {
                    "per-iteration" => false,
                    "per-evaluation" => true,
                    _ => {
                        return Err(PopError::Config(format!(
                            "bad value '{value}' for key '{key}' (per-iteration or per-evaluation)"
                        )))
                    }
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn pairs(&self) -> Pairs {
        vec![
            ("lr.gd".into(), self.lr_gd.to_string()),
            ("lr.adam".into(), self.lr_adam.to_string()),
            ("lr.lbfgs".into(), self.lr_lbfgs.to_string()),
            (
                "lbfgs.accounting".into(),
                if self.lbfgs_per_evaluation { "per-evaluation" } else { "per-iteration" }.into(),
            ),
        ]
    }

    pub fn config(&self, method: Method, budget: usize) -> BaselineConfig {
        let mut c = BaselineConfig::new(method, budget);
        match method {
            Method::Gd => c.lr = self.lr_gd,
            Method::Adam => c.lr = self.lr_adam,
            Method::Lbfgs => c.lr = self.lr_lbfgs,
            _ => {}
        }
        if self.lbfgs_per_evaluation {
            c.lbfgs.accounting = Accounting::PerEvaluation;
        }
        c
    }
}

pub type Task = (Arc<dyn Objective>, Vec<TrajectoryRecord>);

/// Run one method on every task. `horizon` counts evaluations after the
/// context; every method sees the same contexts.
pub fn run_method(
    method: EvalMethod,
    tasks: &[Task],
    horizon: usize,
    policy: Option<&TransformerPolicy>,
    baseline: &BaselineOptions,
    seed: u64,
    workers: usize,
) -> Result<Vec<(Trajectory, EpisodeStatus)>> {
    let seed = pop_core::rng::mix(seed, method.salt());
    let context_size = tasks.first().map(|t| t.1.len()).unwrap_or(0);
    match method {
        EvalMethod::Pop => {
            let policy = policy.ok_or_else(|| PopError::Config("method 'pop' needs a checkpoint".into()))?;
            let env = EnvConfig { context_size, horizon, ..EnvConfig::default() };
            run_tasks(tasks, policy, &env, ActionMode::Deterministic, seed, workers)
        }
        EvalMethod::Baseline(m) => {
            let cfg = baseline.config(m, horizon);
            let run = |(i, (f, ctx)): (usize, &Task)| {
                run_baseline(f.as_ref(), ctx, &cfg, &mut stream(seed, i as u64)).map(|r| (r.trajectory, r.status))
            };
            if workers > 1 {
                tasks.par_iter().enumerate().map(run).collect()
            } else {
                tasks.iter().enumerate().map(run).collect()
            }
        }
    }
}

/// Best-so-far values, padded with NaN up to `len` for episodes that stopped early.
pub fn padded_best(traj: &Trajectory, len: usize) -> Vec<f64> {
    let mut b = traj.best_so_far();
    b.truncate(len);
    b.resize(len, f64::NAN);
    b
}

/// Per-step mean and interval over the finite entries; returns
/// `(mean, ci_low, ci_high, n)` rendered for CSV.
pub fn summarize_column(values: &[f64], confidence: f64) -> [String; 4] {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (mean, ci) = mean_ci(&finite, confidence);
    [
        f(mean),
        ci.map(|c| f(c.low)).unwrap_or_default(),
        ci.map(|c| f(c.high)).unwrap_or_default(),
        finite.len().to_string(),
    ]
}

/// Curve rows `[prefix..., step, mean, ci_low, ci_high, n]` for `series[task][step]`.
pub fn curve_rows(prefix: &[String], series: &[Vec<f64>], first_step: usize, confidence: f64) -> Vec<Vec<String>> {
    let steps = series.first().map(|s| s.len()).unwrap_or(0);
    (0..steps)
        .map(|t| {
            let column: Vec<f64> = series.iter().map(|s| s[t]).collect();
            let mut row = prefix.to_vec();
            row.push((first_step + t).to_string());
            row.extend(summarize_column(&column, confidence));
            row
        })
        .collect()
}

pub fn status_name(s: EpisodeStatus) -> &'static str {
    match s {
        EpisodeStatus::Failed => "failed",
        _ => "finished",
    }
}

pub fn progress(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}
