use std::sync::Arc;

use pop_core::env::{sample_context, EpisodeStatus};
use pop_core::metrics::{mean_ci, normalized_improvement, NI_EPS};
use pop_core::objective::Objective;
use pop_core::prior::{sample_tasks, PriorConfig};
use pop_core::rng::{mix, stream};
use pop_core::{PopError, Result};

use super::{
    all_methods, curve_rows, methods_string, parse_methods, progress, run_method, status_name, BaselineOptions,
    Context, EvalMethod, Settings, Task,
};
use crate::kv::{self, Pairs};
use crate::output::f;

pub const CURVES_FILE: &str = "ni_curves.csv";
pub const FINAL_FILE: &str = "final_ni.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PER_TASK_FILE: &str = "ni_per_task.csv";

#[derive(Debug, Clone)]
pub struct EvalPriorSettings {
    pub checkpoint: String,
    pub tasks: usize,
    pub dims: Vec<usize>,
    /// Total evaluations, context included.
    pub horizon: usize,
    pub context: usize,
    /// 2-D feature count; scaled with the dimension.
    pub features: usize,
    pub p_convex: f64,
    pub methods: Vec<EvalMethod>,
    pub baseline: BaselineOptions,
    pub confidence: f64,
    pub per_task: bool,
    pub seed: u64,
}

impl Settings for EvalPriorSettings {
    fn defaults() -> Self {
        let prior = PriorConfig::standard(2);
        Self {
            checkpoint: String::new(),
            tasks: 1024,
            dims: vec![2],
            horizon: 50,
            context: 10,
            features: prior.feature_count,
            p_convex: prior.p_convex,
            methods: all_methods(),
            baseline: BaselineOptions::default(),
            confidence: 0.95,
            per_task: true,
            seed: 0,
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.baseline.set(key, value)? {
            return Ok(());
        }
        match key {
            "checkpoint" => self.checkpoint = value.into(),
            "tasks" => self.tasks = kv::num(key, value)?,
            "dims" => self.dims = kv::list(key, value)?,
            "horizon" => self.horizon = kv::num(key, value)?,
            "context" => self.context = kv::num(key, value)?,
            "features" => self.features = kv::num(key, value)?,
            "p_convex" => self.p_convex = kv::num(key, value)?,
            "methods" => self.methods = parse_methods(key, value)?,
            "confidence" => self.confidence = kv::num(key, value)?,
            "per_task" => self.per_task = kv::flag(key, value)?,
            "seed" => self.seed = kv::num(key, value)?,
            _ => return Err(PopError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    fn pairs(&self) -> Pairs {
        let mut p: Pairs = vec![
            ("checkpoint".into(), self.checkpoint.clone()),
            ("tasks".into(), self.tasks.to_string()),
            ("dims".into(), kv::join(&self.dims)),
            ("horizon".into(), self.horizon.to_string()),
            ("context".into(), self.context.to_string()),
            ("features".into(), self.features.to_string()),
            ("p_convex".into(), self.p_convex.to_string()),
            ("methods".into(), methods_string(&self.methods)),
            ("confidence".into(), self.confidence.to_string()),
            ("per_task".into(), self.per_task.to_string()),
            ("seed".into(), self.seed.to_string()),
        ];
        p.extend(self.baseline.pairs());
        p
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<()> {
        if self.tasks == 0 || self.context == 0 {
            return Err(PopError::Config("tasks and context must be positive".into()));
        }
        if self.horizon <= self.context {
            return Err(PopError::Config(format!("horizon ({}) must exceed context ({})", self.horizon, self.context)));
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(PopError::Config("dims must list positive dimensions".into()));
        }
        if !(0.0 < self.confidence && self.confidence < 1.0) {
            return Err(PopError::Config("confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Held-out prior tasks at dimension `d` with their shared contexts.
pub fn prior_tasks(features: usize, p_convex: f64, d: usize, n: usize, context: usize, seed: u64) -> Result<Vec<Task>> {
    let mut base = PriorConfig::standard(2);
    base.feature_count = features;
    base.p_convex = p_convex;
    let prior = base.with_dimension(d);
    let seed = mix(seed, d as u64);
    Ok(sample_tasks(&prior, n, mix(seed, 1))?
        .into_iter()
        .enumerate()
        .map(|(i, func)| {
            let func: Arc<dyn Objective> = Arc::new(func);
            let ctx = sample_context(func.as_ref(), context, &mut stream(mix(seed, 2), i as u64));
            (func, ctx)
        })
        .collect())
}

pub fn run(s: &EvalPriorSettings, ctx: &mut Context) -> Result<()> {
    let policy = if s.methods.contains(&EvalMethod::Pop) { Some(ctx.load_policy(&s.checkpoint)?) } else { None };
    let mut curves = Vec::new();
    let mut finals = Vec::new();
    let mut summary = Vec::new();
    let mut per_task = Vec::new();
    for &d in &s.dims {
        let tasks = prior_tasks(s.features, s.p_convex, d, s.tasks, s.context, s.seed)?;
        for &m in &s.methods {
            progress(format!("eval-prior: D={d} method {}", m.name()));
            let runs = run_method(
                m,
                &tasks,
                s.horizon - s.context,
                policy.as_ref(),
                &s.baseline,
                mix(s.seed, d as u64),
                ctx.workers,
            )?;
            let mut series = Vec::with_capacity(runs.len());
            let mut final_values = Vec::with_capacity(runs.len());
            let mut failed = 0;
            for (i, (traj, status)) in runs.iter().enumerate() {
                let best = super::padded_best(traj, s.horizon);
                let ni = normalized_improvement(&traj.context_values(), &best[s.context - 1..], NI_EPS)?;
                let last = if *status == EpisodeStatus::Failed { f64::NAN } else { *ni.last().expect("non-empty") };
                failed += usize::from(*status == EpisodeStatus::Failed);
                finals.push(vec![m.name(), d.to_string(), i.to_string(), f(last), status_name(*status).into()]);
                final_values.push(last);
                if s.per_task {
                    for (t, v) in ni.iter().enumerate() {
                        per_task.push(vec![m.name(), d.to_string(), i.to_string(), t.to_string(), f(*v)]);
                    }
                }
                series.push(ni);
            }
            curves.extend(curve_rows(&[m.name(), d.to_string()], &series, 0, s.confidence));
            let finite: Vec<f64> = final_values.iter().copied().filter(|v| v.is_finite()).collect();
            let (mean, ci) = mean_ci(&finite, s.confidence);
            summary.push(vec![
                m.name(),
                d.to_string(),
                s.tasks.to_string(),
                failed.to_string(),
                f(mean),
                ci.map(|c| f(c.low)).unwrap_or_default(),
                ci.map(|c| f(c.high)).unwrap_or_default(),
            ]);
        }
    }
    let out = &mut *ctx.out;
    out.write_csv(CURVES_FILE, "pop-ni-curves", &["method", "dim", "step", "mean", "ci_low", "ci_high", "n"], &curves)?;
    out.write_csv(FINAL_FILE, "pop-final-ni", &["method", "dim", "task", "final_ni", "status"], &finals)?;
    out.write_csv(
        SUMMARY_FILE,
        "pop-ni-summary",
        &["method", "dim", "tasks", "failed", "mean_final_ni", "ci_low", "ci_high"],
        &summary,
    )?;
    if s.per_task {
        out.write_csv(PER_TASK_FILE, "pop-ni-per-task", &["method", "dim", "task", "step", "ni"], &per_task)?;
    }
    Ok(())
}
