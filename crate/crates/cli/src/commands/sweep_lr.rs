use pop_core::baselines::{Method, LR_GRID};
use pop_core::env::EpisodeStatus;
use pop_core::metrics::{final_ni, mean_ci};
use pop_core::prior::PriorConfig;
use pop_core::rng::mix;
use pop_core::{PopError, Result};

use super::eval_prior::prior_tasks;
use super::{progress, run_method, BaselineOptions, Context, EvalMethod, Settings};
use crate::kv::{self, Pairs};
use crate::output::f;

pub const SWEEP_FILE: &str = "sweep.csv";

/// Keeps sweep tasks apart from the evaluation task sets.
const SALT_SWEEP: u64 = 0x7377_6570;

#[derive(Debug, Clone)]
pub struct SweepLrSettings {
    pub methods: Vec<Method>,
    pub grid: Vec<f64>,
    pub tasks: usize,
    pub dimension: usize,
    /// Total evaluations, context included.
    pub horizon: usize,
    pub context: usize,
    pub features: usize,
    pub p_convex: f64,
    pub lbfgs_per_evaluation: bool,
    pub confidence: f64,
    pub seed: u64,
}

impl Settings for SweepLrSettings {
    fn defaults() -> Self {
        let prior = PriorConfig::standard(2);
        Self {
            methods: vec![Method::Gd, Method::Adam, Method::Lbfgs],
            grid: LR_GRID.to_vec(),
            tasks: 256,
            dimension: 2,
            horizon: 50,
            context: 10,
            features: prior.feature_count,
            p_convex: prior.p_convex,
            lbfgs_per_evaluation: false,
            confidence: 0.95,
            seed: 0,
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "methods" | "method" => {
                self.methods = value
                    .split(',')
                    .map(|s| {
                        let m: Method = s.trim().parse()?;
                        if !m.is_first_order() {
                            return Err(PopError::Config(format!(
                                "key '{key}': '{m}' has no learning rate (gd, adam or lbfgs)"
                            )));
                        }
                        Ok(m)
                    })
                    .collect::<Result<_>>()?
            }
            "grid" => self.grid = kv::list(key, value)?,
            "tasks" => self.tasks = kv::num(key, value)?,
            "dimension" => self.dimension = kv::num(key, value)?,
            "horizon" => self.horizon = kv::num(key, value)?,
            "context" => self.context = kv::num(key, value)?,
            "features" => self.features = kv::num(key, value)?,
            "p_convex" => self.p_convex = kv::num(key, value)?,
            "lbfgs.accounting" => {
                let mut b = BaselineOptions::default();
                b.set(key, value)?;
                self.lbfgs_per_evaluation = b.lbfgs_per_evaluation;
            }
            "confidence" => self.confidence = kv::num(key, value)?,
            "seed" => self.seed = kv::num(key, value)?,
            _ => return Err(PopError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    fn pairs(&self) -> Pairs {
        vec![
            ("methods".into(), kv::join(&self.methods)),
            ("grid".into(), kv::join(&self.grid)),
            ("tasks".into(), self.tasks.to_string()),
            ("dimension".into(), self.dimension.to_string()),
            ("horizon".into(), self.horizon.to_string()),
            ("context".into(), self.context.to_string()),
            ("features".into(), self.features.to_string()),
            ("p_convex".into(), self.p_convex.to_string()),
            (
                "lbfgs.accounting".into(),
                if self.lbfgs_per_evaluation { "per-evaluation" } else { "per-iteration" }.into(),
            ),
            ("confidence".into(), self.confidence.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<()> {
        if self.tasks == 0 || self.context == 0 || self.dimension == 0 {
            return Err(PopError::Config("tasks, dimension and context must be positive".into()));
        }
        if self.horizon <= self.context {
            return Err(PopError::Config(format!("horizon ({}) must exceed context ({})", self.horizon, self.context)));
        }
        if self.grid.is_empty() || self.grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(PopError::Config("grid must list finite, non-negative learning rates".into()));
        }
        Ok(())
    }
}

pub fn run(s: &SweepLrSettings, ctx: &mut Context) -> Result<()> {
    let seed = mix(s.seed, SALT_SWEEP);
    let tasks = prior_tasks(s.features, s.p_convex, s.dimension, s.tasks, s.context, seed)?;
    let mut rows = Vec::new();
    for &m in &s.methods {
        for &lr in &s.grid {
            progress(format!("sweep-lr: {m} lr {lr}"));
            let opts =
                BaselineOptions { lr_gd: lr, lr_adam: lr, lr_lbfgs: lr, lbfgs_per_evaluation: s.lbfgs_per_evaluation };
            let runs =
                run_method(EvalMethod::Baseline(m), &tasks, s.horizon - s.context, None, &opts, seed, ctx.workers)?;
            let mut values = Vec::with_capacity(runs.len());
            let mut failed = 0;
            for (traj, status) in &runs {
                let v = if *status == EpisodeStatus::Failed {
                    f64::NAN
                } else {
                    final_ni(&traj.context_values(), &traj.values())?
                };
                failed += usize::from(!v.is_finite());
                values.push(v);
            }
            // any undefined task makes the mean undefined; the row is kept
            let (mean, ci) = if failed > 0 { (f64::NAN, None) } else { mean_ci(&values, s.confidence) };
            rows.push(vec![
                m.to_string(),
                lr.to_string(),
                f(mean),
                ci.map(|c| f(c.low)).unwrap_or_else(|| "NaN".into()),
                ci.map(|c| f(c.high)).unwrap_or_else(|| "NaN".into()),
                failed.to_string(),
                s.tasks.to_string(),
            ]);
        }
    }
    ctx.out.write_csv(
        SWEEP_FILE,
        "pop-lr-sweep",
        &["method", "lr", "mean_final_ni", "ci_low", "ci_high", "undefined_tasks", "tasks"],
        &rows,
    )
}
