use std::sync::Arc;

use pop_core::bench::{catalog, get, BenchmarkFunction};
use pop_core::env::{sample_context, EpisodeStatus};
use pop_core::metrics::{normalized_regret, rank_curves};
use pop_core::objective::Objective;
use pop_core::rng::{mix, stream};
use pop_core::{PopError, Result};

use super::{
    all_methods, curve_rows, methods_string, parse_methods, progress, run_method, status_name, BaselineOptions,
    Context, EvalMethod, Settings, Task,
};
use crate::kv::{self, Pairs};
use crate::output::f;

pub const CURVES_FILE: &str = "regret_curves.csv";
pub const OVERALL_FILE: &str = "regret_overall.csv";
pub const RANK_FILE: &str = "rank_curves.csv";
pub const FINAL_FILE: &str = "final_regret.csv";

#[derive(Debug, Clone)]
pub struct EvalBenchSettings {
    pub checkpoint: String,
    /// Function names, or empty for the whole catalog.
    pub functions: Vec<String>,
    /// Total evaluations per run, context included.
    pub budget: usize,
    pub context: usize,
    pub repeats: usize,
    pub methods: Vec<EvalMethod>,
    pub baseline: BaselineOptions,
    pub confidence: f64,
    pub seed: u64,
}

impl Settings for EvalBenchSettings {
    fn defaults() -> Self {
        Self {
            checkpoint: String::new(),
            functions: Vec::new(),
            budget: 100,
            context: 10,
            repeats: 10,
            methods: all_methods(),
            baseline: BaselineOptions::default(),
            confidence: 0.95,
            seed: 0,
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.baseline.set(key, value)? {
            return Ok(());
        }
        match key {
            "checkpoint" => self.checkpoint = value.into(),
            "functions" => {
                self.functions =
                    if value == "all" { Vec::new() } else { value.split(',').map(|s| s.trim().to_string()).collect() };
                if let Some(bad) = self.functions.iter().find(|n| get(n).is_none()) {
                    return Err(PopError::Config(format!("unknown benchmark function '{bad}' in key 'functions'")));
                }
            }
            "budget" => self.budget = kv::num(key, value)?,
            "context" => self.context = kv::num(key, value)?,
            "repeats" => self.repeats = kv::num(key, value)?,
            "methods" => self.methods = parse_methods(key, value)?,
            "confidence" => self.confidence = kv::num(key, value)?,
            "seed" => self.seed = kv::num(key, value)?,
            _ => return Err(PopError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    fn pairs(&self) -> Pairs {
        let functions = if self.functions.is_empty() { "all".to_string() } else { self.functions.join(",") };
        let mut p: Pairs = vec![
            ("checkpoint".into(), self.checkpoint.clone()),
            ("functions".into(), functions),
            ("budget".into(), self.budget.to_string()),
            ("context".into(), self.context.to_string()),
            ("repeats".into(), self.repeats.to_string()),
            ("methods".into(), methods_string(&self.methods)),
            ("confidence".into(), self.confidence.to_string()),
            ("seed".into(), self.seed.to_string()),
        ];
        p.extend(self.baseline.pairs());
        p
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<()> {
        if self.context == 0 || self.repeats == 0 {
            return Err(PopError::Config("context and repeats must be positive".into()));
        }
        if self.budget <= self.context {
            return Err(PopError::Config(format!(
                "budget {} must exceed the context size {}",
                self.budget, self.context
            )));
        }
        Ok(())
    }
}

impl EvalBenchSettings {
    pub fn selected(&self) -> Vec<&'static BenchmarkFunction> {
        if self.functions.is_empty() {
            catalog().iter().collect()
        } else {
            self.functions.iter().filter_map(|n| get(n)).collect()
        }
    }
}

pub fn run(s: &EvalBenchSettings, ctx: &mut Context) -> Result<()> {
    let policy = if s.methods.contains(&EvalMethod::Pop) { Some(ctx.load_policy(&s.checkpoint)?) } else { None };
    let functions = s.selected();
    // task k = (function k / repeats, repeat k % repeats); shared by all methods
    let mut tasks: Vec<Task> = Vec::with_capacity(functions.len() * s.repeats);
    for (fi, func) in functions.iter().enumerate() {
        let catalog_index = catalog().iter().position(|c| c.name == func.name).unwrap_or(fi) as u64;
        let obj: Arc<dyn Objective> = Arc::new((*func).clone());
        for r in 0..s.repeats {
            let mut rng = stream(mix(s.seed, catalog_index), r as u64);
            tasks.push((obj.clone(), sample_context(obj.as_ref(), s.context, &mut rng)));
        }
    }
    let horizon = s.budget - s.context;
    let mut curves = Vec::new();
    let mut overall = Vec::new();
    let mut finals = Vec::new();
    let mut rank_input: Vec<Vec<Vec<f64>>> = Vec::new();
    for &m in &s.methods {
        progress(format!("eval-bench: method {}", m.name()));
        let runs = run_method(m, &tasks, horizon, policy.as_ref(), &s.baseline, s.seed, ctx.workers)?;
        let mut all_regret = Vec::with_capacity(runs.len());
        let mut best_all = Vec::with_capacity(runs.len());
        for (fi, func) in functions.iter().enumerate() {
            let mut regrets = Vec::with_capacity(s.repeats);
            for r in 0..s.repeats {
                let (traj, status) = &runs[fi * s.repeats + r];
                let best = super::padded_best(traj, s.budget);
                let regret = normalized_regret(&best, func.y_min, func.y_max)?;
                let last = if *status == EpisodeStatus::Failed { f64::NAN } else { regret[s.budget - 1] };
                finals.push(vec![func.name.to_string(), m.name(), r.to_string(), f(last), status_name(*status).into()]);
                best_all.push(best);
                regrets.push(regret);
            }
            curves.extend(curve_rows(&[func.name.to_string(), m.name()], &regrets, 1, s.confidence));
            all_regret.extend(regrets);
        }
        overall.extend(curve_rows(&[m.name()], &all_regret, 1, s.confidence));
        rank_input.push(best_all);
    }
    let ranks = rank_curves(&rank_input)?;
    let mut rank_rows = Vec::new();
    for (k, m) in s.methods.iter().enumerate() {
        for t in 0..s.budget {
            rank_rows.push(vec![m.name(), (t + 1).to_string(), f(ranks.mean[k][t]), f(ranks.stderr[k][t])]);
        }
    }
    let out = &mut *ctx.out;
    out.write_csv(
        CURVES_FILE,
        "pop-regret-curves",
        &["function", "method", "step", "mean", "ci_low", "ci_high", "n"],
        &curves,
    )?;
    out.write_csv(OVERALL_FILE, "pop-regret-overall", &["method", "step", "mean", "ci_low", "ci_high", "n"], &overall)?;
    out.write_csv(RANK_FILE, "pop-rank-curves", &["method", "step", "mean_rank", "stderr"], &rank_rows)?;
    out.write_csv(FINAL_FILE, "pop-final-regret", &["function", "method", "repeat", "final_regret", "status"], &finals)
}
