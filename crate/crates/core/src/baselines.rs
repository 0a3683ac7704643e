//! Classical optimizers run under the same budget as the learned policy:
//! `c` context evaluations followed by `T` optimization evaluations.
//!
//! First-order methods start from the context argmin. Population methods
//! seed their population from the context and spend the remaining
//! evaluations on new candidates. Iterates are clipped to the domain box.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{EpisodeStatus, Trajectory};
use crate::error::{config_err, PopError, Result};
use crate::objective::Objective;
use crate::rng::PopRng;
use crate::transform::TrajectoryRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Gd,
    Adam,
    Lbfgs,
    Random,
    Ga,
    De,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::Gd, Method::Adam, Method::Lbfgs, Method::Random, Method::Ga, Method::De];

    pub fn is_first_order(self) -> bool {
        matches!(self, Method::Gd | Method::Adam | Method::Lbfgs)
    }

    /// Learning rate selected by the validation sweep.
    pub fn tuned_lr(self) -> f64 {
        match self {
            Method::Gd => 50.0,
            Method::Adam => 10.0,
            Method::Lbfgs => 100.0,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Gd => "gd",
            Method::Adam => "adam",
            Method::Lbfgs => "lbfgs",
            Method::Random => "random",
            Method::Ga => "ga",
            Method::De => "de",
        })
    }
}

impl FromStr for Method {
    type Err = PopError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gd" => Method::Gd,
            "adam" => Method::Adam,
            "lbfgs" => Method::Lbfgs,
            "random" => Method::Random,
            "ga" => Method::Ga,
            "de" => Method::De,
            _ => return Err(config_err(format!("unknown method '{s}'"))),
        })
    }
}

/// How L-BFGS line-search probes are charged against the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Accounting {
    /// One record per accepted iterate; probes are not charged.
    PerIteration,
    /// Every probe is a record and costs one evaluation.
    PerEvaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsParams {
    pub memory: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant of the weak Wolfe condition.
    pub c2: f64,
    /// Bracket expansion is `1 / shrink`.
    pub shrink: f64,
    pub max_backtracks: usize,
    pub accounting: Accounting,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self { memory: 10, c1: 1e-4, c2: 0.9, shrink: 0.5, max_backtracks: 30, accounting: Accounting::PerIteration }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population: usize,
    pub tournament: usize,
    /// Mutation standard deviation as a fraction of the box width.
    pub mutation_sd: f64,
    /// Per-gene mutation probability; `None` means `1 / D`.
    pub mutation_rate: Option<f64>,
    pub elitism: usize,
}

impl Default for GaParams {
    fn default() -> Self {
        Self { population: 20, tournament: 3, mutation_sd: 0.1, mutation_rate: None, elitism: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeParams {
    pub population: usize,
    pub f: f64,
    pub cr: f64,
}

impl Default for DeParams {
    fn default() -> Self {
        Self { population: 20, f: 0.8, cr: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: Method,
    pub lr: f64,
    /// Optimization evaluations after the context.
    pub budget: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lbfgs: LbfgsParams,
    pub ga: GaParams,
    pub de: DeParams,
}

impl BaselineConfig {
    pub fn new(method: Method, budget: usize) -> Self {
        Self {
            method,
            lr: method.tuned_lr(),
            budget,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lbfgs: LbfgsParams::default(),
            ga: GaParams::default(),
            de: DeParams::default(),
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.method.is_first_order() && !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(config_err(format!("{}: learning rate must be finite and >= 0, got {}", self.method, self.lr)));
        }
        match self.method {
            Method::Lbfgs => {
                let p = &self.lbfgs;
                if p.memory == 0 || !(p.c1 > 0.0 && p.c1 < p.c2 && p.c2 < 1.0) || !(p.shrink > 0.0 && p.shrink < 1.0) {
                    return Err(config_err("lbfgs: need memory >= 1, 0 < c1 < c2 < 1 and shrink in (0, 1)"));
                }
            }
            Method::Ga => {
                let p = &self.ga;
                if p.population < 2 || p.tournament == 0 || p.elitism >= p.population || !(p.mutation_sd >= 0.0) {
                    return Err(config_err("ga: need population >= 2, tournament >= 1, elitism < population"));
                }
            }
            Method::De => {
                let p = &self.de;
                if p.population < 4 {
                    return Err(config_err("de: population must be >= 4"));
                }
                if !(0.0..=1.0).contains(&p.cr) || !(p.f >= 0.0) {
                    return Err(config_err("de: need F >= 0 and CR in [0, 1]"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Result of one baseline run.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    /// Context records followed by the method's records.
    pub trajectory: Trajectory,
    /// Objective calls made after the context (line-search probes included).
    pub evaluations: usize,
    pub status: EpisodeStatus,
}

/// Objective wrapper that counts calls.
struct Counted<'a> {
    f: &'a dyn Objective,
    calls: Cell<usize>,
}

impl<'a> Counted<'a> {
    fn new(f: &'a dyn Objective) -> Self {
        Self { f, calls: Cell::new(0) }
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.calls.set(self.calls.get() + 1);
        self.f.value(x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.calls.set(self.calls.get() + 1);
        self.f.value_and_gradient(x)
    }
}

fn finite(y: f64, v: &[f64]) -> bool {
    y.is_finite() && v.iter().all(|g| g.is_finite())
}

struct Recorder {
    records: Vec<TrajectoryRecord>,
    context: usize,
    budget: usize,
    status: EpisodeStatus,
}

impl Recorder {
    fn new(context: &[TrajectoryRecord], budget: usize) -> Self {
        Self { records: context.to_vec(), context: context.len(), budget, status: EpisodeStatus::Running }
    }

    fn steps(&self) -> usize {
        self.records.len() - self.context
    }

    fn full(&self) -> bool {
        self.steps() >= self.budget || self.status == EpisodeStatus::Failed
    }

    /// Append a record; non-finite values end the run as failed.
    fn push(&mut self, x: Vec<f64>, y: f64, grad: Vec<f64>) -> bool {
        if !finite(y, &grad) || x.iter().any(|v| !v.is_finite()) {
            self.status = EpisodeStatus::Failed;
            return false;
        }
        let time_frac = (self.steps() + 1) as f64 / self.budget.max(1) as f64;
        self.records.push(TrajectoryRecord { x, y, grad, time_frac });
        true
    }

    fn finish(mut self, evaluations: usize) -> BaselineRun {
        if self.status == EpisodeStatus::Running {
            self.status = EpisodeStatus::Finished;
        }
        BaselineRun {
            trajectory: Trajectory { records: self.records, context_size: self.context, budget: self.budget },
            evaluations,
            status: self.status,
        }
    }
}

fn context_argmin(context: &[TrajectoryRecord]) -> Result<&TrajectoryRecord> {
    context
        .iter()
        .min_by(|a, b| a.y.total_cmp(&b.y))
        .ok_or_else(|| PopError::Usage("first-order baselines need a non-empty context".into()))
}

/// Run the configured method.
pub fn run_baseline(
    f: &dyn Objective,
    context: &[TrajectoryRecord],
    config: &BaselineConfig,
    rng: &mut PopRng,
) -> Result<BaselineRun> {
    config.validate()?;
    match config.method {
        Method::Gd => gd_run(f, context, config.lr, config.budget),
        Method::Adam => adam_run(f, context, config),
        Method::Lbfgs => lbfgs_run(f, context, config.lr, config.budget, &config.lbfgs),
        Method::Random => random_search_run(f, context, config.budget, rng),
        Method::Ga => ga_run(f, context, &config.ga, config.budget, rng),
        Method::De => de_run(f, context, &config.de, config.budget, rng),
    }
}

/// `x <- x - lr * grad`.
pub fn gd_run(f: &dyn Objective, context: &[TrajectoryRecord], lr: f64, budget: usize) -> Result<BaselineRun> {
    let start = context_argmin(context)?;
    let counted = Counted::new(f);
    let mut rec = Recorder::new(context, budget);
    let (mut x, mut g) = (start.x.clone(), start.grad.clone());
    while !rec.full() {
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= lr * gi;
        }
        f.domain().clip(&mut x);
        let (y, grad) = counted.value_and_gradient(&x);
        if !rec.push(x.clone(), y, grad.clone()) {
            break;
        }
        g = grad;
    }
    Ok(rec.finish(counted.calls.get()))
}

/// Adam with bias correction.
pub fn adam_run(f: &dyn Objective, context: &[TrajectoryRecord], config: &BaselineConfig) -> Result<BaselineRun> {
    let start = context_argmin(context)?;
    let counted = Counted::new(f);
    let mut rec = Recorder::new(context, config.budget);
    let (b1, b2, eps, lr) = (config.beta1, config.beta2, config.eps, config.lr);
    let (mut x, mut g) = (start.x.clone(), start.grad.clone());
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let mut t = 0;
    while !rec.full() {
        t += 1;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..x.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            x[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
        f.domain().clip(&mut x);
        let (y, grad) = counted.value_and_gradient(&x);
        if !rec.push(x.clone(), y, grad.clone()) {
            break;
        }
        g = grad;
    }
    Ok(rec.finish(counted.calls.get()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Two-loop recursion: `-H g` from the stored `(s, y)` pairs, oldest first.
pub fn lbfgs_direction(g: &[f64], pairs: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push((a, rho));
    }
    if let Some((s, y)) = pairs.last() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y), (a, rho)) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// L-BFGS with a weak-Wolfe bisection line search whose first trial step is
/// `lr`: Armijo failures shrink the bracket, curvature failures grow it.
/// A non-descent direction falls back to steepest descent for that step.
pub fn lbfgs_run(
    f: &dyn Objective,
    context: &[TrajectoryRecord],
    lr: f64,
    budget: usize,
    params: &LbfgsParams,
) -> Result<BaselineRun> {
    let start = context_argmin(context)?;
    let counted = Counted::new(f);
    let mut rec = Recorder::new(context, budget);
    let per_eval = params.accounting == Accounting::PerEvaluation;
    let (mut x, mut fx, mut g) = (start.x.clone(), start.y, start.grad.clone());
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    'outer: while !rec.full() {
        let mut d = lbfgs_direction(&g, &pairs);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) || !slope.is_finite() {
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            pairs.clear();
        }
        let (mut lo, mut hi, mut alpha) = (0.0, f64::INFINITY, lr);
        let mut armijo_point = None;
        let mut last = None;
        for _ in 0..=params.max_backtracks {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            f.domain().clip(&mut trial);
            let (y, grad) = counted.value_and_gradient(&trial);
            if per_eval && !rec.push(trial.clone(), y, grad.clone()) {
                break 'outer;
            }
            let ok = finite(y, &grad);
            if !ok || y > fx + params.c1 * alpha * slope {
                hi = alpha;
                alpha = 0.5 * (lo + hi);
                last = Some((trial, y, grad));
            } else if dot(&grad, &d) < params.c2 * slope {
                lo = alpha;
                alpha = if hi.is_finite() { 0.5 * (lo + hi) } else { alpha / params.shrink };
                armijo_point = Some((trial, y, grad));
            } else {
                armijo_point = Some((trial, y, grad));
                break;
            }
            if per_eval && rec.full() {
                break;
            }
        }
        let Some((xn, yn, gn)) = armijo_point.or(last) else {
            break;
        };
        if !per_eval && !rec.push(xn.clone(), yn, gn.clone()) {
            break;
        }
        if !finite(yn, &gn) {
            break;
        }
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            pairs.push((s, y));
            if pairs.len() > params.memory {
                pairs.remove(0);
            }
        }
        x = xn;
        fx = yn;
        g = gn;
    }
    Ok(rec.finish(counted.calls.get()))
}

/// Uniform draws over the domain box.
pub fn random_search_run(
    f: &dyn Objective,
    context: &[TrajectoryRecord],
    budget: usize,
    rng: &mut PopRng,
) -> Result<BaselineRun> {
    let counted = Counted::new(f);
    let mut rec = Recorder::new(context, budget);
    while !rec.full() {
        let x = f.domain().sample(rng);
        let y = counted.value(&x);
        if !rec.push(x, y, Vec::new()) {
            break;
        }
    }
    Ok(rec.finish(counted.calls.get()))
}

/// Initial population: the best context points, topped up with uniform
/// draws that are charged to the budget.
fn seed_population(
    counted: &Counted<'_>,
    context: &[TrajectoryRecord],
    size: usize,
    rec: &mut Recorder,
    rng: &mut PopRng,
) -> Vec<(Vec<f64>, f64)> {
    let mut sorted: Vec<&TrajectoryRecord> = context.iter().collect();
    sorted.sort_by(|a, b| a.y.total_cmp(&b.y));
    let mut pop: Vec<(Vec<f64>, f64)> = sorted.iter().take(size).map(|r| (r.x.clone(), r.y)).collect();
    while pop.len() < size && !rec.full() {
        let x = counted.f.domain().sample(rng);
        let y = counted.value(&x);
        if !rec.push(x.clone(), y, Vec::new()) {
            break;
        }
        pop.push((x, y));
    }
    pop
}

/// Genetic algorithm: tournament selection, uniform crossover, Gaussian
/// mutation and elitism.
pub fn ga_run(
    f: &dyn Objective,
    context: &[TrajectoryRecord],
    params: &GaParams,
    budget: usize,
    rng: &mut PopRng,
) -> Result<BaselineRun> {
    let counted = Counted::new(f);
    let mut rec = Recorder::new(context, budget);
    let domain = f.domain().clone();
    let dim = f.dimension();
    let rate = params.mutation_rate.unwrap_or(1.0 / dim as f64);
    let mut pop = seed_population(&counted, context, params.population, &mut rec, rng);
    while !rec.full() && pop.len() >= 2 {
        pop.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut next: Vec<(Vec<f64>, f64)> = pop[..params.elitism].to_vec();
        while next.len() < params.population && !rec.full() {
            let pick = |rng: &mut PopRng| -> usize {
                (0..params.tournament).map(|_| rng.gen_range(0..pop.len())).min().expect("tournament >= 1")
            };
            let (a, b) = (pick(rng), pick(rng));
            let mut child: Vec<f64> =
                (0..dim).map(|d| if rng.gen::<bool>() { pop[a].0[d] } else { pop[b].0[d] }).collect();
            for (d, c) in child.iter_mut().enumerate() {
                if rng.gen::<f64>() < rate {
                    let sd = params.mutation_sd * domain.width(d);
                    if sd > 0.0 {
                        *c += Normal::new(0.0, sd).expect("positive sd").sample(rng);
                    }
                }
            }
            domain.clip(&mut child);
            let y = counted.value(&child);
            if !rec.push(child.clone(), y, Vec::new()) {
                break;
            }
            next.push((child, y));
        }
        pop = next;
    }
    Ok(rec.finish(counted.calls.get()))
}

/// Differential evolution, rand/1/bin.
pub fn de_run(
    f: &dyn Objective,
    context: &[TrajectoryRecord],
    params: &DeParams,
    budget: usize,
    rng: &mut PopRng,
) -> Result<BaselineRun> {
    let counted = Counted::new(f);
    let mut rec = Recorder::new(context, budget);
    let domain = f.domain().clone();
    let dim = f.dimension();
    let mut pop = seed_population(&counted, context, params.population, &mut rec, rng);
    let n = pop.len();
    'gen: while !rec.full() && n >= 4 {
        for i in 0..n {
            if rec.full() {
                break 'gen;
            }
            let pick = |taken: &[usize], rng: &mut PopRng| loop {
                let r = rng.gen_range(0..n);
                if !taken.contains(&r) {
                    return r;
                }
            };
            let r1 = pick(&[i], rng);
            let r2 = pick(&[i, r1], rng);
            let r3 = pick(&[i, r1, r2], rng);
            let jrand = rng.gen_range(0..dim);
            let mut trial = pop[i].0.clone();
            for (j, t) in trial.iter_mut().enumerate() {
                if j == jrand || rng.gen::<f64>() < params.cr {
                    *t = pop[r1].0[j] + params.f * (pop[r2].0[j] - pop[r3].0[j]);
                }
            }
            domain.clip(&mut trial);
            let y = counted.value(&trial);
            if !rec.push(trial.clone(), y, Vec::new()) {
                break 'gen;
            }
            if y <= pop[i].1 {
                pop[i] = (trial, y);
            }
        }
    }
    Ok(rec.finish(counted.calls.get()))
}

/// The learning-rate grid swept for the first-order baselines.
pub const LR_GRID: [f64; 17] =
    [0.01, 0.02, 0.03, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 30.0, 50.0, 100.0];
