//! The optimization environment: context sampling, policy-driven gradient
//! steps in the transformed space, and reward computation.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, PopError, Result};
use crate::objective::Objective;
use crate::policy::{gaussian_log_prob, StepSizePolicy, StreamOutput};
use crate::rng::PopRng;
use crate::transform::{TrajectoryRecord, TransformState, TransformedRecord, DEFAULT_TARGET_SCALE};

/// Number of features in a per-coordinate token.
pub const TOKEN_FEATURES: usize = 4;
pub type Token = [f64; TOKEN_FEATURES];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RewardKind {
    Current,
    GlobalImp,
    GlobalImpClipped,
    Smape,
    Mix(f64),
}

impl RewardKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            RewardKind::Mix(a) if !(0.0..=1.0).contains(a) => Err(config_err(format!("mix weight {a} outside [0, 1]"))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RewardKind::Current => write!(f, "current"),
            RewardKind::GlobalImp => write!(f, "global-imp"),
            RewardKind::GlobalImpClipped => write!(f, "global-imp-clipped"),
            RewardKind::Smape => write!(f, "smape"),
            RewardKind::Mix(a) => write!(f, "mix:{a}"),
        }
    }
}

impl FromStr for RewardKind {
    type Err = PopError;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s {
            "current" => RewardKind::Current,
            "global-imp" => RewardKind::GlobalImp,
            "global-imp-clipped" => RewardKind::GlobalImpClipped,
            "smape" => RewardKind::Smape,
            _ => match s.strip_prefix("mix:") {
                Some(a) => {
                    RewardKind::Mix(a.parse().map_err(|_| config_err(format!("bad mix weight in reward '{s}'")))?)
                }
                None => return Err(config_err(format!("unknown reward kind '{s}'"))),
            },
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Reward from transformed values: the new value, the previous iterate's
/// value and the best value before this step.
pub fn compute_reward(kind: RewardKind, y_t: f64, y_prev: f64, best_prev: f64) -> f64 {
    let clipped = (best_prev - y_t).max(0.0);
    match kind {
        RewardKind::Current => y_t,
        RewardKind::GlobalImp => best_prev - y_t,
        RewardKind::GlobalImpClipped => clipped,
        RewardKind::Smape => {
            let denom = best_prev.abs() + y_t.abs();
            if denom == 0.0 {
                0.0
            } else {
                (2.0 * clipped / denom).max(0.0)
            }
        }
        RewardKind::Mix(a) => a * clipped + (1.0 - a) * (y_prev - y_t),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub context_size: usize,
    pub horizon: usize,
    pub scale_x: f64,
    pub scale_y: f64,
    pub reward: RewardKind,
    /// Keep the context statistics for the whole episode.
    pub freeze_statistics: bool,
    pub clip_to_domain: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            context_size: 10,
            horizon: 40,
            scale_x: DEFAULT_TARGET_SCALE,
            scale_y: DEFAULT_TARGET_SCALE,
            reward: RewardKind::GlobalImpClipped,
            freeze_statistics: false,
            clip_to_domain: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_size == 0 {
            return Err(config_err("context size must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(config_err("horizon must be >= 1"));
        }
        self.reward.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub context_size: usize,
    pub budget: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }

    pub fn context_values(&self) -> Vec<f64> {
        self.records[..self.context_size.min(self.records.len())].iter().map(|r| r.y).collect()
    }

    /// Running minimum after each record.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.records
            .iter()
            .map(|r| {
                if r.y < best {
                    best = r.y;
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeStatus {
    Running,
    Finished,
    Failed,
}

pub struct Episode {
    objective: Arc<dyn Objective>,
    trajectory: Trajectory,
    state: TransformState,
    transformed: Vec<TransformedRecord>,
    best: f64,
    current: usize,
    step: usize,
    status: EpisodeStatus,
    config: EnvConfig,
    rng: PopRng,
}

/// `c` points drawn uniformly over the domain box, evaluated, with time 0.
pub fn sample_context<R: rand::Rng + ?Sized>(
    objective: &dyn Objective,
    c: usize,
    rng: &mut R,
) -> Vec<TrajectoryRecord> {
    let domain = objective.domain();
    (0..c)
        .map(|_| {
            let x = domain.sample(rng);
            let (y, grad) = objective.value_and_gradient(&x);
            TrajectoryRecord { x, y, grad, time_frac: 0.0 }
        })
        .collect()
}

/// Sample `c` uniform context points and set the iterate to their argmin.
pub fn init_context(objective: Arc<dyn Objective>, config: &EnvConfig, mut rng: PopRng) -> Result<Episode> {
    config.validate()?;
    let records = sample_context(objective.as_ref(), config.context_size, &mut rng);
    Episode::from_context(objective, records, config, rng)
}

impl Episode {
    /// Start from an explicit context (shared across methods in evaluation).
    pub fn from_context(
        objective: Arc<dyn Objective>,
        context: Vec<TrajectoryRecord>,
        config: &EnvConfig,
        rng: PopRng,
    ) -> Result<Self> {
        config.validate()?;
        if context.is_empty() {
            return Err(PopError::Usage("empty context".into()));
        }
        let mut state = TransformState::new(objective.domain(), config.scale_x, config.scale_y)?;
        for r in &context {
            state.observe(&r.x, r.y)?;
        }
        let transformed = state.retransform(&context)?;
        let current = argmin(&context);
        let best = context[current].y;
        Ok(Self {
            objective,
            trajectory: Trajectory { context_size: context.len(), budget: config.horizon, records: context },
            state,
            transformed,
            best,
            current,
            step: 0,
            status: EpisodeStatus::Running,
            config: config.clone(),
            rng,
        })
    }

    pub fn dim(&self) -> usize {
        self.objective.dimension()
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.trajectory
    }

    pub fn transformed(&self) -> &[TransformedRecord] {
        &self.transformed
    }

    pub fn state(&self) -> &TransformState {
        &self.state
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn current(&self) -> &TrajectoryRecord {
        &self.trajectory.records[self.current]
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn status(&self) -> EpisodeStatus {
        self.status
    }

    pub fn rng_mut(&mut self) -> &mut PopRng {
        &mut self.rng
    }

    /// Per-coordinate token sequence of the current transformed trajectory.
    pub fn coordinate_view(&self, d: usize) -> Vec<Token> {
        coordinate_view(&self.transformed, d)
    }

    /// Apply one coordinate-wise step and return the reward.
    pub fn step(&mut self, step_sizes: &[f64]) -> Result<f64> {
        if self.status != EpisodeStatus::Running {
            return Err(PopError::Usage(format!("step on a {:?} episode", self.status)));
        }
        if step_sizes.len() != self.dim() {
            return Err(PopError::Usage(format!(
                "{} step sizes for a {}-dimensional problem",
                step_sizes.len(),
                self.dim()
            )));
        }
        if step_sizes.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(PopError::Usage("step sizes must be finite and non-negative".into()));
        }
        let prev = self.trajectory.records[self.current].clone();
        let xt = self.state.forward_x(&prev.x)?;
        let gt = self.state.scale_gradient(&prev.grad)?;
        let moved: Vec<f64> = xt.iter().zip(&gt).zip(step_sizes).map(|((x, g), e)| x - e * g).collect();
        let back = self.state.inverse_x(&moved)?;
        let mut x: Vec<f64> =
            (0..self.dim()).map(|d| if step_sizes[d] * gt[d] == 0.0 { prev.x[d] } else { back[d] }).collect();
        if self.config.clip_to_domain {
            self.objective.domain().clip(&mut x);
        }
        let (y, grad) = self.objective.value_and_gradient(&x);
        if !y.is_finite() || grad.iter().any(|g| !g.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            self.status = EpisodeStatus::Failed;
            return Ok(0.0);
        }

        // reward under the statistics the action was chosen with
        let reward = compute_reward(
            self.config.reward,
            self.state.forward_y(y)?,
            self.state.forward_y(prev.y)?,
            self.state.forward_y(self.best)?,
        );

        self.step += 1;
        let record = TrajectoryRecord { x, y, grad, time_frac: self.step as f64 / self.trajectory.budget as f64 };
        if self.config.freeze_statistics {
            self.transformed.push(self.state.transform_record(&record)?);
            self.trajectory.records.push(record);
        } else {
            self.state.observe(&record.x, record.y)?;
            self.trajectory.records.push(record);
            self.transformed = self.state.retransform(&self.trajectory.records)?;
        }
        self.current = self.trajectory.records.len() - 1;
        self.best = self.best.min(y);
        if self.step >= self.trajectory.budget {
            self.status = EpisodeStatus::Finished;
        }
        Ok(reward)
    }
}

fn argmin(records: &[TrajectoryRecord]) -> usize {
    let mut best = 0;
    for (i, r) in records.iter().enumerate() {
        if r.y < records[best].y {
            best = i;
        }
    }
    best
}

pub fn coordinate_view(transformed: &[TransformedRecord], d: usize) -> Vec<Token> {
    transformed.iter().map(|r| [r.x[d], r.y, r.grad[d], r.time_frac]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionMode {
    Sample,
    Deterministic,
}

/// Everything PPO needs from one step of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSample {
    /// Token sequence per coordinate, as seen by the policy (kept only when requested).
    pub tokens: Option<Vec<Vec<Token>>>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRollout {
    pub steps: Vec<StepSample>,
    pub status: EpisodeStatus,
}

impl EpisodeRollout {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Run all episodes in lockstep to completion, one batched policy call per
/// step. Trajectory lengths agree across running episodes at every step.
pub fn rollout_batch(
    episodes: &mut [Episode],
    policy: &dyn StepSizePolicy,
    mode: ActionMode,
    keep_tokens: bool,
) -> Result<Vec<EpisodeRollout>> {
    let mut out: Vec<EpisodeRollout> =
        episodes.iter().map(|e| EpisodeRollout { steps: Vec::new(), status: e.status }).collect();
    loop {
        let active: Vec<usize> =
            (0..episodes.len()).filter(|&i| episodes[i].status == EpisodeStatus::Running).collect();
        if active.is_empty() {
            break;
        }
        let mut streams: Vec<Vec<Token>> = Vec::new();
        for &i in &active {
            for d in 0..episodes[i].dim() {
                streams.push(episodes[i].coordinate_view(d));
            }
        }
        let outputs = policy.evaluate_streams(&streams)?;
        let mut cursor = 0;
        let mut stream_iter = streams.into_iter();
        for &i in &active {
            let dim = episodes[i].dim();
            let outs: &[StreamOutput] = &outputs[cursor..cursor + dim];
            cursor += dim;
            let tokens: Vec<Vec<Token>> = stream_iter.by_ref().take(dim).collect();
            let ep = &mut episodes[i];
            let mut actions = Vec::with_capacity(dim);
            let mut log_probs = Vec::with_capacity(dim);
            let mut step_sizes = Vec::with_capacity(dim);
            for o in outs {
                let u = match mode {
                    ActionMode::Deterministic => o.mu,
                    ActionMode::Sample => {
                        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, ep.rng_mut());
                        o.mu + o.log_std.exp() * z
                    }
                };
                actions.push(u);
                log_probs.push(gaussian_log_prob(u, o.mu, o.log_std));
                step_sizes.push(u.exp());
            }
            let reward = ep.step(&step_sizes)?;
            out[i].steps.push(StepSample {
                tokens: keep_tokens.then_some(tokens),
                actions,
                log_probs,
                values: outs.iter().map(|o| o.value).collect(),
                reward,
            });
            out[i].status = ep.status;
        }
    }
    Ok(out)
}

/// [`rollout_batch`] split into `workers` contiguous chunks run concurrently.
/// Policy outputs do not depend on batch composition, so the result is the
/// same for every worker count.
pub fn rollout_parallel(
    episodes: &mut [Episode],
    policy: &dyn StepSizePolicy,
    mode: ActionMode,
    keep_tokens: bool,
    workers: usize,
) -> Result<Vec<EpisodeRollout>> {
    if workers <= 1 || episodes.len() < 2 {
        return rollout_batch(episodes, policy, mode, keep_tokens);
    }
    use rayon::prelude::*;
    let chunk = episodes.len().div_ceil(workers);
    let parts: Vec<Result<Vec<EpisodeRollout>>> =
        episodes.par_chunks_mut(chunk).map(|c| rollout_batch(c, policy, mode, keep_tokens)).collect();
    let mut out = Vec::with_capacity(episodes.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Run one episode per `(objective, context)` pair and return the final
/// trajectories. Episode `i` samples actions from `stream(seed, i)`.
pub fn run_tasks(
    tasks: &[(Arc<dyn Objective>, Vec<TrajectoryRecord>)],
    policy: &dyn StepSizePolicy,
    config: &EnvConfig,
    mode: ActionMode,
    seed: u64,
    workers: usize,
) -> Result<Vec<(Trajectory, EpisodeStatus)>> {
    let mut episodes = tasks
        .iter()
        .enumerate()
        .map(|(i, (f, ctx))| Episode::from_context(f.clone(), ctx.clone(), config, crate::rng::stream(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    rollout_parallel(&mut episodes, policy, mode, false, workers)?;
    Ok(episodes
        .into_iter()
        .map(|e| {
            let status = e.status();
            (e.into_trajectory(), status)
        })
        .collect())
}

/// Context sampling followed by `horizon` policy-driven steps.
pub fn run_episode(
    objective: Arc<dyn Objective>,
    policy: &dyn StepSizePolicy,
    config: &EnvConfig,
    rng: PopRng,
    mode: ActionMode,
) -> Result<(Trajectory, EpisodeRollout)> {
    let mut eps = vec![init_context(objective, config, rng)?];
    let mut rolls = rollout_batch(&mut eps, policy, mode, false)?;
    let ep = eps.pop().expect("one episode");
    Ok((ep.into_trajectory(), rolls.pop().expect("one rollout")))
}

#[derive(Serialize)]
struct DumpLine<'a> {
    index: usize,
    x: &'a [f64],
    y: f64,
    grad: &'a [f64],
    time_frac: f64,
    x_t: Option<&'a [f64]>,
    y_t: Option<f64>,
    grad_t: Option<&'a [f64]>,
}

/// JSON-lines dump: one record per line with raw and (when available)
/// transformed fields.
pub fn write_trajectory_jsonl<W: Write>(
    mut w: W,
    records: &[TrajectoryRecord],
    transformed: Option<&[TransformedRecord]>,
) -> Result<()> {
    for (i, r) in records.iter().enumerate() {
        let t = transformed.and_then(|t| t.get(i));
        let line = DumpLine {
            index: i,
            x: &r.x,
            y: r.y,
            grad: &r.grad,
            time_frac: r.time_frac,
            x_t: t.map(|t| t.x.as_slice()),
            y_t: t.map(|t| t.y),
            grad_t: t.map(|t| t.grad.as_slice()),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
