//! Meta-training with PPO over functions sampled from the prior.
//!
//! One iteration rolls out `B` episodes (one per function, `B * D`
//! coordinate streams of `T` steps), rescales rewards by a running estimate
//! of the return spread, computes GAE advantages and runs clipped-surrogate
//! updates with an adaptive KL penalty and KL-based early stopping.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_update, AdamConfig, AdamMoments, Graph, Var};
use crate::env::{
    rollout_parallel, run_tasks, sample_context, ActionMode, EnvConfig, Episode, EpisodeStatus, RewardKind, Token,
};
use crate::error::{config_err, PopError, Result};
use crate::metrics::final_ni;
use crate::objective::Objective;
use crate::policy::{flatten_tokens, group_by_length, PolicyConfig, TransformerPolicy};
use crate::prior::{sample_tasks, scaled_feature_count, PriorConfig};
use crate::rng::{mix, seeded, stream, PopRng};
use crate::stats::RunningStats;
use crate::transform::TrajectoryRecord;

const SALT_FUNCTIONS: u64 = 0x66_756e_6373;
const SALT_CONTEXTS: u64 = 0x63_7478;
const SALT_SHUFFLE: u64 = 0x73_6866;
const SALT_VALIDATION: u64 = 0x76_616c;
const SALT_INIT: u64 = 0x69_6e69;
const SALT_DROPOUT: u64 = 0x64_726f;

pub const MOVING_AVERAGE_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_functions: usize,
    pub total_iterations: usize,
    pub resample_every: usize,
    pub horizon: usize,
    pub context_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub actor_warmup: u64,
    pub critic_warmup: u64,
    pub weight_decay: f64,
    pub clip_ratio: f64,
    pub gae_gamma: f64,
    pub gae_lambda: f64,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    pub grad_clip_norm: f64,
    pub kl_stop: f64,
    pub kl_coef_init: f64,
    pub kl_target: f64,
    pub value_coef: f64,
    pub normalize_advantages: bool,
    pub normalize_returns: bool,
    pub reward: RewardKind,
    pub prior: PriorConfig,
    pub policy: PolicyConfig,
    /// Iterations between validation runs; 0 disables validation.
    pub validation_every: usize,
    pub validation_tasks: usize,
    /// Iterations between checkpoints; 0 keeps only the initial and final ones.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Full-scale settings.
    fn default() -> Self {
        Self {
            batch_functions: 256,
            total_iterations: 50_000,
            resample_every: 8,
            horizon: 40,
            context_size: 10,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            actor_warmup: 300,
            critic_warmup: 10,
            weight_decay: 1e-4,
            clip_ratio: 0.1,
            gae_gamma: 1.0,
            gae_lambda: 1.0,
            update_epochs: 4,
            minibatch_size: 4096,
            grad_clip_norm: 0.5,
            kl_stop: 0.01,
            kl_coef_init: 0.1,
            kl_target: 0.01,
            value_coef: 0.5,
            normalize_advantages: true,
            normalize_returns: true,
            reward: RewardKind::GlobalImpClipped,
            prior: PriorConfig::standard(2),
            policy: PolicyConfig::default(),
            validation_every: 500,
            validation_tasks: 256,
            checkpoint_every: 5000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Single-machine settings: 64 functions per batch, 256 features,
    /// 2,000 iterations and a one-block encoder.
    pub fn desk() -> Self {
        let mut prior = PriorConfig::standard(2);
        prior.feature_count = 256;
        Self {
            batch_functions: 64,
            total_iterations: 2000,
            prior,
            policy: desk_policy(),
            validation_every: 100,
            validation_tasks: 64,
            checkpoint_every: 500,
            ..Self::default()
        }
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            context_size: self.context_size,
            horizon: self.horizon,
            reward: self.reward,
            ..EnvConfig::default()
        }
    }

    pub fn transitions_per_iteration(&self) -> usize {
        self.batch_functions * self.prior.dimension * self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_functions", self.batch_functions),
            ("resample_every", self.resample_every),
            ("horizon", self.horizon),
            ("context", self.context_size),
            ("epochs", self.update_epochs),
            ("minibatch", self.minibatch_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(config_err(format!("{k} must be positive")));
            }
        }
        let finite_pos = [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("grad_clip", self.grad_clip_norm),
            ("kl_stop", self.kl_stop),
            ("kl_target", self.kl_target),
        ];
        for (k, v) in finite_pos {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(format!("{k} must be positive, got {v}")));
            }
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return Err(config_err(format!("clip_ratio must lie in (0, 1), got {}", self.clip_ratio)));
        }
        for (k, v) in [("gamma", self.gae_gamma), ("lambda", self.gae_lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_err(format!("{k} must lie in [0, 1], got {v}")));
            }
        }
        for (k, v) in
            [("weight_decay", self.weight_decay), ("kl_coef", self.kl_coef_init), ("value_coef", self.value_coef)]
        {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_err(format!("{k} must be non-negative, got {v}")));
            }
        }
        if self.minibatch_size > self.transitions_per_iteration() {
            return Err(config_err(format!(
                "minibatch {} exceeds the {} transitions collected per iteration",
                self.minibatch_size,
                self.transitions_per_iteration()
            )));
        }
        if self.validation_every > 0 && self.validation_tasks == 0 {
            return Err(config_err("validation_tasks must be positive when validation is enabled"));
        }
        self.reward.validate()?;
        self.prior.validate()?;
        self.policy.validate()
    }

    /// Set one flat `key = value` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| config_err(format!("bad value '{v}' for key '{key}'")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(config_err(format!("bad value '{v}' for key '{key}' (expected true/false)"))),
            }
        }
        match key {
            "batch_functions" => self.batch_functions = num(key, value)?,
            "iterations" => self.total_iterations = num(key, value)?,
            "resample_every" => self.resample_every = num(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            "context" => self.context_size = num(key, value)?,
            "actor_lr" => self.actor_lr = num(key, value)?,
            "critic_lr" => self.critic_lr = num(key, value)?,
            "actor_warmup" => self.actor_warmup = num(key, value)?,
            "critic_warmup" => self.critic_warmup = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "clip_ratio" => self.clip_ratio = num(key, value)?,
            "gamma" => self.gae_gamma = num(key, value)?,
            "lambda" => self.gae_lambda = num(key, value)?,
            "epochs" => self.update_epochs = num(key, value)?,
            "minibatch" => self.minibatch_size = num(key, value)?,
            "grad_clip" => self.grad_clip_norm = num(key, value)?,
            "kl_stop" => self.kl_stop = num(key, value)?,
            "kl_coef" => self.kl_coef_init = num(key, value)?,
            "kl_target" => self.kl_target = num(key, value)?,
            "value_coef" => self.value_coef = num(key, value)?,
            "normalize_advantages" => self.normalize_advantages = flag(key, value)?,
            "normalize_returns" => self.normalize_returns = flag(key, value)?,
            "reward" => self.reward = value.parse()?,
            "dimension" => {
                let d: usize = num(key, value)?;
                if d == 0 {
                    return Err(config_err("dimension must be positive"));
                }
                self.prior = self.prior.with_dimension(d);
            }
            "features" => self.prior.feature_count = num(key, value)?,
            "p_convex" => self.prior.p_convex = num(key, value)?,
            "validation_every" => self.validation_every = num(key, value)?,
            "validation_tasks" => self.validation_tasks = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "policy.embed_dim" => self.policy.embed_dim = num(key, value)?,
            "policy.blocks" => self.policy.blocks = num(key, value)?,
            "policy.heads" => self.policy.heads = num(key, value)?,
            "policy.ff_dim" => self.policy.ff_dim = num(key, value)?,
            "policy.shared_dim" => self.policy.shared_dim = num(key, value)?,
            "policy.head_hidden" => self.policy.head_hidden = num(key, value)?,
            "policy.dropout" => self.policy.dropout = num(key, value)?,
            "policy.dropout_in_updates" => self.policy.dropout_in_updates = flag(key, value)?,
            _ => return Err(config_err(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order; feeding the
    /// pairs back through [`TrainConfig::set`] reproduces the config.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let p = &self.policy;
        let kv: Vec<(&str, String)> = vec![
            ("batch_functions", self.batch_functions.to_string()),
            ("iterations", self.total_iterations.to_string()),
            ("resample_every", self.resample_every.to_string()),
            ("horizon", self.horizon.to_string()),
            ("context", self.context_size.to_string()),
            ("actor_lr", self.actor_lr.to_string()),
            ("critic_lr", self.critic_lr.to_string()),
            ("actor_warmup", self.actor_warmup.to_string()),
            ("critic_warmup", self.critic_warmup.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("clip_ratio", self.clip_ratio.to_string()),
            ("gamma", self.gae_gamma.to_string()),
            ("lambda", self.gae_lambda.to_string()),
            ("epochs", self.update_epochs.to_string()),
            ("minibatch", self.minibatch_size.to_string()),
            ("grad_clip", self.grad_clip_norm.to_string()),
            ("kl_stop", self.kl_stop.to_string()),
            ("kl_coef", self.kl_coef_init.to_string()),
            ("kl_target", self.kl_target.to_string()),
            ("value_coef", self.value_coef.to_string()),
            ("normalize_advantages", self.normalize_advantages.to_string()),
            ("normalize_returns", self.normalize_returns.to_string()),
            ("reward", self.reward.to_string()),
            ("dimension", self.prior.dimension.to_string()),
            ("features", self.prior.feature_count.to_string()),
            ("p_convex", self.prior.p_convex.to_string()),
            ("validation_every", self.validation_every.to_string()),
            ("validation_tasks", self.validation_tasks.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("seed", self.seed.to_string()),
            ("policy.embed_dim", p.embed_dim.to_string()),
            ("policy.blocks", p.blocks.to_string()),
            ("policy.heads", p.heads.to_string()),
            ("policy.ff_dim", p.ff_dim.to_string()),
            ("policy.shared_dim", p.shared_dim.to_string()),
            ("policy.head_hidden", p.head_hidden.to_string()),
            ("policy.dropout", p.dropout.to_string()),
            ("policy.dropout_in_updates", p.dropout_in_updates.to_string()),
        ];
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// Encoder used for single-machine training runs.
pub fn desk_policy() -> PolicyConfig {
    PolicyConfig {
        embed_dim: 32,
        blocks: 1,
        heads: 4,
        ff_dim: 64,
        shared_dim: 16,
        head_hidden: 16,
        ..PolicyConfig::default()
    }
}

/// Feature count for a dimension, scaling a 2-D base count by `D`.
pub fn features_for_dimension(base_2d: usize, dimension: usize) -> usize {
    scaled_feature_count(base_2d, dimension)
}

/// One coordinate stream at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub tokens: Vec<Token>,
    pub action: f64,
    pub old_log_prob: f64,
    pub old_value: f64,
    pub reward: f64,
    pub ret: f64,
    pub advantage: f64,
    pub episode: usize,
    pub coord: usize,
    pub step: usize,
    /// The stream ended early because its episode failed.
    pub truncated: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionBatch {
    /// Ordered by episode, then coordinate, then step.
    pub transitions: Vec<Transition>,
    /// Raw (unscaled) total reward per episode.
    pub episode_rewards: Vec<f64>,
    pub failed_episodes: usize,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Contiguous index ranges of each coordinate stream.
    pub fn streams(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.transitions.len() {
            let boundary = i == self.transitions.len() || {
                let (a, b) = (&self.transitions[i - 1], &self.transitions[i]);
                a.episode != b.episode || a.coord != b.coord
            };
            if boundary {
                out.push(start..i);
                start = i;
            }
        }
        out
    }
}

/// Roll out one episode per objective. Episode `i` uses `stream(context_seed, i)`
/// for its context and its actions.
pub fn collect(
    policy: &TransformerPolicy,
    objectives: &[Arc<dyn Objective>],
    env: &EnvConfig,
    context_seed: u64,
    workers: usize,
) -> Result<TransitionBatch> {
    let mut episodes = objectives
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut rng = stream(context_seed, i as u64);
            let ctx = sample_context(f.as_ref(), env.context_size, &mut rng);
            Episode::from_context(f.clone(), ctx, env, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let rollouts = rollout_parallel(&mut episodes, policy, ActionMode::Sample, true, workers)?;
    let mut batch = TransitionBatch::default();
    for (e, roll) in rollouts.into_iter().enumerate() {
        let failed = roll.status == EpisodeStatus::Failed;
        batch.failed_episodes += failed as usize;
        batch.episode_rewards.push(roll.total_reward());
        let dim = episodes[e].dim();
        let mut steps = roll.steps;
        for d in 0..dim {
            for (t, s) in steps.iter_mut().enumerate() {
                let tokens = s.tokens.as_mut().expect("tokens kept during collection");
                batch.transitions.push(Transition {
                    tokens: std::mem::take(&mut tokens[d]),
                    action: s.actions[d],
                    old_log_prob: s.log_probs[d],
                    old_value: s.values[d],
                    reward: s.reward,
                    ret: 0.0,
                    advantage: 0.0,
                    episode: e,
                    coord: d,
                    step: t,
                    truncated: failed,
                });
            }
        }
    }
    Ok(batch)
}

/// GAE over one terminal stream. Returns `(advantages, returns)`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "gae: rewards and values differ in length");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = 0.0;
    let mut running = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Fill `ret` and `advantage` for every stream of the batch.
pub fn compute_returns_and_advantages(batch: &mut TransitionBatch, gamma: f64, lambda: f64) {
    for range in batch.streams() {
        let slice = &mut batch.transitions[range];
        let rewards: Vec<f64> = slice.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = slice.iter().map(|t| t.old_value).collect();
        let (adv, ret) = gae(&rewards, &values, gamma, lambda);
        for ((t, a), r) in slice.iter_mut().zip(adv).zip(ret) {
            t.advantage = a;
            t.ret = r;
        }
    }
}

/// Discounted reward-to-go per step of one stream.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Loss settings for one minibatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub clip_ratio: f64,
    pub kl_coef: f64,
    pub value_coef: f64,
}

/// Forward-pass statistics of one minibatch, averaged over its transitions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MinibatchStats {
    /// `-mean(min(rho A, clip(rho) A))`
    pub surrogate: f64,
    /// Mean of `(rho - 1) - ln rho`.
    pub kl: f64,
    /// Fraction with `|rho - 1| > clip_ratio`.
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub count: usize,
}

/// Whether the clipped term is the active (gradient-free) branch of the
/// surrogate for this ratio and advantage.
pub fn clip_engaged(ratio: f64, advantage: f64, clip: f64) -> bool {
    (advantage > 0.0 && ratio > 1.0 + clip) || (advantage < 0.0 && ratio < 1.0 - clip)
}

/// `min(rho A, clip(rho, 1 - eps, 1 + eps) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Gradients of the minibatch loss (mean over `items`) for every parameter,
/// in parameter order, plus forward statistics. Length groups are processed
/// independently and summed in ascending-length order.
pub fn minibatch_gradients(
    policy: &TransformerPolicy,
    items: &[&Transition],
    advantages: &[f64],
    settings: LossSettings,
    dropout_seed: Option<u64>,
    workers: usize,
) -> Result<(Vec<Vec<f64>>, MinibatchStats)> {
    assert_eq!(items.len(), advantages.len());
    let total = items.len() as f64;
    let lengths: Vec<usize> = items.iter().map(|t| t.tokens.len()).collect();
    let groups: Vec<(usize, Vec<usize>)> = group_by_length(&lengths).into_iter().collect();

    let run_group = |(gi, (len, idx)): (usize, &(usize, Vec<usize>))| -> Result<(Vec<Vec<f64>>, [f64; 4])> {
        let n = idx.len();
        let mut g = Graph::new();
        let vars = policy.bind(&mut g, true);
        let flat = flatten_tokens(idx.iter().map(|&i| items[i].tokens.as_slice()));
        let mut drop_rng = dropout_seed.map(|s| stream(s, gi as u64));
        let fv = policy.forward_graph(&mut g, &vars, &flat, n, *len, drop_rng.as_mut())?;
        let col = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { idx.iter().map(|&i| f(i)).collect() };
        let u = g.constant_from(&[n, 1], &col(&|i| items[i].action));
        let old_lp = g.constant_from(&[n, 1], &col(&|i| items[i].old_log_prob));
        let adv = g.constant_from(&[n, 1], &col(&|i| advantages[i]));
        let ret = g.constant_from(&[n, 1], &col(&|i| items[i].ret));

        let ls = g.expand(fv.log_std, &[n, 1]);
        let diff = g.sub(u, fv.mu);
        let neg_ls = g.neg(ls);
        let inv_sigma = g.exp(neg_ls);
        let z = g.mul(diff, inv_sigma);
        let z2 = g.square(z);
        let half = g.scale(z2, -0.5);
        let lp = g.sub(half, ls);
        let lp = g.add_scalar(lp, -0.5 * (2.0 * std::f64::consts::PI).ln());
        let log_ratio = g.sub(lp, old_lp);
        let ratio = g.exp(log_ratio);
        let s1 = g.mul(ratio, adv);
        let clipped = g.clamp(ratio, 1.0 - settings.clip_ratio, 1.0 + settings.clip_ratio);
        let s2 = g.mul(clipped, adv);
        let surr = g.minimum(s1, s2);
        let kl_terms = {
            let r1 = g.add_scalar(ratio, -1.0);
            g.sub(r1, log_ratio)
        };
        let verr = g.sub(fv.value, ret);
        let vsq = g.square(verr);

        let surr_sum = g.sum(surr);
        let kl_sum = g.sum(kl_terms);
        let v_sum = g.sum(vsq);
        let neg_surr = g.neg(surr_sum);
        let kl_part = g.scale(kl_sum, settings.kl_coef);
        let actor = g.add(neg_surr, kl_part);
        let critic = g.scale(v_sum, settings.value_coef);
        let loss = g.add(actor, critic);
        let loss = g.scale(loss, 1.0 / total);

        let clip_count = g.value(ratio).iter().filter(|r| (*r - 1.0).abs() > settings.clip_ratio).count() as f64;
        let stats = [-g.scalar(surr_sum), g.scalar(kl_sum), clip_count, g.scalar(v_sum)];
        g.backward(loss)?;
        let grads = vars.iter().map(|v: &Var| g.grad(*v)).collect();
        Ok((grads, stats))
    };

    let results: Vec<Result<(Vec<Vec<f64>>, [f64; 4])>> = if workers > 1 {
        groups.par_iter().enumerate().map(run_group).collect()
    } else {
        groups.iter().enumerate().map(run_group).collect()
    };
    let mut grads: Vec<Vec<f64>> = policy.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
    let mut sums = [0.0; 4];
    for r in results {
        let (gr, st) = r?;
        for (acc, g) in grads.iter_mut().zip(gr) {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        for (s, v) in sums.iter_mut().zip(st) {
            *s += v;
        }
    }
    let stats = MinibatchStats {
        surrogate: sums[0] / total,
        kl: sums[1] / total,
        clip_fraction: sums[2] / total,
        value_loss: sums[3] / total,
        count: items.len(),
    };
    if !(stats.surrogate.is_finite() && stats.kl.is_finite() && stats.value_loss.is_finite()) {
        return Err(PopError::Numerical(format!("non-finite loss in PPO update: {stats:?}")));
    }
    Ok((grads, stats))
}

/// `(x - mean) / (sd + 1e-8)` with the population standard deviation.
pub fn standardize(values: &[f64]) -> Vec<f64> {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    values.iter().map(|v| (v - mean) / (sd + 1e-8)).collect()
}

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Adam state for the two parameter groups. The critic head trains with the
/// critic settings; everything else (encoder, actor head, log-std) with the
/// actor settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub moments: Vec<AdamMoments>,
    pub critic_group: Vec<bool>,
    pub step: u64,
    pub actor: AdamConfig,
    pub critic: AdamConfig,
}

impl OptimizerState {
    pub fn new(policy: &TransformerPolicy, config: &TrainConfig) -> Self {
        let adam = |lr, warmup| AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: config.weight_decay,
            warmup_steps: warmup,
        };
        Self {
            moments: policy.params().iter().map(|p| AdamMoments::new(p.value.len())).collect(),
            critic_group: policy.params().iter().map(|p| p.name.starts_with("critic.")).collect(),
            step: 0,
            actor: adam(config.actor_lr, config.actor_warmup),
            critic: adam(config.critic_lr, config.critic_warmup),
        }
    }

    pub fn apply(&mut self, policy: &mut TransformerPolicy, grads: &[Vec<f64>]) {
        self.step += 1;
        let params = policy.params_mut();
        for (i, g) in grads.iter().enumerate() {
            let cfg = if self.critic_group[i] { &self.critic } else { &self.actor };
            adam_update(&mut params.get_mut(i).value, g, &mut self.moments[i], self.step, cfg);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub minibatches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub epochs: Vec<EpochStats>,
    pub stopped_early: bool,
    pub kl_coef_before: f64,
    pub kl_coef_after: f64,
    pub last_grad_norm: f64,
}

impl UpdateDiagnostics {
    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }

    pub fn mean_kl(&self) -> f64 {
        self.last().map_or(0.0, |e| e.mean_kl)
    }

    pub fn clip_fraction(&self) -> f64 {
        self.last().map_or(0.0, |e| e.clip_fraction)
    }
}

/// Adaptive KL coefficient: doubled above `1.5 * target`, halved below `target / 1.5`.
pub fn adapt_kl_coef(coef: f64, kl: f64, target: f64) -> f64 {
    if kl > 1.5 * target {
        coef * 2.0
    } else if kl < target / 1.5 {
        coef / 2.0
    } else {
        coef
    }
}

/// Up to `update_epochs` passes over shuffled minibatches. After any epoch
/// whose mean KL exceeds `kl_stop`, the remaining epochs are skipped.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    policy: &mut TransformerPolicy,
    batch: &TransitionBatch,
    config: &TrainConfig,
    opt: &mut OptimizerState,
    kl_coef: &mut f64,
    rng: &mut PopRng,
    dropout_seed: Option<u64>,
    workers: usize,
) -> Result<UpdateDiagnostics> {
    if batch.is_empty() {
        return Err(PopError::Usage("PPO update on an empty batch".into()));
    }
    let kl_before = *kl_coef;
    let mut epochs = Vec::new();
    let mut stopped = false;
    let mut last_norm = 0.0;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mb = config.minibatch_size.min(batch.len());
    for epoch in 0..config.update_epochs {
        order.shuffle(rng);
        let mut acc = EpochStats { mean_kl: 0.0, clip_fraction: 0.0, surrogate: 0.0, value_loss: 0.0, minibatches: 0 };
        for (k, chunk) in order.chunks(mb).enumerate() {
            let items: Vec<&Transition> = chunk.iter().map(|&i| &batch.transitions[i]).collect();
            let raw: Vec<f64> = items.iter().map(|t| t.advantage).collect();
            let adv = if config.normalize_advantages { standardize(&raw) } else { raw };
            let settings =
                LossSettings { clip_ratio: config.clip_ratio, kl_coef: *kl_coef, value_coef: config.value_coef };
            let seed = dropout_seed.map(|s| mix(s, ((epoch as u64) << 32) | k as u64));
            let (mut grads, stats) = minibatch_gradients(policy, &items, &adv, settings, seed, workers)?;
            last_norm = clip_grad_norm(&mut grads, config.grad_clip_norm);
            if !last_norm.is_finite() {
                return Err(PopError::Numerical(format!("non-finite gradient norm in epoch {epoch}")));
            }
            opt.apply(policy, &grads);
            acc.mean_kl += stats.kl;
            acc.clip_fraction += stats.clip_fraction;
            acc.surrogate += stats.surrogate;
            acc.value_loss += stats.value_loss;
            acc.minibatches += 1;
        }
        let m = acc.minibatches as f64;
        acc.mean_kl /= m;
        acc.clip_fraction /= m;
        acc.surrogate /= m;
        acc.value_loss /= m;
        let kl = acc.mean_kl;
        epochs.push(acc);
        if kl > config.kl_stop {
            stopped = epoch + 1 < config.update_epochs;
            break;
        }
    }
    let kl = epochs.last().map_or(0.0, |e| e.mean_kl);
    *kl_coef = adapt_kl_coef(*kl_coef, kl, config.kl_target);
    Ok(UpdateDiagnostics {
        epochs,
        stopped_early: stopped,
        kl_coef_before: kl_before,
        kl_coef_after: *kl_coef,
        last_grad_norm: last_norm,
    })
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: u64,
    pub mean_episode_reward: f64,
    pub moving_average: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub epochs: usize,
    pub kl_coef: f64,
    pub value_loss: f64,
    pub failed_episodes: usize,
    pub validation_ni: Option<f64>,
}

/// Held-out prior tasks with fixed contexts.
pub struct TaskSet {
    pub tasks: Vec<(Arc<dyn Objective>, Vec<TrajectoryRecord>)>,
    pub action_seed: u64,
}

impl TaskSet {
    /// `n` prior functions and contexts derived from `seed` alone.
    pub fn from_prior(prior: &PriorConfig, n: usize, context_size: usize, seed: u64) -> Result<Self> {
        let functions = sample_tasks(prior, n, mix(seed, 1))?;
        let tasks = functions
            .into_iter()
            .enumerate()
            .map(|(i, f)| {
                let f: Arc<dyn Objective> = Arc::new(f);
                let ctx = sample_context(f.as_ref(), context_size, &mut stream(mix(seed, 2), i as u64));
                (f, ctx)
            })
            .collect();
        Ok(Self { tasks, action_seed: mix(seed, 3) })
    }

    /// Final NI per task under the deterministic policy; NaN for failed episodes.
    pub fn final_ni(&self, policy: &TransformerPolicy, env: &EnvConfig, workers: usize) -> Result<Vec<f64>> {
        let runs = run_tasks(&self.tasks, policy, env, ActionMode::Deterministic, self.action_seed, workers)?;
        runs.iter()
            .map(|(traj, status)| {
                if *status == EpisodeStatus::Failed {
                    return Ok(f64::NAN);
                }
                final_ni(&traj.context_values(), &traj.values())
            })
            .collect()
    }
}

/// Mean of the finite entries; NaN when none are finite.
pub fn finite_mean(values: &[f64]) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// Stateful training loop; each call to [`Trainer::step`] runs one iteration.
pub struct Trainer {
    config: TrainConfig,
    policy: TransformerPolicy,
    opt: OptimizerState,
    kl_coef: f64,
    return_stats: RunningStats,
    functions: Vec<Arc<dyn Objective>>,
    iteration: u64,
    shuffle_rng: PopRng,
    recent_rewards: VecDeque<f64>,
    validation: Option<TaskSet>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let policy = TransformerPolicy::new(config.policy.clone(), mix(config.seed, SALT_INIT))?;
        Self::with_policy(config, policy)
    }

    /// Start from given weights (the architecture must match the config).
    pub fn with_policy(config: TrainConfig, policy: TransformerPolicy) -> Result<Self> {
        config.validate()?;
        if policy.config() != &config.policy {
            return Err(config_err("policy architecture does not match the training config"));
        }
        let opt = OptimizerState::new(&policy, &config);
        let validation = if config.validation_every > 0 {
            Some(TaskSet::from_prior(
                &config.prior,
                config.validation_tasks,
                config.context_size,
                mix(config.seed, SALT_VALIDATION),
            )?)
        } else {
            None
        };
        Ok(Self {
            kl_coef: config.kl_coef_init,
            shuffle_rng: seeded(mix(config.seed, SALT_SHUFFLE)),
            return_stats: RunningStats::new(1),
            functions: Vec::new(),
            iteration: 0,
            recent_rewards: VecDeque::new(),
            policy,
            opt,
            validation,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn policy(&self) -> &TransformerPolicy {
        &self.policy
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn kl_coef(&self) -> f64 {
        self.kl_coef
    }

    pub fn is_done(&self) -> bool {
        self.iteration as usize >= self.config.total_iterations
    }

    fn refresh_functions(&mut self) -> Result<()> {
        let round = self.iteration / self.config.resample_every as u64;
        let b = self.config.batch_functions;
        let seed = mix(mix(self.config.seed, SALT_FUNCTIONS), round);
        self.functions =
            sample_tasks(&self.config.prior, b, seed)?.into_iter().map(|f| Arc::new(f) as Arc<dyn Objective>).collect();
        Ok(())
    }

    /// Mean final NI of the current policy on the validation tasks.
    pub fn validate(&self, workers: usize) -> Result<Option<f64>> {
        match &self.validation {
            None => Ok(None),
            Some(set) => Ok(Some(finite_mean(&set.final_ni(&self.policy, &self.config.env(), workers)?))),
        }
    }

    /// Collect, normalize, update. Errors carry the iteration index.
    pub fn step(&mut self, workers: usize) -> Result<IterationLog> {
        let it = self.iteration;
        self.step_inner(workers).map_err(|e| match e {
            PopError::Numerical(m) => PopError::Numerical(format!("iteration {it}: {m}")),
            PopError::Usage(m) => PopError::Usage(format!("iteration {it}: {m}")),
            other => other,
        })
    }

    fn step_inner(&mut self, workers: usize) -> Result<IterationLog> {
        if self.iteration % self.config.resample_every as u64 == 0 || self.functions.is_empty() {
            self.refresh_functions()?;
        }
        let env = self.config.env();
        let ctx_seed = mix(mix(self.config.seed, SALT_CONTEXTS), self.iteration);
        let mut batch = collect(&self.policy, &self.functions, &env, ctx_seed, workers)?;

        if self.config.normalize_returns {
            for range in batch.streams() {
                let first = &batch.transitions[range.start];
                if first.coord != 0 {
                    continue;
                }
                let rewards: Vec<f64> = batch.transitions[range].iter().map(|t| t.reward).collect();
                for r in discounted_returns(&rewards, self.config.gae_gamma) {
                    self.return_stats.push_scalar(r);
                }
            }
            let scale = self.return_stats.std()[0];
            for t in &mut batch.transitions {
                t.reward /= scale;
            }
        }
        compute_returns_and_advantages(&mut batch, self.config.gae_gamma, self.config.gae_lambda);

        let dropout_seed =
            self.config.policy.dropout_in_updates.then(|| mix(mix(self.config.seed, SALT_DROPOUT), self.iteration));
        let diag = ppo_update(
            &mut self.policy,
            &batch,
            &self.config,
            &mut self.opt,
            &mut self.kl_coef,
            &mut self.shuffle_rng,
            dropout_seed,
            workers,
        )?;

        let mean_reward = batch.episode_rewards.iter().sum::<f64>() / batch.episode_rewards.len() as f64;
        self.recent_rewards.push_back(mean_reward);
        if self.recent_rewards.len() > MOVING_AVERAGE_WINDOW {
            self.recent_rewards.pop_front();
        }
        let moving = self.recent_rewards.iter().sum::<f64>() / self.recent_rewards.len() as f64;
        self.iteration += 1;
        let validation_ni =
            if self.config.validation_every > 0 && self.iteration % self.config.validation_every as u64 == 0 {
                self.validate(workers)?
            } else {
                None
            };
        let last = diag.epochs.last().cloned().expect("at least one epoch");
        Ok(IterationLog {
            iteration: self.iteration,
            mean_episode_reward: mean_reward,
            moving_average: moving,
            kl: last.mean_kl,
            clip_fraction: last.clip_fraction,
            epochs: diag.epochs_run(),
            kl_coef: diag.kl_coef_after,
            value_loss: last.value_loss,
            failed_episodes: batch.failed_episodes,
            validation_ni,
        })
    }
}

/// Names of parameters in the critic group, for reporting.
pub fn critic_parameters(policy: &TransformerPolicy) -> BTreeMap<String, usize> {
    policy.params().iter().filter(|p| p.name.starts_with("critic.")).map(|p| (p.name.clone(), p.value.len())).collect()
}
