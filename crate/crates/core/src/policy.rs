//! Transformer actor-critic over per-coordinate token histories.
//!
//! Each coordinate stream is a sequence of `(x, y, grad, time)` tokens. The
//! encoder has no positional table; order reaches the model only through the
//! time feature, so any history length is accepted.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::env::{Token, TOKEN_FEATURES};
use crate::error::{config_err, PopError, Result};
use crate::rng::{seeded, PopRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub embed_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Apply dropout during PPO update passes (never during rollout).
    pub dropout_in_updates: bool,
    pub shared_dim: usize,
    pub head_hidden: usize,
    pub logstd_low: f64,
    pub logstd_high: f64,
    pub token_features: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            blocks: 4,
            heads: 4,
            ff_dim: 192,
            dropout: 0.05,
            dropout_in_updates: false,
            shared_dim: 32,
            head_hidden: 16,
            logstd_low: -3.0,
            logstd_high: 2.0,
            token_features: TOKEN_FEATURES,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(config_err(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.blocks == 0 || self.ff_dim == 0 || self.shared_dim == 0 || self.head_hidden == 0 {
            return Err(config_err("blocks, ff_dim, shared_dim and head_hidden must be positive"));
        }
        if !(self.logstd_low < self.logstd_high) {
            return Err(config_err("log-std bounds must satisfy low < high"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config_err("dropout must lie in [0, 1)"));
        }
        if self.token_features != TOKEN_FEATURES {
            return Err(config_err(format!("token_features must be {TOKEN_FEATURES}")));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

/// Policy head outputs for one coordinate stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamOutput {
    pub mu: f64,
    pub log_std: f64,
    pub value: f64,
}

/// Anything that can score a batch of coordinate streams.
pub trait StepSizePolicy: Send + Sync {
    fn evaluate_streams(&self, streams: &[Vec<Token>]) -> Result<Vec<StreamOutput>>;
}

/// Fixed Gaussian over log step sizes; ignores the history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy {
    pub mu: f64,
    pub log_std: f64,
}

impl StepSizePolicy for ConstantPolicy {
    fn evaluate_streams(&self, streams: &[Vec<Token>]) -> Result<Vec<StreamOutput>> {
        Ok(streams.iter().map(|_| StreamOutput { mu: self.mu, log_std: self.log_std, value: 0.0 }).collect())
    }
}

pub fn gaussian_log_prob(u: f64, mu: f64, log_std: f64) -> f64 {
    let z = (u - mu) / log_std.exp();
    -0.5 * z * z - log_std - 0.5 * (2.0 * PI).ln()
}

/// `(u, step_size, log_prob)`: `u ~ N(mu, sigma^2)`, step size `exp(u)`.
pub fn sample_action<R: Rng + ?Sized>(out: &StreamOutput, rng: &mut R) -> (f64, f64, f64) {
    let z: f64 = rand_distr::StandardNormal.sample(rng);
    let u = out.mu + out.log_std.exp() * z;
    (u, u.exp(), gaussian_log_prob(u, out.mu, out.log_std))
}

pub fn deterministic_action(out: &StreamOutput) -> (f64, f64, f64) {
    (out.mu, out.mu.exp(), gaussian_log_prob(out.mu, out.mu, out.log_std))
}

/// `low + (high - low) * (tanh(raw) + 1) / 2`.
pub fn squash_log_std(raw: f64, low: f64, high: f64) -> f64 {
    low + (high - low) * (raw.tanh() + 1.0) * 0.5
}

/// Graph handles produced by a forward pass over `n` streams.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[n, 1]`
    pub mu: Var,
    /// `[n, 1]`
    pub value: Var,
    /// `[1]`
    pub log_std: Var,
}

#[derive(Debug, Clone)]
pub struct TransformerPolicy {
    config: PolicyConfig,
    params: ParamStore,
    index: BTreeMap<String, usize>,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: PopRng,
}

impl Init<'_> {
    fn normal(&mut self, name: &str, shape: Vec<usize>, std: f64) {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let v: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.store.add(name, shape, v);
    }

    fn fill(&mut self, name: &str, shape: Vec<usize>, value: f64) {
        let n: usize = shape.iter().product();
        self.store.add(name, shape, vec![value; n]);
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) {
        self.normal(&format!("{name}.w"), vec![fan_in, fan_out], gain / (fan_in as f64).sqrt());
        self.fill(&format!("{name}.b"), vec![fan_out], 0.0);
    }

    fn norm(&mut self, name: &str, dim: usize) {
        self.fill(&format!("{name}.g"), vec![dim], 1.0);
        self.fill(&format!("{name}.b"), vec![dim], 0.0);
    }
}

struct Bound<'a> {
    vars: Vec<Var>,
    index: &'a BTreeMap<String, usize>,
}

impl Bound<'_> {
    fn get(&self, name: &str) -> Var {
        self.vars[*self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }
}

impl TransformerPolicy {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let e = config.embed_dim;
        {
            let mut init = Init { store: &mut store, rng: seeded(seed) };
            init.linear("embed", config.token_features, e, 1.0);
            let out_gain = 1.0 / ((2 * config.blocks) as f64).sqrt();
            for b in 0..config.blocks {
                let p = format!("block{b}");
                init.norm(&format!("{p}.ln1"), e);
                init.linear(&format!("{p}.q"), e, e, 1.0);
                init.linear(&format!("{p}.k"), e, e, 1.0);
                init.linear(&format!("{p}.v"), e, e, 1.0);
                init.linear(&format!("{p}.o"), e, e, out_gain);
                init.norm(&format!("{p}.ln2"), e);
                init.linear(&format!("{p}.ff1"), e, config.ff_dim, 1.0);
                init.linear(&format!("{p}.ff2"), config.ff_dim, e, out_gain);
            }
            init.norm("final_ln", e);
            init.linear("shared", e, config.shared_dim, 1.0);
            init.linear("actor.l1", config.shared_dim, config.head_hidden, 1.0);
            init.linear("actor.l2", config.head_hidden, 1, 0.01);
            init.linear("critic.l1", config.shared_dim, config.head_hidden, 1.0);
            init.linear("critic.l2", config.head_hidden, 1, 1.0);
            init.fill("log_std_raw", vec![1], 0.0);
        }
        Ok(Self::from_params(config, store))
    }

    pub fn from_params(config: PolicyConfig, params: ParamStore) -> Self {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Self { config, params, index }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.total_len()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Bind parameters as trainable leaves (for updates) or constants (for rollouts).
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { g.leaf_from(&p.shape, &p.value) } else { g.constant_from(&p.shape, &p.value) })
            .collect()
    }

    fn linear(&self, g: &mut Graph, b: &Bound, name: &str, x: Var) -> Var {
        let w = b.get(&format!("{name}.w"));
        let bias = b.get(&format!("{name}.b"));
        let y = g.matmul(x, w);
        g.add_row(y, bias)
    }

    fn norm(&self, g: &mut Graph, b: &Bound, name: &str, x: Var) -> Var {
        let y = g.layer_norm(x);
        let y = g.mul_row(y, b.get(&format!("{name}.g")));
        g.add_row(y, b.get(&format!("{name}.b")))
    }

    fn maybe_dropout(&self, g: &mut Graph, x: Var, rng: &mut Option<&mut PopRng>) -> Var {
        match rng {
            Some(r) if self.config.dropout > 0.0 => {
                let p = self.config.dropout;
                let keep: Vec<bool> = (0..g.value(x).len()).map(|_| r.gen::<f64>() >= p).collect();
                g.dropout(x, &keep, p)
            }
            _ => x,
        }
    }

    /// One pre-norm block. With `last_only` the output holds only the final
    /// position (the only one consumed after the last block).
    fn block(&self, g: &mut Graph, b: &Bound, i: usize, h: Var, last_only: bool, rng: &mut Option<&mut PopRng>) -> Var {
        let p = format!("block{i}");
        let shape = g.shape(h).to_vec();
        let (n, len, e) = (shape[0], shape[1], shape[2]);
        let hd = self.config.head_dim();
        let a = self.norm(g, b, &format!("{p}.ln1"), h);
        let (q_in, resid) = if last_only { (g.slice(a, 1, len - 1, 1), g.slice(h, 1, len - 1, 1)) } else { (a, h) };
        let q = self.linear(g, b, &format!("{p}.q"), q_in);
        let k = self.linear(g, b, &format!("{p}.k"), a);
        let v = self.linear(g, b, &format!("{p}.v"), a);
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        for hh in 0..self.config.heads {
            let qh = g.slice(q, 2, hh * hd, hd);
            let kh = g.slice(k, 2, hh * hd, hd);
            let vh = g.slice(v, 2, hh * hd, hd);
            let scores = g.batch_matmul(qh, kh, true);
            let scores = g.scale(scores, scale);
            let probs = g.softmax(scores);
            heads.push(g.batch_matmul(probs, vh, false));
        }
        let ctx = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 2) };
        let o = self.linear(g, b, &format!("{p}.o"), ctx);
        let o = self.maybe_dropout(g, o, rng);
        let h1 = g.add(resid, o);
        let m = self.norm(g, b, &format!("{p}.ln2"), h1);
        let f = self.linear(g, b, &format!("{p}.ff1"), m);
        let f = g.gelu(f);
        let f = self.linear(g, b, &format!("{p}.ff2"), f);
        let f = self.maybe_dropout(g, f, rng);
        let out = g.add(h1, f);
        debug_assert_eq!(g.shape(out), &[n, if last_only { 1 } else { len }, e]);
        out
    }

    /// Forward `n` equal-length streams given as a flat `[n, len, 4]` array.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        vars: &[Var],
        tokens: &[f64],
        n: usize,
        len: usize,
        mut dropout_rng: Option<&mut PopRng>,
    ) -> Result<ForwardVars> {
        if len == 0 || n == 0 {
            return Err(PopError::Usage("policy forward needs at least one token and one stream".into()));
        }
        let f = self.config.token_features;
        if tokens.len() != n * len * f {
            return Err(PopError::Usage(format!(
                "token buffer has {} values, expected {n} x {len} x {f}",
                tokens.len()
            )));
        }
        if tokens.iter().any(|t| !t.is_finite()) {
            return Err(PopError::Numerical("non-finite policy input".into()));
        }
        let b = Bound { vars: vars.to_vec(), index: &self.index };
        let x = g.constant_from(&[n, len, f], tokens);
        let mut h = self.linear(g, &b, "embed", x);
        for i in 0..self.config.blocks {
            let last = i + 1 == self.config.blocks;
            h = self.block(g, &b, i, h, last, &mut dropout_rng);
        }
        let pooled = g.reshape(h, &[n, self.config.embed_dim]);
        let pooled = self.norm(g, &b, "final_ln", pooled);
        let s = self.linear(g, &b, "shared", pooled);
        let s = g.gelu(s);
        let a = self.linear(g, &b, "actor.l1", s);
        let a = g.gelu(a);
        let mu = self.linear(g, &b, "actor.l2", a);
        let c = self.linear(g, &b, "critic.l1", s);
        let c = g.gelu(c);
        let value = self.linear(g, &b, "critic.l2", c);
        let raw = b.get("log_std_raw");
        let t = g.tanh(raw);
        let t = g.add_scalar(t, 1.0);
        let span = self.config.logstd_high - self.config.logstd_low;
        let t = g.scale(t, 0.5 * span);
        let log_std = g.add_scalar(t, self.config.logstd_low);
        Ok(ForwardVars { mu, value, log_std })
    }

    /// Forward a single stream.
    pub fn forward(&self, tokens: &[Token]) -> Result<StreamOutput> {
        Ok(self.evaluate_streams(&[tokens.to_vec()])?[0])
    }

    pub fn log_std(&self) -> f64 {
        let raw = self.params.get(self.index["log_std_raw"]).value[0];
        squash_log_std(raw, self.config.logstd_low, self.config.logstd_high)
    }
}

/// Group stream indices by sequence length (ascending).
pub fn group_by_length(lengths: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in lengths.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups
}

pub fn flatten_tokens<'a>(streams: impl Iterator<Item = &'a [Token]>) -> Vec<f64> {
    streams.flat_map(|s| s.iter().flat_map(|t| t.iter().copied())).collect()
}

impl StepSizePolicy for TransformerPolicy {
    fn evaluate_streams(&self, streams: &[Vec<Token>]) -> Result<Vec<StreamOutput>> {
        let lengths: Vec<usize> = streams.iter().map(|s| s.len()).collect();
        if lengths.iter().any(|&l| l == 0) {
            return Err(PopError::Usage("empty token sequence".into()));
        }
        let mut out = vec![StreamOutput { mu: 0.0, log_std: 0.0, value: 0.0 }; streams.len()];
        for (len, idx) in group_by_length(&lengths) {
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let flat = flatten_tokens(idx.iter().map(|&i| streams[i].as_slice()));
            let fv = self.forward_graph(&mut g, &vars, &flat, idx.len(), len, None)?;
            let log_std = g.scalar(fv.log_std);
            for (j, &i) in idx.iter().enumerate() {
                out[i] = StreamOutput { mu: g.value(fv.mu)[j], log_std, value: g.value(fv.value)[j] };
            }
        }
        Ok(out)
    }
}
