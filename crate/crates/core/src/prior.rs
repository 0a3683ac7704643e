//! The function prior: a separable quadratic mixed with a random-Fourier-feature
//! approximation of an RBF Gaussian-process sample.
//!
//! `f(x) = a * sum_d c_d (x_d - m_d)^2 + (1 - a) * sqrt(2) * sum_k w_k cos(<v_k, x> + p_k)`

use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, PopError, Result};
use crate::objective::{DomainBox, Objective};

pub const FUNCTION_RECORD_VERSION: u32 = 1;

/// Closed interval for a uniform draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformRange {
    pub low: f64,
    pub high: f64,
}

impl UniformRange {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { low: v, high: v }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.low == self.high {
            // still consume a draw so the stream layout does not depend on the range
            let _: f64 = rng.gen();
            self.low
        } else {
            self.low + (self.high - self.low) * rng.gen::<f64>()
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.low.is_finite() && self.high.is_finite() && self.low <= self.high) {
            return Err(config_err(format!("{name}: range low {} must be <= high {}", self.low, self.high)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub dimension: usize,
    pub feature_count: usize,
    pub curvature: UniformRange,
    pub center: UniformRange,
    pub alpha: UniformRange,
    pub lengthscale: UniformRange,
    pub output_scale: UniformRange,
    pub p_convex: f64,
    pub domain: DomainBox,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self::standard(2)
    }
}

impl PriorConfig {
    /// Reference ranges with a `[-50, 50]^D` domain; `feature_count` follows
    /// [`scaled_feature_count`] from a 1000-feature 2D base.
    pub fn standard(dimension: usize) -> Self {
        Self {
            dimension,
            feature_count: scaled_feature_count(1000, dimension),
            curvature: UniformRange::new(1e-8, 1e-2),
            center: UniformRange::new(-50.0, 50.0),
            alpha: UniformRange::new(0.05, 0.4),
            lengthscale: UniformRange::new(4.0, 8.0),
            output_scale: UniformRange::new(0.5, 3.0),
            p_convex: 0.15,
            domain: DomainBox::uniform(dimension, -50.0, 50.0),
        }
    }

    /// Same ranges at another dimensionality, features rescaled from this
    /// config's 2D base.
    pub fn with_dimension(&self, dimension: usize) -> Self {
        let base = if self.dimension <= 2 { self.feature_count } else { self.feature_count / self.dimension };
        let lo = self.domain.lower[0];
        let hi = self.domain.upper[0];
        Self {
            dimension,
            feature_count: scaled_feature_count(base, dimension),
            domain: DomainBox::uniform(dimension, lo, hi),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(config_err("dimension must be >= 1"));
        }
        if self.feature_count == 0 {
            return Err(config_err("feature_count must be >= 1"));
        }
        self.curvature.check("curvature")?;
        self.center.check("center")?;
        self.alpha.check("alpha")?;
        self.lengthscale.check("lengthscale")?;
        self.output_scale.check("output_scale")?;
        if self.curvature.low <= 0.0 {
            return Err(config_err("curvature low must be > 0"));
        }
        if self.alpha.low < 0.0 || self.alpha.high > 1.0 {
            return Err(config_err("alpha range must lie in [0, 1]"));
        }
        if self.lengthscale.low <= 0.0 {
            return Err(config_err("lengthscale low must be > 0"));
        }
        if self.output_scale.low < 0.0 {
            return Err(config_err("output_scale low must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.p_convex) {
            return Err(config_err("p_convex must lie in [0, 1]"));
        }
        self.domain.validate()?;
        if self.domain.dim() != self.dimension {
            return Err(config_err(format!(
                "domain box has {} dimensions, prior has {}",
                self.domain.dim(),
                self.dimension
            )));
        }
        Ok(())
    }
}

/// Feature count keeping smoothness comparable across dimensions: the 2D
/// base for `D <= 2`, `base * D` above (1000 -> 8000/16000/32000 at 8/16/32).
pub fn scaled_feature_count(base: usize, dimension: usize) -> usize {
    if dimension <= 2 {
        base
    } else {
        base * dimension
    }
}

/// One draw from the prior. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledFunction {
    pub alpha: f64,
    pub lengthscale: f64,
    pub output_scale: f64,
    pub quad_curvature: Vec<f64>,
    pub quad_center: Vec<f64>,
    pub rff_weights: Vec<f64>,
    /// Row-major `M x D`.
    pub rff_frequencies: Vec<f64>,
    pub rff_phases: Vec<f64>,
    pub domain: DomainBox,
}

/// `n` functions; function `i` is drawn from `stream(seed, i)`.
pub fn sample_tasks(config: &PriorConfig, n: usize, seed: u64) -> Result<Vec<SampledFunction>> {
    (0..n).map(|i| sample_function(config, &mut crate::rng::stream(seed, i as u64))).collect()
}

pub fn sample_function<R: Rng + ?Sized>(config: &PriorConfig, rng: &mut R) -> Result<SampledFunction> {
    config.validate()?;
    let d = config.dimension;
    let m = config.feature_count;

    let convex = rng.gen::<f64>() < config.p_convex;
    let alpha_draw = config.alpha.sample(rng);
    let alpha = if convex { 1.0 } else { alpha_draw };
    let lengthscale = config.lengthscale.sample(rng);
    let output_scale = config.output_scale.sample(rng);

    let quad_curvature: Vec<f64> = (0..d).map(|_| config.curvature.sample(rng)).collect();
    let quad_center: Vec<f64> = (0..d).map(|_| config.center.sample(rng)).collect();

    let weight_dist = Normal::new(0.0, output_scale / (m as f64).sqrt())
        .map_err(|e| config_err(format!("weight distribution: {e}")))?;
    let freq_dist =
        Normal::new(0.0, 1.0 / lengthscale).map_err(|e| config_err(format!("frequency distribution: {e}")))?;
    let rff_weights: Vec<f64> = (0..m).map(|_| weight_dist.sample(rng)).collect();
    let rff_frequencies: Vec<f64> = (0..m * d).map(|_| freq_dist.sample(rng)).collect();
    let rff_phases: Vec<f64> = (0..m)
        .map(|_| {
            let p = 2.0 * PI * rng.gen::<f64>();
            if p >= 2.0 * PI {
                0.0
            } else {
                p
            }
        })
        .collect();

    Ok(SampledFunction {
        alpha,
        lengthscale,
        output_scale,
        quad_curvature,
        quad_center,
        rff_weights,
        rff_frequencies,
        rff_phases,
        domain: config.domain.clone(),
    })
}

impl SampledFunction {
    pub fn dim(&self) -> usize {
        self.quad_center.len()
    }

    pub fn feature_count(&self) -> usize {
        self.rff_weights.len()
    }

    fn feature_arg(&self, k: usize, x: &[f64]) -> f64 {
        let d = self.dim();
        let row = &self.rff_frequencies[k * d..(k + 1) * d];
        row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.rff_phases[k]
    }

    pub fn quadratic_value(&self, x: &[f64]) -> f64 {
        self.quad_curvature.iter().zip(&self.quad_center).zip(x).map(|((c, m), v)| c * (v - m) * (v - m)).sum()
    }

    pub fn quadratic_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.quad_curvature.iter().zip(&self.quad_center).zip(x).map(|((c, m), v)| 2.0 * c * (v - m)).collect()
    }

    pub fn rff_value(&self, x: &[f64]) -> f64 {
        let s: f64 = (0..self.feature_count()).map(|k| self.rff_weights[k] * self.feature_arg(k, x).cos()).sum();
        SQRT_2 * s
    }

    pub fn rff_gradient(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut g = vec![0.0; d];
        for k in 0..self.feature_count() {
            let coef = -SQRT_2 * self.rff_weights[k] * self.feature_arg(k, x).sin();
            let row = &self.rff_frequencies[k * d..(k + 1) * d];
            for (gi, f) in g.iter_mut().zip(row) {
                *gi += coef * f;
            }
        }
        g
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut v = 0.0;
        if self.alpha != 0.0 {
            v += self.alpha * self.quadratic_value(x);
        }
        if self.alpha != 1.0 {
            v += (1.0 - self.alpha) * self.rff_value(x);
        }
        v
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.evaluate_with_gradient(x).1
    }

    /// Value and gradient sharing one pass over the features.
    pub fn evaluate_with_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim();
        let a = self.alpha;
        let mut value = 0.0;
        let mut grad = vec![0.0; d];
        if a != 0.0 {
            value += a * self.quadratic_value(x);
            for (g, q) in grad.iter_mut().zip(self.quadratic_gradient(x)) {
                *g += a * q;
            }
        }
        if a != 1.0 {
            let mut s = 0.0;
            let mut rg = vec![0.0; d];
            for k in 0..self.feature_count() {
                let (sin, cos) = self.feature_arg(k, x).sin_cos();
                s += self.rff_weights[k] * cos;
                let coef = -self.rff_weights[k] * sin;
                let row = &self.rff_frequencies[k * d..(k + 1) * d];
                for (gi, f) in rg.iter_mut().zip(row) {
                    *gi += coef * f;
                }
            }
            value += (1.0 - a) * SQRT_2 * s;
            for (g, r) in grad.iter_mut().zip(rg) {
                *g += (1.0 - a) * SQRT_2 * r;
            }
        }
        (value, grad)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let m = self.feature_count();
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if self.quad_curvature.len() != d
            || self.rff_frequencies.len() != m * d
            || self.rff_phases.len() != m
            || self.domain.dim() != d
        {
            return Err(PopError::Artifact("sampled function arrays have inconsistent lengths".into()));
        }
        if !(self.alpha.is_finite()
            && finite(&self.quad_curvature)
            && finite(&self.quad_center)
            && finite(&self.rff_weights)
            && finite(&self.rff_frequencies)
            && finite(&self.rff_phases))
        {
            return Err(PopError::Numerical("sampled function has non-finite parameters".into()));
        }
        if self.quad_curvature.iter().any(|c| *c <= 0.0) {
            return Err(PopError::Artifact("curvature must be strictly positive".into()));
        }
        if self.rff_phases.iter().any(|p| !(0.0..2.0 * PI).contains(p)) {
            return Err(PopError::Artifact("phase outside [0, 2pi)".into()));
        }
        Ok(())
    }
}

impl Objective for SampledFunction {
    fn dimension(&self) -> usize {
        self.dim()
    }
    fn domain(&self) -> &DomainBox {
        &self.domain
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.evaluate_with_gradient(x).1
    }
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.evaluate_with_gradient(x)
    }
}

/// Versioned JSON record for fixtures and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub version: u32,
    pub seed: Option<u64>,
    pub config: Option<PriorConfig>,
    pub function: SampledFunction,
}

impl FunctionRecord {
    pub fn new(function: SampledFunction, config: Option<PriorConfig>, seed: Option<u64>) -> Self {
        Self { version: FUNCTION_RECORD_VERSION, seed, config, function }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rec: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if rec.version != FUNCTION_RECORD_VERSION {
            return Err(PopError::Artifact(format!(
                "function record version {} (expected {FUNCTION_RECORD_VERSION})",
                rec.version
            )));
        }
        rec.function.validate()?;
        Ok(rec)
    }
}
