//! Online mean/variance (Welford) with a floored standard deviation.

use serde::{Deserialize, Serialize};

use crate::error::{PopError, Result};

/// Default lower bound on reported standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// Running statistics over a fixed-width vector stream.
///
/// Variance is the population variance `M2 / count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    sigma_floor: f64,
}

impl RunningStats {
    pub fn new(width: usize) -> Self {
        Self::with_floor(width, SIGMA_FLOOR)
    }

    pub fn with_floor(width: usize, sigma_floor: f64) -> Self {
        Self { count: 0, mean: vec![0.0; width], m2: vec![0.0; width], sigma_floor }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sigma_floor(&self) -> f64 {
        self.sigma_floor
    }

    pub fn push(&mut self, sample: &[f64]) {
        assert_eq!(sample.len(), self.mean.len(), "sample width");
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let delta = v - *mean;
            *mean += delta / n;
            *m2 += delta * (v - *mean);
        }
    }

    pub fn push_scalar(&mut self, v: f64) {
        self.push(std::slice::from_ref(&v));
    }

    /// Chan et al. parallel merge; `self` absorbs `other`.
    pub fn merge(&mut self, other: &RunningStats) {
        assert_eq!(self.width(), other.width(), "merge width");
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            self.count = other.count;
            self.mean.clone_from(&other.mean);
            self.m2.clone_from(&other.m2);
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.width()];
        }
        let n = self.count as f64;
        self.m2.iter().map(|m| (m / n).max(0.0)).collect()
    }

    /// `max(sqrt(variance), sigma_floor)` per component.
    pub fn std(&self) -> Vec<f64> {
        self.variance().into_iter().map(|v| v.sqrt().max(self.sigma_floor)).collect()
    }

    /// Z-score of `value` in component `i`.
    pub fn standardize(&self, i: usize, value: f64) -> Result<f64> {
        if self.count == 0 {
            return Err(PopError::Usage("z-transform requested before any observation".into()));
        }
        let var = (self.m2[i] / self.count as f64).max(0.0);
        Ok((value - self.mean[i]) / var.sqrt().max(self.sigma_floor))
    }
}
