//! Coordinate and value normalization for the policy's view of a trajectory.
//!
//! Raw points are boundary-scaled to `[-V, V]` (coordinates via the fixed
//! domain box, values via running extrema) and then z-scored with running
//! statistics. Gradients are mapped through the Jacobian of the composed map.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, PopError, Result};
use crate::objective::DomainBox;
use crate::stats::{RunningStats, SIGMA_FLOOR};

/// Target half-width for both coordinates and values.
pub const DEFAULT_TARGET_SCALE: f64 = 3.0;

/// One raw trajectory entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub x: Vec<f64>,
    pub y: f64,
    pub grad: Vec<f64>,
    pub time_frac: f64,
}

/// The same entry under the current statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedRecord {
    pub x: Vec<f64>,
    pub y: f64,
    pub grad: Vec<f64>,
    pub time_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformState {
    lower: Vec<f64>,
    upper: Vec<f64>,
    scale_x: f64,
    scale_y: f64,
    /// Running `(min, max)` of observed values; `None` before the first observation.
    y_range: Option<(f64, f64)>,
    /// Statistics of boundary-scaled coordinates (the coordinate map is fixed).
    x_stats: RunningStats,
    /// Statistics of raw values. Boundary-scaled value statistics are derived
    /// from these under the current extrema, which is exactly what recomputing
    /// them over the re-scaled history would give.
    y_raw_stats: RunningStats,
    sigma_floor: f64,
}

impl TransformState {
    pub fn new(domain: &DomainBox, scale_x: f64, scale_y: f64) -> Result<Self> {
        domain.validate()?;
        if !(scale_x > 0.0 && scale_y > 0.0 && scale_x.is_finite() && scale_y.is_finite()) {
            return Err(config_err("target scales must be positive and finite"));
        }
        Ok(Self {
            lower: domain.lower.clone(),
            upper: domain.upper.clone(),
            scale_x,
            scale_y,
            y_range: None,
            x_stats: RunningStats::with_floor(domain.dim(), SIGMA_FLOOR),
            y_raw_stats: RunningStats::with_floor(1, SIGMA_FLOOR),
            sigma_floor: SIGMA_FLOOR,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn count(&self) -> u64 {
        self.x_stats.count()
    }

    pub fn y_range(&self) -> Option<(f64, f64)> {
        self.y_range
    }

    pub fn scales(&self) -> (f64, f64) {
        (self.scale_x, self.scale_y)
    }

    pub fn x_stats(&self) -> &RunningStats {
        &self.x_stats
    }

    pub fn boundary_scale_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| self.scale_x * (2.0 * (v - lo) / (hi - lo) - 1.0))
            .collect()
    }

    fn unscale_x(&self, bnd: &[f64]) -> Vec<f64> {
        bnd.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(b, (lo, hi))| lo + (b / self.scale_x + 1.0) * 0.5 * (hi - lo))
            .collect()
    }

    /// Value scaling under the current extrema; a flat range maps to 0.
    pub fn boundary_scale_y(&self, y: f64) -> f64 {
        match self.y_range {
            Some((lo, hi)) if hi > lo => self.scale_y * (2.0 * (y - lo) / (hi - lo) - 1.0),
            _ => 0.0,
        }
    }

    /// Mean and floored standard deviation of the boundary-scaled values.
    pub fn y_stats(&self) -> Result<(f64, f64)> {
        if self.y_raw_stats.count() == 0 {
            return Err(PopError::Usage("value statistics requested before any observation".into()));
        }
        match self.y_range {
            Some((lo, hi)) if hi > lo => {
                let a = 2.0 * self.scale_y / (hi - lo);
                let mean = a * (self.y_raw_stats.mean()[0] - lo) - self.scale_y;
                let sd = a * self.y_raw_stats.variance()[0].sqrt();
                Ok((mean, sd.max(self.sigma_floor)))
            }
            _ => Ok((0.0, self.sigma_floor)),
        }
    }

    /// Widen extrema and update the running statistics.
    pub fn observe(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(PopError::Usage(format!("observation has {} coordinates, state has {}", x.len(), self.dim())));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(PopError::Numerical("non-finite observation".into()));
        }
        self.y_range = Some(match self.y_range {
            None => (y, y),
            Some((lo, hi)) => (lo.min(y), hi.max(y)),
        });
        let bnd = self.boundary_scale_x(x);
        self.x_stats.push(&bnd);
        self.y_raw_stats.push_scalar(y);
        Ok(())
    }

    pub fn forward_x(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.boundary_scale_x(x).iter().enumerate().map(|(d, b)| self.x_stats.standardize(d, *b)).collect()
    }

    pub fn forward_y(&self, y: f64) -> Result<f64> {
        let (mean, sd) = self.y_stats()?;
        Ok(z_transform(self.boundary_scale_y(y), mean, sd))
    }

    /// Gradient of the transformed value with respect to the transformed
    /// coordinates, given the raw gradient.
    pub fn scale_gradient(&self, g: &[f64]) -> Result<Vec<f64>> {
        let (_, sy) = self.y_stats()?;
        let span_y = match self.y_range {
            Some((lo, hi)) => (hi - lo).max(self.sigma_floor),
            None => unreachable!("y_stats succeeded"),
        };
        let sx = self.x_stats.std();
        let ratio = self.scale_y / self.scale_x;
        Ok(g.iter()
            .enumerate()
            .map(|(d, gd)| (sx[d] / sy) * ratio * ((self.upper[d] - self.lower[d]) / span_y) * gd)
            .collect())
    }

    /// Exact inverse of [`Self::forward_x`] under the current statistics.
    pub fn inverse_x(&self, xt: &[f64]) -> Result<Vec<f64>> {
        if self.x_stats.count() == 0 {
            return Err(PopError::Usage("inverse transform before any observation".into()));
        }
        let sd = self.x_stats.std();
        let mean = self.x_stats.mean();
        let bnd: Vec<f64> = xt.iter().enumerate().map(|(d, z)| z * sd[d] + mean[d]).collect();
        Ok(self.unscale_x(&bnd))
    }

    pub fn transform_record(&self, rec: &TrajectoryRecord) -> Result<TransformedRecord> {
        Ok(TransformedRecord {
            x: self.forward_x(&rec.x)?,
            y: self.forward_y(rec.y)?,
            grad: self.scale_gradient(&rec.grad)?,
            time_frac: rec.time_frac,
        })
    }

    /// Recompute the transformed view of every record under the current statistics.
    pub fn retransform(&self, records: &[TrajectoryRecord]) -> Result<Vec<TransformedRecord>> {
        records.iter().map(|r| self.transform_record(r)).collect()
    }
}

pub fn z_transform(value: f64, mean: f64, sd: f64) -> f64 {
    (value - mean) / sd
}
