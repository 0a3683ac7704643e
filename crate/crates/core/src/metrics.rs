//! Normalized improvement, normalized regret, confidence intervals and
//! average-rank curves.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{PopError, Result};

pub const NI_EPS: f64 = 1e-8;

/// Improvement of the best-so-far value over the context minimum, divided by
/// the context range. The normalizer is fixed by the context; the result is
/// clamped below at 0. Non-finite best values map to NaN (undefined).
pub fn normalized_improvement(context: &[f64], best_so_far: &[f64], eps: f64) -> Result<Vec<f64>> {
    if context.is_empty() {
        return Err(PopError::Usage("normalized improvement needs a non-empty context".into()));
    }
    let lo = context.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = context.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom = hi - lo + eps;
    Ok(best_so_far.iter().map(|b| if b.is_finite() { ((lo - b) / denom).max(0.0) } else { f64::NAN }).collect())
}

/// NI after the final step of a recorded trajectory.
pub fn final_ni(context: &[f64], values: &[f64]) -> Result<f64> {
    let best = values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(normalized_improvement(context, &[best], NI_EPS)?[0])
}

/// Running minimum.
pub fn best_so_far(values: &[f64]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    values
        .iter()
        .map(|v| {
            if *v < best {
                best = *v;
            }
            best
        })
        .collect()
}

/// `(best - y_min) / (y_max - y_min)`, clamped to [0, 1].
pub fn normalized_regret(best_so_far: &[f64], y_min: f64, y_max: f64) -> Result<Vec<f64>> {
    if !(y_min.is_finite() && y_max.is_finite() && y_max > y_min) {
        return Err(PopError::Usage(format!("degenerate regret normalizer: y_min {y_min}, y_max {y_max}")));
    }
    let range = y_max - y_min;
    Ok(best_so_far.iter().map(|b| if b.is_nan() { f64::NAN } else { ((b - y_min) / range).clamp(0.0, 1.0) }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

/// Sample mean with a Student-t interval; `None` for fewer than two values.
pub fn mean_ci(values: &[f64], confidence: f64) -> (f64, Option<Interval>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let t =
        StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("degrees of freedom >= 1").inverse_cdf(0.5 + confidence / 2.0);
    let half = t * se;
    (mean, Some(Interval { low: mean - half, high: mean + half }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Vec<f64>,
    pub ci: Vec<Option<Interval>>,
}

/// Per-step mean and interval over tasks; all series must share a length.
pub fn aggregate(series: &[Vec<f64>], confidence: f64) -> Result<Aggregate> {
    let Some(first) = series.first() else {
        return Err(PopError::Usage("aggregate over zero tasks".into()));
    };
    let steps = first.len();
    if series.iter().any(|s| s.len() != steps) {
        return Err(PopError::Usage("aggregate over series of different lengths".into()));
    }
    let mut mean = Vec::with_capacity(steps);
    let mut ci = Vec::with_capacity(steps);
    let mut column = Vec::with_capacity(series.len());
    for t in 0..steps {
        column.clear();
        column.extend(series.iter().map(|s| s[t]));
        let (m, c) = mean_ci(&column, confidence);
        mean.push(m);
        ci.push(c);
    }
    Ok(Aggregate { mean, ci })
}

/// Ranks with ties sharing the mean of their positions; NaN ranks last.
pub fn rank_with_ties(values: &[f64]) -> Vec<f64> {
    let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| key(values[a]).total_cmp(&key(values[b])));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && key(values[order[j + 1]]) == key(values[order[i]]) {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCurves {
    /// `[method][step]`
    pub mean: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
}

/// Average rank per method and step. Input is `[method][task][step]` of
/// best-so-far values (lower is better).
pub fn rank_curves(per_method: &[Vec<Vec<f64>>]) -> Result<RankCurves> {
    let m = per_method.len();
    if m == 0 {
        return Err(PopError::Usage("rank curves need at least one method".into()));
    }
    let tasks = per_method[0].len();
    if tasks == 0 {
        return Err(PopError::Usage("rank curves need at least one task".into()));
    }
    let steps = per_method[0][0].len();
    for (k, method) in per_method.iter().enumerate() {
        if method.len() != tasks || method.iter().any(|s| s.len() != steps) {
            return Err(PopError::Usage(format!("method {k} was evaluated on a different task set or budget")));
        }
    }
    let mut sums = vec![vec![0.0; steps]; m];
    let mut sq = vec![vec![0.0; steps]; m];
    let mut column = vec![0.0; m];
    for task in 0..tasks {
        for t in 0..steps {
            for (k, method) in per_method.iter().enumerate() {
                column[k] = method[task][t];
            }
            for (k, r) in rank_with_ties(&column).into_iter().enumerate() {
                sums[k][t] += r;
                sq[k][t] += r * r;
            }
        }
    }
    let n = tasks as f64;
    let mean: Vec<Vec<f64>> = sums.iter().map(|s| s.iter().map(|v| v / n).collect()).collect();
    let stderr = mean
        .iter()
        .zip(&sq)
        .map(|(mu, s2)| {
            mu.iter()
                .zip(s2)
                .map(|(mu, s2)| {
                    if tasks < 2 {
                        0.0
                    } else {
                        let var = ((s2 - n * mu * mu) / (n - 1.0)).max(0.0);
                        (var / n).sqrt()
                    }
                })
                .collect()
        })
        .collect();
    Ok(RankCurves { mean, stderr })
}
