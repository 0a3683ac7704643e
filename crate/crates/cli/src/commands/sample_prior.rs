use pop_core::prior::{sample_tasks, FunctionRecord, PriorConfig};
use pop_core::{PopError, Result};

use super::{Context, Settings};
use crate::kv::{self, Pairs};
use crate::output::f;

#[derive(Debug, Clone)]
pub struct SamplePriorSettings {
    pub n: usize,
    pub resolution: usize,
    pub dimension: usize,
    pub features: usize,
    pub p_convex: f64,
    pub seed: u64,
}

impl Settings for SamplePriorSettings {
    fn defaults() -> Self {
        let prior = PriorConfig::standard(2);
        Self { n: 12, resolution: 128, dimension: 2, features: prior.feature_count, p_convex: prior.p_convex, seed: 0 }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n" => self.n = kv::num(key, value)?,
            "resolution" => self.resolution = kv::num(key, value)?,
            "dimension" => self.dimension = kv::num(key, value)?,
            "features" => self.features = kv::num(key, value)?,
            "p_convex" => self.p_convex = kv::num(key, value)?,
            "seed" => self.seed = kv::num(key, value)?,
            _ => return Err(PopError::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    fn pairs(&self) -> Pairs {
        vec![
            ("n".into(), self.n.to_string()),
            ("resolution".into(), self.resolution.to_string()),
            ("dimension".into(), self.dimension.to_string()),
            ("features".into(), self.features.to_string()),
            ("p_convex".into(), self.p_convex.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn validate(&self) -> Result<()> {
        if self.dimension != 2 {
            return Err(PopError::Config(format!(
                "key 'dimension': surfaces are exported for D = 2 only, got {}",
                self.dimension
            )));
        }
        if self.resolution < 2 {
            return Err(PopError::Config("key 'resolution' must be >= 2".into()));
        }
        Ok(())
    }
}

pub fn run(s: &SamplePriorSettings, ctx: &mut Context) -> Result<()> {
    let mut prior = PriorConfig::standard(2);
    prior.feature_count = s.features;
    prior.p_convex = s.p_convex;
    let functions = sample_tasks(&prior, s.n, s.seed)?;
    let r = s.resolution;
    let axis = |d: usize, i: usize| {
        let (lo, hi) = (prior.domain.lower[d], prior.domain.upper[d]);
        lo + (hi - lo) * i as f64 / (r - 1) as f64
    };
    for (k, func) in functions.into_iter().enumerate() {
        let mut rows = Vec::with_capacity(r * r);
        for i in 0..r {
            for j in 0..r {
                let x = [axis(0, i), axis(1, j)];
                rows.push(vec![f(x[0]), f(x[1]), f(func.evaluate(&x))]);
            }
        }
        ctx.out.write_csv(&format!("surfaces/surface_{k:03}.csv"), "pop-prior-surface", &["x1", "x2", "y"], &rows)?;
        let path = ctx.out.path(&format!("functions/function_{k:03}.json"));
        std::fs::create_dir_all(path.parent().expect("has parent"))?;
        FunctionRecord::new(func, Some(prior.clone()), Some(s.seed)).save(&path)?;
        ctx.out.register(&path);
    }
    Ok(())
}
