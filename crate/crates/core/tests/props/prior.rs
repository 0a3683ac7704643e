use pop_core::prior::{sample_function, sample_tasks, PriorConfig, UniformRange};
use pop_core::rng::{seeded, stream};
use rand::Rng;

/// Var f_RFF(x) over prior draws equals sigma^2 at every x.
pub fn rff_variance_matches_output_scale() {
    for (k, sigma) in [0.5, 1.5, 3.0].into_iter().enumerate() {
        let mut cfg = PriorConfig::standard(2);
        cfg.feature_count = 1000;
        cfg.output_scale = UniformRange::fixed(sigma);
        let functions = 1000;
        let per_function = 100;
        let mut sum_sq = 0.0;
        let mut sum = 0.0;
        for i in 0..functions {
            let f = sample_function(&cfg, &mut stream(10 + k as u64, i)).unwrap();
            let mut rng = stream(20 + k as u64, i);
            for _ in 0..per_function {
                let x = cfg.domain.sample(&mut rng);
                let v = f.rff_value(&x);
                sum += v;
                sum_sq += v * v;
            }
        }
        let n = (functions * per_function as u64) as f64;
        let mean = sum / n;
        let var = sum_sq / n - mean * mean;
        let target = sigma * sigma;
        assert!((var - target).abs() / target < 0.05, "sigma {sigma}: variance {var}, expected {target}");
    }
}

pub fn convex_draws_satisfy_jensen() {
    let mut cfg = PriorConfig::standard(2);
    cfg.p_convex = 1.0;
    cfg.feature_count = 64;
    let functions = sample_tasks(&cfg, 20, 5).unwrap();
    let mut rng = seeded(6);
    for f in &functions {
        assert_eq!(f.alpha, 1.0);
        for _ in 0..1000 {
            let a = cfg.domain.sample(&mut rng);
            let b = cfg.domain.sample(&mut rng);
            let t: f64 = rng.gen();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
            let lhs = f.evaluate(&mid);
            let rhs = t * f.evaluate(&a) + (1.0 - t) * f.evaluate(&b);
            assert!(lhs <= rhs + 1e-12 * rhs.abs().max(1.0), "{lhs} > {rhs}");
        }
    }
}

pub fn draws_are_reproducible_per_stream() {
    let cfg = PriorConfig::standard(3);
    let a = sample_tasks(&cfg, 4, 9).unwrap();
    let b = sample_tasks(&cfg, 4, 9).unwrap();
    assert_eq!(a, b);
    assert_ne!(a[0], a[1]);
}
