use pop_core::baselines::{run_baseline, BaselineConfig, Method};
use pop_core::bench::get;
use pop_core::env::sample_context;
use pop_core::metrics::{
    aggregate, best_so_far, mean_ci, normalized_improvement, normalized_regret, rank_curves, rank_with_ties, NI_EPS,
};
use pop_core::objective::Objective;
use pop_core::rng::seeded;
use rand::Rng;

pub fn ni_examples() {
    assert_eq!(normalized_improvement(&[0.0, 10.0], &[0.0], NI_EPS).unwrap(), vec![0.0]);
    let ni = normalized_improvement(&[0.0, 10.0], &[5.0, -5.0], NI_EPS).unwrap();
    assert_eq!(ni[0], 0.0);
    assert!((ni[1] - 0.5).abs() < 1e-8);
    let flat = normalized_improvement(&[2.0, 2.0], &[1.0], NI_EPS).unwrap();
    assert!(flat[0].is_finite());
    assert!((flat[0] - 1.0 / NI_EPS).abs() < 1.0);
}

pub fn regret_examples() {
    let r = normalized_regret(&[-1.0, 3.0, 1.0, 9.0], -1.0, 3.0).unwrap();
    assert_eq!(r, vec![0.0, 1.0, 0.5, 1.0]);
    assert!(normalized_regret(&[0.0], 1.0, 1.0).is_err());
}

pub fn aggregate_examples() {
    let same = aggregate(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]], 0.95).unwrap();
    for (m, ci) in same.mean.iter().zip(&same.ci) {
        let ci = ci.unwrap();
        assert_eq!(ci.low, *m);
        assert_eq!(ci.high, *m);
    }
    let (mean, ci) = mean_ci(&[0.0, 1.0], 0.95);
    assert_eq!(mean, 0.5);
    // t_{0.975, 1} = 12.7062..., sd = sqrt(0.5)
    let half = 12.706_204_736_174_7 * 0.5f64.sqrt() / 2f64.sqrt();
    assert!((ci.unwrap().high - 0.5 - half).abs() < 1e-6);
    assert!(mean_ci(&[3.0], 0.95).1.is_none());
}

pub fn rank_examples() {
    let c = rank_curves(&[vec![vec![0.0, 0.0]], vec![vec![1.0, 1.0]]]).unwrap();
    assert_eq!(c.mean, vec![vec![1.0, 1.0], vec![2.0, 2.0]]);
    assert_eq!(rank_with_ties(&[4.0, 4.0]), vec![1.5, 1.5]);
    assert!(rank_curves(&[vec![vec![0.0]], vec![vec![0.0], vec![1.0]]]).is_err());
}

/// Properties on real baseline trajectories over benchmark functions.
pub fn monotone_curves_and_rank_sums_on_recorded_runs() {
    let names = ["rosenbrock", "ackley", "branin", "hartmann3", "sphere"];
    let methods = Method::ALL;
    let mut per_method: Vec<Vec<Vec<f64>>> = vec![Vec::new(); methods.len()];
    let mut rng = seeded(42);
    for name in names {
        let f = get(name).unwrap();
        for rep in 0..4 {
            let ctx = sample_context(f, 10, &mut seeded(rng.gen()));
            for (k, m) in methods.iter().enumerate() {
                let cfg = BaselineConfig::new(*m, 30).with_lr(0.1);
                let run = run_baseline(f as &dyn Objective, &ctx, &cfg, &mut seeded(rep)).unwrap();
                let best = best_so_far(&run.trajectory.values());
                let ni = normalized_improvement(&run.trajectory.context_values(), &best, NI_EPS).unwrap();
                assert!(ni.windows(2).all(|w| w[1] >= w[0]), "{name} {m}");
                let regret = normalized_regret(&best, f.y_min, f.y_max).unwrap();
                assert!(regret.windows(2).all(|w| w[1] <= w[0]), "{name} {m}");
                assert!(regret.iter().all(|r| (0.0..=1.0).contains(r)));
                per_method[k].push(best);
            }
        }
    }
    let m = methods.len() as f64;
    let steps = per_method[0][0].len();
    for task in 0..per_method[0].len() {
        for t in 0..steps {
            let column: Vec<f64> = per_method.iter().map(|s| s[task][t]).collect();
            let sum: f64 = rank_with_ties(&column).iter().sum();
            assert_eq!(sum, m * (m + 1.0) / 2.0);
        }
    }
    let curves = rank_curves(&per_method).unwrap();
    for t in 0..steps {
        let total: f64 = curves.mean.iter().map(|c| c[t]).sum();
        assert!((total - m * (m + 1.0) / 2.0).abs() < 1e-9);
        assert!(curves.mean.iter().all(|c| (1.0..=m).contains(&c[t])));
    }
}
