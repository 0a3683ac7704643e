use pop_core::baselines::{
    adam_run, de_run, ga_run, gd_run, lbfgs_run, random_search_run, run_baseline, Accounting, BaselineConfig, DeParams,
    GaParams, LbfgsParams, Method,
};
use pop_core::env::EpisodeStatus;
use pop_core::objective::{DomainBox, Objective};
use pop_core::rng::seeded;
use pop_core::transform::TrajectoryRecord;

struct Fun {
    domain: DomainBox,
    f: fn(&[f64]) -> f64,
    g: fn(&[f64]) -> Vec<f64>,
}

impl Objective for Fun {
    fn dimension(&self) -> usize {
        self.domain.dim()
    }
    fn domain(&self) -> &DomainBox {
        &self.domain
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.g)(x)
    }
}

fn square_1d() -> Fun {
    Fun { domain: DomainBox::uniform(1, -10.0, 10.0), f: |x| x[0] * x[0], g: |x| vec![2.0 * x[0]] }
}

fn sphere(dim: usize) -> Fun {
    Fun {
        domain: DomainBox::uniform(dim, -5.12, 5.12),
        f: |x| x.iter().map(|v| v * v).sum(),
        g: |x| x.iter().map(|v| 2.0 * v).collect(),
    }
}

fn rosenbrock() -> Fun {
    Fun {
        domain: DomainBox::uniform(2, -5.0, 10.0),
        f: |x| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
        g: |x| vec![-400.0 * x[0] * (x[1] - x[0] * x[0]) - 2.0 * (1.0 - x[0]), 200.0 * (x[1] - x[0] * x[0])],
    }
}

fn quadratic() -> Fun {
    // 0.5 x'Ax - b'x with A = [[3, 1], [1, 2]], b = (1, -1)
    Fun {
        domain: DomainBox::uniform(2, -10.0, 10.0),
        f: |x| 0.5 * (3.0 * x[0] * x[0] + 2.0 * x[0] * x[1] + 2.0 * x[1] * x[1]) - x[0] + x[1],
        g: |x| vec![3.0 * x[0] + x[1] - 1.0, x[0] + 2.0 * x[1] + 1.0],
    }
}

fn point(f: &dyn Objective, x: Vec<f64>) -> Vec<TrajectoryRecord> {
    let (y, grad) = f.value_and_gradient(&x);
    vec![TrajectoryRecord { x, y, grad, time_frac: 0.0 }]
}

fn context(f: &dyn Objective, c: usize, seed: u64) -> Vec<TrajectoryRecord> {
    pop_core::env::sample_context(f, c, &mut seeded(seed))
}

pub fn gd_contraction_matches_closed_form() {
    let f = square_1d();
    let run = gd_run(&f, &point(&f, vec![1.0]), 0.25, 30).unwrap();
    for (k, r) in run.trajectory.records.iter().enumerate() {
        assert!((r.x[0] - 0.5f64.powi(k as i32)).abs() < 1e-12);
    }
    let still = gd_run(&f, &point(&f, vec![1.0]), 0.0, 5).unwrap();
    assert!(still.trajectory.records.iter().all(|r| r.x[0] == 1.0));
}

pub fn adam_first_step_is_lr_per_coordinate() {
    let f = sphere(3);
    let cfg = BaselineConfig::new(Method::Adam, 1).with_lr(0.01);
    let start = vec![1.0, -2.0, 0.5];
    let run = adam_run(&f, &point(&f, start.clone()), &cfg).unwrap();
    let x1 = &run.trajectory.records[1].x;
    for (a, b) in start.iter().zip(x1) {
        let g = 2.0 * a;
        let expected = 0.01 * g / (g.abs() + 1e-8);
        assert!(((a - b) - expected).abs() < 1e-6);
    }
}

pub fn adam_zero_gradient_does_not_move() {
    let f = sphere(2);
    let cfg = BaselineConfig::new(Method::Adam, 10).with_lr(1.0);
    let run = adam_run(&f, &point(&f, vec![0.0, 0.0]), &cfg).unwrap();
    assert!(run.trajectory.records.iter().all(|r| r.x == vec![0.0, 0.0]));
}

pub fn lbfgs_solves_rosenbrock() {
    let f = rosenbrock();
    let run = lbfgs_run(&f, &point(&f, vec![-1.2, 1.0]), 1.0, 100, &LbfgsParams::default()).unwrap();
    let best = run.trajectory.best_so_far();
    assert!(*best.last().unwrap() < 1e-8, "best {:?}", best.last());
}

pub fn lbfgs_convex_quadratic_in_ten_iterations() {
    let f = quadratic();
    let run = lbfgs_run(&f, &point(&f, vec![7.0, -4.0]), 1.0, 10, &LbfgsParams::default()).unwrap();
    let g = &run.trajectory.records.last().unwrap().grad;
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-10, "gradient norm {norm}");
}

pub fn lbfgs_per_evaluation_charges_probes() {
    let f = rosenbrock();
    let params = LbfgsParams { accounting: Accounting::PerEvaluation, ..Default::default() };
    let run = lbfgs_run(&f, &point(&f, vec![-1.2, 1.0]), 1.0, 40, &params).unwrap();
    assert_eq!(run.evaluations, 40);
    assert_eq!(run.trajectory.len(), 41);

    let per_iter = lbfgs_run(&f, &point(&f, vec![-1.2, 1.0]), 1.0, 40, &LbfgsParams::default()).unwrap();
    assert_eq!(per_iter.trajectory.len(), 41);
    assert!(per_iter.evaluations > 40);
}

pub fn de_solves_sphere() {
    let f = sphere(2);
    let solved = (0..100)
        .filter(|&s| {
            let run = de_run(&f, &[], &DeParams::default(), 2000, &mut seeded(s)).unwrap();
            *run.trajectory.best_so_far().last().unwrap() < 1e-3
        })
        .count();
    assert!(solved >= 95, "{solved}/100");
}

pub fn de_without_mutation_only_recombines_existing_coordinates() {
    let f = sphere(2);
    let ctx = context(&f, 20, 3);
    let params = DeParams { f: 0.0, cr: 0.0, ..Default::default() };
    let run = de_run(&f, &ctx, &params, 200, &mut seeded(1)).unwrap();
    for r in &run.trajectory.records[20..] {
        for (d, v) in r.x.iter().enumerate() {
            assert!(ctx.iter().any(|c| c.x[d] == *v));
        }
    }
}

pub fn ga_keeps_the_elite() {
    let f = sphere(3);
    let ctx = context(&f, 10, 5);
    let run = ga_run(&f, &ctx, &GaParams::default(), 300, &mut seeded(2)).unwrap();
    let best = run.trajectory.best_so_far();
    assert!(best.windows(2).all(|w| w[1] <= w[0]));
    assert!(best.last().unwrap() < &best[9]);
}

pub fn random_search_order_statistics() {
    // f(x) = x on [0, 1]: E[min of n uniforms] = 1 / (n + 1)
    let f = Fun { domain: DomainBox::uniform(1, 0.0, 1.0), f: |x| x[0], g: |_| vec![1.0] };
    let n = 5;
    let seeds = 100_000;
    let mins: Vec<f64> = (0..seeds)
        .map(|s| {
            let run = random_search_run(&f, &[], n, &mut seeded(s)).unwrap();
            *run.trajectory.best_so_far().last().unwrap()
        })
        .collect();
    let mean = mins.iter().sum::<f64>() / seeds as f64;
    let var = mins.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64;
    let se = (var / seeds as f64).sqrt();
    assert!((mean - 1.0 / (n as f64 + 1.0)).abs() < 3.0 * se, "mean {mean}, se {se}");

    let one = random_search_run(&f, &[], 1, &mut seeded(0)).unwrap();
    assert_eq!(one.trajectory.len(), 1);
}

pub fn every_method_respects_the_budget() {
    let f = rosenbrock();
    let ctx = context(&f, 10, 9);
    for method in Method::ALL {
        for budget in [1, 7, 40, 90] {
            let mut cfg = BaselineConfig::new(method, budget);
            cfg.lr = 1e-3;
            cfg.lbfgs.accounting = Accounting::PerEvaluation;
            let run = run_baseline(&f, &ctx, &cfg, &mut seeded(4)).unwrap();
            assert_eq!(run.status, EpisodeStatus::Finished, "{method}");
            assert_eq!(run.evaluations, budget, "{method} budget {budget}");
            assert_eq!(run.trajectory.len(), 10 + budget, "{method}");
            let best = run.trajectory.best_so_far();
            assert!(best.windows(2).all(|w| w[1] <= w[0]));
            for r in &run.trajectory.records {
                assert!(f.domain().contains(&r.x));
            }
        }
    }
}

pub fn runs_are_deterministic_per_seed() {
    let f = sphere(4);
    let ctx = context(&f, 10, 1);
    for method in Method::ALL {
        let cfg = BaselineConfig::new(method, 30).with_lr(0.1);
        let a = run_baseline(&f, &ctx, &cfg, &mut seeded(8)).unwrap();
        let b = run_baseline(&f, &ctx, &cfg, &mut seeded(8)).unwrap();
        assert_eq!(a, b, "{method}");
    }
}

pub fn divergence_is_reported_as_failure() {
    let f = Fun { domain: DomainBox::uniform(1, -1e300, 1e300), f: |x| x[0].powi(4), g: |x| vec![4.0 * x[0].powi(3)] };
    let run = gd_run(&f, &point(&f, vec![10.0]), 100.0, 20).unwrap();
    assert_eq!(run.status, EpisodeStatus::Failed);
    assert!(run.trajectory.len() < 21);
}
