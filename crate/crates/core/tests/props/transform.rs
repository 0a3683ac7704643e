use pop_core::objective::DomainBox;
use pop_core::rng::seeded;
use pop_core::transform::TransformState;
use rand::Rng;

fn random_state(rng: &mut impl Rng) -> (DomainBox, TransformState) {
    let dim = rng.gen_range(1..6);
    let lower: Vec<f64> = (0..dim).map(|_| rng.gen_range(-100.0..10.0)).collect();
    let upper: Vec<f64> = lower.iter().map(|lo| lo + rng.gen_range(0.5..150.0)).collect();
    let domain = DomainBox::new(lower, upper).unwrap();
    let mut state = TransformState::new(&domain, 3.0, 3.0).unwrap();
    for _ in 0..rng.gen_range(2..30) {
        let x = domain.sample(rng);
        state.observe(&x, rng.gen_range(-50.0..50.0)).unwrap();
    }
    (domain, state)
}

pub fn inverse_of_forward_is_identity() {
    let mut rng = seeded(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (domain, state) = random_state(&mut rng);
        let x = domain.sample(&mut rng);
        let back = state.inverse_x(&state.forward_x(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-10, "worst absolute error {worst}");
}

/// Smooth test objective with a closed-form gradient.
fn objective(x: &[f64], w: &[f64]) -> (f64, Vec<f64>) {
    let y = x.iter().zip(w).map(|(v, c)| c * v * v * 0.01 + (v * 0.1).sin()).sum();
    let g = x.iter().zip(w).map(|(v, c)| 0.02 * c * v + 0.1 * (v * 0.1).cos()).collect();
    (y, g)
}

/// The transformed gradient must be the gradient of the composed map
/// x~ -> forward_y(f(inverse_x(x~))) under frozen statistics.
pub fn gradient_matches_finite_differences_of_composed_map() {
    let mut rng = seeded(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (domain, state) = random_state(&mut rng);
        let w: Vec<f64> = (0..domain.dim()).map(|_| rng.gen_range(0.5..2.0)).collect();
        let x = domain.sample(&mut rng);
        let (_, g) = objective(&x, &w);
        let analytic = state.scale_gradient(&g).unwrap();
        let xt = state.forward_x(&x).unwrap();
        let composed = |xt: &[f64]| {
            let raw = state.inverse_x(xt).unwrap();
            state.forward_y(objective(&raw, &w).0).unwrap()
        };
        let h = 1e-5;
        let numeric: Vec<f64> = (0..xt.len())
            .map(|d| {
                let mut p = xt.clone();
                let mut m = xt.clone();
                p[d] += h;
                m[d] -= h;
                (composed(&p) - composed(&m)) / (2.0 * h)
            })
            .collect();
        let scale = numeric.iter().chain(&analytic).fold(1e-8f64, |m, v| m.max(v.abs()));
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / scale);
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

pub fn transformed_coordinates_of_observations_are_standardized() {
    let mut rng = seeded(3);
    for _ in 0..100 {
        let domain = DomainBox::uniform(3, -50.0, 50.0);
        let mut state = TransformState::new(&domain, 3.0, 3.0).unwrap();
        let xs: Vec<Vec<f64>> = (0..20).map(|_| domain.sample(&mut rng)).collect();
        for x in &xs {
            state.observe(x, rng.gen_range(-1.0..1.0)).unwrap();
        }
        for d in 0..3 {
            let z: Vec<f64> = xs.iter().map(|x| state.forward_x(x).unwrap()[d]).collect();
            let mean = z.iter().sum::<f64>() / z.len() as f64;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8, "{var}");
        }
    }
}
