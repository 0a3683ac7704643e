use pop_core::bench::{catalog, catalog_entries, estimate_ymax, get, GradientMode};
use pop_core::objective::{DomainBox, Objective};
use pop_core::rng::seeded;
use rand::Rng;

struct Plain {
    domain: DomainBox,
    f: fn(&[f64]) -> f64,
}

impl Objective for Plain {
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
        let h = vec![1e-6; x.len()];
        pop_core::objective::central_difference(self.f, x, &h)
    }
}

pub fn catalog_has_every_function_once() {
    assert_eq!(catalog().len(), 47);
    let entries = catalog_entries();
    let json = serde_json::to_string(&entries).unwrap();
    let back: Vec<pop_core::bench::CatalogEntry> = serde_json::from_str(&json).unwrap();
    assert_eq!(back, entries);
}

pub fn argmin_attains_y_min() {
    for f in catalog() {
        assert!(f.domain.contains(&f.argmin), "{}", f.name);
        let y = f.value(&f.argmin);
        assert!((y - f.y_min).abs() <= 1e-6 * f.y_min.abs().max(1.0), "{}: {y} vs {}", f.name, f.y_min);
    }
}

pub fn no_sampled_point_beats_y_min() {
    let mut rng = seeded(77);
    for f in catalog() {
        for _ in 0..20_000 {
            let x = f.domain.sample(&mut rng);
            assert!(f.value(&x) >= f.y_min - 1e-9, "{} at {x:?}", f.name);
        }
    }
}

pub fn analytic_gradients_match_finite_differences() {
    let mut rng = seeded(5);
    for f in catalog().iter().filter(|f| f.gradient_mode == GradientMode::Analytic) {
        for _ in 0..20 {
            // stay off the boundary so the stencil is inside the box
            let x: Vec<f64> =
                (0..f.dimension()).map(|d| f.domain.lower[d] + f.domain.width(d) * rng.gen_range(0.05..0.95)).collect();
            let g = f.gradient(&x);
            // absolute step: some functions oscillate fast relative to their box
            let fd = pop_core::objective::central_difference(|x| f.value(x), &x, &vec![1e-6; x.len()]);
            let scale = fd.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() / scale < 1e-5, "{} at {x:?}: {g:?} vs {fd:?}", f.name);
            }
        }
    }
}

pub fn y_max_dominates_fresh_samples() {
    let mut rng = seeded(123);
    for f in catalog() {
        assert!(f.y_max > f.y_min, "{}", f.name);
        let top = (0..10_000).map(|_| f.value(&f.domain.sample(&mut rng))).fold(f64::NEG_INFINITY, f64::max);
        assert!(top <= f.y_max + 1e-9 * f.y_max.abs().max(1.0), "{}: {top} > {}", f.name, f.y_max);
    }
}

pub fn sphere_y_max_is_the_corner() {
    let f = get("sphere").unwrap();
    assert!((f.y_max - 2.0 * 5.12 * 5.12).abs() < 1e-9, "{}", f.y_max);
}

pub fn monotone_function_maximum_is_its_endpoint() {
    let f = Plain { domain: DomainBox::uniform(1, -2.0, 3.0), f: |x| x[0].powi(3) + x[0] };
    let est = estimate_ymax(&f, 1000, 1).unwrap();
    assert_eq!(est.argmax, vec![3.0]);
    assert_eq!(est.value, 30.0);
}

pub fn constant_function_has_degenerate_range() {
    let f = Plain { domain: DomainBox::uniform(2, 0.0, 1.0), f: |_| 4.0 };
    let est = estimate_ymax(&f, 1000, 1).unwrap();
    assert_eq!(est.value, 4.0);
    // normalized regret is undefined when y_max == y_min
    assert!(pop_core::metrics::normalized_regret(&[4.0], 4.0, est.value).is_err());
}
