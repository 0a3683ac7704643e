use pop_core::env::Token;
use pop_core::policy::{PolicyConfig, StepSizePolicy, TransformerPolicy};
use pop_core::ppo::desk_policy;
use pop_core::rng::seeded;
use rand::Rng;

fn tokens(len: usize, seed: u64) -> Vec<Token> {
    let mut rng = seeded(seed);
    (0..len)
        .map(|i| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-5.0..5.0), i as f64 / 90.0])
        .collect()
}

pub fn log_std_stays_in_bounds_for_adversarial_parameters() {
    let mut p = TransformerPolicy::new(desk_policy(), 1).unwrap();
    let idx = p.param_index("log_std_raw").unwrap();
    for raw in [f64::NEG_INFINITY, -1e300, -40.0, -1.0, 0.0, 2.5, 40.0, 1e300, f64::INFINITY] {
        p.params_mut().get_mut(idx).value[0] = raw;
        let out = p.forward(&tokens(7, 2)).unwrap();
        assert!((-3.0..=2.0).contains(&out.log_std), "raw {raw} -> {}", out.log_std);
        assert!((-3.0..=2.0).contains(&p.log_std()));
    }
}

pub fn reference_architecture_size() {
    let p = TransformerPolicy::new(PolicyConfig::default(), 0).unwrap();
    let n = p.parameter_count() as f64;
    assert!((n - 166_000.0).abs() / 166_000.0 < 0.10, "{n} parameters");
}

/// A coordinate's output depends only on its own stream: evaluating it
/// alone, among 31 others, or with the others perturbed gives the same bits.
pub fn coordinates_are_scored_independently() {
    let p = TransformerPolicy::new(PolicyConfig::default(), 3).unwrap();
    let streams: Vec<Vec<Token>> = (0..32).map(|d| tokens(25, 100 + d)).collect();
    let together = p.evaluate_streams(&streams).unwrap();
    let mut perturbed = streams.clone();
    for (d, s) in perturbed.iter_mut().enumerate() {
        if d != 5 {
            *s = tokens(25, 500 + d as u64);
        }
    }
    let again = p.evaluate_streams(&perturbed).unwrap();
    assert_eq!(together[5], again[5]);
    for d in [0, 5, 31] {
        let alone = p.evaluate_streams(&streams[d..d + 1]).unwrap();
        assert_eq!(alone[0], together[d]);
    }
}

pub fn outputs_are_finite_for_every_history_length() {
    for cfg in [PolicyConfig::default(), desk_policy()] {
        let p = TransformerPolicy::new(cfg, 4).unwrap();
        let streams: Vec<Vec<Token>> = (1..=110).map(|len| tokens(len, len as u64)).collect();
        for (len, out) in (1..).zip(p.evaluate_streams(&streams).unwrap()) {
            assert!(out.mu.is_finite() && out.log_std.is_finite() && out.value.is_finite(), "length {len}");
        }
    }
}
