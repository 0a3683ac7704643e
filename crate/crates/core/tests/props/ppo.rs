use pop_core::autodiff::{Graph, Var};
use pop_core::env::Token;
use pop_core::policy::{flatten_tokens, gaussian_log_prob, PolicyConfig, TransformerPolicy};
use pop_core::ppo::{
    clipped_objective, compute_returns_and_advantages, gae, minibatch_gradients, ppo_update, LossSettings,
    OptimizerState, TrainConfig, Trainer, Transition, TransitionBatch,
};
use pop_core::rng::seeded;
use rand::Rng;

fn small_policy() -> PolicyConfig {
    PolicyConfig { embed_dim: 8, blocks: 1, heads: 2, ff_dim: 16, shared_dim: 8, head_hidden: 8, ..Default::default() }
}

fn random_tokens(rng: &mut impl Rng, len: usize) -> Vec<Token> {
    (0..len)
        .map(|i| [rng.gen_range(-3.0..3.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), i as f64 / 40.0])
        .collect()
}

/// Transitions whose old log-probs come from `policy`, so the ratio is 1.
fn on_policy_batch(policy: &TransformerPolicy, n: usize, seed: u64) -> TransitionBatch {
    let mut rng = seeded(seed);
    let mut transitions = Vec::new();
    for i in 0..n {
        let tokens = random_tokens(&mut rng, 10 + i % 4);
        let out = policy.forward(&tokens).unwrap();
        let u = out.mu + out.log_std.exp() * rng.gen_range(-1.5..1.5);
        transitions.push(Transition {
            tokens,
            action: u,
            old_log_prob: gaussian_log_prob(u, out.mu, out.log_std),
            old_value: out.value,
            reward: rng.gen_range(-1.0..1.0),
            ret: 0.0,
            advantage: 0.0,
            episode: i / 4,
            coord: 0,
            step: i % 4,
            truncated: false,
        });
    }
    let mut batch = TransitionBatch { transitions, episode_rewards: vec![0.0; n / 4], failed_episodes: 0 };
    compute_returns_and_advantages(&mut batch, 1.0, 1.0);
    batch
}

pub fn gae_unit_discount_is_suffix_sum_minus_value() {
    let mut rng = seeded(3);
    for _ in 0..50 {
        let n = rng.gen_range(1..20);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (adv, ret) = gae(&r, &v, 1.0, 1.0);
        for t in 0..n {
            let suffix: f64 = r[t..].iter().sum();
            assert!((adv[t] - (suffix - v[t])).abs() < 1e-12);
            assert!((ret[t] - suffix).abs() < 1e-12);
        }
    }
}

pub fn batch_streams_are_independent() {
    let p = TransformerPolicy::new(small_policy(), 0).unwrap();
    let batch = on_policy_batch(&p, 12, 1);
    assert_eq!(batch.streams().len(), 3);
    for range in batch.streams() {
        let slice = &batch.transitions[range];
        let total: f64 = slice.iter().map(|t| t.reward).sum();
        assert!((slice[0].ret - total).abs() < 1e-12);
    }
}

pub fn unit_ratio_surrogate_is_negative_mean_advantage() {
    let p = TransformerPolicy::new(small_policy(), 5).unwrap();
    let batch = on_policy_batch(&p, 16, 2);
    let items: Vec<&Transition> = batch.transitions.iter().collect();
    let adv: Vec<f64> = items.iter().map(|t| t.advantage).collect();
    let settings = LossSettings { clip_ratio: 0.1, kl_coef: 0.1, value_coef: 0.5 };
    let (_, stats) = minibatch_gradients(&p, &items, &adv, settings, None, 1).unwrap();
    let mean_adv = adv.iter().sum::<f64>() / adv.len() as f64;
    assert!((stats.surrogate - (-mean_adv)).abs() < 1e-12, "{} vs {}", stats.surrogate, -mean_adv);
    assert!(stats.kl.abs() < 1e-14);
    assert_eq!(stats.clip_fraction, 0.0);
}

/// At ratio 1 the clipped-surrogate gradient equals the plain policy
/// gradient `-mean(A * grad log pi)` plus the value term.
pub fn clipped_gradient_equals_vanilla_at_unit_ratio() {
    let p = TransformerPolicy::new(small_policy(), 9).unwrap();
    let batch = on_policy_batch(&p, 8, 4);
    let items: Vec<&Transition> = batch.transitions.iter().collect();
    let adv: Vec<f64> = items.iter().map(|t| t.advantage).collect();
    let settings = LossSettings { clip_ratio: 0.1, kl_coef: 0.0, value_coef: 0.0 };
    let (grads, _) = minibatch_gradients(&p, &items, &adv, settings, None, 1).unwrap();

    // vanilla: -(1/n) sum A_i log pi(u_i), one stream at a time
    let n = items.len() as f64;
    let mut vanilla: Vec<Vec<f64>> = p.params().iter().map(|q| vec![0.0; q.value.len()]).collect();
    for (t, a) in items.iter().zip(&adv) {
        let mut g = Graph::new();
        let vars = p.bind(&mut g, true);
        let flat = flatten_tokens(std::iter::once(t.tokens.as_slice()));
        let fv = p.forward_graph(&mut g, &vars, &flat, 1, t.tokens.len(), None).unwrap();
        let u = g.constant_from(&[1, 1], &[t.action]);
        let ls = g.expand(fv.log_std, &[1, 1]);
        let diff = g.sub(u, fv.mu);
        let nls = g.neg(ls);
        let inv = g.exp(nls);
        let z = g.mul(diff, inv);
        let z2 = g.square(z);
        let h = g.scale(z2, -0.5);
        let lp = g.sub(h, ls);
        let s = g.sum(lp);
        let loss = g.scale(s, -a / n);
        g.backward(loss).unwrap();
        for (acc, v) in vanilla.iter_mut().zip(&vars) {
            for (x, y) in acc.iter_mut().zip(g.grad(*v as Var)) {
                *x += y;
            }
        }
    }
    let num: f64 = grads.iter().flatten().zip(vanilla.iter().flatten()).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = vanilla.iter().flatten().map(|b| b * b).sum();
    assert!(num.sqrt() <= 1e-10 * den.sqrt().max(1e-300), "rel {}", num.sqrt() / den.sqrt());
}

/// The surrogate gradient vanishes exactly when the clipped branch is
/// active: ratio above 1 + eps with positive advantage, or below 1 - eps
/// with negative advantage.
pub fn clip_engages_exactly_outside_the_trust_band() {
    let p = TransformerPolicy::new(small_policy(), 13).unwrap();
    let base = on_policy_batch(&p, 4, 6);
    let settings = LossSettings { clip_ratio: 0.1, kl_coef: 0.0, value_coef: 0.0 };
    let cases = [
        (1.1 + 1e-7, 1.0, true),
        (1.1 - 1e-7, 1.0, false),
        (0.9 - 1e-7, -1.0, true),
        (0.9 + 1e-7, -1.0, false),
        (0.8, 1.0, false),
        (1.2, -1.0, false),
    ];
    for (ratio, a, engaged) in cases {
        for t in &base.transitions {
            let mut t = t.clone();
            t.old_log_prob -= f64::ln(ratio);
            let items = [&t];
            let (grads, stats) = minibatch_gradients(&p, &items, &[a], settings, None, 1).unwrap();
            let norm: f64 = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            assert!((stats.surrogate + clipped_objective(ratio, a, 0.1)).abs() < 1e-9, "{}", stats.surrogate);
            if engaged {
                assert_eq!(norm, 0.0, "ratio {ratio} advantage {a}");
            } else {
                assert!(norm > 0.0, "ratio {ratio} advantage {a}");
            }
        }
    }
}

pub fn early_stop_after_first_epoch_when_kl_is_large() {
    let mut p = TransformerPolicy::new(small_policy(), 2).unwrap();
    let mut batch = on_policy_batch(&p, 64, 7);
    // old log-probs far from the current policy => KL well above 0.01
    for t in &mut batch.transitions {
        t.old_log_prob -= 0.5;
    }
    let mut cfg = TrainConfig::desk();
    cfg.policy = small_policy();
    cfg.minibatch_size = 32;
    let mut opt = OptimizerState::new(&p, &cfg);
    let mut kl = cfg.kl_coef_init;
    let mut rng = seeded(0);
    let d = ppo_update(&mut p, &batch, &cfg, &mut opt, &mut kl, &mut rng, None, 1).unwrap();
    assert_eq!(d.epochs_run(), 1);
    assert!(d.stopped_early);
    assert!(d.epochs[0].mean_kl > 0.01);
    assert_eq!(kl, 2.0 * cfg.kl_coef_init);
}

pub fn all_epochs_run_when_kl_stays_small() {
    let mut p = TransformerPolicy::new(small_policy(), 2).unwrap();
    let batch = on_policy_batch(&p, 64, 8);
    let mut cfg = TrainConfig::desk();
    cfg.policy = small_policy();
    cfg.minibatch_size = 32;
    cfg.actor_lr = 1e-7;
    cfg.critic_lr = 1e-7;
    let mut opt = OptimizerState::new(&p, &cfg);
    let mut kl = cfg.kl_coef_init;
    let d = ppo_update(&mut p, &batch, &cfg, &mut opt, &mut kl, &mut seeded(1), None, 1).unwrap();
    assert_eq!(d.epochs_run(), 4);
    assert!(!d.stopped_early);
    assert_eq!(d.epochs[0].minibatches, 2);
    assert_eq!(kl, cfg.kl_coef_init / 2.0);
}

pub fn non_finite_advantage_aborts_update() {
    let mut p = TransformerPolicy::new(small_policy(), 2).unwrap();
    let mut batch = on_policy_batch(&p, 8, 8);
    batch.transitions[3].advantage = f64::NAN;
    let mut cfg = TrainConfig::desk();
    cfg.policy = small_policy();
    cfg.minibatch_size = 8;
    cfg.normalize_advantages = false;
    let mut opt = OptimizerState::new(&p, &cfg);
    let mut kl = 0.1;
    let err = ppo_update(&mut p, &batch, &cfg, &mut opt, &mut kl, &mut seeded(1), None, 1).unwrap_err();
    assert!(matches!(err, pop_core::PopError::Numerical(_)));
}

fn tiny_train_config(seed: u64) -> TrainConfig {
    let mut c = TrainConfig::desk();
    c.policy = small_policy();
    c.batch_functions = 4;
    c.horizon = 6;
    c.minibatch_size = 16;
    c.prior.feature_count = 32;
    c.validation_every = 0;
    c.seed = seed;
    c
}

pub fn transitions_per_iteration_match_batch() {
    let mut t = Trainer::new(tiny_train_config(1)).unwrap();
    let log = t.step(1).unwrap();
    assert_eq!(log.iteration, 1);
    assert_eq!(t.config().transitions_per_iteration(), 4 * 2 * 6);
}

pub fn training_is_bit_reproducible() {
    let run = || {
        let mut t = Trainer::new(tiny_train_config(11)).unwrap();
        let logs: Vec<_> = (0..3).map(|_| t.step(1).unwrap()).collect();
        (logs, t.policy().params().clone())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
}
