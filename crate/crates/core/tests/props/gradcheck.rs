//! Finite-difference oracles for every tape primitive and for a full
//! transformer actor-critic forward pass.

use pop_core::autodiff::{Graph, Tensor, Var};
use pop_core::policy::{PolicyConfig, TransformerPolicy};
use pop_core::rng::seeded;
use rand::Rng;

const H: f64 = 1e-6;
const SEEDS: u64 = 20;

fn rand_tensor<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Builds `sum(w * op(inputs))` for random weights `w`, so every output
/// element contributes to the loss with a distinct weight.
fn weighted_loss(g: &mut Graph, out: Var, weights: &[f64]) -> Var {
    let shape = g.shape(out).to_vec();
    let w = g.constant_from(&shape, &weights[..g.value(out).len()]);
    let p = g.mul(out, w);
    g.sum(p)
}

/// Max relative error between analytic and central-difference gradients.
fn check<F>(inputs: &[Tensor], build: F, seed: u64) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut rng = seeded(seed ^ 0xABCD);
    let weights: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let eval = |ins: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars);
        let loss = weighted_loss(&mut g, out, &weights);
        g.scalar(loss)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars);
    let loss = weighted_loss(&mut g, out, &weights);
    g.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (k, var) in vars.iter().enumerate() {
        let analytic = g.grad(*var);
        let mut numeric = vec![0.0; analytic.len()];
        let mut probe = inputs.to_vec();
        for j in 0..analytic.len() {
            let orig = inputs[k].data[j];
            probe[k].data[j] = orig + H;
            let up = eval(&probe);
            probe[k].data[j] = orig - H;
            let down = eval(&probe);
            probe[k].data[j] = orig;
            numeric[j] = (up - down) / (2.0 * H);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let denom = na.max(nn).max(1e-12);
        worst = worst.max(diff / denom);
    }
    worst
}

fn run_primitive<S, F>(name: &str, shapes: S, build: F)
where
    S: Fn(&mut rand_chacha::ChaCha8Rng) -> Vec<Tensor>,
    F: Fn(&mut Graph, &[Var]) -> Var + Copy,
{
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut rng = seeded(1000 + seed);
        let inputs = shapes(&mut rng);
        let err = check(&inputs, build, seed);
        worst = worst.max(err);
    }
    assert!(worst < 1e-6, "{name}: worst relative error {worst:e}");
}

fn dims<R: Rng>(rng: &mut R) -> (usize, usize, usize) {
    (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5))
}

pub fn matmul() {
    run_primitive(
        "matmul",
        |r| {
            let (a, b, c) = dims(r);
            let m = r.gen_range(1..4);
            vec![rand_tensor(r, &[a, b, c], -1.0, 1.0), rand_tensor(r, &[c, m], -1.0, 1.0)]
        },
        |g, v| g.matmul(v[0], v[1]),
    );
}

pub fn batch_matmul_plain_and_transposed() {
    run_primitive(
        "batch_matmul",
        |r| {
            let (b, n, k) = dims(r);
            let m = r.gen_range(1..4);
            vec![rand_tensor(r, &[b, n, k], -1.0, 1.0), rand_tensor(r, &[b, k, m], -1.0, 1.0)]
        },
        |g, v| g.batch_matmul(v[0], v[1], false),
    );
    run_primitive(
        "batch_matmul_t",
        |r| {
            let (b, n, k) = dims(r);
            let m = r.gen_range(1..4);
            vec![rand_tensor(r, &[b, n, k], -1.0, 1.0), rand_tensor(r, &[b, m, k], -1.0, 1.0)]
        },
        |g, v| g.batch_matmul(v[0], v[1], true),
    );
}

fn two_same<R: Rng>(r: &mut R, lo: f64, hi: f64) -> Vec<Tensor> {
    let (a, b, c) = dims(r);
    vec![rand_tensor(r, &[a, b, c], lo, hi), rand_tensor(r, &[a, b, c], lo, hi)]
}

fn one<R: Rng>(r: &mut R, lo: f64, hi: f64) -> Vec<Tensor> {
    let (a, b, c) = dims(r);
    vec![rand_tensor(r, &[a, b, c], lo, hi)]
}

pub fn binary_elementwise() {
    run_primitive("add", |r| two_same(r, -2.0, 2.0), |g, v| g.add(v[0], v[1]));
    run_primitive("sub", |r| two_same(r, -2.0, 2.0), |g, v| g.sub(v[0], v[1]));
    run_primitive("mul", |r| two_same(r, -2.0, 2.0), |g, v| g.mul(v[0], v[1]));
    // ties are measure-zero for continuous draws; FD step is far below typical gaps
    run_primitive("minimum", |r| two_same(r, -2.0, 2.0), |g, v| g.minimum(v[0], v[1]));
}

pub fn row_broadcasts() {
    let shapes = |r: &mut rand_chacha::ChaCha8Rng| {
        let (a, b, c) = dims(r);
        vec![rand_tensor(r, &[a, b, c], -2.0, 2.0), rand_tensor(r, &[c], -2.0, 2.0)]
    };
    run_primitive("add_row", shapes, |g, v| g.add_row(v[0], v[1]));
    run_primitive("mul_row", shapes, |g, v| g.mul_row(v[0], v[1]));
    run_primitive("expand", |r| vec![rand_tensor(r, &[1], -2.0, 2.0)], |g, v| g.expand(v[0], &[2, 3]));
}

pub fn unary_elementwise() {
    run_primitive("scale", |r| one(r, -2.0, 2.0), |g, v| g.scale(v[0], -1.7));
    run_primitive("neg", |r| one(r, -2.0, 2.0), |g, v| g.neg(v[0]));
    run_primitive("add_scalar", |r| one(r, -2.0, 2.0), |g, v| g.add_scalar(v[0], 0.3));
    run_primitive("exp", |r| one(r, -2.0, 2.0), |g, v| g.exp(v[0]));
    run_primitive("log", |r| one(r, 0.2, 3.0), |g, v| g.log(v[0]));
    run_primitive("tanh", |r| one(r, -2.0, 2.0), |g, v| g.tanh(v[0]));
    run_primitive("gelu", |r| one(r, -3.0, 3.0), |g, v| g.gelu(v[0]));
    run_primitive("square", |r| one(r, -2.0, 2.0), |g, v| g.square(v[0]));
    // keep inputs away from the kinks
    let away = |r: &mut rand_chacha::ChaCha8Rng| {
        let mut t = one(r, 0.05, 2.0);
        for (i, v) in t[0].data.iter_mut().enumerate() {
            if i % 2 == 0 {
                *v = -*v;
            }
        }
        t
    };
    run_primitive("relu", away, |g, v| g.relu(v[0]));
    run_primitive("clamp", |r| one(r, -2.0, 2.0), |g, v| g.clamp(v[0], -1.01, 0.99));
}

pub fn dropout_with_fixed_mask() {
    run_primitive(
        "dropout",
        |r| vec![rand_tensor(r, &[3, 4], -2.0, 2.0)],
        |g, v| {
            let keep: Vec<bool> = (0..12).map(|i| i % 3 != 0).collect();
            g.dropout(v[0], &keep, 0.05)
        },
    );
}

pub fn softmax_and_layer_norm() {
    run_primitive("softmax", |r| one(r, -3.0, 3.0), |g, v| g.softmax(v[0]));
    run_primitive(
        "layer_norm",
        |r| {
            let (a, b, _) = dims(r);
            // two-element rows normalize to +-1 up to eps, leaving an O(eps)
            // gradient that central differences cannot resolve
            let c = r.gen_range(3..8);
            vec![rand_tensor(r, &[a, b, c], -3.0, 3.0)]
        },
        |g, v| g.layer_norm(v[0]),
    );
}

pub fn shape_primitives() {
    run_primitive(
        "reshape",
        |r| vec![rand_tensor(r, &[2, 3, 2], -2.0, 2.0)],
        |g, v| {
            let y = g.reshape(v[0], &[3, 4]);
            g.square(y)
        },
    );
    for axis in 0..3 {
        let build = move |g: &mut Graph, v: &[Var]| {
            let c = g.concat(&[v[0], v[1]], axis);
            g.square(c)
        };
        match axis {
            0 => run_primitive(
                "concat0",
                |r| vec![rand_tensor(r, &[2, 3, 2], -2.0, 2.0), rand_tensor(r, &[1, 3, 2], -2.0, 2.0)],
                build,
            ),
            1 => run_primitive(
                "concat1",
                |r| vec![rand_tensor(r, &[2, 3, 2], -2.0, 2.0), rand_tensor(r, &[2, 2, 2], -2.0, 2.0)],
                build,
            ),
            _ => run_primitive(
                "concat2",
                |r| vec![rand_tensor(r, &[2, 3, 2], -2.0, 2.0), rand_tensor(r, &[2, 3, 3], -2.0, 2.0)],
                build,
            ),
        }
    }
    for axis in 0..3 {
        run_primitive(
            "slice",
            |r| vec![rand_tensor(r, &[3, 4, 5], -2.0, 2.0)],
            move |g, v| {
                let s = g.slice(v[0], axis, 1, 2);
                g.square(s)
            },
        );
    }
}

pub fn reductions() {
    run_primitive(
        "sum",
        |r| one(r, -2.0, 2.0),
        |g, v| {
            let s = g.square(v[0]);
            g.sum(s)
        },
    );
    run_primitive(
        "mean",
        |r| one(r, -2.0, 2.0),
        |g, v| {
            let s = g.square(v[0]);
            g.mean(s)
        },
    );
    run_primitive(
        "sum_last",
        |r| one(r, -2.0, 2.0),
        |g, v| {
            let s = g.square(v[0]);
            g.sum_last(s)
        },
    );
}

/// Directional derivative of a scalar built from actor mean, critic value and
/// log-std, over every parameter of a small transformer, against
/// `(L(theta + h v) - L(theta - h v)) / 2h`.
fn policy_directional_error(config: PolicyConfig, seed: u64) -> f64 {
    let policy = TransformerPolicy::new(config, seed).unwrap();
    let mut rng = seeded(seed + 77);
    let n = 3;
    let len = rng.gen_range(1..9);
    let tokens: Vec<f64> = (0..n * len * 4).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let wmu: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let wv: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let loss_of = |p: &TransformerPolicy, g: &mut Graph, vars: &[Var]| -> Var {
        let fv = p.forward_graph(g, vars, &tokens, n, len, None).unwrap();
        let a = g.constant_from(&[n, 1], &wmu);
        let b = g.constant_from(&[n, 1], &wv);
        let x = g.mul(fv.mu, a);
        let x = g.sum(x);
        let y = g.mul(fv.value, b);
        let y = g.sum(y);
        let s = g.add(x, y);
        let ls = g.scale(fv.log_std, 0.3);
        g.add(s, ls)
    };

    let mut g = Graph::new();
    let vars = policy.bind(&mut g, true);
    let loss = loss_of(&policy, &mut g, &vars);
    g.backward(loss).unwrap();

    let dirs: Vec<Vec<f64>> =
        policy.params().iter().map(|p| p.value.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let analytic: f64 =
        vars.iter().zip(&dirs).map(|(v, d)| g.grad(*v).iter().zip(d).map(|(a, b)| a * b).sum::<f64>()).sum();

    let shifted = |sign: f64| -> f64 {
        let mut p = policy.clone();
        for (i, d) in dirs.iter().enumerate() {
            for (w, dv) in p.params_mut().get_mut(i).value.iter_mut().zip(d) {
                *w += sign * H * dv;
            }
        }
        let mut g = Graph::new();
        let vars = p.bind(&mut g, false);
        let l = loss_of(&p, &mut g, &vars);
        g.scalar(l)
    };
    let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * H);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

pub fn transformer_directional_derivative() {
    let small = PolicyConfig {
        embed_dim: 16,
        blocks: 2,
        heads: 4,
        ff_dim: 32,
        shared_dim: 8,
        head_hidden: 8,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        worst = worst.max(policy_directional_error(small.clone(), seed));
    }
    assert!(worst < 1e-5, "small transformer: worst relative error {worst:e}");
    // the default architecture, fewer seeds to keep the runtime modest
    for seed in 0..3 {
        let e = policy_directional_error(PolicyConfig::default(), 100 + seed);
        assert!(e < 1e-5, "default transformer seed {seed}: {e:e}");
    }
}

pub fn gradients_are_bitwise_deterministic() {
    let run = || {
        let p = TransformerPolicy::new(PolicyConfig::default(), 9).unwrap();
        let mut rng = seeded(4);
        let tokens: Vec<f64> = (0..2 * 7 * 4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut g = Graph::new();
        let vars = p.bind(&mut g, true);
        let fv = p.forward_graph(&mut g, &vars, &tokens, 2, 7, None).unwrap();
        let s = g.sum(fv.mu);
        let v = g.sum(fv.value);
        let l = g.add(s, v);
        g.backward(l).unwrap();
        vars.iter().flat_map(|v| g.grad(*v)).collect::<Vec<f64>>()
    };
    let a = run();
    let b = run();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
