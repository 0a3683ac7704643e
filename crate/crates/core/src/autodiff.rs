//! Reverse-mode automatic differentiation over dense row-major `f64` arrays.
//!
//! A [`Graph`] is a tape: every primitive call appends a node holding its
//! value and a backward rule. [`Graph::backward`] walks the tape once in
//! reverse creation order. Graphs are rebuilt for every forward pass.
//!
//! Shape errors are programming errors and panic with both shapes.

use serde::{Deserialize, Serialize};

use crate::error::{PopError, Result};

const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Plain dense array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(numel(&shape), data.len(), "tensor shape {shape:?} does not match {} values", data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Expand(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Gelu { x: Var, t: Vec<f64> },
    Relu(Var),
    Square(Var),
    Softmax(Var),
    LayerNorm { x: Var, rstd: Vec<f64> },
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Minimum(Var, Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Dropout { x: Var, mask: Vec<f64> },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// The tape.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// `c = a * b + beta * c` for strided operands, `c` row-major `[m, n]`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    // SAFETY: `c` holds at least m * n initialized values and is exclusively borrowed.
    unsafe { gemm_raw(m, k, n, a, rsa, csa, b, rsb, csb, c.as_mut_ptr(), beta) }
}

/// Fresh `[m, n]` product without zero-filling the output first.
#[allow(clippy::too_many_arguments)]
fn gemm_new(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * n);
    // SAFETY: with beta = 0 every output element is written before it is read,
    // and the capacity covers m * n values.
    unsafe {
        gemm_raw(m, k, n, a, rsa, csa, b, rsb, csb, out.as_mut_ptr(), 0.0);
        out.set_len(m * n);
    }
    out
}

/// # Safety
/// `c` must be valid for `m * n` writes (and reads when `beta != 0`), and the
/// strided extents of `a` and `b` must lie inside the slices.
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_raw(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: *mut f64,
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        debug_assert!((m - 1) * rsa + (k - 1) * csa < a.len());
        debug_assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    }
    if k == 0 {
        if beta == 0.0 {
            std::ptr::write_bytes(c, 0, m * n);
        } else {
            for i in 0..m * n {
                *c.add(i) *= beta;
            }
        }
        return;
    }
    matrixmultiply::dgemm(
        m,
        k,
        n,
        1.0,
        a.as_ptr(),
        rsa as isize,
        csa as isize,
        b.as_ptr(),
        rsb as isize,
        csb as isize,
        beta,
        c,
        n as isize,
        1,
    );
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh through a single `exp`; absolute error stays at rounding level.
fn tanh_exp(z: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * z).exp() + 1.0)
}

fn gelu_inner(x: f64) -> f64 {
    tanh_exp(GELU_C * (x + 0.044715 * x * x * x))
}

fn gelu_grad(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t.shape, t.data, Op::Leaf, true)
    }

    pub fn leaf_from(&mut self, shape: &[usize], data: &[f64]) -> Var {
        assert_eq!(numel(shape), data.len(), "leaf shape {shape:?} vs {} values", data.len());
        self.push(shape.to_vec(), data.to_vec(), Op::Leaf, true)
    }

    /// Detached value: no gradient flows into or through it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.shape, t.data, Op::Leaf, false)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: &[f64]) -> Var {
        assert_eq!(numel(shape), data.len(), "constant shape {shape:?} vs {} values", data.len());
        self.push(shape.to_vec(), data.to_vec(), Op::Leaf, false)
    }

    /// Copy of `v`'s value cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (s, d) = (n.shape.clone(), n.value.clone());
        self.push(s, d, Op::Leaf, false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!(n.value.len(), 1, "scalar() on shape {:?}", n.shape);
        n.value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor { shape: n.shape.clone(), data: n.value.clone() }
    }

    // ---- linear algebra ----

    /// `a [.., k] x b [k, m] -> [.., m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert!(sb.len() == 2 && !sa.is_empty() && sa[sa.len() - 1] == sb[0], "matmul shape mismatch: {sa:?} x {sb:?}");
        let k = sb[0];
        let m = sb[1];
        let rows = numel(&sa) / k;
        let out = gemm_new(rows, k, m, self.value(a), k, 1, self.value(b), m, 1);
        let mut shape = sa;
        *shape.last_mut().unwrap() = m;
        let rg = self.rg(a) || self.rg(b);
        self.push(shape, out, Op::MatMul(a, b), rg)
    }

    /// Batched `[B, n, k] x [B, k, m]`, or `[B, n, k] x [B, m, k]^T` with `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let ok =
            sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && if trans_b { sa[2] == sb[2] } else { sa[2] == sb[1] };
        assert!(ok, "batch_matmul shape mismatch: {sa:?} x {sb:?} (trans_b={trans_b})");
        let (bs, n, k) = (sa[0], sa[1], sa[2]);
        let m = if trans_b { sb[1] } else { sb[2] };
        let mut out: Vec<f64> = Vec::with_capacity(bs * n * m);
        {
            let av = &self.nodes[a.0].value;
            let bv = &self.nodes[b.0].value;
            let (rsb, csb) = if trans_b { (1, k) } else { (m, 1) };
            for i in 0..bs {
                let ab = &av[i * n * k..(i + 1) * n * k];
                let bb = &bv[i * k * m..(i + 1) * k * m];
                // SAFETY: block i covers out[i*n*m..(i+1)*n*m] inside the capacity.
                unsafe { gemm_raw(n, k, m, ab, k, 1, bb, rsb, csb, out.as_mut_ptr().add(i * n * m), 0.0) };
            }
            // SAFETY: every block was written above.
            unsafe { out.set_len(bs * n * m) };
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(vec![bs, n, m], out, Op::BatchMatMul { a, b, trans_b }, rg)
    }

    // ---- elementwise ----

    fn same_shape(&self, op: &str, a: Var, b: Var) {
        assert_eq!(self.shape(a), self.shape(b), "{op} shape mismatch: {:?} vs {:?}", self.shape(a), self.shape(b));
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|x| f(*x)).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("add", a, b);
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("sub", a, b);
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("mul", a, b);
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.same_shape("minimum", a, b);
        self.binary(a, b, f64::min, Op::Minimum(a, b))
    }

    fn row_op(&mut self, a: Var, row: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let sa = self.shape(a).to_vec();
        let sr = self.shape(row).to_vec();
        assert!(sr.len() == 1 && sa.last() == Some(&sr[0]), "{name} shape mismatch: {sa:?} with row {sr:?}");
        let c = sr[0];
        let rv = self.value(row);
        let av = self.value(a);
        let mut out = Vec::with_capacity(av.len());
        for chunk in av.chunks_exact(c) {
            out.extend(chunk.iter().zip(rv).map(|(x, r)| f(*x, *r)));
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(sa, out, op, rg)
    }

    /// Broadcast-add a last-axis vector.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.row_op(a, row, "add_row", |x, r| x + r, Op::AddRow(a, row))
    }

    /// Broadcast-multiply a last-axis vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        self.row_op(a, row, "mul_row", |x, r| x * r, Op::MulRow(a, row))
    }

    /// Broadcast a one-element tensor to `shape`.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Var {
        assert_eq!(self.value(a).len(), 1, "expand needs one element, got shape {:?}", self.shape(a));
        let v = self.value(a)[0];
        let rg = self.rg(a);
        self.push(shape.to_vec(), vec![v; numel(shape)], Op::Expand(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t: Vec<f64> = x.iter().map(|v| gelu_inner(*v)).collect();
        let out = x.iter().zip(&t).map(|(v, t)| 0.5 * v * (1.0 + t)).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Gelu { x: a, t }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        assert!(lo <= hi, "clamp bounds {lo} > {hi}");
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp { x: a, lo, hi })
    }

    /// Inverted dropout with a caller-supplied keep mask (1 keep, 0 drop).
    pub fn dropout(&mut self, a: Var, keep: &[bool], p: f64) -> Var {
        assert_eq!(keep.len(), self.value(a).len(), "dropout mask length vs shape {:?}", self.shape(a));
        let s = 1.0 / (1.0 - p);
        let mask: Vec<f64> = keep.iter().map(|k| if *k { s } else { 0.0 }).collect();
        let out: Vec<f64> = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let rg = self.rg(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Dropout { x: a, mask }, rg)
    }

    // ---- last-axis normalizers ----

    pub fn softmax(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let c = *shape.last().expect("softmax on rank-0 tensor");
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let rg = self.rg(a);
        self.push(shape, out, Op::Softmax(a), rg)
    }

    /// Normalize the last axis to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let c = *shape.last().expect("layer_norm on rank-0 tensor");
        let mut out = self.value(a).to_vec();
        let mut rstd = Vec::with_capacity(out.len() / c);
        for row in out.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            rstd.push(r);
        }
        let rg = self.rg(a);
        self.push(shape, out, Op::LayerNorm { x: a, rstd }, rg)
    }

    // ---- shape ----

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        assert_eq!(numel(shape), self.value(a).len(), "reshape {:?} -> {shape:?} changes element count", self.shape(a));
        let v = self.value(a).to_vec();
        let rg = self.rg(a);
        self.push(shape.to_vec(), v, Op::Reshape(a), rg)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = self.shape(parts[0]).to_vec();
        assert!(axis < first.len(), "concat axis {axis} on shape {first:?}");
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (x, y))| i == axis || x == y);
            assert!(compatible, "concat shape mismatch on axis {axis}: {first:?} vs {s:?}");
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis] * inner;
                out.extend_from_slice(&self.value(*p)[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(shape, out, Op::Concat { parts: parts.to_vec(), axis }, rg)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let sa = self.shape(a).to_vec();
        assert!(
            axis < sa.len() && start + len <= sa[axis],
            "slice [{start}, {}) on axis {axis} of shape {sa:?}",
            start + len
        );
        let (outer, ext, inner) = split_axis(&sa, axis);
        let src = self.value(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * ext * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = sa;
        shape[axis] = len;
        let rg = self.rg(a);
        self.push(shape, out, Op::Slice { x: a, axis, start }, rg)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(vec![1], vec![s], Op::Mean(a), rg)
    }

    pub fn sum_last(&mut self, a: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let c = *sa.last().expect("sum_last on rank-0 tensor");
        let out: Vec<f64> = self.value(a).chunks(c).map(|r| r.iter().sum()).collect();
        let mut shape = sa[..sa.len() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.rg(a);
        self.push(shape, out, Op::SumLast(a), rg)
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. A second call without rebuilding the
    /// graph is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(PopError::Usage("backward called twice on the same tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(PopError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            backprop_node(&self.nodes, &mut self.grads, i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Gradient of the last backward pass w.r.t. `v`; zeros when `v` had no
    /// influence on the loss.
    pub fn grad(&self, v: Var) -> Vec<f64> {
        assert!(self.backward_done, "grad() before backward()");
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[v.0].value.len()],
        }
    }

    /// Add the gradient w.r.t. `v` into `acc`.
    pub fn accumulate_grad(&self, v: Var, acc: &mut [f64]) {
        assert!(self.backward_done, "accumulate_grad() before backward()");
        if let Some(Some(g)) = self.grads.get(v.0) {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
    }
}

fn acc<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

/// `grad[v][j] += f(j)`, writing directly on first touch.
fn acc_map(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(buf) => {
            for (j, b) in buf.iter_mut().enumerate() {
                *b += f(j);
            }
        }
        slot @ None => *slot = Some((0..nodes[v.0].value.len()).map(f).collect()),
    }
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let k = nodes[b.0].shape[0];
            let m = nodes[b.0].shape[1];
            let rows = g.len() / m;
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            if let Some(buf) = acc(nodes, grads, *a) {
                gemm(rows, m, k, g, m, 1, &bv, 1, m, buf, 1.0);
            }
            if let Some(buf) = acc(nodes, grads, *b) {
                gemm(k, rows, m, &av, 1, k, g, m, 1, buf, 1.0);
            }
        }
        Op::BatchMatMul { a, b, trans_b } => {
            let (bs, n, k) = {
                let s = &nodes[a.0].shape;
                (s[0], s[1], s[2])
            };
            let m = g.len() / (bs * n);
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            if let Some(buf) = acc(nodes, grads, *a) {
                for t in 0..bs {
                    let gb = &g[t * n * m..(t + 1) * n * m];
                    let bb = &bv[t * k * m..(t + 1) * k * m];
                    let ab = &mut buf[t * n * k..(t + 1) * n * k];
                    if *trans_b {
                        // da = g [n,m] * b [m,k]
                        gemm(n, m, k, gb, m, 1, bb, k, 1, ab, 1.0);
                    } else {
                        // da = g [n,m] * b^T, b stored [k,m]
                        gemm(n, m, k, gb, m, 1, bb, 1, m, ab, 1.0);
                    }
                }
            }
            if let Some(buf) = acc(nodes, grads, *b) {
                for t in 0..bs {
                    let gb = &g[t * n * m..(t + 1) * n * m];
                    let abuf = &av[t * n * k..(t + 1) * n * k];
                    let bb = &mut buf[t * k * m..(t + 1) * k * m];
                    if *trans_b {
                        // db [m,k] = g^T [m,n] * a [n,k]
                        gemm(m, n, k, gb, 1, m, abuf, k, 1, bb, 1.0);
                    } else {
                        // db [k,m] = a^T [k,n] * g [n,m]
                        gemm(k, n, m, abuf, 1, k, gb, m, 1, bb, 1.0);
                    }
                }
            }
        }
        Op::Add(a, b) => {
            acc_map(nodes, grads, *a, |j| g[j]);
            acc_map(nodes, grads, *b, |j| g[j]);
        }
        Op::Sub(a, b) => {
            acc_map(nodes, grads, *a, |j| g[j]);
            acc_map(nodes, grads, *b, |j| -g[j]);
        }
        Op::Mul(a, b) => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            acc_map(nodes, grads, *a, |j| g[j] * bv[j]);
            acc_map(nodes, grads, *b, |j| g[j] * av[j]);
        }
        Op::Minimum(a, b) => {
            let av = &nodes[a.0].value;
            let bv = &nodes[b.0].value;
            acc_map(nodes, grads, *a, |j| if av[j] <= bv[j] { g[j] } else { 0.0 });
            acc_map(nodes, grads, *b, |j| if av[j] <= bv[j] { 0.0 } else { g[j] });
        }
        Op::AddRow(a, row) => {
            let c = nodes[row.0].value.len();
            acc_map(nodes, grads, *a, |j| g[j]);
            if let Some(buf) = acc(nodes, grads, *row) {
                for chunk in g.chunks(c) {
                    for (b, x) in buf.iter_mut().zip(chunk) {
                        *b += x;
                    }
                }
            }
        }
        Op::MulRow(a, row) => {
            let c = nodes[row.0].value.len();
            let rv = &nodes[row.0].value;
            let av = &nodes[a.0].value;
            acc_map(nodes, grads, *a, |j| g[j] * rv[j % c]);
            if let Some(buf) = acc(nodes, grads, *row) {
                for (gc, ac) in g.chunks(c).zip(av.chunks(c)) {
                    for ((b, x), y) in buf.iter_mut().zip(gc).zip(ac) {
                        *b += x * y;
                    }
                }
            }
        }
        Op::Expand(a) => {
            let s: f64 = g.iter().sum();
            acc_map(nodes, grads, *a, |_| s);
        }
        Op::Scale(a, c) => {
            let c = *c;
            acc_map(nodes, grads, *a, |j| g[j] * c);
        }
        Op::AddScalar(a) | Op::Reshape(a) => acc_map(nodes, grads, *a, |j| g[j]),
        Op::Exp(a) => {
            let y = &nodes[i].value;
            acc_map(nodes, grads, *a, |j| g[j] * y[j]);
        }
        Op::Log(a) => {
            let x = &nodes[a.0].value;
            acc_map(nodes, grads, *a, |j| g[j] / x[j]);
        }
        Op::Tanh(a) => {
            let y = &nodes[i].value;
            acc_map(nodes, grads, *a, |j| g[j] * (1.0 - y[j] * y[j]));
        }
        Op::Gelu { x, t } => {
            let xv = &nodes[x.0].value;
            acc_map(nodes, grads, *x, |j| g[j] * gelu_grad(xv[j], t[j]));
        }
        Op::Relu(a) => {
            let x = &nodes[a.0].value;
            acc_map(nodes, grads, *a, |j| if x[j] > 0.0 { g[j] } else { 0.0 });
        }
        Op::Square(a) => {
            let x = &nodes[a.0].value;
            acc_map(nodes, grads, *a, |j| 2.0 * x[j] * g[j]);
        }
        Op::Clamp { x, lo, hi } => {
            let xv = &nodes[x.0].value;
            let (lo, hi) = (*lo, *hi);
            acc_map(nodes, grads, *x, |j| if xv[j] >= lo && xv[j] <= hi { g[j] } else { 0.0 });
        }
        Op::Dropout { x, mask } => {
            acc_map(nodes, grads, *x, |j| g[j] * mask[j]);
        }
        Op::Softmax(a) => {
            let c = *nodes[i].shape.last().unwrap();
            let y = &nodes[i].value;
            if let Some(buf) = acc(nodes, grads, *a) {
                for ((bc, yc), gc) in buf.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                    let dot: f64 = yc.iter().zip(gc).map(|(p, q)| p * q).sum();
                    for ((b, yv), gv) in bc.iter_mut().zip(yc).zip(gc) {
                        *b += yv * (gv - dot);
                    }
                }
            }
        }
        Op::LayerNorm { x, rstd } => {
            let c = *nodes[i].shape.last().unwrap();
            let y = &nodes[i].value;
            if let Some(buf) = acc(nodes, grads, *x) {
                for (r, ((bc, yc), gc)) in rstd.iter().zip(buf.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c))) {
                    let mg = gc.iter().sum::<f64>() / c as f64;
                    let mgy = gc.iter().zip(yc).map(|(p, q)| p * q).sum::<f64>() / c as f64;
                    for ((b, yv), gv) in bc.iter_mut().zip(yc).zip(gc) {
                        *b += r * (gv - mg - yv * mgy);
                    }
                }
            }
        }
        Op::Concat { parts, axis } => {
            let shape = nodes[i].shape.clone();
            let (outer, total, inner) = split_axis(&shape, *axis);
            let mut offset = 0;
            for p in parts {
                let len = nodes[p.0].shape[*axis] * inner;
                if let Some(buf) = acc(nodes, grads, *p) {
                    for o in 0..outer {
                        let src = &g[o * total * inner + offset..o * total * inner + offset + len];
                        for (b, s) in buf[o * len..(o + 1) * len].iter_mut().zip(src) {
                            *b += s;
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Slice { x, axis, start } => {
            let src_shape = nodes[x.0].shape.clone();
            let len = nodes[i].shape[*axis];
            let (outer, ext, inner) = split_axis(&src_shape, *axis);
            let start = *start;
            if let Some(buf) = acc(nodes, grads, *x) {
                for o in 0..outer {
                    let base = o * ext * inner + start * inner;
                    let gs = &g[o * len * inner..(o + 1) * len * inner];
                    for (b, s) in buf[base..base + len * inner].iter_mut().zip(gs) {
                        *b += s;
                    }
                }
            }
        }
        Op::Sum(a) => {
            let s = g[0];
            acc_map(nodes, grads, *a, |_| s);
        }
        Op::Mean(a) => {
            let n = nodes[a.0].value.len() as f64;
            let s = g[0] / n;
            acc_map(nodes, grads, *a, |_| s);
        }
        Op::SumLast(a) => {
            let c = *nodes[a.0].shape.last().unwrap();
            acc_map(nodes, grads, *a, |j| g[j / c]);
        }
    }
}

// ---- parameters and optimizer ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

/// Ordered, named parameter collection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> usize {
        assert_eq!(numel(&shape), value.len(), "parameter shape {shape:?} vs {} values", value.len());
        self.params.push(Parameter { name: name.into(), shape, value });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Parameter {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Parameter {
        &mut self.params[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Bring every parameter onto `graph` as a trainable leaf.
    pub fn bind(&self, graph: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| graph.leaf_from(&p.shape, &p.value)).collect()
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.value.len()]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Linear warmup length in optimizer steps (0 disables).
    pub warmup_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, warmup_steps: 0 }
    }
}

impl AdamConfig {
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * (step as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// One decoupled-weight-decay Adam step; `step` is 1-based.
pub fn adam_update(params: &mut [f64], grads: &[f64], moments: &mut AdamMoments, step: u64, cfg: &AdamConfig) {
    assert!(step >= 1, "adam step is 1-based");
    assert_eq!(params.len(), grads.len(), "adam params vs grads");
    assert_eq!(params.len(), moments.m.len(), "adam params vs moments");
    let lr = cfg.lr_at(step);
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(moments.m.iter_mut()).zip(moments.v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= lr * cfg.weight_decay * *p;
        *p -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}
