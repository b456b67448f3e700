//! Operation tape with reverse-mode gradients.
//!
//! A [`Graph`] records every operation in creation order, so the node list is
//! topologically sorted by construction. [`Graph::backward`] walks it once in
//! reverse.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::kernels::{self, axis_split, gemm};
use crate::tensor::{validate_shape, Tensor};

/// Below this L2 norm a vector is treated as degenerate by [`Graph::l2_normalize`].
pub const MIN_NORM: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Narrow { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    IndexSelect { x: Var, indices: Vec<usize> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    Relu(Var),
    Sqrt(Var),
    Square(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Dropout { x: Var, mask: Vec<f64> },
    Mean { x: Var, axis: usize },
    SumAll(Var),
    L2Normalize { x: Var, norms: Vec<f64> },
    CrossEntropy { logits: Var, labels: Vec<usize> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode gradients keyed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros if no path exists.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("finite gradient"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn get_data(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. It participates in differentiation iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push_raw(tensor, Op::Leaf, requires_grad)
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push_raw(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn data(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.data()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let value = Tensor::new(shape, data)?;
        Ok(self.push_raw(value, op, requires_grad))
    }

    // ----- linear algebra -------------------------------------------------

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(self.data(a), self.data(b), &mut out, m, k, n, false, false);
        self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// Batched product of `[b×m×k]` with `[b×k×n]`, or with `[b×n×k]`
    /// transposed when `trans_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(dim_err("batch_matmul", &sa, &sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(dim_err("batch_matmul", &sa, &sb));
        }
        let mut out = vec![0.0; batch * m * n];
        {
            let (da, db) = (self.data(a), self.data(b));
            for t in 0..batch {
                gemm(
                    &da[t * m * k..(t + 1) * m * k],
                    &db[t * k * n..(t + 1) * k * n],
                    &mut out[t * m * n..(t + 1) * m * n],
                    m,
                    k,
                    n,
                    false,
                    trans_b,
                );
            }
        }
        self.push(vec![batch, m, n], out, Op::BatchMatMul { a, b, trans_b }, &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(dim_err("transpose", &s, &[]));
        }
        let (r, c) = (s[0], s[1]);
        let d = self.data(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.push(vec![c, r], out, Op::Transpose(x), &[x])
    }

    // ----- shape manipulation --------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        validate_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(dim_err("reshape", self.shape(x), shape));
        }
        let data = self.data(x).to_vec();
        self.push(shape.to_vec(), data, Op::Reshape(x), &[x])
    }

    /// General axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(dim_err("permute", &s, perm));
        }
        let src = kernels::permute_source_indices(&s, perm);
        let d = self.data(x);
        let out = src.iter().map(|&i| d[i]).collect();
        let shape = perm.iter().map(|&p| s[p]).collect();
        self.push(shape, out, Op::Permute { x, perm: perm.to_vec() }, &[x])
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(dim_err("narrow", &s, &[axis, start, len]));
        }
        let (outer, n, inner) = axis_split(&s, axis);
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push(shape, out, Op::Narrow { x, axis, start }, &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(dim_err("concat", &s0, &[axis]));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == s0.len()
                && s.iter().zip(&s0).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim_err("concat", &s0, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&s0, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let n = self.shape(v)[axis];
                let d = self.data(v);
                out.extend_from_slice(&d[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        self.push(shape, out, Op::Concat { xs: xs.to_vec(), axis }, xs)
    }

    /// Gathers slices along axis 0. Indices may repeat.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if indices.is_empty() || indices.iter().any(|&i| i >= s[0]) {
            return Err(dim_err("index_select", &s, indices));
        }
        let inner: usize = s[1..].iter().product();
        let d = self.data(x);
        let mut out = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            out.extend_from_slice(&d[i * inner..(i + 1) * inner]);
        }
        let mut shape = s;
        shape[0] = indices.len();
        self.push(shape, out, Op::IndexSelect { x, indices: indices.to_vec() }, &[x])
    }

    // ----- elementwise ----------------------------------------------------

    fn binary_same(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(op_name, self.shape(a), self.shape(b)));
        }
        let out = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a + b` where `b`'s shape equals a trailing suffix of `a`'s shape
    /// (bias rows, positional tables).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(dim_err("add_broadcast", sa, sb));
        }
        let inner = self.value(b).len();
        let db = self.data(b);
        let out = self
            .data(a)
            .chunks(inner)
            .flat_map(|chunk| chunk.iter().zip(db).map(|(x, y)| x + y))
            .collect();
        let shape = sa.to_vec();
        self.push(shape, out, Op::AddBroadcast(a, b), &[a, b])
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, op, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// Exact-erf GELU: `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, kernels::gelu, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if let Some(v) = self.data(x).iter().find(|v| **v < 0.0) {
            return Err(TensorError::Parameter(format!("sqrt of negative value {v}")));
        }
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    // ----- normalisation and activations over the last axis ---------------

    /// Max-subtracted softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        let mut out = vec![0.0; t.len()];
        for (row, o) in t.data().chunks(d).zip(out.chunks_mut(d)) {
            kernels::softmax_row(row, o);
        }
        let shape = t.shape().to_vec();
        self.push(shape, out, Op::Softmax(x), &[x])
    }

    /// Normalises each last-axis row to zero mean and unit (biased) variance,
    /// then applies `gamma·x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(TensorError::Parameter(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let d = self.value(x).last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(dim_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let rows = self.value(x).len() / d;
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        {
            let (dx, g, b) = (self.data(x), self.data(gamma), self.data(beta));
            for r in 0..rows {
                let row = &dx[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[r] = is;
                for j in 0..d {
                    let h = (row[j] - mean) * is;
                    xhat[r * d + j] = h;
                    out[r * d + j] = g[j] * h + b[j];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta])
    }

    /// Inverted dropout. Identity (no mask drawn) when `training` is false or
    /// `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Parameter(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Dropout { x, mask }, &[x])
    }

    /// Row-wise L2 normalisation over the last axis. Rows with norm below
    /// [`MIN_NORM`] are an error rather than being clamped.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        let mut norms = Vec::with_capacity(t.len() / d);
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(d) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n <= MIN_NORM {
                return Err(TensorError::DegenerateNorm { norm: n, min: MIN_NORM });
            }
            norms.push(n);
            out.extend(row.iter().map(|v| v / n));
        }
        let shape = t.shape().to_vec();
        self.push(shape, out, Op::L2Normalize { x, norms }, &[x])
    }

    /// Per-row `−log softmax(logits)[label]` for logits of shape `[n, classes]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(dim_err("cross_entropy", &s, &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= s[1]) {
            return Err(TensorError::Parameter(format!("label {bad} out of range for {} classes", s[1])));
        }
        let t = self.value(logits);
        let out = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| kernels::neg_log_softmax(t.row(i), y))
            .collect();
        self.push(vec![s[0]], out, Op::CrossEntropy { logits, labels: labels.to_vec() }, &[logits])
    }

    // ----- reductions -----------------------------------------------------

    /// Arithmetic mean along `axis`, which is removed from the shape (a rank-1
    /// input reduces to shape `[1]`).
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(dim_err("mean", &s, &[axis]));
        }
        let (outer, n, inner) = axis_split(&s, axis);
        let d = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                add_into(&mut out[o * inner..(o + 1) * inner], &d[base..base + inner]);
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        let mut shape: Vec<usize> = s.iter().enumerate().filter(|(i, _)| *i != axis).map(|(_, &v)| v).collect();
        if shape.is_empty() {
            shape.push(1);
        }
        self.push(shape, out, Op::Mean { x, axis }, &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let total = self.data(x).iter().sum();
        self.push(vec![1], vec![total], Op::SumAll(x), &[x])
    }

    /// Mean over all entries, as a `[1]` tensor.
    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n)
    }

    // ----- backward -------------------------------------------------------

    /// Reverse-mode pass from a scalar `loss`. Every node is visited at most
    /// once, in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                self.accumulate(grads, *a, |ga| gemm(g, self.data(*b), ga, m, n, k, false, true));
                self.accumulate(grads, *b, |gb| gemm(self.data(*a), g, gb, k, m, n, true, false));
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let sa = self.shape(*a);
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.shape()[2];
                let (da, db) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, |ga| {
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let bt = &db[t * k * n..(t + 1) * k * n];
                        // dA = dC · op(B)ᵀ
                        gemm(gt, bt, &mut ga[t * m * k..(t + 1) * m * k], m, n, k, false, !*trans_b);
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for t in 0..batch {
                        let gt = &g[t * m * n..(t + 1) * m * n];
                        let at = &da[t * m * k..(t + 1) * m * k];
                        let dst = &mut gb[t * k * n..(t + 1) * k * n];
                        if *trans_b {
                            // B stored n×k: dB = dCᵀ · A
                            gemm(gt, at, dst, n, m, k, true, false);
                        } else {
                            gemm(at, gt, dst, k, m, n, true, false);
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let s = self.shape(*x);
                let (r, c) = (s[0], s[1]);
                self.accumulate(grads, *x, |gx| {
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |gx| add_into(gx, g)),
            Op::Permute { x, perm } => {
                let src = kernels::permute_source_indices(self.shape(*x), perm);
                self.accumulate(grads, *x, |gx| {
                    for (o, &i) in src.iter().enumerate() {
                        gx[i] += g[o];
                    }
                });
            }
            Op::Narrow { x, axis, start } => {
                let s = self.shape(*x);
                let (outer, n, inner) = axis_split(s, *axis);
                let len = node.value.shape()[*axis];
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        let base = o * n * inner + start * inner;
                        add_into(&mut gx[base..base + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let n = self.shape(v)[*axis];
                    self.accumulate(grads, v, |gv| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            add_into(&mut gv[o * n * inner..(o + 1) * n * inner], &g[src..src + n * inner]);
                        }
                    });
                    offset += n;
                }
            }
            Op::IndexSelect { x, indices } => {
                let inner: usize = self.shape(*x)[1..].iter().product();
                self.accumulate(grads, *x, |gx| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut gx[i * inner..(i + 1) * inner], &g[r * inner..(r + 1) * inner]);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| {
                    for (d, s) in gb.iter_mut().zip(g) {
                        *d -= s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * db[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * da[i];
                    }
                });
            }
            Op::AddBroadcast(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                let inner = self.value(*b).len();
                self.accumulate(grads, *b, |gb| {
                    for chunk in g.chunks(inner) {
                        add_into(gb, chunk);
                    }
                });
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, |gx| {
                for (d, s) in gx.iter_mut().zip(g) {
                    *d += s * c;
                }
            }),
            Op::AddScalar(x) => self.accumulate(grads, *x, |gx| add_into(gx, g)),
            Op::Gelu(x) => {
                let dx = self.data(*x);
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * kernels::gelu_grad(dx[i]);
                    }
                });
            }
            Op::Relu(x) => {
                let dx = self.data(*x);
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        if dx[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                });
            }
            Op::Sqrt(x) => self.accumulate(grads, *x, |gx| {
                for i in 0..gx.len() {
                    // subgradient 0 at the origin
                    if out[i] > 0.0 {
                        gx[i] += g[i] / (2.0 * out[i]);
                    }
                }
            }),
            Op::Square(x) => {
                let dx = self.data(*x);
                self.accumulate(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += 2.0 * dx[i] * g[i];
                    }
                });
            }
            Op::Softmax(x) => {
                let d = node.value.last_dim();
                self.accumulate(grads, *x, |gx| {
                    for ((y, gy), gxr) in out.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)) {
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            gxr[j] += y[j] * (gy[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = node.value.last_dim();
                let gam = self.data(*gamma);
                self.accumulate(grads, *x, |gx| {
                    for (r, is) in inv_std.iter().enumerate() {
                        let gy = &g[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut mean_dxh = 0.0;
                        let mut mean_dxh_xh = 0.0;
                        for j in 0..d {
                            let dxh = gy[j] * gam[j];
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[j];
                        }
                        mean_dxh /= d as f64;
                        mean_dxh_xh /= d as f64;
                        for j in 0..d {
                            let dxh = gy[j] * gam[j];
                            gx[r * d + j] += is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                });
                self.accumulate(grads, *gamma, |gg| {
                    for (gy, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gy[j] * xh[j];
                        }
                    }
                });
                self.accumulate(grads, *beta, |gb| {
                    for gy in g.chunks(d) {
                        add_into(gb, gy);
                    }
                });
            }
            Op::Dropout { x, mask } => self.accumulate(grads, *x, |gx| {
                for i in 0..gx.len() {
                    gx[i] += g[i] * mask[i];
                }
            }),
            Op::Mean { x, axis } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis);
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        for k in 0..n {
                            let base = (o * n + k) * inner;
                            for j in 0..inner {
                                gx[base + j] += g[o * inner + j] / n as f64;
                            }
                        }
                    }
                });
            }
            Op::SumAll(x) => self.accumulate(grads, *x, |gx| {
                for v in gx.iter_mut() {
                    *v += g[0];
                }
            }),
            Op::L2Normalize { x, norms } => {
                let d = node.value.last_dim();
                self.accumulate(grads, *x, |gx| {
                    for (r, n) in norms.iter().enumerate() {
                        let y = &out[r * d..(r + 1) * d];
                        let gy = &g[r * d..(r + 1) * d];
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            gx[r * d + j] += (gy[j] - y[j] * dot) / n;
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, labels } => {
                let t = self.value(*logits);
                let c = t.last_dim();
                self.accumulate(grads, *logits, |gl| {
                    let mut p = vec![0.0; c];
                    for (i, &y) in labels.iter().enumerate() {
                        kernels::softmax_row(t.row(i), &mut p);
                        for j in 0..c {
                            let onehot = if j == y { 1.0 } else { 0.0 };
                            gl[i * c + j] += g[i] * (p[j] - onehot);
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut g = Graph::new();
        let i2 = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let m = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.data(p), &[1., 2., 3., 4.]);

        let row = g.constant(t(&[1, 2], &[1., 2.]));
        let col = g.constant(t(&[2, 1], &[3., 4.]));
        let dot = g.matmul(row, col).unwrap();
        assert_eq!(g.data(dot), &[11.]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        assert!(matches!(g.matmul(a, b), Err(TensorError::Dimension { op: "matmul", .. })));
    }

    #[test]
    fn matmul_gradient_of_sum() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 2], &[1., 0., 0., 1.]).trainable());
        let b = g.constant(t(&[2, 2], &[2., 3., 4., 5.]));
        let c = g.matmul(a, b).unwrap();
        let loss = g.sum_all(c).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).data(), &[5., 9., 5., 9.]);
    }

    #[test]
    fn gelu_values() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 10.0, 1.0]).unwrap());
        let y = g.gelu(x).unwrap();
        let d = g.data(y);
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 10.0).abs() < 1e-6);
        assert!((d[2] - 0.841345).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::new();
        let ones = g.constant(Tensor::full(vec![4], 1.0));
        let zeros = g.constant(Tensor::zeros(vec![4]));
        let x = g.constant(Tensor::vector(vec![5.0; 4]).unwrap());
        let y = g.layer_norm(x, ones, zeros, 1e-5).unwrap();
        assert_eq!(g.data(y), &[0.0; 4]);

        let ones2 = g.constant(Tensor::full(vec![2], 1.0));
        let zeros2 = g.constant(Tensor::zeros(vec![2]));
        let x = g.constant(Tensor::vector(vec![1.0, -1.0]).unwrap());
        let y = g.layer_norm(x, ones2, zeros2, 1e-14).unwrap();
        assert!((g.data(y)[0] - 1.0).abs() < 1e-12 && (g.data(y)[1] + 1.0).abs() < 1e-12);

        let gamma = g.constant(Tensor::full(vec![2], 2.0));
        let beta = g.constant(Tensor::full(vec![2], 1.0));
        let x = g.constant(Tensor::vector(vec![0.0, 2.0]).unwrap());
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        // std is sqrt(1 + eps), so the result is within ~1e-5 of the exact value
        assert!((g.data(y)[0] + 1.0).abs() < 1e-4 && (g.data(y)[1] - 3.0).abs() < 1e-4);
        assert!(g.layer_norm(x, gamma, beta, 0.0).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3, 2], &[0., 0., 1000., 0., 0.5, -0.5]));
        let y = g.softmax(x).unwrap();
        let d = g.data(y);
        assert_eq!(&d[..2], &[0.5, 0.5]);
        assert!((d[2] - 1.0).abs() < 1e-12 && d[3] < 1e-12);

        let x = g.constant(Tensor::vector(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap());
        let y = g.softmax(x).unwrap();
        for (v, e) in g.data(y).iter().zip([1. / 6., 2. / 6., 3. / 6.]) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap());
        assert_eq!(g.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        assert_eq!(g.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert!(matches!(g.dropout(x, 1.0, true, &mut rng), Err(TensorError::Parameter(_))));
        assert!(g.dropout(x, -0.1, false, &mut rng).is_err());
        let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
        for (o, i) in g.data(y).iter().zip([1.0, -2.0, 3.0]) {
            assert!(*o == 0.0 || *o == 2.0 * i);
        }
    }

    #[test]
    fn dropout_is_unbiased() {
        let x = Tensor::vector(vec![1.0, -0.5, 2.0, 4.0]).unwrap();
        let mut acc = [0.0; 4];
        let n = 10_000;
        for seed in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::new();
            let v = g.constant(x.clone());
            let y = g.dropout(v, 0.5, true, &mut rng).unwrap();
            for (a, o) in acc.iter_mut().zip(g.data(y)) {
                *a += o;
            }
        }
        for (a, e) in acc.iter().zip(x.data()) {
            let mean = a / n as f64;
            assert!((mean - e).abs() <= 0.02 * e.abs(), "{mean} vs {e}");
        }
    }

    #[test]
    fn backward_simple_cases() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1., 2., 3.]).unwrap().trainable());
        let s = g.sum_all(x).unwrap();
        assert_eq!(g.backward(s).unwrap().get(x).data(), &[1., 1., 1.]);

        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq).unwrap();
        assert_eq!(g.backward(s).unwrap().get(x).data(), &[2., 4., 6.]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_zeroes_unreachable() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1., 2.]).unwrap().trainable());
        let unused = g.leaf(Tensor::vector(vec![5.]).unwrap().trainable());
        assert!(matches!(g.backward(x), Err(TensorError::Contract(_))));
        let s = g.sum_all(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(unused).data(), &[0.0]);
    }

    #[test]
    fn l2_normalize_rejects_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![4]));
        assert!(matches!(g.l2_normalize(x), Err(TensorError::DegenerateNorm { .. })));
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::new();
        let l = g.constant(t(&[2, 2], &[0., 0., 10., -10.]));
        let ce = g.cross_entropy(l, &[1, 0]).unwrap();
        let d = g.data(ce);
        assert!((d[0] - std::f64::consts::LN_2).abs() < 1e-15);
        // log(1 + e^-20)
        assert!((d[1] - 2.061_153_620_314_381e-9).abs() < 1e-18);
    }

    #[test]
    fn permute_narrow_concat_shapes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 3, 4], (0..24).map(f64::from).collect()).unwrap());
        let p = g.permute(x, &[1, 0, 2]).unwrap();
        assert_eq!(g.shape(p), &[3, 2, 4]);
        assert_eq!(&g.data(p)[..8], &[0., 1., 2., 3., 12., 13., 14., 15.]);
        let n = g.narrow(x, 2, 1, 2).unwrap();
        assert_eq!(g.shape(n), &[2, 3, 2]);
        assert_eq!(&g.data(n)[..4], &[1., 2., 5., 6.]);
        let c = g.concat(&[n, n], 2).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 4]);
        assert_eq!(&g.data(c)[..4], &[1., 2., 1., 2.]);
        assert!(g.permute(x, &[0, 0, 1]).is_err());
    }
}
