use std::sync::atomic::{AtomicU32, Ordering};

use super::{AutodiffError, Tensor};

/// Probability clamp applied inside binary cross-entropy, on both sides.
pub const BCE_EPS: f64 = 1e-12;
/// Variance floor inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy)]
enum MatMulKind {
    /// `[.., k] x [k, n]`, the right operand shared across all leading rows.
    Shared { rows: usize, k: usize, n: usize },
    /// `[b, m, k] x [b, k, n]`, or `[b, m, k] x [b, n, k]^T` when `trans_b`.
    Batched { batch: usize, m: usize, k: usize, n: usize, trans_b: bool },
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// Produced on a non-recording tape; has no backward rule.
    Detached,
    MatMul {
        a: usize,
        b: usize,
        kind: MatMulKind,
    },
    Add(usize, usize),
    Mul(usize, usize),
    AddBias {
        a: usize,
        bias: usize,
    },
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Gelu(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        table: usize,
        ids: Vec<usize>,
    },
    Mean(usize),
    WeightedMse {
        pred: usize,
        target: Vec<f64>,
        weights: Vec<f64>,
        total_weight: f64,
    },
    Bce {
        prob: usize,
        labels: Vec<f64>,
    },
    Reshape(usize),
    SwapAxes12 {
        a: usize,
        dims: [usize; 4],
    },
    MaskRows {
        a: usize,
        fill: usize,
        mask: Vec<bool>,
    },
    PickSum {
        a: usize,
        picks: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Record of executed primitives, replayed in reverse by [`Tape::backward`].
///
/// Nodes are appended in execution order, so every node's inputs precede it.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    recording: bool,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Reverse-mode gradients for the leaves reachable from a loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, `None` when the loss does
    /// not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

/// `c (+)= a * b` for row-major operands described by explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: callers pass slices holding at least the strided extents
    // addressed for the given (m, k, n); `c` is a dense row-major m x n block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn row_major(cols: usize) -> (isize, isize) {
    (cols as isize, 1)
}

fn transposed(cols: usize) -> (isize, isize) {
    (1, cols as isize)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    /// A tape that records backward rules.
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), recording: true, nodes: Vec::new() }
    }

    /// A tape that only evaluates; [`Tape::backward`] on it is an error.
    pub fn inference() -> Self {
        Self { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        assert_eq!(var.tape, self.id, "variable belongs to a different tape");
        &self.nodes[var.index].value
    }

    fn check(&self, var: Var) -> Result<usize, AutodiffError> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(AutodiffError::ForeignVar);
        }
        Ok(var.index)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let op = if self.recording || matches!(op, Op::Leaf) { op } else { Op::Detached };
        self.nodes.push(Node { value, op });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    fn val(&self, index: usize) -> &Tensor {
        &self.nodes[index].value
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Matrix product. A 2-D right operand `[k, n]` is shared across every
    /// leading row of the left operand; a 3-D right operand must share the
    /// left operand's batch extent.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.matmul_impl(a, b, false)
    }

    /// Batched `a * b^T` for `a: [b, m, k]`, `b: [b, n, k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.val(ia).shape().to_vec(), self.val(ib).shape().to_vec());
        let mismatch = || shape_err("matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})"));
        let (kind, out_shape) = match (sa.len(), sb.len(), trans_b) {
            (na, 2, false) if na >= 1 => {
                let k = sa[na - 1];
                if sb[0] != k {
                    return Err(mismatch());
                }
                let n = sb[1];
                let rows = sa[..na - 1].iter().product();
                let mut out = sa[..na - 1].to_vec();
                out.push(n);
                (MatMulKind::Shared { rows, k, n }, out)
            }
            (3, 3, _) => {
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let (bk, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
                if sb[0] != batch || bk != k {
                    return Err(mismatch());
                }
                (MatMulKind::Batched { batch, m, k, n, trans_b }, vec![batch, m, n])
            }
            _ => return Err(mismatch()),
        };
        let mut out = Tensor::zeros(&out_shape);
        {
            let (av, bv) = (self.val(ia).data(), self.val(ib).data());
            let c = out.data_mut();
            match kind {
                MatMulKind::Shared { rows, k, n } => {
                    gemm(rows, k, n, av, row_major(k), bv, row_major(n), c, false);
                }
                MatMulKind::Batched { batch, m, k, n, trans_b } => {
                    for t in 0..batch {
                        let a_blk = &av[t * m * k..(t + 1) * m * k];
                        let b_blk = &bv[t * k * n..(t + 1) * k * n];
                        let c_blk = &mut c[t * m * n..(t + 1) * m * n];
                        let bs = if trans_b { transposed(k) } else { row_major(n) };
                        gemm(m, k, n, a_blk, row_major(k), b_blk, bs, c_blk, false);
                    }
                }
            }
        }
        Ok(self.push(out, Op::MatMul { a: ia, b: ib, kind }))
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape("add", ia, ib)?;
        let mut out = self.val(ia).clone();
        out.add_assign(self.val(ib));
        Ok(self.push(out, Op::Add(ia, ib)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.same_shape("mul", ia, ib)?;
        let mut out = self.val(ia).clone();
        for (o, y) in out.data_mut().iter_mut().zip(self.val(ib).data()) {
            *o *= y;
        }
        Ok(self.push(out, Op::Mul(ia, ib)))
    }

    /// Adds `bias: [n]` to every row of `a: [.., n]`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (ia, ib) = (self.check(a)?, self.check(bias)?);
        let n = self.val(ia).last_dim();
        if self.val(ib).shape() != [n] || self.val(ia).ndim() == 0 {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", self.val(ia).shape(), self.val(ib).shape())));
        }
        let mut out = self.val(ia).clone();
        let bv = self.val(ib).data().to_vec();
        for row in out.data_mut().chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(&bv) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddBias { a: ia, bias: ib }))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let mut out = self.val(ia).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        Ok(self.push(out, Op::Scale(ia, factor)))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let mut out = self.val(ia).clone();
        out.data_mut().iter_mut().for_each(|v| *v = f(*v));
        Ok(self.push(out, op(ia)))
    }

    /// Rectified linear unit; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary(a, |x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()), Op::Gelu)
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let n = self.val(ia).last_dim();
        let mut out = self.val(ia).clone();
        if n > 0 {
            for row in out.data_mut().chunks_mut(n) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                row.iter_mut().for_each(|v| *v /= total);
            }
        }
        Ok(self.push(out, Op::Softmax(ia)))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, AutodiffError> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let d = self.val(ix).last_dim();
        if self.val(ig).shape() != [d] || self.val(ib).shape() != [d] || d == 0 {
            return Err(shape_err(
                "layer_norm",
                format!(
                    "x {:?}, gamma {:?}, beta {:?}",
                    self.val(ix).shape(),
                    self.val(ig).shape(),
                    self.val(ib).shape()
                ),
            ));
        }
        let rows = self.val(ix).len() / d;
        let mut xhat = self.val(ix).data().to_vec();
        let mut inv_std = Vec::with_capacity(rows);
        for row in xhat.chunks_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * s);
            inv_std.push(s);
        }
        let (g, b) = (self.val(ig).data(), self.val(ib).data());
        let mut out = xhat.clone();
        for row in out.chunks_mut(d) {
            for c in 0..d {
                row[c] = row[c] * g[c] + b[c];
            }
        }
        let out = Tensor::new(self.val(ix).shape().to_vec(), out)?;
        let op = Op::LayerNorm { x: ix, gamma: ig, beta: ib, xhat, inv_std };
        Ok(self.push(out, op))
    }

    /// Gathers rows of `table: [v, d]` by index, giving `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var, AutodiffError> {
        let it = self.check(table)?;
        let shape = self.val(it).shape();
        if shape.len() != 2 {
            return Err(shape_err("gather", format!("table {shape:?} is not 2-D")));
        }
        let (v, d) = (shape[0], shape[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(shape_err("gather", format!("index {bad} out of range for {v} rows")));
        }
        let src = self.val(it).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(out, Op::Gather { table: it, ids: ids.to_vec() }))
    }

    /// Mean over every element, giving a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let n = self.val(ia).len();
        if n == 0 {
            return Err(AutodiffError::EmptyReduction { op: "mean" });
        }
        let m = self.val(ia).data().iter().sum::<f64>() / n as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(ia)))
    }

    /// Mean-squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var, AutodiffError> {
        let weights = vec![1.0; target.len()];
        self.weighted_mse(pred, target, &weights)
    }

    /// `sum w (p - t)^2 / sum w`; weights are constants (e.g. a 0/1 mask).
    pub fn weighted_mse(&mut self, pred: Var, target: &Tensor, weights: &[f64]) -> Result<Var, AutodiffError> {
        let ip = self.check(pred)?;
        let p = self.val(ip);
        if p.len() != target.len() || weights.len() != target.len() {
            return Err(shape_err(
                "mse",
                format!("pred {:?}, target {:?}, weights {}", p.shape(), target.shape(), weights.len()),
            ));
        }
        let total_weight: f64 = weights.iter().sum();
        if total_weight <= 0.0 {
            return Err(AutodiffError::EmptyReduction { op: "mse" });
        }
        let loss =
            p.data().iter().zip(target.data()).zip(weights).map(|((p, t), w)| w * (p - t) * (p - t)).sum::<f64>()
                / total_weight;
        let op = Op::WeightedMse { pred: ip, target: target.data().to_vec(), weights: weights.to_vec(), total_weight };
        Ok(self.push(Tensor::scalar(loss), op))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels, with the
    /// probabilities clamped to `[BCE_EPS, 1 - BCE_EPS]`.
    pub fn bce(&mut self, prob: Var, labels: &[f64]) -> Result<Var, AutodiffError> {
        let ip = self.check(prob)?;
        let p = self.val(ip);
        if p.len() != labels.len() || labels.is_empty() {
            return Err(shape_err("bce", format!("prob {:?}, labels {}", p.shape(), labels.len())));
        }
        let loss = p
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let q = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * q.ln() + (1.0 - y) * (1.0 - q).ln())
            })
            .sum::<f64>()
            / labels.len() as f64;
        Ok(self.push(Tensor::scalar(loss), Op::Bce { prob: ip, labels: labels.to_vec() }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let out = self.val(ia).clone().reshaped(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(ia)))
    }

    /// `[a, b, c, d] -> [a, c, b, d]`.
    pub fn swap_axes12(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let shape = self.val(ia).shape();
        if shape.len() != 4 {
            return Err(shape_err("swap_axes12", format!("{shape:?} is not 4-D")));
        }
        let dims = [shape[0], shape[1], shape[2], shape[3]];
        let out = swap12(self.val(ia).data(), dims);
        let out = Tensor::new(vec![dims[0], dims[2], dims[1], dims[3]], out)?;
        Ok(self.push(out, Op::SwapAxes12 { a: ia, dims }))
    }

    /// Replaces every row `r` of `a: [.., d]` with `fill: [d]` where `mask[r]`.
    pub fn mask_rows(&mut self, a: Var, fill: Var, mask: &[bool]) -> Result<Var, AutodiffError> {
        let (ia, ifl) = (self.check(a)?, self.check(fill)?);
        let d = self.val(ia).last_dim();
        let rows = self.val(ia).len() / d.max(1);
        if self.val(ifl).shape() != [d] || mask.len() != rows {
            return Err(shape_err(
                "mask_rows",
                format!("{:?} fill {:?} mask {}", self.val(ia).shape(), self.val(ifl).shape(), mask.len()),
            ));
        }
        let fill_v = self.val(ifl).data().to_vec();
        let mut out = self.val(ia).clone();
        for (row, &m) in out.data_mut().chunks_mut(d).zip(mask) {
            if m {
                row.copy_from_slice(&fill_v);
            }
        }
        Ok(self.push(out, Op::MaskRows { a: ia, fill: ifl, mask: mask.to_vec() }))
    }

    /// Sum of the listed flat elements of `a`, giving a scalar. With one index
    /// this selects a single element.
    pub fn pick_sum(&mut self, a: Var, picks: &[usize]) -> Result<Var, AutodiffError> {
        let ia = self.check(a)?;
        let n = self.val(ia).len();
        if let Some(bad) = picks.iter().find(|&&p| p >= n) {
            return Err(shape_err("pick_sum", format!("index {bad} out of range for {n} elements")));
        }
        let v = self.val(ia).data();
        let s = picks.iter().map(|&p| v[p]).sum();
        Ok(self.push(Tensor::scalar(s), Op::PickSum { a: ia, picks: picks.to_vec() }))
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients are returned for
    /// leaves only and accumulate in fixed reverse tape order.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let il = self.check(loss)?;
        if !self.recording {
            return Err(AutodiffError::NotRecording);
        }
        let seed_shape = self.val(il).shape();
        if self.val(il).len() != 1 {
            return Err(AutodiffError::NotScalar { shape: seed_shape.to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..=il).map(|_| None).collect();
        grads[il] = Some(Tensor::full(seed_shape, 1.0));

        for i in (0..=il).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
        }
        grads.resize_with(self.nodes.len(), || None);
        Ok(Gradients { tape: self.id, grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), AutodiffError> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Detached => return Err(AutodiffError::NotRecording),
            Op::MatMul { a, b, kind } => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                match *kind {
                    MatMulKind::Shared { rows, k, n } => {
                        // dA = dC B^T ; dB = A^T dC
                        gemm(rows, n, k, gd, row_major(n), bv, transposed(n), &mut ga, false);
                        gemm(k, rows, n, av, transposed(k), gd, row_major(n), &mut gb, false);
                    }
                    MatMulKind::Batched { batch, m, k, n, trans_b } => {
                        for t in 0..batch {
                            let a_blk = &av[t * m * k..(t + 1) * m * k];
                            let b_blk = &bv[t * k * n..(t + 1) * k * n];
                            let g_blk = &gd[t * m * n..(t + 1) * m * n];
                            let ga_blk = &mut ga[t * m * k..(t + 1) * m * k];
                            if trans_b {
                                // C = A B^T with B: [n, k]. dA = dC B ; dB = dC^T A
                                gemm(m, n, k, g_blk, row_major(n), b_blk, row_major(k), ga_blk, false);
                                let gb_blk = &mut gb[t * k * n..(t + 1) * k * n];
                                gemm(n, m, k, g_blk, transposed(n), a_blk, row_major(k), gb_blk, false);
                            } else {
                                gemm(m, n, k, g_blk, row_major(n), b_blk, transposed(n), ga_blk, false);
                                let gb_blk = &mut gb[t * k * n..(t + 1) * k * n];
                                gemm(k, m, n, a_blk, transposed(k), g_blk, row_major(n), gb_blk, false);
                            }
                        }
                    }
                }
                accumulate(grads, *a, self.val(*a).shape(), ga)?;
                accumulate(grads, *b, self.val(*b).shape(), gb)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.shape(), gd.to_vec())?;
                accumulate(grads, *b, g.shape(), gd.to_vec())?;
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                let ga = gd.iter().zip(bv).map(|(g, y)| g * y).collect();
                let gb = gd.iter().zip(av).map(|(g, x)| g * x).collect();
                accumulate(grads, *a, g.shape(), ga)?;
                accumulate(grads, *b, g.shape(), gb)?;
            }
            Op::AddBias { a, bias } => {
                let n = g.last_dim();
                let mut gb = vec![0.0; n];
                for row in gd.chunks(n) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(grads, *a, g.shape(), gd.to_vec())?;
                accumulate(grads, *bias, &[n], gb)?;
            }
            Op::Scale(a, factor) => {
                accumulate(grads, *a, g.shape(), gd.iter().map(|v| v * factor).collect())?;
            }
            Op::Relu(a) => {
                let x = self.val(*a).data();
                let ga = gd.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                accumulate(grads, *a, g.shape(), ga)?;
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let ga = gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                accumulate(grads, *a, g.shape(), ga)?;
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let ga = gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                accumulate(grads, *a, g.shape(), ga)?;
            }
            Op::Gelu(a) => {
                let x = self.val(*a).data();
                let ga = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                        g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .collect();
                accumulate(grads, *a, g.shape(), ga)?;
            }
            Op::Softmax(a) => {
                let n = g.last_dim();
                let y = node.value.data();
                let mut ga = vec![0.0; y.len()];
                for ((gr, yr), out) in gd.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for c in 0..n {
                        out[c] = yr[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *a, g.shape(), ga)?;
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let d = g.last_dim();
                let gam = self.val(*gamma).data();
                let mut gx = vec![0.0; xhat.len()];
                let mut gg = vec![0.0; d];
                let mut gbeta = vec![0.0; d];
                for (r, ((gr, xr), out)) in gd.chunks(d).zip(xhat.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for c in 0..d {
                        gg[c] += gr[c] * xr[c];
                        gbeta[c] += gr[c];
                        let dxh = gr[c] * gam[c];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xr[c];
                    }
                    mean_dxhat /= d as f64;
                    mean_dxhat_xhat /= d as f64;
                    for c in 0..d {
                        let dxh = gr[c] * gam[c];
                        out[c] = inv_std[r] * (dxh - mean_dxhat - xr[c] * mean_dxhat_xhat);
                    }
                }
                accumulate(grads, *x, g.shape(), gx)?;
                accumulate(grads, *gamma, &[d], gg)?;
                accumulate(grads, *beta, &[d], gbeta)?;
            }
            Op::Gather { table, ids } => {
                let shape = self.val(*table).shape();
                let d = shape[1];
                let mut gt = vec![0.0; shape[0] * d];
                for (row, &i) in gd.chunks(d).zip(ids) {
                    for (acc, v) in gt[i * d..(i + 1) * d].iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(grads, *table, shape, gt)?;
            }
            Op::Mean(a) => {
                let src = self.val(*a);
                let v = gd[0] / src.len() as f64;
                accumulate(grads, *a, src.shape(), vec![v; src.len()])?;
            }
            Op::WeightedMse { pred, target, weights, total_weight } => {
                let p = self.val(*pred);
                let scale = 2.0 * gd[0] / total_weight;
                let gp = p.data().iter().zip(target).zip(weights).map(|((p, t), w)| scale * w * (p - t)).collect();
                accumulate(grads, *pred, p.shape(), gp)?;
            }
            Op::Bce { prob, labels } => {
                let p = self.val(*prob);
                let n = labels.len() as f64;
                let gp = p
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&p, &y)| {
                        if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                            0.0
                        } else {
                            gd[0] * (-y / p + (1.0 - y) / (1.0 - p)) / n
                        }
                    })
                    .collect();
                accumulate(grads, *prob, p.shape(), gp)?;
            }
            Op::Reshape(a) => {
                accumulate(grads, *a, self.val(*a).shape(), gd.to_vec())?;
            }
            Op::SwapAxes12 { a, dims } => {
                let back = swap12(gd, [dims[0], dims[2], dims[1], dims[3]]);
                accumulate(grads, *a, self.val(*a).shape(), back)?;
            }
            Op::MaskRows { a, fill, mask } => {
                let d = g.last_dim();
                let mut ga = gd.to_vec();
                let mut gf = vec![0.0; d];
                for (row, &m) in ga.chunks_mut(d).zip(mask) {
                    if m {
                        for (acc, v) in gf.iter_mut().zip(row.iter()) {
                            *acc += v;
                        }
                        row.fill(0.0);
                    }
                }
                accumulate(grads, *a, g.shape(), ga)?;
                accumulate(grads, *fill, &[d], gf)?;
            }
            Op::PickSum { a, picks } => {
                let src = self.val(*a);
                let mut ga = vec![0.0; src.len()];
                for &p in picks {
                    ga[p] += gd[0];
                }
                accumulate(grads, *a, src.shape(), ga)?;
            }
        }
        Ok(())
    }
}

fn accumulate(
    grads: &mut [Option<Tensor>],
    index: usize,
    shape: &[usize],
    data: Vec<f64>,
) -> Result<(), AutodiffError> {
    match &mut grads[index] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(&data) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape.to_vec(), data)?),
    }
    Ok(())
}

fn swap12(src: &[f64], [a, b, c, d]: [usize; 4]) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for i0 in 0..a {
        for i1 in 0..b {
            for i2 in 0..c {
                let s = ((i0 * b + i1) * c + i2) * d;
                let t = ((i0 * c + i2) * b + i1) * d;
                out[t..t + d].copy_from_slice(&src[s..s + d]);
            }
        }
    }
    out
}
