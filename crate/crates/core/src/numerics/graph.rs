//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the tape, so inputs always precede
//! their consumers and a single reverse sweep visits each node once.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking their logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statistics of one train-mode batch-norm evaluation, per column.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance, the one used for normalization.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Hinge(Var),
    AddRow(Var, Var),
    Sum(Var),
    Mean(Var),
    SoftmaxRows(Var),
    Pick(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    PairDistances(Var, Vec<(usize, usize)>),
    Focal(Var, f64),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    NormAffine {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Ordered record of the primitive operations of one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a leaf. Gradients are tracked iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone();
        value.grad = None;
        let requires_grad = value.requires_grad;
        self.push(Op::Leaf, value, requires_grad)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut value = t;
        value.requires_grad = false;
        value.grad = None;
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        op: Op,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: &[Var],
    ) -> Result<Var> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(op, value, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta
            .dims2()
            .map_err(|_| Error::dim("matmul", ta.shape(), tb.shape()))?;
        let (k2, n) = tb
            .dims2()
            .map_err(|_| Error::dim("matmul", ta.shape(), tb.shape()))?;
        if k != k2 {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        self.push_checked("matmul", Op::MatMul(a, b), vec![m, n], out, &[a, b])
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push_checked(name, op, shape, out, &[a, b])
    }

    fn map(&mut self, name: &'static str, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = self.value(a);
        let out = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        self.push_checked(name, op, shape, out, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map("scale", a, Op::Scale(a, s), |x| s * x)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map("add_scalar", a, Op::AddScalar(a), |x| x + s)
    }

    /// `x` for `x >= 0`, `slope * x` otherwise. The derivative at 0 is 1.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.map("leaky_relu", a, Op::LeakyRelu(a, slope), |x| {
            if x >= 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    /// `max(0, x)`. The derivative at 0 is 0 (an inactive hinge).
    pub fn hinge(&mut self, a: Var) -> Result<Var> {
        self.map("hinge", a, Op::Hinge(a), |x| x.max(0.0))
    }

    /// Adds the vector `b` (length `cols`) to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let (rows, cols) = tx.dims2()?;
        if tb.numel() != cols || tb.shape().len() != 1 {
            return Err(Error::dim("add_row", tx.shape(), tb.shape()));
        }
        let mut out = tx.data().to_vec();
        for r in 0..rows {
            for (o, &bv) in out[r * cols..(r + 1) * cols].iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        self.push_checked("add_row", Op::AddRow(x, b), vec![rows, cols], out, &[x, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::Domain("sum of an empty tensor".into()));
        }
        let s = t.data().iter().sum();
        self.push_checked("sum", Op::Sum(a), vec![], vec![s], &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::Domain("mean of an empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push_checked("mean", Op::Mean(a), vec![], vec![s], &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = t.dims2()?;
        if cols == 0 {
            return Err(Error::Domain("softmax over zero columns".into()));
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            out.extend(softmax(t.row(r)));
        }
        self.push_checked("softmax", Op::SoftmaxRows(a), vec![rows, cols], out, &[a])
    }

    /// Picks `x[i, cols[i]]` for every row `i`.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (rows, width) = t.dims2()?;
        if cols.len() != rows {
            return Err(Error::dim("pick", t.shape(), &[cols.len()]));
        }
        let mut out = Vec::with_capacity(rows);
        for (r, &c) in cols.iter().enumerate() {
            if c >= width {
                return Err(Error::Index {
                    context: "pick",
                    index: c as i64,
                    limit: width as i64,
                });
            }
            out.push(t.data()[r * width + c]);
        }
        self.push_checked("pick", Op::Pick(x, cols.to_vec()), vec![rows], out, &[x])
    }

    /// Selects flat elements of `x` by position.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let n = t.numel();
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= n {
                return Err(Error::Index {
                    context: "gather",
                    index: i as i64,
                    limit: n as i64,
                });
            }
            out.push(t.data()[i]);
        }
        self.push_checked(
            "gather",
            Op::Gather(x, idx.to_vec()),
            vec![idx.len()],
            out,
            &[x],
        )
    }

    /// Euclidean distances between row pairs of `x`. The gradient at zero
    /// distance is taken as 0.
    pub fn pair_distances(&mut self, x: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let t = self.value(x);
        let (rows, _) = t.dims2()?;
        let mut out = Vec::with_capacity(pairs.len());
        for &(i, j) in pairs {
            for k in [i, j] {
                if k >= rows {
                    return Err(Error::Index {
                        context: "pair_distances",
                        index: k as i64,
                        limit: rows as i64,
                    });
                }
            }
            out.push(euclidean(t.row(i), t.row(j)));
        }
        self.push_checked(
            "pair_distances",
            Op::PairDistances(x, pairs.to_vec()),
            vec![pairs.len()],
            out,
            &[x],
        )
    }

    /// Elementwise focal term `(1 - p)^gamma * (-ln max(p, PROB_FLOOR))`.
    pub fn focal(&mut self, p: Var, gamma: f64) -> Result<Var> {
        self.map("focal", p, Op::Focal(p, gamma), |x| {
            (1.0 - x).max(0.0).powf(gamma) * -x.max(PROB_FLOOR).ln()
        })
    }

    /// Train-mode batch normalization over the rows of `x`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let t = self.value(x);
        let (rows, cols) = t.dims2()?;
        self.check_affine("batch_norm", x, gamma, beta)?;
        if rows < 2 {
            return Err(Error::BatchSize(rows));
        }
        let n = rows as f64;
        let mut mean = vec![0.0; cols];
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for (m, &v) in mean.iter_mut().zip(t.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for r in 0..rows {
            for ((s, &v), &m) in var.iter_mut().zip(t.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (xhat, out) = self.normalize(x, gamma, beta, &mean, &inv_std);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        let v = self.push_checked("batch_norm", op, vec![rows, cols], out, &[x, gamma, beta])?;
        Ok((
            v,
            BatchStats {
                mean,
                var,
                count: rows,
            },
        ))
    }

    /// Normalization with fixed statistics, as used at inference time.
    pub fn norm_affine(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (rows, cols) = self.value(x).dims2()?;
        self.check_affine("norm_affine", x, gamma, beta)?;
        if mean.len() != cols || var.len() != cols {
            return Err(Error::dim("norm_affine", &[cols], &[mean.len(), var.len()]));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (xhat, out) = self.normalize(x, gamma, beta, mean, &inv_std);
        let op = Op::NormAffine {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        self.push_checked("norm_affine", op, vec![rows, cols], out, &[x, gamma, beta])
    }

    fn check_affine(&self, op: &'static str, x: Var, gamma: Var, beta: Var) -> Result<()> {
        let (_, cols) = self.value(x).dims2()?;
        for p in [gamma, beta] {
            if self.value(p).numel() != cols {
                return Err(Error::dim(op, self.value(x).shape(), self.value(p).shape()));
            }
        }
        Ok(())
    }

    fn normalize(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let t = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let cols = mean.len();
        let mut xhat = Vec::with_capacity(t.numel());
        let mut out = Vec::with_capacity(t.numel());
        for (i, &v) in t.data().iter().enumerate() {
            let c = i % cols;
            let h = (v - mean[c]) * inv_std[c];
            xhat.push(h);
            out.push(h * g[c] + b[c]);
        }
        (xhat, out)
    }

    /// Computes d(loss)/d(leaf) for every leaf that requires gradients.
    ///
    /// Leaf gradients are overwritten on each call. Leaves that do not
    /// influence `loss` receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &gy, &mut grads);
            // Leaves keep their gradient for collection below.
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(gy);
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                node.value.grad = Some(g.unwrap_or_else(|| vec![0.0; node.value.numel()]));
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, y: &Tensor, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let g = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(g);
        };
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                acc(*a, &|g| {
                    // dA = dC * B^T
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += gy[i * n + j] * tb.data()[p * n + j];
                            }
                            g[i * k + p] += s;
                        }
                    }
                });
                acc(*b, &|g| {
                    // dB = A^T * dC
                    for i in 0..m {
                        for p in 0..k {
                            let av = ta.data()[i * k + p];
                            for j in 0..n {
                                g[p * n + j] += av * gy[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|g| add_into(g, gy));
                acc(*b, &|g| add_into(g, gy));
            }
            Op::Sub(a, b) => {
                acc(*a, &|g| add_into(g, gy));
                acc(*b, &|g| g.iter_mut().zip(gy).for_each(|(o, &d)| *o -= d));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|g| {
                    for ((o, &d), &w) in g.iter_mut().zip(gy).zip(tb) {
                        *o += d * w;
                    }
                });
                acc(*b, &|g| {
                    for ((o, &d), &w) in g.iter_mut().zip(gy).zip(ta) {
                        *o += d * w;
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &|g| {
                g.iter_mut().zip(gy).for_each(|(o, &d)| *o += s * d)
            }),
            Op::AddScalar(a) => acc(*a, &|g| add_into(g, gy)),
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                acc(*a, &|g| {
                    for ((o, &d), &xv) in g.iter_mut().zip(gy).zip(x) {
                        *o += if xv >= 0.0 { d } else { slope * d };
                    }
                });
            }
            Op::Hinge(a) => {
                let x = self.value(*a).data();
                acc(*a, &|g| {
                    for ((o, &d), &xv) in g.iter_mut().zip(gy).zip(x) {
                        if xv > 0.0 {
                            *o += d;
                        }
                    }
                });
            }
            Op::AddRow(x, b) => {
                let cols = self.value(*b).numel();
                acc(*x, &|g| add_into(g, gy));
                acc(*b, &|g| {
                    for (i, &d) in gy.iter().enumerate() {
                        g[i % cols] += d;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &|g| g.iter_mut().for_each(|o| *o += gy[0])),
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                acc(*a, &|g| g.iter_mut().for_each(|o| *o += gy[0] / n));
            }
            Op::SoftmaxRows(a) => {
                let cols = y.shape()[1];
                acc(*a, &|g| {
                    for (r, (yr, gr)) in y.data().chunks(cols).zip(gy.chunks(cols)).enumerate() {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, d)| p * d).sum();
                        for c in 0..cols {
                            g[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::Pick(x, cols) => {
                let width = self.value(*x).shape()[1];
                acc(*x, &|g| {
                    for (r, &c) in cols.iter().enumerate() {
                        g[r * width + c] += gy[r];
                    }
                });
            }
            Op::Gather(x, idx) => acc(*x, &|g| {
                for (&i, &d) in idx.iter().zip(gy) {
                    g[i] += d;
                }
            }),
            Op::PairDistances(x, pairs) => {
                let tx = self.value(*x);
                let cols = tx.shape()[1];
                acc(*x, &|g| {
                    for ((&(i, j), &dist), &d) in pairs.iter().zip(y.data()).zip(gy) {
                        if dist == 0.0 || d == 0.0 {
                            continue;
                        }
                        let (xi, xj) = (tx.row(i), tx.row(j));
                        for c in 0..cols {
                            let u = d * (xi[c] - xj[c]) / dist;
                            g[i * cols + c] += u;
                            g[j * cols + c] -= u;
                        }
                    }
                });
            }
            Op::Focal(p, gamma) => {
                let x = self.value(*p).data();
                acc(*p, &|g| {
                    for ((o, &d), &pv) in g.iter_mut().zip(gy).zip(x) {
                        *o += d * focal_derivative(pv, *gamma);
                    }
                });
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let cols = inv_std.len();
                let rows = xhat.len() / cols;
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                let mut sum_dxhat = vec![0.0; cols];
                let mut sum_dxhat_xhat = vec![0.0; cols];
                for (i, (&d, &h)) in gy.iter().zip(xhat).enumerate() {
                    let c = i % cols;
                    dgamma[c] += d * h;
                    dbeta[c] += d;
                    let dh = d * gam[c];
                    sum_dxhat[c] += dh;
                    sum_dxhat_xhat[c] += dh * h;
                }
                let n = rows as f64;
                acc(*x, &|g| {
                    for (i, (&d, &h)) in gy.iter().zip(xhat).enumerate() {
                        let c = i % cols;
                        let dh = d * gam[c];
                        g[i] += inv_std[c] / n * (n * dh - sum_dxhat[c] - h * sum_dxhat_xhat[c]);
                    }
                });
                acc(*gamma, &|g| add_into(g, &dgamma));
                acc(*beta, &|g| add_into(g, &dbeta));
            }
            Op::NormAffine {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let cols = inv_std.len();
                let gam = self.value(*gamma).data();
                acc(*x, &|g| {
                    for (i, &d) in gy.iter().enumerate() {
                        let c = i % cols;
                        g[i] += d * gam[c] * inv_std[c];
                    }
                });
                acc(*gamma, &|g| {
                    for (i, (&d, &h)) in gy.iter().zip(xhat).enumerate() {
                        g[i % cols] += d * h;
                    }
                });
                acc(*beta, &|g| {
                    for (i, &d) in gy.iter().enumerate() {
                        g[i % cols] += d;
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(o, &d)| *o += d);
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Euclidean distance between two equal-length vectors.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn focal_derivative(p: f64, gamma: f64) -> f64 {
    let q = (1.0 - p).max(0.0);
    let pc = p.max(PROB_FLOOR);
    let log_term = -pc.ln();
    // d/dp (1-p)^gamma; zero when gamma == 0 or at p == 1 (where log_term is 0).
    let weight_slope = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        -gamma * q.powf(gamma - 1.0)
    };
    let log_slope = if p >= PROB_FLOOR { -1.0 / pc } else { 0.0 };
    weight_slope * log_term + q.powf(gamma) * log_slope
}
