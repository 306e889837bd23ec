//! Dynamic reverse-mode autodiff tape.
//!
//! A [`Graph`] records every operation of one forward pass. [`Graph::backward`]
//! replays the tape in reverse with numeric vector-Jacobian products.
//! [`Graph::grad_graph`] instead appends the backward pass to the tape as new
//! differentiable nodes, so a gradient can itself be differentiated (used by
//! the gradient-matching attack). A graph is confined to one thread.

use super::kernels::{col2im, gemm, im2col, ConvGeom, Layout};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
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
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowVec(Var, Var),
    AddColVec(Var, Var),
    SumRows(Var),
    SumCols(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    ExpandScalar(Var),
    Transpose(Var),
    Reshape(Var),
    SwapAxes01 { x: Var, dims: [usize; 3] },
    ConcatCols(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Sum(Var),
    Im2col { x: Var, geom: ConvGeom },
    Col2im { x: Var, geom: ConvGeom },
    Gather { x: Var, idx: Vec<usize> },
    ScatterAdd { x: Var, idx: Vec<usize> },
    Softmax(Var),
    LogSoftmax(Var),
    CrossEntropy { logits: Var, labels: Vec<usize> },
    Kl { p: Var, q: Var, weights: Option<Vec<f64>> },
    MseRows(Var, Var),
    PairwiseDist(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Per-feature statistics of a training-mode batch-norm pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased batch variance (used for running-statistics updates).
    pub var_unbiased: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn log_softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = x - lse;
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Constant copy of `v`'s current value (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2(op)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    // ----- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}x{k}] * [{k2}x{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            Layout::Normal,
            self.value(b).data(),
            Layout::Normal,
            0.0,
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `x * w^T + b` for `x: [B, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (batch, fan_in) = self.dims2(x, "linear")?;
        let (fan_out, w_in) = self.dims2(w, "linear")?;
        if w_in != fan_in {
            return Err(Error::shape(
                "linear",
                format!("input width {fan_in} vs weight [{fan_out}x{w_in}]"),
            ));
        }
        let mut out = vec![0.0; batch * fan_out];
        gemm(
            batch,
            fan_in,
            fan_out,
            self.value(x).data(),
            Layout::Normal,
            self.value(w).data(),
            Layout::Transposed,
            0.0,
            &mut out,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            if bias.len() != fan_out {
                return Err(Error::shape("linear", "bias length"));
            }
            for row in out.chunks_mut(fan_out) {
                add_into(row, bias);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(vec![batch, fan_out], out)?, Op::Linear { x, w, b }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "transpose")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(x), rg))
    }

    // ----- elementwise ----------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let value = self.value(a).zip_map(self.value(b), f)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, c), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        let rg = self.rg(x);
        self.push(value, Op::Exp(x), rg)
    }

    // ----- broadcasting and reductions ------------------------------------

    /// `x[m, n] + v[n]` on every row.
    pub fn add_row_vec(&mut self, x: Var, v: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "add_row_vec")?;
        if self.value(v).numel() != n {
            return Err(Error::shape("add_row_vec", "vector length"));
        }
        let mut value = self.value(x).clone();
        let vd = self.value(v).data().to_vec();
        for row in value.data_mut().chunks_mut(n) {
            add_into(row, &vd);
        }
        let rg = self.rg(x) || self.rg(v);
        Ok(self.push(value, Op::AddRowVec(x, v), rg))
    }

    /// `x[m, n] + v[m]` on every column.
    pub fn add_col_vec(&mut self, x: Var, v: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "add_col_vec")?;
        if self.value(v).numel() != m {
            return Err(Error::shape("add_col_vec", "vector length"));
        }
        let mut value = self.value(x).clone();
        let vd = self.value(v).data().to_vec();
        for (row, &c) in value.data_mut().chunks_mut(n).zip(&vd) {
            for r in row {
                *r += c;
            }
        }
        let rg = self.rg(x) || self.rg(v);
        Ok(self.push(value, Op::AddColVec(x, v), rg))
    }

    /// Column sums: `[m, n] -> [n]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let (_, n) = self.dims2(x, "sum_rows")?;
        let mut out = vec![0.0; n];
        for row in self.value(x).data().chunks(n.max(1)) {
            add_into(&mut out, row);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![n], out)?, Op::SumRows(x), rg))
    }

    /// Row sums: `[m, n] -> [m]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "sum_cols")?;
        let out: Vec<f64> = if n == 0 {
            vec![0.0; m]
        } else {
            self.value(x).data().chunks(n).map(|r| r.iter().sum()).collect()
        };
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![m], out)?, Op::SumCols(x), rg))
    }

    /// `[n] -> [m, n]` by repeating rows.
    pub fn broadcast_rows(&mut self, v: Var, m: usize) -> Var {
        let vd = self.value(v).data();
        let n = vd.len();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(vd);
        }
        let rg = self.rg(v);
        self.push(Tensor::new(vec![m, n], out).expect("shape"), Op::BroadcastRows(v), rg)
    }

    /// `[m] -> [m, n]` by repeating columns.
    pub fn broadcast_cols(&mut self, v: Var, n: usize) -> Var {
        let vd = self.value(v).data();
        let m = vd.len();
        let mut out = Vec::with_capacity(m * n);
        for &x in vd {
            out.extend(std::iter::repeat_n(x, n));
        }
        let rg = self.rg(v);
        self.push(Tensor::new(vec![m, n], out).expect("shape"), Op::BroadcastCols(v), rg)
    }

    pub fn expand_scalar(&mut self, s: Var, shape: &[usize]) -> Var {
        let value = Tensor::full(shape, self.value(s).item());
        let rg = self.rg(s);
        self.push(value, Op::ExpandScalar(s), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    // ----- shape manipulation ---------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Flattens all but the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let b = shape.first().copied().unwrap_or(1);
        let rest = self.value(x).numel() / b.max(1);
        self.reshape(x, &[b, rest])
    }

    /// `[a, b, c] -> [b, a, c]`.
    pub fn swap_axes01(&mut self, x: Var, dims: [usize; 3]) -> Result<Var> {
        let [a, b, c] = dims;
        if self.value(x).numel() != a * b * c {
            return Err(Error::shape("swap_axes01", format!("{dims:?}")));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; a * b * c];
        for i in 0..a {
            for j in 0..b {
                out[(j * a + i) * c..(j * a + i + 1) * c]
                    .copy_from_slice(&src[(i * b + j) * c..(i * b + j + 1) * c]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![b, a, c], out)?, Op::SwapAxes01 { x, dims }, rg))
    }

    /// `[m, p] ++ [m, q] -> [m, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.dims2(a, "concat_cols")?;
        let (m2, q) = self.dims2(b, "concat_cols")?;
        if m != m2 {
            return Err(Error::shape("concat_cols", format!("{m} vs {m2} rows")));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(m * (p + q));
        for i in 0..m {
            out.extend_from_slice(&ad[i * p..(i + 1) * p]);
            out.extend_from_slice(&bd[i * q..(i + 1) * q]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, p + q], out)?, Op::ConcatCols(a, b), rg))
    }

    pub fn im2col(&mut self, x: Var, geom: ConvGeom) -> Result<Var> {
        if self.value(x).numel() != geom.input_len() {
            return Err(Error::shape("im2col", format!("{geom:?}")));
        }
        let mut out = vec![0.0; geom.col_rows() * geom.col_cols()];
        im2col(&geom, self.value(x).data(), &mut out);
        let rg = self.rg(x);
        let t = Tensor::new(vec![geom.col_rows(), geom.col_cols()], out)?;
        Ok(self.push(t, Op::Im2col { x, geom }, rg))
    }

    pub fn col2im(&mut self, x: Var, geom: ConvGeom) -> Result<Var> {
        if self.value(x).numel() != geom.col_rows() * geom.col_cols() {
            return Err(Error::shape("col2im", format!("{geom:?}")));
        }
        let mut out = vec![0.0; geom.input_len()];
        col2im(&geom, self.value(x).data(), &mut out);
        let rg = self.rg(x);
        let t = Tensor::new(
            vec![geom.batch, geom.channels, geom.height, geom.width],
            out,
        )?;
        Ok(self.push(t, Op::Col2im { x, geom }, rg))
    }

    /// `out[o] = x.flat[idx[o]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if idx.iter().any(|&i| i >= src.len()) {
            return Err(Error::shape("gather", "index out of range"));
        }
        let out: Vec<f64> = idx.iter().map(|&i| src[i]).collect();
        let t = Tensor::new(shape.to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Gather { x, idx }, rg))
    }

    /// `out.flat[idx[i]] += x.flat[i]`, output shaped `shape`.
    pub fn scatter_add(&mut self, x: Var, idx: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let src = self.value(x).data();
        if idx.len() != src.len() || idx.iter().any(|&i| i >= n) {
            return Err(Error::shape("scatter_add", "index map"));
        }
        let mut out = vec![0.0; n];
        for (&i, &v) in idx.iter().zip(src) {
            out[i] += v;
        }
        let t = Tensor::new(shape.to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::ScatterAdd { x, idx }, rg))
    }

    // ----- neural layers --------------------------------------------------

    /// Valid-padding, stride-1 cross-correlation plus per-channel bias.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (b, c, h, w) = match *self.value(x).shape() {
            [b, c, h, w] => (b, c, h, w),
            ref s => return Err(Error::shape("conv2d", format!("input {s:?}"))),
        };
        let (c_out, k) = match *self.value(kernel).shape() {
            [co, ci, k1, k2] if ci == c && k1 == k2 => (co, k1),
            ref s => return Err(Error::shape("conv2d", format!("kernel {s:?} for {c} channels"))),
        };
        if k > h || k > w || k == 0 {
            return Err(Error::shape("conv2d", format!("kernel {k} larger than input {h}x{w}")));
        }
        if self.value(bias).numel() != c_out {
            return Err(Error::shape("conv2d", "bias length"));
        }
        let geom = ConvGeom {
            batch: b,
            channels: c,
            height: h,
            width: w,
            kernel: k,
        };
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let cols = self.im2col(x, geom)?;
        let kmat = self.reshape(kernel, &[c_out, c * k * k])?;
        let y = self.matmul(kmat, cols)?;
        let y = self.add_col_vec(y, bias)?;
        let y = self.swap_axes01(y, [c_out, b, oh * ow])?;
        self.reshape(y, &[b, c_out, oh, ow])
    }

    /// 2x2 max pooling with stride 2; ties go to the first element in
    /// row-major window order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = match *self.value(x).shape() {
            [b, c, h, w] if h >= 2 && w >= 2 => (b, c, h, w),
            ref s => return Err(Error::shape("maxpool2", format!("input {s:?}"))),
        };
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut idx = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let cand = base + (2 * i + di) * w + 2 * j + dj;
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    idx.push(best);
                }
            }
        }
        self.gather(x, idx, &[b, c, oh, ow])
    }

    /// Training-mode batch normalization over the batch axis of `x: [B, n]`.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (bsz, n) = self.dims2(x, "batchnorm1d")?;
        if bsz < 2 {
            return Err(Error::InvalidBatch {
                op: "batchnorm1d",
                detail: format!("training mode needs batch size >= 2, got {bsz}"),
            });
        }
        let xd = self.value(x).data();
        let mut mean = vec![0.0; n];
        for row in xd.chunks(n) {
            add_into(&mut mean, row);
        }
        for m in &mut mean {
            *m /= bsz as f64;
        }
        let mut var = vec![0.0; n];
        for row in xd.chunks(n) {
            for j in 0..n {
                let d = row[j] - mean[j];
                var[j] += d * d;
            }
        }
        let var_unbiased: Vec<f64> = var.iter().map(|v| v / (bsz - 1) as f64).collect();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / bsz as f64 + eps).sqrt()).collect();
        let stats = BatchStats { mean, var_unbiased };
        let v = self.batchnorm_apply(x, gamma, beta, &stats.mean, inv_std, true)?;
        Ok((v, stats))
    }

    /// Inference-mode batch normalization with fixed running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.batchnorm_apply(x, gamma, beta, running_mean, inv_std, false)
    }

    fn batchnorm_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        train: bool,
    ) -> Result<Var> {
        let (_, n) = self.dims2(x, "batchnorm1d")?;
        if self.value(gamma).numel() != n || self.value(beta).numel() != n || mean.len() != n {
            return Err(Error::shape("batchnorm1d", "feature count"));
        }
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = self.value(x).data().to_vec();
        for row in xhat.chunks_mut(n) {
            for j in 0..n {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        let mut out = xhat.clone();
        for row in out.chunks_mut(n) {
            for j in 0..n {
                row[j] = g[j] * row[j] + bt[j];
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            rg,
        ))
    }

    // ----- probabilities and losses ---------------------------------------

    fn check_finite(&self, v: Var, op: &str) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(op.to_string()))
        }
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check_finite(x, "softmax")?;
        let (_, c) = self.dims2(x, "softmax")?;
        let mut out = vec![0.0; self.value(x).numel()];
        for (row, o) in self.value(x).data().chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(row, o);
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Softmax(x), rg))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.check_finite(x, "log_softmax")?;
        let (_, c) = self.dims2(x, "log_softmax")?;
        let mut out = vec![0.0; self.value(x).numel()];
        for (row, o) in self.value(x).data().chunks(c).zip(out.chunks_mut(c)) {
            log_softmax_row(row, o);
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::LogSoftmax(x), rg))
    }

    /// Batch-mean cross entropy of `logits: [B, c]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check_finite(logits, "cross_entropy")?;
        let (b, c) = self.dims2(logits, "cross_entropy")?;
        if labels.len() != b {
            return Err(Error::shape("cross_entropy", format!("{b} rows, {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut tmp = vec![0.0; c];
        let mut total = 0.0;
        for (row, &y) in self.value(logits).data().chunks(c).zip(labels) {
            log_softmax_row(row, &mut tmp);
            total -= tmp[y];
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / b as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Batch mean of `w_b * KL(softmax(p_b) || softmax(q_b))`.
    pub fn kl_div(&mut self, p: Var, q: Var, weights: Option<Vec<f64>>) -> Result<Var> {
        self.same_shape(p, q, "kl_div")?;
        self.check_finite(p, "kl_div")?;
        self.check_finite(q, "kl_div")?;
        let (b, c) = self.dims2(p, "kl_div")?;
        if weights.as_ref().is_some_and(|w| w.len() != b) {
            return Err(Error::shape("kl_div", "weight count"));
        }
        let (mut lp, mut lq) = (vec![0.0; c], vec![0.0; c]);
        let mut total = 0.0;
        let (pd, qd) = (self.value(p).data(), self.value(q).data());
        for i in 0..b {
            log_softmax_row(&pd[i * c..(i + 1) * c], &mut lp);
            log_softmax_row(&qd[i * c..(i + 1) * c], &mut lq);
            let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
            total += weights.as_ref().map_or(1.0, |w| w[i]) * kl;
        }
        let rg = self.rg(p) || self.rg(q);
        Ok(self.push(Tensor::scalar(total / b as f64), Op::Kl { p, q, weights }, rg))
    }

    /// Batch mean of the squared L2 row distance.
    pub fn mse_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse_rows")?;
        let (rows, _) = self.dims2(a, "mse_rows")?;
        let total: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::scalar(total / rows.max(1) as f64), Op::MseRows(a, b), rg))
    }

    /// Euclidean distance matrix between the rows of `x: [B, d]`.
    pub fn pairwise_dist(&mut self, x: Var) -> Result<Var> {
        let (b, d) = self.dims2(x, "pairwise_dist")?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; b * b];
        for j in 0..b {
            for k in (j + 1)..b {
                let s: f64 = xd[j * d..(j + 1) * d]
                    .iter()
                    .zip(&xd[k * d..(k + 1) * d])
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum();
                let dist = s.sqrt();
                out[j * b + k] = dist;
                out[k * b + j] = dist;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![b, b], out)?, Op::PairwiseDist(x), rg))
    }

    // ----- reverse pass ---------------------------------------------------

    /// Numeric reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward", "loss must be a scalar"));
        }
        let end = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; end];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..end).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.vjp(i, &gy, &mut grads);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes[..end].iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn vjp(&self, i: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        // Gradient buffer for `v`, or None when `v` needs no gradient.
        macro_rules! buf {
            ($v:expr) => {{
                let v: Var = $v;
                if self.nodes[v.0].requires_grad {
                    let n = self.nodes[v.0].value.numel();
                    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (shape(*a)[0], shape(*a)[1]);
                let n = shape(*b)[1];
                if let Some(ga) = buf!(*a) {
                    gemm(m, n, k, gy, Layout::Normal, val(*b), Layout::Transposed, 1.0, ga);
                }
                if let Some(gb) = buf!(*b) {
                    gemm(k, m, n, val(*a), Layout::Transposed, gy, Layout::Normal, 1.0, gb);
                }
            }
            Op::Linear { x, w, b } => {
                let (batch, fan_in) = (shape(*x)[0], shape(*x)[1]);
                let fan_out = shape(*w)[0];
                if let Some(gx) = buf!(*x) {
                    gemm(batch, fan_out, fan_in, gy, Layout::Normal, val(*w), Layout::Normal, 1.0, gx);
                }
                if let Some(gw) = buf!(*w) {
                    gemm(fan_out, batch, fan_in, gy, Layout::Transposed, val(*x), Layout::Normal, 1.0, gw);
                }
                if let Some(b) = b {
                    if let Some(gb) = buf!(*b) {
                        for row in gy.chunks(fan_out) {
                            add_into(gb, row);
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = buf!(*a) {
                    add_into(ga, gy);
                }
                if let Some(gb) = buf!(*b) {
                    add_into(gb, gy);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = buf!(*a) {
                    add_into(ga, gy);
                }
                if let Some(gb) = buf!(*b) {
                    for (g, d) in gb.iter_mut().zip(gy) {
                        *g -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = buf!(*a) {
                    for ((g, d), y) in ga.iter_mut().zip(gy).zip(val(*b)) {
                        *g += d * y;
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for ((g, d), x) in gb.iter_mut().zip(gy).zip(val(*a)) {
                        *g += d * x;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(gx) = buf!(*x) {
                    for (g, d) in gx.iter_mut().zip(gy) {
                        *g += c * d;
                    }
                }
            }
            Op::AddRowVec(x, v) => {
                let n = shape(*v).iter().product::<usize>();
                if let Some(gx) = buf!(*x) {
                    add_into(gx, gy);
                }
                if let Some(gv) = buf!(*v) {
                    for row in gy.chunks(n) {
                        add_into(gv, row);
                    }
                }
            }
            Op::AddColVec(x, v) => {
                let n = shape(*x)[1];
                if let Some(gx) = buf!(*x) {
                    add_into(gx, gy);
                }
                if let Some(gv) = buf!(*v) {
                    for (g, row) in gv.iter_mut().zip(gy.chunks(n)) {
                        *g += row.iter().sum::<f64>();
                    }
                }
            }
            Op::SumRows(x) => {
                let n = gy.len();
                if let Some(gx) = buf!(*x) {
                    for row in gx.chunks_mut(n) {
                        add_into(row, gy);
                    }
                }
            }
            Op::SumCols(x) => {
                let n = shape(*x)[1];
                if let Some(gx) = buf!(*x) {
                    for (row, d) in gx.chunks_mut(n).zip(gy) {
                        for r in row {
                            *r += d;
                        }
                    }
                }
            }
            Op::BroadcastRows(v) => {
                let n = val(*v).len();
                if let Some(gv) = buf!(*v) {
                    for row in gy.chunks(n) {
                        add_into(gv, row);
                    }
                }
            }
            Op::BroadcastCols(v) => {
                let n = node.value.shape()[1];
                if let Some(gv) = buf!(*v) {
                    for (g, row) in gv.iter_mut().zip(gy.chunks(n)) {
                        *g += row.iter().sum::<f64>();
                    }
                }
            }
            Op::ExpandScalar(s) => {
                if let Some(gs) = buf!(*s) {
                    gs[0] += gy.iter().sum::<f64>();
                }
            }
            Op::Transpose(x) => {
                let (m, n) = (shape(*x)[0], shape(*x)[1]);
                if let Some(gx) = buf!(*x) {
                    for i in 0..m {
                        for j in 0..n {
                            gx[i * n + j] += gy[j * m + i];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = buf!(*x) {
                    add_into(gx, gy);
                }
            }
            Op::SwapAxes01 { x, dims } => {
                let [a, b, c] = *dims;
                if let Some(gx) = buf!(*x) {
                    for i in 0..a {
                        for j in 0..b {
                            add_into(
                                &mut gx[(i * b + j) * c..(i * b + j + 1) * c],
                                &gy[(j * a + i) * c..(j * a + i + 1) * c],
                            );
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let p = shape(*a)[1];
                let q = shape(*b)[1];
                let rows = shape(*a)[0];
                if let Some(ga) = buf!(*a) {
                    for r in 0..rows {
                        add_into(&mut ga[r * p..(r + 1) * p], &gy[r * (p + q)..r * (p + q) + p]);
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for r in 0..rows {
                        add_into(&mut gb[r * q..(r + 1) * q], &gy[r * (p + q) + p..(r + 1) * (p + q)]);
                    }
                }
            }
            Op::Relu(x) => {
                if let Some(gx) = buf!(*x) {
                    for ((g, d), y) in gx.iter_mut().zip(gy).zip(out) {
                        if *y > 0.0 {
                            *g += d;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = buf!(*x) {
                    for ((g, d), s) in gx.iter_mut().zip(gy).zip(out) {
                        *g += d * s * (1.0 - s);
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(gx) = buf!(*x) {
                    for ((g, d), y) in gx.iter_mut().zip(gy).zip(out) {
                        *g += d * y;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = buf!(*x) {
                    for g in gx.iter_mut() {
                        *g += gy[0];
                    }
                }
            }
            Op::Im2col { x, geom } => {
                if let Some(gx) = buf!(*x) {
                    col2im(geom, gy, gx);
                }
            }
            Op::Col2im { x, geom } => {
                if let Some(gx) = buf!(*x) {
                    let mut cols = vec![0.0; geom.col_rows() * geom.col_cols()];
                    im2col(geom, gy, &mut cols);
                    add_into(gx, &cols);
                }
            }
            Op::Gather { x, idx } => {
                if let Some(gx) = buf!(*x) {
                    for (&j, d) in idx.iter().zip(gy) {
                        gx[j] += d;
                    }
                }
            }
            Op::ScatterAdd { x, idx } => {
                if let Some(gx) = buf!(*x) {
                    for (g, &j) in gx.iter_mut().zip(idx) {
                        *g += gy[j];
                    }
                }
            }
            Op::Softmax(x) => {
                let c = node.value.shape()[1];
                if let Some(gx) = buf!(*x) {
                    for ((g, d), s) in gx.chunks_mut(c).zip(gy.chunks(c)).zip(out.chunks(c)) {
                        let dot: f64 = d.iter().zip(s).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            g[j] += s[j] * (d[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                let c = node.value.shape()[1];
                if let Some(gx) = buf!(*x) {
                    for ((g, d), l) in gx.chunks_mut(c).zip(gy.chunks(c)).zip(out.chunks(c)) {
                        let total: f64 = d.iter().sum();
                        for j in 0..c {
                            g[j] += d[j] - l[j].exp() * total;
                        }
                    }
                }
            }
            Op::CrossEntropy { logits, labels } => {
                let c = shape(*logits)[1];
                let scale = gy[0] / labels.len() as f64;
                let xd = val(*logits);
                if let Some(gx) = buf!(*logits) {
                    let mut s = vec![0.0; c];
                    for (r, &y) in labels.iter().enumerate() {
                        softmax_row(&xd[r * c..(r + 1) * c], &mut s);
                        s[y] -= 1.0;
                        for j in 0..c {
                            gx[r * c + j] += scale * s[j];
                        }
                    }
                }
            }
            Op::Kl { p, q, weights } => {
                let (b, c) = (shape(*p)[0], shape(*p)[1]);
                let (pd, qd) = (val(*p), val(*q));
                let mut lp = vec![0.0; b * c];
                let mut lq = vec![0.0; b * c];
                for r in 0..b {
                    log_softmax_row(&pd[r * c..(r + 1) * c], &mut lp[r * c..(r + 1) * c]);
                    log_softmax_row(&qd[r * c..(r + 1) * c], &mut lq[r * c..(r + 1) * c]);
                }
                let row_scale = |r: usize| gy[0] * weights.as_ref().map_or(1.0, |w| w[r]) / b as f64;
                if let Some(gp) = buf!(*p) {
                    for r in 0..b {
                        let (a, bb) = (&lp[r * c..(r + 1) * c], &lq[r * c..(r + 1) * c]);
                        let kl: f64 = a.iter().zip(bb).map(|(x, y)| x.exp() * (x - y)).sum();
                        let s = row_scale(r);
                        for j in 0..c {
                            gp[r * c + j] += s * a[j].exp() * ((a[j] - bb[j]) - kl);
                        }
                    }
                }
                if let Some(gq) = buf!(*q) {
                    for r in 0..b {
                        let s = row_scale(r);
                        for j in 0..c {
                            let k = r * c + j;
                            gq[k] += s * (lq[k].exp() - lp[k].exp());
                        }
                    }
                }
            }
            Op::MseRows(a, b) => {
                let rows = shape(*a)[0].max(1) as f64;
                let s = 2.0 * gy[0] / rows;
                let (ad, bd) = (val(*a), val(*b));
                if let Some(ga) = buf!(*a) {
                    for ((g, x), y) in ga.iter_mut().zip(ad).zip(bd) {
                        *g += s * (x - y);
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for ((g, x), y) in gb.iter_mut().zip(ad).zip(bd) {
                        *g -= s * (x - y);
                    }
                }
            }
            Op::PairwiseDist(x) => {
                let (b, d) = (shape(*x)[0], shape(*x)[1]);
                let xd = val(*x);
                if let Some(gx) = buf!(*x) {
                    for j in 0..b {
                        for k in 0..b {
                            let dist = out[j * b + k];
                            if j == k || dist <= 0.0 {
                                continue;
                            }
                            // D[j,k] and D[k,j] both depend on row j.
                            let coef = (gy[j * b + k] + gy[k * b + j]) / dist;
                            for t in 0..d {
                                gx[j * d + t] += coef * (xd[j * d + t] - xd[k * d + t]);
                            }
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let n = inv_std.len();
                let b = gy.len() / n;
                let mut sum_dy = vec![0.0; n];
                let mut sum_dy_xhat = vec![0.0; n];
                for (d, xh) in gy.chunks(n).zip(xhat.chunks(n)) {
                    for j in 0..n {
                        sum_dy[j] += d[j];
                        sum_dy_xhat[j] += d[j] * xh[j];
                    }
                }
                let g = val(*gamma);
                if let Some(gx) = buf!(*x) {
                    for ((gr, d), xh) in gx.chunks_mut(n).zip(gy.chunks(n)).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            if *train {
                                gr[j] += g[j] * inv_std[j] / b as f64
                                    * (b as f64 * d[j] - sum_dy[j] - xh[j] * sum_dy_xhat[j]);
                            } else {
                                gr[j] += d[j] * g[j] * inv_std[j];
                            }
                        }
                    }
                }
                if let Some(gg) = buf!(*gamma) {
                    add_into(gg, &sum_dy_xhat);
                }
                if let Some(gb) = buf!(*beta) {
                    add_into(gb, &sum_dy);
                }
            }
        }
    }

    /// Appends the reverse pass of `loss` to the tape as differentiable nodes
    /// and returns the gradient nodes for `wrt`.
    pub fn grad_graph(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("grad_graph", "loss must be a scalar"));
        }
        let end = loss.0 + 1;
        let mut adj: Vec<Option<Var>> = vec![None; end];
        let one = self.constant(Tensor::full(self.value(loss).shape(), 1.0));
        adj[loss.0] = Some(one);
        for i in (0..end).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(gy) = adj[i] else { continue };
            let op = self.nodes[i].op.clone();
            let me = Var(i);
            let contributions: Vec<(Var, Var)> = match op {
                Op::Leaf => vec![],
                Op::MatMul(a, b) => {
                    let mut c = vec![];
                    if self.rg(a) {
                        let bt = self.transpose(b)?;
                        c.push((a, self.matmul(gy, bt)?));
                    }
                    if self.rg(b) {
                        let at = self.transpose(a)?;
                        c.push((b, self.matmul(at, gy)?));
                    }
                    c
                }
                Op::Linear { x, w, b } => {
                    let mut c = vec![];
                    if self.rg(x) {
                        c.push((x, self.matmul(gy, w)?));
                    }
                    if self.rg(w) {
                        let gt = self.transpose(gy)?;
                        c.push((w, self.matmul(gt, x)?));
                    }
                    if let Some(b) = b.filter(|b| self.rg(*b)) {
                        c.push((b, self.sum_rows(gy)?));
                    }
                    c
                }
                Op::Add(a, b) => vec![(a, gy), (b, gy)],
                Op::Sub(a, b) => {
                    let neg = self.scale(gy, -1.0);
                    vec![(a, gy), (b, neg)]
                }
                Op::Mul(a, b) => {
                    let mut c = vec![];
                    if self.rg(a) {
                        c.push((a, self.mul(gy, b)?));
                    }
                    if self.rg(b) {
                        c.push((b, self.mul(gy, a)?));
                    }
                    c
                }
                Op::Scale(x, k) => vec![(x, self.scale(gy, k))],
                Op::AddRowVec(x, v) => {
                    let gv = self.sum_rows(gy)?;
                    let gv = self.reshape(gv, &self.value(v).shape().to_vec())?;
                    vec![(x, gy), (v, gv)]
                }
                Op::AddColVec(x, v) => {
                    let gv = self.sum_cols(gy)?;
                    let gv = self.reshape(gv, &self.value(v).shape().to_vec())?;
                    vec![(x, gy), (v, gv)]
                }
                Op::SumRows(x) => {
                    let m = self.value(x).shape()[0];
                    vec![(x, self.broadcast_rows(gy, m))]
                }
                Op::SumCols(x) => {
                    let n = self.value(x).shape()[1];
                    vec![(x, self.broadcast_cols(gy, n))]
                }
                Op::BroadcastRows(v) => vec![(v, self.sum_rows(gy)?)],
                Op::BroadcastCols(v) => vec![(v, self.sum_cols(gy)?)],
                Op::ExpandScalar(s) => {
                    let total = self.sum(gy);
                    let shape = self.value(s).shape().to_vec();
                    vec![(s, self.reshape(total, &shape)?)]
                }
                Op::Transpose(x) => vec![(x, self.transpose(gy)?)],
                Op::Reshape(x) => {
                    let shape = self.value(x).shape().to_vec();
                    vec![(x, self.reshape(gy, &shape)?)]
                }
                Op::SwapAxes01 { x, dims } => {
                    let [a, b, c] = dims;
                    let back = self.swap_axes01(gy, [b, a, c])?;
                    let shape = self.value(x).shape().to_vec();
                    vec![(x, self.reshape(back, &shape)?)]
                }
                Op::Relu(x) => {
                    let mask = self.value(me).map(|y| if y > 0.0 { 1.0 } else { 0.0 });
                    let mask = self.constant(mask);
                    vec![(x, self.mul(gy, mask)?)]
                }
                Op::Sigmoid(x) => {
                    let ss = self.mul(me, me)?;
                    let deriv = self.sub(me, ss)?;
                    vec![(x, self.mul(gy, deriv)?)]
                }
                Op::Exp(x) => vec![(x, self.mul(gy, me)?)],
                Op::Sum(x) => {
                    let shape = self.value(x).shape().to_vec();
                    vec![(x, self.expand_scalar(gy, &shape))]
                }
                Op::Im2col { x, geom } => vec![(x, self.col2im(gy, geom)?)],
                Op::Col2im { x, geom } => vec![(x, self.im2col(gy, geom)?)],
                Op::Gather { x, idx } => {
                    let shape = self.value(x).shape().to_vec();
                    vec![(x, self.scatter_add(gy, idx, &shape)?)]
                }
                Op::ScatterAdd { x, idx } => {
                    let shape = self.value(x).shape().to_vec();
                    vec![(x, self.gather(gy, idx, &shape)?)]
                }
                Op::Softmax(x) => {
                    let c = self.value(x).shape()[1];
                    let gs = self.mul(gy, me)?;
                    let dot = self.sum_cols(gs)?;
                    let dot = self.broadcast_cols(dot, c);
                    let centered = self.sub(gy, dot)?;
                    vec![(x, self.mul(me, centered)?)]
                }
                Op::LogSoftmax(x) => {
                    let c = self.value(x).shape()[1];
                    let probs = self.exp(me);
                    let total = self.sum_cols(gy)?;
                    let total = self.broadcast_cols(total, c);
                    let corr = self.mul(probs, total)?;
                    vec![(x, self.sub(gy, corr)?)]
                }
                Op::ConcatCols(..) => return Err(Error::Unsupported("concat_cols")),
                Op::CrossEntropy { .. } => return Err(Error::Unsupported("cross_entropy")),
                Op::Kl { .. } => return Err(Error::Unsupported("kl_div")),
                Op::MseRows(..) => return Err(Error::Unsupported("mse_rows")),
                Op::PairwiseDist(_) => return Err(Error::Unsupported("pairwise_dist")),
                Op::BatchNorm { .. } => return Err(Error::Unsupported("batchnorm1d")),
            };
            for (target, g) in contributions {
                if !self.rg(target) {
                    continue;
                }
                adj[target.0] = Some(match adj[target.0] {
                    Some(prev) => self.add(prev, g)?,
                    None => g,
                });
            }
        }
        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            match adj.get(w.0).copied().flatten() {
                Some(g) => out.push(g),
                None => {
                    let zeros = Tensor::zeros(self.value(w).shape());
                    out.push(self.constant(zeros));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
#[path = "graph_tests.rs"]
mod tests;
