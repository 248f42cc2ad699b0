//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep.

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::tensor::{gelu_grad, mean_var, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRowVec(Var, Var),
    AddTiled(Var, Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
        batch_stats: bool,
    },
    Relu(Var),
    Gelu(Var),
    Dropout(Var, Vec<f64>),
    SliceBlock {
        x: Var,
        r0: usize,
        c0: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    MeanRowGroups(Var, usize),
    Sum(Var),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Running statistics and constants of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub const MOMENTUM: f64 = 0.1;
    pub const EPS: f64 = 1e-5;

    pub fn new(features: usize) -> Self {
        Self {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: Self::MOMENTUM,
            eps: Self::EPS,
        }
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by the [`Var`] they were taken with respect to.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false)
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        self.push("matmul_nt", v, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose();
        self.push("transpose", v, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    /// Adds vector `b` to every row of `x`.
    pub fn add_row_vec(&mut self, x: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(b);
        let (r, c) = xv.dims2();
        if bv.len() != c {
            return dim_err(format!("bias of length {} on {r}x{c}", bv.len()));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let v = Tensor::matrix(r, c, data)?;
        self.push("add_row_vec", v, Op::AddRowVec(x, b), &[x, b])
    }

    /// Adds the `L×n` block `p` to each consecutive group of `L` rows of `x`.
    pub fn add_tiled(&mut self, x: Var, p: Var) -> Result<Var> {
        let xv = self.value(x);
        let pv = self.value(p);
        let (r, c) = xv.dims2();
        let (pl, pc) = pv.dims2();
        if pc != c || pl == 0 || r % pl != 0 {
            return dim_err(format!("tile {pl}x{pc} onto {r}x{c}"));
        }
        let mut data = xv.data().to_vec();
        for block in data.chunks_mut(pl * c) {
            for (o, &pp) in block.iter_mut().zip(pv.data()) {
                *o += pp;
            }
        }
        let v = Tensor::matrix(r, c, data)?;
        self.push("add_tiled", v, Op::AddTiled(x, p), &[x, p])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push("scale", v, Op::Scale(a, s), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).softmax_rows();
        self.push("softmax_rows", v, Op::SoftmaxRows(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2();
        let (g, b) = (self.value(gamma), self.value(beta));
        if c == 0 || g.len() != c || b.len() != c {
            return dim_err(format!("layer_norm on {r}x{c} with gamma {} beta {}", g.len(), b.len()));
        }
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = xv.row(i);
            let (mean, var) = mean_var(row);
            rstd[i] = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                let h = (row[j] - mean) * rstd[i];
                xhat[i * c + j] = h;
                out[i * c + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let v = Tensor::matrix(r, c, out)?;
        self.push(
            "layer_norm",
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Batch norm over the rows of `x` (one row per sample). Train mode
    /// normalizes with batch statistics and folds them into `state`; eval
    /// mode uses the running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: Mode,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2();
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != c || b.len() != c || state.running_mean.len() != c {
            return dim_err(format!("batch_norm on {r}x{c}"));
        }
        if mode == Mode::Train && r < 2 {
            return Err(Error::BatchSize(r));
        }
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if mode == Mode::Train {
            let mut col = vec![0.0; r];
            for j in 0..c {
                for i in 0..r {
                    col[i] = xv.data()[i * c + j];
                }
                let (m, v) = mean_var(&col);
                mean[j] = m;
                var[j] = v;
            }
        } else {
            mean.clone_from(&state.running_mean);
            var.clone_from(&state.running_var);
        }
        let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
        let mut xhat = vec![0.0; r * c];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                let h = (xv.data()[i * c + j] - mean[j]) * rstd[j];
                xhat[i * c + j] = h;
                out[i * c + j] = h * g.data()[j] + b.data()[j];
            }
        }
        if mode == Mode::Train {
            let unbias = r as f64 / (r as f64 - 1.0);
            let m = state.momentum;
            for j in 0..c {
                state.running_mean[j] = (1.0 - m) * state.running_mean[j] + m * mean[j];
                state.running_var[j] = (1.0 - m) * state.running_var[j] + m * var[j] * unbias;
            }
        }
        let v = Tensor::matrix(r, c, out)?;
        self.push(
            "batch_norm",
            v,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                batch_stats: mode == Mode::Train,
            },
            &[x, gamma, beta],
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).relu();
        self.push("relu", v, Op::Relu(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).gelu();
        self.push("gelu", v, Op::Gelu(a), &[a])
    }

    /// Inverted dropout. Eval mode and `rate == 0` return `a` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R, mode: Mode) -> Result<Var> {
        check_dropout_rate(rate)?;
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(a);
        }
        let mask = dropout_mask(self.value(a).len(), rate, rng);
        let v = self
            .value(a)
            .zip_map(&Tensor::new(self.value(a).shape().to_vec(), mask.clone())?, |x, m| x * m)?;
        self.push("dropout", v, Op::Dropout(a, mask), &[a])
    }

    pub fn slice_block(&mut self, x: Var, r0: usize, nr: usize, c0: usize, nc: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2();
        if r0 + nr > r || c0 + nc > c {
            return dim_err(format!("block [{r0}+{nr}, {c0}+{nc}] of {r}x{c}"));
        }
        let mut data = Vec::with_capacity(nr * nc);
        for i in r0..r0 + nr {
            data.extend_from_slice(&xv.data()[i * c + c0..i * c + c0 + nc]);
        }
        let v = Tensor::matrix(nr, nc, data)?;
        self.push("slice_block", v, Op::SliceBlock { x, r0, c0 }, &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = match parts.first() {
            Some(p) => self.value(*p).cols(),
            None => return dim_err("concat of nothing"),
        };
        let mut data = Vec::new();
        let mut r = 0;
        for p in parts {
            let pv = self.value(*p);
            if pv.cols() != c {
                return dim_err("concat_rows column mismatch");
            }
            r += pv.rows();
            data.extend_from_slice(pv.data());
        }
        let v = Tensor::matrix(r, c, data)?;
        self.push("concat_rows", v, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = match parts.first() {
            Some(p) => self.value(*p).rows(),
            None => return dim_err("concat of nothing"),
        };
        if parts.iter().any(|p| self.value(*p).rows() != r) {
            return dim_err("concat_cols row mismatch");
        }
        let c: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        let v = Tensor::matrix(r, c, data)?;
        self.push("concat_cols", v, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Mean over each consecutive group of `group` rows.
    pub fn mean_row_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2();
        if group == 0 || r % group != 0 {
            return dim_err(format!("{r} rows in groups of {group}"));
        }
        let n = r / group;
        let mut data = vec![0.0; n * c];
        for i in 0..r {
            let o = &mut data[(i / group) * c..(i / group + 1) * c];
            for (d, &v) in o.iter_mut().zip(xv.row(i)) {
                *d += v / group as f64;
            }
        }
        let v = Tensor::matrix(n, c, data)?;
        self.push("mean_row_groups", v, Op::MeanRowGroups(x, group), &[x])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push("sum", v, Op::Sum(a), &[a])
    }

    /// Mean squared difference; scalar output.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.len() != t.len() {
            return dim_err(format!("mse over {} vs {}", p.len(), t.len()));
        }
        if p.is_empty() {
            return Err(Error::Domain("mse of empty input".into()));
        }
        let n = p.len() as f64;
        let l = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        self.push("mse", Tensor::scalar(l), Op::Mse(pred, target), &[pred, target])
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(dy);
                continue;
            }
            self.propagate(node, &dy, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let acc = |v: Var, g: Tensor, grads: &mut [Option<Tensor>]| {
            if !needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    acc(*a, dy.matmul_nt(val(*b))?, grads);
                }
                if needs(*b) {
                    acc(*b, val(*a).matmul_tn(dy)?, grads);
                }
            }
            Op::MatMulNt(a, b) => {
                if needs(*a) {
                    acc(*a, dy.matmul(val(*b))?, grads);
                }
                if needs(*b) {
                    acc(*b, dy.matmul_tn(val(*a))?, grads);
                }
            }
            Op::Transpose(a) => acc(*a, dy.transpose(), grads),
            Op::Add(a, b) => {
                acc(*a, dy.clone(), grads);
                acc(*b, dy.clone(), grads);
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(*a, dy.zip_map(val(*b), |g, y| g * y)?, grads);
                }
                if needs(*b) {
                    acc(*b, dy.zip_map(val(*a), |g, x| g * x)?, grads);
                }
            }
            Op::AddRowVec(x, b) => {
                acc(*x, reshape_like(dy.clone(), val(*x))?, grads);
                if needs(*b) {
                    let c = val(*b).len();
                    let mut gb = vec![0.0; c];
                    for row in dy.data().chunks(c) {
                        for (g, &d) in gb.iter_mut().zip(row) {
                            *g += d;
                        }
                    }
                    acc(*b, Tensor::new(val(*b).shape().to_vec(), gb)?, grads);
                }
            }
            Op::AddTiled(x, p) => {
                acc(*x, dy.clone(), grads);
                if needs(*p) {
                    let n = val(*p).len();
                    let mut gp = vec![0.0; n];
                    for block in dy.data().chunks(n) {
                        for (g, &d) in gp.iter_mut().zip(block) {
                            *g += d;
                        }
                    }
                    acc(*p, Tensor::new(val(*p).shape().to_vec(), gp)?, grads);
                }
            }
            Op::Scale(a, s) => acc(*a, dy.map(|g| g * s), grads),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let (r, c) = y.dims2();
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let yr = y.row(i);
                    let dr = &dy.data()[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[i * c + j] = yr[j] * (dr[j] - dot);
                    }
                }
                acc(*a, Tensor::new(y.shape().to_vec(), gx)?, grads);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (r, c) = val(*x).dims2();
                let g = val(*gamma).data();
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    let d = &dy.data()[i * c..(i + 1) * c];
                    let h = &xhat[i * c..(i + 1) * c];
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..c {
                        gg[j] += d[j] * h[j];
                        gb[j] += d[j];
                        let dh = d[j] * g[j];
                        m1 += dh;
                        m2 += dh * h[j];
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    for j in 0..c {
                        gx[i * c + j] = rstd[i] * (d[j] * g[j] - m1 - h[j] * m2);
                    }
                }
                acc(*x, Tensor::new(val(*x).shape().to_vec(), gx)?, grads);
                acc(*gamma, Tensor::new(val(*gamma).shape().to_vec(), gg)?, grads);
                acc(*beta, Tensor::new(val(*beta).shape().to_vec(), gb)?, grads);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
                batch_stats,
            } => {
                let (r, c) = val(*x).dims2();
                let g = val(*gamma).data();
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                let mut gx = vec![0.0; r * c];
                for j in 0..c {
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for i in 0..r {
                        let d = dy.data()[i * c + j];
                        let h = xhat[i * c + j];
                        gg[j] += d * h;
                        gb[j] += d;
                        m1 += d * g[j];
                        m2 += d * g[j] * h;
                    }
                    m1 /= r as f64;
                    m2 /= r as f64;
                    for i in 0..r {
                        let dh = dy.data()[i * c + j] * g[j];
                        gx[i * c + j] = if *batch_stats {
                            rstd[j] * (dh - m1 - xhat[i * c + j] * m2)
                        } else {
                            rstd[j] * dh
                        };
                    }
                }
                acc(*x, Tensor::new(val(*x).shape().to_vec(), gx)?, grads);
                acc(*gamma, Tensor::new(val(*gamma).shape().to_vec(), gg)?, grads);
                acc(*beta, Tensor::new(val(*beta).shape().to_vec(), gb)?, grads);
            }
            Op::Relu(a) => acc(
                *a,
                dy.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })?,
                grads,
            ),
            Op::Gelu(a) => acc(*a, dy.zip_map(val(*a), |g, x| g * gelu_grad(x))?, grads),
            Op::Dropout(a, mask) => {
                let mut g = dy.clone();
                for (v, m) in g.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                acc(*a, g, grads);
            }
            Op::SliceBlock { x, r0, c0 } => {
                let (_, c) = val(*x).dims2();
                let (nr, nc) = dy.dims2();
                let mut g = Tensor::zeros(val(*x).shape());
                for i in 0..nr {
                    let dst = &mut g.data_mut()[(r0 + i) * c + c0..(r0 + i) * c + c0 + nc];
                    dst.copy_from_slice(&dy.data()[i * nc..(i + 1) * nc]);
                }
                acc(*x, g, grads);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    let g = Tensor::new(val(*p).shape().to_vec(), dy.data()[off..off + n].to_vec())?;
                    off += n;
                    acc(*p, g, grads);
                }
            }
            Op::ConcatCols(parts) => {
                let (r, c) = dy.dims2();
                let mut c0 = 0;
                for p in parts {
                    let pc = val(*p).cols();
                    let mut data = Vec::with_capacity(r * pc);
                    for i in 0..r {
                        data.extend_from_slice(&dy.data()[i * c + c0..i * c + c0 + pc]);
                    }
                    c0 += pc;
                    acc(*p, Tensor::new(val(*p).shape().to_vec(), data)?, grads);
                }
            }
            Op::MeanRowGroups(x, group) => {
                let (r, c) = val(*x).dims2();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    let src = &dy.data()[(i / group) * c..(i / group + 1) * c];
                    for (d, s) in data[i * c..(i + 1) * c].iter_mut().zip(src) {
                        *d = s / *group as f64;
                    }
                }
                acc(*x, Tensor::new(val(*x).shape().to_vec(), data)?, grads);
            }
            Op::Sum(a) => {
                let d = dy.data()[0];
                acc(*a, Tensor::full(val(*a).shape(), d), grads);
            }
            Op::Mse(p, t) => {
                let d = dy.data()[0];
                let n = val(*p).len() as f64;
                let diff: Vec<f64> = val(*p)
                    .data()
                    .iter()
                    .zip(val(*t).data())
                    .map(|(a, b)| 2.0 * (a - b) / n * d)
                    .collect();
                if needs(*t) {
                    let neg = diff.iter().map(|v| -v).collect();
                    acc(*t, Tensor::new(val(*t).shape().to_vec(), neg)?, grads);
                }
                acc(*p, Tensor::new(val(*p).shape().to_vec(), diff)?, grads);
            }
        }
        Ok(())
    }
}

fn reshape_like(t: Tensor, like: &Tensor) -> Result<Tensor> {
    t.reshape(like.shape().to_vec())
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Keep-mask for inverted dropout: 0 with probability `rate`, otherwise `1/(1-rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Standalone dropout on a tensor.
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, rate: f64, rng: &mut R, mode: Mode) -> Result<Tensor> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), rate, rng);
    let mut out = x.clone();
    for (v, m) in out.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
    Ok(out)
}
