//! Reverse-mode differentiation over a recorded operation list.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep.

use super::tensor::{kernels, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    /// a · bᵀ
    MatmulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        /// per-row (mean, 1/std)
        stats: Vec<(f32, f32)>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f32>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation graph recording every operation for a later backward pass.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node that required one.
#[derive(Debug, Clone)]
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

fn check_2d(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::dim(op, format!("expected matrix, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn add_into(acc: &mut Option<Tensor>, shape: &[usize], delta: &[f32]) {
    match acc {
        Some(t) => {
            for (a, d) in t.data_mut().iter_mut().zip(delta) {
                *a += d;
            }
        }
        None => {
            *acc = Some(Tensor::new(shape.to_vec(), delta.to_vec()).expect("gradient shape"));
        }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad, "leaf")
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Frozen leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = check_2d(self.value(a), "matmul")?;
        let (k2, n) = check_2d(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m}x{k}] x [{k2}x{n}]")));
        }
        let data = kernels::mm(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![m, n], data)?, Op::Matmul(a, b), rg, "matmul")
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = check_2d(self.value(a), "matmul_nt")?;
        let (n, k2) = check_2d(self.value(b), "matmul_nt")?;
        if k != k2 {
            return Err(Error::dim("matmul_nt", format!("[{m}x{k}] x [{n}x{k2}]^T")));
        }
        let data = kernels::mm_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![m, n], data)?, Op::MatmulNt(a, b), rg, "matmul_nt")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        check_2d(self.value(x), "transpose")?;
        let t = self.value(x).transpose();
        let rg = self.rg(&[x]);
        self.push(t, Op::Transpose(x), rg, "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self
            .value(a)
            .add(self.value(b))
            .map_err(|_| Error::dim("add", format!("{:?} + {:?}", self.value(a).shape(), self.value(b).shape())))?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Add(a, b), rg, "add")
    }

    /// Adds a bias vector to every row; the only broadcasting the engine supports.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(bias).numel() != cols {
            return Err(Error::dim(
                "add_bias",
                format!("bias of {} for {} columns", self.value(bias).numel(), cols),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(cols) {
            for (v, bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        let rg = self.rg(&[x, bias]);
        self.push(t, Op::AddBias(x, bias), rg, "add_bias")
    }

    /// Element-wise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("mul", format!("{:?} * {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(t, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v * s).collect())?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, s), rg, "scale")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let t = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|v| v.max(0.0)).collect())?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg, "relu")
    }

    /// Softmax along `axis`, stabilised by subtracting the lane maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let shape = tx.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Index {
                index: axis,
                limit: shape.len(),
                context: "softmax axis",
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0f32; tx.numel()];
        softmax_lanes(tx.data(), &mut out, outer, len, inner);
        let rg = self.rg(&[x]);
        self.push(
            Tensor::new(shape, out)?,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            rg,
            "softmax",
        )
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let r = self.value(x).rank();
        self.softmax(x, r.saturating_sub(1))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (rows, cols) = check_2d(self.value(x), "layer_norm")?;
        if self.value(gamma).numel() != cols || self.value(beta).numel() != cols {
            return Err(Error::dim("layer_norm", "gain/bias width mismatch"));
        }
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let xd = self.value(x).data();
        let mut out = vec![0.0f32; rows * cols];
        let mut stats = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xd[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f32>() / cols as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / cols as f32;
            let rstd = 1.0 / (var + LN_EPS).sqrt();
            for c in 0..cols {
                out[r * cols + c] = (row[c] - mean) * rstd * g[c] + b[c];
            }
            stats.push((mean, rstd));
        }
        let rg = self.rg(&[x, gamma, beta]);
        self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            },
            rg,
            "layer_norm",
        )
    }

    /// Row gather from an embedding table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = check_2d(self.value(table), "gather")?;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    index: id,
                    limit: v,
                    context: "embedding gather",
                });
            }
            out.extend_from_slice(self.value(table).row(id));
        }
        let rg = self.rg(&[table]);
        self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
            "gather",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_rows", "no inputs"));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            check_2d(t, "concat_rows")?;
            if t.cols() != cols {
                return Err(Error::dim("concat_rows", format!("width {} vs {}", t.cols(), cols)));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = self.rg(parts);
        self.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatRows(parts.to_vec()), rg, "concat_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat_cols", "no inputs"));
        }
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            check_2d(t, "concat_cols")?;
            if t.rows() != rows {
                return Err(Error::dim("concat_cols", format!("height {} vs {}", t.rows(), rows)));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.rg(parts);
        self.push(Tensor::new(vec![rows, total], data)?, Op::ConcatCols(parts.to_vec()), rg, "concat_cols")
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = check_2d(self.value(x), "slice_rows")?;
        if start + len > rows {
            return Err(Error::dim("slice_rows", format!("{start}+{len} > {rows}")));
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![len, cols], data)?, Op::SliceRows { x, start }, rg, "slice_rows")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = check_2d(self.value(x), "slice_cols")?;
        if start + len > cols {
            return Err(Error::dim("slice_cols", format!("{start}+{len} > {cols}")));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![rows, len], data)?, Op::SliceCols { x, start }, rg, "slice_cols")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum::<f32>();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg, "sum")
    }

    /// Token-summed negative log-likelihood `−Σ_k log softmax(logits_k)[target_k]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, v) = check_2d(self.value(logits), "cross_entropy")?;
        if targets.len() != m {
            return Err(Error::dim("cross_entropy", format!("{} targets for {m} rows", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Index {
                index: bad,
                limit: v,
                context: "cross_entropy target",
            });
        }
        let mut probs = vec![0.0f32; m * v];
        softmax_lanes(self.value(logits).data(), &mut probs, m, v, 1);
        let ld = self.value(logits).data();
        let mut loss = 0.0f64;
        for (k, &t) in targets.iter().enumerate() {
            let row = &ld[k * v..(k + 1) * v];
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = max as f64 + row.iter().map(|x| ((x - max) as f64).exp()).sum::<f64>().ln();
            loss += lse - row[t] as f64;
        }
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(loss as f32),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
            "cross_entropy",
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.requires_grad(*a) {
                    let da = kernels::mm_nt(gd, tb.data(), m, n, k);
                    add_into(&mut grads[a.0], ta.shape(), &da);
                }
                if self.requires_grad(*b) {
                    let db = kernels::mm_tn(ta.data(), gd, m, k, n);
                    add_into(&mut grads[b.0], tb.shape(), &db);
                }
            }
            Op::MatmulNt(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if self.requires_grad(*a) {
                    let da = kernels::mm(gd, tb.data(), m, n, k);
                    add_into(&mut grads[a.0], ta.shape(), &da);
                }
                if self.requires_grad(*b) {
                    let db = kernels::mm_tn(gd, ta.data(), m, n, k);
                    add_into(&mut grads[b.0], tb.shape(), &db);
                }
            }
            Op::Transpose(x) => {
                if self.requires_grad(*x) {
                    let dx = g.transpose();
                    add_into(&mut grads[x.0], self.value(*x).shape(), dx.data());
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.requires_grad(*v) {
                        add_into(&mut grads[v.0], self.value(*v).shape(), gd);
                    }
                }
            }
            Op::AddBias(x, bias) => {
                if self.requires_grad(*x) {
                    add_into(&mut grads[x.0], self.value(*x).shape(), gd);
                }
                if self.requires_grad(*bias) {
                    let cols = g.cols();
                    let mut db = vec![0.0f32; cols];
                    for row in gd.chunks(cols) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    add_into(&mut grads[bias.0], self.value(*bias).shape(), &db);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let da: Vec<f32> = gd.iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                    add_into(&mut grads[a.0], ta.shape(), &da);
                }
                if self.requires_grad(*b) {
                    let db: Vec<f32> = gd.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                    add_into(&mut grads[b.0], tb.shape(), &db);
                }
            }
            Op::Scale(x, s) => {
                if self.requires_grad(*x) {
                    let dx: Vec<f32> = gd.iter().map(|v| v * s).collect();
                    add_into(&mut grads[x.0], self.value(*x).shape(), &dx);
                }
            }
            Op::Relu(x) => {
                if self.requires_grad(*x) {
                    let dx: Vec<f32> = gd
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    add_into(&mut grads[x.0], self.value(*x).shape(), &dx);
                }
            }
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                if self.requires_grad(*x) {
                    let y = node.value.data();
                    let mut dx = vec![0.0f32; y.len()];
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let idx = |j: usize| o * len * inner + j * inner + i;
                            let dot: f32 = (0..*len).map(|j| gd[idx(j)] * y[idx(j)]).sum();
                            for j in 0..*len {
                                dx[idx(j)] = y[idx(j)] * (gd[idx(j)] - dot);
                            }
                        }
                    }
                    add_into(&mut grads[x.0], self.value(*x).shape(), &dx);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                stats,
            } => {
                let tx = self.value(*x);
                let (rows, cols) = (tx.rows(), tx.cols());
                let gam = self.value(*gamma).data();
                let xd = tx.data();
                let mut dgamma = vec![0.0f32; cols];
                let mut dbeta = vec![0.0f32; cols];
                let mut dx = vec![0.0f32; rows * cols];
                for r in 0..rows {
                    let (mean, rstd) = stats[r];
                    let grow = &gd[r * cols..(r + 1) * cols];
                    let xhat: Vec<f32> = xd[r * cols..(r + 1) * cols]
                        .iter()
                        .map(|v| (v - mean) * rstd)
                        .collect();
                    let mut sum_dy = 0.0f32;
                    let mut sum_dy_xhat = 0.0f32;
                    for c in 0..cols {
                        dgamma[c] += grow[c] * xhat[c];
                        dbeta[c] += grow[c];
                        let dyh = grow[c] * gam[c];
                        sum_dy += dyh;
                        sum_dy_xhat += dyh * xhat[c];
                    }
                    let n = cols as f32;
                    for c in 0..cols {
                        let dyh = grow[c] * gam[c];
                        dx[r * cols + c] = rstd * (dyh - sum_dy / n - xhat[c] * sum_dy_xhat / n);
                    }
                }
                if self.requires_grad(*x) {
                    add_into(&mut grads[x.0], tx.shape(), &dx);
                }
                if self.requires_grad(*gamma) {
                    add_into(&mut grads[gamma.0], self.value(*gamma).shape(), &dgamma);
                }
                if self.requires_grad(*beta) {
                    add_into(&mut grads[beta.0], self.value(*beta).shape(), &dbeta);
                }
            }
            Op::Gather { table, ids } => {
                if self.requires_grad(*table) {
                    let tt = self.value(*table);
                    let d = tt.cols();
                    let mut dt = vec![0.0f32; tt.numel()];
                    for (k, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[id * d + c] += gd[k * d + c];
                        }
                    }
                    add_into(&mut grads[table.0], tt.shape(), &dt);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if self.requires_grad(*p) {
                        add_into(&mut grads[p.0], self.value(*p).shape(), &gd[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut col = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.requires_grad(*p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&gd[r * total + col..r * total + col + w]);
                        }
                        add_into(&mut grads[p.0], self.value(*p).shape(), &dp);
                    }
                    col += w;
                }
            }
            Op::SliceRows { x, start } => {
                if self.requires_grad(*x) {
                    let tx = self.value(*x);
                    let cols = tx.cols();
                    let mut dx = vec![0.0f32; tx.numel()];
                    dx[start * cols..start * cols + gd.len()].copy_from_slice(gd);
                    add_into(&mut grads[x.0], tx.shape(), &dx);
                }
            }
            Op::SliceCols { x, start } => {
                if self.requires_grad(*x) {
                    let tx = self.value(*x);
                    let cols = tx.cols();
                    let w = g.cols();
                    let mut dx = vec![0.0f32; tx.numel()];
                    for r in 0..g.rows() {
                        dx[r * cols + start..r * cols + start + w].copy_from_slice(&gd[r * w..(r + 1) * w]);
                    }
                    add_into(&mut grads[x.0], tx.shape(), &dx);
                }
            }
            Op::Sum(x) => {
                if self.requires_grad(*x) {
                    let tx = self.value(*x);
                    add_into(&mut grads[x.0], tx.shape(), &vec![gd[0]; tx.numel()]);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if self.requires_grad(*logits) {
                    let tl = self.value(*logits);
                    let v = tl.cols();
                    let mut dl: Vec<f32> = probs.iter().map(|p| p * gd[0]).collect();
                    for (k, &t) in targets.iter().enumerate() {
                        dl[k * v + t] -= gd[0];
                    }
                    add_into(&mut grads[logits.0], tl.shape(), &dl);
                }
            }
        }
    }
}

fn softmax_lanes(src: &[f32], dst: &mut [f32], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| o * len * inner + j * inner + i;
            let max = (0..len).map(|j| src[idx(j)]).fold(f32::NEG_INFINITY, f32::max);
            let mut total = 0.0f32;
            for j in 0..len {
                let e = (src[idx(j)] - max).exp();
                dst[idx(j)] = e;
                total += e;
            }
            for j in 0..len {
                dst[idx(j)] /= total;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f32]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::identity(2)).unwrap();
        let b = g.constant(m(2, 2, &[3., 4., 5., 6.])).unwrap();
        let c = g.matmul(i, b).unwrap();
        assert_eq!(g.value(c).data(), &[3., 4., 5., 6.]);

        let x = g.constant(m(1, 2, &[1., 2.])).unwrap();
        let y = g.constant(m(2, 1, &[3., 4.])).unwrap();
        let z = g.matmul(x, y).unwrap();
        assert_eq!(g.value(z).data(), &[11.]);
    }

    #[test]
    fn matmul_shape_mismatch_is_dimension_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(g.matmul(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn softmax_symmetric_and_single() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[3])).unwrap();
        let s = g.softmax(x, 0).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
        let y = g.constant(Tensor::scalar(5.0)).unwrap();
        let s = g.softmax(y, 0).unwrap();
        assert_eq!(g.value(s).data(), &[1.0]);
    }

    #[test]
    fn softmax_axis_zero_normalises_columns() {
        let mut g = Graph::new();
        let x = g.constant(m(2, 2, &[1., 5., 3., 5.])).unwrap();
        let s = g.softmax(x, 0).unwrap();
        let v = g.value(s);
        assert!((v.get(0, 0) + v.get(1, 0) - 1.0).abs() < 1e-6);
        assert!((v.get(0, 1) - 0.5).abs() < 1e-7);
        assert!(g.softmax(x, 2).is_err());
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0)).unwrap();
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2])).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let mut g = Graph::new();
        let l = g.param(Tensor::zeros(&[1, 3])).unwrap();
        assert!(matches!(g.cross_entropy(l, &[3]), Err(Error::Index { .. })));
    }

    #[test]
    fn gather_out_of_range() {
        let mut g = Graph::new();
        let t = g.constant(Tensor::identity(3)).unwrap();
        assert!(g.gather(t, &[3]).is_err());
        let r = g.gather(t, &[2]).unwrap();
        assert_eq!(g.value(r).data(), &[0., 0., 1.]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(f32::MAX)).unwrap();
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn frozen_inputs_receive_no_gradient() {
        let mut g = Graph::new();
        let w = g.constant(m(2, 2, &[1., 2., 3., 4.])).unwrap();
        let x = g.param(m(1, 2, &[1., 1.])).unwrap();
        let y = g.matmul(x, w).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(w).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[3., 7.]);
    }
}
