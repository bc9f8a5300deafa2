use std::ops::Range;

use super::{matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MulScalarVar(usize, usize),
    DivScalarVar(usize, usize),
    GroupSoftmax(usize, Vec<Range<usize>>),
    Sigmoid(usize),
    Relu(usize),
    Log(usize),
    Exp(usize),
    Sqrt(usize),
    Pow(usize, f64),
    Sum(usize),
    Mean(usize),
    Trace(usize),
    FrobSq(usize),
    ColMean(usize),
    ColStd(usize),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    Gather(usize, Vec<Option<usize>>),
    StraightThrough(usize),
    SqDists(usize),
    CrossEntropy(usize, Vec<usize>),
    SymEigvals(usize, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of a forward computation.
///
/// Values are appended in evaluation order, so every node's inputs precede
/// it and a single reverse sweep visits each operation exactly once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `like`'s shape when nothing flowed into it.
    pub fn wrt(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            Tensor::new(like.shape().to_vec(), vec![0.0; like.numel()]).unwrap()
        })
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn finite_or(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::Domain {
            op,
            detail: "result is not finite".into(),
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
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

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Copy of `v` with no gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a.0, b.0), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a.0), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a.0, b.0), rg))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "hadamard", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a.0, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a.0), rg)
    }

    /// `a (r×c) + b (1×c)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, c) = ta.dims();
        if tb.numel() != c {
            return Err(shape_err("add_row", ta, tb));
        }
        let out = Tensor::from_fn(r, c, |i, j| ta.get(i, j) + tb.data()[j]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::AddRow(a.0, b.0), rg))
    }

    /// `a (r×c)` with column `j` multiplied by `b_j`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, c) = ta.dims();
        if tb.numel() != c {
            return Err(shape_err("mul_row", ta, tb));
        }
        let out = Tensor::from_fn(r, c, |i, j| ta.get(i, j) * tb.data()[j]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MulRow(a.0, b.0), rg))
    }

    /// `a · s` for a one-element `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.numel() != 1 {
            return Err(shape_err("mul_scalar_var", ta, ts));
        }
        let sv = ts.item();
        let out = ta.map(|x| x * sv);
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(out, Op::MulScalarVar(a.0, s.0), rg))
    }

    /// `a / s` for a one-element, nonzero `s`.
    pub fn div_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        if ts.numel() != 1 {
            return Err(shape_err("div_scalar_var", ta, ts));
        }
        let sv = ts.item();
        if sv == 0.0 {
            return Err(Error::Domain {
                op: "div_scalar_var",
                detail: "division by zero".into(),
            });
        }
        let out = finite_or("div_scalar_var", ta.map(|x| x / sv))?;
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(out, Op::DivScalarVar(a.0, s.0), rg))
    }

    /// Softmax applied independently over each row.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).dims();
        let groups = (0..r).map(|i| i * c..(i + 1) * c).collect();
        self.group_softmax(a, groups)
            .expect("row groups always cover the buffer")
    }

    /// Softmax over each listed range of the flat buffer. Entries outside every
    /// range are passed through as zero.
    pub fn group_softmax(&mut self, a: Var, groups: Vec<Range<usize>>) -> Result<Var> {
        let ta = self.value(a);
        let n = ta.numel();
        let mut out = vec![0.0; n];
        for g in &groups {
            if g.end > n || g.start >= g.end {
                return Err(Error::Contract(format!(
                    "softmax group {g:?} outside buffer of length {n}"
                )));
            }
            let x = &ta.data()[g.clone()];
            let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in out[g.clone()].iter_mut().zip(x) {
                *o = (v - max).exp();
                z += *o;
            }
            for o in &mut out[g.clone()] {
                *o /= z;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), out)?;
        let out = finite_or("softmax", out)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::GroupSoftmax(a.0, groups), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a.0), rg)
    }

    /// Rectifier; the derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a.0), rg)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if let Some(bad) = ta.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("argument {bad} is not positive"),
            });
        }
        let out = ta.map(f64::ln);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Log(a.0), rg))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = finite_or("exp", self.value(a).map(f64::exp))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Exp(a.0), rg))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if let Some(bad) = ta.data().iter().find(|&&x| !(x >= 0.0)) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("argument {bad} is negative"),
            });
        }
        let out = ta.map(f64::sqrt);
        let rg = self.rg(a);
        Ok(self.push(out, Op::Sqrt(a.0), rg))
    }

    /// `x^p` for non-negative `x`.
    pub fn pow(&mut self, a: Var, p: f64) -> Result<Var> {
        let ta = self.value(a);
        if let Some(bad) = ta.data().iter().find(|&&x| !(x >= 0.0)) {
            return Err(Error::Domain {
                op: "pow",
                detail: format!("base {bad} is negative"),
            });
        }
        let out = finite_or("pow", ta.map(|x| x.powf(p)))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Pow(a.0, p), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.numel() as f64);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a.0), rg)
    }

    pub fn trace(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims();
        if r != c {
            return Err(shape_err("trace", t, t));
        }
        let out = Tensor::scalar(t.trace());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Trace(a.0), rg))
    }

    /// Squared Frobenius norm.
    pub fn frob_sq(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).frobenius_sq());
        let rg = self.rg(a);
        self.push(out, Op::FrobSq(a.0), rg)
    }

    /// Column means as a `1×c` row.
    pub fn col_mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = col_means(t);
        let rg = self.rg(a);
        self.push(out, Op::ColMean(a.0), rg)
    }

    /// Population column standard deviations `sqrt(var + eps²)` as a `1×c` row.
    pub fn col_std(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims();
        let m = col_means(t);
        let mut var = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                let d = t.get(i, j) - m.data()[j];
                var[j] += d * d;
            }
        }
        let out = Tensor::new(
            vec![1, c],
            var.into_iter()
                .map(|v| (v / r as f64 + eps * eps).sqrt())
                .collect(),
        )
        .unwrap();
        let rg = self.rg(a);
        self.push(out, Op::ColStd(a.0), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut r = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != c {
                return Err(shape_err("concat_rows", self.value(*first), t));
            }
            r += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        let out = Tensor::new(vec![r, c], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.iter().map(|p| p.0).collect()), rg))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims();
        if start >= end || end > r {
            return Err(Error::Contract(format!(
                "slice {start}..{end} outside {r} rows"
            )));
        }
        let out = Tensor::new(vec![end - start, c], t.data()[start * c..end * c].to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceRows(a.0, start), rg))
    }

    /// `out[k] = a[index[k]]` on flat buffers, zero where `index[k]` is `None`.
    pub fn gather(&mut self, a: Var, index: Vec<Option<usize>>, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != index.len() {
            return Err(Error::Contract("gather index does not fill shape".into()));
        }
        let n = t.numel();
        let mut data = Vec::with_capacity(index.len());
        for ix in &index {
            data.push(match ix {
                Some(k) if *k < n => t.data()[*k],
                Some(k) => {
                    return Err(Error::Contract(format!(
                        "gather index {k} outside buffer of length {n}"
                    )))
                }
                None => 0.0,
            });
        }
        let out = Tensor::new(shape, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Gather(a.0, index), rg))
    }

    /// Forward value `hard`, gradient routed to `soft` unchanged.
    pub fn straight_through(&mut self, hard: Tensor, soft: Var) -> Result<Var> {
        let ts = self.value(soft);
        if ts.dims() != hard.dims() {
            return Err(shape_err("straight_through", &hard, ts));
        }
        let rg = self.rg(soft);
        Ok(self.push(hard, Op::StraightThrough(soft.0), rg))
    }

    /// Pairwise squared Euclidean distances between rows.
    pub fn sq_dists(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = pairwise_sq_dists(t);
        let rg = self.rg(a);
        self.push(out, Op::SqDists(a.0), rg)
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (r, c) = t.dims();
        if labels.len() != r {
            return Err(Error::Contract(format!(
                "{} labels for {r} logit rows",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Contract(format!("label {bad} outside 0..{c}")));
        }
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = t.row(i);
            loss += log_sum_exp(row) - row[y];
        }
        let out = Tensor::scalar(loss / r as f64);
        let rg = self.rg(logits);
        Ok(self.push(out, Op::CrossEntropy(logits.0, labels.to_vec()), rg))
    }

    /// Ascending eigenvalues of a symmetric matrix as a `1×n` row. The
    /// gradient `v_kᵀ dM v_k` is ill-conditioned near repeated eigenvalues.
    pub fn sym_eigvals(&mut self, a: Var) -> Result<Var> {
        let eig = super::sym_eigen(self.value(a))?;
        let n = eig.values.len();
        let out = Tensor::new(vec![1, n], eig.values)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SymEigvals(a.0, eig.vectors), rg))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lt.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], idx: usize, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[idx];
        if !node.requires_grad {
            return;
        }
        let slot = grads[idx].get_or_insert_with(|| {
            Tensor::new(node.value.shape().to_vec(), vec![0.0; node.value.numel()]).unwrap()
        });
        f(slot.data_mut());
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k) = ta.dims();
                let n = tb.cols();
                self.accumulate(grads, *a, |ga| {
                    let bt = tb.transpose();
                    matmul_into(gd, bt.data(), ga, m, n, k);
                });
                self.accumulate(grads, *b, |gb| {
                    let at = ta.transpose();
                    matmul_into(at.data(), gd, gb, k, m, n);
                });
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                self.accumulate(grads, *a, |ga| add_into(ga, gt.data()));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, gd));
                self.accumulate(grads, *b, |gb| add_into(gb, gd));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, gd));
                self.accumulate(grads, *b, |gb| {
                    gb.iter_mut().zip(gd).for_each(|(o, v)| *o -= v)
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                self.accumulate(grads, *a, |ga| {
                    for ((o, v), bv) in ga.iter_mut().zip(gd).zip(tb.data()) {
                        *o += v * bv;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, v), av) in gb.iter_mut().zip(gd).zip(ta.data()) {
                        *o += v * av;
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |ga| {
                    ga.iter_mut().zip(gd).for_each(|(o, v)| *o += c * v)
                });
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, |ga| add_into(ga, gd)),
            Op::AddRow(a, b) => {
                let c = y.cols();
                self.accumulate(grads, *a, |ga| add_into(ga, gd));
                self.accumulate(grads, *b, |gb| {
                    for (k, v) in gd.iter().enumerate() {
                        gb[k % c] += v;
                    }
                });
            }
            Op::MulRow(a, b) => {
                let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let c = y.cols();
                self.accumulate(grads, *a, |ga| {
                    for (k, v) in gd.iter().enumerate() {
                        ga[k] += v * tb.data()[k % c];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for (k, v) in gd.iter().enumerate() {
                        gb[k % c] += v * ta.data()[k];
                    }
                });
            }
            Op::MulScalarVar(a, s) => {
                let (ta, ts) = (&self.nodes[*a].value, &self.nodes[*s].value);
                let sv = ts.item();
                self.accumulate(grads, *a, |ga| {
                    ga.iter_mut().zip(gd).for_each(|(o, v)| *o += v * sv)
                });
                self.accumulate(grads, *s, |gs| {
                    gs[0] += gd.iter().zip(ta.data()).map(|(v, x)| v * x).sum::<f64>()
                });
            }
            Op::DivScalarVar(a, s) => {
                let (ta, ts) = (&self.nodes[*a].value, &self.nodes[*s].value);
                let sv = ts.item();
                self.accumulate(grads, *a, |ga| {
                    ga.iter_mut().zip(gd).for_each(|(o, v)| *o += v / sv)
                });
                self.accumulate(grads, *s, |gs| {
                    gs[0] -= gd.iter().zip(ta.data()).map(|(v, x)| v * x).sum::<f64>()
                        / (sv * sv)
                });
            }
            Op::GroupSoftmax(a, groups) => {
                let yd = y.data();
                self.accumulate(grads, *a, |ga| {
                    for grp in groups {
                        let dot: f64 = gd[grp.clone()]
                            .iter()
                            .zip(&yd[grp.clone()])
                            .map(|(v, p)| v * p)
                            .sum();
                        for k in grp.clone() {
                            ga[k] += yd[k] * (gd[k] - dot);
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, |ga| {
                    for ((o, v), s) in ga.iter_mut().zip(gd).zip(y.data()) {
                        *o += v * s * (1.0 - s);
                    }
                });
            }
            Op::Relu(a) => {
                let ta = &self.nodes[*a].value;
                self.accumulate(grads, *a, |ga| {
                    for ((o, v), x) in ga.iter_mut().zip(gd).zip(ta.data()) {
                        if *x > 0.0 {
                            *o += v;
                        }
                    }
                });
            }
            Op::Log(a) => {
                let ta = &self.nodes[*a].value;
                self.accumulate(grads, *a, |ga| {
                    for ((o, v), x) in ga.iter_mut().zip(gd).zip(ta.data()) {
                        *o += v / x;
                    }
                });
            }
            Op::Exp(a) => {
                self.accumulate(grads, *a, |ga| {
                    for ((o, v), e) in ga.iter_mut().zip(gd).zip(y.data()) {
                        *o += v * e;
                    }
                });
            }
            Op::Sqrt(a) => {
                self.accumulate(grads, *a, |ga| {
                    for ((o, v), s) in ga.iter_mut().zip(gd).zip(y.data()) {
                        if *s > 0.0 {
                            *o += v / (2.0 * s);
                        }
                    }
                });
            }
            Op::Pow(a, p) => {
                let ta = &self.nodes[*a].value;
                self.accumulate(grads, *a, |ga| {
                    for ((o, v), x) in ga.iter_mut().zip(gd).zip(ta.data()) {
                        if *x > 0.0 || *p >= 1.0 {
                            *o += v * p * x.powf(p - 1.0);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let v = gd[0];
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += v));
            }
            Op::Mean(a) => {
                let n = self.nodes[*a].value.numel() as f64;
                let v = gd[0] / n;
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|o| *o += v));
            }
            Op::Trace(a) => {
                let n = self.nodes[*a].value.rows();
                let v = gd[0];
                self.accumulate(grads, *a, |ga| {
                    for i in 0..n {
                        ga[i * n + i] += v;
                    }
                });
            }
            Op::FrobSq(a) => {
                let ta = &self.nodes[*a].value;
                let v = gd[0];
                self.accumulate(grads, *a, |ga| {
                    for (o, x) in ga.iter_mut().zip(ta.data()) {
                        *o += 2.0 * v * x;
                    }
                });
            }
            Op::ColMean(a) => {
                let (r, c) = self.nodes[*a].value.dims();
                self.accumulate(grads, *a, |ga| {
                    for (k, o) in ga.iter_mut().enumerate() {
                        *o += gd[k % c] / r as f64;
                    }
                });
            }
            Op::ColStd(a) => {
                let ta = &self.nodes[*a].value;
                let (r, c) = ta.dims();
                let m = col_means(ta);
                self.accumulate(grads, *a, |ga| {
                    for (k, o) in ga.iter_mut().enumerate() {
                        let j = k % c;
                        *o += gd[j] * (ta.data()[k] - m.data()[j]) / (r as f64 * y.data()[j]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.nodes[*p].value.numel();
                    let seg = &gd[offset..offset + n];
                    self.accumulate(grads, *p, |gp| add_into(gp, seg));
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                let c = y.cols();
                let off = start * c;
                self.accumulate(grads, *a, |ga| add_into(&mut ga[off..off + gd.len()], gd));
            }
            Op::Gather(a, index) => {
                self.accumulate(grads, *a, |ga| {
                    for (ix, v) in index.iter().zip(gd) {
                        if let Some(k) = ix {
                            ga[*k] += v;
                        }
                    }
                });
            }
            Op::StraightThrough(soft) => {
                self.accumulate(grads, *soft, |gs| add_into(gs, gd));
            }
            Op::SqDists(a) => {
                let ta = &self.nodes[*a].value;
                let (r, c) = ta.dims();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..r {
                        for j in 0..r {
                            let w = 2.0 * (gd[i * r + j] + gd[j * r + i]);
                            if w == 0.0 {
                                continue;
                            }
                            for k in 0..c {
                                ga[i * c + k] += w * (ta.get(i, k) - ta.get(j, k));
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy(a, labels) => {
                let ta = &self.nodes[*a].value;
                let (r, c) = ta.dims();
                let v = gd[0] / r as f64;
                self.accumulate(grads, *a, |ga| {
                    for (i, &lab) in labels.iter().enumerate() {
                        let row = ta.row(i);
                        let lse = log_sum_exp(row);
                        for j in 0..c {
                            let p = (row[j] - lse).exp();
                            let target = if j == lab { 1.0 } else { 0.0 };
                            ga[i * c + j] += v * (p - target);
                        }
                    }
                });
            }
            Op::SymEigvals(a, vectors) => {
                let n = vectors.rows();
                self.accumulate(grads, *a, |ga| {
                    for (k, gk) in gd.iter().enumerate() {
                        for i in 0..n {
                            let vik = vectors.get(i, k);
                            for j in 0..n {
                                ga[i * n + j] += gk * vik * vectors.get(j, k);
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(o, v)| *o += v);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn col_means(t: &Tensor) -> Tensor {
    let (r, c) = t.dims();
    let mut m = vec![0.0; c];
    for i in 0..r {
        for (j, mj) in m.iter_mut().enumerate() {
            *mj += t.get(i, j);
        }
    }
    m.iter_mut().for_each(|v| *v /= r as f64);
    Tensor::new(vec![1, c], m).unwrap()
}

pub(crate) fn pairwise_sq_dists(t: &Tensor) -> Tensor {
    let r = t.rows();
    Tensor::from_fn(r, r, |i, j| {
        if i == j {
            return 0.0;
        }
        t.row(i)
            .iter()
            .zip(t.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}
