//! Reverse-mode differentiation over whole-tensor operations.
//!
//! Operations record their inputs on a [`Tape`]; [`Tape::backward`] walks the
//! record in reverse and accumulates adjoints. Only nodes that depend on a
//! parameter carry gradients.

use std::rc::Rc;

use super::tensor::{gemm_acc, sigmoid, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Neighbour lists for feature aggregation; entry `i` lists the nodes whose
/// features node `i` receives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Neighborhoods {
    lists: Vec<Vec<usize>>,
}

impl Neighborhoods {
    pub fn new(lists: Vec<Vec<usize>>) -> Self {
        Self { lists }
    }

    pub fn nodes(&self) -> usize {
        self.lists.len()
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.lists[i]
    }
}

/// Distance-invariant neighbourhood aggregators, applied per channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregator {
    Mean,
    /// `Σ softmax(x)_j · x_j`
    Softmax,
    /// `Σ softmax(−x)_j · x_j`
    Softmin,
    /// `sqrt(ReLU(E[x²] − E[x]²) + eps)`
    Std {
        eps: f64,
    },
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    ScaleRows(Var, Rc<[f64]>),
    MulConst(Var, Rc<[f64]>),
    ConcatCols(Vec<Var>),
    RepeatRows(Var, usize),
    UnfoldTime {
        x: Var,
        steps: usize,
        width: usize,
    },
    Reshape(Var),
    Aggregate {
        x: Var,
        nbrs: Rc<Neighborhoods>,
        steps: usize,
        agg: Aggregator,
        /// Normalised softmax weights, `[node][step][neighbour][channel]`.
        weights: Option<Rc<[f64]>>,
    },
    Sum(Var),
    Huber {
        pred: Var,
        target: Rc<Tensor>,
        mask: Rc<[bool]>,
        gamma: f64,
        count: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for each parameter slot, zero-filled when a parameter was unused.
    pub fn params(&self, shapes: &[(usize, usize)]) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
        for &(slot, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                out[slot].add_assign(g);
            }
        }
        out
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf bound to parameter slot `slot`.
    pub fn param(&mut self, slot: usize, t: Tensor) -> Var {
        self.push(t, Op::Param(slot), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = super::tensor::matmul(self.value(a), self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), t))
    }

    /// Adds a `1×cols` bias to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::Shape(format!(
                "bias {:?} does not match {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let mut value = xv.clone();
        let cols = value.cols();
        for row in value.data_mut().chunks_mut(cols) {
            for (a, b) in row.iter_mut().zip(bv.data()) {
                *a += b;
            }
        }
        let t = self.tracked(x) || self.tracked(bias);
        Ok(self.push(value, Op::AddBias(x, bias), t))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Add(a, b), t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let mut value = self.value(a).clone();
        for (x, y) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *x *= y;
        }
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::Mul(a, b), t))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).map(f);
        let t = self.tracked(x);
        self.push(value, op, t)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    /// Gated linear unit `a ⊙ σ(b)`.
    pub fn glu(&mut self, a: Var, b: Var) -> Result<Var> {
        let gate = self.sigmoid(b);
        self.mul(a, gate)
    }

    /// Multiply row `r` by `scales[r]`.
    pub fn scale_rows(&mut self, x: Var, scales: Rc<[f64]>) -> Result<Var> {
        let xv = self.value(x);
        if scales.len() != xv.rows() {
            return Err(Error::Shape(format!(
                "{} row scales for {} rows",
                scales.len(),
                xv.rows()
            )));
        }
        let mut value = xv.clone();
        let cols = value.cols();
        for (row, s) in value.data_mut().chunks_mut(cols.max(1)).zip(scales.iter()) {
            for v in row {
                *v *= s;
            }
        }
        let t = self.tracked(x);
        Ok(self.push(value, Op::ScaleRows(x, scales), t))
    }

    /// Element-wise product with a constant buffer (dropout masks).
    pub fn mul_const(&mut self, x: Var, factors: Rc<[f64]>) -> Result<Var> {
        let xv = self.value(x);
        if factors.len() != xv.len() {
            return Err(Error::Shape(format!(
                "{} factors for {} entries",
                factors.len(),
                xv.len()
            )));
        }
        let mut value = xv.clone();
        for (v, f) in value.data_mut().iter_mut().zip(factors.iter()) {
            *v *= f;
        }
        let t = self.tracked(x);
        Ok(self.push(value, Op::MulConst(x, factors), t))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).rows()).unwrap_or(0);
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concatenated blocks differ in row count".into()));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let cols: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        let t = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), t))
    }

    /// Repeat each row `times` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Var {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(xv.len() * times);
        for r in 0..xv.rows() {
            for _ in 0..times {
                data.extend_from_slice(xv.row(r));
            }
        }
        let value = Tensor::from_vec(xv.rows() * times, xv.cols(), data).expect("sized");
        let t = self.tracked(x);
        self.push(value, Op::RepeatRows(x, times), t)
    }

    /// Gather a zero-padded window of `width` steps around every step, giving
    /// `(nodes·steps) × (width·channels)`; a following matmul is a SAME convolution.
    pub fn unfold_time(&mut self, x: Var, steps: usize, width: usize) -> Result<Var> {
        let xv = self.value(x);
        if steps == 0 || !xv.rows().is_multiple_of(steps) {
            return Err(Error::Shape(format!(
                "{} rows are not a multiple of {steps} steps",
                xv.rows()
            )));
        }
        if width.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel width must be odd, got {width}")));
        }
        let (rows, z) = xv.shape();
        let nodes = rows / steps;
        let half = (width / 2) as isize;
        let mut out = Tensor::zeros(rows, width * z);
        let oc = width * z;
        let od = out.data_mut();
        for i in 0..nodes {
            for t in 0..steps {
                let orow = (i * steps + t) * oc;
                for k in 0..width {
                    let src = t as isize + k as isize - half;
                    if src < 0 || src >= steps as isize {
                        continue;
                    }
                    let srow = xv.row(i * steps + src as usize);
                    od[orow + k * z..orow + (k + 1) * z].copy_from_slice(srow);
                }
            }
        }
        let t = self.tracked(x);
        Ok(self.push(out, Op::UnfoldTime { x, steps, width }, t))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.len() != rows * cols {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} to {rows}×{cols}",
                xv.shape()
            )));
        }
        let value = xv.clone().reshaped(rows, cols);
        let t = self.tracked(x);
        Ok(self.push(value, Op::Reshape(x), t))
    }

    /// Aggregate neighbour features at the same step. Rows are `node·steps + step`.
    /// Nodes without neighbours aggregate to 0.
    pub fn aggregate(&mut self, x: Var, nbrs: Rc<Neighborhoods>, steps: usize, agg: Aggregator) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != nbrs.nodes() * steps {
            return Err(Error::Shape(format!(
                "{} rows for {} nodes × {steps} steps",
                xv.rows(),
                nbrs.nodes()
            )));
        }
        let z = xv.cols();
        let xd = xv.data();
        let mut out = Tensor::zeros(xv.rows(), z);
        let softmax = matches!(agg, Aggregator::Softmax | Aggregator::Softmin);
        let mut cache = Vec::new();
        let od = out.data_mut();
        let mut s1 = vec![0.0; z];
        let mut s2 = vec![0.0; z];
        for i in 0..nbrs.nodes() {
            let js = nbrs.of(i);
            if js.is_empty() {
                continue;
            }
            let m = js.len() as f64;
            for t in 0..steps {
                let o = &mut od[(i * steps + t) * z..(i * steps + t + 1) * z];
                let row = |j: usize| &xd[(j * steps + t) * z..(j * steps + t + 1) * z];
                match agg {
                    Aggregator::Mean => {
                        for &j in js {
                            o.iter_mut().zip(row(j)).for_each(|(a, v)| *a += v);
                        }
                        o.iter_mut().for_each(|a| *a /= m);
                    }
                    Aggregator::Softmax | Aggregator::Softmin => {
                        let sign = if agg == Aggregator::Softmin { -1.0 } else { 1.0 };
                        s1.fill(f64::NEG_INFINITY);
                        for &j in js {
                            s1.iter_mut().zip(row(j)).for_each(|(a, v)| *a = a.max(sign * v));
                        }
                        s2.fill(0.0);
                        let base = cache.len();
                        for &j in js {
                            for ((v, mx), tot) in row(j).iter().zip(&s1).zip(s2.iter_mut()) {
                                let w = (sign * v - mx).exp();
                                *tot += w;
                                cache.push(w);
                            }
                        }
                        for (k, &j) in js.iter().enumerate() {
                            let w = &mut cache[base + k * z..base + (k + 1) * z];
                            for (((wc, tot), a), v) in w.iter_mut().zip(&s2).zip(o.iter_mut()).zip(row(j)) {
                                *wc /= tot;
                                *a += *wc * v;
                            }
                        }
                    }
                    Aggregator::Std { eps } => {
                        s1.fill(0.0);
                        s2.fill(0.0);
                        for &j in js {
                            for ((a, b), v) in s1.iter_mut().zip(s2.iter_mut()).zip(row(j)) {
                                *a += v;
                                *b += v * v;
                            }
                        }
                        for ((a, p), q) in o.iter_mut().zip(&s1).zip(&s2) {
                            let mean = p / m;
                            *a = ((q / m - mean * mean).max(0.0) + eps).sqrt();
                        }
                    }
                }
            }
        }
        let t = self.tracked(x);
        let weights = softmax.then(|| Rc::from(cache));
        Ok(self.push(
            out,
            Op::Aggregate {
                x,
                nbrs,
                steps,
                agg,
                weights,
            },
            t,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let t = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Sum(x), t)
    }

    /// Mean Huber penalty over entries where `mask` is true.
    pub fn huber(&mut self, pred: Var, target: Rc<Tensor>, mask: Rc<[bool]>, gamma: f64) -> Result<Var> {
        let value = super::huber(self.value(pred), &target, &mask, gamma)?;
        let count = mask.iter().filter(|&&m| m).count();
        let t = self.tracked(pred);
        Ok(self.push(
            Tensor::scalar(value),
            Op::Huber {
                pred,
                target,
                mask,
                gamma,
                count,
            },
            t,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "loss must be a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut params = Vec::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            if let Op::Param(slot) = node.op {
                params.push((slot, idx));
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn zeros_like(&self, v: Var) -> Tensor {
        let (r, c) = self.value(v).shape();
        Tensor::zeros(r, c)
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[idx].value;
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    let mut ga = self.zeros_like(*a);
                    gemm_acc(g, false, self.value(*b), true, &mut ga);
                    self.accumulate(grads, *a, ga);
                }
                if self.tracked(*b) {
                    let mut gb = self.zeros_like(*b);
                    gemm_acc(self.value(*a), true, g, false, &mut gb);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddBias(x, b) => {
                if self.tracked(*b) {
                    let mut gb = self.zeros_like(*b);
                    let cols = g.cols();
                    for row in g.data().chunks(cols) {
                        for (acc, v) in gb.data_mut().iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
                self.accumulate(grads, *x, g.clone());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.tracked(*a) {
                    let mut ga = g.clone();
                    ga.data_mut().iter_mut().zip(bv.data()).for_each(|(x, y)| *x *= y);
                    self.accumulate(grads, *a, ga);
                }
                if self.tracked(*b) {
                    let mut gb = g.clone();
                    gb.data_mut().iter_mut().zip(av.data()).for_each(|(x, y)| *x *= y);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Relu(x) => {
                let mut gx = g.clone();
                for (d, &y) in gx.data_mut().iter_mut().zip(out.data()) {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let mut gx = g.clone();
                for (d, &y) in gx.data_mut().iter_mut().zip(out.data()) {
                    *d *= y * (1.0 - y);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Exp(x) => {
                let mut gx = g.clone();
                for (d, &y) in gx.data_mut().iter_mut().zip(out.data()) {
                    *d *= y;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Log(x) => {
                let mut gx = g.clone();
                for (d, &v) in gx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *d /= v;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sqrt(x) => {
                let mut gx = g.clone();
                for (d, &y) in gx.data_mut().iter_mut().zip(out.data()) {
                    *d *= 0.5 / y;
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ScaleRows(x, scales) => {
                let mut gx = g.clone();
                let cols = gx.cols().max(1);
                for (row, s) in gx.data_mut().chunks_mut(cols).zip(scales.iter()) {
                    row.iter_mut().for_each(|v| *v *= s);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::MulConst(x, factors) => {
                let mut gx = g.clone();
                gx.data_mut().iter_mut().zip(factors.iter()).for_each(|(v, f)| *v *= f);
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.tracked(p) {
                        let mut gp = self.zeros_like(p);
                        for r in 0..g.rows() {
                            gp.data_mut()[r * w..(r + 1) * w].copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += w;
                }
            }
            Op::RepeatRows(x, times) => {
                let mut gx = self.zeros_like(*x);
                let cols = gx.cols();
                for r in 0..gx.rows() {
                    for k in 0..*times {
                        let src = g.row(r * times + k);
                        for (acc, v) in gx.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::UnfoldTime { x, steps, width } => {
                let mut gx = self.zeros_like(*x);
                let (rows, z) = gx.shape();
                let nodes = rows / steps;
                let half = (width / 2) as isize;
                let gd = gx.data_mut();
                for i in 0..nodes {
                    for t in 0..*steps {
                        let grow = g.row(i * steps + t);
                        for k in 0..*width {
                            let src = t as isize + k as isize - half;
                            if src < 0 || src >= *steps as isize {
                                continue;
                            }
                            let base = (i * steps + src as usize) * z;
                            for c in 0..z {
                                gd[base + c] += grow[k * z + c];
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => {
                let (r, c) = self.value(*x).shape();
                self.accumulate(grads, *x, g.clone().reshaped(r, c));
            }
            Op::Aggregate {
                x,
                nbrs,
                steps,
                agg,
                weights,
            } => {
                let xd = self.value(*x).data();
                let mut gx = self.zeros_like(*x);
                let z = gx.cols();
                let steps = *steps;
                let gd = gx.data_mut();
                let mut offset = 0;
                let mut mean = vec![0.0; z];
                let mut sq = vec![0.0; z];
                for i in 0..nbrs.nodes() {
                    let js = nbrs.of(i);
                    if js.is_empty() {
                        continue;
                    }
                    let m = js.len() as f64;
                    for t in 0..steps {
                        let r = i * steps + t;
                        let go = &g.data()[r * z..(r + 1) * z];
                        match agg {
                            Aggregator::Mean => {
                                for &j in js {
                                    let dst = &mut gd[(j * steps + t) * z..(j * steps + t + 1) * z];
                                    dst.iter_mut().zip(go).for_each(|(d, v)| *d += v / m);
                                }
                            }
                            Aggregator::Softmax | Aggregator::Softmin => {
                                let w = weights.as_ref().expect("cached softmax weights");
                                let sign = if *agg == Aggregator::Softmin { -1.0 } else { 1.0 };
                                let s = &out.data()[r * z..(r + 1) * z];
                                for (k, &j) in js.iter().enumerate() {
                                    let wk = &w[offset + k * z..offset + (k + 1) * z];
                                    let src = (j * steps + t) * z;
                                    for c in 0..z {
                                        let xj = xd[src + c];
                                        gd[src + c] += go[c] * wk[c] * (1.0 + sign * (xj - s[c]));
                                    }
                                }
                                offset += js.len() * z;
                            }
                            Aggregator::Std { .. } => {
                                mean.fill(0.0);
                                sq.fill(0.0);
                                for &j in js {
                                    let src = &xd[(j * steps + t) * z..(j * steps + t + 1) * z];
                                    for ((a, b), v) in mean.iter_mut().zip(sq.iter_mut()).zip(src) {
                                        *a += v;
                                        *b += v * v;
                                    }
                                }
                                mean.iter_mut().for_each(|a| *a /= m);
                                let s = &out.data()[r * z..(r + 1) * z];
                                for &j in js {
                                    let src = (j * steps + t) * z;
                                    for c in 0..z {
                                        // No gradient where the ReLU clamped the variance.
                                        if sq[c] / m - mean[c] * mean[c] <= 0.0 {
                                            continue;
                                        }
                                        gd[src + c] += go[c] * (xd[src + c] - mean[c]) / (m * s[c]);
                                    }
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                self.accumulate(grads, *x, Tensor::full(r, c, g.item()));
            }
            Op::Huber {
                pred,
                target,
                mask,
                gamma,
                count,
            } => {
                let pv = self.value(*pred);
                let mut gp = self.zeros_like(*pred);
                let scale = g.item() / *count as f64;
                for (k, d) in gp.data_mut().iter_mut().enumerate() {
                    if !mask[k] {
                        continue;
                    }
                    let r = pv.data()[k] - target.data()[k];
                    *d = scale * if r.abs() <= *gamma { r } else { gamma * r.signum() };
                }
                self.accumulate(grads, *pred, gp);
            }
        }
    }
}
