//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Every operation validates shapes, computes its value eagerly, and records
//! itself as a node. Nodes are created in topological order by construction,
//! so `backward` is a single reverse sweep that pushes each node's gradient
//! into its inputs. Gradients are only tracked on paths that reach a
//! trainable leaf; constants and anything derived solely from them are
//! skipped, which is what makes frozen-encoder training cheap.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::tensor::Tensor;

/// Probabilities are floored at this value before taking logs, and the
/// gradient is zero in the floored region so training cannot emit NaN.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// `[r,c] * [c] -> [r]`
    MatVec { m: NodeId, v: NodeId },
    /// `[r] * [r,c] -> [c]`
    VecMat { v: NodeId, m: NodeId },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, factor: f64 },
    Dot { a: NodeId, b: NodeId },
    Concat { parts: Vec<NodeId> },
    StackRows { rows: Vec<NodeId> },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    Softmax { x: NodeId },
    CrossEntropy { probs: NodeId, label: usize },
    BinaryCrossEntropy { prob: NodeId, target: f64 },
    Sum { x: NodeId },
    MeanSquaredDiff { a: NodeId, b: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
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

    /// Trainable input: `backward` will produce a gradient for it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// Non-trainable input: gradients stop here and are never allocated.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to `id`.
    /// `None` means no path to the loss (the gradient is identically zero).
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<(), CoreError> {
        if id.0 >= self.nodes.len() {
            return Err(CoreError::index(format!(
                "node {} not on tape of length {}",
                id.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    fn val(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    // ---- operations ----

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, CoreError> {
        self.check(m)?;
        self.check(v)?;
        let (mt, vt) = (self.val(m), self.val(v));
        if !mt.is_matrix() || !vt.is_vector() || mt.cols() != vt.len() {
            return Err(CoreError::shape(format!(
                "matvec {:?} * {:?}",
                mt.shape(),
                vt.shape()
            )));
        }
        let (r, c) = (mt.rows(), mt.cols());
        let mut out = vec![0.0; r];
        let md = mt.data();
        let vd = vt.data();
        for i in 0..r {
            let row = &md[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for j in 0..c {
                acc += row[j] * vd[j];
            }
            out[i] = acc;
        }
        let req = self.requires(m) || self.requires(v);
        Ok(self.push(Op::MatVec { m, v }, Tensor::vector(out)?, req))
    }

    pub fn vecmat(&mut self, v: NodeId, m: NodeId) -> Result<NodeId, CoreError> {
        self.check(v)?;
        self.check(m)?;
        let (vt, mt) = (self.val(v), self.val(m));
        if !mt.is_matrix() || !vt.is_vector() || mt.rows() != vt.len() {
            return Err(CoreError::shape(format!(
                "vecmat {:?} * {:?}",
                vt.shape(),
                mt.shape()
            )));
        }
        let (r, c) = (mt.rows(), mt.cols());
        let mut out = vec![0.0; c];
        let md = mt.data();
        let vd = vt.data();
        for i in 0..r {
            let row = &md[i * c..(i + 1) * c];
            let vi = vd[i];
            for j in 0..c {
                out[j] += vi * row[j];
            }
        }
        let req = self.requires(m) || self.requires(v);
        Ok(self.push(Op::VecMat { v, m }, Tensor::vector(out)?, req))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, CoreError> {
        let value = self.elementwise(a, b, "add", |x, y| x + y)?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Add { a, b }, value, req))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, CoreError> {
        let value = self.elementwise(a, b, "mul", |x, y| x * y)?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Mul { a, b }, value, req))
    }

    fn elementwise(
        &self,
        a: NodeId,
        b: NodeId,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, CoreError> {
        self.check(a)?;
        self.check(b)?;
        let (at, bt) = (self.val(a), self.val(b));
        if at.shape() != bt.shape() {
            return Err(CoreError::shape(format!(
                "{name} {:?} vs {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(at.shape().to_vec(), data)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId, CoreError> {
        self.check(x)?;
        let xt = self.val(x);
        let data = xt.data().iter().map(|&v| v * factor).collect();
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        let req = self.requires(x);
        Ok(self.push(Op::Scale { x, factor }, value, req))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, CoreError> {
        self.check(a)?;
        self.check(b)?;
        let (at, bt) = (self.val(a), self.val(b));
        if !at.is_vector() || !bt.is_vector() || at.len() != bt.len() {
            return Err(CoreError::shape(format!(
                "dot {:?} . {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let mut acc = 0.0;
        for (&x, &y) in at.data().iter().zip(bt.data()) {
            acc += x * y;
        }
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Dot { a, b }, Tensor::scalar(acc), req))
    }

    /// Flattens each part in order into one rank-1 tensor.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, CoreError> {
        if parts.is_empty() {
            return Err(CoreError::invalid("concat of zero parts"));
        }
        let mut data = Vec::new();
        let mut req = false;
        for &p in parts {
            self.check(p)?;
            data.extend_from_slice(self.val(p).data());
            req |= self.requires(p);
        }
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            Tensor::vector(data)?,
            req,
        ))
    }

    /// Stacks equal-length vectors into a `[n, len]` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId, CoreError> {
        if rows.is_empty() {
            return Err(CoreError::invalid("stack of zero rows"));
        }
        self.check(rows[0])?;
        let width = self.val(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * width);
        let mut req = false;
        for &r in rows {
            self.check(r)?;
            let rt = self.val(r);
            if !rt.is_vector() || rt.len() != width {
                return Err(CoreError::shape(format!(
                    "stack rows of width {width}, got {:?}",
                    rt.shape()
                )));
            }
            data.extend_from_slice(rt.data());
            req |= self.requires(r);
        }
        Ok(self.push(
            Op::StackRows {
                rows: rows.to_vec(),
            },
            Tensor::matrix(rows.len(), width, data)?,
            req,
        ))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, CoreError> {
        self.check(x)?;
        let xt = self.val(x);
        let data = xt.data().iter().map(|&v| crate::fmath::sigmoid(v)).collect();
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        let req = self.requires(x);
        Ok(self.push(Op::Sigmoid { x }, value, req))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, CoreError> {
        self.check(x)?;
        let xt = self.val(x);
        let data = xt.data().iter().map(|&v| crate::fmath::tanh(v)).collect();
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        let req = self.requires(x);
        Ok(self.push(Op::Tanh { x }, value, req))
    }

    /// Softmax over all elements (shape preserved, max subtracted first).
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, CoreError> {
        self.check(x)?;
        let xt = self.val(x);
        let probs = crate::tensor::softmax(xt.data())?;
        let value = Tensor::new(xt.shape().to_vec(), probs)?;
        let req = self.requires(x);
        Ok(self.push(Op::Softmax { x }, value, req))
    }

    /// Negative log-likelihood of `label` under an already-softmaxed vector.
    pub fn cross_entropy(&mut self, probs: NodeId, label: usize) -> Result<NodeId, CoreError> {
        self.check(probs)?;
        let pt = self.val(probs);
        if label >= pt.len() {
            return Err(CoreError::index(format!(
                "label {label} for {} classes",
                pt.len()
            )));
        }
        let p = pt.data()[label].max(PROB_FLOOR);
        let value = Tensor::scalar(-crate::fmath::ln(p));
        let req = self.requires(probs);
        Ok(self.push(Op::CrossEntropy { probs, label }, value, req))
    }

    /// `-(t ln p + (1-t) ln(1-p))` for a scalar probability node.
    pub fn binary_cross_entropy(
        &mut self,
        prob: NodeId,
        target: f64,
    ) -> Result<NodeId, CoreError> {
        self.check(prob)?;
        let pt = self.val(prob);
        if !pt.is_scalar() {
            return Err(CoreError::shape(format!(
                "binary cross entropy needs a scalar, got {:?}",
                pt.shape()
            )));
        }
        if !(0.0..=1.0).contains(&target) {
            return Err(CoreError::domain(format!("target {target} not in [0,1]")));
        }
        let p = pt.data()[0].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let loss = -(target * crate::fmath::ln(p) + (1.0 - target) * crate::fmath::ln(1.0 - p));
        let req = self.requires(prob);
        Ok(self.push(
            Op::BinaryCrossEntropy { prob, target },
            Tensor::scalar(loss),
            req,
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, CoreError> {
        self.check(x)?;
        let total: f64 = self.val(x).data().iter().sum();
        let req = self.requires(x);
        Ok(self.push(Op::Sum { x }, Tensor::scalar(total), req))
    }

    /// Mean of elementwise squared differences, `sum((a-b)^2)/n`.
    pub fn mean_squared_diff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, CoreError> {
        self.check(a)?;
        self.check(b)?;
        let (at, bt) = (self.val(a), self.val(b));
        if at.shape() != bt.shape() {
            return Err(CoreError::shape(format!(
                "mean squared diff {:?} vs {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let n = at.len() as f64;
        let mut acc = 0.0;
        for (&x, &y) in at.data().iter().zip(bt.data()) {
            let d = x - y;
            acc += d * d;
        }
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(
            Op::MeanSquaredDiff { a, b },
            Tensor::scalar(acc / n),
            req,
        ))
    }

    // ---- backward ----

    /// Accumulates `d loss / d node` for every node on a trainable path.
    /// `loss` must be a scalar node. Clears gradients from previous calls.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), CoreError> {
        if self.nodes.is_empty() {
            return Err(CoreError::state("backward on an empty tape"));
        }
        self.check(loss)?;
        if !self.val(loss).is_scalar() {
            return Err(CoreError::shape(format!(
                "backward target must be scalar, got {:?}",
                self.val(loss).shape()
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.seed(loss, &[1.0]);
        for i in (0..=loss.0).rev() {
            if self.grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = self.grads[i].take().expect("checked above");
            self.propagate(i, g.data());
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Adds `delta` into the gradient slot of `id` if it is on a trainable
    /// path; gradients of constant subgraphs are never materialized.
    fn seed(&mut self, id: NodeId, delta: &[f64]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let slot = &mut self.grads[id.0];
        match slot {
            Some(t) => {
                for (g, &d) in t.data_mut().iter_mut().zip(delta) {
                    *g += d;
                }
            }
            None => {
                let shape = self.nodes[id.0].value.shape().to_vec();
                let t = Tensor::new(shape, delta.to_vec()).expect("gradient matches value shape");
                *slot = Some(t);
            }
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Ops are matched by index to avoid borrowing self.nodes mutably
        // while reading values; inputs always have indices < i.
        let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatVec { m, v } => {
                let (r, c) = (self.val(*m).rows(), self.val(*m).cols());
                if self.requires(*m) {
                    let vd = self.val(*v).data().to_vec();
                    let mut dm = vec![0.0; r * c];
                    for ii in 0..r {
                        let gi = g[ii];
                        for j in 0..c {
                            dm[ii * c + j] = gi * vd[j];
                        }
                    }
                    self.seed(*m, &dm);
                }
                if self.requires(*v) {
                    let md = self.val(*m).data().to_vec();
                    let mut dv = vec![0.0; c];
                    for ii in 0..r {
                        let gi = g[ii];
                        let row = &md[ii * c..(ii + 1) * c];
                        for j in 0..c {
                            dv[j] += gi * row[j];
                        }
                    }
                    self.seed(*v, &dv);
                }
            }
            Op::VecMat { v, m } => {
                let (r, c) = (self.val(*m).rows(), self.val(*m).cols());
                if self.requires(*v) {
                    let md = self.val(*m).data().to_vec();
                    let mut dv = vec![0.0; r];
                    for ii in 0..r {
                        let row = &md[ii * c..(ii + 1) * c];
                        let mut acc = 0.0;
                        for j in 0..c {
                            acc += row[j] * g[j];
                        }
                        dv[ii] = acc;
                    }
                    self.seed(*v, &dv);
                }
                if self.requires(*m) {
                    let vd = self.val(*v).data().to_vec();
                    let mut dm = vec![0.0; r * c];
                    for ii in 0..r {
                        let vi = vd[ii];
                        for j in 0..c {
                            dm[ii * c + j] = vi * g[j];
                        }
                    }
                    self.seed(*m, &dm);
                }
            }
            Op::Add { a, b } => {
                self.seed(*a, g);
                self.seed(*b, g);
            }
            Op::Mul { a, b } => {
                if self.requires(*a) {
                    let da: Vec<f64> = self
                        .val(*b)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&bv, &gv)| bv * gv)
                        .collect();
                    self.seed(*a, &da);
                }
                if self.requires(*b) {
                    let db: Vec<f64> = self
                        .val(*a)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&av, &gv)| av * gv)
                        .collect();
                    self.seed(*b, &db);
                }
            }
            Op::Scale { x, factor } => {
                let dx: Vec<f64> = g.iter().map(|&gv| gv * factor).collect();
                self.seed(*x, &dx);
            }
            Op::Dot { a, b } => {
                let g0 = g[0];
                if self.requires(*a) {
                    let da: Vec<f64> = self.val(*b).data().iter().map(|&bv| g0 * bv).collect();
                    self.seed(*a, &da);
                }
                if self.requires(*b) {
                    let db: Vec<f64> = self.val(*a).data().iter().map(|&av| g0 * av).collect();
                    self.seed(*b, &db);
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.val(p).len();
                    if self.requires(p) {
                        let dp = g[offset..offset + len].to_vec();
                        self.seed(p, &dp);
                    }
                    offset += len;
                }
            }
            Op::StackRows { rows } => {
                let width = self.val(rows[0]).len();
                for (ri, &rid) in rows.iter().enumerate() {
                    if self.requires(rid) {
                        let dr = g[ri * width..(ri + 1) * width].to_vec();
                        self.seed(rid, &dr);
                    }
                }
            }
            Op::Sigmoid { x } => {
                let dx: Vec<f64> = self
                    .nodes[i]
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * y * (1.0 - y))
                    .collect();
                self.seed(*x, &dx);
            }
            Op::Tanh { x } => {
                let dx: Vec<f64> = self
                    .nodes[i]
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| gv * (1.0 - y * y))
                    .collect();
                self.seed(*x, &dx);
            }
            Op::Softmax { x } => {
                let y = self.nodes[i].value.data();
                let inner: f64 = y.iter().zip(g).map(|(&yi, &gi)| yi * gi).sum();
                let dx: Vec<f64> = y
                    .iter()
                    .zip(g)
                    .map(|(&yi, &gi)| yi * (gi - inner))
                    .collect();
                self.seed(*x, &dx);
            }
            Op::CrossEntropy { probs, label } => {
                let p = self.val(*probs).data()[*label];
                let mut dp = vec![0.0; self.val(*probs).len()];
                // Zero slope inside the floor region, matching the forward clamp.
                if p > PROB_FLOOR {
                    dp[*label] = -g[0] / p;
                }
                self.seed(*probs, &dp);
            }
            Op::BinaryCrossEntropy { prob, target } => {
                let p = self.val(*prob).data()[0];
                let d = if p > PROB_FLOOR && p < 1.0 - PROB_FLOOR {
                    g[0] * (-target / p + (1.0 - target) / (1.0 - p))
                } else {
                    0.0
                };
                self.seed(*prob, &[d]);
            }
            Op::Sum { x } => {
                let dx = vec![g[0]; self.val(*x).len()];
                self.seed(*x, &dx);
            }
            Op::MeanSquaredDiff { a, b } => {
                let n = self.val(*a).len() as f64;
                let scale = 2.0 * g[0] / n;
                if self.requires(*a) {
                    let da: Vec<f64> = self
                        .val(*a)
                        .data()
                        .iter()
                        .zip(self.val(*b).data())
                        .map(|(&x, &y)| scale * (x - y))
                        .collect();
                    self.seed(*a, &da);
                }
                if self.requires(*b) {
                    let db: Vec<f64> = self
                        .val(*a)
                        .data()
                        .iter()
                        .zip(self.val(*b).data())
                        .map(|(&x, &y)| -scale * (x - y))
                        .collect();
                    self.seed(*b, &db);
                }
            }
        }
        self.nodes[i].op = op;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmath;
    use alloc::vec;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!(fmath::abs(a - b) < tol, "{a} vs {b}");
    }

    #[test]
    fn dot_gradients() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![4.0, 5.0, 6.0]).unwrap());
        let d = tape.dot(a, b).unwrap();
        assert_eq!(tape.value(d).data(), &[32.0]);
        tape.backward(d).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[4.0, 5.0, 6.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn matvec_forward_and_grad() {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::matrix(2, 3, vec![1.0, 0.0, 2.0, -1.0, 3.0, 1.0]).unwrap());
        let v = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let y = tape.matvec(m, v).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0, 8.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        // d sum / d v = column sums of M
        assert_eq!(tape.grad(v).unwrap().data(), &[0.0, 3.0, 3.0]);
        // d sum / d M = broadcast of v per row
        assert_eq!(
            tape.grad(m).unwrap().data(),
            &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let v = tape.leaf(Tensor::vector(vec![0.0; 2]).unwrap());
        assert!(matches!(tape.matvec(m, v), Err(CoreError::Shape(_))));
        let a = tape.leaf(Tensor::vector(vec![0.0; 2]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![0.0; 3]).unwrap());
        assert!(matches!(tape.add(a, b), Err(CoreError::Shape(_))));
    }

    #[test]
    fn foreign_id_rejected() {
        let mut small = Tape::new();
        let x = small.leaf(Tensor::scalar(1.0));
        let mut other = Tape::new();
        assert!(matches!(other.sigmoid(x), Err(CoreError::Index(_))));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(v), Err(CoreError::Shape(_))));
        let mut empty = Tape::new();
        assert!(matches!(
            empty.backward(NodeId(0)),
            Err(CoreError::State(_))
        ));
    }

    #[test]
    fn unused_nodes_have_no_gradient() {
        let mut tape = Tape::new();
        let used = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::scalar(5.0));
        let y = tape.mul(used, used).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(used).unwrap().data(), &[4.0]);
        assert!(tape.grad(unused).is_none());
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x*x + x  =>  dy/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        let y = tape.add(sq, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn constants_block_gradient_flow() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(4.0));
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.mul(c, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn saturated_sigmoid_stays_finite() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1000.0, -1000.0]).unwrap());
        let s = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0, 0.0]);
        let loss = tape.sum(s).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap().data();
        assert!(g.iter().all(|v| v.is_finite()));
        assert_close(g[0], 0.0, 1e-300);
    }

    #[test]
    fn cross_entropy_floor_blocks_nan() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![0.0, 1.0]).unwrap());
        let ce = tape.cross_entropy(p, 0).unwrap();
        let v = tape.value(ce).data()[0];
        assert!(v.is_finite());
        assert_close(v, -fmath::ln(PROB_FLOOR), 1e-9);
        tape.backward(ce).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_label_bounds() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![0.5, 0.5]).unwrap());
        assert!(matches!(
            tape.cross_entropy(p, 2),
            Err(CoreError::Index(_))
        ));
    }

    #[test]
    fn softmax_then_cross_entropy_gradient() {
        // Known closed form: d(-ln softmax(x)[k]) / dx_j = p_j - [j == k]
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.2, -1.3, 0.8]).unwrap());
        let p = tape.softmax(x).unwrap();
        let loss = tape.cross_entropy(p, 2).unwrap();
        tape.backward(loss).unwrap();
        let probs = tape.value(p).data().to_vec();
        let g = tape.grad(x).unwrap().data();
        for j in 0..3 {
            let expect = probs[j] - if j == 2 { 1.0 } else { 0.0 };
            assert_close(g[j], expect, 1e-12);
        }
    }

    #[test]
    fn binary_cross_entropy_matches_formula() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::scalar(0.3));
        let l = tape.binary_cross_entropy(p, 1.0).unwrap();
        assert_close(tape.value(l).data()[0], -fmath::ln(0.3), 1e-12);
        tape.backward(l).unwrap();
        assert_close(tape.grad(p).unwrap().data()[0], -1.0 / 0.3, 1e-12);
    }

    #[test]
    fn concat_routes_gradients_by_span() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![3.0]).unwrap());
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
        let w = tape.constant(Tensor::vector(vec![10.0, 20.0, 30.0]).unwrap());
        let d = tape.dot(c, w).unwrap();
        tape.backward(d).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[10.0, 20.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[30.0]);
    }

    #[test]
    fn mean_squared_diff_value_and_grads() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::vector(vec![0.0, 4.0]).unwrap());
        let m = tape.mean_squared_diff(a, b).unwrap();
        assert_close(tape.value(m).data()[0], (1.0 + 4.0) / 2.0, 1e-15);
        tape.backward(m).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0, -2.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[-1.0, 2.0]);
    }
}
