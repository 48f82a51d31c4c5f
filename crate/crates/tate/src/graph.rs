//! Arena-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Operations append nodes to a [`Graph`]; node ids only ever reference
//! earlier nodes, so insertion order is a topological order and the backward
//! pass is a single reverse sweep. One graph is built per forward pass and
//! confined to one thread.

use crate::tensor::{NumericsError, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Abs(NodeId),
    /// ln(x + eps); eps supplied by the caller.
    LogEps(NodeId, f64),
    ClampMin(NodeId, f64),
    Sqrt(NodeId),
    Softmax(NodeId, usize),
    MeanRows(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    Sum(NodeId),
    MeanAll(NodeId),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
}

/// Differentiation graph. Gradients accumulate additively across repeated
/// backward calls; [`Graph::zero_grads`] resets them.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Inserts a tensor with no parents. Leaves are both parameters and
    /// constants; only the caller distinguishes them.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_div(self.value(b))?;
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        self.push(v, Op::Abs(a))
    }

    /// ln(x + eps). The shifted argument must be positive everywhere.
    pub fn log_eps(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&x| x + eps <= 0.0) {
            return Err(NumericsError::Domain {
                op: "log",
                msg: "non-positive argument after epsilon shift".into(),
            });
        }
        let v = self.value(a).map(|x| (x + eps).ln());
        Ok(self.push(v, Op::LogEps(a, eps)))
    }

    /// Elementwise max(x, min); the floor carries no gradient.
    pub fn clamp_min(&mut self, a: NodeId, min: f64) -> NodeId {
        let v = self.value(a).map(|x| x.max(min));
        self.push(v, Op::ClampMin(a, min))
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(NumericsError::Domain {
                op: "sqrt",
                msg: "negative argument".into(),
            });
        }
        let v = self.value(a).map(f64::sqrt);
        Ok(self.push(v, Op::Sqrt(a)))
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let v = self.value(a).softmax(axis)?;
        Ok(self.push(v, Op::Softmax(a, axis)))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mean_rows();
        self.push(v, Op::MeanRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&tensors)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a).slice_cols(start, end)?;
        Ok(self.push(v, Op::SliceCols(a, start, end)))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.numel() as f64);
        self.push(v, Op::MeanAll(a))
    }

    /// Reverse sweep from a scalar root; gradients land in every reachable
    /// node's grad slot. Each call contributes one full chain-rule pass, so
    /// repeated calls without [`Graph::zero_grads`] accumulate additively.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(NumericsError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        // Sweep into a scratch buffer so gradients left over from earlier
        // backward calls don't feed back into this pass.
        let mut pending: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        acc(&mut pending, root, Tensor::scalar(1.0))?;
        for i in (0..=root.0).rev() {
            let Some(g) = pending[i].clone() else {
                continue;
            };
            match self.nodes[i].op.clone() {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let da = g.matmul(&self.value(b).transpose())?;
                    let db = self.value(a).transpose().matmul(&g)?;
                    acc(&mut pending, a, da)?;
                    acc(&mut pending, b, db)?;
                }
                Op::Transpose(a) => acc(&mut pending, a, g.transpose())?,
                Op::Add(a, b) => {
                    acc(&mut pending, a, g.clone())?;
                    acc(&mut pending, b, g)?;
                }
                Op::Sub(a, b) => {
                    acc(&mut pending, a, g.clone())?;
                    acc(&mut pending, b, g.scale(-1.0))?;
                }
                Op::Mul(a, b) => {
                    let da = g.mul(self.value(b))?;
                    let db = g.mul(self.value(a))?;
                    acc(&mut pending, a, da)?;
                    acc(&mut pending, b, db)?;
                }
                Op::Div(a, b) => {
                    let bv = self.value(b).clone();
                    let da = g.zip_div(&bv)?;
                    let out = self.nodes[i].value.clone();
                    let db = g.mul(&out)?.zip_div(&bv)?.scale(-1.0);
                    acc(&mut pending, a, da)?;
                    acc(&mut pending, b, db)?;
                }
                Op::Scale(a, c) => acc(&mut pending, a, g.scale(c))?,
                Op::Relu(a) => {
                    let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut pending, a, g.mul(&mask)?)?;
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let dy = y.map(|s| s * (1.0 - s));
                    acc(&mut pending, a, g.mul(&dy)?)?;
                }
                Op::Abs(a) => {
                    let sign = self.value(a).map(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(&mut pending, a, g.mul(&sign)?)?;
                }
                Op::LogEps(a, eps) => {
                    let dy = self.value(a).map(|x| 1.0 / (x + eps));
                    acc(&mut pending, a, g.mul(&dy)?)?;
                }
                Op::ClampMin(a, min) => {
                    let mask = self.value(a).map(|x| if x > min { 1.0 } else { 0.0 });
                    acc(&mut pending, a, g.mul(&mask)?)?;
                }
                Op::Sqrt(a) => {
                    let y = &self.nodes[i].value;
                    let dy = y.map(|s| 0.5 / s);
                    acc(&mut pending, a, g.mul(&dy)?)?;
                }
                Op::Softmax(a, axis) => {
                    let y = self.nodes[i].value.clone();
                    let da = softmax_backward(&y, &g, axis);
                    acc(&mut pending, a, da)?;
                }
                Op::MeanRows(a) => {
                    let (m, n) = (self.value(a).rows(), self.value(a).cols());
                    let mut data = Vec::with_capacity(m * n);
                    for _ in 0..m {
                        data.extend(g.data().iter().map(|v| v / m as f64));
                    }
                    acc(&mut pending, a, Tensor::matrix(m, n, data)?)?;
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.value(p).cols();
                        let gp = g.slice_cols(off, off + w)?;
                        acc(&mut pending, p, gp)?;
                        off += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let (m, n) = (self.value(a).rows(), self.value(a).cols());
                    let mut data = vec![0.0; m * n];
                    for r in 0..m {
                        for c in start..end {
                            data[r * n + c] = g.data()[r * (end - start) + (c - start)];
                        }
                    }
                    acc(&mut pending, a, Tensor::matrix(m, n, data)?)?;
                }
                Op::Sum(a) => {
                    let gv = g.item()?;
                    let shape = self.value(a).shape().to_vec();
                    let da = Tensor::new(shape.clone(), vec![gv; shape.iter().product()])?;
                    acc(&mut pending, a, da)?;
                }
                Op::MeanAll(a) => {
                    let t = self.value(a);
                    let gv = g.item()? / t.numel() as f64;
                    let da = Tensor::new(t.shape().to_vec(), vec![gv; t.numel()])?;
                    acc(&mut pending, a, da)?;
                }
            }
        }
        for (node, p) in self.nodes.iter_mut().zip(pending) {
            if let Some(g) = p {
                match &mut node.grad {
                    Some(existing) => existing.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn acc(pending: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
    match &mut pending[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn softmax_backward(y: &Tensor, g: &Tensor, axis: usize) -> Tensor {
    let (yt, gt) = if axis == 0 {
        (y.transpose(), g.transpose())
    } else {
        (y.clone(), g.clone())
    };
    let (m, n) = (yt.rows(), yt.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let yr = &yt.data()[i * n..(i + 1) * n];
        let gr = &gt.data()[i * n..(i + 1) * n];
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..n {
            out[i * n + j] = yr[j] * (gr[j] - dot);
        }
    }
    let r = Tensor::matrix(m, n, out).expect("shape preserved");
    if axis == 0 {
        r.transpose()
    } else {
        r
    }
}

impl Tensor {
    fn zip_div(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "div",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        Ok(Tensor::new(
            self.shape().to_vec(),
            self.data()
                .iter()
                .zip(other.data())
                .map(|(&a, &b)| a / b)
                .collect(),
        )?)
    }
}
