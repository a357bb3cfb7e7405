//! Reverse-mode differentiation over a linear record of tensor operations.
//!
//! A [`Tape`] is an append-only list of nodes. Leaves are either variables
//! (gradients are tracked) or constants (they are not); every other node is
//! a primitive applied to earlier nodes. Nodes that depend on no variable are
//! skipped entirely during the backward sweep.

use std::borrow::Cow;

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    Sigmoid(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    SquaredL2(NodeId, NodeId),
    /// `v_c = ||z - rows_c||^2` for every row of a `[k, d]` matrix.
    SqDistRows { z: NodeId, rows: NodeId },
    SoftMin(NodeId),
    Index(NodeId, usize),
    /// Elementwise `a^p` on a nonnegative operand.
    Pow(NodeId, f64),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// The computation record: every primitive applied, in order, together with
/// the intermediate values the backward sweep needs.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar output with respect to the variable leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a variable leaf. Every variable leaf has an entry, zero
    /// when the output does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Cow<'a, Tensor>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn var(&mut self, value: Tensor) -> NodeId {
        self.leaf(Cow::Owned(value), true)
    }

    /// A tracked leaf borrowing its value (model parameters).
    pub fn var_ref(&mut self, value: &'a Tensor) -> NodeId {
        self.leaf(Cow::Borrowed(value), true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(Cow::Owned(value), false)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor) -> NodeId {
        self.leaf(Cow::Borrowed(value), false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        self.value(id).as_scalar()
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = forward(&op, |id| &*self.nodes[id.0].value)?;
        let needs_grad = operands(&op).iter().any(|id| self.nodes[id.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Affine { x, w, b })
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, factor))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    pub fn squared_l2(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::SquaredL2(a, b))
    }

    pub fn sq_dist_rows(&mut self, z: NodeId, rows: NodeId) -> Result<NodeId> {
        self.push(Op::SqDistRows { z, rows })
    }

    pub fn soft_min(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SoftMin(a))
    }

    pub fn index(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        self.push(Op::Index(a, i))
    }

    pub fn pow(&mut self, a: NodeId, exponent: f64) -> Result<NodeId> {
        self.push(Op::Pow(a, exponent))
    }

    /// Recomputes every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone().into_owned(),
                ref op => forward(op, |id| &values[id.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Nodes that do not feed into `output`.
    pub fn unused_nodes(&self, output: NodeId) -> Vec<NodeId> {
        let mut reachable = vec![false; self.nodes.len()];
        reachable[output.0] = true;
        for i in (0..=output.0).rev() {
            if reachable[i] {
                for op in operands(&self.nodes[i].op) {
                    reachable[op.0] = true;
                }
            }
        }
        (0..self.nodes.len())
            .filter(|&i| !reachable[i])
            .map(NodeId)
            .collect()
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if !out.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, node {} has shape {:?}",
                output.0,
                out.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if out.needs_grad {
            grads[output.0] = Some(Tensor::filled(out.value.shape(), 1.0));
        }

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }

        for (i, node) in self.nodes.iter().enumerate() {
            let is_var = node.needs_grad && matches!(node.op, Op::Leaf);
            if !is_var {
                grads[i] = None;
            } else if grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, node: &Node<'a>, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |id: NodeId| -> &Tensor { &self.nodes[id.0].value };
        match node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let gy = g.data();
                let wt = val(w);
                let xs = val(x).data();
                let n = xs.len();
                if self.needs(x) {
                    let mut gx = vec![0.0; n];
                    for (i, &gi) in gy.iter().enumerate() {
                        if gi != 0.0 {
                            for (acc, wij) in gx.iter_mut().zip(wt.row(i)) {
                                *acc += gi * wij;
                            }
                        }
                    }
                    accumulate(grads, x, Tensor::vector(gx))?;
                }
                if self.needs(w) {
                    let mut gw = vec![0.0; gy.len() * n];
                    for (i, &gi) in gy.iter().enumerate() {
                        if gi != 0.0 {
                            for (acc, xj) in gw[i * n..(i + 1) * n].iter_mut().zip(xs) {
                                *acc = gi * xj;
                            }
                        }
                    }
                    accumulate(grads, w, Tensor::new(wt.shape().to_vec(), gw)?)?;
                }
                if self.needs(b) {
                    accumulate(grads, b, g.clone())?;
                }
            }
            Op::Relu(a) => {
                let gx = zip(g, &node.value, |gi, yi| if yi > 0.0 { gi } else { 0.0 });
                accumulate(grads, a, gx)?;
            }
            Op::Sigmoid(a) => {
                let gx = zip(g, &node.value, |gi, s| gi * s * (1.0 - s));
                accumulate(grads, a, gx)?;
            }
            Op::Add(a, b) => {
                if self.needs(a) {
                    accumulate(grads, a, g.clone())?;
                }
                if self.needs(b) {
                    accumulate(grads, b, g.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    accumulate(grads, a, g.clone())?;
                }
                if self.needs(b) {
                    accumulate(grads, b, g.scale(-1.0))?;
                }
            }
            Op::Scale(a, factor) => accumulate(grads, a, g.scale(factor))?,
            Op::Sum(a) => {
                let gs = g.data()[0];
                accumulate(grads, a, Tensor::filled(val(a).shape(), gs))?;
            }
            Op::SquaredL2(a, b) => {
                let gs = g.data()[0];
                let diff = val(a).sub(val(b))?.scale(2.0 * gs);
                if self.needs(b) {
                    accumulate(grads, b, diff.scale(-1.0))?;
                }
                if self.needs(a) {
                    accumulate(grads, a, diff)?;
                }
            }
            Op::SqDistRows { z, rows } => {
                let zt = val(z);
                let m = val(rows);
                let d = zt.len();
                let mut gz = vec![0.0; d];
                let mut gm = vec![0.0; m.len()];
                for (c, &gc) in g.data().iter().enumerate() {
                    for j in 0..d {
                        let diff = 2.0 * gc * (zt.data()[j] - m.row(c)[j]);
                        gz[j] += diff;
                        gm[c * d + j] = -diff;
                    }
                }
                if self.needs(z) {
                    accumulate(grads, z, Tensor::vector(gz))?;
                }
                if self.needs(rows) {
                    accumulate(grads, rows, Tensor::new(m.shape().to_vec(), gm)?)?;
                }
            }
            Op::SoftMin(a) => {
                let gs = g.data()[0];
                let w = tensor::soft_min_weights(val(a).data());
                let gv = Tensor::new(val(a).shape().to_vec(), w.into_iter().map(|p| p * gs).collect())?;
                accumulate(grads, a, gv)?;
            }
            Op::Index(a, i) => {
                let mut gv = Tensor::zeros(val(a).shape());
                gv.data_mut()[i] = g.data()[0];
                accumulate(grads, a, gv)?;
            }
            Op::Pow(a, p) => {
                let gx = zip(g, val(a), |gi, x| {
                    if x > 0.0 {
                        gi * p * x.powf(p - 1.0)
                    } else {
                        0.0
                    }
                });
                accumulate(grads, a, gx)?;
            }
        }
        Ok(())
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked on record")
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn operands(op: &Op) -> Vec<NodeId> {
    match *op {
        Op::Leaf => Vec::new(),
        Op::Affine { x, w, b } => vec![x, w, b],
        Op::Relu(a) | Op::Sigmoid(a) | Op::Scale(a, _) | Op::Sum(a) | Op::SoftMin(a) => vec![a],
        Op::Index(a, _) | Op::Pow(a, _) => vec![a],
        Op::Add(a, b) | Op::Sub(a, b) | Op::SquaredL2(a, b) => vec![a, b],
        Op::SqDistRows { z, rows } => vec![z, rows],
    }
}

fn forward<'v>(op: &Op, get: impl Fn(NodeId) -> &'v Tensor) -> Result<Tensor> {
    Ok(match *op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::Affine { x, w, b } => tensor::affine(get(x), get(w), get(b))?,
        Op::Relu(a) => tensor::relu(get(a)),
        Op::Sigmoid(a) => tensor::sigmoid(get(a)),
        Op::Add(a, b) => get(a).add(get(b))?,
        Op::Sub(a, b) => get(a).sub(get(b))?,
        Op::Scale(a, f) => get(a).scale(f),
        Op::Sum(a) => Tensor::scalar(get(a).sum()),
        Op::SquaredL2(a, b) => Tensor::scalar(tensor::squared_l2(get(a), get(b))?),
        Op::SqDistRows { z, rows } => {
            let (zt, m) = (get(z), get(rows));
            match m.shape() {
                &[_, d] if zt.shape() == [d] => {}
                other => return Err(Error::shape("sq_dist_rows", zt.shape(), other)),
            }
            let k = m.shape()[0];
            Tensor::vector((0..k).map(|c| tensor::sq_dist(zt.data(), m.row(c))).collect())
        }
        Op::SoftMin(a) => Tensor::scalar(tensor::soft_min(get(a).data())),
        Op::Index(a, i) => {
            let v = get(a);
            if i >= v.len() {
                return Err(Error::Contract(format!("index {i} out of range for {:?}", v.shape())));
            }
            Tensor::scalar(v.data()[i])
        }
        Op::Pow(a, p) => {
            let v = get(a);
            if v.data().iter().any(|&x| x < 0.0) {
                return Err(Error::Contract("pow requires a nonnegative operand".into()));
            }
            v.map(|x| x.powf(p))
        }
    })
}
