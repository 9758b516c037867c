//! Wengert tape for reverse-mode differentiation of matrix expressions.
//!
//! Nodes are appended in evaluation order, each caching its forward value.
//! `backward` walks the list in reverse and accumulates adjoints. Parameters are
//! leaves tagged with a [`ParamId`]; registering the same id twice returns the
//! existing node, so gradients from repeated uses of a weight accumulate.

use std::collections::{BTreeMap, HashMap};

use super::matrix::{matmul, matmul_transa, matmul_transb, Matrix};
use super::mlp::Activation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulTransB(NodeId, NodeId),
    Transpose(NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    Activate(NodeId, Activation),
    LogSigmoid(NodeId),
    Square(NodeId),
    ConcatCols(NodeId, NodeId),
    RowNorm(NodeId),
    RowNormalize(NodeId),
    FrobeniusNorm(NodeId),
    Mean(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulTransB(..) => "matmul_transb",
            Op::Transpose(..) => "transpose",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Activate(..) => "activate",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::Square(..) => "square",
            Op::ConcatCols(..) => "concat_cols",
            Op::RowNorm(..) => "row_norm",
            Op::RowNormalize(..) => "row_normalize",
            Op::FrobeniusNorm(..) => "frobenius_norm",
            Op::Mean(..) => "mean",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, NodeId>,
}

/// Gradients keyed by parameter, shaped like the parameter.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    map: BTreeMap<ParamId, Matrix>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.map.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        self.value(id).item()
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A trainable leaf. Returns the existing node if `id` was already registered.
    pub fn param(&mut self, id: ParamId, value: &Matrix) -> NodeId {
        if let Some(&node) = self.params.get(&id) {
            return node;
        }
        self.nodes.push(Node {
            value: value.clone(),
            op: Op::Leaf,
            requires_grad: true,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.params.insert(id, node);
        node
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = eval(&op, |id| &self.nodes[id.0].value)?;
        let requires_grad = inputs(&op).iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_transb(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMulTransB(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Transpose(a))
    }

    /// Adds a 1 x n row to every row of a B x n matrix.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        self.push(Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, c))
    }

    /// Adds `c` to every entry.
    pub fn offset(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Offset(a, c))
    }

    pub fn activate(&mut self, a: NodeId, act: Activation) -> Result<NodeId> {
        self.push(Op::Activate(a, act))
    }

    /// Elementwise `log(sigmoid(x))`, evaluated without forming `sigmoid(x)`.
    pub fn log_sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::LogSigmoid(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Square(a))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::ConcatCols(a, b))
    }

    /// Per-row Euclidean norm, B x 1.
    pub fn row_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::RowNorm(a))
    }

    /// Scales each row to unit length; zero rows stay zero.
    pub fn row_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::RowNormalize(a))
    }

    pub fn frobenius_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::FrobeniusNorm(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a))
    }

    /// Recomputes every node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut values: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => eval(op, |id| &values[id.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse pass from a scalar node. Every registered parameter gets an
    /// entry, zero when the loss does not depend on it.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar terminal node, found {}x{}",
                root.value.rows(),
                root.value.cols()
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                adj[idx] = Some(g);
                continue;
            }
            for (input, grad) in self.vjp(node, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot => *slot = Some(grad),
                }
            }
        }

        let mut map = BTreeMap::new();
        for (&pid, &node) in &self.params {
            let value = &self.nodes[node.0].value;
            let g = adj
                .get_mut(node.0)
                .and_then(Option::take)
                .unwrap_or_else(|| Matrix::zeros(value.rows(), value.cols()));
            map.insert(pid, g);
        }
        Ok(Gradients { map })
    }

    fn vjp(&self, node: &Node, g: &Matrix) -> Result<Vec<(NodeId, Matrix)>> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let needs = |id: NodeId| self.nodes[id.0].requires_grad;
        let out = &node.value;
        let mut grads = Vec::with_capacity(2);
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(a) {
                    grads.push((a, matmul_transb(g, val(b))?));
                }
                if needs(b) {
                    grads.push((b, matmul_transa(val(a), g)?));
                }
            }
            Op::MatMulTransB(a, b) => {
                if needs(a) {
                    grads.push((a, matmul(g, val(b))?));
                }
                if needs(b) {
                    grads.push((b, matmul_transa(g, val(a))?));
                }
            }
            Op::Transpose(a) => grads.push((a, g.transpose())),
            Op::AddBias(a, bias) => {
                grads.push((a, g.clone()));
                if needs(bias) {
                    grads.push((bias, g.col_sums()));
                }
            }
            Op::Add(a, b) => {
                grads.push((a, g.clone()));
                grads.push((b, g.clone()));
            }
            Op::Sub(a, b) => {
                grads.push((a, g.clone()));
                grads.push((b, g.scale(-1.0)));
            }
            Op::Scale(a, c) => grads.push((a, g.scale(c))),
            Op::Offset(a, _) => grads.push((a, g.clone())),
            Op::Activate(a, act) => {
                let d = g.zip_map(out, "activate", |gv, y| gv * act.derivative_from_output(y))?;
                grads.push((a, d));
            }
            Op::LogSigmoid(a) => {
                // d/dx log(sigmoid(x)) = sigmoid(-x)
                let d = g.zip_map(val(a), "log_sigmoid", |gv, x| gv * sigmoid(-x))?;
                grads.push((a, d));
            }
            Op::Square(a) => {
                let d = g.zip_map(val(a), "square", |gv, x| 2.0 * x * gv)?;
                grads.push((a, d));
            }
            Op::ConcatCols(a, b) => {
                let ca = val(a).cols();
                let cb = val(b).cols();
                let mut ga = Matrix::zeros(g.rows(), ca);
                let mut gb = Matrix::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    let row = g.row(r);
                    ga.row_mut(r).copy_from_slice(&row[..ca]);
                    gb.row_mut(r).copy_from_slice(&row[ca..]);
                }
                grads.push((a, ga));
                grads.push((b, gb));
            }
            Op::RowNorm(a) => {
                let x = val(a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let n = out.get(r, 0);
                    if n > 0.0 {
                        let s = g.get(r, 0) / n;
                        for (dv, &xv) in d.row_mut(r).iter_mut().zip(x.row(r)) {
                            *dv = s * xv;
                        }
                    }
                }
                grads.push((a, d));
            }
            Op::RowNormalize(a) => {
                let x = val(a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let n = row_l2(x.row(r));
                    if n > 0.0 {
                        let y = out.row(r);
                        let gr = g.row(r);
                        let proj: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((dv, &yv), &gv) in d.row_mut(r).iter_mut().zip(y).zip(gr) {
                            *dv = (gv - yv * proj) / n;
                        }
                    }
                }
                grads.push((a, d));
            }
            Op::FrobeniusNorm(a) => {
                let n = out.item()?;
                let x = val(a);
                let d = if n > 0.0 {
                    x.scale(g.item()? / n)
                } else {
                    Matrix::zeros(x.rows(), x.cols())
                };
                grads.push((a, d));
            }
            Op::Mean(a) => {
                let x = val(a);
                let n = (x.rows() * x.cols()).max(1) as f64;
                grads.push((a, Matrix::filled(x.rows(), x.cols(), g.item()? / n)));
            }
        }
        Ok(grads)
    }
}

fn inputs(op: &Op) -> Vec<NodeId> {
    match *op {
        Op::Leaf => vec![],
        Op::MatMul(a, b)
        | Op::MatMulTransB(a, b)
        | Op::AddBias(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::ConcatCols(a, b) => vec![a, b],
        Op::Scale(a, _)
        | Op::Transpose(a)
        | Op::Offset(a, _)
        | Op::Activate(a, _)
        | Op::LogSigmoid(a)
        | Op::Square(a)
        | Op::RowNorm(a)
        | Op::RowNormalize(a)
        | Op::FrobeniusNorm(a)
        | Op::Mean(a) => vec![a],
    }
}

fn eval<'a>(op: &Op, val: impl Fn(NodeId) -> &'a Matrix) -> Result<Matrix> {
    let out = match *op {
        Op::Leaf => return Err(Error::Contract("leaf nodes are not evaluated".into())),
        Op::MatMul(a, b) => matmul(val(a), val(b))?,
        Op::MatMulTransB(a, b) => matmul_transb(val(a), val(b))?,
        Op::Transpose(a) => val(a).transpose(),
        Op::AddBias(a, b) => add_bias(val(a), val(b))?,
        Op::Add(a, b) => val(a).add(val(b))?,
        Op::Sub(a, b) => val(a).sub(val(b))?,
        Op::Scale(a, c) => val(a).scale(c),
        Op::Offset(a, c) => val(a).map(|v| v + c),
        Op::Activate(a, act) => val(a).map(|v| act.apply(v)),
        Op::LogSigmoid(a) => val(a).map(log_sigmoid),
        Op::Square(a) => val(a).map(|v| v * v),
        Op::ConcatCols(a, b) => val(a).hstack(val(b))?,
        Op::RowNorm(a) => {
            let x = val(a);
            let norms: Vec<f64> = x.iter_rows().map(row_l2).collect();
            Matrix::from_vec(x.rows(), 1, norms)?
        }
        Op::RowNormalize(a) => normalize_rows(val(a)),
        Op::FrobeniusNorm(a) => Matrix::scalar(val(a).frobenius_norm()),
        Op::Mean(a) => Matrix::scalar(val(a).mean()),
    };
    out.ensure_finite(op.name())
}

pub(crate) fn add_bias(a: &Matrix, bias: &Matrix) -> Result<Matrix> {
    if bias.rows() != 1 || bias.cols() != a.cols() {
        return Err(Error::shape("add_bias", a.shape(), bias.shape()));
    }
    let mut out = a.clone();
    let b = bias.data();
    for r in 0..out.rows() {
        for (o, bv) in out.row_mut(r).iter_mut().zip(b) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Row-wise L2 normalization; zero rows are left as zero.
pub fn normalize_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = row_l2(row);
        if n > 0.0 {
            for v in row.iter_mut() {
                *v /= n;
            }
        }
    }
    out
}

#[inline]
fn row_l2(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
