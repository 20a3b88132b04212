//! A small reverse-mode compute graph over dense matrices.
//!
//! The op set is closed: exactly the primitives needed to express the
//! contrastive and prototype-classification objectives. Nodes are appended in
//! construction order, so the node vector is already a topological order.
//! Shapes are inferred when a node is built; values are computed by
//! [`ComputeGraph::forward`] and gradients by [`ComputeGraph::backward`].

use std::collections::BTreeMap;

use crate::error::{GcdError, Result};
use crate::matrix::Matrix;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Values for the parameter leaves of a graph.
pub type LeafValues = BTreeMap<NodeId, Matrix>;
/// Gradients keyed by parameter leaf.
pub type Gradients = BTreeMap<NodeId, Matrix>;

#[derive(Clone, Debug)]
pub enum Op {
    /// Trainable leaf, value supplied at forward time.
    Param,
    /// Fixed leaf carrying its own value.
    Constant(Matrix),
    /// `a · b`, or `a · bᵀ` when `transpose_rhs` is set.
    MatMul {
        a: NodeId,
        b: NodeId,
        transpose_rhs: bool,
    },
    /// Elementwise sum; `b` may also be a single row broadcast over `a`.
    Add { a: NodeId, b: NodeId },
    Scale { a: NodeId, factor: f64 },
    RowL2Normalize(NodeId),
    RowSoftmax { a: NodeId, temperature: f64 },
    Log(NodeId),
    Exp(NodeId),
    Relu(NodeId),
    /// Column means, `1 x cols`.
    MeanRows(NodeId),
    /// Sum of all entries, `1 x 1`.
    Sum(NodeId),
    /// Per-row `-Σ_k target_k · log probs_k`, `rows x 1`.
    SoftCrossEntropy { target: NodeId, probs: NodeId },
    Negate(NodeId),
    /// Per-row `-Σ_k p_k log p_k` with `0 · log 0 = 0`, `rows x 1`.
    Entropy(NodeId),
    StopGradient(NodeId),
    SelectRows { a: NodeId, rows: Vec<usize> },
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        match *self {
            Op::Param | Op::Constant(_) => vec![],
            Op::MatMul { a, b, .. } | Op::Add { a, b } => vec![a, b],
            Op::SoftCrossEntropy { target, probs } => vec![target, probs],
            Op::Scale { a, .. } | Op::RowSoftmax { a, .. } | Op::SelectRows { a, .. } => vec![a],
            Op::RowL2Normalize(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Relu(a)
            | Op::MeanRows(a)
            | Op::Sum(a)
            | Op::Negate(a)
            | Op::Entropy(a)
            | Op::StopGradient(a) => vec![a],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Op::Param => "param",
            Op::Constant(_) => "constant",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::RowL2Normalize(_) => "row-l2-normalize",
            Op::RowSoftmax { .. } => "row-softmax",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Relu(_) => "relu",
            Op::MeanRows(_) => "mean-over-rows",
            Op::Sum(_) => "sum",
            Op::SoftCrossEntropy { .. } => "soft-cross-entropy",
            Op::Negate(_) => "negate",
            Op::Entropy(_) => "entropy",
            Op::StopGradient(_) => "stop-gradient",
            Op::SelectRows { .. } => "select-rows",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: (usize, usize),
    requires_grad: bool,
    value: Option<Matrix>,
}

#[derive(Clone, Debug, Default)]
pub struct ComputeGraph {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
    forward_done: bool,
}

impl ComputeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaves in creation order.
    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].shape
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    /// Cached value from the most recent forward pass.
    pub fn value(&self, id: NodeId) -> Option<&Matrix> {
        self.nodes[id.0].value.as_ref()
    }

    /// Scalar value of a `1 x 1` node after forward.
    pub fn scalar(&self, id: NodeId) -> Option<f64> {
        self.value(id).map(Matrix::item)
    }

    fn push(&mut self, op: Op, shape: (usize, usize)) -> NodeId {
        let requires_grad = match &op {
            Op::Param => true,
            Op::Constant(_) | Op::StopGradient(_) => false,
            other => other
                .parents()
                .iter()
                .any(|p| self.nodes[p.0].requires_grad),
        };
        let value = match &op {
            Op::Constant(m) => Some(m.clone()),
            _ => None,
        };
        self.nodes.push(Node {
            op,
            shape,
            requires_grad,
            value,
        });
        self.forward_done = false;
        NodeId(self.nodes.len() - 1)
    }

    fn mismatch(&self, expected: (usize, usize), actual: (usize, usize)) -> GcdError {
        GcdError::ShapeMismatch {
            node: self.nodes.len(),
            expected,
            actual,
        }
    }

    pub fn param(&mut self, rows: usize, cols: usize) -> NodeId {
        let id = self.push(Op::Param, (rows, cols));
        self.params.push(id);
        id
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        let shape = value.shape();
        self.push(Op::Constant(value), shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(self.mismatch((sa.1, sb.1), sb));
        }
        Ok(self.push(
            Op::MatMul {
                a,
                b,
                transpose_rhs: false,
            },
            (sa.0, sb.1),
        ))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(self.mismatch((sb.0, sa.1), sb));
        }
        Ok(self.push(
            Op::MatMul {
                a,
                b,
                transpose_rhs: true,
            },
            (sa.0, sb.0),
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb && sb != (1, sa.1) {
            return Err(self.mismatch(sa, sb));
        }
        Ok(self.push(Op::Add { a, b }, sa))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Scale { a, factor }, s)
    }

    pub fn row_l2_normalize(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::RowL2Normalize(a), s)
    }

    pub fn row_softmax(&mut self, a: NodeId, temperature: f64) -> Result<NodeId> {
        if !(temperature > 0.0) {
            return Err(GcdError::InvalidArgument(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let s = self.shape(a);
        Ok(self.push(Op::RowSoftmax { a, temperature }, s))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Log(a), s)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Exp(a), s)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Relu(a), s)
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::MeanRows(a), (1, s.1))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), (1, 1))
    }

    pub fn soft_cross_entropy(&mut self, target: NodeId, probs: NodeId) -> Result<NodeId> {
        let (st, sp) = (self.shape(target), self.shape(probs));
        if st != sp {
            return Err(self.mismatch(sp, st));
        }
        Ok(self.push(Op::SoftCrossEntropy { target, probs }, (sp.0, 1)))
    }

    pub fn negate(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Negate(a), s)
    }

    pub fn entropy(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Entropy(a), (s.0, 1))
    }

    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::StopGradient(a), s)
    }

    pub fn select_rows(&mut self, a: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let s = self.shape(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= s.0) {
            return Err(GcdError::InvalidArgument(format!(
                "row index {bad} out of range for {} rows",
                s.0
            )));
        }
        let n = rows.len();
        Ok(self.push(Op::SelectRows { a, rows }, (n, s.1)))
    }

    /// Convenience: `a + b + ...` and a scalar-weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(f64, NodeId)]) -> Result<NodeId> {
        let mut acc: Option<NodeId> = None;
        for &(w, id) in terms {
            let scaled = self.scale(id, w);
            acc = Some(match acc {
                None => scaled,
                Some(prev) => self.add(prev, scaled)?,
            });
        }
        acc.ok_or_else(|| GcdError::InvalidArgument("empty weighted sum".into()))
    }

    /// Evaluates every node and returns the value of `output`.
    pub fn forward(&mut self, leaves: &LeafValues, output: NodeId) -> Result<Matrix> {
        self.run_forward(leaves, false)?;
        Ok(self.nodes[output.0].value.clone().expect("forward populated"))
    }

    /// Like [`forward`](Self::forward) but every stop-gradient node keeps the
    /// value from the previous pass. This is the function whose derivative
    /// `backward` computes, which makes it the right target for finite
    /// differences.
    pub fn forward_frozen(&mut self, leaves: &LeafValues, output: NodeId) -> Result<Matrix> {
        if !self.forward_done {
            return Err(GcdError::ForwardNotRun);
        }
        self.run_forward(leaves, true)?;
        Ok(self.nodes[output.0].value.clone().expect("forward populated"))
    }

    fn run_forward(&mut self, leaves: &LeafValues, frozen_stops: bool) -> Result<()> {
        self.forward_done = false;
        for i in 0..self.nodes.len() {
            let value = match &self.nodes[i].op {
                Op::Param => {
                    let v = leaves
                        .get(&NodeId(i))
                        .ok_or(GcdError::UnassignedLeaf { node: i })?;
                    if v.shape() != self.nodes[i].shape {
                        return Err(GcdError::ShapeMismatch {
                            node: i,
                            expected: self.nodes[i].shape,
                            actual: v.shape(),
                        });
                    }
                    v.clone()
                }
                Op::Constant(m) => m.clone(),
                Op::StopGradient(_) if frozen_stops => continue,
                op => self.eval_op(op)?,
            };
            if !value.is_finite() {
                return Err(GcdError::NonFinite { node: i });
            }
            self.nodes[i].value = Some(value);
        }
        self.forward_done = true;
        Ok(())
    }

    fn val(&self, id: NodeId) -> &Matrix {
        self.nodes[id.0].value.as_ref().expect("parent evaluated")
    }

    fn eval_op(&self, op: &Op) -> Result<Matrix> {
        Ok(match op {
            Op::Param | Op::Constant(_) => unreachable!(),
            Op::MatMul {
                a,
                b,
                transpose_rhs,
            } => {
                if *transpose_rhs {
                    self.val(*a).matmul_t(self.val(*b))
                } else {
                    self.val(*a).matmul(self.val(*b))
                }
            }
            Op::Add { a, b } => {
                let (x, y) = (self.val(*a), self.val(*b));
                if x.shape() == y.shape() {
                    x.zip_map(y, |p, q| p + q)
                } else {
                    let mut out = x.clone();
                    for r in 0..out.rows() {
                        for (o, v) in out.row_mut(r).iter_mut().zip(y.row(0)) {
                            *o += v;
                        }
                    }
                    out
                }
            }
            Op::Scale { a, factor } => self.val(*a).scale(*factor),
            Op::RowL2Normalize(a) => self.val(*a).normalize_rows()?,
            Op::RowSoftmax { a, temperature } => self.val(*a).softmax_rows(*temperature),
            Op::Log(a) => self.val(*a).map(f64::ln),
            Op::Exp(a) => self.val(*a).map(f64::exp),
            Op::Relu(a) => self.val(*a).map(|v| v.max(0.0)),
            Op::MeanRows(a) => {
                let x = self.val(*a);
                let n = x.rows() as f64;
                let sums = x.col_sums();
                Matrix::from_vec(1, x.cols(), sums.into_iter().map(|s| s / n).collect())?
            }
            Op::Sum(a) => Matrix::scalar(self.val(*a).sum()),
            Op::SoftCrossEntropy { target, probs } => {
                let (q, p) = (self.val(*target), self.val(*probs));
                let vals = (0..p.rows())
                    .map(|r| {
                        -q.row(r)
                            .iter()
                            .zip(p.row(r))
                            .map(|(&t, &pr)| if t == 0.0 { 0.0 } else { t * pr.ln() })
                            .sum::<f64>()
                    })
                    .collect();
                Matrix::from_vec(p.rows(), 1, vals)?
            }
            Op::Negate(a) => self.val(*a).scale(-1.0),
            Op::Entropy(a) => {
                let p = self.val(*a);
                let vals = (0..p.rows()).map(|r| entropy(p.row(r))).collect();
                Matrix::from_vec(p.rows(), 1, vals)?
            }
            Op::StopGradient(a) => self.val(*a).clone(),
            Op::SelectRows { a, rows } => self.val(*a).select_rows(rows),
        })
    }

    /// Reverse pass from a scalar node. Returns gradients for every parameter
    /// leaf; leaves that do not influence the loss get zero matrices.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if !self.forward_done {
            return Err(GcdError::ForwardNotRun);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(GcdError::LossNotScalar {
                node: loss.0,
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = &self.nodes[i].op;
            let out = self.nodes[i].value.as_ref().expect("forward populated");
            for (parent, contrib) in self.local_grads(op, out, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut adj[parent.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            if matches!(op, Op::Param) {
                adj[i] = Some(g);
            }
        }

        Ok(self
            .params
            .iter()
            .map(|&p| {
                let (r, c) = self.shape(p);
                (p, adj[p.0].take().unwrap_or_else(|| Matrix::zeros(r, c)))
            })
            .collect())
    }

    fn local_grads(&self, op: &Op, out: &Matrix, g: &Matrix) -> Vec<(NodeId, Matrix)> {
        match op {
            Op::Param | Op::Constant(_) | Op::StopGradient(_) => vec![],
            Op::MatMul {
                a,
                b,
                transpose_rhs,
            } => {
                let (x, y) = (self.val(*a), self.val(*b));
                if *transpose_rhs {
                    // C = A Bᵀ: dA = G B, dB = Gᵀ A
                    vec![(*a, g.matmul(y)), (*b, g.t_matmul(x))]
                } else {
                    // C = A B: dA = G Bᵀ, dB = Aᵀ G
                    vec![(*a, g.matmul_t(y)), (*b, x.t_matmul(g))]
                }
            }
            Op::Add { a, b } => {
                let gb = if self.shape(*b) == g.shape() {
                    g.clone()
                } else {
                    Matrix::from_vec(1, g.cols(), g.col_sums()).expect("shape")
                };
                vec![(*a, g.clone()), (*b, gb)]
            }
            Op::Scale { a, factor } => vec![(*a, g.scale(*factor))],
            Op::Negate(a) => vec![(*a, g.scale(-1.0))],
            Op::RowL2Normalize(a) => {
                let x = self.val(*a);
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let norm = crate::matrix::dot(x.row(r), x.row(r)).sqrt();
                    let proj = crate::matrix::dot(y, gr);
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = (gr[c] - y[c] * proj) / norm;
                    }
                }
                vec![(*a, dx)]
            }
            Op::RowSoftmax { a, temperature } => {
                let mut dx = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let p = out.row(r);
                    let gr = g.row(r);
                    let inner = crate::matrix::dot(p, gr);
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = p[c] * (gr[c] - inner) / temperature;
                    }
                }
                vec![(*a, dx)]
            }
            Op::Log(a) => vec![(*a, g.zip_map(self.val(*a), |gv, x| gv / x))],
            Op::Exp(a) => vec![(*a, g.zip_map(out, |gv, y| gv * y))],
            Op::Relu(a) => vec![(
                *a,
                g.zip_map(self.val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
            )],
            Op::MeanRows(a) => {
                let (r, c) = self.shape(*a);
                let mut dx = Matrix::zeros(r, c);
                for i in 0..r {
                    for (d, gv) in dx.row_mut(i).iter_mut().zip(g.row(0)) {
                        *d = gv / r as f64;
                    }
                }
                vec![(*a, dx)]
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                vec![(*a, Matrix::filled(r, c, g.item()))]
            }
            Op::SoftCrossEntropy { target, probs } => {
                let (q, p) = (self.val(*target), self.val(*probs));
                let mut dq = Matrix::zeros(p.rows(), p.cols());
                let mut dp = Matrix::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    let gr = g[(r, 0)];
                    for c in 0..p.cols() {
                        let (t, pr) = (q[(r, c)], p[(r, c)]);
                        dq[(r, c)] = -gr * pr.ln();
                        dp[(r, c)] = if t == 0.0 { 0.0 } else { -gr * t / pr };
                    }
                }
                vec![(*target, dq), (*probs, dp)]
            }
            Op::Entropy(a) => {
                let p = self.val(*a);
                let mut dp = Matrix::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    let gr = g[(r, 0)];
                    for c in 0..p.cols() {
                        let v = p[(r, c)];
                        // d/dp of -p log p; taken as 0 at p = 0 to match the 0·log 0 convention
                        dp[(r, c)] = if v > 0.0 { -gr * (v.ln() + 1.0) } else { 0.0 };
                    }
                }
                vec![(*a, dp)]
            }
            Op::SelectRows { a, rows } => {
                let (r, c) = self.shape(*a);
                let mut dx = Matrix::zeros(r, c);
                for (k, &src) in rows.iter().enumerate() {
                    for (d, gv) in dx.row_mut(src).iter_mut().zip(g.row(k)) {
                        *d += gv;
                    }
                }
                vec![(*a, dx)]
            }
        }
    }
}

/// Shannon entropy of one distribution, natural log, `0 · log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
        .sum::<f64>()
}

/// Central-difference gradient estimate `(f(x+h) - f(x-h)) / 2h` for every
/// entry of every leaf in `leaves`.
pub fn finite_diff_grad<F>(mut loss_fn: F, leaves: &LeafValues, step: f64) -> Result<Gradients>
where
    F: FnMut(&LeafValues) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(GcdError::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut work = leaves.clone();
    let mut grads = Gradients::new();
    for (&id, value) in leaves {
        let mut g = Matrix::zeros(value.rows(), value.cols());
        for k in 0..value.data().len() {
            let orig = value.data()[k];
            work.get_mut(&id).unwrap().data_mut()[k] = orig + step;
            let plus = loss_fn(&work)?;
            work.get_mut(&id).unwrap().data_mut()[k] = orig - step;
            let minus = loss_fn(&work)?;
            work.get_mut(&id).unwrap().data_mut()[k] = orig;
            g.data_mut()[k] = (plus - minus) / (2.0 * step);
        }
        grads.insert(id, g);
    }
    Ok(grads)
}

/// Largest per-leaf relative error `‖a − b‖_F / max(‖a‖_F, ‖b‖_F)` over the
/// leaves both maps share. Leaves whose gradients are both exactly zero count
/// as zero error.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    let mut worst = 0.0f64;
    for (id, ga) in a {
        let Some(gb) = b.get(id) else { continue };
        let diff = ga.zip_map(gb, |x, y| x - y).frobenius_norm();
        let scale = ga.frobenius_norm().max(gb.frobenius_norm());
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}
