//! Objective terms as compute-graph builders, plus matrix-level wrappers.
//!
//! Representation learning uses an InfoNCE term over two views and a
//! label-matched supervised contrastive term. Classification uses soft
//! cross-entropy against targets (ground truth, fixed pseudo-labels or
//! gradient-blocked sharpened predictions of the other view) and a penalty on
//! low entropy of the batch-mean prediction. The pieces are balanced by
//! `lambda`:
//!
//! ```text
//! total = (1-λ)·rep_unsup + λ·rep_sup + (1-λ)·(cls_unsup_ce − ε·mean_entropy) + λ·cls_sup
//! ```

use serde::{Deserialize, Serialize};

use crate::dataset::ViewPair;
use crate::error::{GcdError, Result};
use crate::matrix::Matrix;
use crate::model::{
    graph_backbone, graph_projector, graph_soft_assign, graph_teacher_probs, ClassifierInput,
    Model, ModelNodes,
};
use crate::numgraph::{ComputeGraph, LeafValues, NodeId};

/// Additive logit used to drop a term from a softmax denominator.
const MASKED_LOGIT: f64 = -1.0e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rep_unsup: f64,
    pub rep_sup: f64,
    pub cls_unsup_ce: f64,
    pub mean_entropy: f64,
    pub cls_sup: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recombines the parts with the given weights.
    pub fn recombine(&self, lambda: f64, epsilon: f64) -> f64 {
        (1.0 - lambda) * self.rep_unsup
            + lambda * self.rep_sup
            + (1.0 - lambda) * (self.cls_unsup_ce - epsilon * self.mean_entropy)
            + lambda * self.cls_sup
    }

    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.rep_unsup += other.rep_unsup;
        self.rep_sup += other.rep_sup;
        self.cls_unsup_ce += other.cls_unsup_ce;
        self.mean_entropy += other.mean_entropy;
        self.cls_sup += other.cls_sup;
        self.total += other.total;
    }

    pub fn scaled(&self, c: f64) -> LossBreakdown {
        LossBreakdown {
            rep_unsup: self.rep_unsup * c,
            rep_sup: self.rep_sup * c,
            cls_unsup_ce: self.cls_unsup_ce * c,
            mean_entropy: self.mean_entropy * c,
            cls_sup: self.cls_sup * c,
            total: self.total * c,
        }
    }
}

fn scalar_zero(g: &mut ComputeGraph) -> NodeId {
    g.constant(Matrix::scalar(0.0))
}

/// InfoNCE between anchors `z` and candidates `z2`; row `i` of `z2` is the
/// positive for row `i` of `z`. With `exclude_positive` the positive is left
/// out of the denominator.
pub fn graph_unsup_contrastive(
    g: &mut ComputeGraph,
    z: NodeId,
    z2: NodeId,
    temperature: f64,
    exclude_positive: bool,
) -> Result<NodeId> {
    let (b, _) = g.shape(z);
    if b < 2 {
        return Err(GcdError::InvalidArgument(format!(
            "contrastive loss needs a batch of at least 2, got {b}"
        )));
    }
    let sims = g.matmul_t(z, z2)?;
    let probs = g.row_softmax(sims, temperature)?;
    let eye = g.constant(Matrix::identity(b));
    let mut per_row = g.soft_cross_entropy(eye, probs)?;
    if exclude_positive {
        // −log(e^{s_ii} / Σ_{n≠i} e^{s_in}) = −log p_ii + log(1 − p_ii)
        let neg = g.negate(per_row);
        let p_ii = g.exp(neg);
        let minus = g.negate(p_ii);
        let ones = g.constant(Matrix::filled(b, 1, 1.0));
        let rest = g.add(ones, minus)?;
        let log_rest = g.log(rest);
        per_row = g.add(per_row, log_rest)?;
    }
    let mean = g.mean_rows(per_row);
    Ok(mean)
}

/// Supervised contrastive loss over a labelled batch. Positives of anchor
/// `i` are the other rows `q != i` with the same label; anchors without
/// positives are skipped. With `exclude_self` the anchor's own pair `(i, i)`
/// is removed from the denominator.
pub fn graph_sup_contrastive(
    g: &mut ComputeGraph,
    z: NodeId,
    z2: NodeId,
    labels: &[usize],
    temperature: f64,
    exclude_self: bool,
) -> Result<NodeId> {
    let b = labels.len();
    if g.shape(z).0 != b || g.shape(z2).0 != b {
        return Err(GcdError::InvalidArgument(format!(
            "{b} labels for {} anchors",
            g.shape(z).0
        )));
    }
    let mut targets = Matrix::zeros(b, b);
    let mut anchors = Vec::new();
    for i in 0..b {
        let pos: Vec<usize> = (0..b).filter(|&q| q != i && labels[q] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        anchors.push(i);
        for &q in &pos {
            targets[(i, q)] = 1.0 / pos.len() as f64;
        }
    }
    if anchors.is_empty() {
        return Err(GcdError::InvalidArgument(
            "supervised contrastive loss: no anchor has a positive".into(),
        ));
    }
    let mut sims = g.matmul_t(z, z2)?;
    if exclude_self {
        let mut mask = Matrix::zeros(b, b);
        for i in 0..b {
            mask[(i, i)] = MASKED_LOGIT;
        }
        let mask = g.constant(mask);
        sims = g.add(sims, mask)?;
    }
    let probs = g.row_softmax(sims, temperature)?;
    let t = g.constant(targets);
    let per_row = g.soft_cross_entropy(t, probs)?;
    let kept = g.select_rows(per_row, anchors)?;
    Ok(g.mean_rows(kept))
}

/// Classification term on unlabelled data: symmetric soft cross-entropy
/// `½(ℓ(q′, p) + ℓ(q, p′))` averaged over rows, and the entropy of the mean
/// prediction over both views. Returns `(ce, mean_entropy)`.
pub fn graph_cls_unsup(
    g: &mut ComputeGraph,
    p: NodeId,
    p2: NodeId,
    q: NodeId,
    q2: NodeId,
) -> Result<(NodeId, NodeId)> {
    let ce_a = g.soft_cross_entropy(q2, p)?;
    let ce_a = g.mean_rows(ce_a);
    let ce_b = g.soft_cross_entropy(q, p2)?;
    let ce_b = g.mean_rows(ce_b);
    let ce = g.weighted_sum(&[(0.5, ce_a), (0.5, ce_b)])?;
    let entropy = graph_mean_entropy(g, p, p2)?;
    Ok((ce, entropy))
}

/// `H(p̄)` with `p̄ = (1/2B) Σ_i (p_i + p′_i)`.
pub fn graph_mean_entropy(g: &mut ComputeGraph, p: NodeId, p2: NodeId) -> Result<NodeId> {
    let ma = g.mean_rows(p);
    let mb = g.mean_rows(p2);
    let mean = g.weighted_sum(&[(0.5, ma), (0.5, mb)])?;
    Ok(g.entropy(mean))
}

/// Mean cross-entropy of `p` against fixed targets `y`.
pub fn graph_cls_sup(g: &mut ComputeGraph, p: NodeId, y: NodeId) -> Result<NodeId> {
    let ce = g.soft_cross_entropy(y, p)?;
    Ok(g.mean_rows(ce))
}

fn eval_constant_graph(build: impl FnOnce(&mut ComputeGraph) -> Result<NodeId>) -> Result<f64> {
    let mut g = ComputeGraph::new();
    let out = build(&mut g)?;
    Ok(g.forward(&LeafValues::new(), out)?.item())
}

pub fn unsup_contrastive(z: &Matrix, z2: &Matrix, temperature: f64, exclude_positive: bool) -> Result<f64> {
    eval_constant_graph(|g| {
        let a = g.constant(z.clone());
        let b = g.constant(z2.clone());
        graph_unsup_contrastive(g, a, b, temperature, exclude_positive)
    })
}

pub fn sup_contrastive(
    z: &Matrix,
    z2: &Matrix,
    labels: &[usize],
    temperature: f64,
    exclude_self: bool,
) -> Result<f64> {
    eval_constant_graph(|g| {
        let a = g.constant(z.clone());
        let b = g.constant(z2.clone());
        graph_sup_contrastive(g, a, b, labels, temperature, exclude_self)
    })
}

/// `(1−λ)·unsup + λ·sup`, with `sup` over the rows where `labelled` is set.
/// The supervised part is zero when no labelled anchor has a positive.
#[allow(clippy::too_many_arguments)]
pub fn rep_loss(
    z: &Matrix,
    z2: &Matrix,
    labels: &[usize],
    labelled: &[bool],
    lambda: f64,
    tau_u: f64,
    tau_c: f64,
    exclude_positive: bool,
) -> Result<f64> {
    let unsup = unsup_contrastive(z, z2, tau_u, exclude_positive)?;
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| labelled[i]).collect();
    let sub_labels: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
    let sup = if has_positive_pair(&sub_labels) {
        sup_contrastive(
            &z.select_rows(&rows),
            &z2.select_rows(&rows),
            &sub_labels,
            tau_c,
            exclude_positive,
        )?
    } else {
        0.0
    };
    Ok((1.0 - lambda) * unsup + lambda * sup)
}

pub(crate) fn has_positive_pair(labels: &[usize]) -> bool {
    let mut seen = std::collections::HashSet::new();
    labels.iter().any(|y| !seen.insert(*y))
}

fn check_stochastic(m: &Matrix, name: &str) -> Result<()> {
    for (r, s) in m.row_sums().into_iter().enumerate() {
        if (s - 1.0).abs() > 1e-9 || m.row(r).iter().any(|&v| v < 0.0) {
            return Err(GcdError::InvalidArgument(format!(
                "{name} row {r} is not a probability vector (sum {s})"
            )));
        }
    }
    Ok(())
}

/// Returns `(ce, mean_entropy)` for student predictions `p`, `p2` and
/// targets `q` (from the first view) and `q2` (from the second view).
pub fn cls_unsup(p: &Matrix, p2: &Matrix, q: &Matrix, q2: &Matrix) -> Result<(f64, f64)> {
    for (m, n) in [(p, "p"), (p2, "p'"), (q, "q"), (q2, "q'")] {
        check_stochastic(m, n)?;
    }
    let mut g = ComputeGraph::new();
    let (pa, pb, qa, qb) = (
        g.constant(p.clone()),
        g.constant(p2.clone()),
        g.constant(q.clone()),
        g.constant(q2.clone()),
    );
    let (ce, h) = graph_cls_unsup(&mut g, pa, pb, qa, qb)?;
    g.forward(&LeafValues::new(), ce)?;
    Ok((g.scalar(ce).unwrap(), g.scalar(h).unwrap()))
}

pub fn cls_sup(p: &Matrix, labels: &[usize]) -> Result<f64> {
    check_stochastic(p, "p")?;
    let y = one_hot(labels, p.cols())?;
    eval_constant_graph(|g| {
        let pn = g.constant(p.clone());
        let yn = g.constant(y);
        graph_cls_sup(g, pn, yn)
    })
}

pub fn one_hot(labels: &[usize], k: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), k);
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(GcdError::InvalidArgument(format!(
                "label {y} does not fit {k} classes"
            )));
        }
        m[(i, y)] = 1.0;
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// Classification gradients reach the backbone and projector.
    Joint,
    /// Classification gradients stop at the classifier input.
    Decoupled,
}

impl std::str::FromStr for TrainingMode {
    type Err = GcdError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(TrainingMode::Joint),
            "decoupled" => Ok(TrainingMode::Decoupled),
            other => Err(GcdError::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

impl TrainingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainingMode::Joint => "joint",
            TrainingMode::Decoupled => "decoupled",
        }
    }
}

/// Weights and temperatures for one objective evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub epsilon: f64,
    pub tau_u: f64,
    pub tau_c: f64,
    pub tau_s: f64,
    pub tau_t: f64,
    pub exclude_positive: bool,
    pub training: TrainingMode,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            lambda: 0.35,
            epsilon: 1.0,
            tau_u: 0.07,
            tau_c: 1.0,
            tau_s: 0.1,
            tau_t: 0.07,
            exclude_positive: false,
            training: TrainingMode::Joint,
        }
    }
}

/// Targets for the unsupervised classification term.
#[derive(Clone, Debug, PartialEq)]
pub enum UnsupTargets {
    /// No unsupervised cross-entropy.
    None,
    /// Fixed targets for the listed batch rows; `for_view_a` supervises the
    /// first view's predictions, `for_view_b` the second's.
    Fixed {
        rows: Vec<usize>,
        for_view_a: Matrix,
        for_view_b: Matrix,
    },
    /// Every row is supervised by the other view's gradient-blocked
    /// prediction at temperature `tau_t`.
    SelfDistil,
}

/// Supervision available for one batch.
#[derive(Clone, Debug)]
pub struct BatchTargets {
    /// Ground-truth class per batch row.
    pub labels: Vec<usize>,
    /// Rows whose ground truth is used for the supervised terms.
    pub supervised: Vec<bool>,
    pub unsup: UnsupTargets,
}

/// The built objective graph and its named nodes.
pub struct ObjectiveGraph {
    pub graph: ComputeGraph,
    pub nodes: ModelNodes,
    pub leaves: LeafValues,
    pub rep_unsup: NodeId,
    pub rep_sup: NodeId,
    pub cls_unsup_ce: NodeId,
    pub mean_entropy: NodeId,
    pub cls_sup: NodeId,
    pub total: NodeId,
    /// Classifier input of each view, after the optional decoupling stop.
    pub classifier_inputs: (NodeId, NodeId),
    pub student: (NodeId, NodeId),
}

impl ObjectiveGraph {
    pub fn breakdown(&self) -> LossBreakdown {
        let v = |id| self.graph.scalar(id).expect("forward run");
        LossBreakdown {
            rep_unsup: v(self.rep_unsup),
            rep_sup: v(self.rep_sup),
            cls_unsup_ce: v(self.cls_unsup_ce),
            mean_entropy: v(self.mean_entropy),
            cls_sup: v(self.cls_sup),
            total: v(self.total),
        }
    }

    /// Total loss as a function of parameter values with every stop-gradient
    /// held at its current value.
    pub fn frozen_total(&mut self, leaves: &LeafValues) -> Result<f64> {
        Ok(self.graph.forward_frozen(leaves, self.total)?.item())
    }
}

/// Builds and evaluates the full objective for one batch of two views.
pub fn total_objective(
    model: &Model,
    views: &ViewPair,
    targets: &BatchTargets,
    cfg: &ObjectiveConfig,
) -> Result<(LossBreakdown, ObjectiveGraph)> {
    let b = views.view_a.rows();
    if b < 2 {
        return Err(GcdError::InvalidArgument(format!(
            "objective needs at least 2 samples, got {b}"
        )));
    }
    if targets.labels.len() != b || targets.supervised.len() != b {
        return Err(GcdError::InvalidArgument("targets do not match the batch".into()));
    }
    let k = model.num_prototypes();
    let mut g = ComputeGraph::new();
    let nodes = model.bind(&mut g);
    let leaves = model.leaf_values(&nodes);

    let xa = g.constant(views.view_a.clone());
    let xb = g.constant(views.view_b.clone());
    let ha = graph_backbone(&mut g, &nodes, xa)?;
    let hb = graph_backbone(&mut g, &nodes, xb)?;
    let za = graph_projector(&mut g, &nodes, ha)?;
    let zb = graph_projector(&mut g, &nodes, hb)?;

    let ab = graph_unsup_contrastive(&mut g, za, zb, cfg.tau_u, cfg.exclude_positive)?;
    let ba = graph_unsup_contrastive(&mut g, zb, za, cfg.tau_u, cfg.exclude_positive)?;
    let rep_unsup = g.weighted_sum(&[(0.5, ab), (0.5, ba)])?;

    let sup_rows: Vec<usize> = (0..b).filter(|&i| targets.supervised[i]).collect();
    let sup_labels: Vec<usize> = sup_rows.iter().map(|&i| targets.labels[i]).collect();
    let rep_sup = if has_positive_pair(&sup_labels) {
        let zla = g.select_rows(za, sup_rows.clone())?;
        let zlb = g.select_rows(zb, sup_rows.clone())?;
        let ab = graph_sup_contrastive(&mut g, zla, zlb, &sup_labels, cfg.tau_c, cfg.exclude_positive)?;
        let ba = graph_sup_contrastive(&mut g, zlb, zla, &sup_labels, cfg.tau_c, cfg.exclude_positive)?;
        g.weighted_sum(&[(0.5, ab), (0.5, ba)])?
    } else {
        scalar_zero(&mut g)
    };

    let (mut ua, mut ub) = match model.config.classifier_input {
        ClassifierInput::PostBackbone => (ha, hb),
        ClassifierInput::PostProjector => (za, zb),
    };
    if cfg.training == TrainingMode::Decoupled {
        ua = g.stop_gradient(ua);
        ub = g.stop_gradient(ub);
    }
    let pa = graph_soft_assign(&mut g, ua, nodes.prototypes, cfg.tau_s)?;
    let pb = graph_soft_assign(&mut g, ub, nodes.prototypes, cfg.tau_s)?;

    let cls_sup = if sup_rows.is_empty() {
        scalar_zero(&mut g)
    } else {
        let y = g.constant(one_hot(&sup_labels, k)?);
        let pla = g.select_rows(pa, sup_rows.clone())?;
        let plb = g.select_rows(pb, sup_rows)?;
        let ca = graph_cls_sup(&mut g, pla, y)?;
        let cb = graph_cls_sup(&mut g, plb, y)?;
        g.weighted_sum(&[(0.5, ca), (0.5, cb)])?
    };

    let mean_entropy = graph_mean_entropy(&mut g, pa, pb)?;
    let cls_unsup_ce = match &targets.unsup {
        UnsupTargets::None => scalar_zero(&mut g),
        UnsupTargets::Fixed { rows, .. } if rows.is_empty() => scalar_zero(&mut g),
        UnsupTargets::Fixed {
            rows,
            for_view_a,
            for_view_b,
        } => {
            let sa = g.select_rows(pa, rows.clone())?;
            let sb = g.select_rows(pb, rows.clone())?;
            let ta = g.constant(for_view_a.clone());
            let tb = g.constant(for_view_b.clone());
            let ca = g.soft_cross_entropy(ta, sa)?;
            let ca = g.mean_rows(ca);
            let cb = g.soft_cross_entropy(tb, sb)?;
            let cb = g.mean_rows(cb);
            g.weighted_sum(&[(0.5, ca), (0.5, cb)])?
        }
        UnsupTargets::SelfDistil => {
            let qa = graph_teacher_probs(&mut g, ua, nodes.prototypes, cfg.tau_t)?;
            let qb = graph_teacher_probs(&mut g, ub, nodes.prototypes, cfg.tau_t)?;
            let (ce, _) = graph_cls_unsup(&mut g, pa, pb, qa, qb)?;
            ce
        }
    };

    let l = cfg.lambda;
    let total = g.weighted_sum(&[
        (1.0 - l, rep_unsup),
        (l, rep_sup),
        (1.0 - l, cls_unsup_ce),
        (-(1.0 - l) * cfg.epsilon, mean_entropy),
        (l, cls_sup),
    ])?;

    g.forward(&leaves, total)?;
    let og = ObjectiveGraph {
        graph: g,
        nodes,
        leaves,
        rep_unsup,
        rep_sup,
        cls_unsup_ce,
        mean_entropy,
        cls_sup,
        total,
        classifier_inputs: (ua, ub),
        student: (pa, pb),
    };
    Ok((og.breakdown(), og))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e() -> f64 {
        std::f64::consts::E
    }

    #[test]
    fn unsup_two_sample_value() {
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let v = unsup_contrastive(&z, &z, 1.0, false).unwrap();
        let expected = -(e() / (e() + 1.0)).ln();
        assert!((v - expected).abs() < 1e-14);
        assert!((v - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn unsup_uniform_similarities() {
        let z = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]]);
        let v = unsup_contrastive(&z, &z, 0.07, false).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        let one = Matrix::from_rows(&[[1.0, 0.0]]);
        assert!(unsup_contrastive(&one, &one, 1.0, false).is_err());
    }

    #[test]
    fn unsup_exclude_positive() {
        // s_ii = 1, s_ij = 0: loss = −1 + log(e^0) = −1
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let v = unsup_contrastive(&z, &z, 1.0, true).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sup_pair_matches_unsup_value() {
        // both samples share a label; the positive pair has similarity 1 and
        // the anchor's own pair 0, mirroring the two-sample InfoNCE case
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let z2 = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let v = sup_contrastive(&z, &z2, &[3, 3], 1.0, false).unwrap();
        let unsup = unsup_contrastive(&z, &z, 1.0, false).unwrap();
        assert!((v - unsup).abs() < 1e-14);
    }

    #[test]
    fn sup_without_positives_errors() {
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]]);
        assert!(sup_contrastive(&z, &z, &[0, 1, 2], 1.0, false).is_err());
    }

    #[test]
    fn sup_is_permutation_invariant() {
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [0.8, -0.6]]);
        let z2 = Matrix::from_rows(&[[0.8, 0.6], [0.0, -1.0], [0.6, 0.8], [1.0, 0.0]]);
        let labels = [0, 1, 0, 1];
        let v = sup_contrastive(&z, &z2, &labels, 0.5, false).unwrap();
        let perm = [2, 0, 3, 1];
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let w = sup_contrastive(&z.select_rows(&perm), &z2.select_rows(&perm), &pl, 0.5, false).unwrap();
        assert!((v - w).abs() < 1e-14);
    }

    #[test]
    fn rep_loss_weights() {
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [0.8, -0.6]]);
        let z2 = Matrix::from_rows(&[[0.8, 0.6], [0.0, -1.0], [0.6, 0.8], [1.0, 0.0]]);
        let labels = [0, 1, 0, 1];
        let mask = [true, true, true, false];
        let u = unsup_contrastive(&z, &z2, 0.07, false).unwrap();
        let rows = [0, 1, 2];
        let s = sup_contrastive(&z.select_rows(&rows), &z2.select_rows(&rows), &[0, 1, 0], 1.0, false)
            .unwrap();
        let r = |l| rep_loss(&z, &z2, &labels, &mask, l, 0.07, 1.0, false).unwrap();
        assert_eq!(r(0.0), u);
        assert!((r(1.0) - s).abs() < 1e-15);
        assert!((r(0.35) - (0.65 * u + 0.35 * s)).abs() < 1e-12);
    }

    #[test]
    fn mean_entropy_extremes() {
        let k = 100;
        let uniform = Matrix::filled(3, k, 1.0 / k as f64);
        let (_, h) = cls_unsup(&uniform, &uniform, &uniform, &uniform).unwrap();
        assert!((h - (k as f64).ln()).abs() < 1e-10);

        let mut onehot = Matrix::zeros(2, 4);
        onehot[(0, 2)] = 1.0;
        onehot[(1, 2)] = 1.0;
        let (_, h) = cls_unsup(&onehot, &onehot, &onehot, &onehot).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn ce_against_self_is_row_entropy() {
        let p = Matrix::from_rows(&[[0.2, 0.3, 0.5], [0.6, 0.3, 0.1]]);
        let (ce, _) = cls_unsup(&p, &p, &p, &p).unwrap();
        let h = (crate::numgraph::entropy(p.row(0)) + crate::numgraph::entropy(p.row(1))) / 2.0;
        assert!((ce - h).abs() < 1e-14);
        let bad = Matrix::from_rows(&[[0.2, 0.3, 0.4]]);
        assert!(cls_unsup(&bad, &bad, &bad, &bad).is_err());
    }

    #[test]
    fn cls_sup_values() {
        let p = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(cls_sup(&p, &[0, 2]).unwrap(), 0.0);
        let u = Matrix::filled(2, 5, 0.2);
        assert!((cls_sup(&u, &[1, 4]).unwrap() - 5f64.ln()).abs() < 1e-14);
    }
}
