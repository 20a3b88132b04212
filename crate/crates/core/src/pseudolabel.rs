//! Pseudo-label providers for four supervision regimes: ground truth on the
//! labelled rows only, ground truth everywhere, batch-level Sinkhorn-Knopp
//! self-labelling, and self-distillation from the other view.

use serde::{Deserialize, Serialize};

use crate::dataset::ViewPair;
use crate::error::{GcdError, Result};
use crate::losses::{BatchTargets, UnsupTargets};
use crate::matrix::Matrix;
use crate::model::{cosine_similarity, teacher_probs, Model};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SupervisionMode {
    /// Ground truth for labelled rows; nothing for the rest.
    Minimal,
    /// Ground truth for every row.
    Oracle,
    SelfLabel { iterations: usize, reg: f64 },
    SelfDistil { tau_t: f64 },
}

impl SupervisionMode {
    pub fn name(&self) -> &'static str {
        match self {
            SupervisionMode::Minimal => "minimal",
            SupervisionMode::Oracle => "oracle",
            SupervisionMode::SelfLabel { .. } => "self_label",
            SupervisionMode::SelfDistil { .. } => "self_distil",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SupervisionMode::SelfLabel { iterations, reg } if iterations < 1 || !(reg > 0.0) => {
                Err(GcdError::InvalidArgument(format!(
                    "self_label needs iterations >= 1 and reg > 0, got {iterations}, {reg}"
                )))
            }
            SupervisionMode::SelfDistil { tau_t } if !(tau_t > 0.0) => Err(
                GcdError::InvalidArgument(format!("self_distil needs tau_t > 0, got {tau_t}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    /// `B x K`; rows outside the coverage are zero.
    pub targets: Matrix,
    pub coverage: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornOutput {
    /// Row-stochastic assignment.
    pub assignment: Matrix,
    /// Transport plan before the final row renormalization: columns sum to
    /// `1/K`, rows approximately to `1/B`.
    pub plan: Matrix,
    /// `max_i |row_sum_i − 1/B|` of the plan, scaled by `B`.
    pub row_marginal_error: f64,
    /// Whether `row_marginal_error <= 1e-3`.
    pub converged: bool,
}

/// Equal-partition soft assignment. Starts from `exp(logits / reg)` and
/// alternately rescales rows to `1/B` and columns to `1/K`, finishing on the
/// columns, then renormalizes each row to sum to one.
pub fn sinkhorn_knopp(logits: &Matrix, iterations: usize, reg: f64) -> Result<SinkhornOutput> {
    if iterations < 1 || !(reg > 0.0) {
        return Err(GcdError::InvalidArgument(format!(
            "sinkhorn needs iterations >= 1 and reg > 0, got {iterations}, {reg}"
        )));
    }
    let (b, k) = logits.shape();
    if b == 0 || k == 0 {
        return Err(GcdError::InvalidArgument("sinkhorn on an empty matrix".into()));
    }
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut q = logits.map(|v| ((v - max) / reg).exp());
    let total = q.sum();
    q = q.scale(1.0 / total);
    for _ in 0..iterations {
        for r in 0..b {
            let s: f64 = q.row(r).iter().sum();
            if s > 0.0 {
                q.row_mut(r).iter_mut().for_each(|v| *v /= s * b as f64);
            }
        }
        let cols = q.col_sums();
        for r in 0..b {
            for (v, &s) in q.row_mut(r).iter_mut().zip(&cols) {
                if s > 0.0 {
                    *v /= s * k as f64;
                }
            }
        }
    }
    let row_marginal_error = q
        .row_sums()
        .iter()
        .map(|s| (s - 1.0 / b as f64).abs() * b as f64)
        .fold(0.0, f64::max);
    let mut assignment = q.clone();
    for r in 0..b {
        let s: f64 = assignment.row(r).iter().sum();
        if s > 0.0 {
            assignment.row_mut(r).iter_mut().for_each(|v| *v /= s);
        } else {
            assignment.row_mut(r).iter_mut().for_each(|v| *v = 1.0 / k as f64);
        }
    }
    if !assignment.is_finite() {
        return Err(GcdError::Numerical("sinkhorn produced non-finite values".into()));
    }
    Ok(SinkhornOutput {
        assignment,
        plan: q,
        row_marginal_error,
        converged: row_marginal_error <= 1e-3,
    })
}

/// Student logits `cos / τ_s` for a batch.
fn student_logits(model: &Model, x: &Matrix, tau_s: f64) -> Result<Matrix> {
    let u = model.classifier_features(x)?;
    Ok(cosine_similarity(&u, &model.prototypes)?.scale(1.0 / tau_s))
}

/// Targets for one view's predictions. `source` is the view that produces
/// the pseudo-labels (the other view); labelled rows always get their
/// one-hot ground truth.
pub fn provide_targets(
    mode: &SupervisionMode,
    model: &Model,
    source: &Matrix,
    labels: &[usize],
    labelled: &[bool],
    tau_s: f64,
) -> Result<PseudoLabels> {
    mode.validate()?;
    let b = source.rows();
    let k = model.num_prototypes();
    if labels.len() != b || labelled.len() != b {
        return Err(GcdError::InvalidArgument("labels do not match the batch".into()));
    }
    let mut targets = Matrix::zeros(b, k);
    let mut coverage = vec![false; b];
    let unlabelled: Vec<usize> = (0..b).filter(|&i| !labelled[i]).collect();

    let mut fill_truth = |rows: &mut dyn Iterator<Item = usize>, t: &mut Matrix| -> Result<()> {
        for i in rows {
            if labels[i] >= k {
                return Err(GcdError::InvalidArgument(format!(
                    "label {} does not fit {k} prototypes",
                    labels[i]
                )));
            }
            t[(i, labels[i])] = 1.0;
            coverage[i] = true;
        }
        Ok(())
    };
    match *mode {
        SupervisionMode::Oracle => fill_truth(&mut (0..b), &mut targets)?,
        _ => fill_truth(&mut (0..b).filter(|&i| labelled[i]), &mut targets)?,
    }

    let pseudo = match *mode {
        SupervisionMode::Minimal | SupervisionMode::Oracle => None,
        SupervisionMode::SelfLabel { .. } if unlabelled.is_empty() => None,
        SupervisionMode::SelfLabel { iterations, reg } => {
            let logits = student_logits(model, &source.select_rows(&unlabelled), tau_s)?;
            Some(sinkhorn_knopp(&logits, iterations, reg)?.assignment)
        }
        SupervisionMode::SelfDistil { tau_t } => {
            let u = model.classifier_features(&source.select_rows(&unlabelled))?;
            Some(teacher_probs(&u, &model.prototypes, tau_t)?)
        }
    };
    if let Some(p) = pseudo {
        for (r, &i) in unlabelled.iter().enumerate() {
            targets.row_mut(i).copy_from_slice(p.row(r));
            coverage[i] = true;
        }
    }
    Ok(PseudoLabels { targets, coverage })
}

/// Assembles the objective's supervision for a batch of two views.
///
/// Ground truth drives the supervised terms on labelled rows (all rows under
/// `Oracle`). Self-labelling swaps Sinkhorn targets between the views on the
/// unlabelled rows. Self-distillation applies to every row with the teacher
/// built inside the graph.
pub fn batch_targets(
    mode: &SupervisionMode,
    model: &Model,
    views: &ViewPair,
    labels: &[usize],
    labelled: &[bool],
    tau_s: f64,
) -> Result<BatchTargets> {
    mode.validate()?;
    let b = labels.len();
    let supervised = match mode {
        SupervisionMode::Oracle => vec![true; b],
        _ => labelled.to_vec(),
    };
    let unsup = match *mode {
        SupervisionMode::Minimal | SupervisionMode::Oracle => UnsupTargets::None,
        SupervisionMode::SelfDistil { .. } => UnsupTargets::SelfDistil,
        SupervisionMode::SelfLabel { .. } => {
            let rows: Vec<usize> = (0..b).filter(|&i| !labelled[i]).collect();
            let from_b = provide_targets(mode, model, &views.view_b, labels, labelled, tau_s)?;
            let from_a = provide_targets(mode, model, &views.view_a, labels, labelled, tau_s)?;
            UnsupTargets::Fixed {
                for_view_a: from_b.targets.select_rows(&rows),
                for_view_b: from_a.targets.select_rows(&rows),
                rows,
            }
        }
    };
    Ok(BatchTargets {
        labels: labels.to_vec(),
        supervised,
        unsup,
    })
}
