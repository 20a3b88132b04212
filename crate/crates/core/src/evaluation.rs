//! Clustering accuracy under the optimal one-to-one matching of predicted ids
//! to classes, the old/new error taxonomy, prediction histograms and
//! prototype usage.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GcdError, Result};
use crate::matrix::Matrix;

/// Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres with
/// row/column potentials, O(n³)). Returns `assignment[row] = col` and the
/// total cost summed in row order.
pub fn hungarian(cost: &Matrix) -> Result<(Vec<usize>, f64)> {
    let (n, m) = cost.shape();
    if n != m {
        return Err(GcdError::InvalidArgument(format!(
            "hungarian needs a square matrix, got {n}x{m}"
        )));
    }
    if !cost.is_finite() {
        return Err(GcdError::InvalidArgument("hungarian costs must be finite".into()));
    }
    if n == 0 {
        return Ok((vec![], 0.0));
    }
    // 1-based arrays; index 0 is the virtual unmatched column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[col_owner[j] - 1] = j - 1;
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| cost[(r, c)])
        .sum();
    Ok((assignment, total))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccReport {
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    /// `permutation[predicted_id] = class_id` over the padded id space.
    pub permutation: Vec<usize>,
    pub num_old: usize,
    pub num_new: usize,
    pub correct_old: usize,
    pub correct_new: usize,
}

impl AccReport {
    /// Predictions mapped into class-id space by the global matching.
    pub fn matched(&self, y_pred: &[usize]) -> Vec<usize> {
        y_pred.iter().map(|&p| self.permutation[p]).collect()
    }
}

/// Matching that maximizes the number of agreements between `y_pred` and
/// `y_true` over a zero-padded `dim x dim` contingency table.
fn best_matching(y_true: &[usize], y_pred: &[usize], dim: usize) -> Result<Vec<usize>> {
    let mut counts = Matrix::zeros(dim, dim);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        counts[(p, t)] += 1.0;
    }
    let (perm, _) = hungarian(&counts.scale(-1.0))?;
    Ok(perm)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy over an evaluation set (the unlabelled samples). One global
/// matching is computed on all samples and reused for the old and new
/// slices, unless `rematch_per_split` asks for a separate matching per slice.
pub fn cluster_acc(
    y_true: &[usize],
    y_pred: &[usize],
    num_classes: usize,
    old_classes: &[usize],
    k_pred: usize,
    rematch_per_split: bool,
) -> Result<AccReport> {
    if y_true.is_empty() {
        return Err(GcdError::InvalidArgument("empty evaluation set".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(GcdError::InvalidArgument(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if let Some(&p) = y_pred.iter().find(|&&p| p >= k_pred) {
        return Err(GcdError::InvalidArgument(format!(
            "predicted id {p} outside [0, {k_pred})"
        )));
    }
    if let Some(&t) = y_true.iter().find(|&&t| t >= num_classes) {
        return Err(GcdError::InvalidArgument(format!(
            "class id {t} outside [0, {num_classes})"
        )));
    }
    let dim = k_pred.max(num_classes);
    let permutation = best_matching(y_true, y_pred, dim)?;
    let is_old = |c: usize| old_classes.contains(&c);

    let (mut num_old, mut num_new, mut correct_old, mut correct_new) = (0, 0, 0, 0);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        let hit = (permutation[p] == t) as usize;
        if is_old(t) {
            num_old += 1;
            correct_old += hit;
        } else {
            num_new += 1;
            correct_new += hit;
        }
    }
    let acc_all = (correct_old + correct_new) as f64 / y_true.len() as f64;

    if rematch_per_split {
        let split_correct = |keep: &dyn Fn(usize) -> bool| -> Result<usize> {
            let (t, p): (Vec<usize>, Vec<usize>) = y_true
                .iter()
                .zip(y_pred)
                .filter(|(&t, _)| keep(t))
                .map(|(&t, &p)| (t, p))
                .unzip();
            let perm = best_matching(&t, &p, dim)?;
            Ok(t.iter().zip(&p).filter(|(&t, &p)| perm[p] == t).count())
        };
        correct_old = split_correct(&|c| is_old(c))?;
        correct_new = split_correct(&|c| !is_old(c))?;
    }

    Ok(AccReport {
        acc_all,
        acc_old: ratio(correct_old, num_old),
        acc_new: ratio(correct_new, num_new),
        permutation,
        num_old,
        num_new,
        correct_old,
        correct_new,
    })
}

/// Error mass split by the old/new status of the true and predicted class.
/// "True" means the prediction stayed on the correct side of the split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorTaxonomy {
    /// Old sample predicted as a different old class.
    pub true_old: f64,
    /// Old sample predicted as a new class.
    pub false_new: f64,
    /// New sample predicted as an old class.
    pub false_old: f64,
    /// New sample predicted as a different new class.
    pub true_new: f64,
}

impl ErrorTaxonomy {
    pub fn total(&self) -> f64 {
        self.true_old + self.false_new + self.false_old + self.true_new
    }
}

/// Zero-diagonal confusion mass sliced at the old/new boundary, as fractions
/// of the evaluation set. `matched_pred` must already be in class-id space.
pub fn error_taxonomy(y_true: &[usize], matched_pred: &[usize], old_classes: &[usize]) -> ErrorTaxonomy {
    let m = y_true.len() as f64;
    let mut t = ErrorTaxonomy::default();
    if y_true.is_empty() {
        return t;
    }
    let is_old = |c: usize| old_classes.contains(&c);
    for (&y, &p) in y_true.iter().zip(matched_pred) {
        if y == p {
            continue;
        }
        let cell = match (is_old(y), is_old(p)) {
            (true, true) => &mut t.true_old,
            (true, false) => &mut t.false_new,
            (false, true) => &mut t.false_old,
            (false, false) => &mut t.true_new,
        };
        *cell += 1.0;
    }
    t.true_old /= m;
    t.false_new /= m;
    t.false_old /= m;
    t.true_new /= m;
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredHistogram {
    /// Matched predictions per class id.
    pub predicted: Vec<usize>,
    /// Ground-truth samples per class id.
    pub truth: Vec<usize>,
}

pub fn pred_histogram(y_true: &[usize], matched_pred: &[usize], dim: usize) -> PredHistogram {
    let mut predicted = vec![0; dim];
    let mut truth = vec![0; dim];
    for (&t, &p) in y_true.iter().zip(matched_pred) {
        truth[t] += 1;
        predicted[p] += 1;
    }
    PredHistogram { predicted, truth }
}

/// Number of ids predicted for at least `min_count` samples.
pub fn active_prototypes(y_pred: &[usize], k_pred: usize, min_count: usize) -> usize {
    let mut counts = vec![0usize; k_pred];
    for &p in y_pred {
        if p < k_pred {
            counts[p] += 1;
        }
    }
    counts.iter().filter(|&&c| c >= min_count.max(1)).count()
}

const KL_SMOOTHING: f64 = 1e-9;

/// `KL(pred ‖ truth)` between the normalized histograms, each entry smoothed
/// by `1e-9` before normalization. Shorter inputs are zero-padded.
pub fn marginal_kl(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len().max(truth.len());
    let smooth = |h: &[usize]| {
        let v: Vec<f64> = (0..n)
            .map(|i| h.get(i).copied().unwrap_or(0) as f64 + KL_SMOOTHING)
            .collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let (p, q) = (smooth(pred), smooth(truth));
    p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub rematch_per_split: bool,
    pub active_min_count: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            rematch_per_split: false,
            active_min_count: 1,
        }
    }
}

/// Everything written to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: AccReport,
    pub taxonomy: ErrorTaxonomy,
    pub histogram: PredHistogram,
    pub active_prototypes: usize,
    pub marginal_kl: f64,
    pub num_predicted_ids: usize,
}

pub fn evaluate(
    y_true: &[usize],
    y_pred: &[usize],
    num_classes: usize,
    old_classes: &[usize],
    k_pred: usize,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let acc = cluster_acc(y_true, y_pred, num_classes, old_classes, k_pred, opts.rematch_per_split)?;
    let matched = acc.matched(y_pred);
    let taxonomy = error_taxonomy(y_true, &matched, old_classes);
    let histogram = pred_histogram(y_true, &matched, acc.permutation.len());
    Ok(EvalReport {
        active_prototypes: active_prototypes(y_pred, k_pred, opts.active_min_count),
        marginal_kl: marginal_kl(&histogram.predicted, &histogram.truth),
        acc,
        taxonomy,
        histogram,
        num_predicted_ids: k_pred,
    })
}

impl EvalReport {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| GcdError::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| GcdError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| GcdError::MalformedFile {
            offset: 0,
            reason: format!("{}: {e}", path.display()),
        })
    }

    /// `class_id,predicted_count,true_count` rows.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("class_id,predicted_count,true_count\n");
        for (c, (p, t)) in self
            .histogram
            .predicted
            .iter()
            .zip(&self.histogram.truth)
            .enumerate()
        {
            out.push_str(&format!("{c},{p},{t}\n"));
        }
        out
    }

    pub fn taxonomy_csv(&self) -> String {
        let t = &self.taxonomy;
        format!(
            "error_type,fraction\ntrue_old,{}\nfalse_new,{}\nfalse_old,{}\ntrue_new,{}\n",
            t.true_old, t.false_new, t.false_old, t.true_new
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hungarian_two_by_two() {
        let (a, c) = hungarian(&Matrix::from_rows(&[[4.0, 1.0], [2.0, 3.0]])).unwrap();
        assert_eq!(a, vec![1, 0]);
        assert_eq!(c, 3.0);
        let mut m = Matrix::filled(4, 4, 1.0);
        for i in 0..4 {
            m[(i, i)] = 0.0;
        }
        assert_eq!(hungarian(&m).unwrap(), (vec![0, 1, 2, 3], 0.0));
        assert!(hungarian(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn relabelled_predictions_are_perfect() {
        let r = cluster_acc(&[0, 0, 1, 1, 2], &[2, 2, 0, 0, 1], 3, &[0], 3, false).unwrap();
        assert_eq!(r.acc_all, 1.0);
        let r = cluster_acc(&[0, 1, 2, 3], &[0, 1, 2, 3], 4, &[0, 1], 4, false).unwrap();
        assert_eq!((r.acc_all, r.acc_old, r.acc_new), (1.0, 1.0, 1.0));
        assert!(cluster_acc(&[], &[], 2, &[0], 2, false).is_err());
    }

    #[test]
    fn one_cross_split_error() {
        // old = {0}; class 1 sample predicted into class 0's cluster
        let y = [0, 0, 1, 1];
        let p = [0, 0, 0, 1];
        let r = cluster_acc(&y, &p, 2, &[0], 2, false).unwrap();
        // brute force over both permutations: identity gives 3, swap gives 1
        assert_eq!(r.acc_all, 0.75);
        assert_eq!(r.acc_old, 1.0);
        assert_eq!(r.acc_new, 0.5);
    }

    #[test]
    fn unused_prediction_ids_do_not_change_acc() {
        let y = [0, 1, 2, 2, 1, 0, 3];
        let p = [1, 0, 2, 2, 0, 1, 1];
        let a = cluster_acc(&y, &p, 4, &[0, 1], 4, false).unwrap();
        let b = cluster_acc(&y, &p, 4, &[0, 1], 9, false).unwrap();
        assert_eq!(a.acc_all, b.acc_all);
        assert_eq!((a.acc_old, a.acc_new), (b.acc_old, b.acc_new));
    }

    #[test]
    fn taxonomy_four_cells() {
        let t = error_taxonomy(&[0, 0, 2, 2], &[1, 2, 0, 3], &[0, 1]);
        assert_eq!(t, ErrorTaxonomy { true_old: 0.25, false_new: 0.25, false_old: 0.25, true_new: 0.25 });
        assert_eq!(error_taxonomy(&[0, 3], &[0, 3], &[0, 1]).total(), 0.0);
    }

    #[test]
    fn active_counts() {
        assert_eq!(active_prototypes(&[0, 0, 0], 10, 1), 1);
        assert_eq!(active_prototypes(&[1, 4, 4, 9], 10, 1), 3);
        assert_eq!(active_prototypes(&[3, 1, 2, 0], 4, 1), 4);
        assert_eq!(active_prototypes(&[1, 4, 4, 9], 10, 2), 1);
    }

    #[test]
    fn kl_values() {
        assert!(marginal_kl(&[5, 5, 5], &[5, 5, 5]).abs() < 1e-15);
        let k = 10;
        let mut pred = vec![0; k];
        pred[0] = 100;
        let kl = marginal_kl(&pred, &vec![10; k]);
        assert!((kl - (k as f64).ln()).abs() < 1e-6);
    }
}
