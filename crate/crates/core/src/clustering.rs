//! k-means++ seeding, Lloyd's algorithm and the semi-supervised variant in
//! which labelled samples stay pinned to their class's cluster.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::GcdDataset;
use crate::error::{GcdError, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmeansResult {
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// `Σ ‖x_i − c_{a_i}‖²` for the returned centroids and assignments.
    pub objective: f64,
    pub iterations_run: usize,
    /// Objective after every assignment step, then for the final centroids.
    pub objective_history: Vec<f64>,
    /// Assignments after every assignment step when tracing is on.
    #[serde(skip)]
    pub assignment_history: Vec<Vec<usize>>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid; ties go to the lowest index.
fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Continues D² seeding from `existing` centroids until there are `k`.
fn dsquared_extend(
    points: &Matrix,
    candidates: &[usize],
    mut chosen: Vec<Vec<f64>>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Matrix {
    let mut picked = vec![false; candidates.len()];
    let mut dist: Vec<f64> = candidates
        .iter()
        .map(|&i| {
            chosen
                .iter()
                .map(|c| sq_dist(points.row(i), c))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    while chosen.len() < k {
        let total: f64 = dist
            .iter()
            .zip(&picked)
            .filter(|(_, &p)| !p)
            .map(|(d, _)| if d.is_finite() { *d } else { 0.0 })
            .sum();
        let next = if chosen.is_empty() || !(total > 0.0) {
            // uniform over not-yet-picked candidates
            let free: Vec<usize> = (0..candidates.len()).filter(|&j| !picked[j]).collect();
            free[rng.random_range(0..free.len())]
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (j, &d) in dist.iter().enumerate() {
                if picked[j] || d <= 0.0 {
                    continue;
                }
                pick = Some(j);
                if target < d {
                    break;
                }
                target -= d;
            }
            pick.expect("positive total mass")
        };
        picked[next] = true;
        let c = points.row(candidates[next]).to_vec();
        for (j, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(candidates[j]), &c));
        }
        chosen.push(c);
    }
    Matrix::from_rows(&chosen)
}

/// k-means++ seeding: first centroid uniform, later ones sampled with
/// probability proportional to squared distance to the nearest chosen one.
pub fn kmeanspp_init(points: &Matrix, k: usize, seed: u64) -> Result<Matrix> {
    if k == 0 || k > points.rows() {
        return Err(GcdError::InvalidArgument(format!(
            "cannot seed {k} centroids from {} points",
            points.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..points.rows()).collect();
    Ok(dsquared_extend(points, &all, Vec::new(), k, &mut rng))
}

/// Lloyd iterations from `init` until the assignment stops changing or every
/// centroid moves less than `tol`. Empty clusters are re-seeded at the point
/// farthest from its centroid.
pub fn kmeans(points: &Matrix, init: &Matrix, max_iters: usize, tol: f64) -> Result<KmeansResult> {
    lloyd(points, init, &vec![None; points.rows()], max_iters, tol, 0, false)
}

/// Shared Lloyd loop; `pinned[i] = Some(c)` fixes sample `i` in cluster `c`.
fn lloyd(
    points: &Matrix,
    init: &Matrix,
    pinned: &[Option<usize>],
    max_iters: usize,
    tol: f64,
    // clusters below this index average only their pinned members
    pinned_only_below: usize,
    trace: bool,
) -> Result<KmeansResult> {
    if max_iters == 0 {
        return Err(GcdError::InvalidArgument("max_iters must be >= 1".into()));
    }
    if init.cols() != points.cols() || init.rows() == 0 {
        return Err(GcdError::InvalidArgument(format!(
            "centroids {:?} do not fit points {:?}",
            init.shape(),
            points.shape()
        )));
    }
    let n = points.rows();
    let k = init.rows();
    let mut centroids = init.clone();
    let mut prev: Option<Vec<usize>> = None;
    let mut history = Vec::new();
    let mut assignment_history = Vec::new();
    let mut iterations_run = 0;

    loop {
        let assigned: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| match pinned[i] {
                Some(c) => (c, sq_dist(points.row(i), centroids.row(c))),
                None => nearest(points.row(i), &centroids),
            })
            .collect();
        let assignments: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        history.push(assigned.iter().map(|a| a.1).sum::<f64>());
        if trace {
            assignment_history.push(assignments.clone());
        }
        iterations_run += 1;

        let mut sums = Matrix::zeros(k, points.cols());
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            if a < pinned_only_below && pinned[i].is_none() {
                continue;
            }
            counts[a] += 1;
            for (s, v) in sums.row_mut(a).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        let mut next = centroids.clone();
        let mut far: Vec<f64> = assigned
            .iter()
            .enumerate()
            .map(|(i, a)| if pinned[i].is_some() { -1.0 } else { a.1 })
            .collect();
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in next.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / counts[c] as f64;
                }
            } else {
                let idx = (0..n).fold(0, |best, i| if far[i] > far[best] { i } else { best });
                if far[idx] >= 0.0 {
                    next.row_mut(c).copy_from_slice(points.row(idx));
                    far[idx] = -1.0;
                }
            }
        }
        let shift = (0..k)
            .map(|c| sq_dist(centroids.row(c), next.row(c)).sqrt())
            .fold(0.0, f64::max);
        let stable = prev.as_ref() == Some(&assignments);
        centroids = next;
        prev = Some(assignments);
        if stable || shift < tol || iterations_run >= max_iters {
            break;
        }
    }

    let assignments = prev.expect("at least one iteration");
    let objective: f64 = assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(points.row(i), centroids.row(a)))
        .sum();
    history.push(objective);
    Ok(KmeansResult {
        centroids,
        assignments,
        objective,
        iterations_run,
        objective_history: history,
        assignment_history,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsKmeansOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Old-class centroids use only their labelled members.
    pub labelled_only_centroids: bool,
    /// Keep per-iteration assignments in the result.
    pub trace: bool,
}

impl Default for SsKmeansOptions {
    fn default() -> Self {
        SsKmeansOptions {
            max_iters: 100,
            tol: 1e-8,
            labelled_only_centroids: false,
            trace: false,
        }
    }
}

/// Semi-supervised k-means. Cluster `j < |old classes|` belongs to the
/// `j`-th old class: its labelled samples are always assigned to it and its
/// initial centroid is their mean. The remaining clusters are seeded by
/// D² sampling over the unlabelled samples.
pub fn ss_kmeans(
    ds: &GcdDataset,
    features: &Matrix,
    k: usize,
    seed: u64,
    opts: &SsKmeansOptions,
) -> Result<KmeansResult> {
    let old = ds.old_classes();
    if k < old.len() {
        return Err(GcdError::InvalidArgument(format!(
            "k = {k} is smaller than the {} old classes",
            old.len()
        )));
    }
    if features.rows() != ds.len() {
        return Err(GcdError::InvalidArgument(format!(
            "{} feature rows for {} samples",
            features.rows(),
            ds.len()
        )));
    }
    let pinned: Vec<Option<usize>> = (0..ds.len())
        .map(|i| {
            ds.labelled_mask()[i]
                .then(|| old.binary_search(&ds.labels()[i]).expect("labelled rows are old"))
        })
        .collect();

    let mut class_means: Vec<Option<Vec<f64>>> = vec![None; old.len()];
    for (j, mean) in class_means.iter_mut().enumerate() {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| pinned[i] == Some(j)).collect();
        if members.is_empty() {
            continue;
        }
        let mut m = vec![0.0; features.cols()];
        for &i in &members {
            for (s, v) in m.iter_mut().zip(features.row(i)) {
                *s += v;
            }
        }
        m.iter_mut().for_each(|s| *s /= members.len() as f64);
        *mean = Some(m);
    }

    let unlabelled = ds.unlabelled_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let known: Vec<Vec<f64>> = class_means.iter().flatten().cloned().collect();
    let missing = k - known.len();
    if missing > unlabelled.len() {
        return Err(GcdError::InvalidArgument(format!(
            "cannot seed {missing} clusters from {} unlabelled samples",
            unlabelled.len()
        )));
    }
    let seeded = dsquared_extend(features, &unlabelled, known.clone(), k, &mut rng);
    // old clusters without labelled members take the first extra seeds
    let mut extra = (known.len()..k).map(|r| seeded.row(r).to_vec());
    let mut rows: Vec<Vec<f64>> = class_means
        .into_iter()
        .map(|m| m.unwrap_or_else(|| extra.next().expect("enough seeds")))
        .collect();
    rows.extend(extra);
    let init = Matrix::from_rows(&rows);

    lloyd(
        features,
        &init,
        &pinned,
        opts.max_iters,
        opts.tol,
        if opts.labelled_only_centroids { old.len() } else { 0 },
        opts.trace,
    )
}
