//! Synthetic category-discovery problems, two-view augmentation and dataset
//! file formats.
//!
//! A problem has `num_classes` classes drawn as isotropic Gaussians around
//! random directions of radius `radius`. A subset of classes is "old": some of
//! their samples carry labels. Every other sample, including all samples of
//! the "new" classes, is unlabelled and forms the evaluation set.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GcdError, Result};
use crate::matrix::Matrix;

const DATASET_MAGIC: &[u8; 4] = b"GCDS";
const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct GcdDataset {
    features: Matrix,
    labels: Vec<usize>,
    labelled: Vec<bool>,
    old_classes: Vec<usize>,
    num_classes: usize,
}

impl GcdDataset {
    /// Validates and assembles a dataset. `old_classes` is sorted and deduplicated.
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        labelled: Vec<bool>,
        old_classes: impl IntoIterator<Item = usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let old: BTreeSet<usize> = old_classes.into_iter().collect();
        let n = features.rows();
        if labels.len() != n || labelled.len() != n {
            return Err(GcdError::InvariantViolation(format!(
                "{n} feature rows but {} labels and {} mask entries",
                labels.len(),
                labelled.len()
            )));
        }
        if old.is_empty() {
            return Err(GcdError::InvariantViolation("no old classes".into()));
        }
        if let Some(&c) = old.iter().find(|&&c| c >= num_classes) {
            return Err(GcdError::InvariantViolation(format!(
                "old class {c} outside [0, {num_classes})"
            )));
        }
        let mut present = vec![false; num_classes];
        let mut has_unlabelled = vec![false; num_classes];
        for (i, (&y, &l)) in labels.iter().zip(&labelled).enumerate() {
            if y >= num_classes {
                return Err(GcdError::InvariantViolation(format!(
                    "row {i} has class {y} outside [0, {num_classes})"
                )));
            }
            if l && !old.contains(&y) {
                return Err(GcdError::InvariantViolation(format!(
                    "labelled row {i} has class {y} which is not an old class"
                )));
            }
            present[y] = true;
            has_unlabelled[y] |= !l;
        }
        if let Some(c) = (0..num_classes).find(|&c| present[c] && !has_unlabelled[c]) {
            return Err(GcdError::InvariantViolation(format!(
                "class {c} has no unlabelled sample"
            )));
        }
        if !features.is_finite() {
            return Err(GcdError::InvariantViolation("non-finite feature".into()));
        }
        Ok(GcdDataset {
            features,
            labels,
            labelled,
            old_classes: old.into_iter().collect(),
            num_classes,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn labelled_mask(&self) -> &[bool] {
        &self.labelled
    }

    /// Sorted ids of the classes that have labelled samples.
    pub fn old_classes(&self) -> &[usize] {
        &self.old_classes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn is_old(&self, class: usize) -> bool {
        self.old_classes.binary_search(&class).is_ok()
    }

    pub fn labelled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labelled[i]).collect()
    }

    /// Indices of the evaluation set.
    pub fn unlabelled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.labelled[i]).collect()
    }

    /// Ground-truth sample count per class over the unlabelled rows.
    pub fn unlabelled_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for i in self.unlabelled_indices() {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    /// Same samples with features replaced, e.g. by embeddings of a model.
    pub fn with_features(&self, features: Matrix) -> Result<Self> {
        if features.rows() != self.len() {
            return Err(GcdError::InvalidArgument(format!(
                "{} feature rows for {} samples",
                features.rows(),
                self.len()
            )));
        }
        Ok(GcdDataset {
            features,
            ..self.clone()
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| GcdError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| GcdError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.len() * (9 + 8 * self.feature_dim()));
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        for v in [
            self.len(),
            self.feature_dim(),
            self.num_classes,
            self.old_classes.len(),
        ] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for &c in &self.old_classes {
            out.extend_from_slice(&(c as u64).to_le_bytes());
        }
        for &y in &self.labels {
            out.extend_from_slice(&(y as u64).to_le_bytes());
        }
        out.extend(self.labelled.iter().map(|&l| l as u8));
        for v in self.features.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.expect_magic(DATASET_MAGIC)?;
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(r.malformed_at(4, format!("unsupported version {version}")));
        }
        let n = r.len_u64()?;
        let d = r.len_u64()?;
        let k = r.len_u64()?;
        let n_old = r.len_u64()?;
        let old = (0..n_old).map(|_| r.len_u64()).collect::<Result<Vec<_>>>()?;
        let labels = (0..n).map(|_| r.len_u64()).collect::<Result<Vec<_>>>()?;
        let mut labelled = Vec::with_capacity(n);
        for _ in 0..n {
            let off = r.offset();
            labelled.push(match r.u8()? {
                0 => false,
                1 => true,
                b => return Err(r.malformed_at(off, format!("mask byte {b} is not 0 or 1"))),
            });
        }
        let count = n
            .checked_mul(d)
            .ok_or_else(|| r.malformed_at(r.offset(), "feature count overflows".into()))?;
        let mut data = Vec::with_capacity(count.min(bytes.len() / 8));
        for _ in 0..count {
            data.push(r.f64()?);
        }
        if r.offset() as usize != bytes.len() {
            return Err(r.malformed_at(r.offset(), "trailing bytes after features".into()));
        }
        GcdDataset::new(Matrix::from_vec(n, d, data)?, labels, labelled, old, k)
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn malformed_at(&self, offset: u64, reason: String) -> GcdError {
        GcdError::MalformedFile { offset, reason }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.malformed_at(
                self.offset(),
                format!(
                    "unexpected end of file: needed {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(self.malformed_at(0, format!("bad magic {got:?}")));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A u64 that must fit in `usize` and is used as a count or id.
    pub(crate) fn len_u64(&mut self) -> Result<usize> {
        let off = self.offset();
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.bytes.len().saturating_mul(8))
            .ok_or_else(|| self.malformed_at(off, format!("implausible value {v}")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub num_classes: usize,
    pub old_class_fraction: f64,
    pub labelled_fraction: f64,
    /// Samples in the largest class.
    pub samples_per_class: usize,
    /// Class `c` (0-based) gets `samples_per_class · (c + 1)^(−γ)` samples.
    /// Zero means balanced.
    pub long_tail_exponent: f64,
    pub feature_dim: usize,
    pub radius: f64,
    pub sigma: f64,
    /// Take old classes as `0..n_old` instead of a seeded shuffle.
    pub old_classes_by_index: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_classes: 10,
            old_class_fraction: 0.5,
            labelled_fraction: 0.5,
            samples_per_class: 200,
            long_tail_exponent: 0.0,
            feature_dim: 32,
            radius: 8.0,
            sigma: 1.0,
            old_classes_by_index: false,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GcdError::InvalidArgument(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.feature_dim < 1 || self.samples_per_class < 1 {
            return bad("feature_dim and samples_per_class must be >= 1".into());
        }
        for (name, f) in [
            ("old_class_fraction", self.old_class_fraction),
            ("labelled_fraction", self.labelled_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("{name} must be in (0, 1], got {f}"));
            }
        }
        if !(self.radius > 0.0 && self.sigma > 0.0) {
            return bad("radius and sigma must be positive".into());
        }
        if !(self.long_tail_exponent >= 0.0) {
            return bad("long_tail_exponent must be >= 0".into());
        }
        Ok(())
    }

    pub fn num_old_classes(&self) -> usize {
        (self.num_classes as f64 * self.old_class_fraction).ceil() as usize
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        (0..self.num_classes)
            .map(|c| {
                let s = self.samples_per_class as f64 * ((c + 1) as f64).powf(-self.long_tail_exponent);
                (s.round() as usize).max(1)
            })
            .collect()
    }
}

/// Draws a dataset; fully determined by `cfg.seed`.
pub fn generate(cfg: &GenConfig) -> Result<GcdDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.num_classes;
    let d = cfg.feature_dim;

    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n * cfg.radius).collect()
        })
        .collect();

    let mut order: Vec<usize> = (0..k).collect();
    if !cfg.old_classes_by_index {
        order.shuffle(&mut rng);
    }
    let n_old = cfg.num_old_classes();
    if n_old == 0 {
        return Err(GcdError::InvalidArgument("configuration yields no old classes".into()));
    }
    let old: BTreeSet<usize> = order[..n_old].iter().copied().collect();

    let sizes = cfg.class_sizes();
    let total: usize = sizes.iter().sum();
    let mut data = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    let mut labelled = Vec::with_capacity(total);
    for (c, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            for &m in &means[c] {
                data.push(m + cfg.sigma * rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(c);
        }
        let mut flags = vec![false; size];
        if old.contains(&c) {
            let n_lab = ((size as f64 * cfg.labelled_fraction).round() as usize).min(size - 1);
            for i in index::sample(&mut rng, size, n_lab) {
                flags[i] = true;
            }
        }
        labelled.extend(flags);
    }
    if !labelled.iter().any(|&l| l) {
        return Err(GcdError::InvalidArgument(
            "configuration yields no labelled samples".into(),
        ));
    }
    GcdDataset::new(Matrix::from_vec(total, d, data)?, labels, labelled, old, k)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub view_a: Matrix,
    pub view_b: Matrix,
}

/// Two independent views: additive Gaussian noise, then exactly
/// `round(mask_fraction · D)` coordinates zeroed per sample.
pub fn augment(batch: &Matrix, noise_std: f64, mask_fraction: f64, seed: u64) -> Result<ViewPair> {
    if !(noise_std >= 0.0) || !(0.0..1.0).contains(&mask_fraction) {
        return Err(GcdError::InvalidArgument(format!(
            "need noise_std >= 0 and mask_fraction in [0, 1), got {noise_std}, {mask_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let view_a = one_view(batch, noise_std, mask_fraction, &mut rng);
    let view_b = one_view(batch, noise_std, mask_fraction, &mut rng);
    Ok(ViewPair { view_a, view_b })
}

fn one_view(batch: &Matrix, noise_std: f64, mask_fraction: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let d = batch.cols();
    let n_mask = (mask_fraction * d as f64).round() as usize;
    let mut out = batch.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        if noise_std > 0.0 {
            for v in row.iter_mut() {
                *v += noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if n_mask > 0 {
            for c in index::sample(rng, d, n_mask) {
                row[c] = 0.0;
            }
        }
    }
    out
}

/// Optional metadata for [`ingest_features`]. Without it, the class count is
/// `max(label) + 1` and the old classes are those with labelled rows.
#[derive(Clone, Debug, Default)]
pub struct IngestOptions {
    pub num_classes: Option<usize>,
    pub old_classes: Option<Vec<usize>>,
}

/// Reads externally computed features in the CSV layout
/// `label,labelled,f0,...,f{D-1}` with one row per sample.
pub fn ingest_features(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<GcdDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GcdError::io(path, e))?;
    parse_feature_csv(&text, opts)
}

pub fn parse_feature_csv(text: &str, opts: &IngestOptions) -> Result<GcdDataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(GcdError::Csv {
        line: 1,
        reason: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "label" || cols[1] != "labelled" {
        return Err(GcdError::Csv {
            line: 1,
            reason: "header must start with label,labelled,f0".into(),
        });
    }
    let d = cols.len() - 2;
    for (j, name) in cols[2..].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(GcdError::Csv {
                line: 1,
                reason: format!("expected column f{j}, found {name}"),
            });
        }
    }

    let mut labels = Vec::new();
    let mut labelled = Vec::new();
    let mut data = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let err = |reason: String| GcdError::Csv { line: lineno, reason };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 2 {
            return Err(err(format!("{} fields, header has {}", fields.len(), d + 2)));
        }
        labels.push(
            fields[0]
                .parse::<usize>()
                .map_err(|e| err(format!("label: {e}")))?,
        );
        labelled.push(match fields[1] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(err(format!("labelled flag {other:?}"))),
        });
        for f in &fields[2..] {
            data.push(f.parse::<f64>().map_err(|e| err(format!("feature: {e}")))?);
        }
    }

    let k = opts
        .num_classes
        .unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let old: Vec<usize> = match &opts.old_classes {
        Some(o) => o.clone(),
        None => labels
            .iter()
            .zip(&labelled)
            .filter(|(_, &l)| l)
            .map(|(&y, _)| y)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    for (i, (&y, &l)) in labels.iter().zip(&labelled).enumerate() {
        if y >= k || (l && !old.contains(&y)) {
            return Err(GcdError::Csv {
                line: i + 2,
                reason: format!("unknown class id {y}"),
            });
        }
    }
    let n = labels.len();
    GcdDataset::new(Matrix::from_vec(n, d, data)?, labels, labelled, old, k)
}
