//! Mini-batch SGD over the joint objective with per-epoch evaluation on the
//! unlabelled split.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{augment, GcdDataset};
use crate::error::{GcdError, Result};
use crate::evaluation::{evaluate, EvalOptions, EvalReport, ErrorTaxonomy};
use crate::losses::{total_objective, LossBreakdown, ObjectiveConfig, TrainingMode};
use crate::matrix::Matrix;
use crate::model::{ClassifierInput, Model, ModelConfig};
use crate::pseudolabel::{batch_targets, SupervisionMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    Minimal,
    Oracle,
    SelfLabel,
    SelfDistil,
}

impl Supervision {
    pub const ALL: [Supervision; 4] = [
        Supervision::Minimal,
        Supervision::SelfLabel,
        Supervision::SelfDistil,
        Supervision::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Supervision::Minimal => "minimal",
            Supervision::Oracle => "oracle",
            Supervision::SelfLabel => "self_label",
            Supervision::SelfDistil => "self_distil",
        }
    }
}

impl std::str::FromStr for Supervision {
    type Err = GcdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimal" => Ok(Supervision::Minimal),
            "oracle" => Ok(Supervision::Oracle),
            "self_label" => Ok(Supervision::SelfLabel),
            "self_distil" => Ok(Supervision::SelfDistil),
            other => Err(GcdError::Config(format!(
                "unknown supervision `{other}` (expected minimal, oracle, self_label or self_distil)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub tau_u: f64,
    pub tau_c: f64,
    pub tau_s: f64,
    pub tau_t_start: f64,
    pub tau_t_end: f64,
    pub tau_t_warmup_epochs: usize,
    /// When false the teacher temperature stays at `tau_t_end`.
    pub teacher_warmup: bool,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub projection_dim: usize,
    /// Prototype count; `None` uses the dataset's class count.
    pub num_prototypes: Option<usize>,
    pub classifier_input: ClassifierInput,
    pub training: TrainingMode,
    pub supervision: Supervision,
    pub sinkhorn_iterations: usize,
    pub sinkhorn_reg: f64,
    pub noise_std: f64,
    pub mask_fraction: f64,
    pub exclude_positive: bool,
    pub eval: EvalOptions,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            lambda: 0.35,
            epsilon: 1.0,
            tau_u: 0.07,
            tau_c: 1.0,
            tau_s: 0.1,
            tau_t_start: 0.07,
            tau_t_end: 0.04,
            tau_t_warmup_epochs: 30,
            teacher_warmup: true,
            hidden_dim: 64,
            embed_dim: 32,
            projection_dim: 16,
            num_prototypes: None,
            classifier_input: ClassifierInput::PostBackbone,
            training: TrainingMode::Joint,
            supervision: Supervision::SelfDistil,
            sinkhorn_iterations: 3,
            sinkhorn_reg: 0.05,
            noise_std: 0.5,
            mask_fraction: 0.1,
            exclude_positive: false,
            eval: EvalOptions::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GcdError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be >= 0 and momentum in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        for (name, t) in [
            ("tau_u", self.tau_u),
            ("tau_c", self.tau_c),
            ("tau_s", self.tau_s),
            ("tau_t_start", self.tau_t_start),
            ("tau_t_end", self.tau_t_end),
        ] {
            if !(t > 0.0) {
                return bad(format!("{name} must be positive, got {t}"));
            }
        }
        if !(self.noise_std >= 0.0) || !(0.0..1.0).contains(&self.mask_fraction) {
            return bad("noise_std must be >= 0 and mask_fraction in [0, 1)".into());
        }
        if self.num_prototypes.is_some_and(|k| k < 2) {
            return bad("num_prototypes must be at least 2".into());
        }
        self.supervision_mode(0).validate().map_err(|e| GcdError::Config(e.to_string()))
    }

    pub fn objective(&self, epoch: usize) -> ObjectiveConfig {
        ObjectiveConfig {
            lambda: self.lambda,
            epsilon: self.epsilon,
            tau_u: self.tau_u,
            tau_c: self.tau_c,
            tau_s: self.tau_s,
            tau_t: teacher_temp(epoch, self),
            exclude_positive: self.exclude_positive,
            training: self.training,
        }
    }

    pub fn supervision_mode(&self, epoch: usize) -> SupervisionMode {
        match self.supervision {
            Supervision::Minimal => SupervisionMode::Minimal,
            Supervision::Oracle => SupervisionMode::Oracle,
            Supervision::SelfLabel => SupervisionMode::SelfLabel {
                iterations: self.sinkhorn_iterations,
                reg: self.sinkhorn_reg,
            },
            Supervision::SelfDistil => SupervisionMode::SelfDistil {
                tau_t: teacher_temp(epoch, self),
            },
        }
    }

    pub fn model_config(&self, ds: &GcdDataset) -> ModelConfig {
        ModelConfig {
            feature_dim: ds.feature_dim(),
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            projection_dim: self.projection_dim,
            num_prototypes: self.num_prototypes.unwrap_or(ds.num_classes()),
            classifier_input: self.classifier_input,
            seed: self.seed,
        }
    }
}

/// Cosine-annealed learning rate, constant within an epoch.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> f64 {
    let t = epoch as f64 / cfg.epochs as f64;
    cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Teacher temperature: cosine ramp from `tau_t_start` to `tau_t_end` over
/// the warm-up epochs, then constant.
pub fn teacher_temp(epoch: usize, cfg: &TrainConfig) -> f64 {
    if !cfg.teacher_warmup || epoch >= cfg.tau_t_warmup_epochs {
        return cfg.tau_t_end;
    }
    let t = epoch as f64 / cfg.tau_t_warmup_epochs as f64;
    let w = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
    cfg.tau_t_start * w + cfg.tau_t_end * (1.0 - w)
}

/// SplitMix64 finalizer over `base + stream`, used for child seeds.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Shuffled index chunks; the last one may be short.
pub fn make_batches(n: usize, batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Model plus optimizer state.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub velocity: Vec<Matrix>,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        let velocity = model
            .params()
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        TrainState { model, velocity }
    }
}

/// Prototype index that ground truth of each class supervises: old classes
/// take slots `0..n_old` in id order, new classes follow. Any number of
/// prototypes at least the old-class count can then host the labelled data.
pub fn prototype_slots(ds: &GcdDataset) -> Vec<usize> {
    let mut order: Vec<usize> = ds.old_classes().to_vec();
    order.extend((0..ds.num_classes()).filter(|&c| !ds.is_old(c)));
    let mut slots = vec![0; ds.num_classes()];
    for (slot, &class) in order.iter().enumerate() {
        slots[class] = slot;
    }
    slots
}

/// Errors unless the prototypes can host every class given ground truth.
fn check_prototypes(cfg: &TrainConfig, ds: &GcdDataset) -> Result<()> {
    let k = cfg.model_config(ds).num_prototypes;
    let (need, what) = match cfg.supervision {
        Supervision::Oracle => (ds.num_classes(), "classes under oracle supervision"),
        _ => (ds.old_classes().len(), "old classes"),
    };
    if k < need {
        return Err(GcdError::Config(format!(
            "num_prototypes = {k} is smaller than the {need} {what}"
        )));
    }
    Ok(())
}

/// One SGD-with-momentum step on a batch of dataset rows. Returns the loss
/// terms evaluated before the update.
pub fn train_step(
    state: &mut TrainState,
    ds: &GcdDataset,
    batch: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
    augment_seed: u64,
) -> Result<LossBreakdown> {
    let x = ds.features().select_rows(batch);
    let views = augment(&x, cfg.noise_std, cfg.mask_fraction, augment_seed)?;
    let slots = prototype_slots(ds);
    let labels: Vec<usize> = batch.iter().map(|&i| slots[ds.labels()[i]]).collect();
    let labelled: Vec<bool> = batch.iter().map(|&i| ds.labelled_mask()[i]).collect();
    let mode = cfg.supervision_mode(epoch);
    let targets = batch_targets(&mode, &state.model, &views, &labels, &labelled, cfg.tau_s)?;
    let (losses, mut og) = total_objective(&state.model, &views, &targets, &cfg.objective(epoch))?;
    if !losses.total.is_finite() {
        return Err(GcdError::Numerical(format!(
            "non-finite loss at epoch {epoch}: {losses:?}"
        )));
    }
    let grads = og.graph.backward(og.total)?;
    let grads = state.model.ordered_grads(&og.nodes, &grads);
    for ((p, v), g) in state
        .model
        .params_mut()
        .into_iter()
        .zip(state.velocity.iter_mut())
        .zip(&grads)
    {
        for ((w, m), d) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *m = cfg.momentum * *m + d + cfg.weight_decay * *w;
            *w -= lr * *m;
        }
        if !p.is_finite() {
            return Err(GcdError::Numerical(format!(
                "parameters diverged at epoch {epoch}"
            )));
        }
    }
    Ok(losses)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub tau_t: f64,
    /// Batch-averaged loss terms.
    pub losses: LossBreakdown,
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    pub taxonomy: ErrorTaxonomy,
    pub active_prototypes: usize,
    pub marginal_kl: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
}

impl MetricsLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| GcdError::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| GcdError::io(path, e))
    }
}

/// Evaluates the model's argmax prototype on the unlabelled split.
pub fn evaluate_model(model: &Model, ds: &GcdDataset, opts: &EvalOptions) -> Result<EvalReport> {
    let idx = ds.unlabelled_indices();
    let preds = model.predict(&ds.features().select_rows(&idx))?;
    let truth: Vec<usize> = idx.iter().map(|&i| ds.labels()[i]).collect();
    evaluate(
        &truth,
        &preds,
        ds.num_classes(),
        ds.old_classes(),
        model.num_prototypes(),
        opts,
    )
}

/// Trains from a fresh initialization. Identical inputs give identical
/// outputs.
pub fn train(cfg: &TrainConfig, ds: &GcdDataset) -> Result<(Model, MetricsLog)> {
    train_with(cfg, ds, |_| {})
}

/// Like [`train`], calling `on_epoch` after each epoch's evaluation.
pub fn train_with(
    cfg: &TrainConfig,
    ds: &GcdDataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, MetricsLog)> {
    cfg.validate()?;
    check_prototypes(cfg, ds)?;
    let model = Model::init(&cfg.model_config(ds))?;
    let mut state = TrainState::new(model);
    let mut log = MetricsLog::default();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg);
        let batches = make_batches(ds.len(), cfg.batch_size, derive_seed(cfg.seed, 2 * epoch as u64));
        let aug_base = derive_seed(cfg.seed, 2 * epoch as u64 + 1);
        let mut sum = LossBreakdown::default();
        let mut weight = 0usize;
        for (step, batch) in batches.iter().enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let l = train_step(&mut state, ds, batch, cfg, epoch, lr, derive_seed(aug_base, step as u64))?;
            sum.accumulate(&l.scaled(batch.len() as f64));
            weight += batch.len();
        }
        let report = evaluate_model(&state.model, ds, &cfg.eval)?;
        let record = EpochRecord {
            epoch,
            lr,
            tau_t: teacher_temp(epoch, cfg),
            losses: sum.scaled(1.0 / weight.max(1) as f64),
            acc_all: report.acc.acc_all,
            acc_old: report.acc.acc_old,
            acc_new: report.acc.acc_new,
            taxonomy: report.taxonomy,
            active_prototypes: report.active_prototypes,
            marginal_kl: report.marginal_kl,
        };
        on_epoch(&record);
        log.records.push(record);
    }
    Ok((state.model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, GenConfig};

    fn small_ds() -> GcdDataset {
        generate(&GenConfig {
            num_classes: 4,
            samples_per_class: 20,
            feature_dim: 8,
            ..GenConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn teacher_schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(teacher_temp(0, &cfg), 0.07);
        assert!((teacher_temp(15, &cfg) - 0.055).abs() < 1e-12);
        assert_eq!(teacher_temp(30, &cfg), 0.04);
        assert_eq!(teacher_temp(150, &cfg), 0.04);
        let off = TrainConfig {
            teacher_warmup: false,
            ..cfg
        };
        assert_eq!(teacher_temp(0, &off), 0.04);
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cosine_lr(0, &cfg), 0.1);
        assert!((cosine_lr(100, &cfg) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn batches_cover_every_index_once() {
        let b = make_batches(10, 4, 3);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn zero_lr_step_leaves_model_unchanged() {
        let ds = small_ds();
        let cfg = TrainConfig::default();
        let mut state = TrainState::new(Model::init(&cfg.model_config(&ds)).unwrap());
        let before = state.model.clone();
        let batch: Vec<usize> = (0..16).collect();
        train_step(&mut state, &ds, &batch, &cfg, 0, 0.0, 1).unwrap();
        assert_eq!(state.model, before);
    }

    #[test]
    fn step_changes_parameters() {
        let ds = small_ds();
        let cfg = TrainConfig::default();
        let mut state = TrainState::new(Model::init(&cfg.model_config(&ds)).unwrap());
        let before = state.model.clone();
        let batch: Vec<usize> = (0..16).collect();
        train_step(&mut state, &ds, &batch, &cfg, 0, 0.1, 1).unwrap();
        assert_ne!(state.model, before);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = small_ds();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (m1, l1) = train(&cfg, &ds).unwrap();
        let (m2, l2) = train(&cfg, &ds).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(l1, l2);
        assert_eq!(l1.to_jsonl().lines().count(), 2);
    }

    #[test]
    fn fewer_prototypes_than_classes() {
        let ds = small_ds();
        let slots = prototype_slots(&ds);
        let n_old = ds.old_classes().len();
        for &c in ds.old_classes() {
            assert!(slots[c] < n_old);
        }
        let mut sorted = slots.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..ds.num_classes()).collect::<Vec<_>>());

        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 16,
            num_prototypes: Some(n_old),
            ..TrainConfig::default()
        };
        assert!(train(&cfg, &ds).is_ok());
        let oracle = TrainConfig {
            supervision: Supervision::Oracle,
            ..cfg.clone()
        };
        assert_eq!(train(&oracle, &ds).unwrap_err().exit_code(), 2);
    }
}
