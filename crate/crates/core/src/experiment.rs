//! Flat `key = value` experiment configs and the command implementations
//! behind the `gcd-lab` binary.
//!
//! Every command writes plain files: datasets and checkpoints in their binary
//! formats, `report.json`, `metrics.jsonl`, and CSV tables for plotting.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, kmeanspp_init, ss_kmeans, SsKmeansOptions};
use crate::dataset::{generate, GcdDataset, GenConfig};
use crate::error::{GcdError, Result};
use crate::evaluation::{evaluate, EvalOptions, EvalReport};
use crate::model::Model;
use crate::trainer::{derive_seed, evaluate_model, train, MetricsLog, TrainConfig};

/// Every accepted key with its meaning. Order matches [`ExperimentConfig::to_text`].
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("num_classes", "total classes in the generated data"),
    ("old_class_fraction", "fraction of classes that are old (rounded up)"),
    ("labelled_fraction", "fraction of each old class that is labelled"),
    ("samples_per_class", "samples in the largest class"),
    ("long_tail_exponent", "class c gets samples_per_class * (c+1)^-exponent samples"),
    ("feature_dim", "input dimension"),
    ("radius", "norm of the class means"),
    ("sigma", "per-coordinate standard deviation around each mean"),
    ("old_classes_by_index", "old classes are 0..k instead of a seeded draw"),
    ("data_seed", "seed for data generation"),
    ("hidden_dim", "backbone hidden width"),
    ("embed_dim", "backbone output width"),
    ("projection_dim", "projector output width"),
    ("num_prototypes", "classifier prototypes; 0 uses the class count"),
    ("classifier_input", "post_backbone | post_projector"),
    ("training", "joint | decoupled"),
    ("supervision", "minimal | self_label | self_distil | oracle"),
    ("epochs", "training epochs"),
    ("batch_size", "mini-batch size"),
    ("lr", "initial learning rate, cosine-decayed to 0"),
    ("momentum", "SGD momentum"),
    ("weight_decay", "L2 weight decay"),
    ("lambda", "weight of the supervised terms"),
    ("epsilon", "weight of the mean-entropy regularizer"),
    ("tau_u", "temperature of the unsupervised contrastive loss"),
    ("tau_c", "temperature of the supervised contrastive loss"),
    ("tau_s", "student temperature"),
    ("tau_t_start", "teacher temperature at epoch 0"),
    ("tau_t_end", "teacher temperature after warm-up"),
    ("tau_t_warmup_epochs", "length of the teacher temperature ramp"),
    ("teacher_warmup", "ramp the teacher temperature; false holds it at tau_t_end"),
    ("sinkhorn_iterations", "Sinkhorn-Knopp iterations for self_label"),
    ("sinkhorn_reg", "Sinkhorn-Knopp entropic regularization"),
    ("noise_std", "augmentation Gaussian noise"),
    ("mask_fraction", "augmentation: fraction of coordinates zeroed per view"),
    ("exclude_positive", "drop the positive from contrastive denominators"),
    ("seed", "seed for initialization, batching and augmentation"),
    ("rematch_per_split", "re-run the matching separately for old and new classes"),
    ("active_min_count", "predictions needed for a prototype to count as active"),
    ("out_dir", "default output directory; empty means none"),
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub gen: GenConfig,
    pub train: TrainConfig,
    pub out_dir: Option<PathBuf>,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| GcdError::Config(format!("bad value `{value}` for `{key}`")))
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let (g, t) = (&mut self.gen, &mut self.train);
        match key.trim() {
            "num_classes" => g.num_classes = parse_value(key, v)?,
            "old_class_fraction" => g.old_class_fraction = parse_value(key, v)?,
            "labelled_fraction" => g.labelled_fraction = parse_value(key, v)?,
            "samples_per_class" => g.samples_per_class = parse_value(key, v)?,
            "long_tail_exponent" => g.long_tail_exponent = parse_value(key, v)?,
            "feature_dim" => g.feature_dim = parse_value(key, v)?,
            "radius" => g.radius = parse_value(key, v)?,
            "sigma" => g.sigma = parse_value(key, v)?,
            "old_classes_by_index" => g.old_classes_by_index = parse_value(key, v)?,
            "data_seed" => g.seed = parse_value(key, v)?,
            "hidden_dim" => t.hidden_dim = parse_value(key, v)?,
            "embed_dim" => t.embed_dim = parse_value(key, v)?,
            "projection_dim" => t.projection_dim = parse_value(key, v)?,
            "num_prototypes" => {
                let k: usize = parse_value(key, v)?;
                t.num_prototypes = (k > 0).then_some(k);
            }
            "classifier_input" => t.classifier_input = v.parse()?,
            "training" => t.training = v.parse()?,
            "supervision" => t.supervision = v.parse()?,
            "epochs" => t.epochs = parse_value(key, v)?,
            "batch_size" => t.batch_size = parse_value(key, v)?,
            "lr" => t.lr = parse_value(key, v)?,
            "momentum" => t.momentum = parse_value(key, v)?,
            "weight_decay" => t.weight_decay = parse_value(key, v)?,
            "lambda" => t.lambda = parse_value(key, v)?,
            "epsilon" => t.epsilon = parse_value(key, v)?,
            "tau_u" => t.tau_u = parse_value(key, v)?,
            "tau_c" => t.tau_c = parse_value(key, v)?,
            "tau_s" => t.tau_s = parse_value(key, v)?,
            "tau_t_start" => t.tau_t_start = parse_value(key, v)?,
            "tau_t_end" => t.tau_t_end = parse_value(key, v)?,
            "tau_t_warmup_epochs" => t.tau_t_warmup_epochs = parse_value(key, v)?,
            "teacher_warmup" => t.teacher_warmup = parse_value(key, v)?,
            "sinkhorn_iterations" => t.sinkhorn_iterations = parse_value(key, v)?,
            "sinkhorn_reg" => t.sinkhorn_reg = parse_value(key, v)?,
            "noise_std" => t.noise_std = parse_value(key, v)?,
            "mask_fraction" => t.mask_fraction = parse_value(key, v)?,
            "exclude_positive" => t.exclude_positive = parse_value(key, v)?,
            "seed" => t.seed = parse_value(key, v)?,
            "rematch_per_split" => t.eval.rematch_per_split = parse_value(key, v)?,
            "active_min_count" => t.eval.active_min_count = parse_value(key, v)?,
            "out_dir" => self.out_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            other => return Err(GcdError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Value of `key` formatted so that `set(key, get(key))` is exact.
    pub fn get(&self, key: &str) -> Result<String> {
        let (g, t) = (&self.gen, &self.train);
        Ok(match key {
            "num_classes" => g.num_classes.to_string(),
            "old_class_fraction" => g.old_class_fraction.to_string(),
            "labelled_fraction" => g.labelled_fraction.to_string(),
            "samples_per_class" => g.samples_per_class.to_string(),
            "long_tail_exponent" => g.long_tail_exponent.to_string(),
            "feature_dim" => g.feature_dim.to_string(),
            "radius" => g.radius.to_string(),
            "sigma" => g.sigma.to_string(),
            "old_classes_by_index" => g.old_classes_by_index.to_string(),
            "data_seed" => g.seed.to_string(),
            "hidden_dim" => t.hidden_dim.to_string(),
            "embed_dim" => t.embed_dim.to_string(),
            "projection_dim" => t.projection_dim.to_string(),
            "num_prototypes" => t.num_prototypes.unwrap_or(0).to_string(),
            "classifier_input" => t.classifier_input.as_str().to_string(),
            "training" => t.training.as_str().to_string(),
            "supervision" => t.supervision.as_str().to_string(),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => t.lr.to_string(),
            "momentum" => t.momentum.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "lambda" => t.lambda.to_string(),
            "epsilon" => t.epsilon.to_string(),
            "tau_u" => t.tau_u.to_string(),
            "tau_c" => t.tau_c.to_string(),
            "tau_s" => t.tau_s.to_string(),
            "tau_t_start" => t.tau_t_start.to_string(),
            "tau_t_end" => t.tau_t_end.to_string(),
            "tau_t_warmup_epochs" => t.tau_t_warmup_epochs.to_string(),
            "teacher_warmup" => t.teacher_warmup.to_string(),
            "sinkhorn_iterations" => t.sinkhorn_iterations.to_string(),
            "sinkhorn_reg" => t.sinkhorn_reg.to_string(),
            "noise_std" => t.noise_std.to_string(),
            "mask_fraction" => t.mask_fraction.to_string(),
            "exclude_positive" => t.exclude_positive.to_string(),
            "seed" => t.seed.to_string(),
            "rematch_per_split" => t.eval.rematch_per_split.to_string(),
            "active_min_count" => t.eval.active_min_count.to_string(),
            "out_dir" => self
                .out_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            other => return Err(GcdError::Config(format!("unknown key `{other}`"))),
        })
    }

    /// Parses a config document on top of the defaults. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                GcdError::Config(format!("line {}: expected key = value", n + 1))
            })?;
            cfg.set(k, v)
                .map_err(|e| GcdError::Config(format!("line {}: {}", n + 1, strip_config(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| GcdError::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| GcdError::Config(format!("override `{o}` is not key=value")))?;
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.gen
            .validate()
            .map_err(|e| GcdError::Config(strip_config(e)))?;
        self.train.validate()
    }

    /// The full resolved config with a comment per key.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, doc) in CONFIG_KEYS {
            let value = self.get(key).expect("listed keys are known");
            let _ = writeln!(out, "# {doc}\n{key} = {value}");
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_text())
    }
}

fn strip_config(e: GcdError) -> String {
    match e {
        GcdError::Config(m) => m,
        other => other.to_string(),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| GcdError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GcdError::io(dir, e))
}

/// Writes `report.json` and `histogram.csv` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    report.save_json(dir.join("report.json"))?;
    write_file(&dir.join("histogram.csv"), report.histogram_csv())
}

pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<GcdDataset> {
    cfg.validate()?;
    let ds = generate(&cfg.gen)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    ds.save(out)?;
    Ok(ds)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: MetricsLog,
    pub report: EvalReport,
}

/// Trains on `dataset` (or on data generated from the config when `None`)
/// and writes `config.txt`, `model.ckpt`, `metrics.jsonl`, `report.json`
/// and `histogram.csv` into `out_dir`.
pub fn cmd_train(cfg: &ExperimentConfig, dataset: Option<&Path>, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ds = match dataset {
        Some(p) => GcdDataset::load(p)?,
        None => generate(&cfg.gen)?,
    };
    train_into(cfg, &ds, out_dir)
}

fn train_into(cfg: &ExperimentConfig, ds: &GcdDataset, out_dir: &Path) -> Result<TrainOutcome> {
    ensure_dir(out_dir)?;
    cfg.save(out_dir.join("config.txt"))?;
    let (model, log) = train(&cfg.train, ds)?;
    model.save(out_dir.join("model.ckpt"))?;
    log.save_jsonl(out_dir.join("metrics.jsonl"))?;
    let report = evaluate_model(&model, ds, &cfg.train.eval)?;
    write_report(&report, out_dir)?;
    Ok(TrainOutcome { model, log, report })
}

/// Prototype-argmax evaluation of a checkpoint on the unlabelled split.
pub fn cmd_eval(model: &Path, dataset: &Path, opts: &EvalOptions, out_dir: Option<&Path>) -> Result<EvalReport> {
    let model = Model::load(model)?;
    let ds = GcdDataset::load(dataset)?;
    if model.config.feature_dim != ds.feature_dim() {
        return Err(GcdError::InvalidArgument(format!(
            "model expects {} input features, dataset has {}",
            model.config.feature_dim,
            ds.feature_dim()
        )));
    }
    let report = evaluate_model(&model, &ds, opts)?;
    if let Some(dir) = out_dir {
        write_report(&report, dir)?;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KmeansMode {
    Plain,
    Semi,
}

impl std::str::FromStr for KmeansMode {
    type Err = GcdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(KmeansMode::Plain),
            "semi" => Ok(KmeansMode::Semi),
            other => Err(GcdError::Config(format!(
                "unknown k-means mode `{other}` (expected plain or semi)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct KmeansRequest<'a> {
    pub dataset: &'a Path,
    pub mode: KmeansMode,
    /// Cluster count; `None` uses the class count.
    pub k: Option<usize>,
    pub seed: u64,
    /// Cluster the backbone features of this checkpoint instead of raw inputs.
    pub model: Option<&'a Path>,
    pub max_iters: usize,
    pub labelled_only_centroids: bool,
    pub eval: EvalOptions,
}

impl<'a> KmeansRequest<'a> {
    pub fn new(dataset: &'a Path, mode: KmeansMode) -> Self {
        KmeansRequest {
            dataset,
            mode,
            k: None,
            seed: 0,
            model: None,
            max_iters: 100,
            labelled_only_centroids: false,
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmeansSummary {
    pub mode: KmeansMode,
    pub k: usize,
    pub seed: u64,
    pub objective: f64,
    pub iterations_run: usize,
    pub feature_source: String,
}

/// Clusters every sample and scores the unlabelled ones. Writes
/// `report.json`, `histogram.csv` and `kmeans.json` when `out_dir` is given.
pub fn cmd_kmeans(req: &KmeansRequest<'_>, out_dir: Option<&Path>) -> Result<(EvalReport, KmeansSummary)> {
    let ds = GcdDataset::load(req.dataset)?;
    let (features, source) = match req.model {
        Some(p) => {
            let m = Model::load(p)?;
            (m.backbone_forward(ds.features())?, p.display().to_string())
        }
        None => (ds.features().clone(), "input".to_string()),
    };
    let k = req.k.unwrap_or(ds.num_classes());
    let result = match req.mode {
        KmeansMode::Plain => {
            let init = kmeanspp_init(&features, k, req.seed)?;
            kmeans(&features, &init, req.max_iters, 1e-8)?
        }
        KmeansMode::Semi => ss_kmeans(
            &ds,
            &features,
            k,
            req.seed,
            &SsKmeansOptions {
                max_iters: req.max_iters,
                labelled_only_centroids: req.labelled_only_centroids,
                ..SsKmeansOptions::default()
            },
        )?,
    };
    let idx = ds.unlabelled_indices();
    let truth: Vec<usize> = idx.iter().map(|&i| ds.labels()[i]).collect();
    let preds: Vec<usize> = idx.iter().map(|&i| result.assignments[i]).collect();
    let report = evaluate(&truth, &preds, ds.num_classes(), ds.old_classes(), k, &req.eval)?;
    let summary = KmeansSummary {
        mode: req.mode,
        k,
        seed: req.seed,
        objective: result.objective,
        iterations_run: result.iterations_run,
        feature_source: source,
    };
    if let Some(dir) = out_dir {
        write_report(&report, dir)?;
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_file(&dir.join("kmeans.json"), json)?;
    }
    Ok((report, summary))
}

/// Collects reports into `taxonomy.csv` (one row per report) and
/// `histogram.csv` (one row per report and class) for plotting.
pub fn cmd_diagnose(reports: &[PathBuf], out_dir: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(GcdError::InvalidArgument("no reports given".into()));
    }
    ensure_dir(out_dir)?;
    let mut tax = String::from(
        "source,acc_all,acc_old,acc_new,true_old,false_new,false_old,true_new,active_prototypes,marginal_kl\n",
    );
    let mut hist = String::from("source,class_id,predicted_count,true_count\n");
    for path in reports {
        let r = EvalReport::load_json(path)?;
        let src = path.display().to_string().replace(',', "_");
        let t = &r.taxonomy;
        let _ = writeln!(
            tax,
            "{src},{},{},{},{},{},{},{},{},{}",
            r.acc.acc_all,
            r.acc.acc_old,
            r.acc.acc_new,
            t.true_old,
            t.false_new,
            t.false_old,
            t.true_new,
            r.active_prototypes,
            r.marginal_kl
        );
        for (c, (p, y)) in r.histogram.predicted.iter().zip(&r.histogram.truth).enumerate() {
            let _ = writeln!(hist, "{src},{c},{p},{y}");
        }
    }
    write_file(&out_dir.join("taxonomy.csv"), tax)?;
    write_file(&out_dir.join("histogram.csv"), hist)
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    Epsilon(Vec<f64>),
    /// Prototype counts.
    K(Vec<usize>),
}

impl SweepAxis {
    /// Parses a comma-separated ε list.
    pub fn parse_epsilon(list: &str) -> Result<Self> {
        let vals = split_list(list)
            .map(|v| parse_value::<f64>("epsilon", v))
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepAxis::Epsilon(vals))
    }

    /// Parses a comma-separated K list. Entries ending in `x` are multiples
    /// of `num_classes`, so `0.5x,1x,2x` with 10 classes gives 5, 10, 20.
    pub fn parse_k(list: &str, num_classes: usize) -> Result<Self> {
        let vals = split_list(list)
            .map(|v| match v.strip_suffix('x') {
                Some(m) => {
                    let m: f64 = parse_value("k", m)?;
                    Ok((m * num_classes as f64).round() as usize)
                }
                None => parse_value("k", v),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepAxis::K(vals))
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Epsilon(v) => v.len(),
            SweepAxis::K(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn apply(&self, index: usize, cfg: &mut ExperimentConfig) -> String {
        match self {
            SweepAxis::Epsilon(v) => {
                cfg.train.epsilon = v[index];
                v[index].to_string()
            }
            SweepAxis::K(v) => {
                cfg.train.num_prototypes = Some(v[index]);
                v[index].to_string()
            }
        }
    }
}

fn split_list(list: &str) -> impl Iterator<Item = &str> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sweep_value: String,
    pub seed: u64,
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    pub marginal_kl: f64,
    pub active_prototypes: usize,
    pub wall_seconds: f64,
}

pub const SUMMARY_HEADER: &str =
    "sweep_value,seed,acc_all,acc_old,acc_new,marginal_kl,active_prototypes,wall_seconds";

/// Trains one run per (value, seed) pair in parallel. Run `i` lives in
/// `out_dir/run_{i:03}` with its resolved config; its training seed is
/// `derive_seed(seed, value_index)`. Rows of `summary.csv` follow the run
/// order.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    axis: &SweepAxis,
    seeds: &[u64],
    dataset: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if axis.is_empty() || seeds.is_empty() {
        return Err(GcdError::Config("sweep needs at least one value and one seed".into()));
    }
    let ds = match dataset {
        Some(p) => GcdDataset::load(p)?,
        None => generate(&cfg.gen)?,
    };
    ensure_dir(out_dir)?;
    let mut runs = Vec::new();
    for vi in 0..axis.len() {
        for &seed in seeds {
            let mut run_cfg = cfg.clone();
            let label = axis.apply(vi, &mut run_cfg);
            run_cfg.train.seed = derive_seed(seed, vi as u64);
            run_cfg.out_dir = None;
            run_cfg.validate()?;
            runs.push((label, seed, run_cfg));
        }
    }
    let rows = runs
        .par_iter()
        .enumerate()
        .map(|(i, (label, seed, run_cfg))| {
            let start = Instant::now();
            let outcome = train_into(run_cfg, &ds, &out_dir.join(format!("run_{i:03}")))?;
            let r = &outcome.report;
            Ok(SweepRow {
                sweep_value: label.clone(),
                seed: *seed,
                acc_all: r.acc.acc_all,
                acc_old: r.acc.acc_old,
                acc_new: r.acc.acc_new,
                marginal_kl: r.marginal_kl,
                active_prototypes: r.active_prototypes,
                wall_seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = format!("{SUMMARY_HEADER}\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{:.3}",
            r.sweep_value, r.seed, r.acc_all, r.acc_old, r.acc_new, r.marginal_kl, r.active_prototypes, r.wall_seconds
        );
    }
    write_file(&out_dir.join("summary.csv"), csv)?;
    Ok(rows)
}
