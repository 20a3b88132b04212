//! Trains the parametric classifier on the default synthetic problem and
//! compares it with semi-supervised k-means on the same learned features.
//!
//! cargo run --release --example train_and_compare -- [epochs]

use gcd_lab::clustering::{ss_kmeans, SsKmeansOptions};
use gcd_lab::dataset::{generate, GenConfig};
use gcd_lab::evaluation::{evaluate, EvalOptions};
use gcd_lab::trainer::{evaluate_model, train_with, TrainConfig};
use gcd_lab::Result;

fn main() -> Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    let ds = generate(&GenConfig::default())?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let (model, log) = train_with(&cfg, &ds, |r| {
        if r.epoch % 10 == 0 {
            println!(
                "epoch {:3}  lr {:.4}  tau_t {:.4}  loss {:+.4}  all {:.3}  old {:.3}  new {:.3}  active {}",
                r.epoch, r.lr, r.tau_t, r.losses.total, r.acc_all, r.acc_old, r.acc_new, r.active_prototypes
            );
        }
    })?;
    println!("{} epochs logged", log.records.len());

    let param = evaluate_model(&model, &ds, &EvalOptions::default())?;
    let h = model.backbone_forward(ds.features())?;
    let km = ss_kmeans(&ds, &h, ds.num_classes(), 0, &SsKmeansOptions::default())?;
    let idx = ds.unlabelled_indices();
    let truth: Vec<usize> = idx.iter().map(|&i| ds.labels()[i]).collect();
    let preds: Vec<usize> = idx.iter().map(|&i| km.assignments[i]).collect();
    let nonparam = evaluate(&truth, &preds, ds.num_classes(), ds.old_classes(), ds.num_classes(), &EvalOptions::default())?;
    for (name, r) in [("prototype argmax", &param), ("semi-supervised k-means", &nonparam)] {
        println!(
            "{name:>24}: all {:.3}  old {:.3}  new {:.3}",
            r.acc.acc_all, r.acc.acc_old, r.acc.acc_new
        );
    }
    Ok(())
}
