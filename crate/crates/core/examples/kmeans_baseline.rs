//! Plain and semi-supervised k-means on raw inputs, with k-means++ seeding
//! and the per-iteration objective.
//!
//! cargo run --release --example kmeans_baseline

use gcd_lab::clustering::{kmeans, kmeanspp_init, ss_kmeans, SsKmeansOptions};
use gcd_lab::dataset::{generate, GenConfig};
use gcd_lab::evaluation::{evaluate, EvalOptions};
use gcd_lab::Result;

fn main() -> Result<()> {
    let ds = generate(&GenConfig {
        radius: 4.0,
        ..GenConfig::default()
    })?;
    let k = ds.num_classes();
    let idx = ds.unlabelled_indices();
    let truth: Vec<usize> = idx.iter().map(|&i| ds.labels()[i]).collect();
    let score = |assign: &[usize]| {
        let preds: Vec<usize> = idx.iter().map(|&i| assign[i]).collect();
        evaluate(&truth, &preds, k, ds.old_classes(), k, &EvalOptions::default())
    };

    let init = kmeanspp_init(ds.features(), k, 0)?;
    let plain = kmeans(ds.features(), &init, 100, 1e-8)?;
    let semi = ss_kmeans(
        &ds,
        ds.features(),
        k,
        0,
        &SsKmeansOptions {
            trace: true,
            ..SsKmeansOptions::default()
        },
    )?;
    for (name, res) in [("plain", &plain), ("semi-supervised", &semi)] {
        let r = score(&res.assignments)?;
        println!(
            "{name:>16}: {} iterations, objective {:.1}, all {:.3} old {:.3} new {:.3}",
            res.iterations_run, res.objective, r.acc.acc_all, r.acc.acc_old, r.acc.acc_new
        );
    }
    let hist: Vec<String> = semi.objective_history.iter().map(|o| format!("{o:.1}")).collect();
    println!("semi-supervised objective by iteration: {}", hist.join(" "));
    Ok(())
}
