//! Sweeps the mean-entropy weight and reports how far the prediction
//! marginal sits from the true class marginal, plus the error taxonomy.
//!
//! cargo run --release --example entropy_sweep -- [epochs]

use gcd_lab::dataset::{generate, GenConfig};
use gcd_lab::trainer::{train, TrainConfig};
use gcd_lab::Result;

fn main() -> Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let ds = generate(&GenConfig::default())?;
    println!(
        "{:>5} {:>7} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>6}",
        "eps", "acc_old", "acc_new", "kl", "true_old", "false_new", "false_old", "true_new", "active"
    );
    for epsilon in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let cfg = TrainConfig {
            epsilon,
            epochs,
            ..TrainConfig::default()
        };
        let (_, log) = train(&cfg, &ds)?;
        let r = log.last().expect("at least one epoch");
        let t = &r.taxonomy;
        println!(
            "{epsilon:>5} {:>7.3} {:>7.3} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>6}",
            r.acc_old, r.acc_new, r.marginal_kl, t.true_old, t.false_new, t.false_old, t.true_new, r.active_prototypes
        );
    }
    Ok(())
}
