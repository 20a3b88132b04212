//! Trains with more or fewer prototypes than classes and counts how many
//! prototypes end up predicted, for a weak and a strong entropy weight.
//!
//! cargo run --release --example unknown_k -- [epochs]

use gcd_lab::dataset::{generate, GenConfig};
use gcd_lab::trainer::{train, TrainConfig};
use gcd_lab::Result;

fn main() -> Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let ds = generate(&GenConfig::default())?;
    let k_u = ds.num_classes();
    println!("{:>5} {:>4} {:>8} {:>8} {:>7}", "eps", "K", "acc_all", "acc_new", "active");
    for epsilon in [0.5, 2.0] {
        for k in [k_u / 2, k_u, 2 * k_u, 4 * k_u] {
            let cfg = TrainConfig {
                epsilon,
                epochs,
                num_prototypes: Some(k),
                ..TrainConfig::default()
            };
            let (_, log) = train(&cfg, &ds)?;
            let r = log.last().expect("at least one epoch");
            println!(
                "{epsilon:>5} {k:>4} {:>8.3} {:>8.3} {:>7}",
                r.acc_all, r.acc_new, r.active_prototypes
            );
        }
    }
    Ok(())
}
