//! Trains with each supervision regime on the same data: labelled rows only,
//! Sinkhorn-Knopp self-labelling, self-distillation and full ground truth.
//!
//! cargo run --release --example supervision_ladder -- [epochs] [seeds]

use gcd_lab::dataset::{generate, GenConfig};
use gcd_lab::trainer::{train, Supervision, TrainConfig};
use gcd_lab::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().ok());
    let epochs = args.next().flatten().unwrap_or(100);
    let seeds = args.next().flatten().unwrap_or(2) as u64;
    println!("{:>12} {:>8} {:>8} {:>8}", "supervision", "all", "old", "new");
    for sup in Supervision::ALL {
        let (mut all, mut old, mut new) = (0.0, 0.0, 0.0);
        for seed in 0..seeds {
            let ds = generate(&GenConfig {
                seed,
                ..GenConfig::default()
            })?;
            let cfg = TrainConfig {
                supervision: sup,
                epochs,
                seed,
                ..TrainConfig::default()
            };
            let (_, log) = train(&cfg, &ds)?;
            let r = log.last().expect("at least one epoch");
            all += r.acc_all / seeds as f64;
            old += r.acc_old / seeds as f64;
            new += r.acc_new / seeds as f64;
        }
        println!("{:>12} {all:>8.3} {old:>8.3} {new:>8.3}", sup.as_str());
    }
    Ok(())
}
