//! Step-by-step toggles of the training recipe: classifier input location,
//! decoupled versus joint training, and the teacher temperature warm-up.
//!
//! cargo run --release --example ablation_toggles -- [epochs]

use gcd_lab::dataset::{generate, GenConfig};
use gcd_lab::losses::TrainingMode;
use gcd_lab::model::ClassifierInput;
use gcd_lab::trainer::{train, TrainConfig};
use gcd_lab::Result;

fn main() -> Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    let ds = generate(&GenConfig::default())?;
    let base = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let variants = [
        ("default", base.clone()),
        (
            "post-projector input",
            TrainConfig {
                classifier_input: ClassifierInput::PostProjector,
                ..base.clone()
            },
        ),
        (
            "decoupled",
            TrainConfig {
                training: TrainingMode::Decoupled,
                ..base.clone()
            },
        ),
        (
            "no teacher warm-up",
            TrainConfig {
                teacher_warmup: false,
                ..base.clone()
            },
        ),
    ];
    for (name, cfg) in variants {
        let (_, log) = train(&cfg, &ds)?;
        let r = log.last().expect("at least one epoch");
        println!(
            "{name:>22}: all {:.3} old {:.3} new {:.3} active {}",
            r.acc_all, r.acc_old, r.acc_new, r.active_prototypes
        );
    }
    Ok(())
}
