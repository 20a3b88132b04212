//! Builds the full training objective for one small batch and compares its
//! backward pass with central finite differences, leaf by leaf.
//!
//! cargo run --release --example gradient_check

use gcd_lab::dataset::augment;
use gcd_lab::losses::{total_objective, ObjectiveConfig};
use gcd_lab::model::{Model, ModelConfig};
use gcd_lab::numgraph::{finite_diff_grad, max_relative_error, Gradients};
use gcd_lab::pseudolabel::{batch_targets, SupervisionMode};
use gcd_lab::{Matrix, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::init(&ModelConfig {
        feature_dim: 5,
        hidden_dim: 8,
        embed_dim: 6,
        projection_dim: 4,
        num_prototypes: 4,
        ..ModelConfig::default()
    })?;
    let x = Matrix::randn(8, 5, 1.0, &mut rng);
    let views = augment(&x, 0.3, 0.2, 1)?;
    let labels = [0, 0, 1, 2, 3, 1, 2, 3];
    let labelled = [true, true, true, false, false, false, true, false];

    let cfg = ObjectiveConfig::default();
    let mode = SupervisionMode::SelfDistil { tau_t: 0.07 };
    let targets = batch_targets(&mode, &model, &views, &labels, &labelled, cfg.tau_s)?;
    let (losses, mut og) = total_objective(&model, &views, &targets, &cfg)?;
    println!("loss terms: {losses:#?}");

    let analytic = og.graph.backward(og.total)?;
    let leaves = og.leaves.clone();
    // the teacher branch is held fixed, matching the stop-gradient
    let numeric = finite_diff_grad(|v| og.frozen_total(v), &leaves, 1e-5)?;

    for id in og.nodes.all() {
        let one = |g: &Gradients| -> Gradients { [(id, g[&id].clone())].into_iter().collect() };
        println!(
            "leaf {:>3} {:>2}x{:<2}  |grad| {:.3e}  relative error {:.2e}",
            id.index(),
            leaves[&id].rows(),
            leaves[&id].cols(),
            analytic[&id].frobenius_norm(),
            max_relative_error(&one(&analytic), &one(&numeric))
        );
    }
    println!("worst: {:.2e}", max_relative_error(&analytic, &numeric));
    Ok(())
}
