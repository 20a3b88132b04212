//! Analytic gradients of the training objective against central finite
//! differences, across the trainer's toggles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gcd_lab::dataset::{augment, ViewPair};
use gcd_lab::losses::{total_objective, BatchTargets, ObjectiveConfig, TrainingMode};
use gcd_lab::model::{ClassifierInput, Model, ModelConfig};
use gcd_lab::numgraph::{finite_diff_grad, max_relative_error, Gradients};
use gcd_lab::pseudolabel::{batch_targets, SupervisionMode};
use gcd_lab::Matrix;

struct Instance {
    model: Model,
    views: ViewPair,
    labels: Vec<usize>,
    labelled: Vec<bool>,
}

/// A random instance whose projector output has no all-zero row, since a
/// tiny ReLU layer can switch off completely for some inputs.
fn instance(seed: u64, input: ClassifierInput) -> Instance {
    (0..)
        .map(|attempt| draw(seed + 1000 * attempt, input))
        .find(|inst| {
            [&inst.views.view_a, &inst.views.view_b].iter().all(|v| {
                let h = inst.model.backbone_forward(v).unwrap();
                inst.model.projector_forward(&h).is_ok()
            })
        })
        .unwrap()
}

fn draw(seed: u64, input: ClassifierInput) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d, k) = (8, 5, 4);
    let model = Model::init(&ModelConfig {
        feature_dim: d,
        hidden_dim: 12,
        embed_dim: 8,
        projection_dim: 3,
        num_prototypes: k,
        classifier_input: input,
        seed,
    })
    .unwrap();
    let x = Matrix::randn(n, d, 1.0, &mut rng);
    let views = augment(&x, 0.4, 0.2, seed).unwrap();
    let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut labelled: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    labels[1] = labels[0];
    labelled[0] = true;
    labelled[1] = true;
    labelled[n - 1] = false;
    Instance {
        model,
        views,
        labels,
        labelled,
    }
}

fn targets(inst: &Instance, mode: SupervisionMode) -> BatchTargets {
    batch_targets(&mode, &inst.model, &inst.views, &inst.labels, &inst.labelled, 0.1).unwrap()
}

/// Analytic and finite-difference gradients of the total objective.
fn both(inst: &Instance, t: &BatchTargets, cfg: &ObjectiveConfig) -> (Gradients, Gradients) {
    let (_, mut og) = total_objective(&inst.model, &inst.views, t, cfg).unwrap();
    let analytic = og.graph.backward(og.total).unwrap();
    let leaves = og.leaves.clone();
    let fd = finite_diff_grad(|v| og.frozen_total(v), &leaves, 1e-5).unwrap();
    (analytic, fd)
}

#[test]
fn twenty_configurations_match_finite_differences() {
    let modes = [
        SupervisionMode::SelfDistil { tau_t: 0.05 },
        SupervisionMode::SelfLabel {
            iterations: 3,
            reg: 0.05,
        },
        SupervisionMode::Minimal,
        SupervisionMode::Oracle,
    ];
    for i in 0..20u64 {
        let input = if i % 2 == 0 {
            ClassifierInput::PostBackbone
        } else {
            ClassifierInput::PostProjector
        };
        let inst = instance(100 + i, input);
        let cfg = ObjectiveConfig {
            epsilon: [0.0, 1.0, 2.0][i as usize % 3],
            exclude_positive: i % 5 == 0,
            training: if i % 4 == 3 {
                TrainingMode::Decoupled
            } else {
                TrainingMode::Joint
            },
            ..ObjectiveConfig::default()
        };
        let t = targets(&inst, modes[i as usize % 4]);
        let (a, fd) = both(&inst, &t, &cfg);
        let err = max_relative_error(&a, &fd);
        assert!(err < 1e-5, "configuration {i}: relative error {err:e}");
    }
}

#[test]
fn decoupled_classification_leaves_backbone_untouched() {
    let inst = instance(7, ClassifierInput::PostBackbone);
    let t = targets(&inst, SupervisionMode::SelfDistil { tau_t: 0.05 });
    // decoupled: the backbone sees only the representation terms
    let cfg_for = |training| ObjectiveConfig {
        training,
        ..ObjectiveConfig::default()
    };
    let (_, mut joint) = total_objective(&inst.model, &inst.views, &t, &cfg_for(TrainingMode::Joint)).unwrap();
    let (_, mut dec) = total_objective(&inst.model, &inst.views, &t, &cfg_for(TrainingMode::Decoupled)).unwrap();
    let rep_joint = {
        let g = &mut joint.graph;
        let rep = g.weighted_sum(&[(0.65, joint.rep_unsup), (0.35, joint.rep_sup)]).unwrap();
        g.forward(&joint.leaves, rep).unwrap();
        g.backward(rep).unwrap()
    };
    let full_dec = dec.graph.backward(dec.total).unwrap();
    for id in dec.nodes.backbone_leaves() {
        let diff = full_dec[&id].zip_map(&rep_joint[&id], |a, b| a - b).max_abs();
        assert!(diff < 1e-12, "backbone leaf {id:?} got classification gradient {diff:e}");
    }
    let proto = dec.nodes.prototypes;
    assert!(full_dec[&proto].max_abs() > 0.0);
}

#[test]
fn joint_gradient_is_sum_of_unsupervised_terms() {
    let inst = instance(11, ClassifierInput::PostBackbone);
    let unlabelled = vec![false; inst.labels.len()];
    let t = batch_targets(
        &SupervisionMode::SelfDistil { tau_t: 0.05 },
        &inst.model,
        &inst.views,
        &inst.labels,
        &unlabelled,
        0.1,
    )
    .unwrap();
    let cfg = ObjectiveConfig {
        lambda: 0.0,
        epsilon: 0.0,
        ..ObjectiveConfig::default()
    };
    let (_, mut og) = total_objective(&inst.model, &inst.views, &t, &cfg).unwrap();
    let total = og.graph.backward(og.total).unwrap();
    let rep = og.graph.backward(og.rep_unsup).unwrap();
    let ce = og.graph.backward(og.cls_unsup_ce).unwrap();
    for (id, g) in &total {
        let sum = rep[id].zip_map(&ce[id], |a, b| a + b);
        assert!(g.zip_map(&sum, |a, b| a - b).max_abs() < 1e-12);
    }
    let leaves = og.leaves.clone();
    let fd = finite_diff_grad(|v| og.frozen_total(v), &leaves, 1e-5).unwrap();
    assert!(max_relative_error(&total, &fd) < 1e-5);
}
