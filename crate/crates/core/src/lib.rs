//! Generalized category discovery on desk-scale synthetic data.
//!
//! A partially labelled dataset contains "old" classes (some samples labelled)
//! and "new" classes (never labelled). The library trains an MLP backbone with
//! two-view contrastive learning and a cosine prototype classifier supervised
//! by ground truth on labelled rows and by sharpened predictions of the other
//! view elsewhere, regularized by the entropy of the batch-mean prediction.
//! It also provides the semi-supervised k-means baseline and the
//! Hungarian-matched accuracy protocol with its diagnostics.
//!
//! Module map:
//!
//! - [`numgraph`]: dense-matrix reverse-mode graph and finite-difference oracle
//! - [`dataset`]: synthetic problems, augmentation, file formats
//! - [`model`]: backbone, projector, prototypes, checkpoints
//! - [`losses`]: objective terms and their combination
//! - [`pseudolabel`]: supervision regimes including Sinkhorn-Knopp
//! - [`trainer`]: schedules, SGD loop, per-epoch metrics
//! - [`clustering`]: k-means++, Lloyd, semi-supervised k-means
//! - [`evaluation`]: accuracy, error taxonomy, histograms
//! - [`experiment`]: key=value configs and the command implementations

pub mod clustering;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod numgraph;
pub mod pseudolabel;
pub mod trainer;

pub use error::{GcdError, Result};
pub use matrix::Matrix;
