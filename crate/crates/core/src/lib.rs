//! Co-training semi-supervised object detection for densely packed scenes.
//!
//! Two complementary detector views (a precise localizer and a context-aware
//! detector) vet their candidate boxes through an ensemble of from-scratch
//! classifiers and hand confident boxes to each other as pseudo-labels.
//! Everything runs on seeded synthetic scenes so that each stage can be
//! checked against hidden ground truth.
//!
//! Module map:
//!
//! - [`geom`]: boxes, IoU, non-maximum suppression.
//! - [`metrics`]: greedy matching, 101-point AP, mAP@[.50:.95], AR@k.
//! - [`dataset`]: annotation CSV, labeled/unlabeled selection and split,
//!   synthetic dense-scene generator.
//! - [`detector`]: detector abstraction and the two synthetic profiles.
//! - [`ensemble`]: gradient-boosted trees, random forest, kernel SVM, soft vote.
//! - [`cotrain`]: the pseudo-label exchange loop.
//! - [`tuner`]: the 20-gene hyperparameter vector, GA and SA optimizers.
//!
//! Data-parallel inner loops go through [`par`]; disabling the default
//! `parallel` feature swaps rayon for plain iterators with identical output.

pub mod cotrain;
pub mod dataset;
pub mod detector;
pub mod ensemble;
pub mod error;
pub mod geom;
pub mod interchange;
pub mod metrics;
pub mod par;
pub mod seed;
pub mod tuner;

pub use error::{Error, Result};
