//! Acoustic anomaly detection for industrial wood planers.
//!
//! The pipeline turns 20 kHz mono recordings into log-scaled mel
//! spectrograms, trains reconstruction-based detectors on normal operating
//! sound, scores evaluation clips by reconstruction error and reports ROC
//! AUC and standardized partial AUC per anomaly type.
//!
//! * [`dataset`] loads WAV clips and the label manifest and splits training data.
//! * [`features`] computes the 401×80 log-mel input geometry and its on-disk cache.
//! * [`nn`] is a small tape-based reverse-mode autodiff with the layers, AdamW
//!   optimizer and warm-restart cosine schedule the detectors need.
//! * [`models`] builds the dense autoencoder, the plain convolutional
//!   autoencoder, the skip-connected autoencoder and its transformer variant,
//!   and trains them with early stopping.
//! * [`iforest`] is the isolation-forest baseline.
//! * [`eval`] computes ROC curves, AUC, pAUC and per-type reports.
//! * [`synthetic`] generates toy planer-like recordings for smoke tests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod iforest;
pub mod models;
pub mod nn;
pub mod synthetic;

pub use dataset::{AnomalyType, AudioClip, BoardType, ClipLabel, Manifest, Split};
pub use error::{Error, Result};
pub use eval::{EvalReport, ScoreRecord};
pub use features::{FeatureConfig, MelSpectrogram};
pub use iforest::{IsolationForest, IsolationForestConfig};
pub use models::{ArchConfig, Architecture, Model, ModelGraph};
pub use nn::{Tensor, TrainConfig, TrainHistory};
pub use synthetic::SyntheticConfig;
