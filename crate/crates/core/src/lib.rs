//! Interpretable embeddings of post-prandial glucose responses (PPGRs).
//!
//! A hybrid variational autoencoder pairs a recurrent encoder with a
//! Bergman minimal-model decoder, so that every latent dimension is an input
//! of the glucose-insulin ODE: meal-appearance timescale, basal glucose,
//! glucose effectiveness, insulin action and the effective carbohydrate
//! appearance rate. Baseline embeddings (black-box VAE, time-contrastive
//! learning, per-record mechanistic fits, expert CGM features, raw traces)
//! and the clustering evaluation used to compare them live alongside.

pub mod baselines;
pub mod config;
pub mod datamodel;
pub mod error;
pub mod evalcluster;
pub mod features;
pub mod hybridvae;
pub mod mechsim;
pub mod nn;
pub mod report;
pub mod stats;
pub mod transforms;

pub use error::{Error, Result};

/// Number of 5-minute steps in one PPGR window.
pub const SEQ_LEN: usize = 60;
/// Index of the logged meal that anchors every window.
pub const MEAL_INDEX: usize = 12;
/// Minutes between CGM samples.
pub const DT_OBS: f64 = 5.0;
