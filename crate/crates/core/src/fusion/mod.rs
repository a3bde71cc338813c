//! Multi-label classifier heads and modality fusion.
//!
//! Every head is a small MLP with a sigmoid output layer trained with a
//! class-weighted binary cross-entropy. Two fusion strategies are provided:
//!
//! * early fusion: one head on the concatenated per-modality features;
//! * late fusion: a second-stage head on the concatenated per-modality
//!   probability vectors (`2N` inputs, `N` outputs).
//!
//! Predictions become label sets through per-class thresholds tuned on a
//! validation split.

mod mlp;
mod thresholds;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mlp::{predict_probs, sigmoid, weighted_bce_loss, Activation, Gradients, MlpModel, PROB_CLIP};
pub use thresholds::{
    apply_thresholds, optimize_global_threshold, optimize_thresholds, threshold_grid,
    ThresholdMode, ThresholdVector,
};
pub use train::{
    early_fuse_predict, early_fuse_train, gradient_check, late_fuse_predict, late_fuse_train,
    late_fusion_hidden_width, train_classifier,
};

/// Finite real-valued feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(FeatureVector(values))
    }

    pub fn concat(a: &FeatureVector, b: &FeatureVector) -> FeatureVector {
        FeatureVector(a.0.iter().chain(&b.0).copied().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Per-class probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        Ok(ProbVector(probs))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, j: usize) -> f64 {
        self.0[j]
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weighted: bool,
    pub hidden_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 40,
            batch_size: 32,
            seed: 0,
            weighted: true,
            hidden_width: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidParameter(
                "batch_size and hidden_width must be positive".into(),
            ));
        }
        Ok(())
    }
}
