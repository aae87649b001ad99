use serde::{Deserialize, Serialize};

use crate::disentangle::{GaussianBlur, Upsample};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, TripletTerms};

/// Where training masks come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskOrigin {
    /// Class activation maps of the prompted model, recomputed every epoch.
    Gradcam,
    /// Ground-truth scene masks.
    Oracle,
}

/// How a mask splits the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    Hard,
    Blur,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub epochs: usize,
    pub mask_source: MaskOrigin,
    pub mask_strategy: MaskStrategy,
    pub blur: GaussianBlur,
    pub weights: LossWeights,
    pub triplet_terms: TripletTerms,
    /// Activation-map threshold.
    pub beta: f64,
    pub upsample: Upsample,
    /// Fraction of foreground cells erased from every training mask.
    pub erase_rate: f64,
    /// Cells per side of the erase grid.
    pub erase_grid: usize,
    /// Size of the background space.
    pub bg_classes: usize,
    /// Reassign background pseudo-labels at every epoch instead of once.
    pub refresh_pseudo_labels: bool,
    /// Train and score with per-class logistic losses over label sets.
    pub multi_label: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0035,
            batch_size: 4,
            momentum: 0.0,
            epochs: 30,
            mask_source: MaskOrigin::Gradcam,
            mask_strategy: MaskStrategy::Hard,
            blur: GaussianBlur::default(),
            weights: LossWeights::few_shot(),
            triplet_terms: TripletTerms::Both,
            beta: 0.5,
            upsample: Upsample::Bilinear,
            erase_rate: 0.0,
            erase_grid: 8,
            bg_classes: 25,
            refresh_pseudo_labels: false,
            multi_label: false,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "learning_rate, batch_size and epochs must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must be in [0, 1], got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.erase_rate) {
            return Err(Error::Config(format!("erase_rate must be in [0, 1], got {}", self.erase_rate)));
        }
        if self.blur.kernel.0 % 2 == 0 || self.blur.kernel.1 % 2 == 0 {
            return Err(Error::Config("blur kernel sizes must be odd".into()));
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))
    }
}
