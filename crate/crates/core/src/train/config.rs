use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{BN_MOMENTUM, DEFAULT_MARGIN, DEFAULT_NEGATIVES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    BasicArtist,
    BasicTag,
    Siamese,
}

impl TrainMode {
    pub fn default_lr(self) -> f64 {
        match self {
            TrainMode::BasicArtist | TrainMode::BasicTag => 0.015,
            TrainMode::Siamese => 0.1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::BasicArtist => "basic_artist",
            TrainMode::BasicTag => "basic_tag",
            TrainMode::Siamese => "siamese",
        }
    }
}

/// Output loss of the tag model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagLoss {
    /// Independent sigmoids, mean binary cross-entropy over the vocabulary.
    #[default]
    MultiLabel,
    /// Softmax against the uniform distribution over the track's tags.
    Softmax,
}

/// How Siamese training draws embedding dropout masks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiameseDropout {
    /// One mask per triplet, shared by its anchor, positive and negatives,
    /// so all relevance scores of a triplet live in the same subspace.
    #[default]
    PerTriplet,
    /// An independent mask for every branch. Identical inputs then score a
    /// cosine near `1 - p`, which caps what the margin can reach.
    PerBranch,
}

/// Reduce-on-plateau policy, applied to validation loss once per epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Absolute improvement that counts as progress.
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.2,
            patience: 3,
            min_lr: 1e-5,
            min_delta: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// `None` selects the mode default (0.015 basic, 0.1 Siamese).
    pub initial_lr: Option<f64>,
    pub momentum: f64,
    pub decay: f64,
    pub dropout: f64,
    pub siamese_dropout: SiameseDropout,
    /// Weight kept by the batch-norm running statistics at each step.
    pub bn_momentum: f64,
    pub margin: f64,
    pub n_neg: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// `None` means `ceil(train tracks / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    pub plateau: PlateauConfig,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub tag_loss: TagLoss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_mode(TrainMode::BasicArtist)
    }
}

impl TrainConfig {
    pub fn for_mode(mode: TrainMode) -> Self {
        Self {
            mode,
            initial_lr: None,
            momentum: 0.9,
            decay: 1e-6,
            dropout: 0.5,
            siamese_dropout: SiameseDropout::default(),
            bn_momentum: BN_MOMENTUM,
            margin: DEFAULT_MARGIN,
            n_neg: DEFAULT_NEGATIVES,
            batch_size: 64,
            max_epochs: 50,
            steps_per_epoch: None,
            plateau: PlateauConfig::default(),
            early_stop_patience: 10,
            seed: 0,
            tag_loss: TagLoss::default(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.initial_lr.unwrap_or(self.mode.default_lr())
    }

    /// The same config with the learning rate made explicit.
    pub fn resolved(&self) -> Self {
        Self {
            initial_lr: Some(self.lr()),
            ..self.clone()
        }
    }

    pub fn steps_for(&self, train_tracks: usize) -> usize {
        self.steps_per_epoch
            .unwrap_or_else(|| train_tracks.div_ceil(self.batch_size))
            .max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let lr = self.lr();
        if !(lr.is_finite() && lr >= 0.0) {
            return bad(format!("initial_lr {lr}"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.decay.is_finite() && self.decay >= 0.0) {
            return bad(format!("decay {}", self.decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad(format!("bn_momentum {} outside [0, 1)", self.bn_momentum));
        }
        if !(self.margin > 0.0 && self.margin < 2.0) {
            return bad(format!("margin {} outside (0, 2)", self.margin));
        }
        if self.n_neg == 0 {
            return bad("n_neg must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 for batch norm".into());
        }
        if self.max_epochs == 0 || self.steps_per_epoch == Some(0) {
            return bad("max_epochs and steps_per_epoch must be positive".into());
        }
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) || !(p.min_lr >= 0.0) || !(p.min_delta >= 0.0) {
            return bad(format!("plateau {p:?}"));
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be positive".into());
        }
        Ok(())
    }
}
