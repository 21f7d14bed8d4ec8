use std::path::PathBuf;

use artistembed::data::SplitSpec;
use artistembed::dsp::{CONTEXT_FRAMES, CONTEXT_SAMPLES, N_MELS, SAMPLE_RATE};
use artistembed::eval::EvalOptions;
use artistembed::model::{ArchSpec, Head};
use artistembed::train::{PlateauConfig, SiameseDropout, TagLoss, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Output layer named in a run config. Must agree with the training mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    ArtistSoftmax,
    Tag,
    None,
}

impl HeadKind {
    pub fn for_mode(mode: TrainMode) -> Self {
        match mode {
            TrainMode::BasicArtist => HeadKind::ArtistSoftmax,
            TrainMode::BasicTag => HeadKind::Tag,
            TrainMode::Siamese => HeadKind::None,
        }
    }
}

/// Backbone layout; the head is sized from the training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Backbone {
    pub n_mels: usize,
    pub context_frames: usize,
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub pools: Vec<usize>,
    pub embedding_dim: usize,
}

impl Default for Backbone {
    fn default() -> Self {
        let a = ArchSpec::default();
        Self {
            n_mels: a.n_mels,
            context_frames: a.context_frames,
            channels: a.channels,
            kernels: a.kernels,
            pools: a.pools,
            embedding_dim: a.embedding_dim,
        }
    }
}

impl Backbone {
    pub fn arch(&self) -> ArchSpec {
        ArchSpec {
            n_mels: self.n_mels,
            context_frames: self.context_frames,
            channels: self.channels.clone(),
            kernels: self.kernels.clone(),
            pools: self.pools.clone(),
            embedding_dim: self.embedding_dim,
            head: Head::None,
        }
    }
}

/// Everything a run depends on, as one JSON document. Missing keys take
/// their defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub catalog: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub mode: TrainMode,
    /// `None` takes the head implied by `mode`.
    pub head: Option<HeadKind>,
    /// `None` takes the mode default: 0.015 basic, 0.1 Siamese.
    pub lr: Option<f64>,
    pub momentum: f64,
    pub decay: f64,
    pub dropout: f64,
    pub siamese_dropout: SiameseDropout,
    pub bn_momentum: f64,
    pub margin: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub steps_per_epoch: Option<usize>,
    pub plateau: PlateauConfig,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub tag_loss: TagLoss,
    pub sample_rate: u32,
    pub window_seconds: f64,
    pub arch: Backbone,
    /// Applied only to catalogs whose tracks carry no split.
    pub split: SplitSpec,
    pub split_seed: u64,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            catalog: None,
            out_dir: None,
            checkpoint: None,
            mode: t.mode,
            head: None,
            lr: t.initial_lr,
            momentum: t.momentum,
            decay: t.decay,
            dropout: t.dropout,
            siamese_dropout: t.siamese_dropout,
            bn_momentum: t.bn_momentum,
            margin: t.margin,
            negatives: t.n_neg,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            steps_per_epoch: t.steps_per_epoch,
            plateau: t.plateau,
            early_stop_patience: t.early_stop_patience,
            seed: t.seed,
            tag_loss: t.tag_loss,
            sample_rate: SAMPLE_RATE,
            window_seconds: CONTEXT_SAMPLES as f64 / f64::from(SAMPLE_RATE),
            arch: Backbone::default(),
            split: SplitSpec::default(),
            split_seed: 0,
            eval: EvalOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("run config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            initial_lr: self.lr,
            momentum: self.momentum,
            decay: self.decay,
            dropout: self.dropout,
            siamese_dropout: self.siamese_dropout,
            bn_momentum: self.bn_momentum,
            margin: self.margin,
            n_neg: self.negatives,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            steps_per_epoch: self.steps_per_epoch,
            plateau: self.plateau,
            early_stop_patience: self.early_stop_patience,
            seed: self.seed,
            tag_loss: self.tag_loss,
        }
    }

    /// Mode-dependent defaults made explicit, so the echo replays exactly.
    pub fn resolved(&self) -> Self {
        Self {
            lr: Some(self.train_config().lr()),
            head: Some(self.head.unwrap_or(HeadKind::for_mode(self.mode))),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if let Some(head) = self.head {
            let want = HeadKind::for_mode(self.mode);
            if head != want {
                return usage(format!(
                    "head {head:?} conflicts with mode {}: that mode trains head {want:?}",
                    self.mode.as_str()
                ));
            }
        }
        if self.sample_rate != SAMPLE_RATE {
            return usage(format!("sample_rate {} (only {SAMPLE_RATE} is supported)", self.sample_rate));
        }
        let window = CONTEXT_SAMPLES as f64 / f64::from(SAMPLE_RATE);
        if self.window_seconds != window {
            return usage(format!("window_seconds {} (only {window} is supported)", self.window_seconds));
        }
        if (self.arch.n_mels, self.arch.context_frames) != (N_MELS, CONTEXT_FRAMES) {
            return usage(format!(
                "input {}x{} (features are {N_MELS} mels x {CONTEXT_FRAMES} frames)",
                self.arch.n_mels, self.arch.context_frames
            ));
        }
        self.arch.arch().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.train_config().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.split.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.eval.k == 0 {
            return usage("eval.k must be at least 1".into());
        }
        Ok(())
    }
}
