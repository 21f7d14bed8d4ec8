//! Optimisation of the three model variants: artist classification, tag
//! prediction and the Siamese max-margin model.
//!
//! Every source of randomness derives from the run seed, so two runs with the
//! same catalog and config produce identical weights and loss histories.

mod config;
mod history;
mod objective;
mod trainer;

pub use config::{PlateauConfig, SiameseDropout, TagLoss, TrainConfig, TrainMode};
pub use history::{plateau_step, EpochRecord, History, PlateauState, HISTORY_HEADER};
pub use objective::{
    argmax, basic_objective, basic_scores, siamese_columns, siamese_objective, triplet_losses,
    triplet_mask, Objective, Targets,
};
pub use trainer::{derive_seed, embed_windows, train, TrainOptions, TrainOutcome, LAST_GOOD_FILE};
