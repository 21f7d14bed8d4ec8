//! Catalogs, splits, batch samplers and the synthetic dataset generator.
//!
//! Sampling is reproducible from the seed alone: batch `i` draws from its own
//! generator stream, so its contents never depend on earlier batches.

mod catalog;
mod sampler;
mod split;
pub mod synth;

pub use catalog::{Catalog, Split, TrackRecord};
pub use sampler::{
    batch_rng, center_offset, draw_offset, sample_context_window, BasicSampler, SiameseSampler,
    TrackStore, TripletPlan, Window,
};
pub use split::{make_splits, SplitSpec};
pub use synth::{generate_synthetic_dataset, SynthOutcome, SynthSpec};
