//! The convolutional artist network and its checkpoint format.
//!
//! Input is a standardized `128 x 128` log-mel window; five
//! conv/batch-norm/ReLU/max-pool blocks collapse time to a single frame whose
//! channels form the embedding. A dense head (artist softmax or tag logits)
//! is optional; the Siamese configuration has none.

mod arch;
mod checkpoint;
mod net;

pub use arch::{ArchSpec, Head};
pub use checkpoint::{Checkpoint, TrainingMetadata, FORMAT_VERSION, MAGIC};
pub use net::{
    columns, from_columns, ArtistNet, BackboneGrads, Block, EmbedCache, HeadCache,
    DEFAULT_DROPOUT,
};

/// Trainable scalars in the default backbone (no head).
pub const DEFAULT_BACKBONE_PARAMS: usize = 789_504;
