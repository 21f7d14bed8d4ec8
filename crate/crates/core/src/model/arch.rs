use serde::{Deserialize, Serialize};

use crate::dsp::{CONTEXT_FRAMES, N_MELS};
use crate::error::{Error, Result};

/// Output layer attached to the 256-d embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Head {
    /// One logit per training artist, softmax cross-entropy.
    ArtistSoftmax { classes: usize },
    /// One logit per tag in the vocabulary.
    Tag { tags: usize },
    /// Siamese configuration: the embedding is the output.
    None,
}

impl Head {
    pub fn outputs(&self) -> Option<usize> {
        match *self {
            Head::ArtistSoftmax { classes } => Some(classes),
            Head::Tag { tags } => Some(tags),
            Head::None => None,
        }
    }
}

/// Conv/pool schedule of the backbone. Each block is
/// conv (same padding) -> batch norm -> ReLU -> max pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub n_mels: usize,
    pub context_frames: usize,
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub pools: Vec<usize>,
    pub embedding_dim: usize,
    pub head: Head,
}

impl Default for ArchSpec {
    /// 128 mel bins x 128 frames; the pools 4*4*2*2*2 collapse time to one
    /// frame of 256 channels.
    fn default() -> Self {
        Self {
            n_mels: N_MELS,
            context_frames: CONTEXT_FRAMES,
            channels: vec![128, 128, 256, 256, 256],
            kernels: vec![4; 5],
            pools: vec![4, 4, 2, 2, 2],
            embedding_dim: 256,
            head: Head::None,
        }
    }
}

impl ArchSpec {
    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadArchitecture(m));
        let blocks = self.channels.len();
        if blocks == 0 || self.kernels.len() != blocks || self.pools.len() != blocks {
            return bad(format!(
                "{} channels, {} kernels, {} pools",
                blocks,
                self.kernels.len(),
                self.pools.len()
            ));
        }
        if self.n_mels == 0 || self.channels.contains(&0) {
            return bad("zero-width layer".into());
        }
        if self.kernels.contains(&0) || self.pools.contains(&0) {
            return bad("kernel and pool widths must be at least 1".into());
        }
        let product: usize = self.pools.iter().product();
        if product != self.context_frames {
            return bad(format!(
                "pool product {product} does not collapse {} frames to 1",
                self.context_frames
            ));
        }
        if *self.channels.last().expect("nonempty") != self.embedding_dim {
            return bad(format!(
                "last conv has {} channels, embedding_dim is {}",
                self.channels.last().expect("nonempty"),
                self.embedding_dim
            ));
        }
        if self.head.outputs() == Some(0) {
            return bad("head with zero outputs".into());
        }
        Ok(())
    }

    /// `(in_channels, out_channels, kernel, pool)` per block.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let ins = std::iter::once(self.n_mels).chain(self.channels.iter().copied());
        ins.zip(&self.channels)
            .zip(&self.kernels)
            .zip(&self.pools)
            .map(|(((i, &o), &k), &p)| (i, o, k, p))
    }

    /// Trainable scalars: conv weights and biases, batch-norm scale and shift,
    /// head weights and biases. Running statistics are not counted.
    pub fn trainable_params(&self) -> usize {
        let backbone: usize = self
            .blocks()
            .map(|(i, o, k, _)| o * i * k + o + 2 * o)
            .sum();
        let head = self
            .head
            .outputs()
            .map_or(0, |n| n * self.embedding_dim + n);
        backbone + head
    }
}
