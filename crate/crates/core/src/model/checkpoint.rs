//! Self-describing binary checkpoint.
//!
//! ```text
//! "AEMB" | format_version: u32 LE | header_len: u32 LE | header (JSON)
//!        | parameter blob: f32 LE
//! ```
//!
//! Blob order, per block: conv weight `[out][in][k]`, conv bias, bn gamma,
//! bn beta, bn running mean, bn running var; then head weight `[out][in]`
//! and head bias when a head exists. The header carries the SHA-256 of the
//! blob bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ArchSpec, ArtistNet, Block};
use crate::dsp::{DspConventions, NormStats};
use crate::error::{Error, Result};
use crate::nncore::{BatchNorm1d, Conv1d, Dense, MaxPool1d};

pub const MAGIC: &[u8; 4] = b"AEMB";
pub const FORMAT_VERSION: u32 = 1;

/// Provenance of the stored weights.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epoch: usize,
    pub mode: String,
    /// SHA-256 of the history CSV at the time of saving, seconds excluded.
    pub loss_history_digest: String,
    /// Output names of the head, in logit order.
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    arch: ArchSpec,
    norm_stats: NormStats,
    dsp: DspConventions,
    dropout: f64,
    metadata: TrainingMetadata,
    /// Trainable parameters implied by `arch`.
    param_count: usize,
    /// Floats in the blob, running statistics included.
    blob_floats: usize,
    param_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: ArtistNet<f32>,
    pub norm_stats: NormStats,
    pub dsp: DspConventions,
    pub metadata: TrainingMetadata,
}

fn blob_floats(spec: &ArchSpec) -> usize {
    spec.trainable_params() + 2 * spec.channels.iter().sum::<usize>()
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

impl Checkpoint {
    pub fn new(net: ArtistNet<f32>, norm_stats: NormStats, metadata: TrainingMetadata) -> Self {
        Self {
            net,
            norm_stats,
            dsp: DspConventions::default(),
            metadata,
        }
    }

    fn blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 * blob_floats(self.net.spec()));
        let mut put = |v: &[f32]| {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        for b in &self.net.blocks {
            put(&b.conv.weight);
            put(&b.conv.bias);
            put(&b.bn.gamma);
            put(&b.bn.beta);
            put(&b.bn.running_mean);
            put(&b.bn.running_var);
        }
        if let Some(h) = &self.net.head {
            put(&h.weight);
            put(&h.bias);
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let blob = self.blob();
        let spec = self.net.spec().clone();
        let header = Header {
            format_version: FORMAT_VERSION,
            param_count: spec.trainable_params(),
            blob_floats: blob.len() / 4,
            arch: spec,
            norm_stats: self.norm_stats,
            dsp: self.dsp.clone(),
            dropout: self.net.dropout().rate(),
            metadata: self.metadata.clone(),
            param_digest: hex::encode(Sha256::digest(&blob)),
        };
        let json = serde_json::to_vec(&header)?;
        let header_len =
            u32::try_from(json.len()).map_err(|_| Error::Shape("header too large".into()))?;
        let mut out = Vec::with_capacity(12 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(corrupt(format!("{} bytes is shorter than the preamble", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u32_at(8) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| corrupt(format!("unreadable header: {e}")))?;
        if header.format_version != version {
            return Err(corrupt("header version disagrees with preamble"));
        }
        if header.dsp != DspConventions::default() {
            return Err(corrupt("features were computed under different DSP conventions"));
        }
        let norm_stats = NormStats::new(header.norm_stats.mean, header.norm_stats.std)?;
        let spec = header.arch;
        spec.validate()?;
        if spec.trainable_params() != header.param_count {
            return Err(Error::ShapeMismatch(format!(
                "architecture implies {} parameters, header declares {}",
                spec.trainable_params(),
                header.param_count
            )));
        }
        let expected_floats = blob_floats(&spec);
        if header.blob_floats != expected_floats {
            return Err(Error::ShapeMismatch(format!(
                "architecture implies {expected_floats} stored floats, header declares {}",
                header.blob_floats
            )));
        }
        let blob = &bytes[header_end..];
        if blob.len() != 4 * expected_floats {
            return Err(corrupt(format!(
                "parameter blob has {} bytes, expected {}",
                blob.len(),
                4 * expected_floats
            )));
        }
        if hex::encode(Sha256::digest(blob)) != header.param_digest {
            return Err(corrupt("parameter digest mismatch"));
        }
        let floats: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if floats.iter().any(|v| !v.is_finite()) {
            return Err(corrupt("non-finite parameter"));
        }

        let mut rest = floats.as_slice();
        let mut take = |n: usize| {
            let (a, b) = rest.split_at(n);
            rest = b;
            a.to_vec()
        };
        let mut blocks = Vec::with_capacity(spec.channels.len());
        for (i, o, k, p) in spec.blocks() {
            let conv = Conv1d {
                in_channels: i,
                out_channels: o,
                kernel: k,
                weight: take(o * i * k),
                bias: take(o),
            };
            let mut bn = BatchNorm1d::new(o);
            bn.gamma = take(o);
            bn.beta = take(o);
            bn.running_mean = take(o);
            bn.running_var = take(o);
            if bn.running_var.iter().any(|&v| v < 0.0) {
                return Err(corrupt("negative running variance"));
            }
            blocks.push(Block {
                conv,
                bn,
                pool: MaxPool1d::new(p)?,
            });
        }
        let head = spec.head.outputs().map(|n| {
            let mut d = Dense::new(spec.embedding_dim, n);
            d.weight = take(n * spec.embedding_dim);
            d.bias = take(n);
            d
        });
        let mut net = ArtistNet::from_parts(spec, blocks, head)?;
        net.set_dropout(header.dropout)
            .map_err(|_| corrupt(format!("dropout rate {}", header.dropout)))?;
        Ok(Self {
            net,
            norm_stats,
            dsp: header.dsp,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}
