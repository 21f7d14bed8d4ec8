use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArchSpec, Head};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nncore::{
    relu, relu_backward, BatchNorm1d, BatchNormCache, Conv1d, Conv1dCache, Dense, DenseCache,
    Dropout, MaxPool1d, MaxPoolCache, Mode, Real, Tensor,
};

/// Dropout rate between embedding and head during training.
pub const DEFAULT_DROPOUT: f64 = 0.5;

/// conv -> batch norm -> ReLU -> max pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<F> {
    pub conv: Conv1d<F>,
    pub bn: BatchNorm1d<F>,
    pub pool: MaxPool1d,
}

/// The convolutional backbone plus an optional output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtistNet<F> {
    spec: ArchSpec,
    pub blocks: Vec<Block<F>>,
    pub head: Option<Dense<F>>,
    dropout: Dropout,
}

struct BlockCache<F> {
    conv: Conv1dCache<F>,
    bn: BatchNormCache<F>,
    /// Batch-norm output, i.e. the ReLU input.
    pre: Tensor<F>,
    pool: MaxPoolCache,
    pool_width: usize,
}

/// Everything the backward pass needs from one batched forward pass.
pub struct EmbedCache<F> {
    blocks: Vec<BlockCache<F>>,
    batch: usize,
}

impl<F: Real> EmbedCache<F> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Smallest distance from a non-differentiable point: `|pre-ReLU value|`
    /// over all units, and the gap between the two largest entries of every
    /// pool window whose maximum is positive.
    pub fn min_kink_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for bc in &self.blocks {
            for &v in bc.pre.data() {
                best = best.min(v.f64().abs());
            }
            let t = bc.pre.shape()[2];
            for row in bc.pre.data().chunks(t) {
                for w in row.chunks_exact(bc.pool_width) {
                    let mut top = 0.0f64;
                    let mut second = 0.0f64;
                    for &v in w {
                        let v = v.f64().max(0.0);
                        if v > top {
                            second = top;
                            top = v;
                        } else if v > second {
                            second = v;
                        }
                    }
                    if top > 0.0 && w.len() > 1 {
                        best = best.min(top - second);
                    }
                }
            }
        }
        best
    }
}

/// Output of [`ArtistNet::backward_embedding`].
pub struct BackboneGrads<F> {
    /// Per block: conv weight, conv bias, bn gamma, bn beta.
    pub params: Vec<Vec<F>>,
    pub input: Option<Tensor<F>>,
}

pub struct HeadCache<F> {
    mask: Option<Vec<F>>,
    dense: DenseCache<F>,
}

impl<F: Real> ArtistNet<F> {
    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases,
    /// identity batch norm. The backbone is drawn before the head so the
    /// backbone weights of a given seed do not depend on the head.
    pub fn build(spec: ArchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |fan_in: usize, n: usize| -> Vec<F> {
            let limit = (6.0 / fan_in as f64).sqrt();
            (0..n)
                .map(|_| F::lit(rng.random_range(-limit..limit)))
                .collect()
        };
        let mut blocks = Vec::with_capacity(spec.channels.len());
        for (i, o, k, p) in spec.blocks() {
            let mut conv = Conv1d::new(i, o, k)?;
            conv.weight = he(i * k, conv.weight.len());
            blocks.push(Block {
                conv,
                bn: BatchNorm1d::new(o),
                pool: MaxPool1d::new(p)?,
            });
        }
        let head = spec.head.outputs().map(|n| {
            let mut d = Dense::new(spec.embedding_dim, n);
            d.weight = he(spec.embedding_dim, d.weight.len());
            d
        });
        Ok(Self {
            spec,
            blocks,
            head,
            dropout: Dropout::new(DEFAULT_DROPOUT)?,
        })
    }

    /// Assemble from explicit layers, checking every shape against `spec`.
    pub fn from_parts(
        spec: ArchSpec,
        blocks: Vec<Block<F>>,
        head: Option<Dense<F>>,
    ) -> Result<Self> {
        spec.validate()?;
        let mismatch = |m: String| Err(Error::ShapeMismatch(m));
        if blocks.len() != spec.channels.len() {
            return mismatch(format!("{} blocks for {} in spec", blocks.len(), spec.channels.len()));
        }
        for (idx, (blk, (i, o, k, p))) in blocks.iter().zip(spec.blocks()).enumerate() {
            let c = &blk.conv;
            let ok = c.in_channels == i
                && c.out_channels == o
                && c.kernel == k
                && c.weight.len() == o * i * k
                && c.bias.len() == o
                && blk.bn.channels() == o
                && blk.bn.beta.len() == o
                && blk.bn.running_mean.len() == o
                && blk.bn.running_var.len() == o
                && blk.pool.width() == p;
            if !ok {
                return mismatch(format!("block {idx} does not match the architecture"));
            }
        }
        match (&head, spec.head.outputs()) {
            (None, None) => {}
            (Some(d), Some(n))
                if d.in_features == spec.embedding_dim
                    && d.out_features == n
                    && d.weight.len() == n * spec.embedding_dim
                    && d.bias.len() == n => {}
            _ => return mismatch("head does not match the architecture".into()),
        }
        Ok(Self {
            spec,
            blocks,
            head,
            dropout: Dropout::new(DEFAULT_DROPOUT)?,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim
    }

    /// Number of head outputs, `None` for the Siamese configuration.
    pub fn head_size(&self) -> Option<usize> {
        self.head.as_ref().map(|d| d.out_features)
    }

    pub fn dropout(&self) -> Dropout {
        self.dropout
    }

    pub fn set_dropout(&mut self, rate: f64) -> Result<()> {
        self.dropout = Dropout::new(rate)?;
        Ok(())
    }

    /// Running-stat momentum of every batch-norm layer.
    pub fn set_bn_momentum(&mut self, momentum: f64) -> Result<()> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("bn_momentum {momentum} outside [0, 1)")));
        }
        for b in &mut self.blocks {
            b.bn.momentum = momentum;
        }
        Ok(())
    }

    /// Replace the head while keeping the backbone, e.g. to view a trained
    /// backbone as a pure embedder.
    pub fn with_head(mut self, head: Head, seed: u64) -> Result<Self> {
        let donor = Self::build(self.spec.clone().with_head(head), seed)?;
        self.spec = donor.spec;
        self.head = donor.head;
        Ok(self)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Trainable tensors in the canonical order: per block conv weight, conv
    /// bias, bn gamma, bn beta; then head weight, head bias.
    pub fn params(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        for b in &self.blocks {
            out.extend([
                b.conv.weight.as_slice(),
                &b.conv.bias,
                &b.bn.gamma,
                &b.bn.beta,
            ]);
        }
        if let Some(h) = &self.head {
            out.extend([h.weight.as_slice(), &h.bias]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv.weight);
            out.push(&mut b.conv.bias);
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
        }
        if let Some(h) = &mut self.head {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    /// All trainable values concatenated in canonical order.
    pub fn flat_params(&self) -> Vec<F> {
        self.params().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut rest = flat;
        for p in self.params_mut() {
            let (a, b) = rest.split_at(p.len());
            p.copy_from_slice(a);
            rest = b;
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> ArtistNet<G> {
        let cv = |v: &[F]| -> Vec<G> { v.iter().map(|x| G::lit(x.f64())).collect() };
        ArtistNet {
            spec: self.spec.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    conv: Conv1d {
                        in_channels: b.conv.in_channels,
                        out_channels: b.conv.out_channels,
                        kernel: b.conv.kernel,
                        weight: cv(&b.conv.weight),
                        bias: cv(&b.conv.bias),
                    },
                    bn: BatchNorm1d {
                        gamma: cv(&b.bn.gamma),
                        beta: cv(&b.bn.beta),
                        running_mean: cv(&b.bn.running_mean),
                        running_var: cv(&b.bn.running_var),
                        eps: b.bn.eps,
                        momentum: b.bn.momentum,
                    },
                    pool: b.pool,
                })
                .collect(),
            head: self.head.as_ref().map(|h| Dense {
                in_features: h.in_features,
                out_features: h.out_features,
                weight: cv(&h.weight),
                bias: cv(&h.bias),
            }),
            dropout: self.dropout,
        }
    }

    /// Stack standardized mels into a `[n_mels, batch, frames]` input.
    pub fn batch_input(&self, mels: &[&MelSpectrogram]) -> Result<Tensor<F>> {
        let (m, t) = (self.spec.n_mels, self.spec.context_frames);
        for mel in mels {
            if mel.n_mels() != m || mel.frames() != t {
                return Err(Error::Shape(format!(
                    "network input must be {m}x{t}, got {}x{}",
                    mel.n_mels(),
                    mel.frames()
                )));
            }
            if !mel.is_standardized() {
                return Err(Error::Shape("network input must be standardized".into()));
            }
        }
        let b = mels.len();
        let mut data = vec![F::zero(); m * b * t];
        for (bi, mel) in mels.iter().enumerate() {
            for r in 0..m {
                let dst = &mut data[(r * b + bi) * t..][..t];
                for (d, &v) in dst.iter_mut().zip(mel.values().row(r)) {
                    *d = F::lit(v);
                }
            }
        }
        Tensor::new(vec![m, b, t], data)
    }

    /// Batched embedding of a `[n_mels, batch, frames]` input; returns
    /// `[embedding_dim, batch]`.
    pub fn embed(&self, x: &Tensor<F>, mode: Mode) -> Result<(Tensor<F>, EmbedCache<F>)> {
        let (c, batch, t) = x.dims3()?;
        if c != self.spec.n_mels || t != self.spec.context_frames {
            return Err(Error::Shape(format!(
                "expected [{}, batch, {}], got {:?}",
                self.spec.n_mels,
                self.spec.context_frames,
                x.shape()
            )));
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = None::<Tensor<F>>;
        for blk in &self.blocks {
            let input = h.as_ref().unwrap_or(x);
            let (z, conv) = blk.conv.forward(input)?;
            let (pre, bn) = blk.bn.forward(&z, mode)?;
            let (pooled, pool) = blk.pool.forward(&relu(&pre))?;
            caches.push(BlockCache {
                conv,
                bn,
                pre,
                pool,
                pool_width: blk.pool.width(),
            });
            h = Some(pooled);
        }
        let out = h.expect("at least one block");
        let d = self.spec.embedding_dim;
        let emb = out.reshape(vec![d, batch])?;
        Ok((
            emb,
            EmbedCache {
                blocks: caches,
                batch,
            },
        ))
    }

    /// Fold the batch statistics of a train-mode pass into the running
    /// batch-norm estimates.
    pub fn commit_batch_stats(&mut self, cache: &EmbedCache<F>) {
        for (blk, bc) in self.blocks.iter_mut().zip(&cache.blocks) {
            blk.bn.update_running(&bc.bn);
        }
    }

    /// Backpropagate `d_emb` (`[embedding_dim, batch]`) through the backbone.
    pub fn backward_embedding(
        &self,
        cache: &EmbedCache<F>,
        d_emb: &Tensor<F>,
        want_input: bool,
    ) -> Result<BackboneGrads<F>> {
        let d = self.spec.embedding_dim;
        if d_emb.shape() != [d, cache.batch] {
            return Err(Error::Shape(format!(
                "embedding gradient {:?}, expected [{d}, {}]",
                d_emb.shape(),
                cache.batch
            )));
        }
        let mut g = d_emb.clone().reshape(vec![d, cache.batch, 1])?;
        let mut per_block = Vec::with_capacity(self.blocks.len());
        let mut input = None;
        for (idx, (blk, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let g_act = blk.pool.backward(&bc.pool, &g)?;
            let g_pre = relu_backward(&bc.pre, &g_act)?;
            let (g_z, dgamma, dbeta) = blk.bn.backward(&bc.bn, &g_pre)?;
            if idx > 0 || want_input {
                let (dx, dw, db) = blk.conv.backward(&bc.conv, &g_z)?;
                per_block.push([dw, db, dgamma, dbeta]);
                if idx == 0 {
                    input = Some(dx);
                } else {
                    g = dx;
                }
            } else {
                let (dw, db) = blk.conv.backward_params(&bc.conv, &g_z)?;
                per_block.push([dw, db, dgamma, dbeta]);
            }
        }
        per_block.reverse();
        Ok(BackboneGrads {
            params: per_block.into_iter().flatten().collect(),
            input,
        })
    }
}

impl<F: Real> ArtistNet<F> {
    /// Head logits `[outputs, batch]` from embeddings `[embedding_dim, batch]`.
    /// In train mode the embedding passes through dropout first.
    pub fn head_forward<R: Rng + ?Sized>(
        &self,
        emb: &Tensor<F>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<F>, HeadCache<F>)> {
        let head = self.head.as_ref().ok_or(Error::NoHead)?;
        let (dropped, mask) = self.dropout.forward(emb, mode, rng);
        let (logits, dense) = head.forward(&dropped)?;
        Ok((logits, HeadCache { mask, dense }))
    }

    /// Returns `(d_emb, d_weight, d_bias)`.
    pub fn head_backward(
        &self,
        cache: &HeadCache<F>,
        d_logits: &Tensor<F>,
    ) -> Result<(Tensor<F>, Vec<F>, Vec<F>)> {
        let head = self.head.as_ref().ok_or(Error::NoHead)?;
        let (d_in, dw, db) = head.backward(&cache.dense, d_logits)?;
        Ok((Dropout::backward(&d_in, cache.mask.as_deref()), dw, db))
    }

    /// Infer-mode embeddings of standardized mels, one vector per input.
    pub fn embed_mels(&self, mels: &[&MelSpectrogram]) -> Result<Vec<Vec<F>>> {
        if mels.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.batch_input(mels)?;
        let (emb, _) = self.embed(&x, Mode::Infer)?;
        Ok(columns(&emb))
    }

    /// Infer-mode embedding of one standardized 128-frame mel.
    pub fn forward_embedding(&self, mel: &MelSpectrogram) -> Result<Vec<F>> {
        Ok(self.embed_mels(&[mel])?.pop().expect("one input"))
    }

    /// Head logits for one mel. Train mode needs a batch of at least two for
    /// batch norm, so single-input logits are computed in infer mode for the
    /// backbone; `mode` controls dropout on the head path.
    pub fn forward_logits<R: Rng + ?Sized>(
        &self,
        mel: &MelSpectrogram,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Vec<F>> {
        if self.head.is_none() {
            return Err(Error::NoHead);
        }
        let x = self.batch_input(&[mel])?;
        let (emb, _) = self.embed(&x, Mode::Infer)?;
        let (logits, _) = self.head_forward(&emb, mode, rng)?;
        Ok(logits.into_data())
    }
}

/// Columns of a `[rows, batch]` tensor.
pub fn columns<F: Real>(t: &Tensor<F>) -> Vec<Vec<F>> {
    let (rows, batch) = (t.shape()[0], t.shape()[1]);
    (0..batch)
        .map(|b| (0..rows).map(|r| t.data()[r * batch + b]).collect())
        .collect()
}

/// Inverse of [`columns`].
pub fn from_columns<F: Real>(cols: &[Vec<F>]) -> Result<Tensor<F>> {
    let batch = cols.len();
    let rows = cols.first().map_or(0, Vec::len);
    let mut data = vec![F::zero(); rows * batch];
    for (b, col) in cols.iter().enumerate() {
        if col.len() != rows {
            return Err(Error::Shape("ragged columns".into()));
        }
        for (r, &v) in col.iter().enumerate() {
            data[r * batch + b] = v;
        }
    }
    Tensor::new(vec![rows, batch], data)
}
