use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SiameseDropout, TagLoss};
use crate::error::{Error, Result};
use crate::model::{columns, from_columns, ArtistNet, EmbedCache};
use crate::nncore::{
    max_margin_loss, sigmoid_bce, soft_target_cross_entropy, softmax_cross_entropy, Dropout, Mode,
    Real, Tensor,
};

/// Supervision for one batch of the classification models.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One class index per example.
    Classes(Vec<usize>),
    /// Tag indices per example over a vocabulary of `vocab` tags.
    Tags {
        sets: Vec<Vec<usize>>,
        vocab: usize,
        loss: TagLoss,
    },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Tags { sets, .. } => sets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Loss and logit gradient of example `i`.
    pub fn example_loss<F: Real>(&self, i: usize, logits: &[F]) -> Result<(F, Vec<F>)> {
        match self {
            Targets::Classes(c) => softmax_cross_entropy(logits, c[i]),
            Targets::Tags { sets, vocab, loss } => {
                if logits.len() != *vocab {
                    return Err(Error::Shape(format!(
                        "{} logits for {vocab} tags",
                        logits.len()
                    )));
                }
                let set = &sets[i];
                if let Some(&bad) = set.iter().find(|&&t| t >= *vocab) {
                    return Err(Error::BadLabel {
                        label: bad,
                        classes: *vocab,
                    });
                }
                match loss {
                    TagLoss::MultiLabel => {
                        let mut y = vec![F::zero(); *vocab];
                        for &t in set {
                            y[t] = F::one();
                        }
                        sigmoid_bce(logits, &y)
                    }
                    TagLoss::Softmax => {
                        if set.is_empty() {
                            return Err(Error::Config(
                                "softmax tag loss needs at least one tag per track".into(),
                            ));
                        }
                        let w = F::one() / F::from_usize(set.len()).expect("count");
                        let mut q = vec![F::zero(); *vocab];
                        for &t in set {
                            q[t] = w;
                        }
                        soft_target_cross_entropy(logits, &q)
                    }
                }
            }
        }
    }

    /// Top-1 prediction counts as correct when it is the class, or any of
    /// the example's tags.
    pub fn is_hit<F: Real>(&self, i: usize, logits: &[F]) -> bool {
        let top = argmax(logits);
        match self {
            Targets::Classes(c) => top == c[i],
            Targets::Tags { sets, .. } => sets[i].contains(&top),
        }
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax<F: Real>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Loss, gradients in [`ArtistNet::params`] order, and the forward cache (for
/// committing batch-norm statistics).
pub struct Objective<F> {
    pub loss: f64,
    pub grads: Vec<Vec<F>>,
    pub cache: EmbedCache<F>,
    /// Examples whose prediction was correct (classification only).
    pub hits: usize,
    /// Triplets dropped because an embedding was the zero vector.
    pub skipped: usize,
}

/// Mean classification loss over the batch and its full gradient. In train
/// mode `rng` draws the dropout mask between embedding and head.
pub fn basic_objective<F: Real, R: Rng + ?Sized>(
    net: &ArtistNet<F>,
    x: &Tensor<F>,
    targets: &Targets,
    mode: Mode,
    rng: &mut R,
) -> Result<Objective<F>> {
    let (emb, cache) = net.embed(x, mode)?;
    let batch = cache.batch();
    if targets.len() != batch {
        return Err(Error::Shape(format!("{} targets for batch {batch}", targets.len())));
    }
    let (logits, head_cache) = net.head_forward(&emb, mode, rng)?;
    let inv_b = F::one() / F::from_usize(batch).expect("count");
    let mut total = 0.0;
    let mut hits = 0;
    let mut d_cols = Vec::with_capacity(batch);
    for (i, col) in columns(&logits).iter().enumerate() {
        let (l, g) = targets.example_loss(i, col)?;
        total += l.f64();
        hits += usize::from(targets.is_hit(i, col));
        d_cols.push(g.into_iter().map(|v| v * inv_b).collect::<Vec<F>>());
    }
    let (d_emb, dw, db) = net.head_backward(&head_cache, &from_columns(&d_cols)?)?;
    let mut grads = net.backward_embedding(&cache, &d_emb, false)?.params;
    grads.push(dw);
    grads.push(db);
    Ok(Objective {
        loss: total / batch as f64,
        grads,
        cache,
        hits,
        skipped: 0,
    })
}

/// Column layout of a Siamese batch of `batch` anchors: anchors first, then
/// positives, then the negatives of each anchor in turn.
pub fn siamese_columns(batch: usize, n_neg: usize) -> usize {
    batch * (2 + n_neg)
}

/// Dropout mask over a `[dim, batch * (2 + n_neg)]` embedding tensor with
/// one draw per triplet: anchor `i`, positive `batch + i` and negatives
/// `2 * batch + i * n_neg ..` share it.
pub fn triplet_mask<F: Real, R: Rng + ?Sized>(
    dropout: Dropout,
    dim: usize,
    batch: usize,
    n_neg: usize,
    rng: &mut R,
) -> Vec<F> {
    let cols = siamese_columns(batch, n_neg);
    let per: Vec<Vec<F>> = (0..batch).map(|_| dropout.mask(dim, rng)).collect();
    let owner = |c: usize| if c < 2 * batch { c % batch } else { (c - 2 * batch) / n_neg };
    let mut mask = vec![F::zero(); dim * cols];
    for k in 0..dim {
        for c in 0..cols {
            mask[k * cols + c] = per[owner(c)][k];
        }
    }
    mask
}

/// Mean max-margin loss over anchors, with every branch sharing one weight
/// set. In train mode dropout is applied to every embedding before the
/// relevance scores, with masks drawn as `masks` says.
#[allow(clippy::too_many_arguments)]
pub fn siamese_objective<F: Real, R: Rng + ?Sized>(
    net: &ArtistNet<F>,
    x: &Tensor<F>,
    batch: usize,
    n_neg: usize,
    margin: f64,
    masks: SiameseDropout,
    mode: Mode,
    rng: &mut R,
) -> Result<Objective<F>> {
    let (emb, cache) = net.embed(x, mode)?;
    if cache.batch() != siamese_columns(batch, n_neg) {
        return Err(Error::Shape(format!(
            "{} columns for {batch} anchors with {n_neg} negatives",
            cache.batch()
        )));
    }
    let (dropped, mask) = match (mode, masks) {
        (Mode::Train, SiameseDropout::PerTriplet) => {
            let mask = triplet_mask(net.dropout(), net.embedding_dim(), batch, n_neg, rng);
            (Dropout::apply_mask(&emb, &mask), Some(mask))
        }
        _ => net.dropout().forward(&emb, mode, rng),
    };
    let cols = columns(&dropped);
    let dim = net.embedding_dim();
    let mut d_cols = vec![vec![F::zero(); dim]; cols.len()];
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut per_anchor = Vec::with_capacity(batch);
    for i in 0..batch {
        let neg_idx: Vec<usize> = (0..n_neg).map(|j| 2 * batch + i * n_neg + j).collect();
        let negs: Vec<&[F]> = neg_idx.iter().map(|&k| cols[k].as_slice()).collect();
        match max_margin_loss(&cols[i], &cols[batch + i], &negs, F::lit(margin)) {
            Ok(out) => {
                total += out.loss.f64();
                used += 1;
                per_anchor.push(Some((out, neg_idx)));
            }
            Err(Error::UndefinedCosine) => {
                skipped += 1;
                per_anchor.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::NumericalFailure(
            "every triplet had a zero embedding".into(),
        ));
    }
    let scale = F::one() / F::from_usize(used).expect("count");
    for (i, entry) in per_anchor.into_iter().enumerate() {
        let Some((out, neg_idx)) = entry else { continue };
        for k in 0..dim {
            d_cols[i][k] += out.grad_anchor[k] * scale;
            d_cols[batch + i][k] += out.grad_positive[k] * scale;
        }
        for (g, &col) in out.grad_negatives.iter().zip(&neg_idx) {
            for k in 0..dim {
                d_cols[col][k] += g[k] * scale;
            }
        }
    }
    let d_dropped = from_columns(&d_cols)?;
    let d_emb = Dropout::backward(&d_dropped, mask.as_deref());
    let grads = net.backward_embedding(&cache, &d_emb, false)?.params;
    Ok(Objective {
        loss: total / used as f64,
        grads,
        cache,
        hits: 0,
        skipped,
    })
}

/// Infer-mode summed loss and hit count of a classification batch.
pub fn basic_scores<F: Real>(net: &ArtistNet<F>, x: &Tensor<F>, targets: &Targets) -> Result<(f64, usize)> {
    let (emb, _) = net.embed(x, Mode::Infer)?;
    let (logits, _) = net.head_forward(&emb, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut total = 0.0;
    let mut hits = 0;
    for (i, col) in columns(&logits).iter().enumerate() {
        total += targets.example_loss(i, col)?.0.f64();
        hits += usize::from(targets.is_hit(i, col));
    }
    Ok((total, hits))
}

/// Max-margin losses of the anchors of a Siamese layout built from fixed
/// embeddings, `None` where a zero embedding left the cosine undefined.
pub fn triplet_losses<F: Real>(
    cols: &[Vec<F>],
    batch: usize,
    n_neg: usize,
    margin: f64,
) -> Result<Vec<Option<f64>>> {
    if cols.len() != siamese_columns(batch, n_neg) {
        return Err(Error::Shape(format!("{} embeddings for {batch} anchors", cols.len())));
    }
    (0..batch)
        .map(|i| {
            let negs: Vec<&[F]> = (0..n_neg)
                .map(|j| cols[2 * batch + i * n_neg + j].as_slice())
                .collect();
            match max_margin_loss(&cols[i], &cols[batch + i], &negs, F::lit(margin)) {
                Ok(out) => Ok(Some(out.loss.f64())),
                Err(Error::UndefinedCosine) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}
