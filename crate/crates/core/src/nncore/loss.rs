use super::Real;
use crate::error::{Error, Result};

/// Margin between positive and negative relevance in the hinge loss.
pub const DEFAULT_MARGIN: f64 = 0.4;
/// Negatives contrasted against each anchor.
pub const DEFAULT_NEGATIVES: usize = 4;

/// Max-subtracted softmax.
pub fn softmax<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[target]` and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy<F: Real>(logits: &[F], target: usize) -> Result<(F, Vec<F>)> {
    if target >= logits.len() {
        return Err(Error::BadLabel {
            label: target,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<F>().ln() + max;
    let loss = log_sum - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= F::one();
    Ok((loss, grad))
}

/// Cross-entropy against a target distribution `q` (entries sum to 1).
pub fn soft_target_cross_entropy<F: Real>(logits: &[F], q: &[F]) -> Result<(F, Vec<F>)> {
    if q.len() != logits.len() {
        return Err(Error::Shape(format!(
            "{} targets for {} logits",
            q.len(),
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<F>().ln() + max;
    let loss = q
        .iter()
        .zip(logits)
        .map(|(&qi, &z)| qi * (log_sum - z))
        .sum();
    let grad = softmax(logits)
        .into_iter()
        .zip(q)
        .map(|(p, &qi)| p - qi)
        .collect();
    Ok((loss, grad))
}

/// Mean binary cross-entropy of independent sigmoids against 0/1 targets,
/// computed in the stable `max(z,0) - z*y + ln(1 + e^-|z|)` form.
pub fn sigmoid_bce<F: Real>(logits: &[F], targets: &[F]) -> Result<(F, Vec<F>)> {
    if targets.len() != logits.len() || logits.is_empty() {
        return Err(Error::Shape(format!(
            "{} targets for {} logits",
            targets.len(),
            logits.len()
        )));
    }
    let n = F::from_usize(logits.len()).expect("count");
    let mut loss = F::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(targets) {
        loss += z.max(F::zero()) - z * y + (F::one() + (-z.abs()).exp()).ln();
        let p = F::one() / (F::one() + (-z).exp());
        grad.push((p - y) / n);
    }
    Ok((loss / n, grad))
}

fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn check_pair<F: Real>(a: &[F], b: &[F]) -> Result<(F, F)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == F::zero() || nb == F::zero() {
        return Err(Error::UndefinedCosine);
    }
    Ok((na, nb))
}

/// Relevance score `a.b / (|a||b|)`.
pub fn cosine_relevance<F: Real>(a: &[F], b: &[F]) -> Result<F> {
    let (na, nb) = check_pair(a, b)?;
    Ok((dot(a, b) / (na * nb)).max(-F::one()).min(F::one()))
}

/// Relevance and its gradients with respect to both arguments:
/// `dR/da = b/(|a||b|) - R a/|a|^2` and symmetrically for `b`.
pub fn cosine_relevance_grad<F: Real>(a: &[F], b: &[F]) -> Result<(F, Vec<F>, Vec<F>)> {
    let (na, nb) = check_pair(a, b)?;
    let inv = F::one() / (na * nb);
    let r = dot(a, b) * inv;
    let ga = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| y * inv - r * x / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| x * inv - r * y / (nb * nb))
        .collect();
    Ok((r, ga, gb))
}

/// Hinge sum on precomputed scores:
/// `sum_j max(0, margin - r_pos + r_neg[j])`.
pub fn margin_loss_from_scores<F: Real>(r_pos: F, r_negs: &[F], margin: F) -> F {
    r_negs
        .iter()
        .map(|&rn| (margin - r_pos + rn).max(F::zero()))
        .sum()
}

/// Loss value and gradients for one anchor's hinge terms.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginLoss<F> {
    pub loss: F,
    pub grad_anchor: Vec<F>,
    pub grad_positive: Vec<F>,
    pub grad_negatives: Vec<Vec<F>>,
    /// Hinge terms with strictly positive slack.
    pub active: usize,
}

/// Max-margin loss over cosine relevance scores. A term exactly at the hinge
/// contributes a zero subgradient.
pub fn max_margin_loss<F: Real>(
    anchor: &[F],
    positive: &[F],
    negatives: &[&[F]],
    margin: F,
) -> Result<MarginLoss<F>> {
    let (r_pos, ga_pos, gp) = cosine_relevance_grad(anchor, positive)?;
    let dim = anchor.len();
    let mut out = MarginLoss {
        loss: F::zero(),
        grad_anchor: vec![F::zero(); dim],
        grad_positive: vec![F::zero(); dim],
        grad_negatives: Vec::with_capacity(negatives.len()),
        active: 0,
    };
    for neg in negatives {
        let (r_neg, ga_neg, gn) = cosine_relevance_grad(anchor, neg)?;
        let slack = margin - r_pos + r_neg;
        if slack > F::zero() {
            out.loss += slack;
            out.active += 1;
            for i in 0..dim {
                out.grad_anchor[i] += ga_neg[i] - ga_pos[i];
                out.grad_positive[i] -= gp[i];
            }
            out.grad_negatives.push(gn);
        } else {
            out.grad_negatives.push(vec![F::zero(); dim]);
        }
    }
    Ok(out)
}
