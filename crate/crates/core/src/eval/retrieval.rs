use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Neighbours consulted by the k-NN classifier.
pub const DEFAULT_K: usize = 20;

pub const KNN_TIE_POLICY: &str =
    "majority label; ties by smallest mean cosine distance, then lexicographic label";

/// Cosine similarity in f64. A zero vector has similarity 0 with everything.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Sum of precision@k over relevant ranks k, divided by `n_relevant`. `None`
/// when there is nothing to retrieve.
pub fn average_precision(relevance: &[bool], n_relevant: usize) -> Option<f64> {
    if n_relevant == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    Some(sum / n_relevant as f64)
}

/// Candidates ordered by descending similarity to `scores`' owner, ties by
/// ascending id.
fn rank(candidates: &mut [usize], scores: &[f64], ids: &[String]) {
    candidates.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[a].cmp(&ids[b]))
    });
}

/// Every other song ranked against song `q`.
pub fn ranked_list(m: &EmbeddingMatrix, q: usize) -> Vec<usize> {
    let scores: Vec<f64> = m.rows().iter().map(|r| cosine(&m.rows()[q], r)).collect();
    let mut others: Vec<usize> = (0..m.len()).filter(|&i| i != q).collect();
    rank(&mut others, &scores, m.ids());
    others
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map: f64,
    /// AP per song in matrix order; `None` for skipped queries.
    pub per_query: Vec<Option<f64>>,
    /// Queries with no other song of the same label.
    pub skipped: usize,
}

/// Every song queries all others; relevant means same label.
pub fn mean_average_precision(m: &EmbeddingMatrix) -> Result<MapResult> {
    if m.len() < 2 {
        return Err(Error::NoRelevantPairs);
    }
    let per_query: Vec<Option<f64>> = (0..m.len())
        .into_par_iter()
        .map(|q| {
            let label = &m.labels()[q];
            let rel: Vec<bool> = ranked_list(m, q).iter().map(|&i| &m.labels()[i] == label).collect();
            let n_rel = rel.iter().filter(|&&r| r).count();
            average_precision(&rel, n_rel)
        })
        .collect();
    let done: Vec<f64> = per_query.iter().flatten().copied().collect();
    if done.is_empty() {
        return Err(Error::NoRelevantPairs);
    }
    Ok(MapResult {
        map: done.iter().sum::<f64>() / done.len() as f64,
        skipped: per_query.len() - done.len(),
        per_query,
    })
}

/// Majority label among the `k` reference songs most similar to `query`.
pub fn knn_classify(reference: &EmbeddingMatrix, query: &[f32], k: usize) -> Result<String> {
    if reference.is_empty() {
        return Err(Error::NoReferenceData);
    }
    if k == 0 || k > reference.len() {
        return Err(Error::Config(format!(
            "k = {k} with {} reference songs",
            reference.len()
        )));
    }
    let scores: Vec<f64> = reference.rows().iter().map(|r| cosine(query, r)).collect();
    let mut order: Vec<usize> = (0..reference.len()).collect();
    rank(&mut order, &scores, reference.ids());
    // label -> (votes, summed cosine distance)
    let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for &i in &order[..k] {
        let e = tally.entry(reference.labels()[i].as_str()).or_default();
        e.0 += 1;
        e.1 += 1.0 - scores[i];
    }
    let (label, _) = tally
        .into_iter()
        .min_by(|(la, (va, da)), (lb, (vb, db))| {
            vb.cmp(va)
                .then_with(|| {
                    (da / *va as f64)
                        .partial_cmp(&(db / *vb as f64))
                        .unwrap_or(Ordering::Equal)
                })
                .then_with(|| la.cmp(lb))
        })
        .expect("k >= 1");
    Ok(label.to_string())
}

/// Prediction for every row of `queries`.
pub fn knn_predict(reference: &EmbeddingMatrix, queries: &EmbeddingMatrix, k: usize) -> Result<Vec<String>> {
    queries
        .rows()
        .par_iter()
        .map(|q| knn_classify(reference, q, k))
        .collect()
}
