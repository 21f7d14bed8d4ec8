use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Full-batch gradient descent on softmax cross-entropy plus `l2/2 * |W|^2`
/// (bias unpenalized).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub lr: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            iterations: 500,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic regression on per-dimension standardized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    classes: Vec<String>,
    mean: Vec<f64>,
    std: Vec<f64>,
    /// Row-major `[classes, dim]`.
    weight: Vec<f64>,
    bias: Vec<f64>,
    /// Objective before each iteration and after the last.
    pub loss_trace: Vec<f64>,
}

fn log_softmax_row(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in z {
        *v -= lse;
    }
}

impl LinearProbe {
    pub fn fit(x: &[Vec<f32>], labels: &[String], cfg: &ProbeConfig) -> Result<Self> {
        if x.len() != labels.len() || x.is_empty() {
            return Err(Error::Shape(format!("{} rows, {} labels", x.len(), labels.len())));
        }
        let mut classes: Vec<String> = labels.to_vec();
        classes.sort();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::DegenerateLabels);
        }
        let (n, d, c) = (x.len(), x[0].len(), classes.len());
        let y: Vec<usize> = labels
            .iter()
            .map(|l| classes.binary_search(l).expect("label in classes"))
            .collect();
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += f64::from(v) / n as f64;
            }
        }
        let mut std = vec![0.0; d];
        for row in x {
            for j in 0..d {
                std[j] += (f64::from(row[j]) - mean[j]).powi(2) / n as f64;
            }
        }
        for s in &mut std {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        let mut probe = Self {
            classes,
            mean,
            std,
            weight: vec![0.0; c * d],
            bias: vec![0.0; c],
            loss_trace: Vec::with_capacity(cfg.iterations + 1),
        };
        let xs: Vec<Vec<f64>> = x.iter().map(|r| probe.standardize(r)).collect();
        let mut gw = vec![0.0; c * d];
        let mut gb = vec![0.0; c];
        for it in 0..=cfg.iterations {
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for (row, &yi) in xs.iter().zip(&y) {
                let mut z = probe.logits(row);
                log_softmax_row(&mut z);
                loss -= z[yi];
                for k in 0..c {
                    let g = z[k].exp() - if k == yi { 1.0 } else { 0.0 };
                    gb[k] += g;
                    for j in 0..d {
                        gw[k * d + j] += g * row[j];
                    }
                }
            }
            let penalty = 0.5 * cfg.l2 * probe.weight.iter().map(|w| w * w).sum::<f64>();
            probe.loss_trace.push(loss / n as f64 + penalty);
            if it == cfg.iterations {
                break;
            }
            for (w, g) in probe.weight.iter_mut().zip(&gw) {
                *w -= cfg.lr * (g / n as f64 + cfg.l2 * *w);
            }
            for (b, g) in probe.bias.iter_mut().zip(&gb) {
                *b -= cfg.lr * g / n as f64;
            }
        }
        Ok(probe)
    }

    fn standardize(&self, x: &[f32]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (m, s))| (f64::from(v) - m) / s)
            .collect()
    }

    fn logits(&self, xs: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        (0..self.classes.len())
            .map(|k| {
                self.bias[k]
                    + self.weight[k * d..(k + 1) * d]
                        .iter()
                        .zip(xs)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Highest-scoring class; the first in label order on ties.
    pub fn predict(&self, x: &[f32]) -> &str {
        let z = self.logits(&self.standardize(x));
        let mut best = 0;
        for (k, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = k;
            }
        }
        &self.classes[best]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub accuracy: f64,
    pub predictions: Vec<String>,
    pub loss_trace: Vec<f64>,
}

pub fn train_linear_probe(
    train: &EmbeddingMatrix,
    test: &EmbeddingMatrix,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    if test.is_empty() {
        return Err(Error::NoReferenceData);
    }
    let probe = LinearProbe::fit(train.rows(), train.labels(), cfg)?;
    let predictions: Vec<String> = test.rows().iter().map(|r| probe.predict(r).to_string()).collect();
    let correct = predictions.iter().zip(test.labels()).filter(|(p, l)| p == l).count();
    Ok(ProbeResult {
        accuracy: correct as f64 / test.len() as f64,
        predictions,
        loss_trace: probe.loss_trace,
    })
}
