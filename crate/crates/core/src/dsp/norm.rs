use serde::{Deserialize, Serialize};

use super::MelSpectrogram;
use crate::error::{Error, Result};

/// Global scalar normalization constants pooled over every cell of the
/// training spectrograms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std <= 0.0 {
            return Err(Error::InvalidStats(format!("mean {mean}, std {std}")));
        }
        Ok(Self { mean, std })
    }

    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

/// Streaming pooled mean / population variance (Chan's parallel update), so
/// statistics over a whole corpus never need every spectrogram in memory.
#[derive(Debug, Clone, Default)]
pub struct NormAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl NormAccumulator {
    pub fn push(&mut self, mel: &MelSpectrogram) -> Result<()> {
        if mel.is_standardized() {
            return Err(Error::DoubleStandardization);
        }
        let values = mel.values().as_slice();
        if values.is_empty() {
            return Ok(());
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let m2: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        self.merge(values.len() as u64, mean, m2);
        Ok(())
    }

    fn merge(&mut self, count: u64, mean: f64, m2: f64) {
        if self.count == 0 {
            (self.count, self.mean, self.m2) = (count, mean, m2);
            return;
        }
        let total = self.count + count;
        let delta = mean - self.mean;
        let (na, nb, n) = (self.count as f64, count as f64, total as f64);
        self.mean += delta * nb / n;
        self.m2 += m2 + delta * delta * na * nb / n;
        self.count = total;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(&self) -> Result<NormStats> {
        if self.count == 0 {
            return Err(Error::NoTrainingData);
        }
        let var = self.m2 / self.count as f64;
        if var <= 0.0 || !var.is_finite() {
            return Err(Error::DegenerateTrainingData);
        }
        NormStats::new(self.mean, var.sqrt())
    }
}

pub fn compute_norm_stats<'a, I>(mels: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a MelSpectrogram>,
{
    let mut acc = NormAccumulator::default();
    for mel in mels {
        acc.push(mel)?;
    }
    acc.finish()
}

pub fn standardize(mel: &MelSpectrogram, stats: &NormStats) -> Result<MelSpectrogram> {
    if mel.is_standardized() {
        return Err(Error::DoubleStandardization);
    }
    let mut values = mel.values().clone();
    for v in values.as_mut_slice() {
        *v = (*v - stats.mean) / stats.std;
    }
    MelSpectrogram::new(values, true)
}

/// Inverse of [`standardize`].
pub fn unstandardize(mel: &MelSpectrogram, stats: &NormStats) -> Result<MelSpectrogram> {
    if !mel.is_standardized() {
        return Err(Error::InvalidStats("input is not standardized".into()));
    }
    let mut values = mel.values().clone();
    for v in values.as_mut_slice() {
        *v = *v * stats.std + stats.mean;
    }
    MelSpectrogram::new(values, false)
}
