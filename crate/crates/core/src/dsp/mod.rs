//! Log-mel front end.
//!
//! Fixed analysis: 22050 Hz mono input, 1024-point FFT with a periodic Hann
//! window, hop 512, no center padding, 128 HTK mel bands from 0 Hz to Nyquist,
//! natural-log compression of the power spectrum with a 1e-10 floor.
//!
//! A 3 s window (66150 samples) therefore yields exactly 128 frames.

mod mel;
mod norm;
mod stft;
pub mod wav;

pub use mel::{hz_to_mel, log_mel, mel_filterbank, mel_to_hz, MelFilterbank};
pub use norm::{compute_norm_stats, standardize, unstandardize, NormAccumulator, NormStats};
pub use stft::{frame_count, hann_window, power_spectrogram};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 22050;
pub const N_FFT: usize = 1024;
pub const HOP: usize = 512;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const N_MELS: usize = 128;
/// Samples in one 3 s context window.
pub const CONTEXT_SAMPLES: usize = 3 * SAMPLE_RATE as usize;
/// Frames produced by one context window.
pub const CONTEXT_FRAMES: usize = 1 + (CONTEXT_SAMPLES - N_FFT) / HOP;
pub const LOG_FLOOR: f64 = 1e-10;

/// Conventions baked into every spectrogram this module produces. Stored in
/// checkpoints so features computed under different conventions never mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DspConventions {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub window: String,
    pub spectrum: String,
    pub mel_scale: String,
    pub center_padding: bool,
    pub log_floor: f64,
}

impl Default for DspConventions {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            n_fft: N_FFT,
            hop: HOP,
            n_mels: N_MELS,
            window: "hann-periodic".into(),
            spectrum: "power".into(),
            mel_scale: "htk".into(),
            center_padding: false,
            log_floor: LOG_FLOOR,
        }
    }
}

/// Mono audio at 22050 Hz with samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::UnsupportedSampleRate(sample_rate));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Copy of `len` samples starting at `offset`.
    pub fn slice(&self, offset: usize, len: usize) -> Result<Self> {
        let end = offset
            .checked_add(len)
            .filter(|&e| e <= self.samples.len())
            .ok_or_else(|| {
                Error::Shape(format!(
                    "slice {offset}+{len} out of range for {} samples",
                    self.samples.len()
                ))
            })?;
        Ok(Self {
            samples: self.samples[offset..end].to_vec(),
            sample_rate: self.sample_rate,
        })
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Log-mel matrix, `n_mels` rows by `frames` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    values: Matrix,
    standardized: bool,
}

impl MelSpectrogram {
    pub fn new(values: Matrix, standardized: bool) -> Result<Self> {
        if values.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite mel value".into()));
        }
        Ok(Self {
            values,
            standardized,
        })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn n_mels(&self) -> usize {
        self.values.rows()
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    /// Columns `start..start + len`, keeping the standardized flag.
    pub fn frames_window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames() {
            return Err(Error::Shape(format!(
                "frames {start}..{} out of {}",
                start + len,
                self.frames()
            )));
        }
        let mut out = Matrix::zeros(self.n_mels(), len);
        for r in 0..self.n_mels() {
            out.row_mut(r)
                .copy_from_slice(&self.values.row(r)[start..start + len]);
        }
        Ok(Self {
            values: out,
            standardized: self.standardized,
        })
    }
}
