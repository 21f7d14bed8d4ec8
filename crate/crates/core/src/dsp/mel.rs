use std::sync::OnceLock;

use super::{
    power_spectrogram, AudioClip, Matrix, MelSpectrogram, LOG_FLOOR, N_BINS, N_FFT, N_MELS,
    SAMPLE_RATE,
};
use crate::error::Result;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK filterbank with unit peak response. Each row keeps the
/// nonzero column range so application skips the zero tails.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Matrix,
    support: Vec<(usize, usize)>,
}

impl MelFilterbank {
    fn build() -> Self {
        let nyquist = f64::from(SAMPLE_RATE) / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (N_MELS + 1) as f64))
            .collect();
        let bin_hz = |k: usize| k as f64 * f64::from(SAMPLE_RATE) / N_FFT as f64;

        let mut weights = Matrix::zeros(N_MELS, N_BINS);
        let mut support = Vec::with_capacity(N_MELS);
        for m in 0..N_MELS {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut first = None;
            let mut last = 0;
            for k in 0..N_BINS {
                let f = bin_hz(k);
                let rising = (f - lo) / (mid - lo);
                let falling = (hi - f) / (hi - mid);
                let w = rising.min(falling).max(0.0);
                if w > 0.0 {
                    weights.set(m, k, w);
                    first.get_or_insert(k);
                    last = k;
                }
            }
            let first = first.expect("every mel band covers at least one FFT bin");
            support.push((first, last + 1));
        }
        Self { weights, support }
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// Half-open column range of nonzero weights for band `m`.
    pub fn support(&self, m: usize) -> (usize, usize) {
        self.support[m]
    }

    /// `M * P` for a power spectrogram `P` (`N_BINS` x frames).
    pub fn apply(&self, power: &Matrix) -> Matrix {
        let frames = power.cols();
        let mut out = Matrix::zeros(N_MELS, frames);
        for m in 0..N_MELS {
            let (a, b) = self.support[m];
            let w = self.weights.row(m);
            let row = out.row_mut(m);
            for k in a..b {
                let wk = w[k];
                for (o, &p) in row.iter_mut().zip(power.row(k)) {
                    *o += wk * p;
                }
            }
        }
        out
    }
}

/// The fixed 128 x 513 filterbank for 22050 Hz / 1024-point FFT.
pub fn mel_filterbank() -> &'static MelFilterbank {
    static BANK: OnceLock<MelFilterbank> = OnceLock::new();
    BANK.get_or_init(MelFilterbank::build)
}

/// Unstandardized log-mel: `ln(max(M * P, 1e-10))`.
pub fn log_mel(clip: &AudioClip) -> Result<MelSpectrogram> {
    let power = power_spectrogram(clip)?;
    let mut mel = mel_filterbank().apply(&power);
    for v in mel.as_mut_slice() {
        *v = v.max(LOG_FLOOR).ln();
    }
    MelSpectrogram::new(mel, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::CONTEXT_SAMPLES;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_and_nonempty_rows() {
        let fb = mel_filterbank();
        assert_eq!((fb.weights().rows(), fb.weights().cols()), (128, 513));
        for m in 0..N_MELS {
            let row = fb.weights().row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().any(|&w| w > 0.0), "band {m} empty");
        }
    }

    fn peak(row: &[f64]) -> usize {
        row.iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &w)| if w > acc.1 { (i, w) } else { acc })
            .0
    }

    #[test]
    fn peaks_non_decreasing_and_ordered() {
        let fb = mel_filterbank();
        let peaks: Vec<usize> = (0..N_MELS).map(|m| peak(fb.weights().row(m))).collect();
        assert!(peaks.windows(2).all(|w| w[0] <= w[1]));
        // Band 0 spans 0 Hz to mel_to_hz(2 * step); the last peak sits near Nyquist.
        let step = hz_to_mel(11025.0) / 129.0;
        let band0_top_hz = mel_to_hz(2.0 * step);
        let bin_hz = 22050.0 / 1024.0;
        assert!(band0_top_hz < 40.0);
        let last_peak_hz = peaks[127] as f64 * bin_hz;
        assert!(last_peak_hz > 10000.0);
        assert!(fb.support(0).1 <= peaks[127]);
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 100.0, 700.0, 11025.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn sparse_apply_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let power = Matrix::from_vec(
            N_BINS,
            4,
            (0..N_BINS * 4).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let fb = mel_filterbank();
        let fast = fb.apply(&power);
        for m in 0..N_MELS {
            for t in 0..4 {
                let dense: f64 = (0..N_BINS)
                    .map(|k| fb.weights().get(m, k) * power.get(k, t))
                    .sum();
                assert!((fast.get(m, t) - dense).abs() <= 1e-12 * dense.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_clip_hits_floor() {
        let clip = AudioClip::new(vec![0.0; CONTEXT_SAMPLES], 22050).unwrap();
        let mel = log_mel(&clip).unwrap();
        assert!(!mel.is_standardized());
        assert!(mel
            .values()
            .as_slice()
            .iter()
            .all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn amplitude_scaling_shifts_by_ln_100() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // k/1024 with |k| < 64: the x10 product stays exact in f32
        let base: Vec<f32> = (0..CONTEXT_SAMPLES)
            .map(|_| rng.random_range(-63i32..64) as f32 / 1024.0)
            .collect();
        let loud: Vec<f32> = base.iter().map(|x| x * 10.0).collect();
        let a = log_mel(&AudioClip::new(base, 22050).unwrap()).unwrap();
        let b = log_mel(&AudioClip::new(loud, 22050).unwrap()).unwrap();
        let shift = 100f64.ln();
        for (x, y) in a.values().as_slice().iter().zip(b.values().as_slice()) {
            if *x > LOG_FLOOR.ln() + 1.0 {
                assert!((y - x - shift).abs() < 1e-9, "{x} {y}");
            }
        }
    }

    #[test]
    fn white_noise_shape_and_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f32> = (0..CONTEXT_SAMPLES)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        let mel = log_mel(&AudioClip::new(noise.clone(), 22050).unwrap()).unwrap();
        assert_eq!((mel.n_mels(), mel.frames()), (128, 128));
        assert!(mel.values().as_slice().iter().all(|v| v.is_finite()));
        let again = log_mel(&AudioClip::new(noise, 22050).unwrap()).unwrap();
        assert_eq!(mel, again);
    }
}
