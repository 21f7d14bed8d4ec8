use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioClip, Matrix, HOP, N_BINS, N_FFT};
use crate::error::{Error, Result};

/// Periodic Hann window: `w[n] = 0.5 - 0.5 cos(2 pi n / len)`.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Frames produced from `n_samples` samples without center padding, or `None`
/// when the signal is shorter than one FFT window.
pub fn frame_count(n_samples: usize) -> Option<usize> {
    (n_samples >= N_FFT).then(|| 1 + (n_samples - N_FFT) / HOP)
}

fn shared_fft() -> &'static (Arc<dyn Fft<f64>>, Vec<f64>) {
    static FFT: OnceLock<(Arc<dyn Fft<f64>>, Vec<f64>)> = OnceLock::new();
    FFT.get_or_init(|| {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        (fft, hann_window(N_FFT))
    })
}

/// Squared-magnitude STFT, `N_BINS` rows (0..=512) by frame columns.
pub fn power_spectrogram(clip: &AudioClip) -> Result<Matrix> {
    let samples = clip.samples();
    let frames = frame_count(samples.len()).ok_or(Error::ClipTooShort {
        len: samples.len(),
        min: N_FFT,
    })?;
    let (fft, window) = shared_fft();
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut out = Matrix::zeros(N_BINS, frames);
    for t in 0..frames {
        let frame = &samples[t * HOP..t * HOP + N_FFT];
        for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(window) {
            *b = Complex::new(f64::from(s) * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf[..N_BINS].iter().enumerate() {
            out.set(k, t, c.norm_sqr());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{CONTEXT_SAMPLES, SAMPLE_RATE};

    /// Direct O(N^2) DFT of one windowed frame.
    fn naive_power(frame: &[f32]) -> Vec<f64> {
        let w = hann_window(N_FFT);
        (0..N_BINS)
            .map(|k| {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (n, (&x, &wn)) in frame.iter().zip(&w).enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / N_FFT as f64;
                    re += f64::from(x) * wn * ang.cos();
                    im += f64::from(x) * wn * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    fn clip(samples: Vec<f32>) -> AudioClip {
        AudioClip::new(samples, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn zero_clip_gives_zero_matrix() {
        let p = power_spectrogram(&clip(vec![0.0; CONTEXT_SAMPLES])).unwrap();
        assert_eq!((p.rows(), p.cols()), (513, 128));
        assert!(p.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_formula() {
        assert_eq!(frame_count(66150), Some(128));
        assert_eq!(frame_count(1024), Some(1));
        assert_eq!(frame_count(1535), Some(1));
        assert_eq!(frame_count(1536), Some(2));
        assert_eq!(frame_count(1023), None);
    }

    #[test]
    fn short_clip_rejected() {
        let err = power_spectrogram(&clip(vec![0.0; 1023])).unwrap_err();
        assert!(err.to_string().contains("clip too short"));
    }

    #[test]
    fn rate_rejected() {
        let err = AudioClip::new(vec![0.0; 4096], 44100).unwrap_err();
        assert!(err.to_string().contains("unsupported sample rate"));
    }

    #[test]
    fn matches_naive_dft_and_concentrates_bin_centered_sine() {
        let f = 10.0 * f64::from(SAMPLE_RATE) / N_FFT as f64;
        let samples: Vec<f32> = (0..4096)
            .map(|n| (2.0 * PI * f * n as f64 / f64::from(SAMPLE_RATE)).sin() as f32)
            .collect();
        let p = power_spectrogram(&clip(samples.clone())).unwrap();
        for t in 0..p.cols() {
            let oracle = naive_power(&samples[t * HOP..t * HOP + N_FFT]);
            let total: f64 = oracle.iter().sum();
            let ours: f64 = (0..N_BINS).map(|k| p.get(k, t)).sum();
            assert!(((ours - total) / total).abs() < 1e-6);
            for k in 0..N_BINS {
                assert!((p.get(k, t) - oracle[k]).abs() <= 1e-6 * total);
            }
            let near: f64 = (9..=11).map(|k| p.get(k, t)).sum();
            assert!(near / ours >= 0.9, "frame {t}: {}", near / ours);
        }
    }
}
