//! Deterministic synthetic music for desk-scale experiments.
//!
//! Every artist is a parameter bundle: spectral band centre, fundamental
//! range, harmonic decay, amplitude-modulation rate and depth, noise mix.
//! Artists come in groups of five ("genres"); a group's band centre, pitch
//! register and modulation rate sit near a fixed point of a Halton sequence,
//! so genres occupy the same parameter regions for every seed. Songs add a
//! random note sequence, a random overall level in [-24, 0] dB and a random
//! smooth colouration ("mastering EQ") of up to 10 dB per component.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Catalog, Split, TrackRecord};
use crate::dsp::wav::{encode_wav_pcm16, write_wav_pcm16};
use crate::dsp::{hz_to_mel, AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const ARTISTS_PER_GENRE: usize = 5;
pub const CATALOG_FILE: &str = "catalog.jsonl";
const MANIFEST_FILE: &str = "synth_manifest.json";
/// Bumped whenever rendering changes, so stale datasets are regenerated.
const GENERATOR_VERSION: u32 = 3;

const SR: f64 = SAMPLE_RATE as f64;
const MAX_HARMONIC: usize = 16;
const HARMONIC_CEILING_HZ: f64 = 10_000.0;
const JITTER: f64 = 0.07;
/// Song colouration: `EQ_COMPONENTS` cosines over the mel axis, amplitudes
/// uniform in [-EQ_DB, EQ_DB].
const EQ_DB: f64 = 10.0;
const EQ_COMPONENTS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_artists: usize,
    pub songs_per_artist: usize,
    pub clip_seconds: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(n_artists: usize, songs_per_artist: usize, seed: u64) -> Self {
        Self {
            n_artists,
            songs_per_artist,
            clip_seconds: 30.0,
            seed,
        }
    }

    pub fn n_genres(&self) -> usize {
        self.n_artists.div_ceil(ARTISTS_PER_GENRE)
    }

    fn clip_samples(&self) -> usize {
        (self.clip_seconds * SR).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_artists == 0 || self.songs_per_artist == 0 {
            return Err(Error::Config("synthetic dataset needs artists and songs".into()));
        }
        if !(self.clip_seconds.is_finite() && self.clip_seconds >= 3.0) {
            return Err(Error::Config(format!(
                "clip_seconds {} must be at least 3",
                self.clip_seconds
            )));
        }
        Ok(())
    }
}

/// `index`-th element (1-based) of the van der Corput sequence in `base`.
fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Genre centre in the unit cube (band centre, pitch register, modulation rate).
pub fn genre_center(genre: usize) -> [f64; 3] {
    let i = genre + 1;
    [halton(i, 2), halton(i, 3), halton(i, 5)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtistParams {
    pub genre: usize,
    pub band_center_hz: f64,
    pub f0_low_hz: f64,
    pub f0_high_hz: f64,
    pub harmonic_decay: f64,
    pub am_rate_hz: f64,
    pub am_depth: f64,
    pub noise_mix: f64,
}

impl ArtistParams {
    pub fn tags(&self) -> Vec<String> {
        let pick = |cond: bool, a: &str, b: &str| if cond { a } else { b }.to_string();
        vec![
            format!("genre_{}", self.genre),
            pick(self.band_center_hz > 1600.0, "bright", "dark"),
            pick(self.f0_low_hz > 226.0, "high", "low"),
            pick(self.noise_mix > 0.25, "noisy", "clean"),
            pick(self.am_rate_hz > 6.0, "pulsing", "steady"),
        ]
    }
}

fn artist_rng(seed: u64, artist: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(artist as u64 * 2);
    rng
}

fn song_rng(seed: u64, artist: usize, song: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (song as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(artist as u64 * 2 + 1);
    rng
}

pub fn artist_params(seed: u64, artist: usize) -> ArtistParams {
    let genre = artist / ARTISTS_PER_GENRE;
    let c = genre_center(genre);
    let mut rng = artist_rng(seed, artist);
    let mut jit = |x: f64| (x + rng.random_range(-JITTER..JITTER)).clamp(0.0, 1.0);
    let (u0, u1, u2) = (jit(c[0]), jit(c[1]), jit(c[2]));
    let f0_low = 80.0 * 2f64.powf(3.0 * u1);
    ArtistParams {
        genre,
        band_center_hz: 400.0 * 2f64.powf(4.0 * u0),
        f0_low_hz: f0_low,
        f0_high_hz: f0_low * 1.5,
        harmonic_decay: rng.random_range(0.5..2.0),
        am_rate_hz: 1.0 + 10.0 * u2,
        am_depth: rng.random_range(0.3..0.9),
        noise_mix: rng.random_range(0.05..0.5),
    }
}

/// Gaussian response in octaves around the band centre.
fn band_weight(f: f64, center: f64) -> f64 {
    let oct = (f / center).log2() / 0.8;
    (-0.5 * oct * oct).exp()
}

/// RBJ constant-peak band-pass biquad.
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn new(center: f64, q: f64) -> Self {
        let w = 2.0 * PI * center / SR;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// EQ gain in dB at `hz`.
fn eq_db(coef: &[f64], hz: f64) -> f64 {
    let u = hz_to_mel(hz) / hz_to_mel(SR / 2.0);
    coef.iter()
        .enumerate()
        .map(|(j, c)| c * (PI * (j + 1) as f64 * u).cos())
        .sum()
}

/// Zero-phase (circular) filtering of the whole signal by the EQ curve.
fn apply_eq(x: &mut [f64], coef: &[f64]) {
    let n = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let hz = k.min(n - k) as f64 * SR / n as f64;
        *c *= 10f64.powf(eq_db(coef, hz) / 20.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    for (v, c) in x.iter_mut().zip(&buf) {
        *v = c.re / n as f64;
    }
}

fn normalize_rms(v: &mut [f64]) {
    let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    if rms > 0.0 {
        v.iter_mut().for_each(|x| *x /= rms);
    }
}

/// Render one song. Pure function of its arguments.
pub fn render_song(params: &ArtistParams, seed: u64, artist: usize, song: usize, samples: usize) -> AudioClip {
    let mut rng = song_rng(seed, artist, song);
    let gain_db: f64 = rng.random_range(-24.0..0.0);
    let eq: Vec<f64> = (0..EQ_COMPONENTS).map(|_| rng.random_range(-EQ_DB..EQ_DB)).collect();

    // harmonic stack, note by note, phase-continuous rotors
    let mut tone = vec![0.0f64; samples];
    let mut state = [(1.0f64, 0.0f64); MAX_HARMONIC];
    let mut t = 0;
    while t < samples {
        let dur = (rng.random_range(0.2..0.6) * SR) as usize;
        let end = (t + dur.max(1)).min(samples);
        let f0 = params.f0_low_hz * (params.f0_high_hz / params.f0_low_hz).powf(rng.random::<f64>());
        let mut rot = Vec::with_capacity(MAX_HARMONIC);
        for h in 1..=MAX_HARMONIC {
            let f = f0 * h as f64;
            if f >= HARMONIC_CEILING_HZ {
                break;
            }
            let amp = (h as f64).powf(-params.harmonic_decay) * band_weight(f, params.band_center_hz);
            if amp < 1e-3 {
                continue;
            }
            let w = 2.0 * PI * f / SR;
            rot.push((h - 1, amp, w.cos(), w.sin()));
        }
        for &(k, _, _, _) in &rot {
            let (c, s) = state[k];
            let m = (c * c + s * s).sqrt();
            state[k] = (c / m, s / m);
        }
        for out in &mut tone[t..end] {
            let mut acc = 0.0;
            for &(k, amp, rc, rs) in &rot {
                let (c, s) = state[k];
                state[k] = (c * rc - s * rs, c * rs + s * rc);
                acc += amp * s;
            }
            *out = acc;
        }
        t = end;
    }
    normalize_rms(&mut tone);

    let mut bp = BandPass::new(params.band_center_hz, 2.0);
    let mut noise: Vec<f64> = (0..samples)
        .map(|_| bp.step(rng.random_range(-1.0..1.0)))
        .collect();
    normalize_rms(&mut noise);

    let am_phase = rng.random_range(0.0..2.0 * PI);
    let mut mix: Vec<f64> = (0..samples)
        .map(|i| {
            let env = 1.0 - params.am_depth * 0.5
                * (1.0 + (2.0 * PI * params.am_rate_hz * i as f64 / SR + am_phase).sin());
            env * ((1.0 - params.noise_mix) * tone[i] + params.noise_mix * noise[i])
        })
        .collect();
    apply_eq(&mut mix, &eq);
    let peak = mix.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = if peak > 0.0 { 0.5 / peak } else { 0.0 } * 10f64.powf(gain_db / 20.0);
    mix.iter_mut().for_each(|x| *x *= scale);
    AudioClip::new(mix.into_iter().map(|x| x as f32).collect(), SAMPLE_RATE)
        .expect("finite samples at the native rate")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    generator: u32,
    spec: SynthSpec,
    files: Vec<(String, String)>,
}

/// Result of [`generate_synthetic_dataset`].
#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub catalog_path: PathBuf,
    pub catalog: Catalog,
    /// False when an identical dataset was already present and left alone.
    pub generated: bool,
}

fn track_id(artist: usize, song: usize) -> String {
    format!("a{artist:03}_s{song:03}")
}

fn is_up_to_date(dir: &Path, spec: &SynthSpec) -> bool {
    let Ok(text) = std::fs::read_to_string(dir.join(MANIFEST_FILE)) else {
        return false;
    };
    let Ok(manifest) = serde_json::from_str::<Manifest>(&text) else {
        return false;
    };
    manifest.generator == GENERATOR_VERSION
        && manifest.spec == *spec
        && manifest.files.iter().all(|(name, digest)| {
            std::fs::read(dir.join(name))
                .map(|b| hex::encode(Sha256::digest(&b)) == *digest)
                .unwrap_or(false)
        })
}

/// Write `n_artists * songs_per_artist` WAVs under `out_dir/audio` and a
/// catalog referencing them. Reruns with the same spec reuse the files.
pub fn generate_synthetic_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutcome> {
    spec.validate()?;
    let catalog_path = out_dir.join(CATALOG_FILE);
    if is_up_to_date(out_dir, spec) {
        return Ok(SynthOutcome {
            catalog: Catalog::load(&catalog_path)?,
            catalog_path,
            generated: false,
        });
    }
    std::fs::create_dir_all(out_dir.join("audio"))?;
    let n = spec.clip_samples();
    let mut records = Vec::with_capacity(spec.n_artists * spec.songs_per_artist);
    let mut files = Vec::with_capacity(records.capacity() + 1);
    for a in 0..spec.n_artists {
        let params = artist_params(spec.seed, a);
        for s in 0..spec.songs_per_artist {
            let id = track_id(a, s);
            let rel = format!("audio/{id}.wav");
            let clip = render_song(&params, spec.seed, a, s, n);
            let bytes = encode_wav_pcm16(&clip)?;
            files.push((rel.clone(), hex::encode(Sha256::digest(&bytes))));
            std::fs::write(out_dir.join(&rel), bytes)?;
            records.push(TrackRecord {
                track_id: id,
                artist_id: format!("artist_{a:03}"),
                audio_path: PathBuf::from(rel),
                genre: Some(format!("genre_{}", params.genre)),
                tags: Some(params.tags()),
                split: Split::Unassigned,
            });
        }
    }
    let catalog = Catalog::new(records, out_dir.to_path_buf())?;
    let text = catalog.to_jsonl();
    std::fs::write(&catalog_path, &text)?;
    files.push((CATALOG_FILE.to_string(), hex::encode(Sha256::digest(text.as_bytes()))));
    let manifest = Manifest {
        generator: GENERATOR_VERSION,
        spec: *spec,
        files,
    };
    std::fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(SynthOutcome {
        catalog_path,
        catalog,
        generated: true,
    })
}

/// Write one rendered song; used by tools that need a single test file.
pub fn write_song(path: &Path, seed: u64, artist: usize, song: usize, seconds: f64) -> Result<()> {
    let params = artist_params(seed, artist);
    let clip = render_song(&params, seed, artist, song, (seconds * SR).round() as usize);
    write_wav_pcm16(path, &clip)
}
