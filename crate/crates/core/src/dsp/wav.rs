//! RIFF WAV input/output. Accepts mono 22050 Hz PCM 16-bit or IEEE float-32
//! only; everything else is rejected rather than converted.

use std::fs::File;
use std::io::{BufReader, Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::UnsupportedFormat(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Pcm16,
    Float32,
}

fn check_spec(spec: &WavSpec) -> Result<Encoding> {
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels (mono required)",
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate(spec.sample_rate));
    }
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => Ok(Encoding::Pcm16),
        (SampleFormat::Float, 32) => Ok(Encoding::Float32),
        (fmt, bits) => Err(Error::UnsupportedFormat(format!(
            "{fmt:?} {bits}-bit samples (need PCM 16-bit or float 32-bit)"
        ))),
    }
}

fn read_samples<R: Read>(
    reader: &mut WavReader<R>,
    encoding: Encoding,
    limit: usize,
) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(limit.min(1 << 24));
    match encoding {
        Encoding::Pcm16 => {
            for s in reader.samples::<i16>().take(limit) {
                out.push(f32::from(s.map_err(map_hound)?) / 32768.0);
            }
        }
        Encoding::Float32 => {
            for s in reader.samples::<f32>().take(limit) {
                let v = s.map_err(map_hound)?;
                if !v.is_finite() {
                    return Err(Error::UnsupportedFormat("non-finite float sample".into()));
                }
                out.push(v);
            }
        }
    }
    Ok(out)
}

fn decode<R: Read>(reader: R) -> Result<AudioClip> {
    let mut wav = WavReader::new(reader).map_err(map_hound)?;
    let encoding = check_spec(&wav.spec())?;
    let n = wav.len() as usize;
    let samples = read_samples(&mut wav, encoding, n)?;
    AudioClip::new(samples, SAMPLE_RATE)
}

/// Decode a complete WAV file held in memory.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    decode(Cursor::new(bytes))
}

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    decode(BufReader::new(File::open(path)?))
}

/// Sample count of a conforming WAV file, read from the header only.
pub fn wav_len(path: &Path) -> Result<usize> {
    let wav = WavReader::new(BufReader::new(File::open(path)?)).map_err(map_hound)?;
    check_spec(&wav.spec())?;
    Ok(wav.len() as usize)
}

/// Read `len` samples starting at `offset` without decoding the rest.
pub fn read_wav_window(path: &Path, offset: usize, len: usize) -> Result<AudioClip> {
    let mut wav = WavReader::new(BufReader::new(File::open(path)?)).map_err(map_hound)?;
    let encoding = check_spec(&wav.spec())?;
    let total = wav.len() as usize;
    if offset + len > total {
        return Err(Error::Shape(format!(
            "window {offset}+{len} beyond {total} samples"
        )));
    }
    wav.seek(offset as u32).map_err(Error::Io)?;
    let samples = read_samples(&mut wav, encoding, len)?;
    if samples.len() != len {
        return Err(Error::UnsupportedFormat("truncated sample data".into()));
    }
    AudioClip::new(samples, SAMPLE_RATE)
}

fn pcm16_spec() -> WavSpec {
    WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    }
}

/// Quantize to 16-bit PCM: round `x * 32768` to nearest, saturating.
pub fn to_pcm16(x: f32) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn write_pcm16<W: Write + Seek>(writer: W, clip: &AudioClip) -> Result<()> {
    let mut w = WavWriter::new(writer, pcm16_spec()).map_err(map_hound)?;
    for &s in clip.samples() {
        w.write_sample(to_pcm16(s)).map_err(map_hound)?;
    }
    w.finalize().map_err(map_hound)
}

pub fn encode_wav_pcm16(clip: &AudioClip) -> Result<Vec<u8>> {
    let mut cursor = Cursor::new(Vec::new());
    write_pcm16(&mut cursor, clip)?;
    Ok(cursor.into_inner())
}

pub fn write_wav_pcm16(path: &Path, clip: &AudioClip) -> Result<()> {
    std::fs::write(path, encode_wav_pcm16(clip)?)?;
    Ok(())
}

pub fn encode_wav_f32(clip: &AudioClip) -> Result<Vec<u8>> {
    let spec = WavSpec {
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
        ..pcm16_spec()
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut w = WavWriter::new(&mut cursor, spec).map_err(map_hound)?;
        for &s in clip.samples() {
            w.write_sample(s).map_err(map_hound)?;
        }
        w.finalize().map_err(map_hound)?;
    }
    Ok(cursor.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> AudioClip {
        AudioClip::new(
            (0..n).map(|i| ((i % 200) as f32 / 100.0) - 1.0).collect(),
            SAMPLE_RATE,
        )
        .unwrap()
    }

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let clip = ramp(3000);
        let back = decode_wav(&encode_wav_pcm16(&clip).unwrap()).unwrap();
        assert_eq!(back.len(), clip.len());
        for (a, b) in clip.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-7, "{a} {b}");
        }
    }

    #[test]
    fn float_round_trip_is_exact() {
        let clip = ramp(2048);
        let back = decode_wav(&encode_wav_f32(&clip).unwrap()).unwrap();
        assert_eq!(back, clip);
    }

    #[test]
    fn window_read_matches_full_decode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        write_wav_pcm16(&path, &ramp(5000)).unwrap();
        let full = read_wav(&path).unwrap();
        assert_eq!(wav_len(&path).unwrap(), 5000);
        let win = read_wav_window(&path, 1234, 777).unwrap();
        assert_eq!(win.samples(), &full.samples()[1234..1234 + 777]);
        assert!(read_wav_window(&path, 4900, 200).is_err());
    }

    #[test]
    fn rejects_wrong_rate_and_channels() {
        let write = |spec: WavSpec| {
            let mut c = Cursor::new(Vec::new());
            let mut w = WavWriter::new(&mut c, spec).unwrap();
            for _ in 0..100 * spec.channels {
                w.write_sample(0i16).unwrap();
            }
            w.finalize().unwrap();
            c.into_inner()
        };
        let rate = write(WavSpec {
            sample_rate: 44100,
            ..pcm16_spec()
        });
        assert!(matches!(
            decode_wav(&rate),
            Err(Error::UnsupportedSampleRate(44100))
        ));
        let stereo = write(WavSpec {
            channels: 2,
            ..pcm16_spec()
        });
        assert!(matches!(decode_wav(&stereo), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(decode_wav(b"").is_err());
        assert!(decode_wav(b"RIFF\x00\x00\x00\x00WAVEjunk").is_err());
    }
}
