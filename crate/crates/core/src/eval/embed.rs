use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Catalog, TrackRecord};
use crate::dsp::wav::read_wav;
use crate::dsp::{log_mel, standardize, AudioClip, NormStats, CONTEXT_SAMPLES};
use crate::error::{Error, Result};
use crate::model::{ArtistNet, Checkpoint};

/// Windows averaged into one song vector.
pub const SONG_SEGMENTS: usize = 10;

/// Mean infer-mode embedding of consecutive non-overlapping 3 s windows:
/// ten for a clip of 30 s or more (extra audio ignored), fewer for a shorter
/// clip (with a warning).
pub fn extract_song_embedding(
    clip: &AudioClip,
    net: &ArtistNet<f32>,
    stats: &NormStats,
) -> Result<Vec<f32>> {
    let available = clip.len() / CONTEXT_SAMPLES;
    if available == 0 {
        return Err(Error::ClipTooShort {
            len: clip.len(),
            min: CONTEXT_SAMPLES,
        });
    }
    let segments = available.min(SONG_SEGMENTS);
    if segments < SONG_SEGMENTS {
        log::warn!("clip of {} samples yields only {segments} segments", clip.len());
    }
    let mels = (0..segments)
        .map(|i| standardize(&log_mel(&clip.slice(i * CONTEXT_SAMPLES, CONTEXT_SAMPLES)?)?, stats))
        .collect::<Result<Vec<_>>>()?;
    let rows = net.embed_mels(&mels.iter().collect::<Vec<_>>())?;
    let mut mean = vec![0f64; net.embedding_dim()];
    for row in &rows {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    Ok(mean.into_iter().map(|m| (m / segments as f64) as f32).collect())
}

/// Which catalog field serves as the relevance / class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Genre,
    Artist,
}

impl LabelKind {
    /// Genre when every record has one, artist otherwise.
    pub fn infer(records: &[TrackRecord]) -> Self {
        if !records.is_empty() && records.iter().all(|r| r.genre.is_some()) {
            LabelKind::Genre
        } else {
            LabelKind::Artist
        }
    }

    pub fn label_of(self, r: &TrackRecord) -> Result<String> {
        match self {
            LabelKind::Artist => Ok(r.artist_id.clone()),
            LabelKind::Genre => r
                .genre
                .clone()
                .ok_or_else(|| Error::Config(format!("track {} has no genre", r.track_id))),
        }
    }
}

/// One vector per song, with ids and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    labels: Vec<String>,
    rows: Vec<Vec<f32>>,
    /// Digest of the checkpoint the vectors came from; empty when unknown.
    pub source_digest: String,
}

impl EmbeddingMatrix {
    /// Rejects ragged rows, non-finite values and duplicate ids.
    pub fn new(ids: Vec<String>, labels: Vec<String>, rows: Vec<Vec<f32>>) -> Result<Self> {
        if ids.len() != labels.len() || ids.len() != rows.len() {
            return Err(Error::Shape(format!(
                "{} ids, {} labels, {} rows",
                ids.len(),
                labels.len(),
                rows.len()
            )));
        }
        if let Some(first) = rows.first() {
            if first.is_empty() || rows.iter().any(|r| r.len() != first.len()) {
                return Err(Error::Shape("embedding rows must share a positive dimension".into()));
            }
        }
        if let Some(i) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NumericalFailure(format!("non-finite embedding for {}", ids[i])));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Config(format!("duplicate song id {dup:?}")));
        }
        Ok(Self {
            ids,
            labels,
            rows,
            source_digest: String::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> &[Vec<f32>] {
        &self.rows
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let mut out = Self::new(
            idx.iter().map(|&i| self.ids[i].clone()).collect(),
            idx.iter().map(|&i| self.labels[i].clone()).collect(),
            idx.iter().map(|&i| self.rows[i].clone()).collect(),
        )?;
        out.source_digest = self.source_digest.clone();
        Ok(out)
    }

    /// Header `song_id,label,e0,...`; values in shortest round-trip form.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["song_id".to_string(), "label".to_string()];
        header.extend((0..self.dim()).map(|i| format!("e{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for ((id, label), row) in self.ids.iter().zip(&self.labels).zip(&self.rows) {
            let mut rec = vec![id.clone(), label.clone()];
            rec.extend(row.iter().map(f32::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        let dim = header.len().saturating_sub(2);
        let expected = (0..dim).map(|i| format!("e{i}"));
        if header.get(0) != Some("song_id")
            || header.get(1) != Some("label")
            || !header.iter().skip(2).eq(expected)
        {
            return Err(Error::Config("embedding CSV header mismatch".into()));
        }
        let (mut ids, mut labels, mut rows) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            ids.push(rec[0].to_string());
            labels.push(rec[1].to_string());
            let row = rec
                .iter()
                .skip(2)
                .map(|v| v.parse::<f32>().map_err(|e| Error::Config(format!("{v:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(ids, labels, rows)
    }

    /// `count: u32 LE, dim: u32 LE`, then the rows as f32 LE.
    pub fn to_raw(&self) -> Vec<u8> {
        encode_raw(&self.rows)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("embedding CSV: {e}"))
}

pub fn encode_raw(rows: &[Vec<f32>]) -> Vec<u8> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(8 + 4 * rows.len() * dim);
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in rows.iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Inverse of [`encode_raw`]; the byte length must match the header exactly.
pub fn decode_raw(bytes: &[u8]) -> Result<Vec<Vec<f32>>> {
    let bad = |m: String| Error::Config(format!("raw embeddings: {m}"));
    if bytes.len() < 8 {
        return Err(bad(format!("{} bytes, header needs 8", bytes.len())));
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let need = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(8))
        .ok_or_else(|| bad(format!("{count} x {dim} overflows")))?;
    if bytes.len() != need {
        return Err(bad(format!("{count} x {dim} needs {need} bytes, got {}", bytes.len())));
    }
    if count > 0 && dim == 0 {
        return Err(bad("zero dimension".into()));
    }
    Ok(bytes[8..]
        .chunks_exact(4 * dim.max(1))
        .take(count)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect()
        })
        .collect())
}

/// Song embeddings for `records` of `catalog`, in record order.
pub fn embed_catalog(
    ck: &Checkpoint,
    catalog: &Catalog,
    records: &[&TrackRecord],
    kind: LabelKind,
) -> Result<EmbeddingMatrix> {
    let rows = records
        .par_iter()
        .map(|r| {
            let clip = read_wav(&catalog.resolve(r)).map_err(|e| e.for_track(&r.track_id))?;
            extract_song_embedding(&clip, &ck.net, &ck.norm_stats).map_err(|e| e.for_track(&r.track_id))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = EmbeddingMatrix::new(
        records.iter().map(|r| r.track_id.clone()).collect(),
        records.iter().map(|r| kind.label_of(r)).collect::<Result<_>>()?,
        rows,
    )?;
    m.source_digest = ck.digest()?;
    Ok(m)
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: &Path, format: ExportFormat) -> Result<()> {
    match format {
        ExportFormat::Csv => std::fs::write(path, m.to_csv()?)?,
        ExportFormat::Raw => std::fs::write(path, m.to_raw())?,
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Raw,
}

impl ExportFormat {
    /// `raw` for a `.raw`/`.bin` extension, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("raw" | "bin") => ExportFormat::Raw,
            _ => ExportFormat::Csv,
        }
    }
}
