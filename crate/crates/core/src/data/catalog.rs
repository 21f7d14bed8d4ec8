use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::wav::wav_len;
use crate::dsp::CONTEXT_SAMPLES;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

/// One line of a catalog file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackRecord {
    pub track_id: String,
    pub artist_id: String,
    /// Relative paths resolve against the catalog file's directory.
    pub audio_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
    #[serde(default)]
    pub split: Split,
}

/// Immutable, uniqueness-checked list of tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    records: Vec<TrackRecord>,
    base_dir: PathBuf,
}

impl Catalog {
    pub fn new(records: Vec<TrackRecord>, base_dir: PathBuf) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.track_id.as_str()) {
                return Err(Error::DuplicateTrack {
                    id: r.track_id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self { records, base_dir })
    }

    /// Parse JSON lines; blank lines are skipped, line numbers are 1-based.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TrackRecord = serde_json::from_str(line).map_err(|e| Error::Catalog {
                line: line_no,
                msg: e.to_string(),
            })?;
            if rec.track_id.is_empty() || rec.artist_id.is_empty() {
                return Err(Error::Catalog {
                    line: line_no,
                    msg: "empty track_id or artist_id".into(),
                });
            }
            if !seen.insert(rec.track_id.clone()) {
                return Err(Error::DuplicateTrack {
                    id: rec.track_id,
                    line: line_no,
                });
            }
            records.push(rec);
        }
        Ok(Self {
            records,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON-lines form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    pub fn records(&self) -> &[TrackRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, record: &TrackRecord) -> PathBuf {
        if record.audio_path.is_absolute() {
            record.audio_path.clone()
        } else {
            self.base_dir.join(&record.audio_path)
        }
    }

    /// Same base directory, different records.
    pub fn with_records(&self, records: Vec<TrackRecord>) -> Result<Self> {
        Self::new(records, self.base_dir.clone())
    }

    pub fn in_split(&self, split: Split) -> Vec<&TrackRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.split).or_insert(0) += 1;
        }
        out
    }

    /// Sorted distinct artist ids.
    pub fn artists(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.records.iter().map(|r| r.artist_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Sorted distinct tags.
    pub fn tag_vocabulary(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .records
            .iter()
            .flat_map(|r| r.tags.iter().flatten())
            .map(String::as_str)
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    /// Tracks whose audio is missing, unreadable, nonconforming, or shorter
    /// than one context window.
    pub fn audio_problems(&self) -> Vec<(String, Error)> {
        self.records
            .iter()
            .filter_map(|r| {
                let check = wav_len(&self.resolve(r)).and_then(|len| {
                    if len < CONTEXT_SAMPLES {
                        Err(Error::ClipShorterThanContext {
                            len,
                            context: CONTEXT_SAMPLES,
                        })
                    } else {
                        Ok(())
                    }
                });
                check.err().map(|e| (r.track_id.clone(), e))
            })
            .collect()
    }
}
