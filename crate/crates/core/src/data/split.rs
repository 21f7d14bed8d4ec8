use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Catalog, Split, TrackRecord};
use crate::error::{Error, Result};

/// Per-artist song budget and its train/val/test cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub songs_per_artist: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Number of artists to keep; `None` keeps every eligible artist.
    #[serde(default)]
    pub artist_set_size: Option<usize>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self::fifteen_three_two(None)
    }
}

impl SplitSpec {
    /// 20 songs per artist cut 15/3/2.
    pub fn fifteen_three_two(artist_set_size: Option<usize>) -> Self {
        Self {
            songs_per_artist: 20,
            train: 15,
            val: 3,
            test: 2,
            artist_set_size,
        }
    }

    /// 20 songs per artist cut 17/1/2.
    pub fn seventeen_one_two(artist_set_size: Option<usize>) -> Self {
        Self {
            songs_per_artist: 20,
            train: 17,
            val: 1,
            test: 2,
            artist_set_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train + self.val + self.test != self.songs_per_artist {
            return Err(Error::InvalidSplit(format!(
                "{}+{}+{} != {} songs per artist",
                self.train, self.val, self.test, self.songs_per_artist
            )));
        }
        if self.train == 0 {
            return Err(Error::InvalidSplit("no training songs".into()));
        }
        if self.artist_set_size == Some(0) {
            return Err(Error::InvalidSplit("empty artist set".into()));
        }
        Ok(())
    }
}

/// Drop artists with fewer than `songs_per_artist` tracks, choose the artist
/// set and each artist's songs uniformly by seed, and cut every artist's songs
/// at the train/val/test boundaries of a seeded permutation. Only retained
/// tracks appear in the result, in their original catalog order.
pub fn make_splits(catalog: &Catalog, spec: &SplitSpec, seed: u64) -> Result<Catalog> {
    spec.validate()?;
    let mut by_artist: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in catalog.records().iter().enumerate() {
        by_artist.entry(r.artist_id.as_str()).or_default().push(i);
    }
    let eligible: Vec<&str> = by_artist
        .iter()
        .filter(|(_, t)| t.len() >= spec.songs_per_artist)
        .map(|(a, _)| *a)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<&str> = match spec.artist_set_size {
        None => eligible,
        Some(n) if n > eligible.len() => {
            return Err(Error::InsufficientArtists {
                available: eligible.len(),
                required: n,
            })
        }
        Some(n) => {
            let mut pick: Vec<&str> = eligible.choose_multiple(&mut rng, n).copied().collect();
            pick.sort_unstable();
            pick
        }
    };

    let mut assignment: Vec<Option<Split>> = vec![None; catalog.len()];
    for artist in chosen {
        let mut tracks = by_artist[artist].clone();
        tracks.sort_by(|&a, &b| catalog.records()[a].track_id.cmp(&catalog.records()[b].track_id));
        let mut songs: Vec<usize> = tracks
            .choose_multiple(&mut rng, spec.songs_per_artist)
            .copied()
            .collect();
        songs.shuffle(&mut rng);
        for (k, &t) in songs.iter().enumerate() {
            assignment[t] = Some(if k < spec.train {
                Split::Train
            } else if k < spec.train + spec.val {
                Split::Val
            } else {
                Split::Test
            });
        }
    }
    let records: Vec<TrackRecord> = catalog
        .records()
        .iter()
        .zip(assignment)
        .filter_map(|(r, s)| {
            s.map(|split| TrackRecord {
                split,
                ..r.clone()
            })
        })
        .collect();
    catalog.with_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::{Path, PathBuf};

    fn catalog(per_artist: &[usize]) -> Catalog {
        let records = per_artist
            .iter()
            .enumerate()
            .flat_map(|(a, &n)| {
                (0..n).map(move |s| TrackRecord {
                    track_id: format!("a{a}_s{s}"),
                    artist_id: format!("a{a}"),
                    audio_path: PathBuf::from(format!("a{a}_s{s}.wav")),
                    genre: None,
                    tags: None,
                    split: Split::Unassigned,
                })
            })
            .collect();
        Catalog::new(records, Path::new(".").into()).unwrap()
    }

    #[test]
    fn filters_subsamples_and_partitions() {
        let c = catalog(&[20, 25, 19, 40, 3]);
        let out = make_splits(&c, &SplitSpec::default(), 1).unwrap();
        assert_eq!(out.len(), 60);
        assert_eq!(out.artists(), vec!["a0", "a1", "a3"]);
        for a in out.artists() {
            let mine: Vec<_> = out.records().iter().filter(|r| r.artist_id == a).collect();
            let count = |s| mine.iter().filter(|r| r.split == s).count();
            assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (15, 3, 2));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let c = catalog(&[30; 8]);
        let spec = SplitSpec::seventeen_one_two(Some(5));
        let a = make_splits(&c, &spec, 9).unwrap();
        assert_eq!(a, make_splits(&c, &spec, 9).unwrap());
        assert_ne!(a, make_splits(&c, &spec, 10).unwrap());
        assert_eq!(a.artists().len(), 5);
    }

    #[test]
    fn insufficient_and_invalid() {
        let c = catalog(&[20, 20, 5]);
        assert!(matches!(
            make_splits(&c, &SplitSpec::fifteen_three_two(Some(3)), 0),
            Err(Error::InsufficientArtists { available: 2, required: 3 })
        ));
        let bad = SplitSpec {
            test: 3,
            ..SplitSpec::default()
        };
        assert!(matches!(make_splits(&c, &bad, 0), Err(Error::InvalidSplit(_))));
    }
}
