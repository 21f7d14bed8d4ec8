use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Catalog, Split};
use crate::dsp::wav::{read_wav, read_wav_window, wav_len};
use crate::dsp::{log_mel, standardize, AudioClip, MelSpectrogram, NormAccumulator, NormStats};
use crate::dsp::CONTEXT_SAMPLES;
use crate::error::{Error, Result};

fn too_short(len: usize) -> Error {
    Error::ClipShorterThanContext {
        len,
        context: CONTEXT_SAMPLES,
    }
}

/// Uniform start offset in `[0, len - 66150]`.
pub fn draw_offset<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<usize> {
    if len < CONTEXT_SAMPLES {
        return Err(too_short(len));
    }
    Ok(rng.random_range(0..=len - CONTEXT_SAMPLES))
}

/// Offset of the window centred in the clip (rounded down).
pub fn center_offset(len: usize) -> Result<usize> {
    if len < CONTEXT_SAMPLES {
        return Err(too_short(len));
    }
    Ok((len - CONTEXT_SAMPLES) / 2)
}

/// A uniformly placed 3 s excerpt of `clip`.
pub fn sample_context_window<R: Rng + ?Sized>(clip: &AudioClip, rng: &mut R) -> Result<AudioClip> {
    let offset = draw_offset(clip.len(), rng)?;
    clip.slice(offset, CONTEXT_SAMPLES)
}

/// Generator for batch `index`: a fixed stream of the seeded ChaCha generator,
/// so batch contents never depend on how many batches came before.
pub fn batch_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A window request: catalog record index and sample offset.
pub type Window = (usize, usize);

/// Catalog plus the sample count of every track, read from WAV headers.
#[derive(Debug, Clone)]
pub struct TrackStore {
    catalog: Catalog,
    lens: Vec<usize>,
}

impl TrackStore {
    /// Fails on the first track whose audio is unreadable, nonconforming, or
    /// shorter than a context window.
    pub fn open(catalog: Catalog) -> Result<Self> {
        let lens = catalog
            .records()
            .iter()
            .map(|r| {
                let len = wav_len(&catalog.resolve(r)).map_err(|e| e.for_track(&r.track_id))?;
                if len < CONTEXT_SAMPLES {
                    return Err(too_short(len).for_track(&r.track_id));
                }
                Ok(len)
            })
            .collect::<Result<_>>()?;
        Ok(Self { catalog, lens })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn track_len(&self, idx: usize) -> usize {
        self.lens[idx]
    }

    /// Record indices in `split`.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.catalog.len())
            .filter(|&i| self.catalog.records()[i].split == split)
            .collect()
    }

    pub fn full_clip(&self, idx: usize) -> Result<AudioClip> {
        let r = &self.catalog.records()[idx];
        read_wav(&self.catalog.resolve(r)).map_err(|e| e.for_track(&r.track_id))
    }

    /// Standardized log-mel of the 3 s window starting at `offset`.
    pub fn window_mel(&self, (idx, offset): Window, stats: &NormStats) -> Result<MelSpectrogram> {
        let r = &self.catalog.records()[idx];
        let run = || {
            let clip = read_wav_window(&self.catalog.resolve(r), offset, CONTEXT_SAMPLES)?;
            standardize(&log_mel(&clip)?, stats)
        };
        run().map_err(|e| e.for_track(&r.track_id))
    }

    pub fn window_mels(&self, windows: &[Window], stats: &NormStats) -> Result<Vec<MelSpectrogram>> {
        windows.iter().map(|&w| self.window_mel(w, stats)).collect()
    }

    /// Pooled statistics of the full-clip log-mels of `indices`, streamed one
    /// track at a time.
    pub fn norm_stats(&self, indices: &[usize]) -> Result<NormStats> {
        let mut acc = NormAccumulator::default();
        for &i in indices {
            let clip = self.full_clip(i)?;
            let r = &self.catalog.records()[i];
            acc.push(&log_mel(&clip).map_err(|e| e.for_track(&r.track_id))?)?;
        }
        acc.finish()
    }
}

/// Uniform track sampling for the classification models.
#[derive(Debug, Clone)]
pub struct BasicSampler {
    tracks: Vec<usize>,
    lens: Vec<usize>,
    seed: u64,
}

impl BasicSampler {
    pub fn new(store: &TrackStore, tracks: Vec<usize>, seed: u64) -> Result<Self> {
        if tracks.is_empty() {
            return Err(Error::NoTrainingData);
        }
        let lens = tracks.iter().map(|&t| store.track_len(t)).collect();
        Ok(Self { tracks, lens, seed })
    }

    /// `batch_size` tracks drawn uniformly with replacement, each with a
    /// uniform window offset.
    pub fn plan(&self, index: u64, batch_size: usize) -> Result<Vec<Window>> {
        let mut rng = batch_rng(self.seed, index);
        (0..batch_size)
            .map(|_| {
                let k = rng.random_range(0..self.tracks.len());
                Ok((self.tracks[k], draw_offset(self.lens[k], &mut rng)?))
            })
            .collect()
    }
}

/// Anchor / positive / negatives for one batch, as windows plus the artist
/// of every entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletPlan {
    pub anchors: Vec<Window>,
    pub positives: Vec<Window>,
    /// `negatives[i]` holds anchor `i`'s negatives.
    pub negatives: Vec<Vec<Window>>,
    pub anchor_artists: Vec<usize>,
    pub positive_artists: Vec<usize>,
    pub negative_artists: Vec<Vec<usize>>,
}

impl TripletPlan {
    pub fn batch_size(&self) -> usize {
        self.anchors.len()
    }

    /// All windows in the order anchors, positives, then negatives
    /// anchor-major.
    pub fn windows(&self) -> Vec<Window> {
        let mut out = self.anchors.clone();
        out.extend(&self.positives);
        out.extend(self.negatives.iter().flatten());
        out
    }

    /// Positive shares the anchor's artist but not its track; the negatives
    /// are distinct artists other than the anchor's.
    pub fn check_invariants(&self) -> bool {
        (0..self.anchors.len()).all(|i| {
            let a = self.anchor_artists[i];
            let negs = &self.negative_artists[i];
            let mut sorted = negs.clone();
            sorted.sort_unstable();
            sorted.dedup();
            self.positive_artists[i] == a
                && self.positives[i].0 != self.anchors[i].0
                && sorted.len() == negs.len()
                && negs.iter().all(|&n| n != a)
                && self.negatives[i].len() == negs.len()
        })
    }
}

/// Negative-sampling triplets for the Siamese model.
#[derive(Debug, Clone)]
pub struct SiameseSampler {
    by_artist: Vec<Vec<usize>>,
    artist_of: BTreeMap<usize, usize>,
    anchors: Vec<usize>,
    lens: BTreeMap<usize, usize>,
    n_neg: usize,
    seed: u64,
}

impl SiameseSampler {
    /// Artists with a single track never serve as anchors (a warning is
    /// logged once); they may still be drawn as negatives.
    pub fn new(store: &TrackStore, tracks: &[usize], n_neg: usize, seed: u64) -> Result<Self> {
        let listing: Vec<(usize, &str, usize)> = tracks
            .iter()
            .map(|&t| {
                (
                    t,
                    store.catalog().records()[t].artist_id.as_str(),
                    store.track_len(t),
                )
            })
            .collect();
        Self::from_listing(&listing, n_neg, seed)
    }

    /// Build from `(track index, artist id, sample count)` triples.
    pub fn from_listing(listing: &[(usize, &str, usize)], n_neg: usize, seed: u64) -> Result<Self> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for &(t, artist, _) in listing {
            groups.entry(artist).or_default().push(t);
        }
        let by_artist: Vec<Vec<usize>> = groups.into_values().collect();
        if by_artist.len() < n_neg + 1 {
            return Err(Error::InsufficientArtists {
                available: by_artist.len(),
                required: n_neg + 1,
            });
        }
        let singles = by_artist.iter().filter(|g| g.len() < 2).count();
        if singles > 0 {
            log::warn!("{singles} artist(s) with a single track excluded from anchors");
        }
        let mut artist_of = BTreeMap::new();
        let mut anchors = Vec::new();
        for (a, g) in by_artist.iter().enumerate() {
            for &t in g {
                artist_of.insert(t, a);
                if g.len() >= 2 {
                    anchors.push(t);
                }
            }
        }
        if anchors.is_empty() {
            return Err(Error::InsufficientArtists {
                available: 0,
                required: 1,
            });
        }
        let lens = listing.iter().map(|&(t, _, len)| (t, len)).collect();
        Ok(Self {
            by_artist,
            artist_of,
            anchors,
            lens,
            n_neg,
            seed,
        })
    }

    pub fn n_artists(&self) -> usize {
        self.by_artist.len()
    }

    /// Sampler-local artist index of `track`.
    pub fn artist_of(&self, track: usize) -> Option<usize> {
        self.artist_of.get(&track).copied()
    }

    pub fn plan(&self, index: u64, batch_size: usize) -> Result<TripletPlan> {
        let mut rng = batch_rng(self.seed, index);
        self.plan_with(&mut rng, batch_size, |t, rng| draw_offset(self.lens[&t], rng))
    }

    /// Deterministic sweep over `anchors` with centred windows, used for
    /// validation: anchor `i` of the sweep is `anchors[i]`.
    pub fn plan_fixed(&self, anchors: &[usize], seed: u64) -> Result<TripletPlan> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut plan = self.empty_plan(anchors.len());
        for &a in anchors {
            self.push_triplet(&mut plan, a, &mut rng, &mut |t, _| center_offset(self.lens[&t]))?;
        }
        Ok(plan)
    }

    fn empty_plan(&self, n: usize) -> TripletPlan {
        TripletPlan {
            anchors: Vec::with_capacity(n),
            positives: Vec::with_capacity(n),
            negatives: Vec::with_capacity(n),
            anchor_artists: Vec::with_capacity(n),
            positive_artists: Vec::with_capacity(n),
            negative_artists: Vec::with_capacity(n),
        }
    }

    fn plan_with<R, O>(&self, rng: &mut R, batch_size: usize, mut offset: O) -> Result<TripletPlan>
    where
        R: Rng,
        O: FnMut(usize, &mut R) -> Result<usize>,
    {
        let mut plan = self.empty_plan(batch_size);
        for _ in 0..batch_size {
            let anchor = *self.anchors.choose(rng).expect("nonempty");
            self.push_triplet(&mut plan, anchor, rng, &mut offset)?;
        }
        Ok(plan)
    }

    fn push_triplet<R, O>(
        &self,
        plan: &mut TripletPlan,
        anchor: usize,
        rng: &mut R,
        offset: &mut O,
    ) -> Result<()>
    where
        R: Rng,
        O: FnMut(usize, &mut R) -> Result<usize>,
    {
        let a = *self
            .artist_of
            .get(&anchor)
            .ok_or_else(|| Error::Shape(format!("track {anchor} is not in the sampler")))?;
        let group = &self.by_artist[a];
        if group.len() < 2 {
            return Err(Error::InsufficientArtists {
                available: group.len(),
                required: 2,
            });
        }
        let positive = loop {
            let p = *group.choose(rng).expect("nonempty");
            if p != anchor {
                break p;
            }
        };
        let mut others: Vec<usize> = (0..self.by_artist.len()).filter(|&x| x != a).collect();
        others.shuffle(rng);
        others.truncate(self.n_neg);
        let negs: Vec<usize> = others
            .iter()
            .map(|&n| *self.by_artist[n].choose(rng).expect("nonempty"))
            .collect();

        plan.anchors.push((anchor, offset(anchor, rng)?));
        plan.positives.push((positive, offset(positive, rng)?));
        let mut neg_windows = Vec::with_capacity(negs.len());
        for &t in &negs {
            neg_windows.push((t, offset(t, rng)?));
        }
        plan.negatives.push(neg_windows);
        plan.anchor_artists.push(a);
        plan.positive_artists.push(a);
        plan.negative_artists.push(others);
        Ok(())
    }
}
