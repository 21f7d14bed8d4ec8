use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::objective::{
    basic_objective, basic_scores, siamese_objective, triplet_losses, Objective, Targets,
};
use super::{plateau_step, EpochRecord, History, PlateauState, TagLoss, TrainConfig, TrainMode};
use crate::data::{
    batch_rng, center_offset, BasicSampler, Catalog, SiameseSampler, Split, TrackStore,
    TripletPlan, Window,
};
use crate::dsp::NormStats;
use crate::error::{Error, Result};
use crate::model::{ArchSpec, ArtistNet, Checkpoint, Head, TrainingMetadata};
use crate::nncore::{Mode, SgdNesterov};

const SALT_SAMPLER: u64 = 1;
const SALT_DROPOUT: u64 = 2;
const SALT_VALIDATION: u64 = 3;

/// File written after every epoch when a checkpoint directory is set.
pub const LAST_GOOD_FILE: &str = "last_good.ckpt";

/// Independent sub-seed for one consumer of the run seed.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Receives [`LAST_GOOD_FILE`] after every completed epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Per-epoch progress lines on stderr.
    pub progress: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the epoch with the lowest validation loss.
    pub checkpoint: Checkpoint,
    pub history: History,
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Triplets skipped over the whole run because of zero embeddings.
    pub skipped_triplets: usize,
}

/// Per-track supervision of the classification models, keyed by catalog
/// index.
#[derive(Debug, Clone)]
enum Labels {
    Classes(BTreeMap<usize, usize>),
    Tags {
        sets: BTreeMap<usize, Vec<usize>>,
        vocab: usize,
        loss: TagLoss,
    },
}

impl Labels {
    fn targets(&self, tracks: impl Iterator<Item = usize>) -> Targets {
        match self {
            Labels::Classes(m) => Targets::Classes(tracks.map(|t| m[&t]).collect()),
            Labels::Tags { sets, vocab, loss } => Targets::Tags {
                sets: tracks.map(|t| sets[&t].clone()).collect(),
                vocab: *vocab,
                loss: *loss,
            },
        }
    }

    fn covers(&self, track: usize) -> bool {
        match self {
            Labels::Classes(m) => m.contains_key(&track),
            Labels::Tags { sets, .. } => sets.contains_key(&track),
        }
    }
}

/// Head, output names and per-track labels for a classification mode. Labels
/// come from the training split; validation tracks with no known label are
/// left out of validation.
fn classification_labels(
    store: &TrackStore,
    cfg: &TrainConfig,
    train: &[usize],
    val: &[usize],
) -> Result<(Head, Vec<String>, Labels)> {
    let records = store.catalog().records();
    let all = train.iter().chain(val);
    match cfg.mode {
        TrainMode::BasicArtist => {
            let mut names: Vec<String> = train.iter().map(|&t| records[t].artist_id.clone()).collect();
            names.sort();
            names.dedup();
            if names.len() < 2 {
                return Err(Error::DegenerateLabels);
            }
            let index: BTreeMap<&str, usize> =
                names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
            let map = all
                .filter_map(|&t| index.get(records[t].artist_id.as_str()).map(|&c| (t, c)))
                .collect();
            Ok((Head::ArtistSoftmax { classes: names.len() }, names.clone(), Labels::Classes(map)))
        }
        TrainMode::BasicTag => {
            let mut names: Vec<String> = train
                .iter()
                .flat_map(|&t| records[t].tags.iter().flatten().cloned())
                .collect();
            names.sort();
            names.dedup();
            if names.is_empty() {
                return Err(Error::Config("no tags on training tracks".into()));
            }
            let index: BTreeMap<&str, usize> =
                names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
            let sets = all
                .map(|&t| {
                    let mut s: Vec<usize> = records[t]
                        .tags
                        .iter()
                        .flatten()
                        .filter_map(|tag| index.get(tag.as_str()).copied())
                        .collect();
                    s.sort_unstable();
                    s.dedup();
                    (t, s)
                })
                .collect();
            let labels = Labels::Tags {
                sets,
                vocab: names.len(),
                loss: cfg.tag_loss,
            };
            Ok((Head::Tag { tags: names.len() }, names.clone(), labels))
        }
        TrainMode::Siamese => Ok((Head::None, Vec::new(), Labels::Classes(BTreeMap::new()))),
    }
}

/// Infer-mode embeddings of `windows`, `chunk` windows per forward pass.
pub fn embed_windows(
    net: &ArtistNet<f32>,
    store: &TrackStore,
    windows: &[Window],
    stats: &NormStats,
    chunk: usize,
) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(windows.len());
    for part in windows.chunks(chunk.max(1)) {
        let mels = store.window_mels(part, stats)?;
        let refs: Vec<_> = mels.iter().collect();
        out.extend(net.embed_mels(&refs)?);
    }
    Ok(out)
}

enum Task {
    Basic {
        sampler: BasicSampler,
        labels: Labels,
        val: Vec<Window>,
    },
    Siamese {
        sampler: SiameseSampler,
        val: TripletPlan,
    },
}

/// Train a fresh network of backbone `arch` (its head is replaced to suit
/// the mode) on the catalog's train split, validating on its val split.
///
/// Normalization statistics come from the training tracks only. The learning
/// rate follows the plateau policy on validation loss, training stops after
/// `early_stop_patience` epochs without a new best validation loss, and the
/// returned checkpoint holds the best epoch's weights.
pub fn train(
    catalog: &Catalog,
    arch: &ArchSpec,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let store = TrackStore::open(catalog.clone())?;
    let train_idx = store.indices(Split::Train);
    let val_idx = store.indices(Split::Val);
    if train_idx.is_empty() {
        return Err(Error::NoTrainingData);
    }
    if val_idx.is_empty() {
        return Err(Error::Config("catalog has no validation tracks".into()));
    }
    let stats = store.norm_stats(&train_idx)?;
    let (head, names, labels) = classification_labels(&store, &cfg, &train_idx, &val_idx)?;
    let mut net = ArtistNet::<f32>::build(arch.clone().with_head(head), cfg.seed)?;
    net.set_dropout(cfg.dropout)?;
    net.set_bn_momentum(cfg.bn_momentum)?;

    let sampler_seed = derive_seed(cfg.seed, SALT_SAMPLER);
    let task = match cfg.mode {
        TrainMode::Siamese => {
            let sampler = SiameseSampler::new(&store, &train_idx, cfg.n_neg, sampler_seed)?;
            // Validation anchors are the val tracks; positives and negatives
            // may come from either split.
            let mut pool = train_idx.clone();
            pool.extend(&val_idx);
            let val_sampler = SiameseSampler::new(&store, &pool, cfg.n_neg, sampler_seed)?;
            let anchors: Vec<usize> = val_idx
                .iter()
                .copied()
                .filter(|&t| {
                    let a = val_sampler.artist_of(t);
                    pool.iter().filter(|&&u| val_sampler.artist_of(u) == a).count() >= 2
                })
                .collect();
            if anchors.is_empty() {
                return Err(Error::Config("no validation track has a same-artist partner".into()));
            }
            let val = val_sampler.plan_fixed(&anchors, derive_seed(cfg.seed, SALT_VALIDATION))?;
            Task::Siamese { sampler, val }
        }
        _ => {
            let sampler = BasicSampler::new(&store, train_idx.clone(), sampler_seed)?;
            let mut val = Vec::new();
            for &t in &val_idx {
                if labels.covers(t) {
                    val.push((t, center_offset(store.track_len(t))?));
                } else {
                    log::warn!("validation track {} has no training label", catalog.records()[t].track_id);
                }
            }
            if val.is_empty() {
                return Err(Error::Config("no labelled validation tracks".into()));
            }
            Task::Basic { sampler, labels, val }
        }
    };

    let steps = cfg.steps_for(train_idx.len());
    let dropout_seed = derive_seed(cfg.seed, SALT_DROPOUT);
    let mut opt = SgdNesterov::<f32>::new(cfg.lr(), cfg.momentum, cfg.decay);
    let mut plateau = PlateauState::new(cfg.lr());
    let mut history = History::default();
    let mut best: Option<(f64, usize, ArtistNet<f32>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut skipped_triplets = 0;
    let last_good = opts.checkpoint_dir.as_ref().map(|d| d.join(LAST_GOOD_FILE));
    let metadata = |epoch: usize, history: &History| TrainingMetadata {
        seed: cfg.seed,
        epoch,
        mode: cfg.mode.as_str().into(),
        loss_history_digest: history.digest(),
        labels: names.clone(),
    };

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let lr = opt.lr();
        let mut loss_sum = 0.0;
        for step in 0..steps {
            let global = ((epoch - 1) * steps + step) as u64;
            let mut rng = batch_rng(dropout_seed, global);
            let result = match &task {
                Task::Basic { sampler, labels, .. } => {
                    let plan = sampler.plan(global, cfg.batch_size)?;
                    let x = batch_tensor(&net, &store, &plan, &stats)?;
                    let targets = labels.targets(plan.iter().map(|w| w.0));
                    basic_objective(&net, &x, &targets, Mode::Train, &mut rng)
                }
                Task::Siamese { sampler, .. } => {
                    let plan = sampler.plan(global, cfg.batch_size)?;
                    let x = batch_tensor(&net, &store, &plan.windows(), &stats)?;
                    siamese_objective(
                        &net,
                        &x,
                        cfg.batch_size,
                        cfg.n_neg,
                        cfg.margin,
                        cfg.siamese_dropout,
                        Mode::Train,
                        &mut rng,
                    )
                }
            };
            let diverged = || Error::Divergence {
                epoch,
                step,
                last_good: last_good.clone().filter(|p| p.exists()),
            };
            let obj: Objective<f32> = match result {
                Ok(o) => o,
                Err(Error::NumericalFailure(msg)) => {
                    log::error!("{msg}");
                    return Err(diverged());
                }
                Err(e) => return Err(e),
            };
            if !obj.loss.is_finite() || obj.grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(diverged());
            }
            if obj.skipped > 0 {
                log::warn!("epoch {epoch} step {step}: skipped {} triplet(s) with a zero embedding", obj.skipped);
                skipped_triplets += obj.skipped;
            }
            net.commit_batch_stats(&obj.cache);
            let grads: Vec<&[f32]> = obj.grads.iter().map(Vec::as_slice).collect();
            opt.step(&mut net.params_mut(), &grads)?;
            loss_sum += obj.loss;
        }
        let train_loss = loss_sum / steps as f64;
        let (val_loss, val_acc) = match &task {
            Task::Basic { labels, val, .. } => {
                let (mut total, mut hits) = (0.0, 0);
                for part in val.chunks(cfg.batch_size) {
                    let x = batch_tensor(&net, &store, part, &stats)?;
                    let (l, h) = basic_scores(&net, &x, &labels.targets(part.iter().map(|w| w.0)))?;
                    total += l;
                    hits += h;
                }
                (total / val.len() as f64, Some(hits as f64 / val.len() as f64))
            }
            Task::Siamese { val, .. } => {
                let emb = embed_windows(&net, &store, &val.windows(), &stats, cfg.batch_size)?;
                let losses = triplet_losses(&emb, val.batch_size(), cfg.n_neg, cfg.margin)?;
                let defined: Vec<f64> = losses.into_iter().flatten().collect();
                if defined.is_empty() {
                    return Err(Error::NumericalFailure("every validation triplet was undefined".into()));
                }
                (defined.iter().sum::<f64>() / defined.len() as f64, None)
            }
        };
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step: steps,
                last_good: last_good.clone().filter(|p| p.exists()),
            });
        }
        opt.set_lr(plateau_step(&mut plateau, val_loss, &cfg.plateau));
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_acc,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });
        if opts.progress {
            let acc = val_acc.map(|a| format!(" val_acc {a:.4}")).unwrap_or_default();
            eprintln!(
                "epoch {epoch}/{} train_loss {train_loss:.4} val_loss {val_loss:.4}{acc} lr {lr:.3e}",
                cfg.max_epochs
            );
        }
        if let Some(path) = &last_good {
            save_atomic(&Checkpoint::new(net.clone(), stats, metadata(epoch, &history)), path)?;
        }
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, net.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (_, best_epoch, best_net) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(best_net, stats, metadata(best_epoch, &history)),
        history,
        best_epoch,
        stopped_early,
        skipped_triplets,
    })
}

fn batch_tensor(
    net: &ArtistNet<f32>,
    store: &TrackStore,
    windows: &[Window],
    stats: &NormStats,
) -> Result<crate::nncore::Tensor<f32>> {
    let mels = store.window_mels(windows, stats)?;
    let refs: Vec<_> = mels.iter().collect();
    net.batch_input(&refs)
}

fn save_atomic(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    ck.save(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

