use std::path::Path;

use artistembed::data::{
    batch_rng, generate_synthetic_dataset, make_splits, BasicSampler, Catalog, Split, SplitSpec,
    SynthSpec, TrackStore,
};
use artistembed::dsp::{standardize, Matrix, MelSpectrogram, NormStats};
use artistembed::model::{ArchSpec, ArtistNet, Head};
use artistembed::nncore::{grad_check, Dropout, Mode, SgdNesterov, Tensor};
use artistembed::train::{
    basic_objective, derive_seed, siamese_columns, siamese_objective, train, triplet_mask,
    SiameseDropout, TagLoss, Targets, TrainConfig, TrainMode, TrainOptions, LAST_GOOD_FILE,
};
use artistembed::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full-size input, narrow channels: quick to train on one core.
fn narrow_spec() -> ArchSpec {
    ArchSpec {
        channels: vec![8, 8, 8, 8, 16],
        embedding_dim: 16,
        ..ArchSpec::default()
    }
}

fn tiny_spec(head: Head) -> ArchSpec {
    ArchSpec {
        n_mels: 4,
        context_frames: 8,
        channels: vec![3, 5],
        kernels: vec![3, 4],
        pools: vec![4, 2],
        embedding_dim: 5,
        head,
    }
}

fn split_dataset(dir: &Path) -> Catalog {
    let spec = SynthSpec {
        clip_seconds: 6.0,
        ..SynthSpec::new(6, 5, 21)
    };
    let catalog = generate_synthetic_dataset(&spec, dir).unwrap().catalog;
    let split = SplitSpec {
        songs_per_artist: 5,
        train: 3,
        val: 1,
        test: 1,
        artist_set_size: None,
    };
    make_splits(&catalog, &split, 4).unwrap()
}

fn quick(mode: TrainMode, epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 6,
        max_epochs: epochs,
        steps_per_epoch: Some(2),
        seed: 9,
        ..TrainConfig::for_mode(mode)
    }
}

fn noise_mels(n: usize, seed: u64) -> Vec<MelSpectrogram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v = (0..128 * 128).map(|_| rng.random_range(-2.0..2.0)).collect();
            let raw = MelSpectrogram::new(Matrix::from_vec(128, 128, v).unwrap(), false).unwrap();
            standardize(&raw, &NormStats::identity()).unwrap()
        })
        .collect()
}

#[test]
fn zero_learning_rate_leaves_weights_and_matches_direct_loss() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = split_dataset(dir.path());
    let cfg = TrainConfig {
        initial_lr: Some(0.0),
        ..quick(TrainMode::BasicArtist, 3)
    };
    let out = train(&catalog, &narrow_spec(), &cfg, &TrainOptions::default()).unwrap();
    let head = Head::ArtistSoftmax { classes: 6 };
    let fresh = ArtistNet::<f32>::build(narrow_spec().with_head(head), cfg.seed).unwrap();
    assert_eq!(out.checkpoint.net.flat_params(), fresh.flat_params());
    assert_eq!(out.history.len(), 3);
    assert!(out.history.records.iter().all(|r| r.lr == 0.0));

    // epoch 1 = batches 0 and 1 through the untrained net
    let store = TrackStore::open(catalog.clone()).unwrap();
    let train_idx = store.indices(Split::Train);
    let stats = store.norm_stats(&train_idx).unwrap();
    assert_eq!(out.checkpoint.norm_stats, stats);
    let sampler = BasicSampler::new(&store, train_idx, derive_seed(cfg.seed, 1)).unwrap();
    let labels = &out.checkpoint.metadata.labels;
    let mut net = fresh;
    net.set_dropout(cfg.dropout).unwrap();
    let mut total = 0.0;
    for step in 0..2u64 {
        let plan = sampler.plan(step, 6).unwrap();
        let mels = store.window_mels(&plan, &stats).unwrap();
        let x = net.batch_input(&mels.iter().collect::<Vec<_>>()).unwrap();
        let targets = Targets::Classes(
            plan.iter()
                .map(|w| {
                    let a = &catalog.records()[w.0].artist_id;
                    labels.iter().position(|l| l == a).unwrap()
                })
                .collect(),
        );
        let mut rng = batch_rng(derive_seed(cfg.seed, 2), step);
        total += basic_objective(&net, &x, &targets, Mode::Train, &mut rng).unwrap().loss;
    }
    let first = out.history.records[0].train_loss;
    assert!((first - total / 2.0).abs() < 1e-12, "{first} vs {}", total / 2.0);
}

#[test]
fn runs_are_deterministic_and_return_the_best_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = split_dataset(dir.path());
    let cfg = quick(TrainMode::BasicArtist, 4);
    let a = train(&catalog, &narrow_spec(), &cfg, &TrainOptions::default()).unwrap();
    let b = train(&catalog, &narrow_spec(), &cfg, &TrainOptions::default()).unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
    for (x, y) in a.history.records.iter().zip(&b.history.records) {
        assert_eq!(
            (x.epoch, x.train_loss, x.val_loss, x.val_acc, x.lr),
            (y.epoch, y.train_loss, y.val_loss, y.val_acc, y.lr)
        );
    }
    let best = a.history.best_val_loss().unwrap();
    assert_eq!(a.history.records[a.best_epoch - 1].val_loss, best);
    assert_eq!(a.checkpoint.metadata.epoch, a.best_epoch);
    assert_eq!(a.checkpoint.metadata.mode, "basic_artist");
    assert!(a.history.records.iter().all(|r| r.val_acc.is_some()));
}

#[test]
fn early_stop_fires_after_patience() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = split_dataset(dir.path());
    // A rate this high makes validation loss erratic.
    let cfg = TrainConfig {
        initial_lr: Some(0.5),
        early_stop_patience: 2,
        ..quick(TrainMode::BasicArtist, 30)
    };
    let out = train(&catalog, &narrow_spec(), &cfg, &TrainOptions::default()).unwrap();
    assert!(out.stopped_early);
    let n = out.history.len();
    assert!(n < 30);
    assert_eq!(n, out.best_epoch + 2);
    let best = out.history.records[out.best_epoch - 1].val_loss;
    assert!(out.history.records.iter().all(|r| r.val_loss >= best));
    assert!(out.history.records.windows(2).all(|w| w[1].lr <= w[0].lr));
}

#[test]
fn tag_mode_trains_on_a_three_tag_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = split_dataset(dir.path());
    let vocab = ["bright", "dark", "noisy"];
    let records = catalog
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut r = r.clone();
            r.tags = Some(vec![vocab[i % 3].into(), vocab[(i / 3) % 3].into()]);
            r
        })
        .collect();
    let catalog = catalog.with_records(records).unwrap();
    for loss in [TagLoss::MultiLabel, TagLoss::Softmax] {
        let cfg = TrainConfig {
            tag_loss: loss,
            ..quick(TrainMode::BasicTag, 2)
        };
        let out = train(&catalog, &narrow_spec(), &cfg, &TrainOptions::default()).unwrap();
        assert_eq!(out.checkpoint.net.head_size(), Some(3));
        assert_eq!(out.checkpoint.metadata.labels, vocab);
        assert_eq!(out.history.len(), 2);
        assert!(out.history.records.iter().all(|r| r.train_loss.is_finite()));
    }
}

#[test]
fn siamese_run_writes_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = split_dataset(dir.path());
    let ck = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        checkpoint_dir: Some(ck.path().to_path_buf()),
        progress: false,
    };
    let cfg = TrainConfig {
        batch_size: 4,
        ..quick(TrainMode::Siamese, 2)
    };
    let out = train(&catalog, &narrow_spec(), &cfg, &opts).unwrap();
    assert!(out.checkpoint.net.head.is_none());
    assert!(out.history.records.iter().all(|r| r.val_acc.is_none() && r.lr == 0.1));
    assert!(ck.path().join(LAST_GOOD_FILE).exists());
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = split_dataset(dir.path());
    let cfg = TrainConfig {
        initial_lr: Some(1e30),
        ..quick(TrainMode::BasicArtist, 5)
    };
    match train(&catalog, &narrow_spec(), &cfg, &TrainOptions::default()) {
        Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
        other => panic!("{:?}", other.map(|o| o.history)),
    }
}

#[test]
fn too_few_artists_for_siamese() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        clip_seconds: 4.0,
        ..SynthSpec::new(4, 3, 1)
    };
    let catalog = generate_synthetic_dataset(&spec, dir.path()).unwrap().catalog;
    let split = SplitSpec {
        songs_per_artist: 3,
        train: 2,
        val: 1,
        test: 0,
        artist_set_size: None,
    };
    let catalog = make_splits(&catalog, &split, 0).unwrap();
    let cfg = quick(TrainMode::Siamese, 1);
    assert!(matches!(
        train(&catalog, &narrow_spec(), &cfg, &TrainOptions::default()),
        Err(Error::InsufficientArtists { available: 4, required: 5 })
    ));
}

#[test]
fn untrained_siamese_loss_is_within_the_hinge_bound() {
    let net = ArtistNet::<f32>::build(ArchSpec::default(), 3).unwrap();
    let (batch, n_neg) = (4, 4);
    let mels = noise_mels(siamese_columns(batch, n_neg), 5);
    let x = net.batch_input(&mels.iter().collect::<Vec<_>>()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for mode in [Mode::Train, Mode::Infer] {
        let obj = siamese_objective(&net, &x, batch, n_neg, 0.4, SiameseDropout::PerTriplet, mode, &mut rng).unwrap();
        assert!(obj.loss >= 0.0 && obj.loss <= 4.0 * (0.4 + 2.0), "{}", obj.loss);
    }
}

fn frozen_batch_losses(mode: TrainMode) -> Vec<f64> {
    let mut net = ArtistNet::<f32>::build(
        ArchSpec::default().with_head(match mode {
            TrainMode::Siamese => Head::None,
            _ => Head::ArtistSoftmax { classes: 4 },
        }),
        11,
    )
    .unwrap();
    if mode == TrainMode::Siamese {
        // the fixed mask would otherwise let the hinge reach zero early
        net.set_dropout(0.0).unwrap();
    }
    let (batch, n_neg) = (16, 4);
    let n = match mode {
        TrainMode::Siamese => siamese_columns(batch, n_neg),
        _ => 8,
    };
    let mut mels = noise_mels(n, 6);
    if mode == TrainMode::Siamese {
        // Negatives are near-copies of their anchor and the positive is
        // unrelated, so the hinge cannot be satisfied within 100 small steps.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..batch {
            for j in 0..n_neg {
                let v = mels[i]
                    .values()
                    .as_slice()
                    .iter()
                    .map(|a| a + rng.random_range(-0.2..0.2))
                    .collect();
                let m = MelSpectrogram::new(Matrix::from_vec(128, 128, v).unwrap(), false).unwrap();
                mels[2 * batch + i * n_neg + j] = standardize(&m, &NormStats::identity()).unwrap();
            }
        }
    }
    let x = net.batch_input(&mels.iter().collect::<Vec<_>>()).unwrap();
    let targets = Targets::Classes((0..8).map(|i| i % 4).collect());
    let mut opt = SgdNesterov::<f32>::new(1e-3, 0.9, 1e-6);
    let mut losses = Vec::new();
    for _ in 0..=100 {
        // fixed dropout mask: same generator state every step
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let obj = match mode {
            TrainMode::Siamese => {
                siamese_objective(&net, &x, batch, n_neg, 0.4, SiameseDropout::PerTriplet, Mode::Train, &mut rng).unwrap()
            }
            _ => basic_objective(&net, &x, &targets, Mode::Train, &mut rng).unwrap(),
        };
        losses.push(obj.loss);
        let grads: Vec<&[f32]> = obj.grads.iter().map(Vec::as_slice).collect();
        opt.step(&mut net.params_mut(), &grads).unwrap();
    }
    losses
}

#[test]
fn frozen_batch_loss_strictly_decreases_for_both_trainers() {
    for mode in [TrainMode::BasicArtist, TrainMode::Siamese] {
        let losses = frozen_batch_losses(mode);
        for (i, w) in losses.windows(2).enumerate() {
            assert!(w[1] < w[0], "{mode:?} step {i}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn siamese_composite_gradient_matches_finite_differences() {
    let (batch, n_neg) = (2, 4);
    let cols = siamese_columns(batch, n_neg);
    for masks in [SiameseDropout::PerTriplet, SiameseDropout::PerBranch] {
        let mut checked = 0;
        for seed in 0..20u64 {
            let net = ArtistNet::<f64>::build(tiny_spec(Head::None), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let x = Tensor::new(
                vec![4, cols, 8],
                (0..4 * cols * 8).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let eval = |n: &ArtistNet<f64>| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                siamese_objective(n, &x, batch, n_neg, 0.4, masks, Mode::Train, &mut rng)
            };
            let obj = match eval(&net) {
                Ok(o) if o.skipped == 0 => o,
                _ => continue,
            };
            if obj.cache.min_kink_distance() < 1e-3 {
                continue;
            }
            let analytic: Vec<f64> = obj.grads.concat();
            let err = grad_check(
                |p| {
                    let mut n = net.clone();
                    n.set_flat_params(p)?;
                    Ok(eval(&n)?.loss)
                },
                &net.flat_params(),
                &analytic,
                None,
            )
            .unwrap();
            assert!(err < 1e-4, "{masks:?} seed {seed}: {err}");
            checked += 1;
        }
        assert!(checked >= 5, "{masks:?}: only {checked} kink-free points");
    }
}

#[test]
fn triplet_mask_is_shared_within_a_triplet() {
    let (dim, batch, n_neg) = (64, 3, 4);
    let cols = siamese_columns(batch, n_neg);
    let drop = Dropout::new(0.5).unwrap();
    let mask: Vec<f32> = triplet_mask(drop, dim, batch, n_neg, &mut ChaCha8Rng::seed_from_u64(1));
    let column = |c: usize| (0..dim).map(|k| mask[k * cols + c]).collect::<Vec<_>>();
    for i in 0..batch {
        let a = column(i);
        assert!(a.iter().all(|&m| m == 0.0 || m == 2.0));
        assert_eq!(column(batch + i), a);
        for j in 0..n_neg {
            assert_eq!(column(2 * batch + i * n_neg + j), a);
        }
    }
    assert_ne!(column(0), column(1));
}

#[test]
fn shared_mask_keeps_identical_branches_at_full_relevance() {
    let net = ArtistNet::<f64>::build(tiny_spec(Head::None), 4).unwrap();
    let (batch, n_neg) = (2, 4);
    let cols = siamese_columns(batch, n_neg);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut data: Vec<f64> = (0..4 * cols * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
    // positive input = anchor input, negatives = anchor input too
    for ch in 0..4 {
        for i in 0..batch {
            let anchor: Vec<f64> = data[(ch * cols + i) * 8..(ch * cols + i + 1) * 8].to_vec();
            let mut copy_to = vec![batch + i];
            copy_to.extend((0..n_neg).map(|j| 2 * batch + i * n_neg + j));
            for c in copy_to {
                data[(ch * cols + c) * 8..(ch * cols + c + 1) * 8].copy_from_slice(&anchor);
            }
        }
    }
    let x = Tensor::new(vec![4, cols, 8], data).unwrap();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obj = siamese_objective(&net, &x, batch, n_neg, 0.4, SiameseDropout::PerTriplet, Mode::Train, &mut rng)
            .unwrap();
        if obj.skipped > 0 {
            continue;
        }
        // every negative ties the positive: each hinge is exactly the margin
        assert!((obj.loss - 4.0 * 0.4).abs() < 1e-9, "{}", obj.loss);
    }
}
