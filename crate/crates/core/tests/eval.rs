use artistembed::data::{generate_synthetic_dataset, SynthSpec};
use artistembed::dsp::{log_mel, standardize, AudioClip, NormStats, CONTEXT_SAMPLES, SAMPLE_RATE};
use artistembed::eval::{
    average_precision, cosine, embed_catalog, evaluate, extract_song_embedding, knn_classify,
    mean_average_precision, train_linear_probe, EmbeddingMatrix, EvalOptions, EvalReport,
    LabelKind, Metric, ProbeConfig,
};
use artistembed::model::{ArchSpec, ArtistNet, Checkpoint, TrainingMetadata};
use artistembed::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn net() -> ArtistNet<f32> {
    let spec = ArchSpec {
        channels: vec![8, 8, 8, 8, 16],
        embedding_dim: 16,
        ..ArchSpec::default()
    };
    ArtistNet::build(spec, 4).unwrap()
}

fn stats() -> NormStats {
    NormStats::new(-6.0, 3.0).unwrap()
}

fn noise(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-0.3..0.3)).collect()
}

#[test]
fn song_embedding_is_the_mean_of_ten_windows() {
    let net = net();
    let clip = AudioClip::new(noise(10 * CONTEXT_SAMPLES + 777, 1), SAMPLE_RATE).unwrap();
    let got = extract_song_embedding(&clip, &net, &stats()).unwrap();
    let mut expect = vec![0f64; 16];
    for i in 0..10 {
        let w = AudioClip::new(
            clip.samples()[i * CONTEXT_SAMPLES..(i + 1) * CONTEXT_SAMPLES].to_vec(),
            SAMPLE_RATE,
        )
        .unwrap();
        let mel = standardize(&log_mel(&w).unwrap(), &stats()).unwrap();
        for (e, v) in expect.iter_mut().zip(net.forward_embedding(&mel).unwrap()) {
            *e += f64::from(v) / 10.0;
        }
    }
    for (g, e) in got.iter().zip(&expect) {
        assert!((f64::from(*g) - e).abs() < 1e-6, "{g} vs {e}");
    }
}

#[test]
fn repeated_window_equals_single_window() {
    let net = net();
    let one = noise(CONTEXT_SAMPLES, 2);
    let repeated: Vec<f32> = one.iter().copied().cycle().take(10 * CONTEXT_SAMPLES).collect();
    let clip = AudioClip::new(repeated, SAMPLE_RATE).unwrap();
    let single = AudioClip::new(one, SAMPLE_RATE).unwrap();
    let a = extract_song_embedding(&clip, &net, &stats()).unwrap();
    let b = extract_song_embedding(&single, &net, &stats()).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn short_clips() {
    let net = net();
    let clip = AudioClip::new(noise(CONTEXT_SAMPLES - 1, 3), SAMPLE_RATE).unwrap();
    assert!(matches!(
        extract_song_embedding(&clip, &net, &stats()),
        Err(Error::ClipTooShort { .. })
    ));
    // 7.5 s: two segments, the tail ignored
    let samples = noise(CONTEXT_SAMPLES * 5 / 2, 4);
    let two = AudioClip::new(samples[..2 * CONTEXT_SAMPLES].to_vec(), SAMPLE_RATE).unwrap();
    let longer = AudioClip::new(samples, SAMPLE_RATE).unwrap();
    assert_eq!(
        extract_song_embedding(&longer, &net, &stats()).unwrap(),
        extract_song_embedding(&two, &net, &stats()).unwrap()
    );
}

#[test]
fn catalog_embedding_is_order_independent_and_reports_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        clip_seconds: 6.0,
        ..SynthSpec::new(10, 4, 3)
    };
    let catalog = generate_synthetic_dataset(&spec, dir.path()).unwrap().catalog;
    let ck = Checkpoint::new(net(), stats(), TrainingMetadata::default());
    let recs: Vec<_> = catalog.records().iter().collect();
    let kind = LabelKind::infer(catalog.records());
    assert_eq!(kind, LabelKind::Genre);
    let fwd = embed_catalog(&ck, &catalog, &recs, kind).unwrap();
    let rev: Vec<_> = recs.iter().rev().copied().collect();
    let back = embed_catalog(&ck, &catalog, &rev, kind).unwrap();
    for (i, row) in fwd.rows().iter().enumerate() {
        assert_eq!(row, &back.rows()[recs.len() - 1 - i]);
    }
    assert_eq!(fwd.source_digest, ck.digest().unwrap());

    // songs 0-1 reference, 2 val, 3 test for every artist
    let splits: Vec<_> = catalog
        .records()
        .iter()
        .map(|r| match r.track_id.chars().last().unwrap() {
            '0' | '1' => artistembed::data::Split::Train,
            '2' => artistembed::data::Split::Val,
            _ => artistembed::data::Split::Test,
        })
        .collect();
    let opts = EvalOptions {
        k: 5,
        ..EvalOptions::default()
    };
    let report = evaluate(&fwd, &splits, kind, &opts).unwrap();
    let json = report.to_json().unwrap();
    let parsed: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed, report);
    let knn = report.knn.as_ref().unwrap();
    assert_eq!((knn.k, knn.reference_songs, knn.query_songs), (5, 20, 10));
    for acc in [report.map.as_ref().unwrap().map, knn.accuracy, report.probe.as_ref().unwrap().accuracy] {
        assert!((0.0..=1.0).contains(&acc));
    }
    let pg = report.per_genre.as_ref().unwrap();
    for b in [pg.knn.as_ref().unwrap(), pg.probe.as_ref().unwrap()] {
        let total: usize = b.rows.iter().map(|r| r.support).sum();
        let weighted: f64 = b.rows.iter().map(|r| r.accuracy * r.support as f64).sum::<f64>() / total as f64;
        assert!((weighted - b.overall).abs() < 1e-9);
    }

    let only_map = EvalOptions {
        metrics: vec![Metric::Map],
        ..EvalOptions::default()
    };
    let r = evaluate(&fwd, &splits, kind, &only_map).unwrap();
    assert!(r.knn.is_none() && r.probe.is_none() && r.map.is_some());
    assert_eq!(EvalOptions::default().k, 20);
}

#[test]
fn probe_on_shuffled_labels_is_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let classes = 5;
    let make = |n: usize, rng: &mut ChaCha8Rng| {
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut labels: Vec<String> = (0..n).map(|i| format!("g{}", i % classes)).collect();
        labels.shuffle(rng);
        (rows, labels)
    };
    let (tr, trl) = make(500, &mut rng);
    let (te, tel) = make(500, &mut rng);
    let ids = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let train = EmbeddingMatrix::new(ids("a", 500), trl, tr).unwrap();
    let test = EmbeddingMatrix::new(ids("b", 500), tel, te).unwrap();
    let r = train_linear_probe(&train, &test, &ProbeConfig::default()).unwrap();
    assert!((r.accuracy - 1.0 / classes as f64).abs() <= 0.1, "{}", r.accuracy);
    assert!(r.loss_trace.windows(2).all(|w| w[1] < w[0]));
}

fn instance() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<usize>)> {
    (2usize..40, 1usize..6, 1usize..6).prop_flat_map(|(n, dim, labels)| {
        (
            proptest::collection::vec(proptest::collection::vec(-3i8..4, dim), n)
                .prop_map(|rows| rows.into_iter().map(|r| r.into_iter().map(f32::from).collect()).collect()),
            proptest::collection::vec(0..labels, n),
        )
    })
}

fn matrix(rows: Vec<Vec<f32>>, labels: &[usize]) -> EmbeddingMatrix {
    let ids = (0..rows.len()).map(|i| format!("s{i:03}")).collect();
    EmbeddingMatrix::new(ids, labels.iter().map(|l| format!("l{l}")).collect(), rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn map_bounded_and_scale_invariant((rows, labels) in instance(), pow in -6i32..7) {
        // powers of two keep every cosine bit-identical, so ties survive scaling
        let scale = 2f32.powi(pow);
        let m = matrix(rows.clone(), &labels);
        let scaled = matrix(rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect(), &labels);
        match (mean_average_precision(&m), mean_average_precision(&scaled)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((0.0..=1.0).contains(&a.map));
                for (x, y) in a.per_query.iter().zip(&b.per_query) {
                    match (x, y) {
                        (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                        (None, None) => {}
                        _ => prop_assert!(false, "skip mismatch"),
                    }
                }
            }
            (Err(Error::NoRelevantPairs), Err(Error::NoRelevantPairs)) => {}
            other => prop_assert!(false, "{:?}", other.0.map(|r| r.map)),
        }
    }

    #[test]
    fn ap_is_one_iff_relevant_items_lead(rel in proptest::collection::vec(any::<bool>(), 1..30)) {
        let n = rel.iter().filter(|&&r| r).count();
        prop_assume!(n > 0);
        let ap = average_precision(&rel, n).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        let leading = rel.iter().take_while(|&&r| r).count() == n;
        prop_assert_eq!(ap == 1.0, leading);
    }

    #[test]
    fn knn_one_returns_own_label((rows, labels) in instance(), pick in any::<prop::sample::Index>()) {
        let m = matrix(rows.clone(), &labels);
        let i = pick.index(rows.len());
        prop_assume!(rows[i].iter().any(|&v| v != 0.0));
        // a colinear song may share the top score and win on its smaller id
        let scores: Vec<f64> = rows.iter().map(|r| cosine(&rows[i], r)).collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..rows.len()).filter(|&j| scores[j] == best).collect();
        prop_assert!(tied.contains(&i) || best - scores[i] < 1e-12);
        let got = knn_classify(&m, &rows[i], 1).unwrap();
        let first = tied.iter().min_by_key(|&&j| &m.ids()[j]).unwrap();
        prop_assert_eq!(&got, &m.labels()[*first]);
        if tied == [i] {
            prop_assert_eq!(&got, &m.labels()[i]);
        }
    }
}
