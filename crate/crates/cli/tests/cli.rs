use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use artistembed::data::synth::write_song;
use artistembed::data::{Catalog, Split, TrackRecord};
use artistembed::eval::{decode_raw, EmbeddingMatrix, EvalReport};
use artistembed::model::Checkpoint;
use artistembed::train::History;
use artistembed_cli::RunConfig;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_artistembed"))
        .args(args)
        .env_remove("ARTISTEMBED_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 10 artists x 4 songs of 3.1 s.
fn dataset(dir: &Path) -> PathBuf {
    let out = dir.join("data");
    let o = bin(&["synth", "--artists", "10", "--songs", "4", "--seed", "5", "--seconds", "3.1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    out.join("catalog.jsonl")
}

/// Small and fast; everything not listed keeps its default.
fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(
        &path,
        r#"{
            "arch": {"channels": [8, 8, 8, 8, 16], "embedding_dim": 16},
            "batch_size": 6,
            "max_epochs": 2,
            "steps_per_epoch": 2,
            "seed": 3,
            "split": {"songs_per_artist": 4, "train": 2, "val": 1, "test": 1}
        }"#,
    )
    .unwrap();
    path
}

fn csv_without_seconds(path: &Path) -> Vec<Vec<String>> {
    History::from_csv(&std::fs::read_to_string(path).unwrap())
        .unwrap()
        .records
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                format!("{:?}", r.val_acc),
                r.lr.to_string(),
            ]
        })
        .collect()
}

#[test]
fn synth_reports_counts_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let args = ["synth", "--artists", "20", "--songs", "20", "--seed", "7", "--seconds", "3", "--out", s(&out)];
    let first = bin(&args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert!(stdout(&first).contains("400 tracks"), "{}", stdout(&first));
    assert!(stdout(&first).starts_with("generated"));
    let before = Catalog::load(&out.join("catalog.jsonl")).unwrap().digest();
    let wav = std::fs::read(out.join("audio/a000_s000.wav")).unwrap();

    let second = bin(&args);
    assert_eq!(second.status.code(), Some(0));
    assert!(stdout(&second).contains("up to date"), "{}", stdout(&second));
    assert_eq!(Catalog::load(&out.join("catalog.jsonl")).unwrap().digest(), before);
    assert_eq!(std::fs::read(out.join("audio/a000_s000.wav")).unwrap(), wav);
}

#[test]
fn bad_flags_exit_two() {
    let o = bin(&["synth", "--artists", "2", "--songs", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--out"), "{}", stderr(&o));
    assert_eq!(bin(&["synth", "--artists", "x", "--songs", "2", "--out", "/tmp/x"]).status.code(), Some(2));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bin(&["--threads", "0", "synth", "--artists", "1", "--songs", "1", "--out", "/tmp/x"]).status.code(), Some(2));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["extract", "--ckpt", s(&dir.path().join("none.ckpt")), "--catalog", "/nonexistent", "--out", "/tmp/e.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let catalog = dataset(dir.path());
    let o = bin(&["extract", "--ckpt", s(&bad), "--catalog", s(&catalog), "--out", "/tmp/e.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
}

#[test]
fn conflicting_mode_and_head_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"head": "none"}"#).unwrap();
    let out = dir.path().join("run");
    let o = bin(&["train", "--mode", "basic-artist", "--catalog", "/unused", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("conflicts with mode basic_artist"), "{}", stderr(&o));
    assert!(!out.exists());

    std::fs::write(&cfg, r#"{"margn": 0.4}"#).unwrap();
    let o = bin(&["train", "--catalog", "/unused", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("margn"), "{}", stderr(&o));
}

#[test]
fn default_echo_carries_margin_negatives_and_mode_rates() {
    let json = RunConfig::default().resolved().to_json();
    assert!(json.contains("\"margin\": 0.4"), "{json}");
    assert!(json.contains("\"negatives\": 4"), "{json}");
    assert!(json.contains("\"lr\": 0.015"), "{json}");
    assert!(json.contains("\"k\": 20"), "{json}");
    assert!(json.contains("\"n_mels\": 128"), "{json}");
    assert!(json.contains("\"window_seconds\": 3.0"), "{json}");
    assert!(json.contains("\"dropout\": 0.5"), "{json}");
}

#[test]
fn siamese_train_writes_outputs_and_echo_replays() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = dataset(dir.path());
    let cfg = small_config(dir.path());
    let out = dir.path().join("run1");
    let o = bin(&["train", "--mode", "siamese", "--catalog", s(&catalog), "--config", s(&cfg), "--out", s(&out), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["model.ckpt", "history.csv", "config.echo.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let echo = std::fs::read_to_string(out.join("config.echo.json")).unwrap();
    assert!(echo.contains("\"lr\": 0.1,"), "{echo}");
    assert!(echo.contains("\"margin\": 0.4"), "{echo}");
    assert!(echo.contains("\"negatives\": 4"), "{echo}");
    assert!(echo.contains("\"head\": \"none\""), "{echo}");

    // The echo alone determines the run.
    let out2 = dir.path().join("run2");
    let o = bin(&["train", "--config", s(&out.join("config.echo.json")), "--out", s(&out2), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(csv_without_seconds(&out.join("history.csv")), csv_without_seconds(&out2.join("history.csv")));
    let a = Checkpoint::load(&out.join("model.ckpt")).unwrap();
    let b = Checkpoint::load(&out2.join("model.ckpt")).unwrap();
    assert_eq!(a.digest().unwrap(), b.digest().unwrap());
    let echo2 = std::fs::read_to_string(out2.join("config.echo.json")).unwrap();
    let (mut c1, c2) = (RunConfig::from_json(&echo).unwrap(), RunConfig::from_json(&echo2).unwrap());
    c1.out_dir = c2.out_dir.clone();
    assert_eq!(c1, c2);
}

#[test]
fn extract_and_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = dataset(dir.path());
    let cfg = small_config(dir.path());
    let run = dir.path().join("run");
    let o = bin(&["train", "--mode", "basic-artist", "--catalog", s(&catalog), "--config", s(&cfg), "--out", s(&run), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ckpt = run.join("model.ckpt");

    let csv = dir.path().join("emb.csv");
    let o = bin(&["--threads", "1", "extract", "--ckpt", s(&ckpt), "--catalog", s(&catalog), "--out", s(&csv)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = EmbeddingMatrix::from_csv(&std::fs::read_to_string(&csv).unwrap()).unwrap();
    assert_eq!((m.len(), m.dim()), (40, 16));
    let raw = dir.path().join("emb.raw");
    let o = bin(&["extract", "--ckpt", s(&ckpt), "--catalog", s(&catalog), "--out", s(&raw), "--label", "artist"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(decode_raw(&std::fs::read(&raw).unwrap()).unwrap(), m.rows());

    let report = dir.path().join("report.json");
    let o = Command::new(env!("CARGO_BIN_EXE_artistembed"))
        .args(["eval", "--ckpt", s(&ckpt), "--catalog", s(&catalog), "--metrics", "knn", "--config", s(&cfg), "--out", s(&report)])
        .env("ARTISTEMBED_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("\"k\": 20"), "{text}");
    let r: EvalReport = serde_json::from_str(&text).unwrap();
    assert!(r.map.is_none() && r.probe.is_none());
    let knn = r.knn.unwrap();
    assert_eq!((knn.reference_songs, knn.query_songs), (20, 10));
    assert!(r.per_genre.unwrap().knn.is_some());
    assert_eq!(r.checkpoint_digest, Checkpoint::load(&ckpt).unwrap().digest().unwrap());

    let o = bin(&["eval", "--ckpt", s(&ckpt), "--catalog", s(&catalog), "--metrics", "map,probe", "--config", s(&cfg), "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: EvalReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(r.map.is_some() && r.probe.is_some() && r.knn.is_none());
    assert_eq!(r.map.unwrap().queries, 40);

    let o = bin(&["eval", "--ckpt", s(&ckpt), "--catalog", s(&catalog), "--metrics", "map,auc", "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn map_on_two_same_genre_songs_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let catalog = dataset(dir.path());
    let cfg = small_config(dir.path());
    let run = dir.path().join("run");
    let o = bin(&["train", "--catalog", s(&catalog), "--config", s(&cfg), "--out", s(&run), "--quiet"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let two = dir.path().join("two");
    std::fs::create_dir_all(&two).unwrap();
    let records: Vec<TrackRecord> = (0..2)
        .map(|i| {
            let rel = format!("t{i}.wav");
            write_song(&two.join(&rel), 11, i, i, 3.5).unwrap();
            TrackRecord {
                track_id: format!("t{i}"),
                artist_id: format!("x{i}"),
                audio_path: rel.into(),
                genre: Some("folk".into()),
                tags: None,
                split: Split::Unassigned,
            }
        })
        .collect();
    Catalog::new(records, two.clone()).unwrap().save(&two.join("catalog.jsonl")).unwrap();
    let report = dir.path().join("r.json");
    let o = bin(&[
        "eval", "--ckpt", s(&run.join("model.ckpt")), "--catalog", s(&two.join("catalog.jsonl")),
        "--metrics", "map", "--per-query", "--out", s(&report),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r: EvalReport = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let map = r.map.unwrap();
    assert_eq!(map.map, 1.0);
    assert_eq!(map.per_query, Some(vec![Some(1.0), Some(1.0)]));
    assert_eq!(r.per_genre.unwrap().map.unwrap()[0].label, "folk");
}
