//! The `artistembed` command line: `synth`, `train`, `extract` and `eval`.
//!
//! Exit status is 0 on success, 2 for bad flags or an invalid run config and
//! 1 for any failure while running.

mod config;

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use artistembed::data::{generate_synthetic_dataset, make_splits, Catalog, Split, SynthSpec};
use artistembed::eval::{
    embed_catalog, evaluate, parse_metrics, write_embeddings, ExportFormat, LabelKind, Metric,
};
use artistembed::model::Checkpoint;
use artistembed::train::{train, TrainMode, TrainOptions};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{Backbone, HeadKind, RunConfig};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const ECHO_FILE: &str = "config.echo.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] artistembed::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "artistembed", version, about = "Artist-label audio embeddings")]
pub struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "ARTISTEMBED_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of WAV files and a catalog.
    Synth(SynthArgs),
    /// Train a model and write model.ckpt, history.csv and config.echo.json.
    Train(TrainArgs),
    /// Write one song-level embedding per catalog track.
    Extract(ExtractArgs),
    /// Score song embeddings with MAP, k-NN and a linear probe.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub artists: usize,
    #[arg(long)]
    pub songs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30.0)]
    pub seconds: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    BasicArtist,
    BasicTag,
    Siamese,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::BasicArtist => TrainMode::BasicArtist,
            ModeArg::BasicTag => TrainMode::BasicTag,
            ModeArg::Siamese => TrainMode::Siamese,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LabelArg {
    Genre,
    Artist,
}

impl From<LabelArg> for LabelKind {
    fn from(l: LabelArg) -> Self {
        match l {
            LabelArg::Genre => LabelKind::Genre,
            LabelArg::Artist => LabelKind::Artist,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Overrides the config's mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    /// `.raw` or `.bin` writes the binary format, anything else CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub label: Option<LabelArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Comma-separated subset of map, knn, probe.
    #[arg(long)]
    pub metrics: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub label: Option<LabelArg>,
    /// Include every query's average precision.
    #[arg(long)]
    pub per_query: bool,
    /// Supplies eval options and the split rule for unsplit catalogs.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parse `args`, run the command and return the exit status. Messages go to
/// stdout on success and stderr otherwise.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<String, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // A pool built earlier in the process stays in place.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            RunConfig::from_json(&text)
        }
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<String, CliError> {
    let spec = SynthSpec {
        clip_seconds: a.seconds,
        ..SynthSpec::new(a.artists, a.songs, a.seed)
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = generate_synthetic_dataset(&spec, &a.out)?;
    let state = if out.generated { "generated" } else { "up to date" };
    Ok(format!(
        "{state}: {} tracks, catalog {}",
        out.catalog.len(),
        out.catalog_path.display()
    ))
}

/// The catalog as used for training and evaluation: given splits are kept,
/// an unsplit catalog is cut by `cfg.split`.
fn split_catalog(catalog: &Catalog, cfg: &RunConfig) -> Result<Catalog, CliError> {
    if catalog.records().iter().any(|r| r.split != Split::Unassigned) {
        return Ok(catalog.clone());
    }
    Ok(make_splits(catalog, &cfg.split, cfg.split_seed)?)
}

pub fn cmd_train(a: &TrainArgs) -> Result<String, CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(m) = a.mode {
        cfg.mode = m.into();
    }
    if let Some(c) = &a.catalog {
        cfg.catalog = Some(c.clone());
    }
    if let Some(o) = &a.out {
        cfg.out_dir = Some(o.clone());
    }
    cfg.validate()?;
    let cfg = cfg.resolved();
    let catalog_path = cfg
        .catalog
        .clone()
        .ok_or_else(|| CliError::Usage("no catalog: pass --catalog or set \"catalog\"".into()))?;
    let out = cfg
        .out_dir
        .clone()
        .ok_or_else(|| CliError::Usage("no output directory: pass --out or set \"out_dir\"".into()))?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(ECHO_FILE), cfg.to_json())?;

    let catalog = split_catalog(&Catalog::load(&catalog_path)?, &cfg)?;
    let opts = TrainOptions {
        checkpoint_dir: Some(out.clone()),
        progress: !a.quiet,
    };
    let outcome = train(&catalog, &cfg.arch.arch(), &cfg.train_config(), &opts)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    outcome.checkpoint.save(&ckpt)?;
    std::fs::write(out.join(HISTORY_FILE), outcome.history.to_csv())?;
    Ok(format!(
        "trained {} for {} epochs (best {}{}), checkpoint {}",
        cfg.mode.as_str(),
        outcome.history.len(),
        outcome.best_epoch,
        if outcome.stopped_early { ", stopped early" } else { "" },
        ckpt.display()
    ))
}

pub fn cmd_extract(a: &ExtractArgs) -> Result<String, CliError> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let catalog = Catalog::load(&a.catalog)?;
    let kind = a.label.map_or_else(|| LabelKind::infer(catalog.records()), Into::into);
    let records: Vec<_> = catalog.records().iter().collect();
    let m = embed_catalog(&ck, &catalog, &records, kind)?;
    write_embeddings(&m, &a.out, ExportFormat::from_path(&a.out))?;
    Ok(format!("{} embeddings of dimension {} written to {}", m.len(), m.dim(), a.out.display()))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String, CliError> {
    let cfg = load_config(a.config.as_deref())?;
    let mut opts = cfg.eval.clone();
    if let Some(m) = &a.metrics {
        opts.metrics = parse_metrics(m).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(k) = a.k {
        opts.k = k;
    }
    if let Some(l) = a.label {
        opts.label = Some(l.into());
    }
    opts.per_query |= a.per_query;
    if opts.k == 0 {
        return Err(CliError::Usage("k must be at least 1".into()));
    }
    let ckpt = a
        .ckpt
        .clone()
        .or_else(|| cfg.checkpoint.clone())
        .ok_or_else(|| CliError::Usage("no checkpoint: pass --ckpt or set \"checkpoint\"".into()))?;
    let catalog_path = a
        .catalog
        .clone()
        .or_else(|| cfg.catalog.clone())
        .ok_or_else(|| CliError::Usage("no catalog: pass --catalog or set \"catalog\"".into()))?;

    let ck = Checkpoint::load(&ckpt)?;
    let catalog = Catalog::load(&catalog_path)?;
    let kind = opts.label.unwrap_or_else(|| LabelKind::infer(catalog.records()));
    let records: Vec<_> = catalog.records().iter().collect();
    let emb = embed_catalog(&ck, &catalog, &records, kind)?;
    // MAP queries every song; only k-NN and the probe need splits.
    let splits: Vec<Split> = if opts.metrics.iter().any(|m| *m != Metric::Map) {
        let cut = split_catalog(&catalog, &cfg)?;
        let by_id: HashMap<&str, Split> =
            cut.records().iter().map(|r| (r.track_id.as_str(), r.split)).collect();
        records
            .iter()
            .map(|r| by_id.get(r.track_id.as_str()).copied().unwrap_or(Split::Unassigned))
            .collect()
    } else {
        records.iter().map(|r| r.split).collect()
    };
    let report = evaluate(&emb, &splits, kind, &opts)?;
    std::fs::write(&a.out, report.to_json()?)?;
    let mut parts = Vec::new();
    if let Some(m) = &report.map {
        parts.push(format!("MAP {:.4}", m.map));
    }
    if let Some(k) = &report.knn {
        parts.push(format!("k-NN (k={}) {:.4}", k.k, k.accuracy));
    }
    if let Some(p) = &report.probe {
        parts.push(format!("probe {:.4}", p.accuracy));
    }
    Ok(format!("{}; report {}", parts.join(", "), a.out.display()))
}
