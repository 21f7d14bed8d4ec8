use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    knn_predict, mean_average_precision, train_linear_probe, EmbeddingMatrix, LabelKind,
    ProbeConfig, DEFAULT_K, KNN_TIE_POLICY,
};
use crate::data::Split;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreakdownRow {
    pub label: String,
    pub support: usize,
    pub correct: usize,
    pub accuracy: f64,
}

/// Per-label accuracy. The support-weighted mean of the rows equals
/// `overall`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Breakdown {
    pub rows: Vec<BreakdownRow>,
    pub overall: f64,
}

pub fn per_genre_breakdown(predictions: &[String], labels: &[String]) -> Result<Breakdown> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::NoReferenceData);
    }
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (p, l) in predictions.iter().zip(labels) {
        let e = counts.entry(l.as_str()).or_default();
        e.0 += 1;
        e.1 += usize::from(p == l);
    }
    let correct: usize = counts.values().map(|c| c.1).sum();
    Ok(Breakdown {
        rows: counts
            .into_iter()
            .map(|(label, (support, correct))| BreakdownRow {
                label: label.to_string(),
                support,
                correct,
                accuracy: correct as f64 / support as f64,
            })
            .collect(),
        overall: correct as f64 / labels.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Map,
    Knn,
    Probe,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "map" => Ok(Metric::Map),
            "knn" => Ok(Metric::Knn),
            "probe" => Ok(Metric::Probe),
            other => Err(Error::Config(format!("unknown metric {other:?} (map, knn, probe)"))),
        }
    }
}

/// Parse a comma-separated metric list, dropping repeats.
pub fn parse_metrics(list: &str) -> Result<Vec<Metric>> {
    let mut out: Vec<Metric> = list.split(',').map(str::parse).collect::<Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub metrics: Vec<Metric>,
    pub k: usize,
    pub probe: ProbeConfig,
    /// `None` picks genre when every song has one.
    pub label: Option<LabelKind>,
    /// Include every query's AP in the report.
    pub per_query: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::Map, Metric::Knn, Metric::Probe],
            k: DEFAULT_K,
            probe: ProbeConfig::default(),
            label: None,
            per_query: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapReport {
    pub map: f64,
    pub queries: usize,
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_query: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnReport {
    pub k: usize,
    pub tie_policy: String,
    pub accuracy: f64,
    pub reference_songs: usize,
    pub query_songs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeReport {
    pub accuracy: f64,
    pub lr: f64,
    pub iterations: usize,
    pub l2: f64,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelAp {
    pub label: String,
    pub queries: usize,
    pub mean_ap: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerGenre {
    pub map: Option<Vec<LabelAp>>,
    pub knn: Option<Breakdown>,
    pub probe: Option<Breakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub checkpoint_digest: String,
    pub label_kind: LabelKind,
    pub songs: usize,
    pub map: Option<MapReport>,
    pub knn: Option<KnnReport>,
    pub probe: Option<ProbeReport>,
    /// Present when the labels are genres.
    pub per_genre: Option<PerGenre>,
    pub config: EvalOptions,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Run the requested protocols. MAP uses every song as a query. k-NN and the
/// probe use train-split songs as reference and test-split songs (val when
/// there are none) as queries.
pub fn evaluate(
    emb: &EmbeddingMatrix,
    splits: &[Split],
    kind: LabelKind,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if splits.len() != emb.len() {
        return Err(Error::Shape(format!("{} splits for {} songs", splits.len(), emb.len())));
    }
    let genre = kind == LabelKind::Genre;
    let mut per_genre = PerGenre::default();
    let mut report = EvalReport {
        checkpoint_digest: emb.source_digest.clone(),
        label_kind: kind,
        songs: emb.len(),
        map: None,
        knn: None,
        probe: None,
        per_genre: None,
        config: opts.clone(),
    };
    if opts.metrics.contains(&Metric::Map) {
        let r = mean_average_precision(emb)?;
        let mut by_label: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (ap, l) in r.per_query.iter().zip(emb.labels()) {
            if let Some(ap) = ap {
                by_label.entry(l).or_default().push(*ap);
            }
        }
        per_genre.map = Some(
            by_label
                .into_iter()
                .map(|(label, aps)| LabelAp {
                    label: label.to_string(),
                    queries: aps.len(),
                    mean_ap: aps.iter().sum::<f64>() / aps.len() as f64,
                })
                .collect(),
        );
        report.map = Some(MapReport {
            map: r.map,
            queries: r.per_query.len() - r.skipped,
            skipped: r.skipped,
            per_query: opts.per_query.then_some(r.per_query),
        });
    }
    let wants_split = opts.metrics.iter().any(|m| *m != Metric::Map);
    if wants_split {
        let pick = |s: Split| -> Vec<usize> { (0..emb.len()).filter(|&i| splits[i] == s).collect() };
        let reference = emb.subset(&pick(Split::Train))?;
        let mut query_idx = pick(Split::Test);
        if query_idx.is_empty() {
            query_idx = pick(Split::Val);
        }
        let queries = emb.subset(&query_idx)?;
        if reference.is_empty() || queries.is_empty() {
            return Err(Error::Config(
                "k-NN and probe need train-split reference songs and test or val queries".into(),
            ));
        }
        if opts.metrics.contains(&Metric::Knn) {
            let pred = knn_predict(&reference, &queries, opts.k)?;
            let b = per_genre_breakdown(&pred, queries.labels())?;
            report.knn = Some(KnnReport {
                k: opts.k,
                tie_policy: KNN_TIE_POLICY.into(),
                accuracy: b.overall,
                reference_songs: reference.len(),
                query_songs: queries.len(),
            });
            per_genre.knn = Some(b);
        }
        if opts.metrics.contains(&Metric::Probe) {
            let r = train_linear_probe(&reference, &queries, &opts.probe)?;
            let b = per_genre_breakdown(&r.predictions, queries.labels())?;
            report.probe = Some(ProbeReport {
                accuracy: r.accuracy,
                lr: opts.probe.lr,
                iterations: opts.probe.iterations,
                l2: opts.probe.l2,
                initial_loss: r.loss_trace[0],
                final_loss: *r.loss_trace.last().expect("non-empty trace"),
            });
            per_genre.probe = Some(b);
        }
    }
    if genre {
        report.per_genre = Some(per_genre);
    }
    Ok(report)
}
