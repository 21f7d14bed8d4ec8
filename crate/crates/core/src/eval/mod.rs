//! Song-level embeddings and the retrieval and classification protocols
//! run on them: mean average precision, k-NN and a linear probe.

mod embed;
mod probe;
mod report;
mod retrieval;

pub use embed::{
    decode_raw, embed_catalog, encode_raw, extract_song_embedding, write_embeddings,
    EmbeddingMatrix, ExportFormat, LabelKind, SONG_SEGMENTS,
};
pub use probe::{train_linear_probe, LinearProbe, ProbeConfig, ProbeResult};
pub use report::{
    evaluate, parse_metrics, per_genre_breakdown, Breakdown, BreakdownRow, EvalOptions,
    EvalReport, KnnReport, LabelAp, MapReport, Metric, PerGenre, ProbeReport,
};
pub use retrieval::{
    average_precision, cosine, knn_classify, knn_predict, mean_average_precision, ranked_list,
    MapResult, DEFAULT_K, KNN_TIE_POLICY,
};
