//! Similarity-based hallucination checks, ANOVA stability analysis and the
//! task-weight sweep.

mod anova;
mod similarity;
mod sweep;

pub use anova::{anova, f_survival, stability_run, write_anova_csv, AnovaReport, StabilityConfig, StabilityInput};
pub use similarity::{
    classify, cosine, sentence_embed, similarity, span_hallucinations, SentenceEmbedding, SimilarityReport,
    DEFAULT_THRESHOLD,
};
pub use sweep::{sweep, write_sweep_csv, CellResult, SweepRow};
