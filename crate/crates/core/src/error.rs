use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("index {index} out of range (limit {limit}) in {context}")]
    Index {
        index: usize,
        limit: usize,
        context: &'static str,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("degenerate channel {channel}: standard deviation is zero")]
    DegenerateChannel { channel: usize },

    #[error("sequence length {len} exceeds maximum {max}")]
    Length { len: usize, max: usize },

    #[error("rank {rank} exceeds adapted layer dimension {limit}")]
    Rank { rank: usize, limit: usize },

    #[error("value {value} outside admissible range [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },

    #[error("within-group variance is zero; F statistic undefined")]
    ZeroWithinVariance,

    #[error("all {0} samples were non-conforming")]
    HallucinationStorm(usize),

    #[error("{excluded} of {total} outputs were non-conforming; model is unstable")]
    UnstableModel { excluded: usize, total: usize },

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Divergence { epoch: usize, step: usize, loss: f32 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("argument extraction failed for {function}: missing slot `{slot}`")]
    ArgumentExtraction { function: String, slot: String },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
