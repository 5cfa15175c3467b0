//! Power binning, answer templates, metrics and inference procedures.

mod binning;
mod metrics;
mod predict;
mod template;

pub use binning::BinningScheme;
pub use metrics::{metrics, MetricsReport};
pub use predict::{
    aggregate, persistence, sample_seed, AveragedPrediction, Forecaster, DEFAULT_MAX_NEW, SAMPLE_TEMPERATURE,
};
pub use template::{
    format_value, parse_response, parse_step1, render_answer, split_tasks, step1_prompt, step2_prompt, ForecastResponse,
};
