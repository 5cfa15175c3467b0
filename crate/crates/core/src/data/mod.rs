//! Synthetic load/PV/wind corpora, dataset files, splits and example building.

mod dataset;
mod examples;
mod scenario;
mod split;
mod synth;

pub use dataset::{fmt_num, read_meta, round4, Dataset, DatasetMeta, Row, DATA_FILE, META_FILE, TIMESTAMP_FORMAT};
pub use examples::{forecast_example, guidance_bank, to_examples, windows, ModePlan, WindowSample};
pub use scenario::{transition_text, Scenario, ScenarioSpec, SparseEvent, Weather};
pub use split::{split, SplitPolicy};
pub use synth::{clear_sky, generate, generate_with_events, start_time, EventRecord, DEFAULT_BINS};
