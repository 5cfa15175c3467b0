use chrono::NaiveDateTime;

use super::dataset::Dataset;
use super::scenario::Scenario;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::forecast::{render_answer, step1_prompt, BinningScheme};
use crate::prefix::NormalizationParams;
use crate::trainer::TrainingExample;

/// One sliding window and the quantities it predicts.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// Index of the target row.
    pub row: usize,
    pub timestamp: NaiveDateTime,
    pub hour: u32,
    pub target: f64,
    pub class: usize,
    /// Weather text of the target row.
    pub weather: String,
    /// Target of the last row inside the window.
    pub last_target: f64,
    /// Normalized `T × C` window.
    pub window: Tensor,
}

/// Windows of `window` rows predicting the target `horizon` steps after the
/// last row, normalized with `norm`.
pub fn windows(
    ds: &Dataset,
    window: usize,
    horizon: usize,
    scheme: &BinningScheme,
    norm: &NormalizationParams,
) -> Result<Vec<WindowSample>> {
    if window == 0 || horizon == 0 {
        return Err(Error::Config("window and horizon must be positive".into()));
    }
    if ds.len() < window + horizon {
        return Err(Error::Length {
            len: window + horizon,
            max: ds.len(),
        });
    }
    let mut out = Vec::with_capacity(ds.len() + 1 - window - horizon);
    for start in 0..=ds.len() - window - horizon {
        let row = start + window - 1 + horizon;
        let r = &ds.rows[row];
        out.push(WindowSample {
            row,
            timestamp: r.timestamp,
            hour: r.hour(),
            target: r.target,
            class: scheme.bin_power(r.target.min(scheme.rated()))?,
            weather: r.weather.clone(),
            last_target: ds.rows[start + window - 1].target,
            window: norm.apply(&ds.matrix(start..start + window)?)?,
        });
    }
    Ok(out)
}

pub fn forecast_example(scenario: Scenario, s: &WindowSample, value: f64, weight: f32) -> TrainingExample {
    TrainingExample::multimodal(
        s.window.clone(),
        step1_prompt(scenario.name(), s.hour),
        render_answer(s.class, value, scenario.unit()),
        weight,
    )
}

/// How many text-only examples to mix in per multimodal example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModePlan {
    pub text_ratio: f64,
}

impl Default for ModePlan {
    fn default() -> Self {
        ModePlan { text_ratio: 0.1 }
    }
}

/// Operational-guidance question/answer pairs for a scenario.
pub fn guidance_bank(scenario: Scenario, capacity: f64) -> Vec<(String, String)> {
    let s = scenario.name();
    let cap = crate::forecast::format_value(capacity);
    vec![
        (
            "what does interval mean".into(),
            "interval is the power class from 0 to 100 of rated capacity".into(),
        ),
        (
            "what does value mean".into(),
            format!("value is the forecast {s} power in kW"),
        ),
        (format!("what is the rated capacity of the {s} plant"), format!("the rated capacity is {cap} kW")),
        ("what does class 0 mean".into(), "class 0 means zero power output".into()),
        ("how should i read a forecast".into(), "read the interval first and then the value".into()),
        (
            "which features matter for pv power".into(),
            "sunlight and weather type matter most for pv power".into(),
        ),
        (
            "which features matter for load".into(),
            "temperature dew point wind speed and holidays matter for load".into(),
        ),
        (
            "which features matter for wind power".into(),
            "wind speed and wind direction matter for wind power".into(),
        ),
    ]
}

/// Multimodal examples from every window, with guidance pairs interleaved
/// evenly at `plan.text_ratio` per multimodal example.
pub fn to_examples(
    ds: &Dataset,
    window: usize,
    horizon: usize,
    scheme: &BinningScheme,
    norm: &NormalizationParams,
    weight: f32,
    plan: ModePlan,
) -> Result<Vec<TrainingExample>> {
    let scenario = ds.meta.scenario;
    let samples = windows(ds, window, horizon, scheme, norm)?;
    let bank = guidance_bank(scenario, ds.meta.capacity);
    let n_text = (samples.len() as f64 * plan.text_ratio).round() as usize;
    let mut out = Vec::with_capacity(samples.len() + n_text);
    let mut placed = 0;
    for (i, s) in samples.iter().enumerate() {
        out.push(forecast_example(scenario, s, s.target, weight));
        while placed < n_text && (placed * samples.len()) <= i * n_text {
            let (q, a) = &bank[placed % bank.len()];
            out.push(TrainingExample::text(q.clone(), a.clone()));
            placed += 1;
        }
    }
    Ok(out)
}
