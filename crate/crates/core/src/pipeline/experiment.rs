//! Forecast evaluation, the task-weight sweep cell, the two-step CoT
//! experiment and stability inputs.

use std::io::Write;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;

use super::{encode_all, fpeft};
use crate::autodiff::Tensor;
use crate::data::{forecast_example, guidance_bank, Scenario, WindowSample, TIMESTAMP_FORMAT};
use crate::diagnostics::{similarity, CellResult, StabilityInput, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::forecast::{
    format_value, render_answer, split_tasks, step1_prompt, step2_prompt, BinningScheme, Forecaster,
};
use crate::model::{Decode, Model, TrainMask};
use crate::text::{tokenize, Vocabulary};
use crate::trainer::{train, LossCurve, TrainConfig, TrainingExample};

static CLASS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^interval: (\d{1,6}) ;$").expect("static pattern"));
static VALUE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^value: (-?\d+\.\d{2}) [A-Za-z]+$").expect("static pattern"));

/// Class and value read from each task span separately, so a response with
/// one malformed span still yields the other.
pub fn parse_spans(text: &str) -> (Option<usize>, Option<f64>) {
    let (a, b) = split_tasks(text);
    (
        CLASS.captures(&a).and_then(|c| c[1].parse().ok()),
        VALUE.captures(&b).and_then(|c| c[1].parse().ok()),
    )
}

/// One evaluated window.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub timestamp: chrono::NaiveDateTime,
    pub truth: f64,
    pub class: Option<usize>,
    /// Interval midpoint of `class`.
    pub class_median: Option<f64>,
    pub value: Option<f64>,
    pub conforming: bool,
    pub raw: String,
    /// Class span of the free generation fails the similarity check.
    pub hp_c: bool,
    /// Continuation after the reference class span fails the check.
    pub hp_r: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<PredictionRow>,
    /// MAE of interval midpoints over rows with a parsed class.
    pub mae_c: f64,
    /// MAE of regression values over rows with a parsed value.
    pub mae_r: f64,
    pub hp_c_pct: f64,
    pub hp_r_pct: f64,
    pub conforming_pct: f64,
    pub accuracy_pct: f64,
    /// Last value in the window carried forward.
    pub persistence_mae: f64,
}

fn mae(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in pairs {
        sum += (a - b).abs();
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn pct(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total.max(1) as f64
}

/// Greedy step-1 forecasts for every sample.
pub fn evaluate(
    model: &Model,
    vocab: &Vocabulary,
    scenario: Scenario,
    samples: &[WindowSample],
    scheme: &BinningScheme,
) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    let f = Forecaster::new(model, vocab);
    let table = &model.base.embed;
    let rows: Vec<PredictionRow> = samples
        .par_iter()
        .map(|s| {
            let prompt = f.prompt_ids(&step1_prompt(scenario.name(), s.hour));
            let (_, raw) = f.generate_ids(Some(&s.window), &prompt, Decode::Greedy, 0)?;
            let (class, value) = parse_spans(&raw);
            let expected = render_answer(s.class, s.target, scenario.unit());
            let (e1, e2) = split_tasks(&expected);
            // The regression span is scored on a continuation of the reference
            // class span, so a broken class span does not mask it.
            let mut forced = prompt;
            forced.extend(tokenize(&e1, vocab).ids);
            let (_, cont) = f.generate_ids(Some(&s.window), &forced, Decode::Greedy, 0)?;
            let h1 = similarity(&e1, &split_tasks(&raw).0, table, vocab, DEFAULT_THRESHOLD)?;
            let h2 = similarity(&e2, cont.trim(), table, vocab, DEFAULT_THRESHOLD)?;
            let class_median = class.and_then(|c| scheme.decode_class(c).ok());
            Ok(PredictionRow {
                timestamp: s.timestamp,
                truth: s.target,
                class,
                class_median,
                value,
                conforming: crate::forecast::parse_response(&raw).conforming(),
                raw,
                hp_c: h1.is_hallucination,
                hp_r: h2.is_hallucination,
            })
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    Ok(Evaluation {
        mae_c: mae(rows.iter().filter_map(|r| r.class_median.map(|m| (m, r.truth)))),
        mae_r: mae(rows.iter().filter_map(|r| r.value.map(|v| (v, r.truth)))),
        hp_c_pct: pct(rows.iter().filter(|r| r.hp_c).count(), n),
        hp_r_pct: pct(rows.iter().filter(|r| r.hp_r).count(), n),
        conforming_pct: pct(rows.iter().filter(|r| r.conforming).count(), n),
        accuracy_pct: pct(
            rows.iter().zip(samples).filter(|(r, s)| r.class == Some(s.class)).count(),
            n,
        ),
        persistence_mae: mae(samples.iter().map(|s| (s.last_target, s.target))),
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(format_value).unwrap_or_default()
}

/// `timestamp,true,pred_class,pred_class_median,pred_reg,conforming` rows.
pub fn write_predictions_csv<W: Write>(rows: &[PredictionRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "true", "pred_class", "pred_class_median", "pred_reg", "conforming"])?;
    for r in rows {
        w.write_record([
            r.timestamp.format(TIMESTAMP_FORMAT).to_string(),
            format_value(r.truth),
            r.class.map(|c| c.to_string()).unwrap_or_default(),
            opt(r.class_median),
            opt(r.value),
            (r.conforming as u8).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("prediction csv", e))
}

/// Multimodal examples at task weight `weight`, with guidance pairs mixed in
/// at `text_ratio` per multimodal example.
pub fn forecast_corpus(
    scenario: Scenario,
    capacity: f64,
    samples: &[WindowSample],
    weight: f32,
    text_ratio: f64,
) -> Vec<TrainingExample> {
    let bank = guidance_bank(scenario, capacity);
    let n_text = (samples.len() as f64 * text_ratio).round() as usize;
    let mut out: Vec<TrainingExample> = samples
        .iter()
        .map(|s| forecast_example(scenario, s, s.target, weight))
        .collect();
    out.extend((0..n_text).map(|i| {
        let (q, a) = &bank[i % bank.len()];
        TrainingExample::text(q.clone(), a.clone())
    }));
    out
}

/// Settings shared by experiment cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellConfig {
    pub train: TrainConfig,
    pub rank: usize,
    pub text_ratio: f64,
}

/// F-PEFT at task weight `w`, then evaluation on `test`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_cell(
    base: &Model,
    vocab: &Vocabulary,
    scenario: Scenario,
    scheme: &BinningScheme,
    train_set: &[WindowSample],
    test: &[WindowSample],
    cfg: &CellConfig,
    w: f64,
    seed: u64,
) -> Result<CellResult> {
    let tc = TrainConfig {
        weight: w as f32,
        seed,
        ..cfg.train.clone()
    };
    let data = forecast_corpus(scenario, scheme.rated(), train_set, tc.weight, cfg.text_ratio);
    let (model, _) = fpeft(base, &encode_all(&data, vocab)?, &tc, cfg.rank)?;
    let e = evaluate(&model, vocab, scenario, test, scheme)?;
    Ok(CellResult {
        mae_c: e.mae_c,
        mae_r: e.mae_r,
        hp_c: e.hp_c_pct,
        hp_r: e.hp_r_pct,
    })
}

/// Regression value of a response, falling back to the class midpoint, and
/// to 0 when neither parses.
pub fn point_forecast(text: &str, scheme: &BinningScheme) -> f64 {
    let (class, value) = parse_spans(text);
    value
        .or_else(|| class.and_then(|c| scheme.decode_class(c).ok()))
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CotRow {
    pub timestamp: chrono::NaiveDateTime,
    pub weather: String,
    pub truth: f64,
    pub step1: String,
    pub step2: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CotReport {
    pub rows: Vec<CotRow>,
    pub step1_mae: f64,
    pub step2_mae: f64,
}

/// Greedy two-step inference with each sample's own weather text.
pub fn cot_evaluate(
    model: &Model,
    vocab: &Vocabulary,
    scenario: Scenario,
    samples: &[WindowSample],
    scheme: &BinningScheme,
) -> Result<CotReport> {
    if samples.is_empty() {
        return Err(Error::Empty("CoT samples"));
    }
    let f = Forecaster::new(model, vocab);
    let rows: Vec<CotRow> = samples
        .par_iter()
        .map(|s| {
            let (a, b) = f.cot_infer(Some(&s.window), &step1_prompt(scenario.name(), s.hour), &s.weather)?;
            Ok(CotRow {
                timestamp: s.timestamp,
                weather: s.weather.clone(),
                truth: s.target,
                step1: a.raw,
                step2: b.raw,
            })
        })
        .collect::<Result<_>>()?;
    let step1_mae = mae(rows.iter().map(|r| (point_forecast(&r.step1, scheme), r.truth)));
    let step2_mae = mae(rows.iter().map(|r| (point_forecast(&r.step2, scheme), r.truth)));
    Ok(CotReport {
        rows,
        step1_mae,
        step2_mae,
    })
}

/// Step-2 examples: the model's own greedy step-1 answer and the target
/// row's weather text in the prompt, the true answer as continuation.
pub fn step2_examples(
    model: &Model,
    vocab: &Vocabulary,
    scenario: Scenario,
    samples: &[WindowSample],
    weight: f32,
) -> Result<Vec<TrainingExample>> {
    let f = Forecaster::new(model, vocab);
    samples
        .par_iter()
        .map(|s| {
            let p1 = step1_prompt(scenario.name(), s.hour);
            let first = f.generate_text(Some(&s.window), &p1, Decode::Greedy, 0)?;
            Ok(TrainingExample::multimodal(
                s.window.clone(),
                step2_prompt(&p1, &first, &s.weather),
                render_answer(s.class, s.target, scenario.unit()),
                weight,
            ))
        })
        .collect()
}

/// Two-stage CoT training: F-PEFT on step-1 examples, then the same adapter
/// and prefix continue on step-1 plus step-2 examples built from `cot_set`.
pub fn train_cot(
    base: &Model,
    vocab: &Vocabulary,
    scenario: Scenario,
    capacity: f64,
    train_set: &[WindowSample],
    cot_set: &[WindowSample],
    cfg: &CellConfig,
) -> Result<(Model, LossCurve, LossCurve)> {
    let step1 = forecast_corpus(scenario, capacity, train_set, cfg.train.weight, cfg.text_ratio);
    let (model, c1) = fpeft(base, &encode_all(&step1, vocab)?, &cfg.train, cfg.rank)?;
    let mut mixed = step2_examples(&model, vocab, scenario, cot_set, cfg.train.weight)?;
    mixed.extend(
        cot_set
            .iter()
            .map(|s| forecast_example(scenario, s, s.target, cfg.train.weight)),
    );
    let tc = TrainConfig {
        seed: cfg.train.seed ^ 0xC07,
        ..cfg.train.clone()
    };
    let (model, c2) = train(&model, &encode_all(&mixed, vocab)?, &tc, TrainMask::PEFT)?;
    Ok((model, c1, c2))
}

/// Stability inputs: step-1 prompts over the given windows.
pub fn stability_inputs(scenario: Scenario, samples: &[WindowSample]) -> Vec<StabilityInput> {
    samples
        .iter()
        .map(|s| (Some(s.window.clone()), step1_prompt(scenario.name(), s.hour)))
        .collect()
}

/// Windows whose target row is in daylight, for scenarios with night zeros.
pub fn daylight(samples: &[WindowSample]) -> Vec<WindowSample> {
    samples.iter().filter(|s| s.target > 0.0).cloned().collect()
}

/// Every `step`-th sample.
pub fn thin(samples: &[WindowSample], step: usize) -> Vec<WindowSample> {
    samples.iter().step_by(step.max(1)).cloned().collect()
}

/// Zero window for text-mode probes of a multimodal model.
pub fn zero_window(model: &Model) -> Tensor {
    Tensor::zeros(&[model.config.window, model.config.channels])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_parse_independently() {
        assert_eq!(parse_spans("interval: 4 ; value: 3.10 kW"), (Some(4), Some(3.1)));
        assert_eq!(parse_spans("interval: 4 ; the sky"), (Some(4), None));
        assert_eq!(parse_spans("weather ; value: 3.10 kW"), (None, Some(3.1)));
        assert_eq!(parse_spans(""), (None, None));
    }

    #[test]
    fn point_forecast_fallbacks() {
        let s = BinningScheme::new(798.0, 100).unwrap();
        assert_eq!(point_forecast("interval: 1 ; value: 2.50 kW", &s), 2.5);
        assert!((point_forecast("interval: 1 ; oops", &s) - 3.99).abs() < 1e-9);
        assert_eq!(point_forecast("nothing", &s), 0.0);
    }
}
