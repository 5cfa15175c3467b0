use std::sync::LazyLock;

use regex::Regex;

/// Parsed model output. Non-conforming text keeps only `raw`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResponse {
    pub class: Option<usize>,
    pub value: Option<f64>,
    pub unit: Option<String>,
    pub raw: String,
}

impl ForecastResponse {
    pub fn conforming(&self) -> bool {
        self.class.is_some() && self.value.is_some()
    }
}

static ANSWER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^interval: (\d{1,6}) ; value: (-?\d+\.\d{2}) ([A-Za-z]+)$").expect("static pattern")
});

pub fn format_value(value: f64) -> String {
    let v = format!("{value:.2}");
    if v == "-0.00" {
        "0.00".into()
    } else {
        v
    }
}

/// `interval: <i> ; value: <x.xx> <unit>`
pub fn render_answer(class: usize, value: f64, unit: &str) -> String {
    format!("interval: {class} ; value: {} {unit}", format_value(value))
}

pub fn parse_response(text: &str) -> ForecastResponse {
    let raw = text.to_string();
    let Some(c) = ANSWER.captures(text.trim()) else {
        return ForecastResponse {
            class: None,
            value: None,
            unit: None,
            raw,
        };
    };
    ForecastResponse {
        class: c[1].parse().ok(),
        value: c[2].parse().ok(),
        unit: Some(c[3].to_string()),
        raw,
    }
}

/// Splits an answer at the task delimiter into `(task 1, task 2)` text; the
/// delimiter stays with task 1. Without a delimiter everything is task 1.
pub fn split_tasks(text: &str) -> (String, String) {
    match text.find(" ;") {
        Some(i) => (text[..i + 2].trim().to_string(), text[i + 2..].trim().to_string()),
        None => (text.trim().to_string(), String::new()),
    }
}

/// Prompt for a forecast from the time series alone.
pub fn step1_prompt(scenario: &str, hour: u32) -> String {
    format!("predict {scenario} power for hour {hour}")
}

static STEP1: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^predict (load|pv|wind) power for hour (\d{1,2})(?: \| .+)?$").expect("static pattern")
});

/// Scenario and hour of a step-1 prompt, optionally followed by `| ...`
/// sections.
pub fn parse_step1(text: &str) -> Option<(String, u32)> {
    let c = STEP1.captures(text.trim())?;
    let hour: u32 = c[2].parse().ok()?;
    (hour < 24).then(|| (c[1].to_string(), hour))
}

/// Second CoT prompt: the first prompt, a delimiter, then the first answer and
/// the weather text when weather is given.
pub fn step2_prompt(step1_prompt: &str, step1_answer: &str, weather: &str) -> String {
    let weather = weather.trim();
    if weather.is_empty() {
        format!("{step1_prompt} |")
    } else {
        format!("{step1_prompt} | previous {} weather {weather}", step1_answer.trim())
    }
}
