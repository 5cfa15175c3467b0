use std::collections::BTreeSet;
use std::io::Write;

use chrono::{Datelike, NaiveDateTime, Timelike};

use crate::data::{fmt_num, Dataset, Scenario, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};
use crate::forecast::{format_value, step1_prompt};

/// Longest target lag added by feature engineering.
pub const MAX_LAG: usize = 24;

/// Output of [`fn_feature_engineering`]: a numeric table plus a one-line
/// summary naming every column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
    pub rows: Vec<Vec<f64>>,
    pub summary: String,
}

impl FeatureTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (t, r) in self.timestamps.iter().zip(&self.rows) {
            let mut rec = vec![t.format(TIMESTAMP_FORMAT).to_string()];
            rec.extend(r.iter().map(|&x| fmt_num(x)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("feature csv", e))
    }
}

fn weather_column(text: &str) -> String {
    format!("weather_{}", text.trim().replace(' ', "_"))
}

/// Drops constant features, z-scores the rest, adds hour and weekday,
/// one-hot weather and target lags 1 and 24. Rows without a full lag
/// history are dropped.
pub fn fn_feature_engineering(ds: &Dataset) -> Result<FeatureTable> {
    let n = ds.len();
    if n <= MAX_LAG {
        return Err(Error::Length { len: MAX_LAG + 1, max: n });
    }
    let mut columns = vec!["target".to_string()];
    let mut cols: Vec<Vec<f64>> = vec![ds.targets()];
    for (j, name) in ds.features.iter().enumerate() {
        let v: Vec<f64> = ds.rows.iter().map(|r| r.features[j]).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        if var <= 0.0 {
            continue;
        }
        let sd = var.sqrt();
        columns.push(name.clone());
        cols.push(v.iter().map(|x| (x - mean) / sd).collect());
    }
    columns.push("hour".into());
    cols.push(ds.rows.iter().map(|r| r.timestamp.hour() as f64).collect());
    columns.push("day_of_week".into());
    cols.push(
        ds.rows
            .iter()
            .map(|r| r.timestamp.weekday().num_days_from_monday() as f64)
            .collect(),
    );
    let kinds: BTreeSet<&str> = ds.rows.iter().map(|r| r.weather.trim()).collect();
    for k in kinds {
        columns.push(weather_column(k));
        cols.push(ds.rows.iter().map(|r| (r.weather.trim() == k) as u8 as f64).collect());
    }
    let targets = ds.targets();
    for lag in [1, MAX_LAG] {
        columns.push(format!("target_lag{lag}"));
        cols.push((0..n).map(|i| if i >= lag { targets[i - lag] } else { f64::NAN }).collect());
    }
    let rows: Vec<Vec<f64>> = (MAX_LAG..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
    let summary = format!("engineered {} rows with columns {}", rows.len(), columns.join(" "));
    Ok(FeatureTable {
        columns,
        timestamps: ds.rows[MAX_LAG..].iter().map(|r| r.timestamp).collect(),
        rows,
        summary,
    })
}

fn instruction(scenario: Scenario) -> &'static str {
    match scenario {
        Scenario::Load => "consider temperature dew point wind speed and holidays",
        Scenario::Pv => "consider sunlight and weather type",
        Scenario::Wind => "consider wind speed and wind direction",
    }
}

/// The scenario's step-1 prompt extended with capacity, an instruction and,
/// when `summary` is non-empty, a supplement section.
pub fn fn_prompt_engineering(scenario: &str, capacity: f64, hour: u32, summary: &str) -> Result<String> {
    let kind: Scenario = scenario.parse()?;
    let mut out = format!(
        "{} | rated capacity {} {} | {}",
        step1_prompt(kind.name(), hour),
        format_value(capacity),
        kind.unit(),
        instruction(kind)
    );
    let summary = summary.trim();
    if !summary.is_empty() {
        out.push_str(" | supplement ");
        out.push_str(summary);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionKind {
    Utilization,
    ReserveMargin,
    Energy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionResult {
    pub kind: DecisionKind,
    pub value: f64,
    /// `value` with two decimals, the string the final response must carry.
    pub rendered: String,
    pub sentence: String,
}

/// Utilization `100·Σp/(E_r·T)`, reserve margin `100·(E_r − max p)/E_r`, or
/// energy `Σp·Δt`.
pub fn fn_decision_support(kind: DecisionKind, preds: &[f64], capacity: f64, step_hours: f64) -> Result<DecisionResult> {
    if preds.is_empty() {
        return Err(Error::Empty("forecast values"));
    }
    if preds.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("decision support input"));
    }
    let needs_capacity = kind != DecisionKind::Energy;
    if needs_capacity && capacity == 0.0 {
        return Err(Error::Contract("capacity is zero".into()));
    }
    let sum: f64 = preds.iter().sum();
    let (value, sentence_of): (f64, fn(&str) -> String) = match kind {
        DecisionKind::Utilization => (100.0 * sum / (capacity * preds.len() as f64), |v| {
            format!("capacity utilization is {v}%")
        }),
        DecisionKind::ReserveMargin => {
            let max = preds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (100.0 * (capacity - max) / capacity, |v| format!("reserve margin is {v}%"))
        }
        DecisionKind::Energy => (sum * step_hours, |v| format!("forecast energy is {v} kWh")),
    };
    let rendered = format_value(value);
    Ok(DecisionResult {
        kind,
        value,
        sentence: sentence_of(&rendered),
        rendered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, ScenarioSpec};

    #[test]
    fn decision_examples() {
        let u = fn_decision_support(DecisionKind::Utilization, &[798.0; 5], 798.0, 1.0).unwrap();
        assert_eq!(u.rendered, "100.00");
        let u = fn_decision_support(DecisionKind::Utilization, &[399.0, 399.0], 798.0, 1.0).unwrap();
        assert_eq!(u.sentence, "capacity utilization is 50.00%");
        let r = fn_decision_support(DecisionKind::ReserveMargin, &[10.0, 798.0], 798.0, 1.0).unwrap();
        assert_eq!(r.rendered, "0.00");
        let e = fn_decision_support(DecisionKind::Energy, &[1.5, 2.5], 0.0, 0.5).unwrap();
        assert_eq!(e.rendered, "2.00");
        assert!(fn_decision_support(DecisionKind::Utilization, &[1.0], 0.0, 1.0).is_err());
        assert!(fn_decision_support(DecisionKind::Energy, &[], 1.0, 1.0).is_err());
    }

    #[test]
    fn lag24_drops_first_day() {
        let ds = generate(&ScenarioSpec::new(Scenario::Wind, 2, 1)).unwrap();
        let t = fn_feature_engineering(&ds).unwrap();
        assert_eq!(t.rows.len(), 24);
        let lag = t.column("target_lag24").unwrap();
        let tgt = ds.targets();
        for (i, v) in lag.iter().enumerate() {
            assert_eq!(*v, tgt[i]);
        }
        assert_eq!(t.column("target_lag1").unwrap()[0], tgt[23]);
        assert!(t.rows.iter().flatten().all(|x| x.is_finite()));
    }

    #[test]
    fn constant_columns_dropped_and_summary_lists_columns() {
        let mut ds = generate(&ScenarioSpec::new(Scenario::Load, 3, 2)).unwrap();
        for r in &mut ds.rows {
            r.features[3] = 0.0;
        }
        let t = fn_feature_engineering(&ds).unwrap();
        assert!(!t.columns.contains(&"holiday".to_string()));
        let listed: Vec<&str> = t.summary.split(" columns ").nth(1).unwrap().split(' ').collect();
        assert_eq!(listed, t.columns.iter().map(String::as_str).collect::<Vec<_>>());
        let temp = t.column("temperature").unwrap();
        assert!(temp.iter().all(|x| x.abs() < 5.0));
    }

    #[test]
    fn prompt_template() {
        let a = fn_prompt_engineering("pv", 798.0, 13, "engineered 10 rows").unwrap();
        assert_eq!(a, fn_prompt_engineering("pv", 798.0, 13, "engineered 10 rows").unwrap());
        assert!(a.starts_with("predict pv power for hour 13 | rated capacity 798.00 kW"));
        let b = fn_prompt_engineering("pv", 798.0, 13, "").unwrap();
        assert!(!b.contains("supplement"));
        assert!(!b.ends_with(' '));
        assert_eq!(crate::forecast::parse_step1(&a), Some(("pv".into(), 13)));
        assert!(crate::forecast::parse_step1(&b).is_some());
        assert!(fn_prompt_engineering("tidal", 1.0, 0, "").is_err());
    }
}
