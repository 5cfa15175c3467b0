use std::collections::HashMap;
use std::f64::consts::PI;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{round4, Dataset, DatasetMeta, Row};
use super::scenario::{transition_text, Scenario, ScenarioSpec, SparseEvent, Weather};
use crate::error::Result;

pub const DEFAULT_BINS: usize = 100;
const WEATHER_CHANGE_PROB: f64 = 0.12;
/// Event hours sit where PV output is substantial.
const EVENT_HOURS: std::ops::Range<u32> = 9..16;

/// Where an event was planted, its target, and the target had the weather
/// stayed as in the hour before.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub row: usize,
    pub phrase: String,
    pub target: f64,
    pub baseline: f64,
}

pub fn start_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2023, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date")
}

/// Clear-sky PV shape in `[0, 1]`: zero outside 06:00–18:00.
pub fn clear_sky(hour: u32, day_of_year: u32) -> f64 {
    let h = hour as f64;
    if h <= 6.0 || h >= 18.0 {
        return 0.0;
    }
    let elevation = (PI * (h - 6.0) / 12.0).sin();
    let season = 0.75 + 0.25 * (2.0 * PI * (day_of_year as f64 - 172.0) / 365.0).cos();
    elevation * season
}

fn wind_power(v: f64) -> f64 {
    const CUT_IN: f64 = 3.0;
    const RATED: f64 = 12.0;
    const CUT_OUT: f64 = 25.0;
    if !(CUT_IN..=CUT_OUT).contains(&v) {
        0.0
    } else if v < RATED {
        ((v - CUT_IN) / (RATED - CUT_IN)).powi(3)
    } else {
        1.0
    }
}

fn weather_chain(hours: usize, rng: &mut ChaCha8Rng) -> Vec<Weather> {
    let mut state = Weather::Clear;
    let mut out = Vec::with_capacity(hours);
    for _ in 0..hours {
        if rng.random::<f64>() < WEATHER_CHANGE_PROB {
            let others: Vec<Weather> = Weather::COMMON.into_iter().filter(|w| *w != state).collect();
            state = others[rng.random_range(0..others.len())];
        }
        out.push(state);
    }
    out
}

/// Seeded synthetic dataset for `spec`.
pub fn generate(spec: &ScenarioSpec) -> Result<Dataset> {
    Ok(generate_with_events(spec)?.0)
}

pub fn generate_with_events(spec: &ScenarioSpec) -> Result<(Dataset, Vec<EventRecord>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hours = spec.days * 24;
    let mut chain = weather_chain(hours, &mut rng);

    let total: usize = spec.events.iter().map(|e| e.count).sum();
    let days = sample(&mut rng, spec.days - 1, total).into_vec();
    let mut planted: HashMap<usize, &SparseEvent> = HashMap::new();
    let mut override_text: HashMap<usize, (String, Weather)> = HashMap::new();
    let mut k = 0;
    for e in &spec.events {
        for _ in 0..e.count {
            let day = days[k] + 1;
            k += 1;
            let hour = rng.random_range(EVENT_HOURS) as usize;
            let t = day * 24 + hour;
            if Weather::COMMON.contains(&e.from) {
                chain[t - 1] = e.from;
            } else {
                override_text.insert(t - 1, (e.from.text().to_string(), e.from));
            }
            if Weather::COMMON.contains(&e.to) {
                chain[t] = e.to;
            } else {
                chain[t] = chain[t - 1];
            }
            override_text.insert(t, (e.phrase(), e.to));
            planted.insert(t, e);
        }
    }

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let holidays: Vec<usize> = match spec.kind {
        Scenario::Load => sample(&mut rng, spec.days, spec.days.min(8)).into_vec(),
        _ => Vec::new(),
    };
    let cap = spec.capacity;
    let start = start_time();
    let mut wind = 6.0f64;
    let mut direction = 180.0f64;
    let mut rows = Vec::with_capacity(hours);
    let mut events = Vec::new();
    for t in 0..hours {
        let ts = start + Duration::hours(t as i64);
        let hour = (t % 24) as u32;
        let day = t / 24;
        let doy = ts.ordinal();
        let (text, effective) = match override_text.get(&t) {
            Some((s, w)) => (s.clone(), *w),
            None if t > 0 && chain[t] != chain[t - 1] => (transition_text(chain[t - 1], chain[t]), chain[t]),
            None => (chain[t].text().to_string(), chain[t]),
        };
        let eps = noise.sample(&mut rng);
        wind = (0.92 * wind + 0.08 * 7.0 + 0.9 * noise.sample(&mut rng)).max(0.0);
        direction = (direction + 15.0 * noise.sample(&mut rng)).rem_euclid(360.0);
        let seasonal_temp = 12.0 + 10.0 * (2.0 * PI * (doy as f64 - 110.0) / 365.0).sin();
        let (target, baseline, features) = match spec.kind {
            Scenario::Pv => {
                let sun = clear_sky(hour, doy);
                let scale = 0.9 * cap * sun * (1.0 + 0.03 * eps);
                let target = (scale * effective.pv_factor()).clamp(0.0, cap);
                let before = planted.get(&t).map_or(effective, |e| e.from);
                let baseline = (scale * before.pv_factor()).clamp(0.0, cap);
                let temp = seasonal_temp + 5.0 * sun + noise.sample(&mut rng);
                (target, baseline, vec![sun, wind, temp])
            }
            Scenario::Load => {
                let h = hour as f64;
                let temp = seasonal_temp + 4.0 * (2.0 * PI * (h - 9.0) / 24.0).sin() + noise.sample(&mut rng);
                let dew = temp - 4.0 - (2.0 * noise.sample(&mut rng)).abs();
                let holiday = if holidays.contains(&day) { 1.0 } else { 0.0 };
                let weekend = matches!(ts.weekday(), chrono::Weekday::Sat | chrono::Weekday::Sun);
                let shape = 0.55 + 0.2 * (-(h - 8.0).powi(2) / 8.0).exp() + 0.3 * (-(h - 19.0).powi(2) / 10.0).exp();
                let mut load = 0.75 * cap * shape * (1.0 + 0.012 * (temp - 18.0).abs());
                if weekend {
                    load *= 0.85;
                }
                if holiday > 0.0 {
                    load *= 0.8;
                }
                let target = (load + 0.02 * cap * eps).clamp(0.0, cap);
                (target, target, vec![temp, dew, wind, holiday])
            }
            Scenario::Wind => {
                let temp = seasonal_temp + noise.sample(&mut rng);
                let target = (cap * wind_power(wind) * (1.0 + 0.02 * eps)).clamp(0.0, cap);
                (target, target, vec![wind, direction, temp])
            }
        };
        let target = round4(target);
        if let Some(e) = planted.get(&t) {
            events.push(EventRecord {
                row: t,
                phrase: e.phrase(),
                target,
                baseline: round4(baseline),
            });
        }
        rows.push(Row {
            timestamp: ts,
            target,
            features: features.into_iter().map(round4).collect(),
            weather: text,
        });
    }
    events.sort_by_key(|e| e.row);
    let ds = Dataset {
        meta: DatasetMeta {
            scenario: spec.kind,
            capacity: cap,
            bins: DEFAULT_BINS,
        },
        features: spec.kind.features().iter().map(|s| s.to_string()).collect(),
        rows,
    };
    ds.validate()?;
    Ok((ds, events))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pv_night_is_zero_and_events_counted() {
        let spec = ScenarioSpec::new(Scenario::Pv, 365, 42);
        let (ds, events) = generate_with_events(&spec).unwrap();
        assert_eq!(ds.len(), 365 * 24);
        for r in &ds.rows {
            if r.hour() <= 4 || r.hour() >= 19 {
                assert_eq!(r.target, 0.0);
            }
        }
        let count = |p: &str| ds.rows.iter().filter(|r| r.weather == p).count();
        assert_eq!(count("heavy rain turning to clear"), 3);
        assert_eq!(count("clear turning to heavy rain"), 4);
        assert_eq!(events.len(), 7);
        for e in &events {
            assert_eq!(ds.rows[e.row].weather, e.phrase);
        }
    }

    #[test]
    fn deterministic() {
        for kind in Scenario::ALL {
            let spec = ScenarioSpec::new(kind, 20, 7);
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a, b);
            assert!(a.rows.iter().all(|r| r.target >= 0.0 && r.target <= spec.capacity));
        }
    }
}
