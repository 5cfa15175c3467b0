use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    Load,
    Pv,
    Wind,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Load, Scenario::Pv, Scenario::Wind];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Load => "load",
            Scenario::Pv => "pv",
            Scenario::Wind => "wind",
        }
    }

    pub fn unit(self) -> &'static str {
        "kW"
    }

    pub fn default_capacity(self) -> f64 {
        match self {
            Scenario::Load => 1200.0,
            Scenario::Pv => 798.0,
            Scenario::Wind => 1500.0,
        }
    }

    /// Numeric feature columns, in CSV order after `target`.
    pub fn features(self) -> &'static [&'static str] {
        match self {
            Scenario::Load => &["temperature", "dew_point", "wind_speed", "holiday"],
            Scenario::Pv => &["sunlight", "wind_speed", "temperature"],
            Scenario::Wind => &["wind_speed", "wind_direction", "temperature"],
        }
    }

    /// Target plus features.
    pub fn channels(self) -> usize {
        1 + self.features().len()
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "load" => Ok(Scenario::Load),
            "pv" => Ok(Scenario::Pv),
            "wind" => Ok(Scenario::Wind),
            other => Err(Error::UnknownScenario(other.to_string())),
        }
    }
}

/// Weather states; the first four form the everyday Markov chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Weather {
    Clear,
    Cloudy,
    Overcast,
    LightRain,
    HeavyRain,
}

impl Weather {
    pub const COMMON: [Weather; 4] = [Weather::Clear, Weather::Cloudy, Weather::Overcast, Weather::LightRain];

    pub fn text(self) -> &'static str {
        match self {
            Weather::Clear => "clear",
            Weather::Cloudy => "cloudy",
            Weather::Overcast => "overcast",
            Weather::LightRain => "light rain",
            Weather::HeavyRain => "heavy rain",
        }
    }

    /// Share of clear-sky PV output delivered under this weather.
    pub fn pv_factor(self) -> f64 {
        match self {
            Weather::Clear => 1.0,
            Weather::Cloudy => 0.7,
            Weather::Overcast => 0.45,
            Weather::LightRain => 0.3,
            Weather::HeavyRain => 0.1,
        }
    }
}

impl FromStr for Weather {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Weather::Clear,
            Weather::Cloudy,
            Weather::Overcast,
            Weather::LightRain,
            Weather::HeavyRain,
        ]
        .into_iter()
        .find(|w| w.text() == s.trim())
        .ok_or_else(|| Error::Spec(format!("unknown weather `{s}`")))
    }
}

pub fn transition_text(from: Weather, to: Weather) -> String {
    format!("{} turning to {}", from.text(), to.text())
}

/// A rare weather transition planted a fixed number of times.
///
/// The hour before the event renders as plain `from`; the event hour renders
/// as `"<from> turning to <to>"` and its target follows `to`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseEvent {
    pub from: Weather,
    pub to: Weather,
    pub count: usize,
}

impl SparseEvent {
    pub fn phrase(&self) -> String {
        transition_text(self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub kind: Scenario,
    pub capacity: f64,
    pub days: usize,
    pub seed: u64,
    pub events: Vec<SparseEvent>,
}

impl ScenarioSpec {
    /// Default plan: a year of data; PV gets the two heavy-rain events.
    pub fn new(kind: Scenario, days: usize, seed: u64) -> Self {
        let events = match kind {
            Scenario::Pv => vec![
                SparseEvent {
                    from: Weather::HeavyRain,
                    to: Weather::Clear,
                    count: 3,
                },
                SparseEvent {
                    from: Weather::Clear,
                    to: Weather::HeavyRain,
                    count: 4,
                },
            ],
            _ => Vec::new(),
        };
        ScenarioSpec {
            kind,
            capacity: kind.default_capacity(),
            days,
            seed,
            events,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(Error::Spec(format!("capacity must be positive, got {}", self.capacity)));
        }
        if self.days == 0 {
            return Err(Error::Spec("days must be positive".into()));
        }
        let mut total = 0;
        for e in &self.events {
            if e.count == 0 {
                return Err(Error::Spec(format!("event `{}` planned zero times", e.phrase())));
            }
            if e.from == e.to {
                return Err(Error::Spec(format!("event `{}` is not a transition", e.phrase())));
            }
            if Weather::COMMON.contains(&e.from) && Weather::COMMON.contains(&e.to) {
                return Err(Error::Spec(format!(
                    "event `{}` would collide with everyday transitions",
                    e.phrase()
                )));
            }
            total += e.count;
        }
        // each event needs its own day, leaving the first day as warm-up
        if total + 1 > self.days {
            return Err(Error::Spec(format!("{total} events do not fit in {} days", self.days)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for s in Scenario::ALL {
            assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
        }
        assert!(matches!("solar".parse::<Scenario>(), Err(Error::UnknownScenario(_))));
        assert_eq!("light rain".parse::<Weather>().unwrap(), Weather::LightRain);
    }

    #[test]
    fn spec_bounds() {
        let mut s = ScenarioSpec::new(Scenario::Pv, 365, 1);
        s.validate().unwrap();
        s.days = 7;
        assert!(s.validate().is_err());
        let mut s = ScenarioSpec::new(Scenario::Pv, 30, 1);
        s.events.push(SparseEvent {
            from: Weather::Clear,
            to: Weather::Cloudy,
            count: 1,
        });
        assert!(s.validate().is_err());
    }
}
