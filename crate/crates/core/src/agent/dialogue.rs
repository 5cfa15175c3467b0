use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::functions::{fn_decision_support, fn_feature_engineering, fn_prompt_engineering, DecisionKind};
use super::registry::{detect_trigger, Handler, Registry, Trigger};
use crate::data::{Dataset, Scenario};
use crate::error::{Error, Result};
use crate::forecast::{step1_prompt, Forecaster};
use crate::model::Decode;
use crate::prefix::NormalizationParams;
use crate::text::{tokenize, FN_SLOT};

/// Separates the user prompt from the function result in the second pass.
pub const RESULT_MARKER: &str = "[FUNCTION RESULT]";
/// Text form of the result slot token.
pub const SLOT_TEXT: &str = "<fn>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueTurn {
    pub prompt: String,
    pub first: String,
    pub function: Option<String>,
    pub result: Option<String>,
    /// `prompt`, the marker and the verbatim result.
    pub second_prompt: Option<String>,
    pub final_response: String,
    /// Set when argument extraction or execution failed.
    pub flagged: bool,
}

impl DialogueTurn {
    /// A fired, unflagged turn whose final response carries the result.
    pub fn conforming(&self) -> bool {
        match (&self.function, &self.result) {
            (Some(_), Some(r)) => !self.flagged && self.final_response.contains(r.as_str()),
            _ => false,
        }
    }
}

/// Two-pass function-calling loop over a text-only model.
pub struct Agent<'a> {
    pub forecaster: Forecaster<'a>,
    pub registry: &'a Registry,
    /// Directory relative file arguments are resolved against.
    pub root: PathBuf,
}

fn parse_numbers(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Schema(format!("bad number `{t}`"))))
        .collect()
}

fn arg<'t>(t: &'t Trigger, k: &str) -> Result<&'t str> {
    t.args.get(k).map(String::as_str).ok_or_else(|| Error::ArgumentExtraction {
        function: t.id.clone(),
        slot: k.to_string(),
    })
}

impl<'a> Agent<'a> {
    fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Runs the handler bound to `t`. Handlers only read files.
    pub fn execute(&self, t: &Trigger) -> Result<String> {
        match t.handler {
            Handler::FeatureEngineering => {
                let ds = Dataset::load(&self.resolve(arg(t, "path")?))?;
                Ok(fn_feature_engineering(&ds)?.summary)
            }
            Handler::PromptEngineering => {
                let scenario: Scenario = arg(t, "scenario")?.parse()?;
                let hour = t.args.get("hour").map(|h| h.parse::<u32>()).transpose().map_err(|_| {
                    Error::Schema("bad hour".into())
                })?;
                let (capacity, summary) = match t.args.get("path") {
                    Some(p) => {
                        let ds = Dataset::load(&self.resolve(p))?;
                        (ds.meta.capacity, fn_feature_engineering(&ds)?.summary)
                    }
                    None => (scenario.default_capacity(), String::new()),
                };
                fn_prompt_engineering(scenario.name(), capacity, hour.unwrap_or(12) % 24, &summary)
            }
            Handler::Forecast => {
                let scenario: Scenario = arg(t, "scenario")?.parse()?;
                let hour: u32 = arg(t, "hour")?.parse().map_err(|_| Error::Schema("bad hour".into()))?;
                let ds = Dataset::load(&self.resolve(arg(t, "path")?))?;
                let w = self.forecaster.model.config.window;
                if ds.len() < w {
                    return Err(Error::Length { len: w, max: ds.len() });
                }
                let all = ds.matrix(0..ds.len())?;
                let norm = NormalizationParams::fit_lenient(&all)?;
                let window = norm.apply(&ds.matrix(ds.len() - w..ds.len())?)?;
                let r = self.forecaster.predict(
                    Some(&window),
                    &step1_prompt(scenario.name(), hour % 24),
                    Decode::Greedy,
                    0,
                )?;
                if !r.conforming() {
                    return Err(Error::Schema(format!("model answer `{}` is not a forecast", r.raw)));
                }
                Ok(format!("forecast {}", r.raw))
            }
            Handler::Utilization | Handler::ReserveMargin | Handler::Energy => {
                let preds = parse_numbers(arg(t, "preds")?)?;
                let kind = match t.handler {
                    Handler::Utilization => DecisionKind::Utilization,
                    Handler::ReserveMargin => DecisionKind::ReserveMargin,
                    _ => DecisionKind::Energy,
                };
                let num = |k: &str, default: f64| -> Result<f64> {
                    t.args
                        .get(k)
                        .map(|v| v.parse().map_err(|_| Error::Schema(format!("bad {k} `{v}`"))))
                        .unwrap_or(Ok(default))
                };
                let r = fn_decision_support(kind, &preds, num("capacity", 0.0)?, num("step", 1.0)?)?;
                Ok(r.sentence)
            }
        }
    }

    /// Model ids for the second pass: the prompt, the marker and the slot.
    pub fn second_pass_ids(&self, prompt: &str) -> Vec<usize> {
        let mut ids = self.forecaster.prompt_ids(prompt);
        ids.extend(tokenize(RESULT_MARKER, self.forecaster.vocab).ids);
        ids.push(FN_SLOT);
        ids
    }

    pub fn respond(&self, prompt: &str) -> Result<DialogueTurn> {
        let first = self.forecaster.generate_text(None, prompt, Decode::Greedy, 0)?;
        let mut turn = DialogueTurn {
            prompt: prompt.to_string(),
            first: first.clone(),
            function: None,
            result: None,
            second_prompt: None,
            final_response: first.clone(),
            flagged: false,
        };
        let trigger = match detect_trigger(prompt, &first, self.registry) {
            Ok(Some(t)) => t,
            Ok(None) => return Ok(turn),
            Err(e @ Error::ArgumentExtraction { .. }) => {
                if let Error::ArgumentExtraction { function, .. } = &e {
                    turn.function = Some(function.clone());
                }
                turn.flagged = true;
                turn.final_response = format!("function call failed: {e}");
                return Ok(turn);
            }
            Err(e) => return Err(e),
        };
        turn.function = Some(trigger.id.clone());
        let result = match self.execute(&trigger) {
            Ok(r) => r,
            Err(e) => {
                turn.flagged = true;
                turn.final_response = format!("function {} failed: {e}", trigger.id);
                return Ok(turn);
            }
        };
        turn.second_prompt = Some(format!("{prompt} {RESULT_MARKER} {result}"));
        let (_, text) = self
            .forecaster
            .generate_ids(None, &self.second_pass_ids(prompt), Decode::Greedy, 0)?;
        // The response ends at the first slot; a missing slot flags the turn.
        turn.final_response = match text.find(SLOT_TEXT) {
            Some(i) => format!("{}{result}", &text[..i]),
            None => {
                turn.flagged = true;
                text
            }
        };
        turn.result = Some(result);
        Ok(turn)
    }
}

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

/// `role<TAB>text` lines: user, assistant (first pass), function, assistant.
pub fn write_transcript<W: Write>(turns: &[DialogueTurn], mut out: W) -> Result<()> {
    let io = |e| Error::io("transcript", e);
    for t in turns {
        writeln!(out, "user\t{}", clean(&t.prompt)).map_err(io)?;
        if let Some(f) = &t.function {
            writeln!(out, "assistant\t{}", clean(&t.first)).map_err(io)?;
            let body = t.result.as_deref().unwrap_or("");
            writeln!(out, "function\t{f}: {}", clean(body)).map_err(io)?;
        }
        writeln!(out, "assistant\t{}", clean(&t.final_response)).map_err(io)?;
    }
    Ok(())
}

/// Reads `role<TAB>text` records.
pub fn read_transcript<R: BufRead>(input: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("transcript", e))?;
        if line.is_empty() {
            continue;
        }
        let (role, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::Schema(format!("transcript line {}: missing tab", i + 1)))?;
        out.push((role.to_string(), text.to_string()));
    }
    Ok(out)
}

/// Canned first-pass reply for each handler.
pub fn first_reply(h: Handler) -> &'static str {
    match h {
        Handler::FeatureEngineering => "running the feature engineering function",
        Handler::PromptEngineering => "running the prompt engineering function",
        Handler::Forecast => "running the forecast function",
        Handler::Utilization => "computing the capacity utilization",
        Handler::ReserveMargin => "computing the reserve margin",
        Handler::Energy => "computing the energy total",
    }
}

/// Text the model should answer with in the second pass.
pub fn second_reply() -> String {
    format!("the function returned {SLOT_TEXT}")
}

fn num2(rng: &mut ChaCha8Rng, hi: f64) -> String {
    format!("{:.2}", rng.random_range(0.0..hi))
}

/// A user prompt for `h` with random arguments.
pub fn sample_prompt(h: Handler, rng: &mut ChaCha8Rng) -> String {
    let s = Scenario::ALL[rng.random_range(0..3)].name();
    let path = ["table.csv", "data/pv.csv", "history.csv", "run/load.csv"]
        .choose(rng)
        .expect("non-empty");
    let hour = rng.random_range(0..24);
    let preds: Vec<String> = (0..rng.random_range(1..5)).map(|_| num2(rng, 800.0)).collect();
    let preds = preds.join(" ");
    let cap = num2(rng, 1000.0);
    match h {
        Handler::FeatureEngineering => format!("please do feature engineering on {path}"),
        Handler::PromptEngineering => format!("please do prompt engineering for {s} at hour {hour} using {path}"),
        Handler::Forecast => format!("please forecast {s} power at hour {hour} from {path}"),
        Handler::Utilization => format!("what is the capacity utilization for forecasts {preds} with capacity {cap}"),
        Handler::ReserveMargin => format!("what is the reserve margin for forecasts {preds} with capacity {cap}"),
        Handler::Energy => format!("what is the total energy of forecasts {preds} with step 1"),
    }
}

pub const HANDLERS: [Handler; 6] = [
    Handler::FeatureEngineering,
    Handler::PromptEngineering,
    Handler::Forecast,
    Handler::Utilization,
    Handler::ReserveMargin,
    Handler::Energy,
];

/// `(prompt, reply)` pairs teaching both passes of the loop.
pub fn dialogue_corpus(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let h = HANDLERS[rng.random_range(0..HANDLERS.len())];
            let p = sample_prompt(h, &mut rng);
            if i % 2 == 0 {
                (p, first_reply(h).to_string())
            } else {
                (format!("{p} {RESULT_MARKER} {SLOT_TEXT}"), second_reply())
            }
        })
        .collect()
}

/// The four prompts of the guided workflow: feature engineering, prompt
/// engineering, forecast, decision support.
pub fn workflow_script(path: &str, scenario: Scenario, hour: u32, preds: &[f64]) -> Vec<String> {
    let s = scenario.name();
    let preds: Vec<String> = preds.iter().map(|p| format!("{p:.2}")).collect();
    vec![
        format!("please do feature engineering on {path}"),
        format!("please do prompt engineering for {s} at hour {hour} using {path}"),
        format!("please forecast {s} power at hour {hour} from {path}"),
        format!(
            "what is the capacity utilization for forecasts {} with capacity {:.2}",
            preds.join(" "),
            scenario.default_capacity()
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_prompts_fire_their_own_function() {
        let reg = Registry::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            for h in HANDLERS {
                let p = sample_prompt(h, &mut rng);
                let t = detect_trigger(&p, first_reply(h), &reg).unwrap().unwrap();
                assert_eq!(t.handler, h, "{p}");
            }
        }
    }

    #[test]
    fn transcript_roundtrip() {
        let t = DialogueTurn {
            prompt: "a\tb".into(),
            first: "x".into(),
            function: Some("f".into()),
            result: Some("r".into()),
            second_prompt: None,
            final_response: "done r".into(),
            flagged: false,
        };
        let mut buf = Vec::new();
        write_transcript(&[t], &mut buf).unwrap();
        let rows = read_transcript(buf.as_slice()).unwrap();
        let roles: Vec<_> = rows.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(roles, ["user", "assistant", "function", "assistant"]);
        assert_eq!(rows[0].1, "a b");
    }
}
