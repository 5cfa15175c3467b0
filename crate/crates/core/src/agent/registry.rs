use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;

use crate::error::{Error, Result};
use crate::ini::Ini;

/// The library shipped with the crate.
pub const DEFAULT_REGISTRY: &str = include_str!("../../assets/functions.ini");

/// Executables a registry entry may bind to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Handler {
    FeatureEngineering,
    PromptEngineering,
    Forecast,
    Utilization,
    ReserveMargin,
    Energy,
}

impl std::str::FromStr for Handler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "feature_engineering" => Handler::FeatureEngineering,
            "prompt_engineering" => Handler::PromptEngineering,
            "forecast" => Handler::Forecast,
            "utilization" => Handler::Utilization,
            "reserve_margin" => Handler::ReserveMargin,
            "energy" => Handler::Energy,
            other => return Err(Error::Config(format!("unknown handler `{other}`"))),
        })
    }
}

#[derive(Debug, Clone)]
pub struct FunctionSpec {
    pub id: String,
    /// Lower-case phrases that must all occur.
    pub keywords: Vec<String>,
    pub pattern: Regex,
    /// Required named groups of `pattern`.
    pub slots: Vec<String>,
    pub handler: Handler,
}

/// A fired function with its extracted arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trigger {
    pub id: String,
    pub handler: Handler,
    pub args: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Registry {
    functions: Vec<FunctionSpec>,
}

fn list(v: &str) -> Vec<String> {
    v.split(',')
        .map(|s| s.trim().to_lowercase())
        .filter(|s| !s.is_empty())
        .collect()
}

impl Registry {
    pub fn new(functions: Vec<FunctionSpec>) -> Result<Self> {
        if functions.is_empty() {
            return Err(Error::Config("function registry is empty".into()));
        }
        Ok(Registry { functions })
    }

    /// Parses the section-per-function format of [`DEFAULT_REGISTRY`].
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::parse(text)?;
        let mut functions = Vec::new();
        for id in ini.section_names().filter(|s| !s.is_empty()) {
            let get = |k: &str| {
                ini.get(id, k)
                    .ok_or_else(|| Error::Config(format!("function `{id}` lacks `{k}`")))
            };
            for (k, _) in ini.section(id).unwrap_or_default() {
                if !["keywords", "pattern", "slots", "handler"].contains(&k.as_str()) {
                    return Err(Error::Config(format!("function `{id}`: unknown key `{k}`")));
                }
            }
            let pattern =
                Regex::new(get("pattern")?).map_err(|e| Error::Config(format!("function `{id}`: bad pattern: {e}")))?;
            let slots: Vec<String> = ini.get(id, "slots").map(list).unwrap_or_default();
            for s in &slots {
                if !pattern.capture_names().flatten().any(|n| n == s) {
                    return Err(Error::Config(format!("function `{id}`: slot `{s}` has no capture group")));
                }
            }
            let keywords = list(get("keywords")?);
            if keywords.is_empty() {
                return Err(Error::Config(format!("function `{id}` has no keywords")));
            }
            functions.push(FunctionSpec {
                id: id.to_string(),
                keywords,
                pattern,
                slots,
                handler: get("handler")?.parse()?,
            });
        }
        Self::new(functions)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_REGISTRY).expect("shipped registry parses")
    }

    pub fn functions(&self) -> &[FunctionSpec] {
        &self.functions
    }

    pub fn get(&self, id: &str) -> Option<&FunctionSpec> {
        self.functions.iter().find(|f| f.id == id)
    }
}

/// First function in registry order whose keywords all occur in the prompt
/// or first response and whose pattern matches one of them.
pub fn detect_trigger(prompt: &str, first: &str, registry: &Registry) -> Result<Option<Trigger>> {
    let texts = [prompt, first];
    let lower = format!("{}\n{}", prompt.to_lowercase(), first.to_lowercase());
    for f in registry.functions() {
        if !f.keywords.iter().all(|k| lower.contains(k.as_str())) {
            continue;
        }
        let Some(caps) = texts.iter().find_map(|t| f.pattern.captures(t)) else {
            continue;
        };
        let mut args = BTreeMap::new();
        for name in f.pattern.capture_names().flatten() {
            if let Some(m) = caps.name(name) {
                args.insert(name.to_string(), m.as_str().to_string());
            }
        }
        for s in &f.slots {
            if args.get(s).is_none_or(|v| v.trim().is_empty()) {
                return Err(Error::ArgumentExtraction {
                    function: f.id.clone(),
                    slot: s.clone(),
                });
            }
        }
        return Ok(Some(Trigger {
            id: f.id.clone(),
            handler: f.handler,
            args,
        }));
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_engineering_fires_with_path() {
        let r = Registry::builtin();
        let t = detect_trigger("please do feature engineering on table.csv", "", &r)
            .unwrap()
            .unwrap();
        assert_eq!(t.id, "feature_engineering");
        assert_eq!(t.args["path"], "table.csv");
    }

    #[test]
    fn no_keywords_no_trigger() {
        let r = Registry::builtin();
        assert!(detect_trigger("predict pv power for hour 13", "interval: 3 ; value: 20.00 kW", &r)
            .unwrap()
            .is_none());
    }

    #[test]
    fn registry_order_breaks_ties() {
        let text = "[a]\nkeywords = go\npattern = go\nhandler = energy\n\n[b]\nkeywords = go\npattern = go\nhandler = forecast\n";
        let r = Registry::parse(text).unwrap();
        assert_eq!(detect_trigger("go now", "", &r).unwrap().unwrap().id, "a");
    }

    #[test]
    fn missing_required_slot_is_an_error() {
        let text = "[f]\nkeywords = sum\npattern = sum(?: of (?P<x>\\d+))?\nslots = x\nhandler = energy\n";
        let r = Registry::parse(text).unwrap();
        assert!(matches!(
            detect_trigger("sum please", "", &r),
            Err(Error::ArgumentExtraction { .. })
        ));
        assert!(detect_trigger("sum of 4", "", &r).unwrap().is_some());
    }

    #[test]
    fn keywords_may_come_from_first_response() {
        let r = Registry::builtin();
        let t = detect_trigger("forecasts 10 20 with capacity 40", "computing the capacity utilization", &r)
            .unwrap()
            .unwrap();
        assert_eq!(t.id, "capacity_utilization");
        assert_eq!(t.args["preds"], "10 20");
    }

    #[test]
    fn bad_registries_rejected() {
        assert!(Registry::parse("").is_err());
        assert!(Registry::parse("[f]\nkeywords = a\npattern = (\nhandler = energy").is_err());
        assert!(Registry::parse("[f]\nkeywords = a\npattern = a\nhandler = shell").is_err());
        assert!(Registry::parse("[f]\nkeywords = a\npattern = a\nslots = z\nhandler = energy").is_err());
    }
}
