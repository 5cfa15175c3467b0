//! Resolved run configuration: one `[section]` per concern, every key known.

use std::path::{Path, PathBuf};

use crate::data::{Scenario, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::forecast::{DEFAULT_MAX_NEW, SAMPLE_TEMPERATURE};
use crate::ini::Ini;
use crate::model::ModelConfig;
use crate::trainer::{PrefixPolicy, TrainConfig};

/// Environment variable read when no seed is configured.
pub const SEED_ENV: &str = "EFLLM_SEED";

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for {key}")))
}

fn unknown(section: &str, key: &str) -> Error {
    Error::Config(format!("unknown key `{key}` in [{section}]"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub examples: usize,
    /// Share of base examples that carry a random window.
    pub numeric_share: f64,
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            examples: 2000,
            numeric_share: 0.4,
            lr: 3e-3,
            epochs: 2,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub days: usize,
    pub horizon: usize,
    pub train_fraction: f64,
    /// Rated capacity; the scenario default when absent.
    pub capacity: Option<f64>,
    pub bins: usize,
    /// Guidance pairs per multimodal example.
    pub text_ratio: f64,
    /// Keep every n-th training window.
    pub stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            days: 365,
            horizon: 1,
            train_fraction: 0.8,
            capacity: None,
            bins: DEFAULT_BINS,
            text_ratio: 0.1,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub samples: usize,
    pub temperature: f32,
    pub max_new: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            samples: 10,
            temperature: SAMPLE_TEMPERATURE,
            max_new: DEFAULT_MAX_NEW,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub weights: Vec<f64>,
    pub seeds: usize,
    pub train_windows: usize,
    pub test_windows: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            weights: vec![0.2, 0.5, 0.8],
            seeds: 3,
            train_windows: 300,
            test_windows: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySettings {
    pub runs: usize,
    pub groups: usize,
    /// Distinct test windows cycled through the runs.
    pub inputs: usize,
    pub max_excluded: f64,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        StabilitySettings {
            runs: 100,
            groups: 10,
            inputs: 10,
            max_excluded: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinualSettings {
    pub rank: usize,
    pub prefix: PrefixPolicy,
}

impl Default for ContinualSettings {
    fn default() -> Self {
        ContinualSettings {
            rank: 4,
            prefix: PrefixPolicy::CloneNew,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InferMode {
    #[default]
    Single,
    Averaged,
    Cot,
}

impl InferMode {
    pub fn name(self) -> &'static str {
        match self {
            InferMode::Single => "single",
            InferMode::Averaged => "averaged",
            InferMode::Cot => "cot",
        }
    }
}

impl std::str::FromStr for InferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "single" => Ok(InferMode::Single),
            "averaged" => Ok(InferMode::Averaged),
            "cot" => Ok(InferMode::Cot),
            other => Err(Error::Config(format!("infer mode `{other}` is not single, averaged or cot"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InferSettings {
    pub mode: InferMode,
    /// Target row; the last row when absent.
    pub row: Option<usize>,
}

/// Input locations; the output directory is never part of the config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub base: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    /// Directory function-call file arguments resolve against.
    pub root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    /// Drives every RNG of the run, including `train.seed`.
    pub seed: u64,
    pub scenario: Scenario,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub data: DataConfig,
    pub decode: DecodeConfig,
    pub sweep: SweepConfig,
    pub anova: StabilitySettings,
    pub continual: ContinualSettings,
    pub infer: InferSettings,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            seed: 0,
            scenario: Scenario::Pv,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            pretrain: PretrainConfig::default(),
            data: DataConfig::default(),
            decode: DecodeConfig::default(),
            sweep: SweepConfig::default(),
            anova: StabilitySettings::default(),
            continual: ContinualSettings::default(),
            infer: InferSettings::default(),
            paths: Paths::default(),
        }
    }
}

fn parse_weights(v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|w| num("sweep.weights", w)).collect()
}

fn parse_policy(v: &str) -> Result<PrefixPolicy> {
    match v.trim() {
        "clone" => Ok(PrefixPolicy::CloneNew),
        "freeze" => Ok(PrefixPolicy::Freeze),
        other => Err(Error::Config(format!("prefix policy `{other}` is not clone or freeze"))),
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    let v = v.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Applies `section.key = value`.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match section {
            "run" => match key {
                "command" => self.command = value.trim().to_string(),
                "seed" => self.seed = num(key, value)?,
                "scenario" => self.scenario = value.trim().parse()?,
                _ => return Err(unknown(section, key)),
            },
            "model" => self.model.set(key, value)?,
            "train" => {
                if key == "seed" {
                    return Err(Error::Config("the training seed is [run] seed".into()));
                }
                self.train.set(key, value)?
            }
            "pretrain" => {
                let p = &mut self.pretrain;
                match key {
                    "examples" => p.examples = num(key, value)?,
                    "numeric_share" => p.numeric_share = num(key, value)?,
                    "lr" => p.lr = num(key, value)?,
                    "epochs" => p.epochs = num(key, value)?,
                    "batch_size" => p.batch_size = num(key, value)?,
                    _ => return Err(unknown(section, key)),
                }
            }
            "data" => {
                let d = &mut self.data;
                match key {
                    "days" => d.days = num(key, value)?,
                    "horizon" => d.horizon = num(key, value)?,
                    "train_fraction" => d.train_fraction = num(key, value)?,
                    "capacity" => {
                        d.capacity = match value.trim() {
                            "" | "default" => None,
                            v => Some(num(key, v)?),
                        }
                    }
                    "bins" => d.bins = num(key, value)?,
                    "text_ratio" => d.text_ratio = num(key, value)?,
                    "stride" => d.stride = num(key, value)?,
                    _ => return Err(unknown(section, key)),
                }
            }
            "decode" => {
                let d = &mut self.decode;
                match key {
                    "samples" => d.samples = num(key, value)?,
                    "temperature" => d.temperature = num(key, value)?,
                    "max_new" => d.max_new = num(key, value)?,
                    _ => return Err(unknown(section, key)),
                }
            }
            "sweep" => {
                let s = &mut self.sweep;
                match key {
                    "weights" => s.weights = parse_weights(value)?,
                    "seeds" => s.seeds = num(key, value)?,
                    "train_windows" => s.train_windows = num(key, value)?,
                    "test_windows" => s.test_windows = num(key, value)?,
                    _ => return Err(unknown(section, key)),
                }
            }
            "anova" => {
                let a = &mut self.anova;
                match key {
                    "runs" => a.runs = num(key, value)?,
                    "groups" => a.groups = num(key, value)?,
                    "inputs" => a.inputs = num(key, value)?,
                    "max_excluded" => a.max_excluded = num(key, value)?,
                    _ => return Err(unknown(section, key)),
                }
            }
            "continual" => match key {
                "rank" => self.continual.rank = num(key, value)?,
                "prefix" => self.continual.prefix = parse_policy(value)?,
                _ => return Err(unknown(section, key)),
            },
            "infer" => match key {
                "mode" => self.infer.mode = value.parse()?,
                "row" => {
                    self.infer.row = match value.trim() {
                        "" | "last" => None,
                        v => Some(num(key, v)?),
                    }
                }
                _ => return Err(unknown(section, key)),
            },
            "paths" => {
                let p = &mut self.paths;
                let v = opt_path(value);
                match key {
                    "data" => p.data = v,
                    "base" => p.base = v,
                    "model" => p.model = v,
                    "registry" => p.registry = v,
                    "root" => p.root = v,
                    _ => return Err(unknown(section, key)),
                }
            }
            _ => return Err(Error::Config(format!("unknown section [{section}]"))),
        }
        Ok(())
    }

    /// `section.key=value`, as given on the command line.
    pub fn set_dotted(&mut self, assignment: &str) -> Result<()> {
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected section.key=value, got `{assignment}`")))?;
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("expected section.key, got `{path}`")))?;
        self.set(section.trim(), key.trim(), value)
    }

    pub fn from_ini(ini: &Ini) -> Result<Self> {
        let mut c = RunConfig::default();
        for name in ini.section_names() {
            if name.is_empty() {
                return Err(Error::Config("keys outside a section".into()));
            }
            for (k, v) in ini.section(name).unwrap_or_default() {
                c.set(name, k, v)?;
            }
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_ini(&Ini::load(path)?)
    }

    pub fn to_ini(&self) -> Ini {
        let mut ini = Ini::new();
        ini.set("run", "command", self.command.clone());
        ini.set("run", "seed", self.seed.to_string());
        ini.set("run", "scenario", self.scenario.name());
        for (k, v) in self.model.to_pairs() {
            ini.set("model", k, v);
        }
        for (k, v) in self.train.to_pairs() {
            if k != "seed" {
                ini.set("train", k, v);
            }
        }
        let p = &self.pretrain;
        ini.set("pretrain", "examples", p.examples.to_string());
        ini.set("pretrain", "numeric_share", p.numeric_share.to_string());
        ini.set("pretrain", "lr", p.lr.to_string());
        ini.set("pretrain", "epochs", p.epochs.to_string());
        ini.set("pretrain", "batch_size", p.batch_size.to_string());
        let d = &self.data;
        ini.set("data", "days", d.days.to_string());
        ini.set("data", "horizon", d.horizon.to_string());
        ini.set("data", "train_fraction", d.train_fraction.to_string());
        ini.set("data", "capacity", d.capacity.map_or("default".into(), |c| c.to_string()));
        ini.set("data", "bins", d.bins.to_string());
        ini.set("data", "text_ratio", d.text_ratio.to_string());
        ini.set("data", "stride", d.stride.to_string());
        ini.set("decode", "samples", self.decode.samples.to_string());
        ini.set("decode", "temperature", self.decode.temperature.to_string());
        ini.set("decode", "max_new", self.decode.max_new.to_string());
        let w: Vec<String> = self.sweep.weights.iter().map(|w| w.to_string()).collect();
        ini.set("sweep", "weights", w.join(","));
        ini.set("sweep", "seeds", self.sweep.seeds.to_string());
        ini.set("sweep", "train_windows", self.sweep.train_windows.to_string());
        ini.set("sweep", "test_windows", self.sweep.test_windows.to_string());
        let a = &self.anova;
        ini.set("anova", "runs", a.runs.to_string());
        ini.set("anova", "groups", a.groups.to_string());
        ini.set("anova", "inputs", a.inputs.to_string());
        ini.set("anova", "max_excluded", a.max_excluded.to_string());
        ini.set("continual", "rank", self.continual.rank.to_string());
        let policy = match self.continual.prefix {
            PrefixPolicy::CloneNew => "clone",
            PrefixPolicy::Freeze => "freeze",
        };
        ini.set("continual", "prefix", policy);
        ini.set("infer", "mode", self.infer.mode.name());
        ini.set("infer", "row", self.infer.row.map_or("last".into(), |r| r.to_string()));
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        ini.set("paths", "data", path(&self.paths.data));
        ini.set("paths", "base", path(&self.paths.base));
        ini.set("paths", "model", path(&self.paths.model));
        ini.set("paths", "registry", path(&self.paths.registry));
        ini.set("paths", "root", path(&self.paths.root));
        ini
    }

    pub fn capacity(&self) -> f64 {
        self.data.capacity.unwrap_or_else(|| self.scenario.default_capacity())
    }

    pub fn validate(&self) -> Result<()> {
        let mut m = self.model.clone();
        if m.vocab_size == 0 {
            // filled in from the vocabulary at pretraining time
            m.vocab_size = 1;
        }
        m.validate()?;
        self.train.validate()?;
        if m.channels != self.scenario.channels() {
            return Err(Error::Config(format!(
                "model.channels is {} but {} data has {} channels",
                m.channels,
                self.scenario,
                self.scenario.channels()
            )));
        }
        let p = &self.pretrain;
        if p.examples == 0 || p.batch_size == 0 || !(0.0..=1.0).contains(&p.numeric_share) {
            return Err(Error::Config("pretrain needs examples, a batch size and a share in [0, 1]".into()));
        }
        if !(p.lr >= 0.0 && p.lr.is_finite()) {
            return Err(Error::Config(format!("pretrain lr must be non-negative, got {}", p.lr)));
        }
        let d = &self.data;
        if d.days == 0 || d.horizon == 0 || d.bins == 0 || d.stride == 0 {
            return Err(Error::Config("data days, horizon, bins and stride must be positive".into()));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction {} outside (0, 1)", d.train_fraction)));
        }
        if d.capacity.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("capacity must be positive".into()));
        }
        if !(d.text_ratio >= 0.0 && d.text_ratio.is_finite()) {
            return Err(Error::Config("text_ratio must be non-negative".into()));
        }
        if self.decode.samples == 0 || self.decode.max_new == 0 {
            return Err(Error::Config("decode samples and max_new must be positive".into()));
        }
        if !(self.decode.temperature >= 0.0 && self.decode.temperature.is_finite()) {
            return Err(Error::Config("temperature must be non-negative".into()));
        }
        let s = &self.sweep;
        if s.weights.is_empty() || s.weights.iter().any(|w| !(*w > 0.0 && *w < 1.0)) {
            return Err(Error::Config("sweep weights must lie in (0, 1)".into()));
        }
        if s.seeds == 0 || s.train_windows == 0 || s.test_windows == 0 {
            return Err(Error::Config("sweep seeds and window counts must be positive".into()));
        }
        let a = &self.anova;
        if a.groups < 2 || !a.runs.is_multiple_of(a.groups) || a.inputs == 0 || !(0.0..=1.0).contains(&a.max_excluded) {
            return Err(Error::Config("anova runs must split into at least 2 equal groups".into()));
        }
        if self.continual.rank == 0 {
            return Err(Error::Config("continual rank must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ini_roundtrip() {
        let mut c = RunConfig::default();
        c.command = "sweep".into();
        c.seed = 9;
        c.scenario = Scenario::Wind;
        c.sweep.weights = vec![0.1, 0.9];
        c.data.capacity = Some(12.5);
        c.paths.data = Some("d".into());
        c.continual.prefix = PrefixPolicy::Freeze;
        c.infer.mode = InferMode::Cot;
        c.infer.row = Some(30);
        let back = RunConfig::from_ini(&Ini::parse(&c.to_ini().render()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_ini(&Ini::parse("[train]\nlrr = 1").unwrap()).is_err());
        assert!(RunConfig::from_ini(&Ini::parse("[nope]\nx = 1").unwrap()).is_err());
        assert!(RunConfig::from_ini(&Ini::parse("[train]\nseed = 1").unwrap()).is_err());
        assert!(RunConfig::from_ini(&Ini::parse("x = 1").unwrap()).is_err());
        let mut c = RunConfig::default();
        assert!(c.set_dotted("data.days=3").is_ok());
        assert_eq!(c.data.days, 3);
        assert!(c.set_dotted("days=3").is_err());
    }

    #[test]
    fn default_validates() {
        RunConfig::default().validate().unwrap();
        let mut c = RunConfig::default();
        c.scenario = Scenario::Load;
        assert!(c.validate().is_err());
        c.model.channels = 5;
        c.validate().unwrap();
    }
}
