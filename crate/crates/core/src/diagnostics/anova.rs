use std::io::Write;

use rayon::prelude::*;
use statrs::function::beta::beta_reg;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::forecast::{sample_seed, Forecaster, SAMPLE_TEMPERATURE};
use crate::model::Decode;

/// One-way ANOVA decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct AnovaReport {
    pub sst: f64,
    pub ssb: f64,
    pub ssw: f64,
    pub msb: f64,
    pub msw: f64,
    pub f: f64,
    pub p: f64,
    pub k: usize,
    pub n: usize,
    pub group_sizes: Vec<usize>,
}

/// `P(X > f)` for `X ~ F(d1, d2)`.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if !f.is_finite() {
        return 0.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

pub fn anova(groups: &[Vec<f64>]) -> Result<AnovaReport> {
    let k = groups.len();
    let n: usize = groups.iter().map(Vec::len).sum();
    if k < 2 {
        return Err(Error::Contract(format!("anova needs at least 2 groups, got {k}")));
    }
    if n <= k {
        return Err(Error::Contract(format!("anova needs more observations ({n}) than groups ({k})")));
    }
    if groups.iter().any(Vec::is_empty) {
        return Err(Error::Contract("anova group is empty".into()));
    }
    if groups.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("anova observations"));
    }
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let means: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
    let sst: f64 = groups.iter().flatten().map(|x| (x - grand).powi(2)).sum();
    let ssb: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.len() as f64 * (m - grand).powi(2))
        .sum();
    let ssw: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|x| (x - m).powi(2)).sum::<f64>())
        .sum();
    let scale: f64 = groups.iter().flatten().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    if ssw <= 1e-24 * scale {
        return Err(Error::ZeroWithinVariance);
    }
    let d1 = (k - 1) as f64;
    let d2 = (n - k) as f64;
    let msb = ssb / d1;
    let msw = ssw / d2;
    let f = msb / msw;
    Ok(AnovaReport {
        sst,
        ssb,
        ssw,
        msb,
        msw,
        f,
        p: f_survival(f, d1, d2),
        k,
        n,
        group_sizes: groups.iter().map(Vec::len).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityConfig {
    pub runs: usize,
    pub groups: usize,
    pub temperature: f32,
    pub seed: u64,
    /// Largest tolerated share of non-conforming runs.
    pub max_excluded: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            runs: 100,
            groups: 10,
            temperature: SAMPLE_TEMPERATURE,
            seed: 0,
            max_excluded: 0.2,
        }
    }
}

/// One model input: optional numeric window and prompt text.
pub type StabilityInput = (Option<Tensor>, String);

/// Repeated sampled inference. Run `i` uses `inputs[i % inputs.len()]`; runs
/// are cut into `groups` sequential groups and the parsed regression values
/// go through [`anova`]. A temperature of 0 decodes greedily.
pub fn stability_run(
    forecaster: &Forecaster<'_>,
    inputs: &[StabilityInput],
    cfg: &StabilityConfig,
) -> Result<(AnovaReport, Vec<Option<f64>>)> {
    if inputs.is_empty() {
        return Err(Error::Empty("stability inputs"));
    }
    if cfg.groups < 2 || !cfg.runs.is_multiple_of(cfg.groups) {
        return Err(Error::Config(format!(
            "{} runs cannot be split into {} equal groups",
            cfg.runs, cfg.groups
        )));
    }
    let decode = if cfg.temperature > 0.0 {
        Decode::Sample {
            temperature: cfg.temperature,
        }
    } else {
        Decode::Greedy
    };
    let values: Vec<Option<f64>> = (0..cfg.runs)
        .into_par_iter()
        .map(|i| {
            let (w, prompt) = &inputs[i % inputs.len()];
            let r = forecaster.predict(w.as_ref(), prompt, decode, sample_seed(cfg.seed, i))?;
            Ok(r.value.filter(|_| r.conforming()))
        })
        .collect::<Result<_>>()?;
    let excluded = values.iter().filter(|v| v.is_none()).count();
    if excluded as f64 > cfg.max_excluded * cfg.runs as f64 {
        return Err(Error::UnstableModel {
            excluded,
            total: cfg.runs,
        });
    }
    let size = cfg.runs / cfg.groups;
    let groups: Vec<Vec<f64>> = values.chunks(size).map(|c| c.iter().flatten().copied().collect()).collect();
    Ok((anova(&groups)?, values))
}

/// `scenario,F,p` rows.
pub fn write_anova_csv<W: Write>(rows: &[(String, AnovaReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["scenario", "F", "p"])?;
    for (s, r) in rows {
        w.write_record([s.clone(), format!("{:.6}", r.f), format!("{:.6}", r.p)])?;
    }
    w.flush().map_err(|e| Error::io("anova csv", e))
}
