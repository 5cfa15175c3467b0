use std::collections::BTreeMap;

use rayon::prelude::*;

use super::template::{parse_response, step2_prompt, ForecastResponse};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{Decode, Model};
use crate::text::{detokenize, tokenize, Vocabulary, BOS};

/// Temperature for averaged and stability runs.
pub const SAMPLE_TEMPERATURE: f32 = 0.7;
pub const DEFAULT_MAX_NEW: usize = 32;

/// Result of aggregating sampled responses.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedPrediction {
    pub class: usize,
    pub value: f64,
    pub used: usize,
    pub non_conforming: usize,
}

/// Majority class (ties to the lower id) and mean value over conforming samples.
pub fn aggregate(samples: &[ForecastResponse]) -> Result<AveragedPrediction> {
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    let mut values = Vec::new();
    for s in samples {
        if let (Some(c), Some(v)) = (s.class, s.value) {
            *votes.entry(c).or_default() += 1;
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::HallucinationStorm(samples.len()));
    }
    let class = votes
        .iter()
        .fold((0, 0), |best, (&c, &n)| if n > best.1 { (c, n) } else { best })
        .0;
    values.sort_by(f64::total_cmp);
    let value = values.iter().sum::<f64>() / values.len() as f64;
    Ok(AveragedPrediction {
        class,
        value,
        used: values.len(),
        non_conforming: samples.len() - values.len(),
    })
}

/// Text-level generation over a model and its vocabulary.
#[derive(Debug, Clone, Copy)]
pub struct Forecaster<'a> {
    pub model: &'a Model,
    pub vocab: &'a Vocabulary,
    pub max_new: usize,
}

impl<'a> Forecaster<'a> {
    pub fn new(model: &'a Model, vocab: &'a Vocabulary) -> Self {
        Forecaster {
            model,
            vocab,
            max_new: DEFAULT_MAX_NEW,
        }
    }

    pub fn prompt_ids(&self, prompt: &str) -> Vec<usize> {
        let mut ids = vec![BOS];
        ids.extend(tokenize(prompt, self.vocab).ids);
        ids
    }

    /// Generated ids and their detokenized text.
    pub fn generate_ids(
        &self,
        numeric: Option<&Tensor>,
        prompt_ids: &[usize],
        decode: Decode,
        seed: u64,
    ) -> Result<(Vec<usize>, String)> {
        let out = self.model.generate(numeric, prompt_ids, self.max_new, decode, seed)?;
        let text = detokenize(&out.ids, self.vocab);
        Ok((out.ids, text))
    }

    pub fn generate_text(&self, numeric: Option<&Tensor>, prompt: &str, decode: Decode, seed: u64) -> Result<String> {
        Ok(self.generate_ids(numeric, &self.prompt_ids(prompt), decode, seed)?.1)
    }

    pub fn predict(&self, numeric: Option<&Tensor>, prompt: &str, decode: Decode, seed: u64) -> Result<ForecastResponse> {
        Ok(parse_response(&self.generate_text(numeric, prompt, decode, seed)?))
    }

    /// `n` seeded samples at `temperature`, one independent stream each.
    pub fn samples(
        &self,
        numeric: Option<&Tensor>,
        prompt: &str,
        n: usize,
        temperature: f32,
        seed: u64,
    ) -> Result<Vec<ForecastResponse>> {
        let ids = self.prompt_ids(prompt);
        let decode = Decode::Sample { temperature };
        (0..n)
            .into_par_iter()
            .map(|i| {
                let (_, text) = self.generate_ids(numeric, &ids, decode, sample_seed(seed, i))?;
                Ok(parse_response(&text))
            })
            .collect()
    }

    pub fn averaged_predict(
        &self,
        numeric: Option<&Tensor>,
        prompt: &str,
        n: usize,
        temperature: f32,
        seed: u64,
    ) -> Result<AveragedPrediction> {
        aggregate(&self.samples(numeric, prompt, n, temperature, seed)?)
    }

    /// Greedy two-step inference: time series only, then with the first
    /// answer and the weather text appended.
    pub fn cot_infer(
        &self,
        numeric: Option<&Tensor>,
        step1: &str,
        weather: &str,
    ) -> Result<(ForecastResponse, ForecastResponse)> {
        let first = self.predict(numeric, step1, Decode::Greedy, 0)?;
        let second = self.predict(numeric, &step2_prompt(step1, &first.raw, weather), Decode::Greedy, 0)?;
        Ok((first, second))
    }
}

pub fn sample_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Last-value carry-forward: the forecast for step `t` is `series[t - 1]`.
pub fn persistence(series: &[f64]) -> Vec<f64> {
    series.windows(2).map(|w| w[0]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::template::render_answer;

    fn resp(c: usize, v: f64) -> ForecastResponse {
        parse_response(&render_answer(c, v, "kW"))
    }

    #[test]
    fn majority_and_mean() {
        let mut s: Vec<_> = (0..30).map(|_| resp(3, 10.0)).collect();
        s.extend((0..20).map(|_| resp(4, 12.0)));
        let a = aggregate(&s).unwrap();
        assert_eq!(a.class, 3);
        assert!((a.value - 10.8).abs() < 1e-9);
        let b = aggregate(&[resp(5, 10.0), resp(4, 12.0)]).unwrap();
        assert_eq!(b.class, 4);
        assert_eq!(b.value, 11.0);
    }

    #[test]
    fn storms_and_exclusions() {
        let junk = parse_response("it will be sunny");
        assert!(matches!(aggregate(&[junk.clone(), junk.clone()]), Err(Error::HallucinationStorm(2))));
        let a = aggregate(&[junk, resp(1, 2.0)]).unwrap();
        assert_eq!((a.used, a.non_conforming), (1, 1));
    }

    #[test]
    fn persistence_shifts() {
        assert_eq!(persistence(&[1.0, 2.0, 5.0]), vec![1.0, 2.0]);
    }
}
