use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::Decode;
use super::transformer::{Model, ModelInput};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::text::{TokenSequence, EOS};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Draws from `softmax(row / temperature)` with one uniform draw.
pub fn sample_row(row: &[f32], temperature: f32, rng: &mut impl Rng) -> usize {
    if temperature <= 0.0 {
        return argmax(row);
    }
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let weights: Vec<f64> = row.iter().map(|&v| (((v - max) / temperature) as f64).exp()).collect();
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last_nonzero = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    last_nonzero
}

impl Model {
    /// Autoregressive decoding after `prompt` until EOS, `max_new` tokens or
    /// the position budget. The returned ids exclude the prompt and any EOS.
    pub fn generate(
        &self,
        numeric: Option<&Tensor>,
        prompt: &[usize],
        max_new: usize,
        decode: Decode,
        seed: u64,
    ) -> Result<TokenSequence> {
        let fixed = match numeric {
            Some(_) => self.config.prefix_len,
            None => 0,
        } + self.config.placeholder_len;
        if fixed + prompt.len() > self.config.max_len {
            return Err(Error::Length {
                len: fixed + prompt.len(),
                max: self.config.max_len,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ids = prompt.to_vec();
        let mut out = Vec::new();
        while out.len() < max_new && fixed + ids.len() < self.config.max_len {
            let (logits, _) = self.logits(ModelInput { numeric, text: &ids })?;
            let last = logits.row(logits.rows() - 1);
            let next = match decode {
                Decode::Greedy => argmax(last),
                Decode::Sample { temperature } => sample_row(last, temperature, &mut rng),
            };
            if next == EOS {
                break;
            }
            out.push(next);
            ids.push(next);
        }
        Ok(TokenSequence { ids: out, text: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model() -> Model {
        let cfg = ModelConfig {
            d_model: 8,
            layers: 1,
            heads: 2,
            d_ff: 16,
            vocab_size: 10,
            max_len: 20,
            lora_rank: 2,
            prefix_len: 2,
            placeholder_len: 1,
            placeholder_value: -1.0,
            window: 3,
            channels: 1,
            key_dim: 4,
        };
        Model::init(cfg, 3).unwrap()
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }

    #[test]
    fn greedy_is_repeatable() {
        let m = model();
        let a = m.generate(None, &[1, 5], 8, Decode::Greedy, 0).unwrap();
        let b = m.generate(None, &[1, 5], 8, Decode::Greedy, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cold_sampling_is_greedy() {
        let m = model();
        let g = m.generate(None, &[1, 6], 8, Decode::Greedy, 0).unwrap();
        let s = m
            .generate(None, &[1, 6], 8, Decode::Sample { temperature: 1e-4 }, 17)
            .unwrap();
        assert_eq!(g, s);
    }

    #[test]
    fn seeded_sampling_reproducible() {
        let m = model();
        let d = Decode::Sample { temperature: 1.5 };
        let a = m.generate(None, &[1, 7], 10, d, 5).unwrap();
        let b = m.generate(None, &[1, 7], 10, d, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn budget_respected() {
        let m = model();
        let s = m.generate(None, &[1; 15], 50, Decode::Greedy, 0).unwrap();
        assert!(s.ids.len() <= 20 - 1 - 15);
        assert!(m.generate(None, &[1; 25], 5, Decode::Greedy, 0).is_err());
    }
}
