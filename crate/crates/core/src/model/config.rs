use crate::error::{Error, Result};

/// Shape of the decoder, the LoRA rank and the prefix/placeholder layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Model width `d`.
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub lora_rank: usize,
    /// `P`: rows produced by the prefix block.
    pub prefix_len: usize,
    /// `p`: placeholder rows between the numeric and text segments.
    pub placeholder_len: usize,
    pub placeholder_value: f32,
    /// `T`: window length fed to the prefix block.
    pub window: usize,
    /// `C`: channels per window row.
    pub channels: usize,
    /// `d_k` of the prefix attention.
    pub key_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            layers: 2,
            heads: 2,
            d_ff: 64,
            vocab_size: 0,
            max_len: 128,
            lora_rank: 4,
            prefix_len: 16,
            placeholder_len: 4,
            placeholder_value: -1.0,
            window: 24,
            channels: 4,
            key_dim: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("d_model", self.d_model),
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
            ("lora_rank", self.lora_rank),
            ("prefix_len", self.prefix_len),
            ("placeholder_len", self.placeholder_len),
            ("window", self.window),
            ("channels", self.channels),
            ("key_dim", self.key_dim),
        ];
        for (name, v) in positives {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.lora_rank > self.d_model {
            return Err(Error::Rank {
                rank: self.lora_rank,
                limit: self.d_model,
            });
        }
        if !self.placeholder_value.is_finite() {
            return Err(Error::Config("placeholder_value must be finite".into()));
        }
        if self.prefix_len + self.placeholder_len >= self.max_len {
            return Err(Error::Config("max_len leaves no room for text".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// `(key, value)` pairs in a stable order, for config snapshots.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_model", self.d_model.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("max_len", self.max_len.to_string()),
            ("lora_rank", self.lora_rank.to_string()),
            ("prefix_len", self.prefix_len.to_string()),
            ("placeholder_len", self.placeholder_len.to_string()),
            ("placeholder_value", self.placeholder_value.to_string()),
            ("window", self.window.to_string()),
            ("channels", self.channels.to_string()),
            ("key_dim", self.key_dim.to_string()),
        ]
    }

    /// Applies one `key = value` setting; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for {key}")))
        }
        match key {
            "d_model" => self.d_model = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "d_ff" => self.d_ff = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "max_len" => self.max_len = num(key, value)?,
            "lora_rank" => self.lora_rank = num(key, value)?,
            "prefix_len" => self.prefix_len = num(key, value)?,
            "placeholder_len" => self.placeholder_len = num(key, value)?,
            "placeholder_value" => self.placeholder_value = num(key, value)?,
            "window" => self.window = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "key_dim" => self.key_dim = num(key, value)?,
            other => return Err(Error::Config(format!("unknown model key `{other}`"))),
        }
        Ok(())
    }
}

/// Decoding rule for generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decode {
    Greedy,
    Sample { temperature: f32 },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let mut c = ModelConfig {
            vocab_size: 50,
            ..Default::default()
        };
        c.validate().unwrap();
        c.heads = 3;
        assert!(c.validate().is_err());
        c.heads = 2;
        c.lora_rank = 64;
        assert!(matches!(c.validate(), Err(Error::Rank { .. })));
    }

    #[test]
    fn pairs_roundtrip() {
        let c = ModelConfig {
            vocab_size: 77,
            placeholder_value: -2.5,
            ..Default::default()
        };
        let mut d = ModelConfig::default();
        for (k, v) in c.to_pairs() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
        assert!(d.set("bogus", "1").is_err());
    }
}
