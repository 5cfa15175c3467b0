//! Directory checkpoints: `model.eflm` (tensors), `vocab.txt`, `config.ini`.
//!
//! `model.eflm` layout, all integers little-endian:
//! `"EFLM"`, `u32` version, `u32` tensor count, then per tensor
//! `u16` name length, UTF-8 name, `u8` rank, `u32` per dim, `f32` data.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::adapter::{Adapter, LoraFactors, Slot};
use super::config::ModelConfig;
use super::transformer::Model;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::ini::Ini;
use crate::text::Vocabulary;

pub const MAGIC: &[u8; 4] = b"EFLM";
pub const VERSION: u32 = 1;
pub const TENSOR_FILE: &str = "model.eflm";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CONFIG_FILE: &str = "config.ini";

pub fn encode_tensors<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<Vec<u8>> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Checkpoint("rank exceeds 255".into()))?;
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&t.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated tensor file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let bytes = r.take(numel.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

/// Hex SHA-256 over a tensor's shape and little-endian data.
pub fn tensor_digest(t: &Tensor) -> String {
    let mut h = Sha256::new();
    for &d in t.shape() {
        h.update((d as u32).to_le_bytes());
    }
    h.update(t.to_le_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// A model with its vocabulary and free-form metadata sections.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
    /// Extra sections written to `config.ini` next to the model description.
    pub meta: Ini,
}

const RESERVED_SECTIONS: [&str; 3] = ["model", "adapters", "prefixes"];

impl Checkpoint {
    pub fn config_ini(&self) -> Ini {
        let mut ini = Ini::new();
        for (k, v) in self.model.config.to_pairs() {
            ini.set("model", k, v);
        }
        let adapters = self.model.stack.adapters();
        ini.set("adapters", "count", adapters.len().to_string());
        for (i, a) in adapters.iter().enumerate() {
            ini.set(
                "adapters",
                &i.to_string(),
                format!("rank={} active={} trainable={}", a.rank, a.active as u8, a.trainable as u8),
            );
        }
        ini.set("prefixes", "count", self.model.prefixes.len().to_string());
        for name in self.meta.section_names() {
            for (k, v) in self.meta.section(name).unwrap_or_default() {
                ini.set(name, k, v.clone());
            }
        }
        ini
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let named = self.model.named_tensors();
        let bytes = encode_tensors(named.iter().map(|(n, t)| (n.as_str(), *t)))?;
        let path = dir.join(TENSOR_FILE);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        self.config_ini().save(&dir.join(CONFIG_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ini = Ini::load(&dir.join(CONFIG_FILE))?;
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let mut config = ModelConfig::default();
        for (k, v) in ini.section("model").unwrap_or_default() {
            config.set(k, v)?;
        }
        if config.vocab_size != vocab.len() {
            return Err(Error::Checkpoint(format!(
                "config vocab_size {} but vocabulary has {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        let mut model = Model::init(config, 0)?;
        let count = |key: &str| -> Result<usize> {
            ini.get(key, "count")
                .ok_or_else(|| Error::Checkpoint(format!("missing {key}.count")))?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad {key}.count")))
        };
        let n_prefix = count("prefixes")?;
        let template = model.prefixes[0].clone();
        model.prefixes = vec![template; n_prefix];
        for i in 0..count("adapters")? {
            let spec = ini
                .get("adapters", &i.to_string())
                .ok_or_else(|| Error::Checkpoint(format!("missing adapter {i}")))?;
            let adapter = parse_adapter(spec, &model)?;
            model.stack.push_restored(adapter)?;
        }
        let path = dir.join(TENSOR_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let records = decode_tensors(&bytes)?;
        let expected = model.named_tensors().len();
        if records.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} tensors, file has {}",
                records.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (name, t) in records {
            if !seen.insert(name.clone()) {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
            let slot = model
                .tensor_mut(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        let mut meta = Ini::new();
        for name in ini.section_names() {
            if RESERVED_SECTIONS.contains(&name) {
                continue;
            }
            for (k, v) in ini.section(name).unwrap_or_default() {
                meta.set(name, k, v.clone());
            }
        }
        Ok(Checkpoint { model, vocab, meta })
    }
}

fn parse_adapter(spec: &str, model: &Model) -> Result<Adapter> {
    let mut rank = None;
    let mut active = None;
    let mut trainable = None;
    for part in spec.split_whitespace() {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad adapter entry `{spec}`")))?;
        let bad = || Error::Checkpoint(format!("bad adapter field `{part}`"));
        match k {
            "rank" => rank = Some(v.parse::<usize>().map_err(|_| bad())?),
            "active" => active = Some(v == "1"),
            "trainable" => trainable = Some(v == "1"),
            _ => return Err(bad()),
        }
    }
    let (Some(rank), Some(active), Some(trainable)) = (rank, active, trainable) else {
        return Err(Error::Checkpoint(format!("incomplete adapter entry `{spec}`")));
    };
    let factors = (0..model.stack.layers())
        .map(|l| {
            Slot::ALL.map(|s| {
                let w = model.stack.base(l, s);
                LoraFactors {
                    a: Tensor::zeros(&[w.rows(), rank]),
                    b: Tensor::zeros(&[w.cols(), rank]),
                }
            })
        })
        .collect();
    Ok(Adapter {
        rank,
        active,
        trainable,
        factors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_file_roundtrip_and_layout() {
        let a = Tensor::matrix(1, 2, vec![1.0, -2.0]).unwrap();
        let s = Tensor::scalar(0.5);
        let bytes = encode_tensors([("a", &a), ("s", &s)]).unwrap();
        assert_eq!(&bytes[..4], b"EFLM");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..14], &1u16.to_le_bytes());
        assert_eq!(bytes[14], b'a');
        assert_eq!(bytes[15], 2);
        let back = decode_tensors(&bytes).unwrap();
        assert_eq!(back[0], ("a".to_string(), a));
        assert_eq!(back[1].1.item(), 0.5);
        assert_eq!(encode_tensors(back.iter().map(|(n, t)| (n.as_str(), t))).unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_rejected() {
        let t = Tensor::scalar(1.0);
        let bytes = encode_tensors([("x", &t)]).unwrap();
        assert!(decode_tensors(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(decode_tensors(&bad).is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(decode_tensors(&trailing).is_err());
    }

    #[test]
    fn digest_tracks_shape() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        assert_ne!(tensor_digest(&a), tensor_digest(&b));
        assert_eq!(tensor_digest(&a).len(), 64);
    }
}
