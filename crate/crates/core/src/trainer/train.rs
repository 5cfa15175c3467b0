use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::Adam;
use super::example::EncodedExample;
use super::loss::multitask_loss;
use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::{Model, ModelInput, TrainMask};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    /// `λ`, weight of the Frobenius penalty.
    pub lambda: f32,
    /// `ϖ` given to multimodal examples when they are built.
    pub weight: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 3,
            batch_size: 8,
            lambda: 1e-4,
            weight: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be non-negative, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::Config(format!("weight must lie in [0, 1], got {}", self.weight)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lambda", self.lambda.to_string()),
            ("weight", self.weight.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid value `{v}` for {key}")))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "weight" => self.weight = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::Config(format!("unknown train key `{other}`"))),
        }
        Ok(())
    }
}

/// One optimizer step; losses are batch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f32,
    pub loss_task1: f32,
    pub loss_task2: f32,
    pub frob_penalty: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub rows: Vec<LossRow>,
    pub epoch_means: Vec<f32>,
}

impl LossCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "step", "loss", "loss_task1", "loss_task2", "frob_penalty"])?;
        for r in &self.rows {
            w.write_record([
                r.epoch.to_string(),
                r.step.to_string(),
                r.loss.to_string(),
                r.loss_task1.to_string(),
                r.loss_task2.to_string(),
                r.frob_penalty.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("loss curve", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Seeded permutation of `0..len` for one epoch.
pub fn align_batches(len: usize, seed: u64, epoch: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::Empty("training set"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
    Ok(order)
}

/// Loss terms of one example plus gradients of every trainable tensor it touches.
#[derive(Debug, Clone)]
pub struct ExampleGrad {
    pub loss: f32,
    pub task1: f32,
    pub task2: f32,
    pub frob: f32,
    pub grads: Vec<(String, Tensor)>,
}

pub fn example_gradients(model: &Model, ex: &EncodedExample, lambda: f32, mask: TrainMask) -> Result<ExampleGrad> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, mask)?;
    let input = ModelInput {
        numeric: ex.numeric.as_ref(),
        text: &ex.ids,
    };
    let (logits, spans) = model.forward_on_graph(&mut g, &vars, input)?;
    let terms = multitask_loss(
        &mut g,
        logits,
        spans.text.start,
        &ex.ids,
        &ex.span,
        lambda,
        &vars.trainable_factors,
    )?;
    let mut grads = g.backward(terms.total)?;
    let named = vars
        .trainable
        .iter()
        .filter_map(|(n, v)| grads.take(*v).map(|t| (n.clone(), t)))
        .collect();
    Ok(ExampleGrad {
        loss: g.value(terms.total).item(),
        task1: g.value(terms.task1).item(),
        task2: g.value(terms.task2).item(),
        frob: g.value(terms.frob).item(),
        grads: named,
    })
}

/// Mean total loss over a set, without updating anything.
pub fn mean_loss(model: &Model, data: &[EncodedExample], lambda: f32) -> Result<f32> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let losses = data
        .par_iter()
        .map(|ex| example_gradients(model, ex, lambda, TrainMask::FROZEN).map(|e| e.loss))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f32>() / data.len() as f32)
}

fn diverged(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite(_) => Error::Divergence {
            epoch,
            step,
            loss: f32::NAN,
        },
        other => other,
    }
}

/// Adam on the tensors selected by `mask`; everything else stays bit-identical.
pub fn train(model: &Model, data: &[EncodedExample], cfg: &TrainConfig, mask: TrainMask) -> Result<(Model, LossCurve)> {
    cfg.validate()?;
    if mask.adapter {
        let idx = model
            .stack
            .trainable_index()
            .ok_or_else(|| Error::Contract("no trainable adapter in the stack".into()))?;
        if !model.stack.adapters()[idx].active {
            return Err(Error::Contract("trainable adapter is inactive".into()));
        }
    }
    if mask.prefix && model.prefixes.is_empty() {
        return Err(Error::Contract("no prefix block to train".into()));
    }
    let mut model = model.clone();
    let mut opt = Adam::new(cfg.lr);
    let mut curve = LossCurve::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = align_batches(data.len(), cfg.seed, epoch)?;
        let mut epoch_total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| example_gradients(&model, &data[i], cfg.lambda, mask))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| diverged(e, epoch, step))?;
            let n = batch.len() as f32;
            let mut sum: BTreeMap<String, Tensor> = BTreeMap::new();
            let (mut loss, mut t1, mut t2, mut frob) = (0.0f32, 0.0f32, 0.0f32, 0.0f32);
            for r in results {
                loss += r.loss;
                t1 += r.task1;
                t2 += r.task2;
                frob += r.frob;
                for (name, g) in r.grads {
                    match sum.get_mut(&name) {
                        Some(acc) => {
                            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                                *a += b;
                            }
                        }
                        None => {
                            sum.insert(name, g);
                        }
                    }
                }
            }
            let loss = loss / n;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            let grads: Vec<(String, Tensor)> = sum
                .into_iter()
                .map(|(name, mut g)| {
                    g.data_mut().iter_mut().for_each(|x| *x /= n);
                    (name, g)
                })
                .collect();
            opt.update(&grads, &mut model)?;
            curve.rows.push(LossRow {
                epoch,
                step,
                loss,
                loss_task1: t1 / n,
                loss_task2: t2 / n,
                frob_penalty: frob / n,
            });
            epoch_total += (loss * n) as f64;
            step += 1;
        }
        curve.epoch_means.push((epoch_total / data.len() as f64) as f32);
    }
    Ok((model, curve))
}

/// What happens to the prefix block during a continual update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrefixPolicy {
    /// Train a copy of the newest prefix; earlier blocks stay as they were.
    #[default]
    CloneNew,
    /// Keep the current prefix frozen.
    Freeze,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinualConfig {
    pub rank: usize,
    pub seed: u64,
    pub prefix: PrefixPolicy,
}

/// Pushes a fresh adapter (freezing earlier ones) and trains only it, plus a
/// cloned prefix block under [`PrefixPolicy::CloneNew`].
pub fn continual_update(
    model: &Model,
    data: &[EncodedExample],
    cfg: &TrainConfig,
    opts: ContinualConfig,
) -> Result<(Model, LossCurve)> {
    let mut next = model.clone();
    next.stack = next.stack.push_adapter(opts.rank, opts.seed)?;
    let train_prefix = opts.prefix == PrefixPolicy::CloneNew;
    if train_prefix {
        let last = next
            .prefixes
            .last()
            .cloned()
            .ok_or_else(|| Error::Contract("model has no prefix block".into()))?;
        next.prefixes.push(last);
    }
    if data.is_empty() {
        return Ok((next, LossCurve::default()));
    }
    let mask = TrainMask {
        base: false,
        adapter: true,
        prefix: train_prefix,
    };
    train(&next, data, cfg, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_a_seeded_permutation() {
        let a = align_batches(20, 3, 0).unwrap();
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
        assert_eq!(a, align_batches(20, 3, 0).unwrap());
        assert_ne!(a, align_batches(20, 3, 1).unwrap());
        assert!(align_batches(0, 3, 0).is_err());
    }

    #[test]
    fn config_pairs_roundtrip() {
        let c = TrainConfig {
            lr: 0.01,
            epochs: 7,
            ..Default::default()
        };
        let mut d = TrainConfig::default();
        for (k, v) in c.to_pairs() {
            d.set(k, &v).unwrap();
        }
        assert_eq!(c, d);
        d.lambda = -1.0;
        assert!(d.validate().is_err());
    }
}
