//! Orchestration shared by the CLI, the FFI layer and the experiment tests:
//! vocabulary, base pre-training, F-PEFT and evaluation.

mod corpus;
mod experiment;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use corpus::{base_corpus, template_sentences};
pub use experiment::*;

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::model::{Model, ModelConfig, TrainMask};
use crate::text::Vocabulary;
use crate::trainer::{train, EncodedExample, LossCurve, TrainConfig, TrainingExample};

/// Size of the generic corpus the vocabulary and base model are built from.
pub const BASE_CORPUS_LEN: usize = 2000;

/// Vocabulary over the base corpus, every template shape and `extra` lines.
pub fn build_vocab(extra: &[String], seed: u64) -> Result<Vocabulary> {
    let mut lines: Vec<String> = base_corpus(BASE_CORPUS_LEN, seed)
        .into_iter()
        .map(|(p, c)| format!("{p} {c}"))
        .collect();
    lines.extend(template_sentences(extra));
    Vocabulary::build(&lines)
}

pub fn encode_all(examples: &[TrainingExample], vocab: &Vocabulary) -> Result<Vec<EncodedExample>> {
    examples.iter().map(|e| e.encode(vocab)).collect()
}

/// Base-model corpus. A `numeric_share` of the examples carry a random
/// window so the base sees the prefix segment at the same offsets as later
/// multimodal inputs.
pub fn base_examples(config: &ModelConfig, n: usize, numeric_share: f64, seed: u64) -> Vec<TrainingExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    base_corpus(n, seed)
        .into_iter()
        .map(|(p, c)| {
            if rng.random::<f64>() < numeric_share {
                let w = Tensor::randn(&[config.window, config.channels], 1.0, &mut rng);
                TrainingExample::multimodal(w, p, c, 1.0)
            } else {
                TrainingExample::text(p, c)
            }
        })
        .collect()
}

/// Initializes a model sized for `vocab` and trains every base tensor.
pub fn pretrain(
    config: &ModelConfig,
    vocab: &Vocabulary,
    examples: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<(Model, LossCurve)> {
    let mut config = config.clone();
    config.vocab_size = vocab.len();
    let model = Model::init(config, cfg.seed)?;
    let data = encode_all(examples, vocab)?;
    train(&model, &data, cfg, TrainMask::PRETRAIN)
}

/// Pushes a fresh rank-`rank` adapter and trains it together with the prefix.
pub fn fpeft(base: &Model, data: &[EncodedExample], cfg: &TrainConfig, rank: usize) -> Result<(Model, LossCurve)> {
    let mut model = base.clone();
    model.stack = model.stack.push_adapter(rank, cfg.seed ^ 0xADA)?;
    train(&model, data, cfg, TrainMask::PEFT)
}
