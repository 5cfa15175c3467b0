//! Placeholder fusion, the decoder body and the LoRA adapter stack.

mod adapter;
mod checkpoint;
mod config;
mod fusion;
mod generate;
mod transformer;

pub use adapter::{lora_name, Adapter, AdapterStack, LoraFactors, Slot};
pub use checkpoint::{decode_tensors, encode_tensors, tensor_digest, Checkpoint, CONFIG_FILE, TENSOR_FILE, VOCAB_FILE};
pub use config::{Decode, ModelConfig};
pub use fusion::{fuse, fuse_on_graph, FusedSequence, Spans};
pub use generate::{argmax, sample_row};
pub use transformer::{BaseWeights, LayerWeights, Model, ModelInput, ModelVars, TrainMask};
