//! Desk-scale energy forecasting language model: a small decoder fine-tuned
//! with fused prefix + LoRA adapters on synthetic time-series/text corpora.

pub mod agent;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod forecast;
pub mod ini;
pub mod model;
pub mod pipeline;
pub mod prefix;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
