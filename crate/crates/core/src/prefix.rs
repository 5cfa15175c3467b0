//! Prefix-tuning block: turns a raw multichannel window into `P` non-negative
//! rows in the model's embedding space.
//!
//! The pipeline is single-head self-attention over the `T` window rows with
//! `1/√d_k` scaling, a two-layer ReLU MLP applied row-wise, then a learned
//! convex pooling (row-softmax of a `P×T` logit matrix) down to `P` rows.
//! Pooling with convex weights keeps the ReLU guarantee `h^N ≥ 0`.

use chrono::NaiveDateTime;
use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Raw readings for `T` consecutive instants over `C` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesWindow {
    values: Tensor,
    timestamps: Vec<NaiveDateTime>,
    channels: Vec<String>,
}

impl SeriesWindow {
    pub fn new(values: Tensor, timestamps: Vec<NaiveDateTime>, channels: Vec<String>) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::dim("series window", "values must be T×C"));
        }
        if values.rows() != timestamps.len() || values.cols() != channels.len() {
            return Err(Error::dim(
                "series window",
                format!(
                    "{}x{} values, {} timestamps, {} channels",
                    values.rows(),
                    values.cols(),
                    timestamps.len(),
                    channels.len()
                ),
            ));
        }
        if !values.is_finite() {
            return Err(Error::Schema("series window contains missing values".into()));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema("timestamps must be strictly increasing".into()));
        }
        Ok(SeriesWindow {
            values,
            timestamps,
            channels,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-channel z-score parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationParams {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormalizationParams {
    fn moments(values: &Tensor) -> Result<(Vec<f32>, Vec<f64>)> {
        let (rows, cols) = (values.rows(), values.cols());
        if rows == 0 {
            return Err(Error::Empty("normalization input"));
        }
        let mut mean = vec![0.0f64; cols];
        for r in 0..rows {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += values.get(r, c) as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0f64; cols];
        for r in 0..rows {
            for c in 0..cols {
                let d = values.get(r, c) as f64 - mean[c];
                var[c] += d * d;
            }
        }
        let std = var.iter().map(|v| (v / rows as f64).sqrt()).collect();
        Ok((mean.into_iter().map(|m| m as f32).collect(), std))
    }

    /// Fits mean and population standard deviation per column.
    pub fn fit(values: &Tensor) -> Result<Self> {
        let (mean, std) = Self::moments(values)?;
        if let Some(channel) = std.iter().position(|&s| s <= 1e-12) {
            return Err(Error::DegenerateChannel { channel });
        }
        Ok(NormalizationParams {
            mean,
            std: std.into_iter().map(|s| s as f32).collect(),
        })
    }

    /// Like [`fit`](Self::fit), but a constant channel keeps unit scale
    /// instead of failing. Meant for corpus-wide statistics where a flag
    /// column may never change inside the training span.
    pub fn fit_lenient(values: &Tensor) -> Result<Self> {
        let (mean, std) = Self::moments(values)?;
        Ok(NormalizationParams {
            mean,
            std: std.into_iter().map(|s| if s <= 1e-12 { 1.0 } else { s as f32 }).collect(),
        })
    }

    pub fn apply(&self, values: &Tensor) -> Result<Tensor> {
        self.map(values, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, normalized: &Tensor) -> Result<Tensor> {
        self.map(normalized, |v, m, s| v * s + m)
    }

    fn map(&self, values: &Tensor, f: impl Fn(f32, f32, f32) -> f32) -> Result<Tensor> {
        let cols = values.cols();
        if cols != self.mean.len() {
            return Err(Error::dim(
                "normalize",
                format!("{} channels, params for {}", cols, self.mean.len()),
            ));
        }
        let data = values
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, self.mean[i % cols], self.std[i % cols]))
            .collect();
        Tensor::new(values.shape().to_vec(), data)
    }
}

/// Z-scores every channel of the window using its own statistics.
pub fn normalize(window: &SeriesWindow) -> Result<(Tensor, NormalizationParams)> {
    let params = NormalizationParams::fit(window.values())?;
    let normalized = params.apply(window.values())?;
    Ok((normalized, params))
}

/// Trainable weights of the prefix block. Linear maps are stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    /// `P × T` pooling logits.
    pub pool: Tensor,
}

/// Graph handles for a bound [`PrefixParams`].
#[derive(Debug, Clone, Copy)]
pub struct PrefixVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub pool: Var,
}

impl PrefixVars {
    pub fn all(&self) -> [Var; 8] {
        [self.wq, self.wk, self.wv, self.w1, self.b1, self.w2, self.b2, self.pool]
    }
}

impl PrefixParams {
    pub const NAMES: [&'static str; 8] = ["wq", "wk", "wv", "w1", "b1", "w2", "b2", "pool"];

    /// Random init: `channels` inputs, key width `d_k`, output width `d`,
    /// window length `window`, `prefix_len` output rows.
    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        d_k: usize,
        d: usize,
        window: usize,
        prefix_len: usize,
        rng: &mut R,
    ) -> Self {
        let s_in = 1.0 / (channels as f32).sqrt();
        let s_k = 1.0 / (d_k as f32).sqrt();
        let s_d = 1.0 / (d as f32).sqrt();
        PrefixParams {
            wq: Tensor::randn(&[d_k, channels], s_in, rng),
            wk: Tensor::randn(&[d_k, channels], s_in, rng),
            wv: Tensor::randn(&[d_k, channels], s_in, rng),
            w1: Tensor::randn(&[d, d_k], s_k, rng),
            b1: Tensor::zeros(&[d]),
            w2: Tensor::randn(&[d, d], s_d, rng),
            b2: Tensor::full(&[d], 0.1),
            pool: Tensor::randn(&[prefix_len, window], 1.0, rng),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 8] {
        [&self.wq, &self.wk, &self.wv, &self.w1, &self.b1, &self.w2, &self.b2, &self.pool]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.pool,
        ]
    }

    pub fn channels(&self) -> usize {
        self.wq.cols()
    }

    pub fn key_dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn width(&self) -> usize {
        self.w2.rows()
    }

    pub fn prefix_len(&self) -> usize {
        self.pool.rows()
    }

    pub fn window_len(&self) -> usize {
        self.pool.cols()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<PrefixVars> {
        let mut v = Vec::with_capacity(8);
        for t in self.tensors() {
            v.push(g.leaf(t.clone(), trainable)?);
        }
        Ok(PrefixVars {
            wq: v[0],
            wk: v[1],
            wv: v[2],
            w1: v[3],
            b1: v[4],
            w2: v[5],
            b2: v[6],
            pool: v[7],
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.channels() || x.rows() != self.window_len() {
            return Err(Error::dim(
                "encode_series",
                format!(
                    "window {:?}, expected [{}x{}]",
                    x.shape(),
                    self.window_len(),
                    self.channels()
                ),
            ));
        }
        Ok(())
    }
}

/// Attention stage; returns (attention weights `T×T`, attention output `T×d_k`).
fn attend(g: &mut Graph, p: &PrefixVars, x: Var) -> Result<(Var, Var)> {
    let q = g.matmul_nt(x, p.wq)?;
    let k = g.matmul_nt(x, p.wk)?;
    let v = g.matmul_nt(x, p.wv)?;
    let dk = g.value(p.wq).rows() as f32;
    let scores = g.matmul_nt(q, k)?;
    let scores = g.scale(scores, 1.0 / dk.sqrt())?;
    let weights = g.softmax_rows(scores)?;
    let out = g.matmul(weights, v)?;
    Ok((weights, out))
}

/// Records the prefix block on `g` for a normalized `T × C` input.
pub fn encode_on_graph(g: &mut Graph, p: &PrefixVars, x: Var) -> Result<Var> {
    let (_, alpha) = attend(g, p, x)?;
    let h1 = g.matmul_nt(alpha, p.w1)?;
    let h1 = g.add_bias(h1, p.b1)?;
    let h1 = g.relu(h1)?;
    let h2 = g.matmul_nt(h1, p.w2)?;
    let h2 = g.add_bias(h2, p.b2)?;
    let h2 = g.relu(h2)?;
    let mix = g.softmax_rows(p.pool)?;
    g.matmul(mix, h2)
}

/// `h^N` for a normalized window, evaluated without gradients.
pub fn encode_series(normalized: &Tensor, params: &PrefixParams) -> Result<Tensor> {
    params.check_input(normalized)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g, false)?;
    let x = g.constant(normalized.clone())?;
    let out = encode_on_graph(&mut g, &p, x)?;
    Ok(g.value(out).clone())
}

/// The `T × T` attention weight matrix for a normalized window.
pub fn attention_weights(normalized: &Tensor, params: &PrefixParams) -> Result<Tensor> {
    params.check_input(normalized)?;
    let mut g = Graph::new();
    let p = params.bind(&mut g, false)?;
    let x = g.constant(normalized.clone())?;
    let (w, _) = attend(&mut g, &p, x)?;
    Ok(g.value(w).clone())
}
