//! Causal decoder body with LoRA-adapted query/value projections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adapter::{lora_name, AdapterStack, Slot};
use super::config::ModelConfig;
use super::fusion::{fuse_on_graph, FusedSequence, Spans};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::prefix::{encode_on_graph, PrefixParams, PrefixVars};
use crate::text::EmbeddingTable;

const MASKED: f32 = -1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wk: Tensor,
    pub wo: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub ff1_w: Tensor,
    pub ff1_b: Tensor,
    pub ff2_w: Tensor,
    pub ff2_b: Tensor,
}

impl LayerWeights {
    const NAMES: [&'static str; 10] = [
        "ln1.g", "ln1.b", "wk", "wo", "ln2.g", "ln2.b", "ff1.w", "ff1.b", "ff2.w", "ff2.b",
    ];

    fn tensors(&self) -> [&Tensor; 10] {
        [
            &self.ln1_g, &self.ln1_b, &self.wk, &self.wo, &self.ln2_g, &self.ln2_b, &self.ff1_w, &self.ff1_b,
            &self.ff2_w, &self.ff2_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 10] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wk,
            &mut self.wo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.ff1_w,
            &mut self.ff1_b,
            &mut self.ff2_w,
            &mut self.ff2_b,
        ]
    }
}

/// Everything of the base model except the adapted projections, which live in
/// the [`AdapterStack`].
#[derive(Debug, Clone, PartialEq)]
pub struct BaseWeights {
    pub embed: EmbeddingTable,
    pub pos: Tensor,
    pub layers: Vec<LayerWeights>,
    pub lnf_g: Tensor,
    pub lnf_b: Tensor,
    pub head: Tensor,
}

/// Which parameter groups receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainMask {
    /// Embeddings, positions, every layer weight including `W₀`, output head.
    pub base: bool,
    /// The adapter currently flagged trainable.
    pub adapter: bool,
    /// The newest prefix block.
    pub prefix: bool,
}

impl TrainMask {
    pub const FROZEN: TrainMask = TrainMask {
        base: false,
        adapter: false,
        prefix: false,
    };
    pub const PRETRAIN: TrainMask = TrainMask {
        base: true,
        adapter: false,
        prefix: false,
    };
    pub const PEFT: TrainMask = TrainMask {
        base: false,
        adapter: true,
        prefix: true,
    };
}

struct LayerVars {
    w: Vec<Var>,
    wq: Var,
    wv: Var,
    lora_q: Vec<(Var, Var)>,
    lora_v: Vec<(Var, Var)>,
}

impl LayerVars {
    fn get(&self, i: usize) -> Var {
        self.w[i]
    }
}

/// Graph handles for every bound model tensor.
pub struct ModelVars {
    embed: Var,
    pos: Var,
    layers: Vec<LayerVars>,
    lnf_g: Var,
    lnf_b: Var,
    head: Var,
    prefix: Option<PrefixVars>,
    /// `(checkpoint name, var)` for every tensor that requires a gradient.
    pub trainable: Vec<(String, Var)>,
    /// `(A, B)` pairs of the trainable adapter.
    pub trainable_factors: Vec<(Var, Var)>,
}

impl ModelVars {
    pub fn embed(&self) -> Var {
        self.embed
    }
}

/// Numeric window (already normalized) and text token ids.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub numeric: Option<&'a Tensor>,
    pub text: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub base: BaseWeights,
    pub stack: AdapterStack,
    /// Prefix blocks in creation order; the last one encodes inputs.
    pub prefixes: Vec<PrefixParams>,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let sd = 1.0 / (d as f32).sqrt();
        let sff = 1.0 / (config.d_ff as f32).sqrt();
        let resid = 1.0 / (2.0 * config.layers as f32).sqrt();
        let mut layers = Vec::with_capacity(config.layers);
        let mut adapted = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let wq = Tensor::randn(&[d, d], sd, &mut rng);
            let wk = Tensor::randn(&[d, d], sd, &mut rng);
            let wv = Tensor::randn(&[d, d], sd, &mut rng);
            let wo = Tensor::randn(&[d, d], sd * resid, &mut rng);
            let ff1_w = Tensor::randn(&[config.d_ff, d], sd, &mut rng);
            let ff2_w = Tensor::randn(&[d, config.d_ff], sff * resid, &mut rng);
            layers.push(LayerWeights {
                ln1_g: Tensor::full(&[d], 1.0),
                ln1_b: Tensor::zeros(&[d]),
                wk,
                wo,
                ln2_g: Tensor::full(&[d], 1.0),
                ln2_b: Tensor::zeros(&[d]),
                ff1_w,
                ff1_b: Tensor::zeros(&[config.d_ff]),
                ff2_w,
                ff2_b: Tensor::zeros(&[d]),
            });
            adapted.push([wq, wv]);
        }
        let base = BaseWeights {
            embed: EmbeddingTable::new(Tensor::randn(&[config.vocab_size, d], sd, &mut rng))?,
            pos: Tensor::randn(&[config.max_len, d], 0.5 * sd, &mut rng),
            layers,
            lnf_g: Tensor::full(&[d], 1.0),
            lnf_b: Tensor::zeros(&[d]),
            head: Tensor::randn(&[config.vocab_size, d], sd, &mut rng),
        };
        let prefix = PrefixParams::init(
            config.channels,
            config.key_dim,
            d,
            config.window,
            config.prefix_len,
            &mut rng,
        );
        Ok(Model {
            config,
            base,
            stack: AdapterStack::new(adapted)?,
            prefixes: vec![prefix],
        })
    }

    pub fn prefix(&self) -> Option<&PrefixParams> {
        self.prefixes.last()
    }

    /// Every tensor with its checkpoint name, in a stable order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embed".into(), &self.base.embed.matrix),
            ("pos".into(), &self.base.pos),
        ];
        for (i, l) in self.base.layers.iter().enumerate() {
            out.push((format!("layer.{i}.wq"), self.stack.base(i, Slot::Query)));
            out.push((format!("layer.{i}.wv"), self.stack.base(i, Slot::Value)));
            for (n, t) in LayerWeights::NAMES.iter().zip(l.tensors()) {
                out.push((format!("layer.{i}.{n}"), t));
            }
        }
        out.push(("ln_f.g".into(), &self.base.lnf_g));
        out.push(("ln_f.b".into(), &self.base.lnf_b));
        out.push(("head".into(), &self.base.head));
        for (k, p) in self.prefixes.iter().enumerate() {
            for (n, t) in PrefixParams::NAMES.iter().zip(p.tensors()) {
                out.push((format!("prefix.{k}.{n}"), t));
            }
        }
        for (idx, a) in self.stack.adapters().iter().enumerate() {
            for layer in 0..self.config.layers {
                for slot in Slot::ALL {
                    let f = a.factor(layer, slot);
                    out.push((lora_name(layer, slot, 'A', idx), &f.a));
                    out.push((lora_name(layer, slot, 'B', idx), &f.b));
                }
            }
        }
        out
    }

    /// Mutable access by checkpoint name.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let parts: Vec<&str> = name.split('.').collect();
        match parts.as_slice() {
            ["embed"] => Some(&mut self.base.embed.matrix),
            ["pos"] => Some(&mut self.base.pos),
            ["head"] => Some(&mut self.base.head),
            ["ln_f", "g"] => Some(&mut self.base.lnf_g),
            ["ln_f", "b"] => Some(&mut self.base.lnf_b),
            ["layer", i, "wq"] => {
                let i: usize = i.parse().ok()?;
                (i < self.stack.layers()).then(|| self.stack.base_mut(i, Slot::Query))
            }
            ["layer", i, "wv"] => {
                let i: usize = i.parse().ok()?;
                (i < self.stack.layers()).then(|| self.stack.base_mut(i, Slot::Value))
            }
            ["layer", i, rest @ ..] => {
                let i: usize = i.parse().ok()?;
                let key = rest.join(".");
                let pos = LayerWeights::NAMES.iter().position(|n| *n == key)?;
                let layer = self.base.layers.get_mut(i)?;
                layer.tensors_mut().into_iter().nth(pos)
            }
            ["prefix", k, n] => {
                let k: usize = k.parse().ok()?;
                let pos = PrefixParams::NAMES.iter().position(|x| x == n)?;
                self.prefixes.get_mut(k)?.tensors_mut().into_iter().nth(pos)
            }
            ["lora", layer, slot, factor, idx] => {
                let layer: usize = layer.parse().ok()?;
                let idx: usize = idx.parse().ok()?;
                let slot = match *slot {
                    "q" => Slot::Query,
                    "v" => Slot::Value,
                    _ => return None,
                };
                let adapter = self.stack.adapters_mut().get_mut(idx)?;
                if layer >= adapter.factors.len() {
                    return None;
                }
                let f = adapter.factor_mut(layer, slot);
                match *factor {
                    "A" => Some(&mut f.a),
                    "B" => Some(&mut f.b),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    /// Records every tensor on `g`; those selected by `mask` require gradients.
    pub fn bind(&self, g: &mut Graph, mask: TrainMask) -> Result<ModelVars> {
        let mut trainable = Vec::new();
        let mut leaf = |g: &mut Graph, name: String, t: &Tensor, train: bool| -> Result<Var> {
            let v = g.leaf(t.clone(), train)?;
            if train {
                trainable.push((name, v));
            }
            Ok(v)
        };
        let b = mask.base;
        let embed = leaf(g, "embed".into(), &self.base.embed.matrix, b)?;
        let pos = leaf(g, "pos".into(), &self.base.pos, b)?;
        let train_adapter = if mask.adapter { self.stack.trainable_index() } else { None };
        let mut layers = Vec::with_capacity(self.config.layers);
        let mut trainable_factors = Vec::new();
        for (i, lw) in self.base.layers.iter().enumerate() {
            let wq = leaf(g, format!("layer.{i}.wq"), self.stack.base(i, Slot::Query), b)?;
            let wv = leaf(g, format!("layer.{i}.wv"), self.stack.base(i, Slot::Value), b)?;
            let mut w = Vec::with_capacity(10);
            for (n, t) in LayerWeights::NAMES.iter().zip(lw.tensors()) {
                w.push(leaf(g, format!("layer.{i}.{n}"), t, b)?);
            }
            let mut lora_q = Vec::new();
            let mut lora_v = Vec::new();
            for (idx, a) in self.stack.adapters().iter().enumerate() {
                if !a.active {
                    continue;
                }
                let train = train_adapter == Some(idx);
                for (slot, list) in [(Slot::Query, &mut lora_q), (Slot::Value, &mut lora_v)] {
                    let f = a.factor(i, slot);
                    let va = leaf(g, lora_name(i, slot, 'A', idx), &f.a, train)?;
                    let vb = leaf(g, lora_name(i, slot, 'B', idx), &f.b, train)?;
                    list.push((va, vb));
                    if train {
                        trainable_factors.push((va, vb));
                    }
                }
            }
            layers.push(LayerVars {
                w,
                wq,
                wv,
                lora_q,
                lora_v,
            });
        }
        let lnf_g = leaf(g, "ln_f.g".into(), &self.base.lnf_g, b)?;
        let lnf_b = leaf(g, "ln_f.b".into(), &self.base.lnf_b, b)?;
        let head = leaf(g, "head".into(), &self.base.head, b)?;
        let prefix = match self.prefixes.last() {
            Some(p) => {
                let k = self.prefixes.len() - 1;
                let pv = p.bind(g, mask.prefix)?;
                if mask.prefix {
                    for (n, v) in PrefixParams::NAMES.iter().zip(pv.all()) {
                        trainable.push((format!("prefix.{k}.{n}"), v));
                    }
                }
                Some(pv)
            }
            None => None,
        };
        Ok(ModelVars {
            embed,
            pos,
            layers,
            lnf_g,
            lnf_b,
            head,
            prefix,
            trainable,
            trainable_factors,
        })
    }

    /// Builds the fused input rows on the graph.
    pub fn fuse_input(&self, g: &mut Graph, vars: &ModelVars, input: ModelInput<'_>) -> Result<(Var, Spans)> {
        let numeric = match input.numeric {
            Some(window) => {
                let pv = vars
                    .prefix
                    .as_ref()
                    .ok_or_else(|| Error::Contract("numeric input but no prefix block".into()))?;
                let p = self.prefixes.last().expect("bound prefix exists");
                if window.shape() != [p.window_len(), p.channels()] {
                    return Err(Error::dim(
                        "encode_series",
                        format!("window {:?}, expected [{}x{}]", window.shape(), p.window_len(), p.channels()),
                    ));
                }
                let x = g.constant(window.clone())?;
                Some(encode_on_graph(g, pv, x)?)
            }
            None => None,
        };
        let text = g.gather(vars.embed, input.text)?;
        fuse_on_graph(
            g,
            numeric,
            text,
            self.config.placeholder_len,
            self.config.placeholder_value,
        )
    }

    fn adapted(g: &mut Graph, h: Var, w0: Var, lora: &[(Var, Var)]) -> Result<Var> {
        let mut y = g.matmul_nt(h, w0)?;
        for &(a, b) in lora {
            let t = g.matmul(h, b)?;
            let u = g.matmul_nt(t, a)?;
            y = g.add(y, u)?;
        }
        Ok(y)
    }

    /// Decoder body on already fused rows; returns final normalized hidden states.
    pub fn body(&self, g: &mut Graph, vars: &ModelVars, fused: Var) -> Result<Var> {
        let len = g.value(fused).rows();
        if len > self.config.max_len {
            return Err(Error::Length {
                len,
                max: self.config.max_len,
            });
        }
        let pos = g.slice_rows(vars.pos, 0, len)?;
        let mut x = g.add(fused, pos)?;
        let mut mask = Tensor::zeros(&[len, len]);
        for i in 0..len {
            for j in i + 1..len {
                mask.data_mut()[i * len + j] = MASKED;
            }
        }
        let mask = g.constant(mask)?;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f32).sqrt();
        for lv in &vars.layers {
            let h = g.layer_norm(x, lv.get(0), lv.get(1))?;
            let q = Self::adapted(g, h, lv.wq, &lv.lora_q)?;
            let k = g.matmul_nt(h, lv.get(2))?;
            let v = Self::adapted(g, h, lv.wv, &lv.lora_v)?;
            let mut outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let (qh, kh, vh) = if heads == 1 {
                    (q, k, v)
                } else {
                    (
                        g.slice_cols(q, hd * dh, dh)?,
                        g.slice_cols(k, hd * dh, dh)?,
                        g.slice_cols(v, hd * dh, dh)?,
                    )
                };
                let s = g.matmul_nt(qh, kh)?;
                let s = g.scale(s, scale)?;
                let s = g.add(s, mask)?;
                let att = g.softmax_rows(s)?;
                outs.push(g.matmul(att, vh)?);
            }
            let o = if heads == 1 { outs[0] } else { g.concat_cols(&outs)? };
            let o = g.matmul_nt(o, lv.get(3))?;
            x = g.add(x, o)?;
            let h = g.layer_norm(x, lv.get(4), lv.get(5))?;
            let f = g.matmul_nt(h, lv.get(6))?;
            let f = g.add_bias(f, lv.get(7))?;
            let f = g.relu(f)?;
            let f = g.matmul_nt(f, lv.get(8))?;
            let f = g.add_bias(f, lv.get(9))?;
            x = g.add(x, f)?;
        }
        g.layer_norm(x, vars.lnf_g, vars.lnf_b)
    }

    pub fn head(&self, g: &mut Graph, vars: &ModelVars, hidden: Var) -> Result<Var> {
        g.matmul_nt(hidden, vars.head)
    }

    /// Full forward on the graph: next-token logits for every fused row.
    pub fn forward_on_graph(&self, g: &mut Graph, vars: &ModelVars, input: ModelInput<'_>) -> Result<(Var, Spans)> {
        let (fused, spans) = self.fuse_input(g, vars, input)?;
        let hidden = self.body(g, vars, fused)?;
        Ok((self.head(g, vars, hidden)?, spans))
    }

    /// Logits `[len × V]` for an input, without gradients.
    pub fn logits(&self, input: ModelInput<'_>) -> Result<(Tensor, Spans)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, TrainMask::FROZEN)?;
        let (logits, spans) = self.forward_on_graph(&mut g, &vars, input)?;
        Ok((g.value(logits).clone(), spans))
    }

    /// Logits for a pre-fused sequence.
    pub fn forward_fused(&self, seq: &FusedSequence) -> Result<Tensor> {
        if seq.rows.cols() != self.config.d_model {
            return Err(Error::dim("forward", "fused width differs from model width"));
        }
        let mut g = Graph::new();
        let vars = self.bind(&mut g, TrainMask::FROZEN)?;
        let x = g.constant(seq.rows.clone())?;
        let hidden = self.body(&mut g, &vars, x)?;
        let logits = self.head(&mut g, &vars, hidden)?;
        Ok(g.value(logits).clone())
    }

    /// `h^N` from the newest prefix block.
    pub fn encode_numeric(&self, window: &Tensor) -> Result<Tensor> {
        let p = self
            .prefixes
            .last()
            .ok_or_else(|| Error::Contract("model has no prefix block".into()))?;
        crate::prefix::encode_series(window, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fusion::fuse;

    fn tiny() -> Model {
        let cfg = ModelConfig {
            d_model: 8,
            layers: 2,
            heads: 2,
            d_ff: 16,
            vocab_size: 12,
            max_len: 24,
            lora_rank: 2,
            prefix_len: 3,
            placeholder_len: 2,
            placeholder_value: -1.0,
            window: 4,
            channels: 2,
            key_dim: 4,
        };
        Model::init(cfg, 7).unwrap()
    }

    fn window() -> Tensor {
        Tensor::matrix(4, 2, vec![0.1, -0.3, 0.7, 1.2, -0.5, 0.4, 0.9, -1.1]).unwrap()
    }

    #[test]
    fn named_tensors_resolve_mutably() {
        let mut m = tiny().clone();
        m.stack = m.stack.push_adapter(2, 3).unwrap();
        let names: Vec<String> = m.named_tensors().into_iter().map(|(n, _)| n).collect();
        for n in &names {
            assert!(m.tensor_mut(n).is_some(), "{n}");
        }
        assert!(m.tensor_mut("layer.9.wq").is_none());
        assert!(m.tensor_mut("nonsense").is_none());
    }

    #[test]
    fn inactive_adapter_matches_base() {
        let m = tiny();
        let ids = [1, 5, 6, 7];
        let input = ModelInput {
            numeric: Some(&window()),
            text: &ids,
        };
        let (base, _) = m.logits(input).unwrap();
        let mut with = m.clone();
        with.stack = with.stack.push_adapter(2, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for l in 0..2 {
            for s in 0..2 {
                with.stack.adapters_mut()[0].factors[l][s].b = Tensor::randn(&[8, 2], 0.5, &mut rng);
            }
        }
        with.stack.set_active(0, false).unwrap();
        let (off, _) = with.logits(input).unwrap();
        assert_eq!(base, off);
        with.stack.set_active(0, true).unwrap();
        let (on, _) = with.logits(input).unwrap();
        assert!(on.max_abs_diff(&base) > 1e-4);
    }

    #[test]
    fn causal_positions() {
        let m = tiny();
        let a = [1, 5, 6, 7, 8];
        let b = [1, 5, 6, 9, 3];
        let (la, _) = m.logits(ModelInput { numeric: None, text: &a }).unwrap();
        let (lb, _) = m.logits(ModelInput { numeric: None, text: &b }).unwrap();
        // placeholders (2) + first three text tokens are shared
        for r in 0..5 {
            assert_eq!(la.row(r), lb.row(r));
        }
        assert_ne!(la.row(5), lb.row(5));
    }

    #[test]
    fn over_length_is_rejected() {
        let m = tiny();
        let ids = vec![5; 30];
        assert!(matches!(
            m.logits(ModelInput { numeric: None, text: &ids }),
            Err(Error::Length { .. })
        ));
    }

    #[test]
    fn forward_fused_agrees_with_graph_path() {
        let m = tiny();
        let ids = [1, 5, 6];
        let hn = m.encode_numeric(&window()).unwrap();
        let ht = m.base.embed.embed(&ids).unwrap();
        let seq = fuse(&hn, &ht, 2, -1.0).unwrap();
        let direct = m.forward_fused(&seq).unwrap();
        let (viagraph, spans) = m
            .logits(ModelInput {
                numeric: Some(&window()),
                text: &ids,
            })
            .unwrap();
        assert_eq!(spans, seq.spans);
        assert!(direct.max_abs_diff(&viagraph) < 1e-6);
    }
}
