//! Double-precision re-implementation of the model's forward pass and loss,
//! written against plain `Vec<f64>` so finite differences taken here are
//! independent of the autodiff graph.
#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::BTreeMap;

use efllm::autodiff::Tensor;
use efllm::model::Model;
use efllm::trainer::EncodedExample;

thread_local! {
    /// ReLU activation signs, recorded while `Some`.
    static PATTERN: RefCell<Option<Vec<bool>>> = const { RefCell::new(None) };
}

/// Runs `f` and returns its value with the ReLU sign pattern it produced.
pub fn with_pattern<T>(f: impl FnOnce() -> T) -> (T, Vec<bool>) {
    PATTERN.with(|p| *p.borrow_mut() = Some(Vec::new()));
    let out = f();
    let pattern = PATTERN.with(|p| p.borrow_mut().take()).unwrap_or_default();
    (out, pattern)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub r: usize,
    pub c: usize,
    pub d: Vec<f64>,
}

impl Mat {
    pub fn zeros(r: usize, c: usize) -> Mat {
        Mat { r, c, d: vec![0.0; r * c] }
    }

    pub fn from_tensor(t: &Tensor) -> Mat {
        let (r, c) = match t.shape() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            [] => (1, 1),
            s => panic!("unsupported shape {s:?}"),
        };
        Mat {
            r,
            c,
            d: t.data().iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.c + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.c..(i + 1) * self.c]
    }

    /// `self · other`
    pub fn mm(&self, o: &Mat) -> Mat {
        assert_eq!(self.c, o.r);
        let mut out = Mat::zeros(self.r, o.c);
        for i in 0..self.r {
            for k in 0..self.c {
                let a = self.at(i, k);
                for j in 0..o.c {
                    out.d[i * o.c + j] += a * o.at(k, j);
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn mm_nt(&self, o: &Mat) -> Mat {
        assert_eq!(self.c, o.c);
        let mut out = Mat::zeros(self.r, o.r);
        for i in 0..self.r {
            for j in 0..o.r {
                out.d[i * o.r + j] = self.row(i).iter().zip(o.row(j)).map(|(a, b)| a * b).sum();
            }
        }
        out
    }

    pub fn t(&self) -> Mat {
        let mut out = Mat::zeros(self.c, self.r);
        for i in 0..self.r {
            for j in 0..self.c {
                out.d[j * self.r + i] = self.at(i, j);
            }
        }
        out
    }

    pub fn add(&self, o: &Mat) -> Mat {
        assert_eq!((self.r, self.c), (o.r, o.c));
        Mat {
            r: self.r,
            c: self.c,
            d: self.d.iter().zip(&o.d).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn add_bias(&self, b: &Mat) -> Mat {
        let mut out = self.clone();
        for i in 0..self.r {
            for j in 0..self.c {
                out.d[i * self.c + j] += b.d[j];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            r: self.r,
            c: self.c,
            d: self.d.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn relu(&self) -> Mat {
        PATTERN.with(|p| {
            if let Some(v) = p.borrow_mut().as_mut() {
                v.extend(self.d.iter().map(|&x| x > 0.0));
            }
        });
        self.map(|x| x.max(0.0))
    }

    pub fn softmax_rows(&self) -> Mat {
        let mut out = self.clone();
        for i in 0..self.r {
            let row = &mut out.d[i * self.c..(i + 1) * self.c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|x| (x - m).exp()).sum();
            row.iter_mut().for_each(|x| *x = (*x - m).exp() / s);
        }
        out
    }

    pub fn layer_norm(&self, g: &Mat, b: &Mat) -> Mat {
        let mut out = self.clone();
        for i in 0..self.r {
            let row = self.row(i);
            let n = self.c as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let rstd = 1.0 / (var + 1e-5).sqrt();
            for j in 0..self.c {
                out.d[i * self.c + j] = (row[j] - mean) * rstd * g.d[j] + b.d[j];
            }
        }
        out
    }

    pub fn rows(&self, start: usize, len: usize) -> Mat {
        Mat {
            r: len,
            c: self.c,
            d: self.d[start * self.c..(start + len) * self.c].to_vec(),
        }
    }

    pub fn cols(&self, start: usize, len: usize) -> Mat {
        let mut out = Mat::zeros(self.r, len);
        for i in 0..self.r {
            for j in 0..len {
                out.d[i * len + j] = self.at(i, start + j);
            }
        }
        out
    }

    pub fn vstack(parts: &[Mat]) -> Mat {
        let c = parts[0].c;
        Mat {
            r: parts.iter().map(|p| p.r).sum(),
            c,
            d: parts.iter().flat_map(|p| p.d.iter().copied()).collect(),
        }
    }

    pub fn hstack(parts: &[Mat]) -> Mat {
        let r = parts[0].r;
        let c = parts.iter().map(|p| p.c).sum();
        let mut out = Mat::zeros(r, c);
        for i in 0..r {
            let mut off = 0;
            for p in parts {
                out.d[i * c + off..i * c + off + p.c].copy_from_slice(p.row(i));
                off += p.c;
            }
        }
        out
    }

    pub fn gather(&self, ids: &[usize]) -> Mat {
        Mat::vstack(&ids.iter().map(|&i| self.rows(i, 1)).collect::<Vec<_>>())
    }
}

/// Summed token cross-entropy of rows against targets.
pub fn cross_entropy(logits: &Mat, targets: &[usize]) -> f64 {
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let row = logits.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln() - row[t]
        })
        .sum()
}

/// Every model tensor by checkpoint name, widened to f64.
pub type Params = BTreeMap<String, Mat>;

pub fn params_of(model: &Model) -> Params {
    model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, Mat::from_tensor(t)))
        .collect()
}

/// Structural facts the oracle needs beyond the tensors themselves.
#[derive(Debug, Clone)]
pub struct Layout {
    pub layers: usize,
    pub heads: usize,
    pub placeholder_len: usize,
    pub placeholder_value: f64,
    pub prefix: Option<usize>,
    pub active: Vec<usize>,
    pub trainable: Option<usize>,
}

impl Layout {
    pub fn of(model: &Model) -> Layout {
        Layout {
            layers: model.config.layers,
            heads: model.config.heads,
            placeholder_len: model.config.placeholder_len,
            placeholder_value: model.config.placeholder_value as f64,
            prefix: model.prefixes.len().checked_sub(1),
            active: model
                .stack
                .adapters()
                .iter()
                .enumerate()
                .filter(|(_, a)| a.active)
                .map(|(i, _)| i)
                .collect(),
            trainable: model.stack.trainable_index(),
        }
    }
}

pub fn prefix_encode(p: &Params, k: usize, x: &Mat) -> Mat {
    let w = |n: &str| &p[&format!("prefix.{k}.{n}")];
    let q = x.mm_nt(w("wq"));
    let kk = x.mm_nt(w("wk"));
    let v = x.mm_nt(w("wv"));
    let dk = w("wq").r as f64;
    let att = q.mm_nt(&kk).map(|s| s / dk.sqrt()).softmax_rows();
    let alpha = att.mm(&v);
    let h1 = alpha.mm_nt(w("w1")).add_bias(w("b1")).relu();
    let h2 = h1.mm_nt(w("w2")).add_bias(w("b2")).relu();
    w("pool").softmax_rows().mm(&h2)
}

fn adapted(p: &Params, lay: &Layout, h: &Mat, layer: usize, slot: &str) -> Mat {
    let mut y = h.mm_nt(&p[&format!("layer.{layer}.w{slot}")]);
    for &idx in &lay.active {
        let a = &p[&format!("lora.{layer}.{slot}.A.{idx}")];
        let b = &p[&format!("lora.{layer}.{slot}.B.{idx}")];
        y = y.add(&h.mm(b).mm_nt(a));
    }
    y
}

/// Logits for every fused row and the text offset.
pub fn logits(p: &Params, lay: &Layout, numeric: Option<&Tensor>, ids: &[usize]) -> (Mat, usize) {
    let embed = &p["embed"];
    let d = embed.c;
    let mut parts = Vec::new();
    if let Some(w) = numeric {
        parts.push(prefix_encode(p, lay.prefix.expect("prefix block"), &Mat::from_tensor(w)));
    }
    if lay.placeholder_len > 0 {
        let mut ph = Mat::zeros(lay.placeholder_len, d);
        ph.d.iter_mut().for_each(|x| *x = lay.placeholder_value);
        parts.push(ph);
    }
    parts.push(embed.gather(ids));
    let fused = Mat::vstack(&parts);
    let offset = fused.r - ids.len();
    let len = fused.r;
    let mut x = fused.add(&p["pos"].rows(0, len));
    let dh = d / lay.heads;
    for l in 0..lay.layers {
        let w = |n: &str| &p[&format!("layer.{l}.{n}")];
        let h = x.layer_norm(w("ln1.g"), w("ln1.b"));
        let q = adapted(p, lay, &h, l, "q");
        let k = h.mm_nt(w("wk"));
        let v = adapted(p, lay, &h, l, "v");
        let mut outs = Vec::new();
        for hd in 0..lay.heads {
            let (qh, kh, vh) = (q.cols(hd * dh, dh), k.cols(hd * dh, dh), v.cols(hd * dh, dh));
            let mut s = qh.mm_nt(&kh).map(|s| s / (dh as f64).sqrt());
            for i in 0..len {
                for j in i + 1..len {
                    s.d[i * len + j] = f64::NEG_INFINITY;
                }
            }
            outs.push(s.softmax_rows().mm(&vh));
        }
        x = x.add(&Mat::hstack(&outs).mm_nt(w("wo")));
        let h = x.layer_norm(w("ln2.g"), w("ln2.b"));
        let f = h.mm_nt(w("ff1.w")).add_bias(w("ff1.b")).relu();
        x = x.add(&f.mm_nt(w("ff2.w")).add_bias(w("ff2.b")));
    }
    let h = x.layer_norm(&p["ln_f.g"], &p["ln_f.b"]);
    (h.mm_nt(&p["head"]), offset)
}

/// `(total, task1, task2, frob)` of one example.
pub fn loss_terms(p: &Params, lay: &Layout, ex: &EncodedExample, lambda: f64) -> (f64, f64, f64, f64) {
    let (lg, off) = logits(p, lay, ex.numeric.as_ref(), &ex.ids);
    let span_nll = |r: &std::ops::Range<usize>| {
        if r.is_empty() {
            return 0.0;
        }
        cross_entropy(&lg.rows(off + r.start - 1, r.len()), &ex.ids[r.clone()])
    };
    let t1 = span_nll(&ex.span.m1);
    let t2 = span_nll(&ex.span.m2);
    let mut frob = 0.0;
    if let Some(idx) = lay.trainable {
        for l in 0..lay.layers {
            for slot in ["q", "v"] {
                let a = &p[&format!("lora.{l}.{slot}.A.{idx}")];
                let b = &p[&format!("lora.{l}.{slot}.B.{idx}")];
                frob += a.mm_nt(b).d.iter().map(|x| x * x).sum::<f64>();
            }
        }
    }
    let w = ex.span.weight as f64;
    (w * t1 + (1.0 - w) * t2 + lambda * frob, t1, t2, frob)
}

/// Central difference of the total loss with respect to one coordinate.
pub fn central_difference(p: &Params, lay: &Layout, ex: &EncodedExample, lambda: f64, name: &str, i: usize, eps: f64) -> f64 {
    let mut q = p.clone();
    q.get_mut(name).unwrap().d[i] += eps;
    let up = loss_terms(&q, lay, ex, lambda).0;
    q.get_mut(name).unwrap().d[i] -= 2.0 * eps;
    let down = loss_terms(&q, lay, ex, lambda).0;
    (up - down) / (2.0 * eps)
}

/// Like [`central_difference`], but `None` when the `±eps` probe flips any
/// ReLU: the loss is then not differentiable across the probe interval and
/// the difference quotient measures the kink rather than the gradient.
pub fn smooth_central_difference(
    p: &Params,
    lay: &Layout,
    ex: &EncodedExample,
    lambda: f64,
    name: &str,
    i: usize,
    eps: f64,
) -> Option<f64> {
    let mut q = p.clone();
    let (_, center) = with_pattern(|| loss_terms(&q, lay, ex, lambda));
    q.get_mut(name).unwrap().d[i] += eps;
    let (up, pu) = with_pattern(|| loss_terms(&q, lay, ex, lambda).0);
    q.get_mut(name).unwrap().d[i] -= 2.0 * eps;
    let (down, pd) = with_pattern(|| loss_terms(&q, lay, ex, lambda).0);
    (pu == center && pd == center).then(|| (up - down) / (2.0 * eps))
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let den = a.abs().max(b.abs());
    if den == 0.0 {
        0.0
    } else {
        (a - b).abs() / den
    }
}

/// Normwise `‖a − b‖ / max(‖a‖, ‖b‖)` over a block of coordinates. Single
/// coordinates far below the block's scale sit under f32 resolution of the
/// analytic gradient, so model-level checks are made per tensor block.
pub fn block_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let den = norm(a).max(norm(b));
    if den == 0.0 {
        0.0
    } else {
        norm(&diff) / den
    }
}
