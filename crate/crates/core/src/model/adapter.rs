//! Frozen base projections plus an ordered stack of low-rank deltas.
//!
//! Each adapted projection computes `x · (W₀ + Σ_active A_j B_jᵀ)ᵀ`, with
//! `A_j: out × r` and `B_j: in × r`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Which attention projection an adapter slot patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Query,
    Value,
}

impl Slot {
    pub const ALL: [Slot; 2] = [Slot::Query, Slot::Value];

    pub fn name(self) -> &'static str {
        match self {
            Slot::Query => "q",
            Slot::Value => "v",
        }
    }

    fn index(self) -> usize {
        match self {
            Slot::Query => 0,
            Slot::Value => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraFactors {
    /// `out × r`
    pub a: Tensor,
    /// `in × r`
    pub b: Tensor,
}

impl LoraFactors {
    /// `A Bᵀ`, shaped like the base weight.
    pub fn delta(&self) -> Tensor {
        self.a.matmul(&self.b.transpose()).expect("factor shapes checked at construction")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub rank: usize,
    pub active: bool,
    pub trainable: bool,
    /// `[layer][slot]`
    pub factors: Vec<[LoraFactors; 2]>,
}

impl Adapter {
    pub fn factor(&self, layer: usize, slot: Slot) -> &LoraFactors {
        &self.factors[layer][slot.index()]
    }

    pub fn factor_mut(&mut self, layer: usize, slot: Slot) -> &mut LoraFactors {
        &mut self.factors[layer][slot.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterStack {
    /// `[layer][slot]` base weights `W₀`, `out × in`.
    base: Vec<[Tensor; 2]>,
    adapters: Vec<Adapter>,
}

pub fn lora_name(layer: usize, slot: Slot, factor: char, index: usize) -> String {
    format!("lora.{layer}.{}.{factor}.{index}", slot.name())
}

impl AdapterStack {
    pub fn new(base: Vec<[Tensor; 2]>) -> Result<Self> {
        for pair in &base {
            for w in pair {
                if w.rank() != 2 {
                    return Err(Error::dim("adapter base", "weights must be matrices"));
                }
            }
        }
        Ok(AdapterStack {
            base,
            adapters: Vec::new(),
        })
    }

    pub fn layers(&self) -> usize {
        self.base.len()
    }

    pub fn base(&self, layer: usize, slot: Slot) -> &Tensor {
        &self.base[layer][slot.index()]
    }

    pub(crate) fn base_mut(&mut self, layer: usize, slot: Slot) -> &mut Tensor {
        &mut self.base[layer][slot.index()]
    }

    pub fn adapters(&self) -> &[Adapter] {
        &self.adapters
    }

    pub fn adapters_mut(&mut self) -> &mut [Adapter] {
        &mut self.adapters
    }

    pub fn len(&self) -> usize {
        self.adapters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }

    pub fn trainable_index(&self) -> Option<usize> {
        self.adapters.iter().position(|a| a.trainable)
    }

    fn max_rank(&self) -> usize {
        self.base
            .iter()
            .flat_map(|p| p.iter())
            .map(|w| w.rows().min(w.cols()))
            .min()
            .unwrap_or(0)
    }

    /// Appends an adapter with Gaussian `A` and zero `B` (so `ΔW = 0`),
    /// freezing every earlier adapter.
    pub fn push_adapter(&self, rank: usize, seed: u64) -> Result<AdapterStack> {
        let limit = self.max_rank();
        if rank == 0 || rank > limit {
            return Err(Error::Rank { rank, limit });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factors = Vec::with_capacity(self.base.len());
        for pair in &self.base {
            let mk = |w: &Tensor, rng: &mut ChaCha8Rng| LoraFactors {
                a: Tensor::randn(&[w.rows(), rank], 1.0 / (w.rows() as f32).sqrt(), rng),
                b: Tensor::zeros(&[w.cols(), rank]),
            };
            let q = mk(&pair[0], &mut rng);
            let v = mk(&pair[1], &mut rng);
            factors.push([q, v]);
        }
        let mut next = self.clone();
        for a in &mut next.adapters {
            a.trainable = false;
        }
        next.adapters.push(Adapter {
            rank,
            active: true,
            trainable: true,
            factors,
        });
        Ok(next)
    }

    /// Folds adapter `index` into `W₀` and removes it, returning a new stack.
    pub fn merge_adapter(&self, index: usize) -> Result<AdapterStack> {
        if index >= self.adapters.len() {
            return Err(Error::Index {
                index,
                limit: self.adapters.len(),
                context: "merge_adapter",
            });
        }
        let mut next = self.clone();
        let adapter = next.adapters.remove(index);
        for (layer, pair) in next.base.iter_mut().enumerate() {
            for slot in Slot::ALL {
                let delta = adapter.factor(layer, slot).delta();
                pair[slot.index()] = pair[slot.index()].add(&delta)?;
            }
        }
        Ok(next)
    }

    /// Effective weight `W₀ + Σ_active A Bᵀ` for one projection.
    pub fn effective(&self, layer: usize, slot: Slot) -> Tensor {
        let mut w = self.base(layer, slot).clone();
        for a in self.adapters.iter().filter(|a| a.active) {
            w = w.add(&a.factor(layer, slot).delta()).expect("delta shape");
        }
        w
    }

    pub fn set_active(&mut self, index: usize, active: bool) -> Result<()> {
        let len = self.adapters.len();
        let a = self.adapters.get_mut(index).ok_or(Error::Index {
            index,
            limit: len,
            context: "set_active",
        })?;
        a.active = active;
        Ok(())
    }

    /// Inserts an adapter restored from a checkpoint.
    pub(crate) fn push_restored(&mut self, adapter: Adapter) -> Result<()> {
        if adapter.factors.len() != self.base.len() {
            return Err(Error::Checkpoint("adapter layer count mismatch".into()));
        }
        for (layer, pair) in adapter.factors.iter().enumerate() {
            for slot in Slot::ALL {
                let f = &pair[slot.index()];
                let w = self.base(layer, slot);
                if f.a.shape() != [w.rows(), adapter.rank] || f.b.shape() != [w.cols(), adapter.rank] {
                    return Err(Error::Checkpoint(format!("adapter factor shape mismatch at layer {layer}")));
                }
            }
        }
        self.adapters.push(adapter);
        Ok(())
    }
}
