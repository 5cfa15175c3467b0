use std::collections::HashMap;

use crate::autodiff::Tensor;
use crate::model::Model;
use crate::error::{Error, Result};

pub const BETA1: f32 = 0.9;
pub const BETA2: f32 = 0.999;
pub const EPSILON: f32 = 1e-8;

/// Named, mutable parameter storage.
pub trait ParamStore {
    fn param_mut(&mut self, name: &str) -> Option<&mut Tensor>;
}

impl ParamStore for Model {
    fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensor_mut(name)
    }
}

impl ParamStore for HashMap<String, Tensor> {
    fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.get_mut(name)
    }
}

/// Adam with moment buffers keyed by tensor name.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub lr: f32,
    step: i32,
    m: HashMap<String, Vec<f32>>,
    v: HashMap<String, Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            ..Default::default()
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update to the tensors named in `grads`.
    pub fn update(&mut self, grads: &[(String, Tensor)], params: &mut impl ParamStore) -> Result<()> {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for (name, grad) in grads {
            let p = params
                .param_mut(name).ok_or_else(|| Error::Contract(format!("optimizer: unknown tensor {name}")))?;
            if p.shape() != grad.shape() {
                return Err(Error::dim("adam", format!("{name}: gradient shape differs")));
            }
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; grad.numel()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; grad.numel()]);
            for (((x, &gr), mi), vi) in p.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gr;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gr * gr;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x -= self.lr * mhat / (vhat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}
