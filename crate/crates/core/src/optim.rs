//! AdamW: Adam moments with weight decay applied directly to the parameters.

use ndarray::Array2;

use crate::tensor::{Gradients, Matrix, ParamGroup, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWConfig {
    pub fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.encoder_lr,
            ParamGroup::Head => self.head_lr,
        }
    }
}

pub struct AdamW {
    config: AdamWConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| Array2::zeros(p.value.dim())).collect();
        AdamW {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. Parameters without a gradient in `grads` are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.param(id) else { continue };
            let i = id.index();
            let lr = c.lr(store.param(id).group);
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            ndarray::Zip::from(&mut *m)
                .and(&mut *v)
                .and(g)
                .for_each(|m, v, &g| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                });
            let p = store.get_mut(id);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * c.weight_decay * *p;
                *p -= lr * (m / bias1) / ((v / bias2).sqrt() + c.eps);
            });
        }
    }
}
