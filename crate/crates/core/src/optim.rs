//! AdamW with decoupled weight decay and the cosine learning-rate schedule.

use std::collections::HashMap;

use mrsnet_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{ParamGrads, ParamId, ParamKind, ParamStore};

/// `base · (1 + cos(π·t/T)) / 2`; reaches 0 at `t = T`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = step.min(total) as f64 / total as f64;
    base * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

/// Per-parameter AdamW state. Parameters without a gradient in a step are
/// left untouched, including their weight decay.
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    state: HashMap<ParamId, Moments>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            state: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) -> Result<()> {
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let mut ids: Vec<ParamId> = grads.keys().copied().collect();
        ids.sort();
        for id in ids {
            if store.kind(id) != ParamKind::Trainable {
                continue;
            }
            let g = &grads[&id];
            let n = g.numel();
            let st = self.state.entry(id).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                steps: 0,
            });
            st.steps += 1;
            let bc1 = 1.0 - beta1.powi(st.steps);
            let bc2 = 1.0 - beta2.powi(st.steps);
            let mut value = store.get(id).clone();
            let p = value.data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * gi;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = st.m[i] / bc1;
                let v_hat = st.v[i] / bc2;
                p[i] = p[i] * (1.0 - lr * weight_decay) - lr * m_hat / (v_hat.sqrt() + eps);
            }
            store.set(id, value)?;
        }
        Ok(())
    }

    /// Number of parameters with optimizer state.
    pub fn tracked(&self) -> usize {
        self.state.len()
    }
}

/// Applies queued running-statistic updates.
pub fn apply_buffer_updates(store: &mut ParamStore, updates: Vec<(ParamId, Tensor)>) -> Result<()> {
    for (id, value) in updates {
        store.set(id, value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_schedule_values() {
        assert_eq!(cosine_lr(6e-4, 0, 100), 6e-4);
        assert!((cosine_lr(6e-4, 50, 100) - 3e-4).abs() < 1e-12);
        assert!(cosine_lr(6e-4, 100, 100) <= 1e-9);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut init = Init::new(&mut store, &mut rng);
        let a = init.constant("a", Tensor::new([2], vec![1.0, -1.0]).unwrap());
        let b = init.constant("b", Tensor::new([1], vec![5.0]).unwrap());
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let grads: ParamGrads = [(a, Tensor::new([2], vec![0.3, -2.0]).unwrap())].into();
        opt.step(&mut store, &grads, 0.1).unwrap();
        let v = store.get(a).data().to_vec();
        assert!((v[0] - 0.9).abs() < 1e-6 && (v[1] + 0.9).abs() < 1e-6, "{v:?}");
        assert_eq!(store.get(b).data(), &[5.0]);
        assert_eq!(opt.tracked(), 1);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Init::new(&mut store, &mut rng).constant("a", Tensor::new([1], vec![2.0]).unwrap());
        let mut opt = AdamW::new(AdamWConfig::default());
        let grads: ParamGrads = [(a, Tensor::zeros([1]))].into();
        opt.step(&mut store, &grads, 0.5).unwrap();
        assert!((store.get(a).data()[0] - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-12);
    }
}
