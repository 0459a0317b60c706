use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::params::{Grads, ParamStore};
use crate::{NeuralError, Result};

/// Linear warm-up to `peak` over the first `warmup` fraction of `total`
/// updates, then linear decay to zero at `total`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak: f64,
    pub total: u64,
    pub warmup: f64,
}

impl Schedule {
    pub fn new(peak: f64, total: u64) -> Self {
        Schedule {
            peak,
            total,
            warmup: 0.1,
        }
    }

    /// Learning rate for update `t` (1-based).
    pub fn lr(&self, t: u64) -> Result<f64> {
        if t > self.total {
            return Err(NeuralError::Schedule {
                step: t,
                total: self.total,
            });
        }
        let (t, total) = (t as f64, self.total as f64);
        let w = self.warmup * total;
        Ok(if t <= w {
            self.peak * t / w
        } else {
            self.peak * (total - t) / (total - w)
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub lr: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// AdamW with decoupled weight decay. Vectors (biases, norm gains) are not
/// decayed.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    config: AdamWConfig,
    schedule: Schedule,
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
    t: u64,
}

impl<T: Element> AdamW<T> {
    pub fn new(config: AdamWConfig, schedule: Schedule) -> Self {
        AdamW {
            config,
            schedule,
            moments: Vec::new(),
            t: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.t
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Clips `grads`, then applies one update to every trainable tensor.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &mut Grads<T>) -> Result<StepInfo> {
        grads.ensure_finite()?;
        let t = self.t + 1;
        let lr = self.schedule.lr(t)?;
        let norm = grads.global_norm().to_f64().unwrap_or(f64::INFINITY);
        if self.config.clip_norm > 0.0 && norm > self.config.clip_norm {
            grads.scale(T::c(self.config.clip_norm / norm));
        }
        self.t = t;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let c = &self.config;
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let bc1 = T::c(1.0 - c.beta1.powi(t as i32));
        let bc2 = T::c(1.0 - c.beta2.powi(t as i32));
        let (lr_t, eps) = (T::c(lr), T::c(c.eps));
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            if !store.is_trainable(id) {
                continue;
            }
            let n = g.len();
            let (m, v) = self.moments[id.0].get_or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            let value = store.value_mut(id);
            let decay = if value.shape().len() > 1 {
                T::c(1.0 - lr * c.weight_decay)
            } else {
                T::one()
            };
            for (((w, &gi), mi), vi) in value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w * decay - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(StepInfo { lr, grad_norm: norm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Init, Role};
    use rand::SeedableRng;

    #[test]
    fn schedule_values() {
        let s = Schedule::new(5e-4, 1000);
        assert!((s.lr(50).unwrap() - 2.5e-4).abs() < 1e-15);
        assert!((s.lr(100).unwrap() - 5e-4).abs() < 1e-15);
        assert!((s.lr(550).unwrap() - 2.5e-4).abs() < 1e-15);
        assert_eq!(s.lr(1000).unwrap(), 0.0);
        assert!(matches!(
            s.lr(1001),
            Err(NeuralError::Schedule {
                step: 1001,
                total: 1000
            })
        ));
    }

    #[test]
    fn first_update_moves_by_learning_rate() {
        // With bias correction the first Adam step is lr·sign(g) (up to eps).
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::default();
        let w = store.add("w", Role::Adapter, &[2, 2], Init::Ones, &mut rng);
        let b = store.add("b", Role::Adapter, &[2], Init::Ones, &mut rng);
        let mut grads = Grads::new(&store);
        grads.slot(w).unwrap().copy_from_slice(&[0.1, -0.2, 0.0, 0.05]);
        grads.slot(b).unwrap().copy_from_slice(&[0.3, -0.3]);
        let cfg = AdamWConfig {
            clip_norm: 0.0,
            ..AdamWConfig::default()
        };
        let mut opt = AdamW::new(
            cfg,
            Schedule {
                peak: 0.1,
                total: 10,
                warmup: 0.1,
            },
        );
        let info = opt.step(&mut store, &mut grads).unwrap();
        assert!((info.lr - 0.1).abs() < 1e-15);
        let decay = 1.0 - 0.1 * 0.01;
        let want = [decay - 0.1, decay + 0.1, decay, decay - 0.1];
        for (a, e) in store.value(w).data().iter().zip(want) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
        assert!((store.value(b).data()[0] - 0.9).abs() < 1e-6);
        assert!((store.value(b).data()[1] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::default();
        let w = store.add("w", Role::Adapter, &[2], Init::Zeros, &mut rng);
        let mut grads = Grads::new(&store);
        grads.slot(w).unwrap().copy_from_slice(&[3.0, 4.0]);
        let mut opt = AdamW::new(AdamWConfig::default(), Schedule::new(1e-3, 5));
        let info = opt.step(&mut store, &mut grads).unwrap();
        assert!((info.grad_norm - 5.0).abs() < 1e-12);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frozen_tensors_do_not_move() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::default();
        let w = store.add("w", Role::BaseLm, &[2, 2], Init::Normal(1.0), &mut rng);
        let before = store.value(w).clone();
        store.set_trainable(Role::BaseLm, false);
        let mut grads = Grads::new(&store);
        let mut opt = AdamW::new(AdamWConfig::default(), Schedule::new(1e-3, 5));
        opt.step(&mut store, &mut grads).unwrap();
        assert_eq!(store.value(w), &before);
    }
}
