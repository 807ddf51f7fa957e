//! Adaptive-moment optimizer with decoupled weight decay.

use crate::numerics::ParamStore;

use super::config::TrainConfig;

#[derive(Clone, Debug)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, store: &ParamStore) -> Self {
        let moments = || {
            store
                .iter()
                .map(|(_, p)| {
                    if p.trainable {
                        vec![0.0; p.value.len()]
                    } else {
                        Vec::new()
                    }
                })
                .collect()
        };
        AdamW {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: moments(),
            v: moments(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter from its accumulated
    /// gradient. Frozen parameters are never written; with `lr = 0` nothing is.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        if self.lr == 0.0 {
            return;
        }
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g as f64;
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + self.eps);
                let w64 = *w as f64;
                *w = (w64 - self.lr * (update + self.weight_decay * w64)) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn first_step_moves_by_lr() {
        // bias-corrected first step is lr·sign(g) up to eps, plus decay
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_fn([3], |i| i as f32 - 1.0), true);
        let frozen = store.add("f", Tensor::ones([2]), false);
        store.get_mut(id).grad = Tensor::from_fn([3], |i| [0.5, -2.0, 3.0][i]);
        store.get_mut(frozen).grad = Tensor::ones([2]);
        let cfg = TrainConfig {
            lr: 0.1,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(&cfg, &store);
        opt.step(&mut store);
        let w = store.get(id).value.data().to_vec();
        let want = [-1.0 - 0.1 * (1.0 - 0.01), 0.1, 1.0 - 0.1 * (1.0 + 0.01)];
        for (a, b) in w.iter().zip(want) {
            assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert_eq!(store.get(frozen).value, Tensor::ones([2]));
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::ones([2]), true);
        store.get_mut(id).grad = Tensor::ones([2]);
        let cfg = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        let mut opt = AdamW::new(&cfg, &store);
        opt.step(&mut store);
        assert!(store.get(id).value.bit_eq(&Tensor::ones([2])));
    }
}
