use serde::{Deserialize, Serialize};

use super::params::{ParamKind, ParamStore};
use super::tape::Gradients;
use super::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Number of equal cosine cycles over `epochs`.
    pub restarts: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 32,
            lr_max: 1e-3,
            lr_min: 1e-5,
            restarts: 5,
            patience: 30,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr_min < self.lr_max) || self.lr_min < 0.0 {
            return bad("need 0 <= lr_min < lr_max");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1");
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        Ok(())
    }

    /// Cosine-cycle period in epochs.
    pub fn period(&self) -> usize {
        (self.epochs / self.restarts).max(1)
    }
}

/// Cosine annealing with warm restarts.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    let t = cfg.period();
    let phase = (epoch % t) as f64 / t as f64;
    cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * phase).cos()) / 2.0
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.betas.0,
            beta2: cfg.betas.1,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter. Parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        if self.m.len() != store.len() {
            self.m = store.entries().iter().map(|e| vec![T::zero(); e.value.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let decay = T::from_f64_lossy(1.0 - lr * self.weight_decay);
        let step_size = T::from_f64_lossy(lr / bc1);
        let bc2_sqrt = T::from_f64_lossy(bc2.sqrt());
        let eps = T::from_f64_lossy(self.eps);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            if store.entry(id).kind != ParamKind::Trainable {
                continue;
            }
            let i = id.index();
            let g = grads.param(id).map(|g| g.data());
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                let gj = g.map_or(T::zero(), |g| g[j]);
                p[j] = p[j] * decay;
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let denom = v[j].sqrt() / bc2_sqrt + eps;
                p[j] = p[j] - step_size * m[j] / denom;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mode, Tape, Tensor};

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn schedule_matches_cosine_formula() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.period(), 100);
        assert!(approx(lr_at_epoch(0, &cfg), 1e-3, 1e-15));
        assert!(approx(lr_at_epoch(50, &cfg), 5.05e-4, 1e-12));
        assert!(approx(lr_at_epoch(100, &cfg), 1e-3, 1e-15));
        for e in 0..cfg.epochs {
            let lr = lr_at_epoch(e, &cfg);
            assert!(lr >= cfg.lr_min && lr <= cfg.lr_max);
            if e % 100 == 0 {
                assert_eq!(lr, cfg.lr_max);
            }
        }
    }

    fn store_with(values: Vec<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let n = values.len();
        s.add("p", ParamKind::Trainable, Tensor::new(vec![n], values).unwrap());
        s
    }

    fn grads_for(store: &ParamStore<f64>, coeff: f64) -> Gradients<f64> {
        // loss = coeff * sum(p) has gradient `coeff` everywhere.
        let mut tape = Tape::new(store, Mode::Train);
        let id = store.ids().next().unwrap();
        let p = tape.param(id);
        let n = store.get(id).len();
        let s = tape.scale(p, coeff);
        let w = tape.input(Tensor::full(vec![1, n], 1.0));
        let loss = tape.linear(s, w, None).unwrap();
        tape.backward(loss).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_keeps_params() {
        let mut store = store_with(vec![0.5, -1.5, 2.0]);
        let before = store.clone();
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(&cfg);
        let g = grads_for(&store, 0.0);
        opt.step(&mut store, &g, 1e-3);
        assert_eq!(store, before);
    }

    #[test]
    fn zero_gradient_decay_only() {
        let mut store = store_with(vec![0.5, -1.5, 2.0]);
        let cfg = TrainConfig::default();
        let mut opt = AdamW::new(&cfg);
        let g = grads_for(&store, 0.0);
        opt.step(&mut store, &g, 1e-3);
        for (&a, &b) in store.entries()[0].value.data().iter().zip(&[0.5, -1.5, 2.0]) {
            assert!(approx(a, b * (1.0 - 1e-5), 1e-15));
        }
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        for coeff in [0.3, -4.0, 1e-3] {
            let mut store = store_with(vec![1.0, -2.0]);
            let cfg = TrainConfig {
                weight_decay: 0.0,
                ..Default::default()
            };
            let mut opt = AdamW::new(&cfg);
            let g = grads_for(&store, coeff);
            opt.step(&mut store, &g, 1e-3);
            let after = store.entries()[0].value.data();
            // m̂ = g, v̂ = g², step = lr · g / (|g| + eps)
            let expected = 1e-3 * coeff.abs() / (coeff.abs() + 1e-8);
            assert!(approx((1.0 - after[0]).abs(), expected, 1e-12));
            assert!(approx((-2.0 - after[1]).abs(), expected, 1e-12));
            assert_eq!((1.0 - after[0]).signum(), coeff.signum());
        }
    }

    #[test]
    fn buffers_are_not_updated() {
        let mut store = store_with(vec![1.0]);
        store.add("buf", ParamKind::Buffer, Tensor::full(vec![1], 3.0));
        let mut opt = AdamW::new(&TrainConfig::default());
        let g = grads_for(&store, 1.0);
        opt.step(&mut store, &g, 1e-3);
        assert_eq!(store.entries()[1].value.data(), &[3.0]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            lr_min: 1e-2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            patience: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
