//! Adam optimizer over a [`ParamStore`].
//!
//! Moment buffers are kept in store-block order, so optimizer state can be
//! serialized alongside the parameters and restored for bit-identical
//! resumption of an interrupted run.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::config(format!(
                "invalid adam settings: lr {}, betas ({}, {}), eps {}",
                self.lr, self.beta1, self.beta2, self.eps
            )));
        }
        Ok(())
    }
}

/// Adam state for one parameter store.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Result<Self> {
        cfg.validate()?;
        let m = (0..store.len())
            .map(|i| Tensor::zeros(store.get(i).shape().to_vec()))
            .collect();
        let v = (0..store.len())
            .map(|i| Tensor::zeros(store.get(i).shape().to_vec()))
            .collect();
        Ok(Adam { cfg, t: 0, m, v })
    }

    pub fn config(&self) -> AdamConfig {
        self.cfg
    }

    /// Number of steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update. `grads` must align with the store's blocks.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::contract(format!(
                "adam got {} gradients for {} parameter blocks",
                grads.len(),
                store.len()
            )));
        }
        self.t += 1;
        let b1t = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for i in 0..store.len() {
            let g = &grads[i];
            if g.shape() != store.get(i).shape() {
                return Err(Error::Shape {
                    op: "adam step",
                    lhs: store.get(i).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let mut p = store.get(i).clone();
            let pd = p.data_mut();
            let md = self.m[i].data_mut();
            let vd = self.v[i].data_mut();
            for j in 0..pd.len() {
                let gj = g.data()[j];
                md[j] = self.cfg.beta1 * md[j] + (1.0 - self.cfg.beta1) * gj;
                vd[j] = self.cfg.beta2 * vd[j] + (1.0 - self.cfg.beta2) * gj * gj;
                let m_hat = md[j] / b1t;
                let v_hat = vd[j] / b2t;
                pd[j] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
            if !p.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite parameter after adam update of block {:?}",
                    store.name(i)
                )));
            }
            store.set(i, p)?;
        }
        Ok(())
    }

    /// Moment buffers in block order, for checkpointing.
    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Restores step count and moments saved by [`Adam::moments`].
    pub fn restore(&mut self, t: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Result<()> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(Error::contract("adam restore: wrong number of moment blocks"));
        }
        for (cur, new) in self.m.iter().zip(&m).chain(self.v.iter().zip(&v)) {
            if cur.shape() != new.shape() {
                return Err(Error::Shape {
                    op: "adam restore",
                    lhs: cur.shape().to_vec(),
                    rhs: new.shape().to_vec(),
                });
            }
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_store(x0: &[f64]) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("x", Tensor::vector(x0)).unwrap();
        store
    }

    #[test]
    fn first_step_moves_each_coordinate_by_lr() {
        // With bias correction, |update| == lr on the first step whenever the
        // gradient is nonzero (m_hat/sqrt(v_hat) == sign(g) up to eps).
        let mut store = quadratic_store(&[5.0, -3.0]);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1), &store).unwrap();
        let g = Tensor::vector(&[2.0, -4.0]);
        adam.step(&mut store, &[g]).unwrap();
        let x = store.get(0).data();
        assert!((x[0] - (5.0 - 0.1)).abs() < 1e-6, "{}", x[0]);
        assert!((x[1] - (-3.0 + 0.1)).abs() < 1e-6, "{}", x[1]);
    }

    #[test]
    fn converges_on_a_separable_quadratic() {
        // minimize 0.5 * ||x - c||^2, gradient x - c.
        let c = [1.5, -2.0, 0.25];
        let mut store = quadratic_store(&[0.0, 0.0, 0.0]);
        let mut adam = Adam::new(AdamConfig::with_lr(0.05), &store).unwrap();
        for _ in 0..2000 {
            let x = store.get(0).data();
            let g = Tensor::vector(&[x[0] - c[0], x[1] - c[1], x[2] - c[2]]);
            adam.step(&mut store, &[g]).unwrap();
        }
        for (xi, ci) in store.get(0).data().iter().zip(&c) {
            assert!((xi - ci).abs() < 1e-3, "{xi} vs {ci}");
        }
    }

    #[test]
    fn restore_reproduces_the_exact_trajectory() {
        let grads = [
            Tensor::vector(&[0.3, -0.7]),
            Tensor::vector(&[-0.1, 0.45]),
            Tensor::vector(&[0.9, 0.2]),
        ];
        let mut store_a = quadratic_store(&[1.0, 1.0]);
        let mut adam_a = Adam::new(AdamConfig::default(), &store_a).unwrap();
        adam_a.step(&mut store_a, std::slice::from_ref(&grads[0])).unwrap();
        // Snapshot after one step, replay the rest on a restored copy.
        let (m, v) = adam_a.moments();
        let (m, v) = (m.to_vec(), v.to_vec());
        let t = adam_a.step_count();
        let snapshot = store_a.clone();
        adam_a.step(&mut store_a, std::slice::from_ref(&grads[1])).unwrap();
        adam_a.step(&mut store_a, std::slice::from_ref(&grads[2])).unwrap();

        let mut store_b = snapshot;
        let mut adam_b = Adam::new(AdamConfig::default(), &store_b).unwrap();
        adam_b.restore(t, m, v).unwrap();
        adam_b.step(&mut store_b, std::slice::from_ref(&grads[1])).unwrap();
        adam_b.step(&mut store_b, std::slice::from_ref(&grads[2])).unwrap();

        let a = store_a.get(0).data();
        let b = store_b.get(0).data();
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn mismatched_gradient_count_is_rejected() {
        let mut store = quadratic_store(&[0.0]);
        let mut adam = Adam::new(AdamConfig::default(), &store).unwrap();
        assert!(adam.step(&mut store, &[]).is_err());
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let store = quadratic_store(&[0.0]);
        let bad = AdamConfig { lr: 0.0, ..Default::default() };
        assert!(Adam::new(bad, &store).is_err());
    }
}
