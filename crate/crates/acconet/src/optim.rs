//! Adaptive-moment optimizer with optional decoupled weight decay.
//! Constants default to first-moment 0.9, second-moment 0.999, guard 1e-8.

use std::collections::HashMap;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::params::{ParamId, ParamStore};
use crate::Scalar;

/// Named f64 tensors, the checkpoint-facing view of optimizer state.
pub type NamedTensors = Vec<(String, ArrayD<f64>)>;

pub struct Adam<S: Scalar> {
    beta1: S,
    beta2: S,
    eps: S,
    weight_decay: S,
    step: u64,
    m: HashMap<ParamId, ArrayD<S>>,
    v: HashMap<ParamId, ArrayD<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new() -> Self {
        Adam {
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            eps: S::from_f64(1e-8),
            weight_decay: S::zero(),
            step: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = S::from_f64(wd);
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update to every trainable parameter that received a
    /// gradient in this step.
    pub fn step(&mut self, store: &mut ParamStore<S>, grads: &Gradients<S>, lr: S) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = S::one() - self.beta1.powi(t);
        let bias2 = S::one() - self.beta2.powi(t);
        let ids: Vec<ParamId> = store.trainable_ids().collect();
        for id in ids {
            let Some(grad) = grads.param(id) else { continue };
            let m = self
                .m
                .entry(id)
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let v = self
                .v
                .entry(id)
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let (b1, b2) = (self.beta1, self.beta2);
            m.zip_mut_with(grad, |mv, &g| *mv = b1 * *mv + (S::one() - b1) * g);
            v.zip_mut_with(grad, |vv, &g| *vv = b2 * *vv + (S::one() - b2) * g * g);
            let value = store.value_mut(id);
            let (eps, wd) = (self.eps, self.weight_decay);
            ndarray::Zip::from(&mut *value)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &mv, &vv| {
                    let m_hat = mv / bias1;
                    let v_hat = vv / bias2;
                    let update = m_hat / (v_hat.sqrt() + eps) + wd * *p;
                    *p -= lr * update;
                });
        }
    }

    /// Moment estimates as (name, f64 array) entries for checkpointing.
    pub fn state_entries(
        &self,
        store: &ParamStore<S>,
    ) -> (NamedTensors, NamedTensors) {
        let mut m_entries = Vec::new();
        let mut v_entries = Vec::new();
        for id in store.ids() {
            if let Some(m) = self.m.get(&id) {
                m_entries.push((store.name(id).to_string(), m.mapv(|x| x.to_f64())));
            }
            if let Some(v) = self.v.get(&id) {
                v_entries.push((store.name(id).to_string(), v.mapv(|x| x.to_f64())));
            }
        }
        (m_entries, v_entries)
    }

    /// Restore moments and the step counter from checkpoint entries.
    pub fn restore(
        &mut self,
        store: &ParamStore<S>,
        step: u64,
        m_entries: &[(String, ArrayD<f64>)],
        v_entries: &[(String, ArrayD<f64>)],
    ) -> Result<()> {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (name, arr) in m_entries {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown parameter {name}")))?;
            self.m.insert(id, arr.mapv(S::from_f64));
        }
        for (name, arr) in v_entries {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown parameter {name}")))?;
            self.v.insert(id, arr.mapv(S::from_f64));
        }
        Ok(())
    }
}

impl<S: Scalar> Default for Adam<S> {
    fn default() -> Self {
        Self::new()
    }
}
