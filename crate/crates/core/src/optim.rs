//! Parameter storage, tape binding, and the adaptive-moment optimizer.
//!
//! All trainable state of an artifact lives in one `ParamStore`; model
//! structs hold `ParamId` handles into it. That keeps the optimizer, the
//! checkpoint writer, and gradient harvesting aligned on a single ordered
//! registry.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids()
            .filter(|id| self.get(*id).requires_grad)
            .collect()
    }

    /// Mark every parameter frozen (no further gradient flow).
    pub fn freeze_all(&mut self) {
        for t in &mut self.tensors {
            t.requires_grad = false;
            t.grad = None;
        }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad = None;
        }
    }
}

/// Memoized param → tape-leaf binding for one forward/backward pass. Binding
/// the same parameter twice yields the same leaf, so gradients from multiple
/// uses accumulate on one node.
///
/// A bind belongs to exactly one `ParamStore`: ids from different stores
/// would collide in the memo table. Passes that touch several stores keep
/// one bind per store.
#[derive(Default)]
pub struct TapeBind {
    map: HashMap<usize, TensorId>,
}

impl TapeBind {
    pub fn new() -> TapeBind {
        TapeBind::default()
    }

    pub fn leaf(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> Result<TensorId> {
        if let Some(&tid) = self.map.get(&id.0) {
            return Ok(tid);
        }
        let tid = tape.leaf(store.get(id))?;
        self.map.insert(id.0, tid);
        Ok(tid)
    }

    /// Pull gradients off the tape back into the store, scaled (e.g. by
    /// 1/batch for gradient accumulation across per-sample tapes).
    pub fn harvest(&self, tape: &Tape, store: &mut ParamStore, scale: f64) {
        for (&pid, &tid) in &self.map {
            if let Some(g) = tape.grad(tid) {
                let g = g.to_vec();
                store.get_mut(ParamId(pid)).accumulate_grad(&g, scale);
            }
        }
    }
}

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

/// Bias-corrected adaptive-moment update over a fixed set of parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    /// First/second moment buffers, indexed like the param list passed in.
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, param_sizes: &[usize]) -> Adam {
        Adam {
            cfg,
            step: 0,
            moments: param_sizes
                .iter()
                .map(|&n| (vec![0.0; n], vec![0.0; n]))
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// In-place update of `params[i]` from its populated gradient; gradients
    /// are zeroed afterwards. The slice must match the constructor's sizes.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if params.len() != self.moments.len() {
            return Err(Error::contract(format!(
                "adam: {} params registered, {} given",
                self.moments.len(),
                params.len()
            )));
        }
        self.step += 1;
        let (bc1, bc2) = self.bias_corrections();
        for (k, p) in params.iter_mut().enumerate() {
            update_one(&self.cfg, &mut self.moments[k], p, bc1, bc2)?;
        }
        Ok(())
    }

    /// Same update, addressing parameters through a store; avoids the caller
    /// having to assemble simultaneous mutable borrows.
    pub fn step_store(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        if ids.len() != self.moments.len() {
            return Err(Error::contract(format!(
                "adam: {} params registered, {} given",
                self.moments.len(),
                ids.len()
            )));
        }
        self.step += 1;
        let (bc1, bc2) = self.bias_corrections();
        for (k, &id) in ids.iter().enumerate() {
            update_one(&self.cfg, &mut self.moments[k], store.get_mut(id), bc1, bc2)?;
        }
        Ok(())
    }

    fn bias_corrections(&self) -> (f64, f64) {
        let t = self.step as i32;
        (
            1.0 - self.cfg.beta1.powi(t),
            1.0 - self.cfg.beta2.powi(t),
        )
    }

    pub fn moments(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.moments
    }

    /// Restore optimizer state (checkpoint resume).
    pub fn restore(cfg: AdamConfig, step: u64, moments: Vec<(Vec<f64>, Vec<f64>)>) -> Adam {
        Adam { cfg, step, moments }
    }
}

fn update_one(
    cfg: &AdamConfig,
    moments: &mut (Vec<f64>, Vec<f64>),
    p: &mut Tensor,
    bc1: f64,
    bc2: f64,
) -> Result<()> {
    let (m, v) = moments;
    let g = p
        .grad
        .as_ref()
        .ok_or_else(|| Error::contract("adam: parameter has no gradient".to_string()))?;
    if g.len() != m.len() {
        return Err(Error::contract(format!(
            "adam: moment size {} vs grad size {}",
            m.len(),
            g.len()
        )));
    }
    for i in 0..g.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    p.grad = None;
    Ok(())
}
