use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

/// Learning-rate group. `Contextual` marks weights of an external contextual
/// encoder adapter, which train at the smaller rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ParamGroup {
    #[default]
    Default,
    Contextual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub group: ParamGroup,
}

/// Named parameter tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// # Panics
    /// On a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) -> ParamId {
        let name = name.into();
        assert!(self.id_of(&name).is_none(), "duplicate parameter name {name}");
        self.params.push(Param { name, value, group });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn to_named(&self) -> BTreeMap<String, Tensor> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Overwrites every parameter from a named map. Names and shapes must
    /// match exactly.
    pub fn load_named(&mut self, named: &BTreeMap<String, Tensor>) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                named.len()
            )));
        }
        for p in &mut self.params {
            let t = named
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            if t.shape() != p.value.shape() || t.data.len() != t.rows * t.cols {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            h.update((p.value.rows as u64).to_le_bytes());
            h.update((p.value.cols as u64).to_le_bytes());
            for v in &p.value.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Parameter gradients indexed like the store.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn new(n: usize) -> Self {
        Gradients { grads: vec![None; n] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn slot(&mut self, id: ParamId, rows: usize, cols: usize) -> &mut Tensor {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.slot(id, g.rows, g.cols).add_assign(g);
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale(s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    /// Rate for [`ParamGroup::Contextual`] parameters.
    pub contextual_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            contextual_lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, p)| Tensor::zeros(p.value.rows, p.value.cols))
            .collect();
        Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let c = self.config;
        let clip = match c.clip_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (id, g) in grads.iter() {
            let lr = match store.param(id).group {
                ParamGroup::Default => c.lr,
                ParamGroup::Contextual => c.contextual_lr,
            };
            let m = &mut self.m[id.0].data;
            let v = &mut self.v[id.0].data;
            let w = &mut store.get_mut(id).data;
            for i in 0..w.len() {
                let gi = g.data[i] * clip;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] -= lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }
}

/// Xavier/Glorot uniform initialization.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rows, cols, a, rng)
}

pub fn uniform(rows: usize, cols: usize, a: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-a..a)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// Square orthogonal matrix from Gram-Schmidt on Gaussian samples.
pub fn orthogonal(n: usize, rng: &mut impl Rng) -> Tensor {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let d: f64 = super::tensor::dot(&v, r);
            super::tensor::axpy(-d, r, &mut v);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Tensor::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows() {
        let q = orthogonal(6, &mut ChaCha8Rng::seed_from_u64(1));
        let qq = {
            let mut t = Tensor::zeros(6, 6);
            t.add_matmul_nt(&q, &q);
            t
        };
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((qq.get(i, j) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::row_vector(vec![3.0, -2.0]), ParamGroup::Default);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                clip_norm: None,
                ..Default::default()
            },
            &store,
        );
        for _ in 0..500 {
            let mut g = Gradients::new(1);
            let x = store.get(id).clone();
            g.accumulate(id, &x.map(|v| 2.0 * v));
            adam.step(&mut store, &g);
        }
        assert!(store.get(id).data.iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn named_round_trip_and_checksum() {
        let mut a = ParamStore::new();
        a.add("w", Tensor::row_vector(vec![1.0, 2.0]), ParamGroup::Default);
        let mut b = ParamStore::new();
        b.add("w", Tensor::zeros(1, 2), ParamGroup::Default);
        assert_ne!(a.checksum(), b.checksum());
        b.load_named(&a.to_named()).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        let mut bad = a.to_named();
        bad.insert("w".into(), Tensor::zeros(2, 1));
        assert!(b.load_named(&bad).is_err());
    }
}
