//! Parameter storage, gradient buffers and the Adam optimizer.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Matrix;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Flat, ordered collection of named trainable tensors.
///
/// Models hold [`ParamId`]s into a shared store, so several models can be
/// optimized jointly by one optimizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform Glorot initialization.
    pub fn add_xavier<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        self.add(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total scalar count.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Flattens every parameter into one vector (store order).
    pub fn flatten(&self) -> Vec<f64> {
        self.values
            .iter()
            .flat_map(|m| m.data().iter().copied())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for v in &mut self.values {
            v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Gradient buffers aligned with a [`ParamStore`]; `None` means "no gradient".
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn empty(n_params: usize) -> Self {
        Self {
            grads: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: &Matrix) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(g),
            slot @ None => *slot = Some(g.clone()),
        }
    }

    /// Adds `other` into `self` slot by slot.
    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    /// Drops gradients for the listed parameters.
    pub fn clear(&mut self, ids: &[ParamId]) {
        for id in ids {
            self.grads[id.0] = None;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(Matrix::norm_sq)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Matrix::is_finite)
    }

    /// Flattened gradient in store order, zeros where absent.
    pub fn flatten(&self, store: &ParamStore) -> Vec<f64> {
        let mut out = Vec::with_capacity(store.scalar_count());
        for (i, v) in store.values().iter().enumerate() {
            match &self.grads[i] {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, v.len())),
            }
        }
        out
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Parameters that receive no gradient in a
/// step keep their moments untouched.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
    steps: Vec<u64>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = store
            .values()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            steps: vec![0; store.len()],
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        for id in store.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            self.steps[id.0] += 1;
            let t = self.steps[id.0] as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let m = self.first[id.0].data_mut();
            let v = self.second[id.0].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}
