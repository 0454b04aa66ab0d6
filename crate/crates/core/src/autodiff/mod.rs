//! Minimal reverse-mode automatic differentiation over `f64` matrices.
//!
//! Only the ops the density cascade needs are provided. Attention, the
//! categorical NLL and the Gaussian-mixture NLL are fused ops with
//! hand-written backward passes.

mod graph;
mod matrix;
mod params;

pub use graph::{softmax_in_place, softmax_rows, AttentionLayout, Graph, MixtureFloors, Var};
pub use graph::INV_SQRT_2PI;
pub use matrix::Matrix;
pub use params::{Adam, AdamConfig, Gradients, ParamId, ParamStore};

/// Finite-difference gradient verification.
pub mod gradcheck {
    use super::*;

    /// Relative error between the analytic gradient and central finite
    /// differences of `loss`, over every scalar in the store.
    pub fn gradient_relative_error(
        store: &ParamStore,
        loss: impl Fn(&ParamStore) -> f64,
        analytic: &Gradients,
        step: f64,
    ) -> f64 {
        let a = analytic.flatten(store);
        let mut numeric = Vec::with_capacity(a.len());
        let mut probe = store.clone();
        for id in store.ids() {
            for i in 0..store.get(id).len() {
                let orig = store.get(id).data()[i];
                probe.get_mut(id).data_mut()[i] = orig + step;
                let up = loss(&probe);
                probe.get_mut(id).data_mut()[i] = orig - step;
                let down = loss(&probe);
                probe.get_mut(id).data_mut()[i] = orig;
                numeric.push((up - down) / (2.0 * step));
            }
        }
        let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        diff / na.max(nn).max(1e-12)
    }
}
