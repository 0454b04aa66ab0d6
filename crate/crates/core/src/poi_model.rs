//! Recurrent categorical model of the next POI type.
//!
//! Each step reads `[h ; t_norm ; one-hot(previous POI)]` (the previous block
//! is all zeros at the first step). A softmax head over the GRU state gives
//! the distribution over POI types.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent_embedding::AgentEmbedding;
use crate::autodiff::{softmax_rows, Graph, Matrix, ParamStore, Var};
use crate::error::{Error, Result};
use crate::nn::{GruLayer, Linear};
use crate::PROBABILITY_FLOOR;

/// Tolerance on `Σp = 1` for a categorical distribution.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoiConfig {
    /// GRU hidden width `H`.
    pub hidden: usize,
    /// Stacked GRU layers.
    pub layers: usize,
}

impl Default for PoiConfig {
    fn default() -> Self {
        Self { hidden: 64, layers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDistribution {
    probabilities: Vec<f64>,
}

impl CategoricalDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() || probabilities.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidArgument("probabilities must be non-negative".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(Self { probabilities })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn k(&self) -> usize {
        self.probabilities.len()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probabilities.iter().enumerate() {
            if *p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }
}

/// `−ln max(p[c], 1e-9)`.
pub fn poi_nll(dist: &CategoricalDistribution, c: usize) -> Result<f64> {
    let p = dist
        .probabilities
        .get(c)
        .ok_or_else(|| Error::OutOfRange(format!("POI index {c} outside 0..{}", dist.k())))?;
    Ok(-p.max(PROBABILITY_FLOOR).ln())
}

pub fn one_hot(k: usize, index: usize) -> Result<Vec<f64>> {
    if index >= k {
        return Err(Error::OutOfRange(format!("POI index {index} outside 0..{k}")));
    }
    let mut v = vec![0.0; k];
    v[index] = 1.0;
    Ok(v)
}

/// `[h ; t_norm ; prev_c]`.
pub fn poi_step_features(h: &AgentEmbedding, t_norm: f64, prev_c: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(h.width() + 1 + prev_c.len());
    v.extend_from_slice(h.values());
    v.push(t_norm);
    v.extend_from_slice(prev_c);
    v
}

/// Teacher-forced previous-POI one-hots: row `i` encodes `pois[i - 1]`, row 0
/// is zero.
fn previous_block(k: usize, pois: &[usize]) -> Result<Matrix> {
    let mut m = Matrix::zeros(pois.len(), k);
    for (i, &c) in pois.iter().enumerate() {
        if c >= k {
            return Err(Error::OutOfRange(format!("POI index {c} outside 0..{k}")));
        }
        if i + 1 < pois.len() {
            m.set(i + 1, c, 1.0);
        }
    }
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct PoiTypeModel {
    layers: Vec<GruLayer>,
    head: Linear,
    d_embed: usize,
    k: usize,
}

impl PoiTypeModel {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        d_embed: usize,
        k: usize,
        config: &PoiConfig,
    ) -> Self {
        let mut layers = Vec::with_capacity(config.layers);
        let mut width = d_embed + 1 + k;
        for i in 0..config.layers.max(1) {
            layers.push(GruLayer::new(store, rng, &format!("poi.gru{i}"), width, config.hidden));
            width = config.hidden;
        }
        let head = Linear::new(store, rng, "poi.head", config.hidden, k);
        Self { layers, head, d_embed, k }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn feature_width(&self) -> usize {
        self.d_embed + 1 + self.k
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    /// Step features on the tape, with `h` (`1 × D_h`) broadcast to every
    /// step so gradients reach the embedding.
    pub fn features_graph(&self, g: &mut Graph<'_>, h: Var, times: &[f64], pois: &[usize]) -> Result<Var> {
        let n = times.len();
        if n == 0 || pois.len() != n {
            return Err(Error::Shape(format!("{} times vs {} POIs", n, pois.len())));
        }
        if g.value(h).shape() != (1, self.d_embed) {
            return Err(Error::Shape("embedding width mismatch".into()));
        }
        let hs = g.repeat_rows(h, n);
        let t = g.constant(Matrix::column_vector(times.to_vec()));
        let prev = g.constant(previous_block(self.k, pois)?);
        Ok(g.concat_cols(&[hs, t, prev]))
    }

    /// Per-step logits `n × K` from a feature matrix `n × (D_h + 1 + K)`.
    pub fn logits_graph(&self, g: &mut Graph<'_>, features: Var) -> Var {
        let mut x = features;
        for layer in &self.layers {
            x = layer.forward(g, x);
        }
        self.head.forward(g, x)
    }

    fn check_features(&self, features: &[Vec<f64>]) -> Result<()> {
        if features.is_empty() {
            return Err(Error::InvalidArgument("empty feature sequence".into()));
        }
        if let Some(f) = features.iter().find(|f| f.len() != self.feature_width()) {
            return Err(Error::Shape(format!(
                "step feature width {} != {}",
                f.len(),
                self.feature_width()
            )));
        }
        Ok(())
    }

    /// Distributions after every step of `features`.
    pub fn step_distributions(
        &self,
        store: &ParamStore,
        features: &[Vec<f64>],
    ) -> Result<Vec<CategoricalDistribution>> {
        self.check_features(features)?;
        let mut g = Graph::new(store);
        let x = g.constant(Matrix::from_rows(features));
        let logits = self.logits_graph(&mut g, x);
        softmax_rows(g.value(logits))
            .to_rows()
            .into_iter()
            .map(CategoricalDistribution::new)
            .collect()
    }

    /// `softmax(W g_i + b)` for the last step `i` of the prefix.
    pub fn poi_distribution(&self, store: &ParamStore, features: &[Vec<f64>]) -> Result<CategoricalDistribution> {
        let mut all = self.step_distributions(store, features)?;
        Ok(all.pop().expect("non-empty"))
    }

    /// Teacher-forced distributions for an observed sequence.
    pub fn sequence_distributions(
        &self,
        store: &ParamStore,
        h: &AgentEmbedding,
        times: &[f64],
        pois: &[usize],
    ) -> Result<Vec<CategoricalDistribution>> {
        let mut g = Graph::new(store);
        let hv = g.constant(h.as_row());
        let x = self.features_graph(&mut g, hv, times, pois)?;
        let logits = self.logits_graph(&mut g, x);
        softmax_rows(g.value(logits))
            .to_rows()
            .into_iter()
            .map(CategoricalDistribution::new)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::gradient_relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_feature_examples() {
        let h = AgentEmbedding(vec![0.0, 0.0]);
        let prev = one_hot(3, 1).unwrap();
        assert_eq!(poi_step_features(&h, 0.5, &prev), vec![0.0, 0.0, 0.5, 0.0, 1.0, 0.0]);
        let first = poi_step_features(&h, 0.5, &[0.0; 3]);
        assert_eq!(&first[3..], &[0.0, 0.0, 0.0]);
        assert_eq!(first, poi_step_features(&h, 0.5, &[0.0; 3]));
    }

    #[test]
    fn nll_examples() {
        let d = CategoricalDistribution::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(poi_nll(&d, 0).unwrap(), 0.0);
        assert!((poi_nll(&d, 1).unwrap() - 20.723_265_836_9).abs() < 1e-9);
        let half = CategoricalDistribution::new(vec![0.5, 0.5]).unwrap();
        assert!((poi_nll(&half, 0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(poi_nll(&half, 2).is_err());
    }

    #[test]
    fn zero_head_gives_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let model = PoiTypeModel::new(&mut store, &mut rng, 2, 4, &PoiConfig { hidden: 5, layers: 1 });
        let head = model.head().clone();
        store.get_mut(head.weight).data_mut().fill(0.0);
        store.get_mut(head.bias.unwrap()).data_mut().fill(0.0);
        let f = vec![poi_step_features(&AgentEmbedding(vec![0.3, -0.1]), 0.2, &[0.0; 4])];
        let d = model.poi_distribution(&store, &f).unwrap();
        assert!(d.probabilities().iter().all(|p| (*p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn prefix_distribution_matches_full_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let model = PoiTypeModel::new(&mut store, &mut rng, 2, 3, &PoiConfig { hidden: 6, layers: 2 });
        let h = AgentEmbedding(vec![0.5, -0.5]);
        let times = [0.1, 0.4, 0.7];
        let pois = [0, 2, 1];
        let all = model.sequence_distributions(&store, &h, &times, &pois).unwrap();
        let mut features = Vec::new();
        let mut prev = vec![0.0; 3];
        for i in 0..3 {
            features.push(poi_step_features(&h, times[i], &prev));
            let d = model.poi_distribution(&store, &features).unwrap();
            assert_eq!(d, all[i]);
            prev = one_hot(3, pois[i]).unwrap();
        }
    }

    #[test]
    fn summed_nll_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let model = PoiTypeModel::new(&mut store, &mut rng, 2, 3, &PoiConfig { hidden: 8, layers: 1 });
        let h = store.add_normal("h", 1, 2, &mut rng);
        let times = [0.1, 0.3, 0.6, 0.9];
        let pois = [0, 2, 2, 1];
        let run = |s: &ParamStore| {
            let mut g = Graph::new(s);
            let hv = g.param(h);
            let f = model.features_graph(&mut g, hv, &times, &pois).unwrap();
            let logits = model.logits_graph(&mut g, f);
            let loss = g.softmax_nll(logits, &pois, PROBABILITY_FLOOR);
            (g.backward(loss), g.scalar(loss))
        };
        let (grads, _) = run(&store);
        let err = gradient_relative_error(&store, |s| run(s).1, &grads, 1e-5);
        assert!(err < 1e-6, "relative error {err}");
    }
}
