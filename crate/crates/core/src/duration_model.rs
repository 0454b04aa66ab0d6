//! Attention-based mixture density over normalized stay duration.
//!
//! Three tokens `{proj(h), proj(t), embed(c)}` pass through set
//! self-attention, are mean-pooled, and a linear head emits the mixture
//! weight logits. Component means and log-stds are global parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent_embedding::AgentEmbedding;
use crate::autodiff::{
    softmax_rows, AttentionLayout, Graph, Matrix, MixtureFloors, ParamId, ParamStore, Var, INV_SQRT_2PI,
};
use crate::error::{Error, Result};
use crate::nn::{EncoderBlock, Linear};
use crate::clip_probability;

/// Density floor inside the training NLL.
pub const NLL_DENSITY_FLOOR: f64 = 1e-30;

const WEIGHT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DurationConfig {
    /// Mixture components `K_mix`.
    pub components: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_width: usize,
    pub sigma_floor: f64,
    /// Normalized-duration bin width turning density into probability.
    pub bin_width: f64,
}

impl Default for DurationConfig {
    fn default() -> Self {
        Self {
            components: 8,
            d_model: 32,
            heads: 4,
            layers: 1,
            ff_width: 64,
            sigma_floor: 1e-3,
            bin_width: 0.01,
        }
    }
}

impl DurationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::InvalidArgument(
                "duration model needs components ≥ 1 and d_model divisible by heads".into(),
            ));
        }
        if !(self.sigma_floor > 0.0) || !(self.bin_width > 0.0) {
            return Err(Error::InvalidArgument("sigma_floor and bin_width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || stds.len() != k {
            return Err(Error::Shape("mixture parameter lengths differ".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("negative mixture weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}")));
        }
        if stds.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("invalid mixture component".into()));
        }
        Ok(Self { weights, means, stds })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }
}

/// `Σ_k m_k · N(d; μ_k, σ_k)`.
pub fn mixture_density(gm: &GaussianMixture, d: f64) -> f64 {
    gm.weights
        .iter()
        .zip(&gm.means)
        .zip(&gm.stds)
        .map(|((w, mu), s)| {
            let z = (d - mu) / s;
            w * INV_SQRT_2PI / s * (-0.5 * z * z).exp()
        })
        .sum()
}

/// `−ln max(density, 1e-30)`.
pub fn duration_nll(gm: &GaussianMixture, d: f64) -> f64 {
    -mixture_density(gm, d).max(NLL_DENSITY_FLOOR).ln()
}

/// `clip(density · bin_width)`.
pub fn duration_probability(gm: &GaussianMixture, d: f64, bin_width: f64) -> f64 {
    clip_probability(mixture_density(gm, d) * bin_width)
}

const EM_ITERATIONS: usize = 100;

/// Deterministic EM fit of a `kc`-component 1-D Gaussian mixture; returns
/// means and stds (floored at `sigma_floor`).
pub fn fit_components(durations: &[f64], kc: usize, sigma_floor: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if durations.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if kc == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    let mut sorted = durations.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut means: Vec<f64> = (0..kc)
        .map(|i| {
            let q = (i as f64 + 0.5) / kc as f64;
            sorted[((q * n as f64) as usize).min(n - 1)]
        })
        .collect();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = (sorted.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64).sqrt();
    let mut sigmas = vec![(std / kc as f64).max(sigma_floor); kc];
    let mut weights = vec![1.0 / kc as f64; kc];
    let mut resp = vec![0.0; kc];
    for _ in 0..EM_ITERATIONS {
        let mut nk = vec![0.0; kc];
        let mut sx = vec![0.0; kc];
        let mut sxx = vec![0.0; kc];
        for &d in &sorted {
            // Log-domain responsibilities keep far-tail points assigned.
            let mut top = f64::NEG_INFINITY;
            for k in 0..kc {
                let z = (d - means[k]) / sigmas[k];
                resp[k] = weights[k].ln() - sigmas[k].ln() - 0.5 * z * z;
                top = top.max(resp[k]);
            }
            let mut total = 0.0;
            for r in resp.iter_mut() {
                *r = (*r - top).exp();
                total += *r;
            }
            for k in 0..kc {
                let r = resp[k] / total;
                nk[k] += r;
                sx[k] += r * d;
                sxx[k] += r * d * d;
            }
        }
        for k in 0..kc {
            if nk[k] <= 1e-12 {
                continue;
            }
            weights[k] = nk[k] / n as f64;
            means[k] = sx[k] / nk[k];
            sigmas[k] = (sxx[k] / nk[k] - means[k] * means[k]).max(0.0).sqrt().max(sigma_floor);
        }
    }
    Ok((means, sigmas))
}

#[derive(Debug, Clone)]
pub struct DurationModel {
    config: DurationConfig,
    k: usize,
    d_embed: usize,
    h_proj: Linear,
    t_proj: Linear,
    c_embed: ParamId,
    blocks: Vec<EncoderBlock>,
    head: Linear,
    mu: ParamId,
    log_sigma: ParamId,
}

impl DurationModel {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        d_embed: usize,
        k: usize,
        config: &DurationConfig,
    ) -> Self {
        let c = config;
        let h_proj = Linear::new(store, rng, "dur.h_proj", d_embed, c.d_model);
        let t_proj = Linear::new(store, rng, "dur.t_proj", 1, c.d_model);
        let c_embed = store.add_xavier("dur.c_embed", k, c.d_model, rng);
        let blocks = (0..c.layers)
            .map(|i| EncoderBlock::new(store, rng, &format!("dur.block{i}"), c.d_model, c.heads, c.ff_width))
            .collect();
        let head = Linear::new(store, rng, "dur.head", c.d_model, c.components);
        let kc = c.components;
        let mu = store.add(
            "dur.mu",
            Matrix::row_vector((0..kc).map(|i| (i as f64 + 0.5) / kc as f64).collect()),
        );
        let log_sigma = store.add("dur.log_sigma", Matrix::filled(1, kc, (1.0 / kc as f64).ln()));
        Self {
            config: c.clone(),
            k,
            d_embed,
            h_proj,
            t_proj,
            c_embed,
            blocks,
            head,
            mu,
            log_sigma,
        }
    }

    pub fn config(&self) -> &DurationConfig {
        &self.config
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn mu_param(&self) -> ParamId {
        self.mu
    }

    pub fn log_sigma_param(&self) -> ParamId {
        self.log_sigma
    }

    /// Fits the global components to `durations` (normalized) by EM on a
    /// 1-D mixture, seeded at the `K_mix` quantiles with every std equal to
    /// the empirical std divided by `K_mix`.
    pub fn init_components(&self, store: &mut ParamStore, durations: &[f64]) -> Result<()> {
        let (means, sigmas) = fit_components(durations, self.config.components, self.config.sigma_floor)?;
        store.get_mut(self.mu).data_mut().copy_from_slice(&means);
        for (dst, s) in store.get_mut(self.log_sigma).data_mut().iter_mut().zip(&sigmas) {
            *dst = s.ln();
        }
        Ok(())
    }

    fn check_inputs(&self, g: &Graph<'_>, h: Var, times: &[f64], pois: &[usize]) -> Result<()> {
        if times.is_empty() || times.len() != pois.len() {
            return Err(Error::Shape(format!("{} times vs {} POIs", times.len(), pois.len())));
        }
        if g.value(h).shape() != (1, self.d_embed) {
            return Err(Error::Shape("embedding width mismatch".into()));
        }
        if let Some(c) = pois.iter().find(|c| **c >= self.k) {
            return Err(Error::OutOfRange(format!("POI index {c} outside 0..{}", self.k)));
        }
        Ok(())
    }

    /// Mixture weight logits `n × K_mix` for each `(t_i, c_i)` under `h`.
    pub fn logits_graph(&self, g: &mut Graph<'_>, h: Var, times: &[f64], pois: &[usize]) -> Result<Var> {
        self.check_inputs(g, h, times, pois)?;
        let n = times.len();
        let hp = self.h_proj.forward(g, h);
        let ht = g.repeat_rows(hp, n);
        let t = g.constant(Matrix::column_vector(times.to_vec()));
        let tt = self.t_proj.forward(g, t);
        let mut onehot = Matrix::zeros(n, self.k);
        for (i, &c) in pois.iter().enumerate() {
            onehot.set(i, c, 1.0);
        }
        let oh = g.constant(onehot);
        let table = g.param(self.c_embed);
        let ct = g.matmul(oh, table);
        // member j of set i sits at row j·n + i
        let mut x = g.concat_rows(&[ht, tt, ct]);
        let layout = AttentionLayout::Grouped { groups: n, size: 3 };
        for block in &self.blocks {
            x = block.forward(g, x, layout);
        }
        let a = g.slice_rows(x, 0, n);
        let b = g.slice_rows(x, n, n);
        let c = g.slice_rows(x, 2 * n, n);
        let ab = g.add(a, b);
        let sum = g.add(ab, c);
        let pooled = g.scale(sum, 1.0 / 3.0);
        Ok(self.head.forward(g, pooled))
    }

    /// Summed mixture NLL of `targets` (normalized durations).
    pub fn nll_graph(&self, g: &mut Graph<'_>, logits: Var, targets: &[f64]) -> Var {
        let mu = g.param(self.mu);
        let ls = g.param(self.log_sigma);
        g.mixture_nll(
            logits,
            mu,
            ls,
            targets,
            MixtureFloors {
                sigma: self.config.sigma_floor,
                density: NLL_DENSITY_FLOOR,
            },
        )
    }

    fn components(&self, store: &ParamStore) -> (Vec<f64>, Vec<f64>) {
        let means = store.get(self.mu).data().to_vec();
        let stds = store
            .get(self.log_sigma)
            .data()
            .iter()
            .map(|ls| ls.exp().max(self.config.sigma_floor))
            .collect();
        (means, stds)
    }

    /// One mixture per `(t_i, c_i)`.
    pub fn mixtures(
        &self,
        store: &ParamStore,
        h: &AgentEmbedding,
        times: &[f64],
        pois: &[usize],
    ) -> Result<Vec<GaussianMixture>> {
        let mut g = Graph::new(store);
        let hv = g.constant(h.as_row());
        let logits = self.logits_graph(&mut g, hv, times, pois)?;
        let (means, stds) = self.components(store);
        softmax_rows(g.value(logits))
            .to_rows()
            .into_iter()
            .map(|w| GaussianMixture::new(w, means.clone(), stds.clone()))
            .collect()
    }

    pub fn duration_mixture(
        &self,
        store: &ParamStore,
        h: &AgentEmbedding,
        t_norm: f64,
        c: usize,
    ) -> Result<GaussianMixture> {
        let mut all = self.mixtures(store, h, &[t_norm], &[c])?;
        Ok(all.pop().expect("one mixture"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::gradient_relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn phi(z: f64) -> f64 {
        (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn density_examples() {
        let one = GaussianMixture::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        assert!((mixture_density(&one, 0.0) - 0.398_942_280_4).abs() < 1e-9);
        assert!(mixture_density(&one, 10.0) < 1e-20);
        assert!(mixture_density(&one, 10.0) >= 0.0);
        let two = GaussianMixture::new(vec![0.5, 0.5], vec![0.0, 2.0], vec![1.0, 1.0]).unwrap();
        let oracle = 0.5 * phi(1.0) + 0.5 * phi(-1.0);
        assert!((mixture_density(&two, 1.0) - oracle).abs() < 1e-15);
        assert!((oracle - 0.241_970_724_5).abs() < 1e-9);
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn nll_and_probability_examples() {
        // density 1 at the mean when σ = 1/√(2π)
        let unit = GaussianMixture::new(vec![1.0], vec![0.0], vec![INV_SQRT_2PI]).unwrap();
        assert!(duration_nll(&unit, 0.0).abs() < 1e-15);
        let sigma = INV_SQRT_2PI / (-3.0f64).exp();
        let e3 = GaussianMixture::new(vec![1.0], vec![0.0], vec![sigma]).unwrap();
        assert!((duration_nll(&e3, 0.0) - 3.0).abs() < 1e-12);
        let one = GaussianMixture::new(vec![1.0], vec![0.0], vec![1.0]).unwrap();
        assert!((duration_nll(&one, 1e6) + NLL_DENSITY_FLOOR.ln()).abs() < 1e-12);
        assert!((duration_probability(&one, 0.0, 0.01) - 0.003_989_422_804).abs() < 1e-12);
        let spike = GaussianMixture::new(vec![1.0], vec![0.0], vec![INV_SQRT_2PI / 150.0]).unwrap();
        assert_eq!(duration_probability(&spike, 0.0, 0.01), 1.0);
        assert_eq!(duration_probability(&one, 1e6, 0.01), 1e-9);
    }

    #[test]
    fn zero_head_gives_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cfg = DurationConfig { components: 4, d_model: 8, heads: 2, ff_width: 8, ..Default::default() };
        let model = DurationModel::new(&mut store, &mut rng, 3, 5, &cfg);
        let head = model.head().clone();
        store.get_mut(head.weight).data_mut().fill(0.0);
        store.get_mut(head.bias.unwrap()).data_mut().fill(0.0);
        let h = AgentEmbedding(vec![0.1, 0.2, 0.3]);
        let gm = model.duration_mixture(&store, &h, 0.4, 2).unwrap();
        assert!(gm.weights().iter().all(|w| (*w - 0.25).abs() < 1e-15));
        assert!(model.duration_mixture(&store, &h, 0.4, 5).is_err());
    }

    #[test]
    fn batched_mixtures_match_single_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let cfg = DurationConfig { components: 3, d_model: 8, heads: 2, ff_width: 8, ..Default::default() };
        let model = DurationModel::new(&mut store, &mut rng, 2, 3, &cfg);
        let h = AgentEmbedding(vec![0.4, -1.0]);
        let all = model.mixtures(&store, &h, &[0.1, 0.5, 0.9], &[0, 2, 1]).unwrap();
        for (i, (t, c)) in [(0.1, 0), (0.5, 2), (0.9, 1)].into_iter().enumerate() {
            let one = model.duration_mixture(&store, &h, t, c).unwrap();
            for (a, b) in one.weights().iter().zip(all[i].weights()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn component_init_recovers_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let cfg = DurationConfig { components: 2, d_model: 4, heads: 1, ff_width: 4, ..Default::default() };
        let model = DurationModel::new(&mut store, &mut rng, 2, 3, &cfg);
        model.init_components(&mut store, &[0.1, 0.2, 0.3, 0.7, 0.8, 0.9]).unwrap();
        let mu = store.get(model.mu_param()).data();
        assert!((mu[0] - 0.2).abs() < 1e-6 && (mu[1] - 0.8).abs() < 1e-6, "{mu:?}");
        let sd = (0.02f64 / 3.0).sqrt();
        for ls in store.get(model.log_sigma_param()).data() {
            assert!((ls.exp() - sd).abs() < 1e-6);
        }
    }

    #[test]
    fn component_fit_floors_sigma() {
        let (mu, sd) = fit_components(&[0.5; 10], 3, 1e-3).unwrap();
        assert!(mu.iter().all(|m| (m - 0.5).abs() < 1e-12));
        assert!(sd.iter().all(|s| *s == 1e-3));
        assert!(fit_components(&[], 2, 1e-3).is_err());
    }

    #[test]
    fn nll_gradient_includes_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let cfg = DurationConfig { components: 3, d_model: 8, heads: 2, ff_width: 8, ..Default::default() };
        let model = DurationModel::new(&mut store, &mut rng, 2, 3, &cfg);
        let h = store.add_normal("h", 1, 2, &mut rng);
        let times = [0.2, 0.5, 0.8];
        let pois = [1, 0, 2];
        let targets = [0.3, 0.6, 0.1];
        let run = |s: &ParamStore| {
            let mut g = Graph::new(s);
            let hv = g.param(h);
            let logits = model.logits_graph(&mut g, hv, &times, &pois).unwrap();
            let loss = model.nll_graph(&mut g, logits, &targets);
            (g.backward(loss), g.scalar(loss))
        };
        let (grads, _) = run(&store);
        assert!(grads.get(model.mu_param()).is_some());
        assert!(grads.get(model.log_sigma_param()).is_some());
        let err = gradient_relative_error(&store, |s| run(s).1, &grads, 1e-5);
        assert!(err < 1e-5, "relative error {err}");
    }
}
