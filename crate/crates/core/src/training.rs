//! Joint training of the embedding autoencoder and the two neural heads.
//!
//! Each batch of windows is scored under
//! `L_total = L_ae + L_f`, where `L_ae` is the mean squared reconstruction
//! error over every staypoint in the batch and `L_f` is the summed POI and
//! duration NLL. Gradients flow through `h` into the encoder. The arrival KDE
//! is fitted in closed form after optimization.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent_embedding::{
    compute_agent_embeddings, reconstruction_loss, window_ranges, AgentEmbedding, EmbeddingConfig, EmbeddingModel,
};
use crate::arrival_model::{fit_arrival_kde, ArrivalTimeModel};
use crate::autodiff::{Adam, AdamConfig, Gradients, Graph, Matrix, ParamStore, Var};
use crate::dataset::{MobilityDataset, Staypoint};
use crate::duration_model::{duration_nll, DurationConfig, DurationModel};
use crate::encoding::{encode_staypoint, fit_normalization, monday_anchor_utc, NormalizationStats};
use crate::error::{Error, Result};
use crate::poi_model::{poi_nll, PoiConfig, PoiTypeModel};
use crate::PROBABILITY_FLOOR;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_reconstruction: f64,
    pub weight_poi: f64,
    pub weight_duration: f64,
    pub use_arrival: bool,
    pub use_poi: bool,
    pub use_duration: bool,
    pub use_embedding: bool,
    /// Train the autoencoder first, then the heads on frozen embeddings.
    pub staged: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            seed: 0,
            epochs: 20,
            batch_size: 32,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            weight_reconstruction: 1.0,
            weight_poi: 1.0,
            weight_duration: 1.0,
            use_arrival: true,
            use_poi: true,
            use_duration: true,
            use_embedding: true,
            staged: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("invalid optimizer hyperparameters".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Every hyperparameter of a training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub training: TrainingConfig,
    pub embedding: EmbeddingConfig,
    pub poi: PoiConfig,
    pub duration: DurationConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.duration.validate()?;
        let e = &self.embedding;
        if e.window_len == 0 || e.d_embed == 0 || e.heads == 0 || e.d_model % e.heads != 0 {
            return Err(Error::InvalidArgument(
                "embedding needs window_len, d_embed ≥ 1 and d_model divisible by heads".into(),
            ));
        }
        if self.poi.hidden == 0 || self.poi.layers == 0 {
            return Err(Error::InvalidArgument("poi model needs hidden, layers ≥ 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// The trainable parts of the cascade and the parameters they share.
#[derive(Debug, Clone)]
pub struct CascadeModels {
    pub embedding: EmbeddingModel,
    pub poi: PoiTypeModel,
    pub duration: DurationModel,
}

impl CascadeModels {
    /// Builds every sub-model with parameters drawn from `seed`. The
    /// construction order is fixed, so a checkpoint can be restored into
    /// a fresh build.
    pub fn build(config: &PipelineConfig, k: usize) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.training.seed);
        let mut store = ParamStore::new();
        let f = k + 2;
        let d_embed = config.embedding.d_embed;
        let embedding = EmbeddingModel::new(&mut store, &mut rng, f, &config.embedding);
        let poi = PoiTypeModel::new(&mut store, &mut rng, d_embed, k, &config.poi);
        let duration = DurationModel::new(&mut store, &mut rng, d_embed, k, &config.duration);
        Ok((Self { embedding, poi, duration }, store))
    }

    pub fn d_embed(&self) -> usize {
        self.embedding.embed_width()
    }
}

/// One encoded training window.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedWindow {
    pub agent_id: u64,
    /// `n × (K+2)` encoded staypoints.
    pub body: Matrix,
    pub times: Vec<f64>,
    pub pois: Vec<usize>,
    pub durations: Vec<f64>,
}

impl EncodedWindow {
    pub fn new(agent_id: u64, staypoints: &[Staypoint], stats: &NormalizationStats) -> Result<Self> {
        if staypoints.is_empty() {
            return Err(Error::InvalidArgument("empty window".into()));
        }
        let encoded = staypoints
            .iter()
            .map(|sp| encode_staypoint(sp, stats))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<Vec<f64>> = encoded.iter().map(|e| e.values().to_vec()).collect();
        Ok(Self {
            agent_id,
            body: Matrix::from_rows(&rows),
            times: encoded.iter().map(|e| e.time()).collect(),
            pois: encoded.iter().map(|e| e.poi_index()).collect(),
            durations: encoded.iter().map(|e| e.duration()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Windows every agent's sequence; order follows agent id then time.
pub fn encode_windows(
    data: &MobilityDataset,
    stats: &NormalizationStats,
    window_len: usize,
) -> Result<Vec<EncodedWindow>> {
    let mut out = Vec::new();
    for (id, seq) in data.agents() {
        for r in window_ranges(seq.len(), window_len) {
            out.push(EncodedWindow::new(*id, &seq.staypoints[r], stats)?);
        }
    }
    Ok(out)
}

/// Which terms enter the loss and how `h` is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub reconstruction: bool,
    pub poi: bool,
    pub duration: bool,
    pub embedding: bool,
    /// Detach `h` from the encoder (heads only).
    pub frozen_embedding: bool,
}

impl LossTerms {
    pub fn from_config(c: &TrainingConfig) -> Self {
        Self {
            reconstruction: c.use_embedding,
            poi: c.use_poi,
            duration: c.use_duration,
            embedding: c.use_embedding,
            frozen_embedding: false,
        }
    }
}

/// Per-window raw loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WindowLoss {
    /// `Σ‖E_i − Ê_i‖²` over the window.
    pub sum_squares: f64,
    pub poi_nll: f64,
    pub duration_nll: f64,
    pub staypoints: usize,
}

struct WindowNodes {
    sum_squares: Option<Var>,
    poi: Option<Var>,
    duration: Option<Var>,
}

fn window_graph(
    models: &CascadeModels,
    g: &mut Graph<'_>,
    w: &EncodedWindow,
    terms: LossTerms,
) -> Result<WindowNodes> {
    let n = w.len();
    let d_embed = models.d_embed();
    let (h, latent) = if terms.embedding {
        let prefix = g.param(models.embedding.prefix_param());
        let h = models.embedding.encode_graph(g, prefix, &w.body)?;
        if terms.frozen_embedding {
            let v = g.value(h).clone();
            (g.constant(v), Some(h))
        } else {
            (h, Some(h))
        }
    } else {
        (g.constant(Matrix::zeros(1, d_embed)), None)
    };
    let sum_squares = match (terms.reconstruction, latent) {
        (true, Some(latent)) => {
            let recon = models.embedding.decode_graph(g, latent, n)?;
            let target = g.constant(w.body.clone());
            let diff = g.sub(recon, target);
            Some(g.sum_squares(diff))
        }
        _ => None,
    };
    let poi = if terms.poi {
        let f = models.poi.features_graph(g, h, &w.times, &w.pois)?;
        let logits = models.poi.logits_graph(g, f);
        Some(g.softmax_nll(logits, &w.pois, PROBABILITY_FLOOR))
    } else {
        None
    };
    let duration = if terms.duration {
        let logits = models.duration.logits_graph(g, h, &w.times, &w.pois)?;
        Some(models.duration.nll_graph(g, logits, &w.durations))
    } else {
        None
    };
    Ok(WindowNodes { sum_squares, poi, duration })
}

/// Loss of a batch, split into its two additive parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mean squared reconstruction error over every staypoint of the batch.
    pub reconstruction: f64,
    /// Summed POI and duration NLL.
    pub cascade: f64,
    pub total: f64,
}

fn breakdown(parts: &[WindowLoss], feature_width: usize, weights: [f64; 3]) -> LossBreakdown {
    let n: usize = parts.iter().map(|p| p.staypoints).sum();
    let ss: f64 = parts.iter().map(|p| p.sum_squares).sum();
    let reconstruction = weights[0] * ss / (n * feature_width) as f64;
    let cascade: f64 = parts
        .iter()
        .map(|p| weights[1] * p.poi_nll + weights[2] * p.duration_nll)
        .sum();
    LossBreakdown {
        reconstruction,
        cascade,
        total: reconstruction + cascade,
    }
}

/// Per-window loss terms without gradients.
pub fn window_losses(
    models: &CascadeModels,
    store: &ParamStore,
    batch: &[EncodedWindow],
    terms: LossTerms,
) -> Result<Vec<WindowLoss>> {
    batch
        .iter()
        .map(|w| {
            let mut g = Graph::new(store);
            let nodes = window_graph(models, &mut g, w, terms)?;
            Ok(WindowLoss {
                sum_squares: nodes.sum_squares.map_or(0.0, |v| g.scalar(v)),
                poi_nll: nodes.poi.map_or(0.0, |v| g.scalar(v)),
                duration_nll: nodes.duration.map_or(0.0, |v| g.scalar(v)),
                staypoints: w.len(),
            })
        })
        .collect()
}

/// `−Σ [ln P(c | t, h) + ln P(d | c, t, h)]` over every staypoint in the batch,
/// built from the standalone NLL functions.
pub fn cascade_loss(
    models: &CascadeModels,
    store: &ParamStore,
    batch: &[EncodedWindow],
    terms: LossTerms,
) -> Result<f64> {
    let mut total = 0.0;
    for w in batch {
        let h = window_embedding(models, store, w, terms)?;
        if terms.poi {
            let dists = models.poi.sequence_distributions(store, &h, &w.times, &w.pois)?;
            for (d, &c) in dists.iter().zip(&w.pois) {
                total += poi_nll(d, c)?;
            }
        }
        if terms.duration {
            let mixtures = models.duration.mixtures(store, &h, &w.times, &w.pois)?;
            for (gm, &d) in mixtures.iter().zip(&w.durations) {
                total += duration_nll(gm, d);
            }
        }
    }
    Ok(total)
}

fn window_embedding(
    models: &CascadeModels,
    store: &ParamStore,
    w: &EncodedWindow,
    terms: LossTerms,
) -> Result<AgentEmbedding> {
    if !terms.embedding {
        return Ok(AgentEmbedding::zeros(models.d_embed()));
    }
    let mut g = Graph::new(store);
    let prefix = g.param(models.embedding.prefix_param());
    let h = models.embedding.encode_graph(&mut g, prefix, &w.body)?;
    Ok(AgentEmbedding(g.value(h).data().to_vec()))
}

/// Batch reconstruction loss from the standalone reconstruction functions.
pub fn batch_reconstruction_loss(
    models: &CascadeModels,
    store: &ParamStore,
    batch: &[EncodedWindow],
    terms: LossTerms,
) -> Result<f64> {
    if !terms.reconstruction || !terms.embedding {
        return Ok(0.0);
    }
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for w in batch {
        let h = window_embedding(models, store, w, terms)?;
        outputs.extend(models.embedding.reconstruct(store, &h, w.len())?);
        inputs.extend(w.body.to_rows());
    }
    reconstruction_loss(&inputs, &outputs)
}

/// `L_ae + L_f` on one batch.
pub fn total_loss(
    models: &CascadeModels,
    store: &ParamStore,
    batch: &[EncodedWindow],
    terms: LossTerms,
) -> Result<LossBreakdown> {
    let parts = window_losses(models, store, batch, terms)?;
    Ok(breakdown(&parts, models.embedding.feature_width(), [1.0; 3]))
}

/// One optimizer step's record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub phase: usize,
    pub epoch: usize,
    pub batch: usize,
    pub windows: usize,
    pub staypoints: usize,
    pub l_ae: f64,
    pub l_f: f64,
    pub l_total: f64,
    /// Sum of the per-window objectives actually differentiated.
    pub objective: f64,
    /// Largest `|Σp − 1|` over every softmax output of the batch.
    pub softmax_deviation: f64,
}

/// Epoch means of the batch losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: usize,
    pub epoch: usize,
    pub l_ae: f64,
    pub l_f: f64,
    pub l_total: f64,
    pub softmax_deviation: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub batches: Vec<BatchRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("record serializes") + "\n")
            .collect()
    }

    pub fn max_softmax_deviation(&self) -> f64 {
        self.batches.iter().map(|b| b.softmax_deviation).fold(0.0, f64::max)
    }
}

/// Everything needed to score new data.
#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub config: PipelineConfig,
    pub models: CascadeModels,
    pub store: ParamStore,
    pub arrival: ArrivalTimeModel,
    pub stats: NormalizationStats,
    pub agent_embeddings: BTreeMap<u64, AgentEmbedding>,
}

impl TrainedPipeline {
    /// Embedding used at scoring time: the agent's training mean, or zeros
    /// for cold-start agents and when embeddings are disabled.
    pub fn embedding_for(&self, agent_id: u64) -> AgentEmbedding {
        if !self.config.training.use_embedding {
            return AgentEmbedding::zeros(self.models.d_embed());
        }
        self.agent_embeddings
            .get(&agent_id)
            .cloned()
            .unwrap_or_else(|| AgentEmbedding::zeros(self.models.d_embed()))
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub pipeline: TrainedPipeline,
    pub log: TrainingLog,
}

fn run_batch(
    models: &CascadeModels,
    store: &ParamStore,
    batch: &[&EncodedWindow],
    terms: LossTerms,
    weights: [f64; 3],
) -> Result<(Gradients, Vec<WindowLoss>, f64, f64)> {
    let n_batch: usize = batch.iter().map(|w| w.len()).sum();
    let f = models.embedding.feature_width();
    let ae_scale = weights[0] / (n_batch * f) as f64;
    let per_window: Vec<Result<(Gradients, WindowLoss, f64, f64)>> = batch
        .par_iter()
        .map(|w| {
            let mut g = Graph::new(store);
            let nodes = window_graph(models, &mut g, w, terms)?;
            let mut parts = Vec::new();
            if let Some(v) = nodes.sum_squares {
                parts.push(g.scale(v, ae_scale));
            }
            if let Some(v) = nodes.poi {
                parts.push(g.scale(v, weights[1]));
            }
            if let Some(v) = nodes.duration {
                parts.push(g.scale(v, weights[2]));
            }
            let loss = WindowLoss {
                sum_squares: nodes.sum_squares.map_or(0.0, |v| g.scalar(v)),
                poi_nll: nodes.poi.map_or(0.0, |v| g.scalar(v)),
                duration_nll: nodes.duration.map_or(0.0, |v| g.scalar(v)),
                staypoints: w.len(),
            };
            let Some(&first) = parts.first() else {
                return Ok((Gradients::empty(store.len()), loss, 0.0, g.softmax_deviation()));
            };
            let objective = parts[1..].iter().fold(first, |acc, v| g.add(acc, *v));
            let value = g.scalar(objective);
            Ok((g.backward(objective), loss, value, g.softmax_deviation()))
        })
        .collect();
    let mut grads = Gradients::empty(store.len());
    let mut losses = Vec::with_capacity(batch.len());
    let mut objective = 0.0;
    let mut deviation: f64 = 0.0;
    for r in per_window {
        let (gw, lw, ow, dw) = r?;
        grads.merge(&gw);
        losses.push(lw);
        objective += ow;
        deviation = deviation.max(dw);
    }
    Ok((grads, losses, objective, deviation))
}

#[allow(clippy::too_many_arguments)]
fn optimize(
    models: &CascadeModels,
    store: &mut ParamStore,
    windows: &[EncodedWindow],
    config: &TrainingConfig,
    terms: LossTerms,
    phase: usize,
    rng: &mut ChaCha8Rng,
    log: &mut TrainingLog,
) -> Result<()> {
    if !(terms.reconstruction || terms.poi || terms.duration) {
        return Ok(());
    }
    let weights = [config.weight_reconstruction, config.weight_poi, config.weight_duration];
    let f = models.embedding.feature_width();
    let mut adam = Adam::new(config.adam(), store);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut sums = [0.0; 3];
        let mut epoch_dev: f64 = 0.0;
        let mut count = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&EncodedWindow> = chunk.iter().map(|&i| &windows[i]).collect();
            let (grads, losses, objective, deviation) = run_batch(models, store, &batch, terms, weights)?;
            let bd = breakdown(&losses, f, weights);
            if !bd.total.is_finite() || !objective.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!(
                        "l_ae={} l_f={} gradient norm={}",
                        bd.reconstruction,
                        bd.cascade,
                        grads.global_norm()
                    ),
                });
            }
            adam.step(store, &grads);
            if !store.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: "non-finite parameter after update".into(),
                });
            }
            log.batches.push(BatchRecord {
                phase,
                epoch,
                batch: b,
                windows: batch.len(),
                staypoints: losses.iter().map(|l| l.staypoints).sum(),
                l_ae: bd.reconstruction,
                l_f: bd.cascade,
                l_total: bd.total,
                objective,
                softmax_deviation: deviation,
            });
            sums[0] += bd.reconstruction;
            sums[1] += bd.cascade;
            sums[2] += bd.total;
            epoch_dev = epoch_dev.max(deviation);
            count += 1;
        }
        let c = count.max(1) as f64;
        log.epochs.push(EpochRecord {
            phase,
            epoch,
            l_ae: sums[0] / c,
            l_f: sums[1] / c,
            l_total: sums[2] / c,
            softmax_deviation: epoch_dev,
        });
    }
    Ok(())
}

/// Fits normalization, optimizes the cascade, fits the arrival KDEs and
/// freezes per-agent embeddings.
pub fn train(train_set: &MobilityDataset, config: &PipelineConfig) -> Result<TrainingOutcome> {
    config.validate()?;
    let (start, _) = train_set.time_range().ok_or(Error::EmptyDataset)?;
    let stats = fit_normalization(train_set, monday_anchor_utc(start))?;
    let (models, mut store) = CascadeModels::build(config, stats.k())?;
    let windows = encode_windows(train_set, &stats, config.embedding.window_len)?;
    let durations: Vec<f64> = windows.iter().flat_map(|w| w.durations.iter().copied()).collect();
    models.duration.init_components(&mut store, &durations)?;

    let tc = &config.training;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    rng.set_stream(1);
    let mut log = TrainingLog::default();
    let full = LossTerms::from_config(tc);
    if tc.staged && tc.use_embedding {
        let ae_only = LossTerms { poi: false, duration: false, ..full };
        optimize(&models, &mut store, &windows, tc, ae_only, 0, &mut rng, &mut log)?;
        let heads = LossTerms { reconstruction: false, frozen_embedding: true, ..full };
        optimize(&models, &mut store, &windows, tc, heads, 1, &mut rng, &mut log)?;
    } else {
        optimize(&models, &mut store, &windows, tc, full, 0, &mut rng, &mut log)?;
    }

    let arrival = fit_arrival_kde(train_set, stats.week_anchor)?;
    let agent_embeddings = if tc.use_embedding {
        compute_agent_embeddings(&models.embedding, &store, train_set, &stats)?
    } else {
        train_set
            .agent_ids()
            .map(|id| (id, AgentEmbedding::zeros(models.d_embed())))
            .collect()
    };
    Ok(TrainingOutcome {
        pipeline: TrainedPipeline {
            config: config.clone(),
            models,
            store,
            arrival,
            stats,
            agent_embeddings,
        },
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SplitTag;

    const ANCHOR: i64 = 1_704_067_200;

    fn tiny_config() -> PipelineConfig {
        PipelineConfig {
            training: TrainingConfig { seed: 3, epochs: 3, batch_size: 2, learning_rate: 1e-2, ..Default::default() },
            embedding: EmbeddingConfig {
                d_model: 8,
                encoder_layers: 1,
                decoder_layers: 1,
                heads: 2,
                ff_width: 8,
                d_embed: 4,
                window_len: 6,
            },
            poi: PoiConfig { hidden: 6, layers: 1 },
            duration: DurationConfig { components: 3, d_model: 8, heads: 2, ff_width: 8, ..Default::default() },
        }
    }

    fn toy() -> MobilityDataset {
        let mut sps = Vec::new();
        for agent in 0..3u64 {
            for day in 0..5i64 {
                let base = ANCHOR + day * 86_400;
                for (hour, poi, dur) in [(8, "work", 28_800.0), (18, "home", 50_000.0)] {
                    sps.push(Staypoint {
                        agent_id: agent,
                        arrival_epoch: base + hour * 3600 + agent as i64 * 600,
                        duration: dur + agent as f64 * 100.0,
                        poi_type: poi.into(),
                        location: None,
                        label: None,
                    });
                }
            }
        }
        MobilityDataset::from_staypoints(sps, vec!["home".into(), "work".into()], SplitTag::Train).unwrap()
    }

    #[test]
    fn breakdown_is_sum() {
        let parts = [
            WindowLoss { sum_squares: 1.0, poi_nll: 0.5, duration_nll: 0.25, staypoints: 1 },
            WindowLoss { sum_squares: 0.0, poi_nll: 0.0, duration_nll: 0.0, staypoints: 1 },
        ];
        let b = breakdown(&parts, 2, [1.0; 3]);
        assert_eq!(b.reconstruction, 0.25);
        assert_eq!(b.cascade, 0.75);
        assert_eq!(b.total, 1.0);
    }

    #[test]
    fn training_runs_and_is_deterministic() {
        let ds = toy();
        let cfg = tiny_config();
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.pipeline.store.flatten(), b.pipeline.store.flatten());
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.epochs.len(), 3);
        assert_eq!(a.pipeline.agent_embeddings.len(), 3);
        for rec in &a.log.batches {
            assert!((rec.l_total - (rec.l_ae + rec.l_f)).abs() <= 1e-12 * rec.l_total.abs().max(1.0));
            assert!((rec.objective - rec.l_total).abs() <= 1e-9 * rec.l_total.abs().max(1.0));
        }
    }

    #[test]
    fn standalone_losses_match_tape() {
        let ds = toy();
        let cfg = tiny_config();
        let out = train(&ds, &cfg).unwrap();
        let p = &out.pipeline;
        let windows = encode_windows(&ds, &p.stats, 6).unwrap();
        let terms = LossTerms::from_config(&cfg.training);
        let tape = total_loss(&p.models, &p.store, &windows, terms).unwrap();
        let rec = batch_reconstruction_loss(&p.models, &p.store, &windows, terms).unwrap();
        let cas = cascade_loss(&p.models, &p.store, &windows, terms).unwrap();
        assert!((tape.reconstruction - rec).abs() < 1e-10);
        assert!((tape.cascade - cas).abs() < 1e-8 * cas.abs().max(1.0));
        assert_eq!(tape.total, tape.reconstruction + tape.cascade);
    }

    #[test]
    fn ablations_drop_terms() {
        let ds = toy();
        let mut cfg = tiny_config();
        cfg.training.use_poi = false;
        cfg.training.use_embedding = false;
        let out = train(&ds, &cfg).unwrap();
        assert!(out.log.batches.iter().all(|b| b.l_ae == 0.0));
        let windows = encode_windows(&ds, &out.pipeline.stats, 6).unwrap();
        let terms = LossTerms::from_config(&cfg.training);
        let parts = window_losses(&out.pipeline.models, &out.pipeline.store, &windows, terms).unwrap();
        assert!(parts.iter().all(|p| p.poi_nll == 0.0 && p.sum_squares == 0.0 && p.duration_nll != 0.0));
        assert!(out.pipeline.embedding_for(0).values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn staged_training_logs_two_phases() {
        let mut cfg = tiny_config();
        cfg.training.staged = true;
        let out = train(&toy(), &cfg).unwrap();
        assert!(out.log.epochs.iter().any(|e| e.phase == 0));
        assert!(out.log.epochs.iter().any(|e| e.phase == 1 && e.l_ae == 0.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config();
        cfg.training.epochs = 0;
        assert!(train(&toy(), &cfg).is_err());
        let mut cfg = tiny_config();
        cfg.training.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        assert_eq!(tiny_config().hash(), tiny_config().hash());
        assert_ne!(tiny_config().hash(), PipelineConfig::default().hash());
    }
}
