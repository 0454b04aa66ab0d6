//! Transformer autoencoder that compresses an encoded staypoint window into
//! a latent agent embedding and reconstructs the window from it.
//!
//! The encoder reads `[E_0, E_1, …, E_n]` (projected, plus sinusoidal
//! positions) and the latent is the projection of its output at position 0.
//! The decoder uses the positions `PE[1..=n]` as queries and the projected
//! latent as the single key/value token.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AttentionLayout, Graph, Matrix, ParamId, ParamStore, Var};
use crate::dataset::{MobilityDataset, Staypoint};
use crate::encoding::{encode_sequence, EncodedSequence, NormalizationStats};
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, DecoderBlock, EncoderBlock, Linear};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ff_width: usize,
    /// Width of the agent embedding `h`.
    pub d_embed: usize,
    /// Staypoints per window (`L`).
    pub window_len: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 4,
            ff_width: 128,
            d_embed: 32,
            window_len: 64,
        }
    }
}

/// Latent summary of one agent's behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEmbedding(pub Vec<f64>);

impl AgentEmbedding {
    pub fn zeros(width: usize) -> Self {
        Self(vec![0.0; width])
    }

    pub fn width(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Element-wise mean. Panics on an empty slice.
    pub fn mean(items: &[AgentEmbedding]) -> AgentEmbedding {
        let width = items[0].width();
        let mut acc = vec![0.0; width];
        for e in items {
            for (a, v) in acc.iter_mut().zip(&e.0) {
                *a += v;
            }
        }
        let n = items.len() as f64;
        AgentEmbedding(acc.into_iter().map(|v| v / n).collect())
    }

    pub fn as_row(&self) -> Matrix {
        Matrix::row_vector(self.0.clone())
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    config: EmbeddingConfig,
    feature_width: usize,
    input: Linear,
    prefix: ParamId,
    positions: Matrix,
    encoder: Vec<EncoderBlock>,
    to_latent: Linear,
    from_latent: Linear,
    decoder: Vec<DecoderBlock>,
    output: Linear,
}

impl EmbeddingModel {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        feature_width: usize,
        config: &EmbeddingConfig,
    ) -> Self {
        let c = config;
        let input = Linear::new(store, rng, "ae.input", feature_width, c.d_model);
        let prefix = store.add_normal("ae.prefix", 1, feature_width, rng);
        let encoder = (0..c.encoder_layers)
            .map(|i| EncoderBlock::new(store, rng, &format!("ae.enc{i}"), c.d_model, c.heads, c.ff_width))
            .collect();
        let to_latent = Linear::new(store, rng, "ae.to_latent", c.d_model, c.d_embed);
        let from_latent = Linear::new(store, rng, "ae.from_latent", c.d_embed, c.d_model);
        let decoder = (0..c.decoder_layers)
            .map(|i| DecoderBlock::new(store, rng, &format!("ae.dec{i}"), c.d_model, c.heads, c.ff_width))
            .collect();
        let output = Linear::new(store, rng, "ae.output", c.d_model, feature_width);
        Self {
            config: c.clone(),
            feature_width,
            input,
            prefix,
            positions: sinusoidal_positions(c.window_len + 1, c.d_model),
            encoder,
            to_latent,
            from_latent,
            decoder,
            output,
        }
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn embed_width(&self) -> usize {
        self.config.d_embed
    }

    pub fn prefix_param(&self) -> ParamId {
        self.prefix
    }

    /// Current value of the learnable prefix token `E_0`.
    pub fn prefix_values<'a>(&self, store: &'a ParamStore) -> &'a [f64] {
        store.get(self.prefix).data()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.config.window_len {
            return Err(Error::OutOfRange(format!(
                "sequence length {n} outside 1..={}",
                self.config.window_len
            )));
        }
        Ok(())
    }

    /// Encoder on the tape; returns `h` as a `1 × d_embed` node.
    pub fn encode_graph(&self, g: &mut Graph<'_>, prefix: Var, body: &Matrix) -> Result<Var> {
        let n = body.rows();
        self.check_len(n)?;
        if body.cols() != self.feature_width || g.value(prefix).shape() != (1, self.feature_width) {
            return Err(Error::Shape(format!(
                "encoded width {} != model width {}",
                body.cols(),
                self.feature_width
            )));
        }
        let body = g.constant(body.clone());
        let seq = g.concat_rows(&[prefix, body]);
        let x = self.input.forward(g, seq);
        let pe = g.constant(self.positions.slice_rows(0, n + 1));
        let mut x = g.add(x, pe);
        for block in &self.encoder {
            x = block.forward(g, x, AttentionLayout::Dense);
        }
        let first = g.slice_rows(x, 0, 1);
        Ok(self.to_latent.forward(g, first))
    }

    /// Decoder on the tape; returns the `n × (K+2)` reconstruction.
    pub fn decode_graph(&self, g: &mut Graph<'_>, h: Var, n: usize) -> Result<Var> {
        self.check_len(n)?;
        if g.value(h).shape() != (1, self.config.d_embed) {
            return Err(Error::Shape("latent width mismatch".into()));
        }
        let memory = self.from_latent.forward(g, h);
        let mut x = g.constant(self.positions.slice_rows(1, n));
        for block in &self.decoder {
            x = block.forward(g, x, memory);
        }
        Ok(self.output.forward(g, x))
    }

    /// Latent embedding of one encoded window.
    pub fn embed(&self, store: &ParamStore, seq: &EncodedSequence) -> Result<AgentEmbedding> {
        if seq.width() != self.feature_width {
            return Err(Error::Shape(format!(
                "encoded width {} != model width {}",
                seq.width(),
                self.feature_width
            )));
        }
        let mut g = Graph::new(store);
        let prefix = g.constant(Matrix::row_vector(seq.prefix.clone()));
        let h = self.encode_graph(&mut g, prefix, &seq.body_matrix())?;
        Ok(AgentEmbedding(g.value(h).data().to_vec()))
    }

    /// Decodes `n` encoded staypoints from `h`.
    pub fn reconstruct(&self, store: &ParamStore, h: &AgentEmbedding, n: usize) -> Result<Vec<Vec<f64>>> {
        if h.width() != self.config.d_embed {
            return Err(Error::Shape(format!(
                "embedding width {} != {}",
                h.width(),
                self.config.d_embed
            )));
        }
        let mut g = Graph::new(store);
        let hv = g.constant(h.as_row());
        let out = self.decode_graph(&mut g, hv, n)?;
        Ok(g.value(out).to_rows())
    }

    /// Splits a sequence into consecutive non-overlapping windows of at most
    /// `window_len` staypoints (see [`window_ranges`]).
    pub fn windows<'a>(&self, staypoints: &'a [Staypoint]) -> Vec<&'a [Staypoint]> {
        window_ranges(staypoints.len(), self.config.window_len)
            .into_iter()
            .map(|r| &staypoints[r])
            .collect()
    }
}

/// `⌈n / max_len⌉` consecutive ranges covering `0..n` whose lengths differ by
/// at most one.
pub fn window_ranges(n: usize, max_len: usize) -> Vec<Range<usize>> {
    assert!(max_len > 0, "window length must be positive");
    if n == 0 {
        return Vec::new();
    }
    let count = n.div_ceil(max_len);
    let (base, extra) = (n / count, n % count);
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for i in 0..count {
        let len = base + usize::from(i < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// `Σ‖E_i − Ê_i‖² / (n·|E|)`.
pub fn reconstruction_loss(body: &[Vec<f64>], recon: &[Vec<f64>]) -> Result<f64> {
    if body.len() != recon.len() || body.is_empty() {
        return Err(Error::Shape(format!(
            "reconstruction length {} vs input {}",
            recon.len(),
            body.len()
        )));
    }
    let width = body[0].len();
    let mut total = 0.0;
    for (e, r) in body.iter().zip(recon) {
        if e.len() != width || r.len() != width {
            return Err(Error::Shape("reconstruction width mismatch".into()));
        }
        total += e.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / (body.len() * width) as f64)
}

/// Per-agent embedding: mean over the embeddings of the agent's training
/// windows.
pub fn compute_agent_embeddings(
    model: &EmbeddingModel,
    store: &ParamStore,
    train: &MobilityDataset,
    stats: &NormalizationStats,
) -> Result<BTreeMap<u64, AgentEmbedding>> {
    let prefix = model.prefix_values(store).to_vec();
    let mut out = BTreeMap::new();
    for (id, seq) in train.agents() {
        if seq.is_empty() {
            continue;
        }
        let embeddings = model
            .windows(&seq.staypoints)
            .into_iter()
            .map(|w| {
                let enc = encode_sequence(w, stats, &prefix)?;
                model.embed(store, &enc)
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(*id, AgentEmbedding::mean(&embeddings));
    }
    Ok(out)
}
