//! Versioned binary checkpoint with a JSON hyperparameter sidecar.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` metadata length, the
//! metadata as JSON, then every parameter as little-endian `f64` in store
//! order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent_embedding::AgentEmbedding;
use crate::arrival_model::ArrivalTimeModel;
use crate::encoding::NormalizationStats;
use crate::error::{Error, Result};
use crate::training::{hex, CascadeModels, PipelineConfig, TrainedPipeline};

const MAGIC: &[u8; 8] = b"BAYESIC\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamShape {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    config: PipelineConfig,
    config_hash: String,
    stats: NormalizationStats,
    arrival: ArrivalTimeModel,
    agent_embeddings: BTreeMap<u64, AgentEmbedding>,
    params: Vec<ParamShape>,
}

/// Hyperparameter sidecar written next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub config_hash: String,
    pub checkpoint_sha256: String,
    pub hyperparameters: PipelineConfig,
    pub vocabulary: Vec<String>,
    pub parameter_count: usize,
    pub agents: usize,
}

pub fn to_bytes(p: &TrainedPipeline) -> Result<Vec<u8>> {
    let meta = Metadata {
        config: p.config.clone(),
        config_hash: p.config.hash(),
        stats: p.stats.clone(),
        arrival: p.arrival.clone(),
        agent_embeddings: p.agent_embeddings.clone(),
        params: p
            .store
            .names()
            .iter()
            .zip(p.store.values())
            .map(|(name, m)| ParamShape { name: name.clone(), rows: m.rows(), cols: m.cols() })
            .collect(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * p.store.scalar_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for m in p.store.values() {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<TrainedPipeline> {
    let cur = &mut bytes;
    if take(cur, 8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(cur, 4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(take(cur, 8)?.try_into().expect("8 bytes")) as usize;
    let meta: Metadata = serde_json::from_slice(take(cur, len)?)?;
    if meta.config.hash() != meta.config_hash {
        return Err(Error::Checkpoint("config hash mismatch".into()));
    }
    let (models, mut store) = CascadeModels::build(&meta.config, meta.stats.k())?;
    if store.len() != meta.params.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model expects {}",
            meta.params.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for (id, shape) in ids.into_iter().zip(&meta.params) {
        let m = store.get(id);
        if store.name(id) != shape.name || m.shape() != (shape.rows, shape.cols) {
            return Err(Error::Checkpoint(format!("parameter `{}` does not match the model", shape.name)));
        }
        let raw = take(cur, 8 * shape.rows * shape.cols)?;
        let dst = store.get_mut(id).data_mut();
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if !cur.is_empty() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(TrainedPipeline {
        config: meta.config,
        models,
        store,
        arrival: meta.arrival,
        stats: meta.stats,
        agent_embeddings: meta.agent_embeddings,
    })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the checkpoint and its sidecar; returns the sidecar.
pub fn save_checkpoint(path: impl AsRef<Path>, p: &TrainedPipeline) -> Result<Sidecar> {
    let path = path.as_ref();
    let bytes = to_bytes(p)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        config_hash: p.config.hash(),
        checkpoint_sha256: hex(&Sha256::digest(&bytes)),
        hyperparameters: p.config.clone(),
        vocabulary: p.stats.vocabulary.clone(),
        parameter_count: p.store.scalar_count(),
        agents: p.agent_embeddings.len(),
    };
    let sp = sidecar_path(path);
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(&sp, json + "\n").map_err(|e| Error::io(&sp, e))?;
    Ok(sidecar)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedPipeline> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
