//! Joint-probability assembly and anomaly scores.
//!
//! Each staypoint's score is `s = 1 − p_arrival · p_poi · p_duration`, every
//! factor clipped to `[1e-9, 1]`. An agent's score is its largest staypoint
//! score.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, MobilityDataset, Staypoint};
use crate::duration_model::{duration_nll, duration_probability};
use crate::encoding::encode_staypoint;
use crate::error::{Error, Result};
use crate::poi_model::poi_nll;
use crate::training::TrainedPipeline;
use crate::clip_probability;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub agent_id: u64,
    pub staypoint_idx: usize,
    pub arrival_epoch: i64,
    pub p_arrival: f64,
    pub p_poi: f64,
    pub p_duration: f64,
    pub joint: f64,
    pub score: f64,
    /// Summed POI and duration NLL of the enabled heads (training objective
    /// per staypoint).
    #[serde(skip)]
    pub cascade_nll: f64,
    #[serde(skip)]
    pub label: Option<Label>,
}

impl AnomalyRecord {
    /// Clips the three factors and derives `joint` and `score`.
    pub fn from_factors(agent_id: u64, staypoint_idx: usize, arrival_epoch: i64, factors: [f64; 3]) -> Self {
        let [p_arrival, p_poi, p_duration] = factors.map(clip_probability);
        let joint = p_arrival * p_poi * p_duration;
        Self {
            agent_id,
            staypoint_idx,
            arrival_epoch,
            p_arrival,
            p_poi,
            p_duration,
            joint,
            score: 1.0 - joint,
            cascade_nll: 0.0,
            label: None,
        }
    }
}

/// Scores an agent's staypoints in order, threading the POI model's
/// recurrent state through the whole sequence.
pub fn score_sequence(pipeline: &TrainedPipeline, agent_id: u64, staypoints: &[Staypoint]) -> Result<Vec<AnomalyRecord>> {
    if staypoints.is_empty() {
        return Ok(Vec::new());
    }
    let tc = &pipeline.config.training;
    let stats = &pipeline.stats;
    let encoded = staypoints
        .iter()
        .enumerate()
        .map(|(i, sp)| {
            encode_staypoint(sp, stats).map_err(|e| Error::Staypoint {
                agent: agent_id,
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let times: Vec<f64> = encoded.iter().map(|e| e.time()).collect();
    let pois: Vec<usize> = encoded.iter().map(|e| e.poi_index()).collect();
    let h = pipeline.embedding_for(agent_id);
    let store = &pipeline.store;
    let poi_dists = if tc.use_poi {
        Some(pipeline.models.poi.sequence_distributions(store, &h, &times, &pois)?)
    } else {
        None
    };
    let mixtures = if tc.use_duration {
        Some(pipeline.models.duration.mixtures(store, &h, &times, &pois)?)
    } else {
        None
    };
    let bin = pipeline.config.duration.bin_width;
    let mut out = Vec::with_capacity(staypoints.len());
    for (i, sp) in staypoints.iter().enumerate() {
        let wrap = |e: Error| Error::Staypoint {
            agent: agent_id,
            index: i,
            source: Box::new(e),
        };
        let p_arrival = if tc.use_arrival {
            let t = stats.time_of_week(sp.arrival_epoch);
            if tc.use_embedding {
                pipeline.arrival.arrival_probability(agent_id, t)
            } else {
                pipeline.arrival.population_probability(t)
            }
            .map_err(wrap)?
        } else {
            1.0
        };
        let mut nll = 0.0;
        let p_poi = match &poi_dists {
            Some(d) => {
                nll += poi_nll(&d[i], pois[i]).map_err(wrap)?;
                d[i].probabilities()[pois[i]]
            }
            None => 1.0,
        };
        let p_duration = match &mixtures {
            Some(m) => {
                let d = encoded[i].duration();
                nll += duration_nll(&m[i], d);
                duration_probability(&m[i], d, bin)
            }
            None => 1.0,
        };
        let mut rec = AnomalyRecord::from_factors(agent_id, i, sp.arrival_epoch, [p_arrival, p_poi, p_duration]);
        rec.cascade_nll = nll;
        rec.label = sp.label;
        out.push(rec);
    }
    Ok(out)
}

/// Scores `staypoint` after the observed `history` of the same agent.
pub fn score_staypoint(
    pipeline: &TrainedPipeline,
    agent_id: u64,
    staypoint: &Staypoint,
    history: &[Staypoint],
) -> Result<AnomalyRecord> {
    let mut seq = history.to_vec();
    seq.push(staypoint.clone());
    let mut records = score_sequence(pipeline, agent_id, &seq)?;
    Ok(records.pop().expect("one record per staypoint"))
}

/// Scores every agent (in parallel); output ordered by agent id then time.
pub fn score_dataset(pipeline: &TrainedPipeline, data: &MobilityDataset) -> Result<Vec<AnomalyRecord>> {
    let agents: Vec<_> = data.agents().iter().collect();
    let per_agent: Vec<Result<Vec<AnomalyRecord>>> = agents
        .par_iter()
        .map(|(id, seq)| score_sequence(pipeline, **id, &seq.staypoints))
        .collect();
    let mut out = Vec::with_capacity(data.staypoint_count());
    for r in per_agent {
        out.extend(r?);
    }
    Ok(out)
}

/// Largest staypoint score.
pub fn agent_score(records: &[AnomalyRecord]) -> Result<f64> {
    records
        .iter()
        .map(|r| r.score)
        .reduce(f64::max)
        .ok_or_else(|| Error::InvalidArgument("no records for agent".into()))
}

/// Max score per agent.
pub fn agent_scores(records: &[AnomalyRecord]) -> BTreeMap<u64, f64> {
    let mut out: BTreeMap<u64, f64> = BTreeMap::new();
    for r in records {
        out.entry(r.agent_id)
            .and_modify(|s| *s = s.max(r.score))
            .or_insert(r.score);
    }
    out
}

pub fn write_scores<W: Write>(writer: W, records: &[AnomalyRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

pub fn read_scores<R: Read>(reader: R) -> Result<Vec<AnomalyRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for r in rdr.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

pub fn save_scores(path: impl AsRef<Path>, records: &[AnomalyRecord]) -> Result<()> {
    let p = path.as_ref();
    let f = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
    write_scores(std::io::BufWriter::new(f), records)
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<AnomalyRecord>> {
    let p = path.as_ref();
    let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
    read_scores(std::io::BufReader::new(f))
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentScoreRow {
    agent_id: u64,
    score: f64,
}

pub fn save_agent_scores(path: impl AsRef<Path>, scores: &BTreeMap<u64, f64>) -> Result<()> {
    let p = path.as_ref();
    let f = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(f));
    for (agent_id, score) in scores {
        w.serialize(AgentScoreRow { agent_id: *agent_id, score: *score })?;
    }
    w.flush().map_err(|e| Error::io(p, e))?;
    Ok(())
}

pub fn load_agent_scores(path: impl AsRef<Path>) -> Result<BTreeMap<u64, f64>> {
    let p = path.as_ref();
    let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
    let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(f));
    let mut out = BTreeMap::new();
    for r in rdr.deserialize() {
        let row: AgentScoreRow = r?;
        out.insert(row.agent_id, row.score);
    }
    Ok(out)
}
