//! Per-agent circular kernel density estimate of arrival time-of-week.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::INV_SQRT_2PI;
use crate::dataset::MobilityDataset;
use crate::encoding::{time_of_week, HOURS_PER_WEEK};
use crate::error::{Error, Result};
use crate::clip_probability;

/// Lower bound on the kernel bandwidth, hours.
pub const BANDWIDTH_FLOOR_HOURS: f64 = 0.25;

/// Bin width turning a density (per hour) into a probability.
pub const ARRIVAL_BIN_HOURS: f64 = 1.0;

/// Kernels further than this many bandwidths from `t` are skipped by the
/// fast evaluator. `φ(12)` is below `1e-31`.
const CUTOFF_BANDWIDTHS: f64 = 12.0;

/// Silverman's rule `1.06 · std · n^(-1/5)` with the population std,
/// floored at [`BANDWIDTH_FLOOR_HOURS`].
pub fn silverman_bandwidth(times: &[f64]) -> f64 {
    let n = times.len();
    if n < 2 {
        return BANDWIDTH_FLOOR_HOURS;
    }
    let nf = n as f64;
    let mean = times.iter().sum::<f64>() / nf;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / nf;
    (1.06 * var.sqrt() * nf.powf(-0.2)).max(BANDWIDTH_FLOOR_HOURS)
}

/// Equal-weight Gaussian kernels on the week circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSet {
    centers: Vec<f64>,
    bandwidth: f64,
}

impl KernelSet {
    /// Fits centers at `times` with the Silverman bandwidth.
    pub fn fit(times: Vec<f64>) -> Result<Self> {
        let bw = silverman_bandwidth(&times);
        Self::with_bandwidth(times, bw)
    }

    pub fn with_bandwidth(mut centers: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::InvalidArgument("kernel set needs at least one center".into()));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if let Some(c) = centers.iter().find(|c| !(0.0..HOURS_PER_WEEK).contains(*c)) {
            return Err(Error::OutOfRange(format!("kernel center {c} outside [0, 168)")));
        }
        centers.sort_by(f64::total_cmp);
        Ok(Self { centers, bandwidth })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Density per hour at `t`, each kernel evaluated at `t` and `t ± 168`.
    /// Only kernels within the cutoff window are summed.
    pub fn density(&self, t: f64) -> f64 {
        let s = self.bandwidth;
        let reach = CUTOFF_BANDWIDTHS * s;
        let mut total = 0.0;
        for shift in [-HOURS_PER_WEEK, 0.0, HOURS_PER_WEEK] {
            let target = t + shift;
            let lo = self.centers.partition_point(|c| *c < target - reach);
            let hi = self.centers.partition_point(|c| *c <= target + reach);
            for c in &self.centers[lo..hi] {
                let z = (target - c) / s;
                total += (-0.5 * z * z).exp();
            }
        }
        total * INV_SQRT_2PI / (s * self.centers.len() as f64)
    }

    /// Direct sum over every kernel and both wrap images.
    pub fn density_naive(&self, t: f64) -> f64 {
        let s = self.bandwidth;
        let n = self.centers.len() as f64;
        self.centers
            .iter()
            .map(|c| {
                [-HOURS_PER_WEEK, 0.0, HOURS_PER_WEEK]
                    .iter()
                    .map(|shift| {
                        let z = (t + shift - c) / s;
                        INV_SQRT_2PI * (-0.5 * z * z).exp() / s
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n
    }

    /// `clip(density(t) · 1 h)`.
    pub fn probability(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(clip_probability(self.density(t) * ARRIVAL_BIN_HOURS))
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..HOURS_PER_WEEK).contains(&t) {
        Ok(())
    } else {
        Err(Error::OutOfRange(format!("time-of-week {t} outside [0, 168)")))
    }
}

/// Per-agent KDEs plus a population KDE for agents without training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalTimeModel {
    agents: BTreeMap<u64, KernelSet>,
    population: KernelSet,
}

impl ArrivalTimeModel {
    pub fn new(agents: BTreeMap<u64, KernelSet>, population: KernelSet) -> Self {
        Self { agents, population }
    }

    pub fn agent(&self, agent_id: u64) -> Option<&KernelSet> {
        self.agents.get(&agent_id)
    }

    pub fn agents(&self) -> &BTreeMap<u64, KernelSet> {
        &self.agents
    }

    pub fn population(&self) -> &KernelSet {
        &self.population
    }

    /// The agent's own kernels, or the population fallback.
    pub fn kernels_for(&self, agent_id: u64) -> &KernelSet {
        self.agents.get(&agent_id).unwrap_or(&self.population)
    }

    /// Clipped arrival probability for `t` hours-of-week.
    pub fn arrival_probability(&self, agent_id: u64, t: f64) -> Result<f64> {
        self.kernels_for(agent_id).probability(t)
    }

    pub fn population_probability(&self, t: f64) -> Result<f64> {
        self.population.probability(t)
    }
}

/// Fits one KDE per training agent and the pooled population KDE.
pub fn fit_arrival_kde(train: &MobilityDataset, week_anchor: i64) -> Result<ArrivalTimeModel> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut agents = BTreeMap::new();
    let mut pooled = Vec::with_capacity(train.staypoint_count());
    for (id, seq) in train.agents() {
        if seq.is_empty() {
            continue;
        }
        let times: Vec<f64> = seq
            .staypoints
            .iter()
            .map(|sp| time_of_week(sp.arrival_epoch, week_anchor))
            .collect();
        pooled.extend_from_slice(&times);
        agents.insert(*id, KernelSet::fit(times)?);
    }
    Ok(ArrivalTimeModel::new(agents, KernelSet::fit(pooled)?))
}
