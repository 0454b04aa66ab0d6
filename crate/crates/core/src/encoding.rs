//! Min-max normalization and fixed-width staypoint encoding.
//!
//! An encoded staypoint is `[one-hot POI (K) ; time ; duration]`, width
//! `K + 2`. Arrival time is reduced to hours since the most recent Monday
//! 00:00 before normalization.

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::dataset::{MobilityDataset, Staypoint};
use crate::error::{Error, Result};

pub const WEEK_SECONDS: i64 = 604_800;
pub const HOURS_PER_WEEK: f64 = 168.0;

/// 1970-01-05T00:00:00Z, the first Monday after the epoch.
const FIRST_MONDAY_EPOCH: i64 = 345_600;

/// Widening applied to a degenerate min-max range.
pub const DEGENERATE_RANGE_EPS: f64 = 1e-6;

/// Latest Monday 00:00 UTC at or before `epoch`.
pub fn monday_anchor_utc(epoch: i64) -> i64 {
    FIRST_MONDAY_EPOCH + (epoch - FIRST_MONDAY_EPOCH).div_euclid(WEEK_SECONDS) * WEEK_SECONDS
}

/// Hours elapsed since the week anchor, folded into `[0, 168)`.
pub fn time_of_week(arrival_epoch: i64, week_anchor: i64) -> f64 {
    (arrival_epoch - week_anchor).rem_euclid(WEEK_SECONDS) as f64 / 3600.0
}

/// Calendar week index relative to the anchor (may be negative).
pub fn week_index(arrival_epoch: i64, week_anchor: i64) -> i64 {
    (arrival_epoch - week_anchor).div_euclid(WEEK_SECONDS)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub time_min: f64,
    pub time_max: f64,
    pub duration_min: f64,
    pub duration_max: f64,
    pub vocabulary: Vec<String>,
    pub week_anchor: i64,
}

impl NormalizationStats {
    /// Number of POI categories, `unknown` included.
    pub fn k(&self) -> usize {
        self.vocabulary.len()
    }

    /// Width of an encoded staypoint.
    pub fn feature_width(&self) -> usize {
        self.k() + 2
    }

    pub fn poi_index(&self, token: &str) -> Result<usize> {
        self.vocabulary
            .iter()
            .position(|t| t == token)
            .ok_or_else(|| Error::UnknownPoi(token.to_string()))
    }

    pub fn time_of_week(&self, arrival_epoch: i64) -> f64 {
        time_of_week(arrival_epoch, self.week_anchor)
    }

    pub fn normalize_time(&self, tow: f64) -> f64 {
        ((tow - self.time_min) / (self.time_max - self.time_min)).clamp(0.0, 1.0)
    }

    pub fn normalize_duration(&self, seconds: f64) -> f64 {
        ((seconds - self.duration_min) / (self.duration_max - self.duration_min)).clamp(0.0, 1.0)
    }

    pub fn denormalize_time(&self, x: f64) -> f64 {
        self.time_min + x * (self.time_max - self.time_min)
    }

    pub fn denormalize_duration(&self, x: f64) -> f64 {
        self.duration_min + x * (self.duration_max - self.duration_min)
    }

    fn validate(&self) -> Result<()> {
        if !(self.time_min < self.time_max) || !(self.duration_min < self.duration_max) {
            return Err(Error::InvalidArgument("degenerate normalization range".into()));
        }
        if self.vocabulary.is_empty() {
            return Err(Error::InvalidArgument("empty vocabulary".into()));
        }
        Ok(())
    }
}

fn widen(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + DEGENERATE_RANGE_EPS)
    }
}

/// Min-max statistics over every training staypoint.
pub fn fit_normalization(train: &MobilityDataset, week_anchor: i64) -> Result<NormalizationStats> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for sp in train.staypoints() {
        let t = time_of_week(sp.arrival_epoch, week_anchor);
        tmin = tmin.min(t);
        tmax = tmax.max(t);
        dmin = dmin.min(sp.duration);
        dmax = dmax.max(sp.duration);
    }
    let (time_min, time_max) = widen(tmin, tmax);
    let (duration_min, duration_max) = widen(dmin, dmax);
    let stats = NormalizationStats {
        time_min,
        time_max,
        duration_min,
        duration_max,
        vocabulary: train.poi_vocabulary().to_vec(),
        week_anchor,
    };
    stats.validate()?;
    Ok(stats)
}

/// `[one-hot (K) ; time ; duration]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedStaypoint(Vec<f64>);

impl EncodedStaypoint {
    /// Wraps a raw `[one-hot ; time ; duration]` vector.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::Shape(format!("encoded width {} < 3", values.len())));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len() - 2
    }

    pub fn poi_index(&self) -> usize {
        let k = self.k();
        self.0[..k]
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if *v > best.1 { (i, *v) } else { best })
            .0
    }

    pub fn time(&self) -> f64 {
        self.0[self.0.len() - 2]
    }

    pub fn duration(&self) -> f64 {
        self.0[self.0.len() - 1]
    }
}

pub fn encode_staypoint(sp: &Staypoint, stats: &NormalizationStats) -> Result<EncodedStaypoint> {
    let k = stats.k();
    let idx = stats.poi_index(&sp.poi_type)?;
    let mut v = vec![0.0; k + 2];
    v[idx] = 1.0;
    v[k] = stats.normalize_time(stats.time_of_week(sp.arrival_epoch));
    v[k + 1] = stats.normalize_duration(sp.duration);
    Ok(EncodedStaypoint(v))
}

/// Recovers `(poi index, hours-of-week, duration seconds)`.
pub fn decode_staypoint(e: &EncodedStaypoint, stats: &NormalizationStats) -> (usize, f64, f64) {
    (
        e.poi_index(),
        stats.denormalize_time(e.time()),
        stats.denormalize_duration(e.duration()),
    )
}

/// Prefix token followed by the encoded body.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    pub prefix: Vec<f64>,
    pub body: Vec<EncodedStaypoint>,
}

impl EncodedSequence {
    /// Body length `n` (the prefix is not counted).
    pub fn n(&self) -> usize {
        self.body.len()
    }

    /// Length including the prefix.
    pub fn len(&self) -> usize {
        self.body.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.prefix.len()
    }

    /// Body as an `n × (K+2)` matrix.
    pub fn body_matrix(&self) -> Matrix {
        let rows: Vec<Vec<f64>> = self.body.iter().map(|e| e.0.clone()).collect();
        Matrix::from_rows(&rows)
    }

    pub fn poi_indices(&self) -> Vec<usize> {
        self.body.iter().map(EncodedStaypoint::poi_index).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.body.iter().map(EncodedStaypoint::time).collect()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.body.iter().map(EncodedStaypoint::duration).collect()
    }
}

/// Encodes a non-empty staypoint run behind the shared prefix token.
pub fn encode_sequence(
    staypoints: &[Staypoint],
    stats: &NormalizationStats,
    prefix: &[f64],
) -> Result<EncodedSequence> {
    if staypoints.is_empty() {
        return Err(Error::InvalidArgument("cannot encode an empty sequence".into()));
    }
    if prefix.len() != stats.feature_width() {
        return Err(Error::Shape(format!(
            "prefix width {} != feature width {}",
            prefix.len(),
            stats.feature_width()
        )));
    }
    let body = staypoints
        .iter()
        .map(|sp| encode_staypoint(sp, stats))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedSequence {
        prefix: prefix.to_vec(),
        body,
    })
}
