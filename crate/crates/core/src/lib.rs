//! Per-agent mobility anomaly detection with a chain-rule density cascade.
//!
//! The joint likelihood of a staypoint `(c, t, d)` given an agent embedding
//! `h` is factored as `P(t | h) · P(c | t, h) · P(d | c, t, h)`:
//! a per-agent circular KDE over arrival time, a recurrent softmax head over
//! POI type, and an attention-based Gaussian-mixture head over duration.
//! A transformer autoencoder learns `h` jointly with the two neural heads.

pub mod agent_embedding;
pub mod arrival_model;
pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod duration_model;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod poi_model;
pub mod scoring;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};

/// Lower clip for every probability factor.
pub const PROBABILITY_FLOOR: f64 = 1e-9;

/// `min(max(x, 1e-9), 1)`; NaN maps to the floor.
pub fn clip_probability(x: f64) -> f64 {
    if x.is_nan() {
        PROBABILITY_FLOOR
    } else {
        x.clamp(PROBABILITY_FLOOR, 1.0)
    }
}
