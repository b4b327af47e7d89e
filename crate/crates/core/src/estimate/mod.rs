//! Robust model fitting: RANSAC homographies, essential-matrix relative
//! pose, and inlier counting.
//!
//! Estimation failure is a value ([`Status::Failed`]) rather than an error,
//! because the share of failed pairs is itself a reported metric.

mod essential;
mod homography;
mod linalg;

pub use essential::{decompose_essential, eight_point, estimate_relative_pose, sampson_distance};
pub use homography::{dlt_homography, ransac_homography};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Correspondence, Homography, MatchSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("need at least {needed} correspondences, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier threshold in pixels.
    pub threshold: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 3.0,
            max_iterations: 2000,
            confidence: 0.9999,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), EstimateError> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(EstimateError::InvalidConfig(format!(
                "threshold {} must be positive",
                self.threshold
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(EstimateError::InvalidConfig(format!(
                "confidence {} outside (0, 1)",
                self.confidence
            )));
        }
        if self.max_iterations == 0 {
            return Err(EstimateError::InvalidConfig("max_iterations is zero".into()));
        }
        Ok(())
    }

    /// Iterations needed to draw one all-inlier sample of `sample_size`
    /// with the configured confidence, capped at `max_iterations`.
    pub fn required_iterations(&self, inlier_ratio: f64, sample_size: i32) -> usize {
        let p_good = inlier_ratio.clamp(0.0, 1.0).powi(sample_size);
        if p_good >= 1.0 {
            return 1;
        }
        if p_good <= 0.0 {
            return self.max_iterations;
        }
        let n = (1.0 - self.confidence).ln() / (1.0 - p_good).ln();
        if !n.is_finite() {
            return self.max_iterations;
        }
        (n.ceil() as usize).clamp(1, self.max_iterations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Success,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    TooFewMatches,
    NoConsensus,
    /// No parallax or a rank-deficient epipolar system.
    DegenerateMotion,
    Cheirality,
    InvalidConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult<M> {
    pub model: Option<M>,
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
    pub status: Status,
    pub failure: Option<FailureReason>,
    pub iterations: usize,
}

impl<M> EstimationResult<M> {
    pub fn failed(len: usize, reason: FailureReason, iterations: usize) -> Self {
        Self {
            model: None,
            inlier_mask: vec![false; len],
            inlier_count: 0,
            status: Status::Failed,
            failure: Some(reason),
            iterations,
        }
    }

    pub fn success(model: M, inlier_mask: Vec<bool>, iterations: usize) -> Self {
        let inlier_count = inlier_mask.iter().filter(|&&b| b).count();
        Self {
            model: Some(model),
            inlier_mask,
            inlier_count,
            status: Status::Success,
            failure: None,
            iterations,
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == Status::Success
    }
}

/// Symmetric transfer distance: the mean of the forward distance in image B
/// and the backward distance in image A. `None` if either side cannot be
/// dehomogenized.
pub fn symmetric_transfer_distance(
    h: &Homography,
    h_inv: &Homography,
    c: &Correspondence,
) -> Option<f64> {
    let fwd = h.apply(c.a).ok()?.distance(&c.b);
    let bwd = h_inv.apply(c.b).ok()?.distance(&c.a);
    let d = 0.5 * (fwd + bwd);
    d.is_finite().then_some(d)
}

/// Per-pair inlier flags under the symmetric transfer distance.
pub fn inlier_mask(h: &Homography, matches: &MatchSet, threshold: f64) -> Vec<bool> {
    let Ok(h_inv) = h.inverse() else {
        return vec![false; matches.len()];
    };
    matches
        .iter()
        .map(|c| symmetric_transfer_distance(h, &h_inv, c).is_some_and(|d| d < threshold))
        .collect()
}

pub fn count_inliers(h: &Homography, matches: &MatchSet, threshold: f64) -> usize {
    inlier_mask(h, matches, threshold)
        .into_iter()
        .filter(|&b| b)
        .count()
}
