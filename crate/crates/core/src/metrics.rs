//! Per-pair error definitions and benchmark aggregates.
//!
//! Failed pairs are handled in one place with three conventions:
//! they contribute zero recall to AUC, they are excluded from the median
//! error, and they stay in the denominator of success rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::Status;
use crate::geometry::{GeometryError, Homography, Point2};
use crate::ingest::GeoAnnotation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no errors to aggregate")]
    EmptyInput,
    #[error("no successfully evaluated pairs")]
    NoSuccesses,
    #[error("threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("pair {0} has no scene/split tag")]
    MissingTag(String),
    #[error("scene {scene} appears in splits {first} and {second}")]
    InconsistentTag {
        scene: String,
        first: String,
        second: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SceneTag {
    pub scene_id: String,
    pub split_id: String,
}

impl SceneTag {
    pub fn new(scene_id: impl Into<String>, split_id: impl Into<String>) -> Self {
        Self {
            scene_id: scene_id.into(),
            split_id: split_id.into(),
        }
    }
}

/// Error of one evaluated pair in task units (pixels, degrees or meters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub pair_id: String,
    /// `None` for failed pairs.
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<SceneTag>,
}

impl PairError {
    /// A non-finite value is recorded as a failure.
    pub fn success(pair_id: impl Into<String>, value: f64) -> Self {
        Self {
            pair_id: pair_id.into(),
            value: value.is_finite().then_some(value),
            tag: None,
        }
    }

    pub fn failed(pair_id: impl Into<String>) -> Self {
        Self {
            pair_id: pair_id.into(),
            value: None,
            tag: None,
        }
    }

    pub fn with_tag(mut self, tag: SceneTag) -> Self {
        self.tag = Some(tag);
        self
    }

    pub fn status(&self) -> Status {
        match self.value {
            Some(_) => Status::Success,
            None => Status::Failed,
        }
    }
}

/// Mean distance between the four frame corners mapped by the estimate and
/// by the ground truth.
pub fn corner_error(
    h_est: &Homography,
    h_gt: &Homography,
    width: f64,
    height: f64,
) -> Result<f64, GeometryError> {
    let corners = [
        Point2::new(0.0, 0.0),
        Point2::new(width, 0.0),
        Point2::new(width, height),
        Point2::new(0.0, height),
    ];
    let mut total = 0.0;
    for c in corners {
        total += h_est.apply(c)?.distance(&h_gt.apply(c)?);
    }
    Ok(total / 4.0)
}

fn check_tau(tau: f64) -> Result<(), MetricsError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(MetricsError::InvalidThreshold(tau))
    }
}

/// Normalized area under the recall curve on `[0, tau]`.
///
/// Recall(ε) is the share of all pairs with error ≤ ε, so the integral has
/// the closed form `Σ max(0, τ − eᵢ) / (N τ)` over successful pairs.
pub fn auc(errors: &[PairError], tau: f64) -> Result<f64, MetricsError> {
    check_tau(tau)?;
    if errors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let area: f64 = errors
        .iter()
        .filter_map(|e| e.value)
        .map(|v| (tau - v.max(0.0)).max(0.0))
        .sum();
    Ok((area / (errors.len() as f64 * tau)).clamp(0.0, 1.0))
}

/// Median over successful pairs; even counts average the two middle values.
pub fn median_error(errors: &[PairError]) -> Result<f64, MetricsError> {
    let mut values: Vec<f64> = errors.iter().filter_map(|e| e.value).collect();
    if values.is_empty() {
        return Err(MetricsError::NoSuccesses);
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Ok(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

/// Share of all pairs (failures included) with error ≤ `tau`.
pub fn success_rate(errors: &[PairError], tau: f64) -> Result<f64, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hits = errors
        .iter()
        .filter(|e| e.value.is_some_and(|v| v <= tau))
        .count();
    Ok(hits as f64 / errors.len() as f64)
}

/// Share of pairs whose estimator produced a model at all.
pub fn valid_ratio(errors: &[PairError]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|e| e.value.is_some()).count() as f64 / errors.len() as f64
}

/// RMS distance, in meters, between thermal ground-truth points projected by
/// `h_est` and their satellite counterparts.
pub fn geo_error(h_est: &Homography, annotation: &GeoAnnotation) -> Result<f64, GeometryError> {
    let n = annotation.thermal_points.len();
    if n == 0 || n != annotation.satellite_points.len() {
        return Err(GeometryError::NonFinite("annotation points"));
    }
    let mut sum_sq = 0.0;
    for (t, s) in annotation
        .thermal_points
        .iter()
        .zip(&annotation.satellite_points)
    {
        let p = h_est.apply(*t)?;
        let d = p.distance(s);
        sum_sq += d * d;
    }
    let rms = (sum_sq / n as f64).sqrt();
    Ok(rms * annotation.meters_per_pixel)
}

/// AUC averaged first over pairs within each scene, then over scenes within
/// each split, then across splits weighted by their scene counts.
pub fn scene_balanced_auc(per_pair: &[PairError], taus: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if per_pair.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    for &tau in taus {
        check_tau(tau)?;
    }
    let mut scene_split: BTreeMap<&str, &str> = BTreeMap::new();
    let mut by_scene: BTreeMap<&str, Vec<PairError>> = BTreeMap::new();
    for e in per_pair {
        let tag = e
            .tag
            .as_ref()
            .ok_or_else(|| MetricsError::MissingTag(e.pair_id.clone()))?;
        if let Some(prev) = scene_split.insert(&tag.scene_id, &tag.split_id) {
            if prev != tag.split_id {
                return Err(MetricsError::InconsistentTag {
                    scene: tag.scene_id.clone(),
                    first: prev.to_string(),
                    second: tag.split_id.clone(),
                });
            }
        }
        by_scene.entry(&tag.scene_id).or_default().push(e.clone());
    }

    taus.iter()
        .map(|&tau| {
            let mut per_split: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for (scene, errors) in &by_scene {
                per_split
                    .entry(scene_split[scene])
                    .or_default()
                    .push(auc(errors, tau)?);
            }
            let total_scenes: usize = per_split.values().map(Vec::len).sum();
            let weighted: f64 = per_split
                .values()
                .map(|aucs| {
                    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
                    mean * aucs.len() as f64
                })
                .sum();
            Ok(weighted / total_scenes as f64)
        })
        .collect()
}
