//! Adaptive preprocessing front-end.
//!
//! Each pair is embedded per image, fused into one descriptor, and labelled with
//! the preprocessing branch whose matches survive RANSAC best. A small softmax
//! classifier trained on those labels picks a branch for unseen pairs.

pub mod embed;
pub mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::{ransac_homography, RansacConfig};
use crate::geometry::MatchSet;
use crate::preprocess::BranchId;

pub use embed::{
    embed, BuiltinProvider, EmbedInput, EmbeddingCache, EmbeddingProvider, ExternalProvider, ProviderRegistry,
    BUILTIN_DIM, BUILTIN_PROVIDER,
};
pub use train::{loss_and_grad, predict_branch, train_gate, GateHyper, GateModel, Layer, Prediction, TrainReport};

pub const SAMPLE_SCHEMA: &str = "cmbench.gate-sample.v1";
/// Recorded with every sample so the label rule travels with the data.
pub const TIE_RULE: &str = "max-inliers, ties to lowest branch code";

#[derive(Debug, Error)]
pub enum GateError {
    #[error("unknown embedding provider `{0}`")]
    UnknownProvider(String),
    #[error("no embedding for image `{0}`")]
    UnknownImage(String),
    #[error("image `{0}` is missing or empty")]
    MissingImage(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in vector")]
    NonFinite,
    #[error("fusion descriptor invariant violated: {0}")]
    InvalidDescriptor(String),
    #[error("pair `{0}`: every branch failed")]
    AllBranchesFailed(String),
    #[error("no training samples")]
    NoSamples,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("{file}:{line}: {message}")]
    EmbeddingFile { file: String, line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, GateError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GateError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = GateError;
    fn try_from(v: Vec<f64>) -> Result<Self, GateError> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

/// `[f_ir ‖ f_vis ‖ |f_ir − f_vis| ‖ f_ir ⊙ f_vis]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FusionDescriptor {
    values: Vec<f64>,
}

impl FusionDescriptor {
    pub fn from_values(values: Vec<f64>) -> Result<Self, GateError> {
        if values.len() % 4 != 0 {
            return Err(GateError::InvalidDescriptor(format!(
                "length {} is not a multiple of 4",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GateError::NonFinite);
        }
        let d = values.len() / 4;
        if values[2 * d..3 * d].iter().any(|&v| v < 0.0) {
            return Err(GateError::InvalidDescriptor("negative absolute-difference entry".into()));
        }
        Ok(Self { values })
    }

    pub fn embedding_dim(&self) -> usize {
        self.values.len() / 4
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Block `i` in order ir, vis, abs-diff, product.
    pub fn block(&self, i: usize) -> &[f64] {
        let d = self.embedding_dim();
        &self.values[i * d..(i + 1) * d]
    }
}

impl TryFrom<Vec<f64>> for FusionDescriptor {
    type Error = GateError;
    fn try_from(v: Vec<f64>) -> Result<Self, GateError> {
        Self::from_values(v)
    }
}

impl From<FusionDescriptor> for Vec<f64> {
    fn from(v: FusionDescriptor) -> Self {
        v.values
    }
}

pub fn fuse(f_ir: &EmbeddingVector, f_vis: &EmbeddingVector) -> Result<FusionDescriptor, GateError> {
    if f_ir.dim() != f_vis.dim() {
        return Err(GateError::DimensionMismatch {
            expected: f_ir.dim(),
            got: f_vis.dim(),
        });
    }
    let (a, b) = (f_ir.values(), f_vis.values());
    let mut values = Vec::with_capacity(4 * a.len());
    values.extend_from_slice(a);
    values.extend_from_slice(b);
    values.extend(a.iter().zip(b).map(|(x, y)| (x - y).abs()));
    values.extend(a.iter().zip(b).map(|(x, y)| x * y));
    FusionDescriptor::from_values(values)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Label rule on per-branch inlier counts, `None` when every branch failed.
/// A failed branch never wins, even over a tie at zero.
pub fn label_from_counts(counts: [usize; 4], succeeded: [bool; 4]) -> Option<BranchId> {
    let mut best: Option<usize> = None;
    for i in 0..4 {
        if !succeeded[i] {
            continue;
        }
        match best {
            Some(b) if counts[i] <= counts[b] => {}
            _ => best = Some(i),
        }
    }
    best.map(|i| BranchId::ALL[i])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateSample {
    pub pair_id: String,
    pub descriptor: FusionDescriptor,
    pub label: BranchId,
    pub inlier_counts: [usize; 4],
}

/// Runs RANSAC on each branch's matches and labels the pair with the winner.
/// Only inlier counts matter; the images enter through `descriptor` alone.
pub fn oracle_label(
    pair_id: &str,
    descriptor: FusionDescriptor,
    branch_matches: &[MatchSet; 4],
    cfg: &RansacConfig,
) -> Result<GateSample, GateError> {
    let mut counts = [0usize; 4];
    let mut ok = [false; 4];
    for (i, m) in branch_matches.iter().enumerate() {
        let r = ransac_homography(m, cfg);
        ok[i] = r.is_success();
        counts[i] = if ok[i] { r.inlier_count } else { 0 };
    }
    let label = label_from_counts(counts, ok).ok_or_else(|| GateError::AllBranchesFailed(pair_id.to_string()))?;
    Ok(GateSample {
        pair_id: pair_id.to_string(),
        descriptor,
        label,
        inlier_counts: counts,
    })
}

/// Serialized form of a [`GateSample`], one per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSampleRecord {
    pub schema: String,
    pub pair_id: String,
    pub matcher_id: String,
    pub label: BranchId,
    pub inlier_counts: [usize; 4],
    pub tie_rule: String,
    pub descriptor: FusionDescriptor,
}

impl GateSampleRecord {
    pub fn new(matcher_id: &str, s: &GateSample) -> Self {
        Self {
            schema: SAMPLE_SCHEMA.into(),
            pair_id: s.pair_id.clone(),
            matcher_id: matcher_id.into(),
            label: s.label,
            inlier_counts: s.inlier_counts,
            tie_rule: TIE_RULE.into(),
            descriptor: s.descriptor.clone(),
        }
    }

    pub fn sample(&self) -> GateSample {
        GateSample {
            pair_id: self.pair_id.clone(),
            descriptor: self.descriptor.clone(),
            label: self.label,
            inlier_counts: self.inlier_counts,
        }
    }
}
