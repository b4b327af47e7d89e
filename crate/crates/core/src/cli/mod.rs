//! Benchmark commands behind the `cmbench` binary.
//!
//! Every command is a plain function from a config to report rows so the same
//! pipeline runs from tests, examples and the command line.

mod args;
mod eval;
mod gate_cmd;
pub mod report;

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::estimate::RansacConfig;
use crate::gate::GateError;
use crate::ingest::{IngestError, Task};
use crate::preprocess::PreprocessParams;

pub use args::{run, Cli, Command};
pub use eval::{cmd_eval_geo, cmd_eval_homography, cmd_eval_pose, cmd_synth_pairs, SynthPairsConfig};
pub use gate_cmd::{
    cmd_gate_eval, cmd_gate_label, cmd_gate_train, EmbeddingSource, GateEvalConfig, GateLabelConfig, GateLabelOutput,
    GateTrainConfig, SkippedPair,
};
pub use report::{OutputFormat, ReportRow};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NOTHING: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("nothing to evaluate: {0}")]
    NothingToEvaluate(String),
    #[error("fingerprint mismatch: `{expected}` vs `{got}` (use --force to merge anyway)")]
    FingerprintMismatch { expected: String, got: String },
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Ingest(_) | CliError::FingerprintMismatch { .. } => EXIT_CONFIG,
            CliError::NothingToEvaluate(_) => EXIT_NOTHING,
            CliError::Gate(GateError::NonFiniteLoss { .. }) | CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Gate(_) => EXIT_CONFIG,
        }
    }
}

/// Settings shared by the evaluation commands.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub matches_dir: Option<PathBuf>,
    pub task: Task,
    pub ransac: RansacConfig,
    /// Error thresholds, strictly ascending: degrees for pose, pixels for
    /// homography, meters for geo.
    pub thresholds: Vec<f64>,
    pub format: OutputFormat,
    pub seed: u64,
    pub max_matches: usize,
    /// Longest image side after the evaluation-time resize; 0 disables it.
    pub resize_max: u32,
    pub workers: usize,
    /// Matchers evaluated even when none of their files exist.
    pub matchers: Vec<String>,
    pub preprocess: PreprocessParams,
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, task: Task) -> Self {
        Self {
            manifest: manifest.into(),
            matches_dir: None,
            task,
            ransac: RansacConfig::default(),
            thresholds: default_thresholds(task),
            format: OutputFormat::Csv,
            seed: 0,
            max_matches: crate::geometry::DEFAULT_MATCH_CAP,
            resize_max: 640,
            workers: 1,
            matchers: Vec::new(),
            preprocess: PreprocessParams::default(),
        }
    }

    pub fn with_matches(mut self, dir: impl Into<PathBuf>) -> Self {
        self.matches_dir = Some(dir.into());
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.thresholds.is_empty() {
            return Err(CliError::Config("at least one threshold is required".into()));
        }
        if self.thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(CliError::Config("thresholds must be positive".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config("thresholds must be strictly ascending".into()));
        }
        self.ransac
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.preprocess
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.workers == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        if self.max_matches == 0 {
            return Err(CliError::Config("--max-matches must be positive".into()));
        }
        Ok(())
    }

    /// Canonical description of every setting that affects numbers in a
    /// report. Rows with different fingerprints are not comparable.
    pub fn fingerprint(&self) -> String {
        let p = &self.preprocess;
        format!(
            "ransac_thr={};iters={};conf={};seed={};resize_max={};max_matches={};thresholds={};unsharp={}x{};lcn={}/{};morph={}",
            self.ransac.threshold,
            self.ransac.max_iterations,
            self.ransac.confidence,
            self.seed,
            self.resize_max,
            self.max_matches,
            self.thresholds.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("/"),
            p.unsharp_sigma,
            p.unsharp_amount,
            p.lcn_window,
            p.lcn_epsilon,
            p.morph_radius,
        )
    }
}

pub fn default_thresholds(task: Task) -> Vec<f64> {
    match task {
        Task::Homography | Task::Pose => vec![5.0, 10.0, 20.0],
        Task::Geo | Task::GeoHard => vec![3.0, 5.0, 10.0],
    }
}

/// Per-(pair, matcher) RANSAC seed, independent of evaluation order.
pub fn pair_seed(seed: u64, pair_id: &str, matcher_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(pair_id.as_bytes());
    h.update([0u8]);
    h.update(matcher_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Downscale-only factor mapping an image onto `resize_max` pixels on its
/// longest side.
pub fn resize_scale(width: u32, height: u32, resize_max: u32) -> f64 {
    let longest = width.max(height);
    if resize_max == 0 || longest <= resize_max {
        1.0
    } else {
        resize_max as f64 / longest as f64
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
