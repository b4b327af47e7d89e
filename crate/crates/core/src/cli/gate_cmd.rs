use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{homography_pair_error, load_inputs, scaled_matches, threshold_name};
use super::report::{sort_rows, Metric, ReportRow};
use super::{pair_seed, resolve, thread_pool, CliError, RunConfig};
use crate::gate::{
    fuse, oracle_label, train_gate, BuiltinProvider, EmbedInput, EmbeddingCache, EmbeddingProvider, EmbeddingVector,
    ExternalProvider, FusionDescriptor, GateError, GateHyper, GateModel, GateSample, GateSampleRecord, TrainReport,
};
use crate::geometry::MatchSet;
use crate::ingest::{to_jsonl, write_atomic, PairManifest};
use crate::metrics::{auc, valid_ratio, PairError};
use crate::preprocess::{BranchId, GrayImage};

/// Where per-image embeddings come from.
#[derive(Debug, Clone)]
pub enum EmbeddingSource {
    /// Handcrafted descriptor computed from the manifest's image files,
    /// cached under `CMBENCH_CACHE_DIR` when set.
    Builtin,
    /// Precomputed vectors keyed by the manifest's image paths.
    External(PathBuf),
}

enum Provider {
    Builtin(BuiltinProvider, Option<EmbeddingCache>),
    External(ExternalProvider),
}

impl Provider {
    fn open(source: &EmbeddingSource) -> Result<Self, CliError> {
        Ok(match source {
            EmbeddingSource::Builtin => Provider::Builtin(BuiltinProvider, EmbeddingCache::from_env()),
            EmbeddingSource::External(p) => Provider::External(ExternalProvider::load(p)?),
        })
    }

    fn id(&self) -> String {
        match self {
            Provider::Builtin(p, _) => p.id().to_string(),
            Provider::External(p) => p.id().to_string(),
        }
    }

    fn embed_image(&self, base: &Path, image_path: &str) -> Result<EmbeddingVector, CliError> {
        match self {
            Provider::External(p) => Ok(p.embed(&EmbedInput {
                image_id: image_path,
                image: None,
            })?),
            Provider::Builtin(p, cache) => {
                let img = GrayImage::open(&resolve(base, image_path))
                    .map_err(|e| CliError::Config(format!("{image_path}: {e}")))?;
                let key = cache.as_ref().map(|_| EmbeddingCache::key(p.id(), &img));
                if let (Some(c), Some(k)) = (cache, &key) {
                    if let Some(v) = c.get(k) {
                        return Ok(v);
                    }
                }
                let v = p.embed(&EmbedInput {
                    image_id: image_path,
                    image: Some(&img),
                })?;
                if let (Some(c), Some(k)) = (cache, &key) {
                    if let Err(e) = c.put(p.id(), k, &v) {
                        log::warn!("embedding cache write failed: {e}");
                    }
                }
                Ok(v)
            }
        }
    }

    fn descriptor(&self, base: &Path, pair: &PairManifest) -> Result<FusionDescriptor, CliError> {
        let f_ir = self.embed_image(base, &pair.ir.path)?;
        let f_vis = self.embed_image(base, &pair.vis.path)?;
        Ok(fuse(&f_ir, &f_vis)?)
    }
}

fn descriptors(
    provider: &Provider,
    base: &Path,
    pairs: &[PairManifest],
    workers: usize,
) -> Result<Vec<FusionDescriptor>, CliError> {
    let pool = thread_pool(workers)?;
    pool.install(|| pairs.par_iter().map(|p| provider.descriptor(base, p)).collect())
}

#[derive(Debug, Clone)]
pub struct GateLabelConfig {
    pub run: RunConfig,
    pub embeddings: EmbeddingSource,
    pub out: PathBuf,
    /// Defaults to `<out>.skipped.jsonl`.
    pub skipped_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub pair_id: String,
    pub matcher_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateLabelOutput {
    pub records: Vec<GateSampleRecord>,
    pub skipped: Vec<SkippedPair>,
}

fn skipped_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".skipped.jsonl");
    PathBuf::from(s)
}

fn branch_sets(cfg: &RunConfig, loaded_index: &crate::ingest::MatchIndex, m: &str, p: &PairManifest) -> [MatchSet; 4] {
    BranchId::ALL.map(|b| {
        loaded_index
            .get(m, b, &p.pair_id)
            .map(|r| scaled_matches(cfg, p, &r.matches).0)
            .unwrap_or_default()
    })
}

/// Labels every (pair, matcher) with its best branch by RANSAC inlier count.
/// Pairs where all four branches fail are written to the skip file instead.
pub fn cmd_gate_label(cfg: &GateLabelConfig) -> Result<GateLabelOutput, CliError> {
    let loaded = load_inputs(&cfg.run)?;
    let provider = Provider::open(&cfg.embeddings)?;
    let descs = descriptors(&provider, &loaded.base_dir, &loaded.pairs, cfg.run.workers)?;
    let pool = thread_pool(cfg.run.workers)?;

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for m in &loaded.matchers {
        let labelled: Vec<Result<GateSample, GateError>> = pool.install(|| {
            loaded
                .pairs
                .par_iter()
                .zip(descs.par_iter())
                .map(|(p, d)| {
                    let sets = branch_sets(&cfg.run, &loaded.index, m, p);
                    let ransac = cfg.run.ransac.with_seed(pair_seed(cfg.run.seed, &p.pair_id, m));
                    oracle_label(&p.pair_id, d.clone(), &sets, &ransac)
                })
                .collect()
        });
        for r in labelled {
            match r {
                Ok(s) => records.push(GateSampleRecord::new(m, &s)),
                Err(GateError::AllBranchesFailed(pair_id)) => {
                    log::info!("skipping pair {pair_id} for {m}: every branch failed");
                    skipped.push(SkippedPair {
                        pair_id,
                        matcher_id: m.clone(),
                        reason: "all branches failed".into(),
                    });
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    write_atomic(&cfg.out, to_jsonl(&records).as_bytes())?;
    let skip_path = cfg.skipped_out.clone().unwrap_or_else(|| skipped_path(&cfg.out));
    write_atomic(&skip_path, to_jsonl(&skipped).as_bytes())?;
    Ok(GateLabelOutput { records, skipped })
}

pub fn load_samples(path: &Path) -> Result<Vec<GateSampleRecord>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct GateTrainConfig {
    pub samples: PathBuf,
    pub out: PathBuf,
    pub hyper: GateHyper,
    /// Train on this matcher's samples only; `None` trains one shared model.
    pub matcher: Option<String>,
    pub provider: String,
}

pub fn cmd_gate_train(cfg: &GateTrainConfig) -> Result<(GateModel, TrainReport), CliError> {
    let records = load_samples(&cfg.samples)?;
    let samples: Vec<GateSample> = records
        .iter()
        .filter(|r| cfg.matcher.as_ref().is_none_or(|m| *m == r.matcher_id))
        .map(GateSampleRecord::sample)
        .collect();
    if samples.is_empty() {
        return Err(CliError::NothingToEvaluate("no training samples selected".into()));
    }
    let (mut model, report) = train_gate(&samples, &cfg.hyper, &cfg.provider)?;
    model.matcher_id = cfg.matcher.clone();
    model.save(&cfg.out)?;
    Ok((model, report))
}

#[derive(Debug, Clone)]
pub struct GateEvalConfig {
    pub run: RunConfig,
    pub embeddings: EmbeddingSource,
    /// Models bound to a matcher apply to that matcher only; a model without a
    /// matcher id applies to all others. No model means the identity gate.
    pub models: Vec<PathBuf>,
}

fn gain_pct(adaptive: f64, baseline: f64) -> Option<f64> {
    (baseline > 0.0).then(|| (adaptive - baseline) / baseline * 100.0)
}

/// Baseline (no preprocessing) vs gate-selected branch on the homography
/// task, with the per-pair best branch as an upper bound.
pub fn cmd_gate_eval(cfg: &GateEvalConfig) -> Result<Vec<ReportRow>, CliError> {
    let loaded = load_inputs(&cfg.run)?;
    let mut shared: Option<GateModel> = None;
    let mut per_matcher: BTreeMap<String, GateModel> = BTreeMap::new();
    for path in &cfg.models {
        let m = GateModel::load(path)?;
        match m.matcher_id.clone() {
            Some(id) => {
                per_matcher.insert(id, m);
            }
            None => shared = Some(m),
        }
    }
    let need_descriptors = shared.is_some() || !per_matcher.is_empty();
    let descs = if need_descriptors {
        let provider = Provider::open(&cfg.embeddings)?;
        let id = provider.id();
        for m in per_matcher.values().chain(shared.iter()) {
            if m.provider != id {
                return Err(CliError::Config(format!(
                    "model was trained on provider `{}`, embeddings come from `{id}`",
                    m.provider
                )));
            }
        }
        Some(descriptors(&provider, &loaded.base_dir, &loaded.pairs, cfg.run.workers)?)
    } else {
        None
    };

    let pool = thread_pool(cfg.run.workers)?;
    let mut rows = Vec::new();
    for m in &loaded.matchers {
        let model = per_matcher.get(m).or(shared.as_ref());
        let per_pair: Vec<Result<[PairError; 3], CliError>> = pool.install(|| {
            loaded
                .pairs
                .par_iter()
                .enumerate()
                .map(|(i, p)| {
                    let branch = match (model, &descs) {
                        (Some(model), Some(d)) => model.predict(&d[i])?.branch,
                        _ => BranchId::None,
                    };
                    let errors: Vec<PairError> = BranchId::ALL
                        .iter()
                        .map(|&b| homography_pair_error(&cfg.run, &loaded.index, m, b, p))
                        .collect();
                    let best = errors
                        .iter()
                        .enumerate()
                        .filter_map(|(i, e)| e.value.map(|v| (i, v)))
                        .fold(None::<(usize, f64)>, |acc, (i, v)| match acc {
                            Some((_, bv)) if bv <= v => acc,
                            _ => Some((i, v)),
                        })
                        .map_or(0, |(i, _)| i);
                    Ok([
                        errors[BranchId::None.index()].clone(),
                        errors[branch.index()].clone(),
                        errors[best].clone(),
                    ])
                })
                .collect()
        });
        let mut baseline = Vec::new();
        let mut adaptive = Vec::new();
        let mut oracle = Vec::new();
        for r in per_pair {
            let [b, a, o] = r?;
            baseline.push(b);
            adaptive.push(a);
            oracle.push(o);
        }
        let mut metrics = Vec::new();
        let auc_of = |e: &[PairError], t: f64| auc(e, t).map_err(|e| CliError::Runtime(e.to_string()));
        for &t in &cfg.run.thresholds {
            let b = auc_of(&baseline, t)?;
            let a = auc_of(&adaptive, t)?;
            let o = auc_of(&oracle, t)?;
            metrics.push(Metric::new(threshold_name("adaptive_auc", t, ""), Some(a)));
            metrics.push(Metric::new(threshold_name("baseline_auc", t, ""), Some(b)));
            metrics.push(Metric::new(threshold_name("gain_pct", t, ""), gain_pct(a, b)));
            metrics.push(Metric::new(threshold_name("oracle_auc", t, ""), Some(o)));
        }
        rows.push(ReportRow {
            category: loaded.index.category(m).unwrap_or_else(|| "unknown".into()),
            matcher_id: m.clone(),
            task: "gate_eval".into(),
            pairs: adaptive.len(),
            success_rate: valid_ratio(&adaptive),
            metrics,
            fingerprint: cfg.run.fingerprint(),
        });
    }
    sort_rows(&mut rows);
    Ok(rows)
}
