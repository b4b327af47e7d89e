use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rayon::prelude::*;

use super::report::{sort_rows, Metric, ReportRow};
use super::{pair_seed, resize_scale, thread_pool, CliError, RunConfig};
use crate::estimate::{estimate_relative_pose, ransac_homography, RansacConfig};
use crate::geometry::{pose_angular_error, Homography, MatchSet};
use crate::ingest::{
    load_geo_annotation, load_manifest, load_matches_dir, write_manifest, GeoAnnotation, GroundTruth,
    HomographyTruth, ImageRef, ManifestOptions, MatchFile, MatchIndex, PairManifest, Side, Task, MANIFEST_SCHEMA,
};
use crate::metrics::{auc, corner_error, median_error, scene_balanced_auc, success_rate, valid_ratio, PairError, SceneTag};
use crate::preprocess::BranchId;
use crate::synth::{sample_homography, HomographySamplerParams};

pub(super) struct Loaded {
    pub base_dir: PathBuf,
    pub pairs: Vec<PairManifest>,
    pub index: MatchIndex,
    pub matchers: Vec<String>,
}

/// Loads manifests and match files; logs quarantined match records.
pub(super) fn load_inputs(cfg: &RunConfig) -> Result<Loaded, CliError> {
    cfg.validate()?;
    let set = load_manifest(&cfg.manifest, ManifestOptions::default())?;
    let mut pairs: Vec<PairManifest> = set
        .pairs
        .into_iter()
        .filter(|p| p.task == cfg.task)
        .collect();
    pairs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    if pairs.is_empty() {
        return Err(CliError::NothingToEvaluate(format!(
            "{} has no `{}` pairs",
            cfg.manifest.display(),
            cfg.task
        )));
    }
    let files = match &cfg.matches_dir {
        Some(dir) => load_matches_dir(dir, cfg.max_matches)?,
        None => MatchFile::default(),
    };
    for q in &files.quarantine {
        log::warn!("{}:{}: quarantined match record: {}", q.file, q.line, q.reason);
    }
    let index = MatchIndex::new(files.records);
    let mut matchers: BTreeSet<String> = index.matchers();
    matchers.extend(cfg.matchers.iter().cloned());
    if matchers.is_empty() {
        return Err(CliError::NothingToEvaluate("no matchers declared and no match files found".into()));
    }
    Ok(Loaded {
        base_dir: set.base_dir,
        pairs,
        index,
        matchers: matchers.into_iter().collect(),
    })
}

fn category(index: &MatchIndex, matcher: &str) -> String {
    index.category(matcher).unwrap_or_else(|| "unknown".into())
}

pub(super) fn threshold_name(prefix: &str, t: f64, unit: &str) -> String {
    format!("{prefix}@{t}{unit}")
}

fn ransac_for(cfg: &RunConfig, pair_id: &str, matcher: &str) -> RansacConfig {
    cfg.ransac.with_seed(pair_seed(cfg.seed, pair_id, matcher))
}

/// Matches of one pair in evaluation resolution plus the IR/VIS scales.
pub(super) fn scaled_matches(cfg: &RunConfig, pair: &PairManifest, matches: &MatchSet) -> (MatchSet, f64, f64) {
    let sa = resize_scale(pair.ir.width, pair.ir.height, cfg.resize_max);
    let sb = resize_scale(pair.vis.width, pair.vis.height, cfg.resize_max);
    (matches.rescaled(sa, sb), sa, sb)
}

/// Corner error, at evaluation resolution, of RANSAC on one branch's matches.
pub(super) fn homography_pair_error(
    cfg: &RunConfig,
    index: &MatchIndex,
    matcher: &str,
    branch: BranchId,
    pair: &PairManifest,
) -> PairError {
    let failed = PairError::failed(&pair.pair_id);
    let (Some(rec), Some(h_gt)) = (index.get(matcher, branch, &pair.pair_id), pair.homography()) else {
        return failed;
    };
    let (m, sa, sb) = scaled_matches(cfg, pair, &rec.matches);
    let res = ransac_homography(&m, &ransac_for(cfg, &pair.pair_id, matcher));
    let Some(h_est) = res.model.filter(|_| res.is_success()) else {
        return failed;
    };
    let gt_scaled = Homography::scaling(sb, sb)
        .and_then(|s| s.compose(&h_gt))
        .and_then(|g| Homography::scaling(1.0 / sa, 1.0 / sa).and_then(|inv| g.compose(&inv)));
    let Ok(gt_scaled) = gt_scaled else {
        return failed;
    };
    let (w, h) = (pair.ir.width as f64 * sa, pair.ir.height as f64 * sa);
    match corner_error(&h_est, &gt_scaled, w, h) {
        Ok(e) => PairError::success(&pair.pair_id, e),
        Err(_) => failed,
    }
}

fn aucs(errors: &[PairError], taus: &[f64]) -> Result<Vec<f64>, CliError> {
    taus.iter()
        .map(|&t| auc(errors, t).map_err(|e| CliError::Runtime(e.to_string())))
        .collect()
}

fn per_matcher<F>(cfg: &RunConfig, loaded: &Loaded, eval: F) -> Result<Vec<(String, Vec<PairError>)>, CliError>
where
    F: Fn(&str, &PairManifest) -> PairError + Sync,
{
    let pool = thread_pool(cfg.workers)?;
    Ok(loaded
        .matchers
        .iter()
        .map(|m| {
            let errors: Vec<PairError> = pool.install(|| loaded.pairs.par_iter().map(|p| eval(m, p)).collect());
            (m.clone(), errors)
        })
        .collect())
}

/// Homography task: RANSAC on each matcher's unprocessed-branch matches,
/// mean corner error against the synthetic ground truth, AUC per threshold.
/// Pairs without matches count as failed.
pub fn cmd_eval_homography(cfg: &RunConfig) -> Result<Vec<ReportRow>, CliError> {
    if cfg.task != Task::Homography {
        return Err(CliError::Config(format!("expected task homography, got {}", cfg.task)));
    }
    let loaded = load_inputs(cfg)?;
    let results = per_matcher(cfg, &loaded, |m, p| {
        homography_pair_error(cfg, &loaded.index, m, BranchId::None, p)
    })?;
    let mut rows = Vec::new();
    for (matcher, errors) in results {
        let values = aucs(&errors, &cfg.thresholds)?;
        rows.push(ReportRow {
            category: category(&loaded.index, &matcher),
            matcher_id: matcher,
            task: cfg.task.to_string(),
            pairs: errors.len(),
            success_rate: valid_ratio(&errors),
            metrics: cfg
                .thresholds
                .iter()
                .zip(values)
                .map(|(t, v)| Metric::new(threshold_name("auc", *t, ""), Some(v)))
                .collect(),
            fingerprint: cfg.fingerprint(),
        });
    }
    sort_rows(&mut rows);
    Ok(rows)
}

/// Relative-pose task: essential-matrix RANSAC with intrinsics scaled to the
/// evaluation resolution, max(rotation, translation) angular error, and AUC
/// balanced over scenes and splits.
pub fn cmd_eval_pose(cfg: &RunConfig) -> Result<Vec<ReportRow>, CliError> {
    if cfg.task != Task::Pose {
        return Err(CliError::Config(format!("expected task pose, got {}", cfg.task)));
    }
    let loaded = load_inputs(cfg)?;
    let results = per_matcher(cfg, &loaded, |m, p| {
        let tag = SceneTag::new(
            p.scene_id.clone().unwrap_or_else(|| p.pair_id.clone()),
            p.split_id.clone().unwrap_or_default(),
        );
        let failed = PairError::failed(&p.pair_id).with_tag(tag.clone());
        let (Some(rec), Some((gt, k_ir, k_vis))) = (loaded.index.get(m, BranchId::None, &p.pair_id), p.pose()) else {
            return failed;
        };
        let (matches, sa, sb) = scaled_matches(cfg, p, &rec.matches);
        let res = estimate_relative_pose(
            &matches,
            &k_ir.scaled(sa),
            &k_vis.scaled(sb),
            &ransac_for(cfg, &p.pair_id, m),
        );
        match res.model.filter(|_| res.is_success()) {
            Some(est) => PairError::success(&p.pair_id, pose_angular_error(&est, &gt)).with_tag(tag),
            None => failed,
        }
    })?;
    let mut rows = Vec::new();
    for (matcher, errors) in results {
        let values = scene_balanced_auc(&errors, &cfg.thresholds).map_err(|e| CliError::Config(e.to_string()))?;
        rows.push(ReportRow {
            category: category(&loaded.index, &matcher),
            matcher_id: matcher,
            task: cfg.task.to_string(),
            pairs: errors.len(),
            success_rate: valid_ratio(&errors),
            metrics: cfg
                .thresholds
                .iter()
                .zip(values)
                .map(|(t, v)| Metric::new(threshold_name("auc", *t, ""), Some(v)))
                .collect(),
            fingerprint: cfg.fingerprint(),
        });
    }
    sort_rows(&mut rows);
    Ok(rows)
}

/// Geo-localization (base or hard): thermal→satellite homography, RMS error
/// of the annotated points in meters, median over successes and success
/// rates over all pairs. A median without successes is reported as missing.
pub fn cmd_eval_geo(cfg: &RunConfig) -> Result<Vec<ReportRow>, CliError> {
    if !matches!(cfg.task, Task::Geo | Task::GeoHard) {
        return Err(CliError::Config(format!("expected task geo or geo_hard, got {}", cfg.task)));
    }
    let loaded = load_inputs(cfg)?;
    let mut annotations: BTreeMap<String, GeoAnnotation> = BTreeMap::new();
    for p in &loaded.pairs {
        let path = p
            .annotation_path(&loaded.base_dir)
            .ok_or_else(|| CliError::Config(format!("pair `{}` has no annotation", p.pair_id)))?;
        annotations.insert(p.pair_id.clone(), load_geo_annotation(&path)?);
    }
    let results = per_matcher(cfg, &loaded, |m, p| {
        let failed = PairError::failed(&p.pair_id);
        let Some(rec) = loaded.index.get(m, BranchId::None, &p.pair_id) else {
            return failed;
        };
        let (matches, sa, sb) = scaled_matches(cfg, p, &rec.matches);
        let res = ransac_homography(&matches, &ransac_for(cfg, &p.pair_id, m));
        let Some(h) = res.model.filter(|_| res.is_success()) else {
            return failed;
        };
        // Back to original resolution, where the annotations live.
        let original = Homography::scaling(1.0 / sb, 1.0 / sb)
            .and_then(|s| s.compose(&h))
            .and_then(|g| Homography::scaling(sa, sa).and_then(|s| g.compose(&s)));
        match original.and_then(|h| crate::metrics::geo_error(&h, &annotations[&p.pair_id])) {
            Ok(e) => PairError::success(&p.pair_id, e),
            Err(_) => failed,
        }
    })?;
    let mut rows = Vec::new();
    for (matcher, errors) in results {
        let mut metrics = vec![Metric::new("mederr_m", median_error(&errors).ok())];
        for &t in &cfg.thresholds {
            let sr = success_rate(&errors, t).map_err(|e| CliError::Runtime(e.to_string()))?;
            metrics.push(Metric::new(threshold_name("sr", t, "m"), Some(sr)));
        }
        rows.push(ReportRow {
            category: category(&loaded.index, &matcher),
            matcher_id: matcher,
            task: cfg.task.to_string(),
            pairs: errors.len(),
            success_rate: valid_ratio(&errors),
            metrics,
            fingerprint: cfg.fingerprint(),
        });
    }
    sort_rows(&mut rows);
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct SynthPairsConfig {
    pub out: PathBuf,
    pub count: usize,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub dataset_id: String,
    pub params: HomographySamplerParams,
}

impl SynthPairsConfig {
    pub fn new(out: impl Into<PathBuf>, count: usize) -> Self {
        Self {
            out: out.into(),
            count,
            width: 640,
            height: 480,
            seed: 0,
            dataset_id: "synthetic".into(),
            params: HomographySamplerParams::default(),
        }
    }
}

/// Writes a homography-task manifest of `count` sampled pairs; pair `i` is
/// drawn with seed `seed + i`. Image paths are recorded, not rendered.
pub fn cmd_synth_pairs(cfg: &SynthPairsConfig) -> Result<Vec<PairManifest>, CliError> {
    if cfg.count == 0 {
        return Err(CliError::NothingToEvaluate("--count must be positive".into()));
    }
    let mut pairs = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let seed = cfg.seed.wrapping_add(i as u64);
        let s = sample_homography(seed, cfg.width, cfg.height, &cfg.params)
            .map_err(|e| CliError::Config(e.to_string()))?;
        let rec = s.to_record();
        let id = format!("{}-{i:05}", cfg.dataset_id);
        pairs.push(PairManifest {
            schema: MANIFEST_SCHEMA.into(),
            pair_id: id.clone(),
            dataset_id: cfg.dataset_id.clone(),
            task: Task::Homography,
            ir: ImageRef {
                path: format!("images/{id}_ir.png"),
                width: cfg.width,
                height: cfg.height,
            },
            vis: ImageRef {
                path: format!("images/{id}_vis.png"),
                width: cfg.width,
                height: cfg.height,
            },
            ground_truth: GroundTruth::Homography(HomographyTruth {
                seed: rec.seed,
                width: rec.width,
                height: rec.height,
                h: rec.h,
                warped: Side::Vis,
            }),
            scene_id: None,
            split_id: None,
        });
    }
    write_manifest(&cfg.out, &pairs)?;
    Ok(pairs)
}
