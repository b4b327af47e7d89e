use std::path::Path;
use std::time::Instant;

use cmbench::cli::{cmd_eval_geo, report, RunConfig};
use cmbench::geometry::{Homography, Point2};
use cmbench::ingest::{
    to_jsonl, write_geo_annotation, write_matches, GeoAnnotation, GeoTruth, GroundTruth, ImageRef, MatchFileRecord,
    PairManifest, Task, MANIFEST_SCHEMA,
};
use cmbench::geometry::MatchSet;
use cmbench::metrics::{auc, scene_balanced_auc, PairError, SceneTag};
use cmbench::preprocess::BranchId;
use rand::Rng;

use super::{rng, Outcome};

pub const TAUS: [f64; 3] = [5.0, 10.0, 20.0];

/// Error lists with failures, exact zeros and values sitting on thresholds.
pub fn random_error_list(r: &mut impl Rng) -> Vec<PairError> {
    let n = r.random_range(1..=60);
    (0..n)
        .map(|i| {
            let id = format!("p{i}");
            match r.random_range(0..10) {
                0 | 1 => PairError::failed(id),
                2 => PairError::success(id, 0.0),
                3 => PairError::success(id, TAUS[r.random_range(0..3)]),
                _ => PairError::success(id, r.random_range(0.0..30.0)),
            }
        })
        .collect()
}

/// Midpoint-rule integral of the empirical recall over `[0, tau]`, divided
/// by `tau`. Recall counts are accumulated as integers, so the only error is
/// the quadrature error, at most `0.5 / steps`.
pub fn integrate_recall(errors: &[PairError], tau: f64, steps: u64) -> f64 {
    let mut vals: Vec<f64> = errors.iter().filter_map(|e| e.value).collect();
    vals.sort_by(f64::total_cmp);
    let dx = tau / steps as f64;
    let mut below = 0usize;
    let mut total: u64 = 0;
    for k in 0..steps {
        let eps = (k as f64 + 0.5) * dx;
        while below < vals.len() && vals[below] <= eps {
            below += 1;
        }
        total += below as u64;
    }
    total as f64 / (steps as f64 * errors.len() as f64)
}

pub fn auc_matches_integration() -> Outcome {
    let start = Instant::now();
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    let mut monotone_violations = 0;
    for _ in 0..1000 {
        let list = random_error_list(&mut r);
        let mut prev = -1.0;
        for tau in TAUS {
            let closed = auc(&list, tau).expect("valid input");
            let numeric = integrate_recall(&list, tau, 1_000_000);
            worst = worst.max((closed - numeric).abs());
            if closed < prev {
                monotone_violations += 1;
            }
            prev = closed;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        worst <= 1e-6 && monotone_violations == 0 && secs < 30.0,
        format!("max |closed - numeric| = {worst:.2e}, monotonicity violations = {monotone_violations}, {secs:.1}s"),
    )
}

/// Two splits: `a` has one scene, `b` three. Scene AUCs at τ = 8 are
/// a1 = 1, b1 = 0.25, b2 = 0.5, b3 = 0.75; weighting splits by scene count
/// gives (1·1 + 0.5·3) / 4 = 0.625, all exactly representable.
pub fn scene_balanced_fixture() -> Outcome {
    let tag = |scene: &str, split: &str| SceneTag::new(scene, split);
    let errors = vec![
        PairError::success("a1-0", 0.0).with_tag(tag("a1", "a")),
        PairError::success("b1-0", 6.0).with_tag(tag("b1", "b")),
        PairError::success("b2-0", 0.0).with_tag(tag("b2", "b")),
        PairError::failed("b2-1").with_tag(tag("b2", "b")),
        PairError::success("b3-0", 2.0).with_tag(tag("b3", "b")),
    ];
    let got = scene_balanced_auc(&errors, &[8.0]).expect("tagged input")[0];
    Outcome::new(got == 0.625, format!("scene-balanced AUC@8 = {got} (expected 0.625)"))
}

pub const GEO_THERMAL: (u32, u32) = (640, 512);
pub const GEO_SATELLITE: (u32, u32) = (1000, 1000);

fn geo_h(i: usize) -> Homography {
    let s = 1.05 + 0.05 * i as f64;
    Homography::from_row_major(&[s, 0.0, 100.0 + 20.0 * i as f64, 0.0, s, 80.0 + 10.0 * i as f64, 0.0, 0.0, 1.0])
        .expect("similarity")
}

fn map(h: &Homography, p: Point2) -> Point2 {
    let m = h.to_row_major();
    let w = m[6] * p.x + m[7] * p.y + m[8];
    Point2::new((m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w)
}

/// Writes four geo pairs whose matches follow the true transform exactly but
/// whose annotated satellite points are displaced by 8 px (4 m at 0.5 m/px).
pub fn write_planted_geo(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let offsets = [(8.0, 0.0), (0.0, -8.0), (-8.0, 0.0), (0.0, 8.0)];
    let thermal: Vec<Point2> = [(60.0, 50.0), (580.0, 50.0), (320.0, 256.0), (60.0, 460.0), (580.0, 460.0)]
        .iter()
        .map(|&(x, y)| Point2::new(x, y))
        .collect();
    std::fs::create_dir_all(root.join("ann")).unwrap();
    std::fs::create_dir_all(root.join("matches")).unwrap();
    let mut manifests = Vec::new();
    let mut records = Vec::new();
    for (i, off) in offsets.iter().enumerate() {
        let id = format!("planted-{i}");
        let h = geo_h(i);
        let ann = GeoAnnotation {
            pair_id: id.clone(),
            thermal_points: thermal.clone(),
            satellite_points: thermal
                .iter()
                .map(|p| {
                    let q = map(&h, *p);
                    Point2::new(q.x + off.0, q.y + off.1)
                })
                .collect(),
            meters_per_pixel: 0.5,
            note: "planted 4 m".into(),
        };
        write_geo_annotation(&root.join(format!("ann/{id}.jsonl")), &ann).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for gy in 0..12 {
            for gx in 0..12 {
                let p = Point2::new(20.0 + 50.0 * gx as f64, 16.0 + 40.0 * gy as f64);
                a.push(p);
                b.push(map(&h, p));
            }
        }
        records.push(MatchFileRecord {
            pair_id: id.clone(),
            matcher_id: "exact".into(),
            category: Some("dense".into()),
            branch: BranchId::None,
            size_a: GEO_THERMAL,
            size_b: GEO_SATELLITE,
            resize: "none".into(),
            matches: MatchSet::from_points(&a, &b),
            note: None,
        });
        manifests.push(PairManifest {
            schema: MANIFEST_SCHEMA.into(),
            pair_id: id.clone(),
            dataset_id: "planted".into(),
            task: Task::Geo,
            ir: ImageRef {
                path: format!("{id}_t.png"),
                width: GEO_THERMAL.0,
                height: GEO_THERMAL.1,
            },
            vis: ImageRef {
                path: format!("{id}_s.png"),
                width: GEO_SATELLITE.0,
                height: GEO_SATELLITE.1,
            },
            ground_truth: GroundTruth::Geo(GeoTruth {
                annotation: format!("ann/{id}.jsonl"),
            }),
            scene_id: Some(format!("r{i}")),
            split_id: Some("base".into()),
        });
    }
    let manifest = root.join("manifest.jsonl");
    std::fs::write(&manifest, to_jsonl(&manifests)).unwrap();
    write_matches(&root.join("matches/exact.jsonl"), &records).unwrap();
    (manifest, root.join("matches"))
}

pub fn geo_planted_errors() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, matches) = write_planted_geo(dir.path());
    let rows = match cmd_eval_geo(&RunConfig::new(&manifest, Task::Geo).with_matches(&matches)) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("geo evaluation failed: {e}")),
    };
    let row = &rows[0];
    let get = |n: &str| row.metric(n);
    let med = get("mederr_m");
    let srs = [get("sr@3m"), get("sr@5m"), get("sr@10m")];
    let csv = report::to_csv(&rows);
    let pass = med.is_some_and(|m| (m - 4.0).abs() <= 1e-9)
        && srs == [Some(0.0), Some(1.0), Some(1.0)]
        && csv.contains(",4.000000,0.000000,1.000000,1.000000,");
    Outcome::new(pass, format!("MedErr = {med:?} m, SR@3/5/10 = {srs:?}"))
}
