//! Deterministic synthetic benchmark bundles.
//!
//! A bundle is a directory laid out exactly like real benchmark inputs:
//! manifests per task, one match file per simulated matcher, geo annotations,
//! and small rendered images for the branch selector. Everything derives from
//! one seed, so two bundles written with the same spec are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{axis_angle, CameraIntrinsics, Homography, MatchSet, Point2, RelativePose};
use crate::ingest::{
    write_atomic, write_geo_annotation, write_manifest, write_matches, GeoAnnotation, GeoTruth, GroundTruth,
    HomographyTruth, ImageRef, IngestError, MatchFileRecord, PairManifest, PoseTruth, Side, Task, MANIFEST_SCHEMA,
};
use crate::preprocess::{BranchId, GrayImage};
use crate::synth::{sample_homography, HomographySamplerParams};

/// Simulated matcher: identity, table category, and match quality.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMatcher {
    pub id: String,
    pub category: String,
    pub count: usize,
    pub noise_px: f64,
    pub outlier_ratio: f64,
    /// Every `drop_every`-th pair gets no match record (0 keeps all).
    pub drop_every: usize,
}

impl SimMatcher {
    pub fn new(id: &str, category: &str, count: usize, noise_px: f64, outlier_ratio: f64) -> Self {
        Self {
            id: id.into(),
            category: category.into(),
            count,
            noise_px,
            outlier_ratio,
            drop_every: 0,
        }
    }

    pub fn dropping_every(mut self, n: usize) -> Self {
        self.drop_every = n;
        self
    }
}

#[derive(Debug, Clone)]
pub struct BundleSpec {
    pub seed: u64,
    pub homography_pairs: usize,
    pub homography_size: (u32, u32),
    /// Scenes per split for the pose task, each with `pose_pairs_per_scene` pairs.
    pub pose_splits: Vec<(String, usize)>,
    pub pose_pairs_per_scene: usize,
    pub geo_pairs: usize,
    pub gate_pairs_per_class: usize,
    pub matchers: Vec<SimMatcher>,
}

impl Default for BundleSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            homography_pairs: 24,
            homography_size: (800, 600),
            pose_splits: vec![("indoor".into(), 2), ("outdoor".into(), 3)],
            pose_pairs_per_scene: 2,
            geo_pairs: 8,
            gate_pairs_per_class: 12,
            matchers: vec![
                SimMatcher::new("sim-sparse", "sparse", 150, 0.5, 0.1),
                SimMatcher::new("sim-semidense", "semi-dense", 400, 1.5, 0.4),
                SimMatcher::new("sim-dense", "dense", 600, 2.5, 0.3).dropping_every(4),
            ],
        }
    }
}

/// Paths of a written bundle.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub root: PathBuf,
    pub homography_manifest: PathBuf,
    pub pose_manifest: PathBuf,
    pub geo_manifest: PathBuf,
    pub matches_dir: PathBuf,
    pub gate_train_manifest: PathBuf,
    pub gate_test_manifest: PathBuf,
    pub gate_matches_dir: PathBuf,
    pub matcher_ids: Vec<String>,
}

/// The matcher whose per-branch matches drive the selector fixture.
pub const GATE_MATCHER: &str = "sim-gate";

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn noise(rng: &mut ChaCha8Rng, sigma: f64) -> (f64, f64) {
    if sigma <= 0.0 {
        return (0.0, 0.0);
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    (n.sample(rng), n.sample(rng))
}

fn clamp_to(p: Point2, size: (u32, u32)) -> Point2 {
    Point2::new(p.x.clamp(0.0, size.0 as f64), p.y.clamp(0.0, size.1 as f64))
}

/// Correspondences through `map`: inliers perturbed by Gaussian noise, the
/// rest uniform in frame B. Points mapping outside frame B are redrawn.
pub fn simulate_matches<F>(
    rng: &mut ChaCha8Rng,
    size_a: (u32, u32),
    size_b: (u32, u32),
    count: usize,
    noise_px: f64,
    outlier_ratio: f64,
    map: F,
) -> MatchSet
where
    F: Fn(Point2) -> Option<Point2>,
{
    let (wa, ha) = (size_a.0 as f64, size_a.1 as f64);
    let (wb, hb) = (size_b.0 as f64, size_b.1 as f64);
    let mut a = Vec::with_capacity(count);
    let mut b = Vec::with_capacity(count);
    let mut attempts = 0;
    while a.len() < count && attempts < count * 50 {
        attempts += 1;
        let pa = Point2::new(rng.random_range(0.0..wa), rng.random_range(0.0..ha));
        if rng.random::<f64>() < outlier_ratio {
            a.push(pa);
            b.push(Point2::new(rng.random_range(0.0..wb), rng.random_range(0.0..hb)));
            continue;
        }
        let Some(pb) = map(pa) else { continue };
        if !(pb.x >= 0.0 && pb.x <= wb && pb.y >= 0.0 && pb.y <= hb) {
            continue;
        }
        let (dx, dy) = noise(rng, noise_px);
        a.push(pa);
        b.push(clamp_to(Point2::new(pb.x + dx, pb.y + dy), size_b));
    }
    MatchSet::from_points(&a, &b)
}

fn record(
    pair: &PairManifest,
    matcher: &SimMatcher,
    branch: BranchId,
    matches: MatchSet,
) -> MatchFileRecord {
    MatchFileRecord {
        pair_id: pair.pair_id.clone(),
        matcher_id: matcher.id.clone(),
        category: Some(matcher.category.clone()),
        branch,
        size_a: pair.ir.size(),
        size_b: pair.vis.size(),
        resize: "max640".into(),
        matches,
        note: None,
    }
}

fn image_ref(path: String, size: (u32, u32)) -> ImageRef {
    ImageRef {
        path,
        width: size.0,
        height: size.1,
    }
}

fn homography_pairs(spec: &BundleSpec) -> Vec<PairManifest> {
    let (w, h) = spec.homography_size;
    (0..spec.homography_pairs)
        .map(|i| {
            let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let s = sample_homography(seed, w, h, &HomographySamplerParams::default())
                .expect("default sampler params are consistent");
            let id = format!("hom-{i:03}");
            PairManifest {
                schema: MANIFEST_SCHEMA.into(),
                pair_id: id.clone(),
                dataset_id: "synthetic-mscm".into(),
                task: Task::Homography,
                ir: image_ref(format!("images/{id}_ir.png"), (w, h)),
                vis: image_ref(format!("images/{id}_vis.png"), (w, h)),
                ground_truth: GroundTruth::Homography(HomographyTruth {
                    seed,
                    width: w,
                    height: h,
                    h: s.ground_truth.to_row_major(),
                    warped: Side::Vis,
                }),
                scene_id: None,
                split_id: None,
            }
        })
        .collect()
}

pub const POSE_SIZE: (u32, u32) = (640, 480);

pub fn pose_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).expect("valid intrinsics")
}

/// Random rotation of up to 15° and a mostly lateral unit translation.
pub fn random_pose(rng: &mut ChaCha8Rng) -> RelativePose {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = if axis.norm() < 1e-3 { Vector3::y() } else { axis };
    let r = axis_angle(axis, rng.random_range(3.0..15.0));
    let t = Vector3::new(
        rng.random_range(0.5..1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 },
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.2..0.2),
    );
    RelativePose::new(r, t).expect("rotation from axis-angle is orthonormal")
}

/// Projects random scene points seen by both cameras. Points are drawn in
/// camera A at depths 4–10.
pub fn pose_correspondences(
    rng: &mut ChaCha8Rng,
    pose: &RelativePose,
    k_a: &CameraIntrinsics,
    k_b: &CameraIntrinsics,
    size: (u32, u32),
    count: usize,
    noise_px: f64,
    outlier_ratio: f64,
) -> MatchSet {
    let (w, h) = (size.0 as f64, size.1 as f64);
    let mut a = Vec::with_capacity(count);
    let mut b = Vec::with_capacity(count);
    let mut attempts = 0;
    while a.len() < count && attempts < count * 100 {
        attempts += 1;
        let pa = Point2::new(rng.random_range(0.0..w), rng.random_range(0.0..h));
        if rng.random::<f64>() < outlier_ratio {
            a.push(pa);
            b.push(Point2::new(rng.random_range(0.0..w), rng.random_range(0.0..h)));
            continue;
        }
        let depth = rng.random_range(4.0..10.0);
        let ray = k_a.normalize(pa);
        let x_a = Vector3::new(ray.x, ray.y, 1.0) * depth;
        let x_b = pose.rotation() * x_a + pose.translation();
        if x_b.z <= 0.1 {
            continue;
        }
        let pb = k_b.project(&x_b);
        if !(pb.x >= 0.0 && pb.x <= w && pb.y >= 0.0 && pb.y <= h) {
            continue;
        }
        let (dx, dy) = noise(rng, noise_px);
        a.push(pa);
        b.push(clamp_to(Point2::new(pb.x + dx, pb.y + dy), size));
    }
    MatchSet::from_points(&a, &b)
}

fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}

fn pose_pairs(spec: &BundleSpec, rng: &mut ChaCha8Rng) -> Vec<(PairManifest, RelativePose)> {
    let k = pose_intrinsics();
    let mut out = Vec::new();
    for (split, scenes) in &spec.pose_splits {
        for s in 0..*scenes {
            let scene = format!("{split}-scene{s}");
            for p in 0..spec.pose_pairs_per_scene {
                let pose = random_pose(rng);
                let id = format!("pose-{scene}-{p}");
                out.push((
                    PairManifest {
                        schema: MANIFEST_SCHEMA.into(),
                        pair_id: id.clone(),
                        dataset_id: "synthetic-vistir".into(),
                        task: Task::Pose,
                        ir: image_ref(format!("images/{id}_ir.png"), POSE_SIZE),
                        vis: image_ref(format!("images/{id}_vis.png"), POSE_SIZE),
                        ground_truth: GroundTruth::Pose(PoseTruth {
                            r: row_major(pose.rotation()),
                            t: [pose.translation().x, pose.translation().y, pose.translation().z],
                            k_ir: Some(k),
                            k_vis: Some(k),
                        }),
                        scene_id: Some(scene.clone()),
                        split_id: Some(split.clone()),
                    },
                    pose,
                ));
            }
        }
    }
    out
}

pub const GEO_THERMAL_SIZE: (u32, u32) = (640, 512);
pub const GEO_SATELLITE_SIZE: (u32, u32) = (1000, 1000);
pub const GEO_METERS_PER_PIXEL: f64 = 0.5;

/// Thermal→satellite similarity placing the thermal frame inside the tile.
pub fn geo_homography(rng: &mut ChaCha8Rng, hard: bool) -> Homography {
    let max_rot: f64 = if hard { 30.0 } else { 8.0 };
    let theta = rng.random_range(-max_rot..max_rot).to_radians();
    let s = rng.random_range(0.9..1.1);
    let (sin, cos) = theta.sin_cos();
    let (cx, cy) = (GEO_THERMAL_SIZE.0 as f64 / 2.0, GEO_THERMAL_SIZE.1 as f64 / 2.0);
    let (tx, ty) = (500.0 + rng.random_range(-60.0..60.0), 500.0 + rng.random_range(-60.0..60.0));
    let m = Matrix3::new(
        s * cos,
        -s * sin,
        tx - s * (cos * cx - sin * cy),
        s * sin,
        s * cos,
        ty - s * (sin * cx + cos * cy),
        0.0,
        0.0,
        1.0,
    );
    Homography::new(m).expect("similarity is invertible")
}

/// Annotation whose satellite points are the exact images of the thermal
/// points under `h`, shifted by `offset_px`.
pub fn geo_annotation(pair_id: &str, h: &Homography, offset_px: (f64, f64)) -> GeoAnnotation {
    let thermal: Vec<Point2> = [(80.0, 64.0), (560.0, 64.0), (320.0, 256.0), (80.0, 448.0), (560.0, 448.0), (200.0, 380.0)]
        .iter()
        .map(|&(x, y)| Point2::new(x, y))
        .collect();
    let satellite = thermal
        .iter()
        .map(|p| {
            let q = h.apply(*p).expect("similarity has no vanishing line");
            Point2::new(q.x + offset_px.0, q.y + offset_px.1)
        })
        .collect();
    GeoAnnotation {
        pair_id: pair_id.into(),
        thermal_points: thermal,
        satellite_points: satellite,
        meters_per_pixel: GEO_METERS_PER_PIXEL,
        note: "synthetic".into(),
    }
}

fn geo_pairs(spec: &BundleSpec, rng: &mut ChaCha8Rng) -> Vec<(PairManifest, Homography, GeoAnnotation)> {
    let mut out = Vec::new();
    for hard in [false, true] {
        for i in 0..spec.geo_pairs {
            let prefix = if hard { "geoh" } else { "geo" };
            let id = format!("{prefix}-{i:03}");
            let h = geo_homography(rng, hard);
            let ann = geo_annotation(&id, &h, (0.0, 0.0));
            out.push((
                PairManifest {
                    schema: MANIFEST_SCHEMA.into(),
                    pair_id: id.clone(),
                    dataset_id: "synthetic-thermosat".into(),
                    task: if hard { Task::GeoHard } else { Task::Geo },
                    ir: image_ref(format!("images/{id}_thermal.png"), GEO_THERMAL_SIZE),
                    vis: image_ref(format!("images/{id}_sat.png"), GEO_SATELLITE_SIZE),
                    ground_truth: GroundTruth::Geo(GeoTruth {
                        annotation: format!("annotations/{id}.jsonl"),
                    }),
                    scene_id: Some(format!("region-{}", i % 4)),
                    split_id: Some(if hard { "hard".into() } else { "base".into() }),
                },
                h,
                ann,
            ));
        }
    }
    out
}

pub const GATE_IMAGE_SIZE: u32 = 96;

/// Texture whose dominant orientation encodes `class`: horizontal stripes,
/// vertical stripes, diagonal stripes, or a checkerboard.
pub fn class_texture(class: usize, rng: &mut ChaCha8Rng, thermal: bool) -> GrayImage {
    let n = GATE_IMAGE_SIZE as usize;
    let period = rng.random_range(6.0..14.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let contrast = if thermal { 70.0 } else { 110.0 };
    let base = if thermal { 100.0 } else { 128.0 };
    let jitter: Vec<f64> = (0..n * n).map(|_| rng.random_range(-8.0..8.0)).collect();
    GrayImage::from_fn(n, n, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let k = std::f64::consts::TAU / period;
        let s = match class {
            0 => (k * yf + phase).sin(),
            1 => (k * xf + phase).sin(),
            2 => (k * (xf + yf) / std::f64::consts::SQRT_2 + phase).sin(),
            _ => (k * xf + phase).sin().signum() * (k * yf + phase).sin().signum(),
        };
        (base + contrast * s + jitter[y * n + x]).round().clamp(0.0, 255.0) as u8
    })
}

struct GatePair {
    manifest: PairManifest,
    class: usize,
    h: Homography,
}

fn gate_pairs(spec: &BundleSpec, root: &Path, rng: &mut ChaCha8Rng) -> Result<Vec<GatePair>, IngestError> {
    let size = (GATE_IMAGE_SIZE, GATE_IMAGE_SIZE);
    let mut out = Vec::new();
    for i in 0..spec.gate_pairs_per_class * 4 {
        let class = i % 4;
        let id = format!("gate-{i:03}");
        let ir_path = format!("images/{id}_ir.png");
        let vis_path = format!("images/{id}_vis.png");
        for (path, thermal) in [(&ir_path, true), (&vis_path, false)] {
            let img = class_texture(class, rng, thermal);
            img.save_png(&root.join(path))
                .map_err(|e| io_err(&root.join(path), std::io::Error::other(e.to_string())))?;
        }
        let h = Homography::translation(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
        out.push(GatePair {
            manifest: PairManifest {
                schema: MANIFEST_SCHEMA.into(),
                pair_id: id,
                dataset_id: "synthetic-gate".into(),
                task: Task::Homography,
                ir: image_ref(ir_path, size),
                vis: image_ref(vis_path, size),
                ground_truth: GroundTruth::Homography(HomographyTruth {
                    seed: i as u64,
                    width: size.0,
                    height: size.1,
                    h: h.to_row_major(),
                    warped: Side::Vis,
                }),
                scene_id: None,
                split_id: None,
            },
            class,
            h,
        });
    }
    Ok(out)
}

/// Writes the bundle under `root`, creating directories as needed.
pub fn write_bundle(root: &Path, spec: &BundleSpec) -> Result<Bundle, IngestError> {
    for dir in ["matches", "annotations", "images", "gate_matches"] {
        let p = root.join(dir);
        fs::create_dir_all(&p).map_err(|e| io_err(&p, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut per_matcher: Vec<Vec<MatchFileRecord>> = vec![Vec::new(); spec.matchers.len()];

    let hom = homography_pairs(spec);
    for (i, pair) in hom.iter().enumerate() {
        let h = pair.homography().expect("sampled homography");
        for (m, sim) in spec.matchers.iter().enumerate() {
            if sim.drop_every > 0 && i % sim.drop_every == sim.drop_every - 1 {
                continue;
            }
            let set = simulate_matches(&mut rng, pair.ir.size(), pair.vis.size(), sim.count, sim.noise_px, sim.outlier_ratio, |p| h.apply(p).ok());
            per_matcher[m].push(record(pair, sim, BranchId::None, set));
        }
    }
    let hom_path = root.join("homography.jsonl");
    write_manifest(&hom_path, &hom)?;

    let pose = pose_pairs(spec, &mut rng);
    let k = pose_intrinsics();
    for (i, (pair, gt)) in pose.iter().enumerate() {
        for (m, sim) in spec.matchers.iter().enumerate() {
            if sim.drop_every > 0 && i % sim.drop_every == sim.drop_every - 1 {
                continue;
            }
            let count = sim.count.min(300);
            let set = pose_correspondences(&mut rng, gt, &k, &k, POSE_SIZE, count, sim.noise_px * 0.5, sim.outlier_ratio);
            per_matcher[m].push(record(pair, sim, BranchId::None, set));
        }
    }
    let pose_path = root.join("pose.jsonl");
    write_manifest(&pose_path, &pose.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>())?;

    let geo = geo_pairs(spec, &mut rng);
    for (i, (pair, h, ann)) in geo.iter().enumerate() {
        write_geo_annotation(&root.join(format!("annotations/{}.jsonl", pair.pair_id)), ann)?;
        for (m, sim) in spec.matchers.iter().enumerate() {
            if sim.drop_every > 0 && i % sim.drop_every == sim.drop_every - 1 {
                continue;
            }
            let hard = pair.task == Task::GeoHard;
            let noise = if hard { sim.noise_px * 2.0 } else { sim.noise_px };
            let outliers = if hard { (sim.outlier_ratio + 0.3).min(0.9) } else { sim.outlier_ratio };
            let set = simulate_matches(&mut rng, pair.ir.size(), pair.vis.size(), sim.count, noise, outliers, |p| h.apply(p).ok());
            per_matcher[m].push(record(pair, sim, BranchId::None, set));
        }
    }
    let geo_path = root.join("geo.jsonl");
    write_manifest(&geo_path, &geo.iter().map(|(p, _, _)| p.clone()).collect::<Vec<_>>())?;

    let matches_dir = root.join("matches");
    for (sim, records) in spec.matchers.iter().zip(&per_matcher) {
        write_matches(&matches_dir.join(format!("{}.jsonl", sim.id)), records)?;
    }

    // Selector fixture: the branch matching the texture class gets clean
    // matches, every other branch gets fewer, noisier ones.
    let gate = gate_pairs(spec, root, &mut rng)?;
    let sim = SimMatcher::new(GATE_MATCHER, "sparse", 0, 0.0, 0.0);
    let mut gate_records = Vec::new();
    for gp in &gate {
        for branch in BranchId::ALL {
            let good = branch.index() == gp.class;
            let (count, noise, outliers) = if good { (80, 0.3, 0.1) } else { (40, 2.5, 0.5) };
            let set = simulate_matches(&mut rng, gp.manifest.ir.size(), gp.manifest.vis.size(), count, noise, outliers, |p| gp.h.apply(p).ok());
            gate_records.push(record(&gp.manifest, &sim, branch, set));
        }
    }
    let gate_matches_dir = root.join("gate_matches");
    write_matches(&gate_matches_dir.join(format!("{GATE_MATCHER}.jsonl")), &gate_records)?;
    let (train, test): (Vec<&GatePair>, Vec<&GatePair>) = gate.iter().partition(|g| {
        let idx: usize = g.manifest.pair_id[5..].parse().unwrap_or(0);
        (idx / 4) % 3 != 2
    });
    let gate_train_manifest = root.join("gate_train.jsonl");
    let gate_test_manifest = root.join("gate_test.jsonl");
    write_manifest(&gate_train_manifest, &train.iter().map(|g| g.manifest.clone()).collect::<Vec<_>>())?;
    write_manifest(&gate_test_manifest, &test.iter().map(|g| g.manifest.clone()).collect::<Vec<_>>())?;

    let readme = "Synthetic benchmark bundle generated by cmbench::fixture.\n";
    write_atomic(&root.join("README.txt"), readme.as_bytes())?;

    Ok(Bundle {
        root: root.to_path_buf(),
        homography_manifest: hom_path,
        pose_manifest: pose_path,
        geo_manifest: geo_path,
        matches_dir,
        gate_train_manifest,
        gate_test_manifest,
        gate_matches_dir,
        matcher_ids: spec.matchers.iter().map(|m| m.id.clone()).collect(),
    })
}
