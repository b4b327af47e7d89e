use std::time::Instant;

use cmbench::estimate::{estimate_relative_pose, ransac_homography, RansacConfig};
use cmbench::geometry::{CameraIntrinsics, MatchSet, Point2, RelativePose};
use cmbench::synth::{sample_homography, HomographySamplerParams};
use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{rng, Outcome};

pub fn map(m: &[f64; 9], x: f64, y: f64) -> (f64, f64) {
    let w = m[6] * x + m[7] * y + m[8];
    ((m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w)
}

/// Mean displacement of the four frame corners between two transforms.
pub fn corner_error(est: &[f64; 9], gt: &[f64; 9], w: f64, h: f64) -> f64 {
    [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
        .iter()
        .map(|&(x, y)| {
            let (ax, ay) = map(est, x, y);
            let (bx, by) = map(gt, x, y);
            (ax - bx).hypot(ay - by)
        })
        .sum::<f64>()
        / 4.0
}

/// 200 correspondences: 30 % uniform outliers, the rest on `gt` plus
/// Gaussian noise.
pub fn contaminated(r: &mut impl Rng, gt: &[f64; 9], w: f64, h: f64, sigma: f64) -> MatchSet {
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    while a.len() < 200 {
        let pa = (r.random_range(0.0..w), r.random_range(0.0..h));
        if a.len() % 10 < 3 {
            a.push(Point2::new(pa.0, pa.1));
            b.push(Point2::new(r.random_range(0.0..w), r.random_range(0.0..h)));
            continue;
        }
        let (x, y) = map(gt, pa.0, pa.1);
        if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
            continue;
        }
        a.push(Point2::new(pa.0, pa.1));
        b.push(Point2::new(x + noise.sample(r), y + noise.sample(r)));
    }
    MatchSet::from_points(&a, &b)
}

pub fn ransac_contamination() -> Outcome {
    let start = Instant::now();
    let (w, h) = (640.0, 480.0);
    let mut accurate = 0;
    for trial in 0..100u64 {
        let gt = sample_homography(50_000 + trial, 640, 480, &HomographySamplerParams::default())
            .unwrap()
            .ground_truth
            .to_row_major();
        let matches = contaminated(&mut rng(trial), &gt, w, h, 0.5);
        let res = ransac_homography(&matches, &RansacConfig::default().with_seed(trial));
        if let Some(est) = res.model.filter(|_| res.is_success()) {
            if corner_error(&est.to_row_major(), &gt, w, h) <= 1.0 {
                accurate += 1;
            }
        }
    }
    let mut rejected = 0;
    for trial in 0..100u64 {
        let mut r = rng(900 + trial);
        let mut a = Vec::new();
        let mut b = Vec::new();
        for _ in 0..200 {
            a.push(Point2::new(r.random_range(0.0..w), r.random_range(0.0..h)));
            b.push(Point2::new(r.random_range(0.0..w), r.random_range(0.0..h)));
        }
        let res = ransac_homography(&MatchSet::from_points(&a, &b), &RansacConfig::default().with_seed(trial));
        if !res.is_success() || res.inlier_count < 8 {
            rejected += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        accurate >= 95 && rejected >= 99 && secs < 60.0,
        format!("corner error <= 1 px in {accurate}/100, all-outlier rejected {rejected}/100, {secs:.1}s"),
    )
}

pub fn rotation_error_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = (((a * b.transpose()).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

pub fn direction_error_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos().to_degrees()
}

pub struct PoseFixture {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub k: CameraIntrinsics,
    pub matches: MatchSet,
}

/// Points in front of both cameras, `x_b = R x_a + t`, noise-free pixels.
pub fn pose_fixture(r: &mut impl Rng, n: usize) -> PoseFixture {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
    let axis = Unit::new_normalize(Vector3::new(
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
    ));
    let rotation = *Rotation3::from_axis_angle(&axis, r.random_range(3.0f64..20.0).to_radians()).matrix();
    let translation = Vector3::new(
        r.random_range(-1.0..1.0),
        r.random_range(-0.5..0.5),
        r.random_range(-0.3..0.3),
    )
    .normalize();
    let mut a = Vec::new();
    let mut b = Vec::new();
    while a.len() < n {
        let (u, v, z) = (r.random_range(0.0..640.0), r.random_range(0.0..480.0), r.random_range(4.0..12.0));
        let xa = Vector3::new((u - 320.0) / 500.0 * z, (v - 240.0) / 500.0 * z, z);
        let xb = rotation * xa + translation;
        if xb.z < 0.5 {
            continue;
        }
        a.push(Point2::new(u, v));
        b.push(Point2::new(500.0 * xb.x / xb.z + 320.0, 500.0 * xb.y / xb.z + 240.0));
    }
    PoseFixture {
        rotation,
        translation,
        k,
        matches: MatchSet::from_points(&a, &b),
    }
}

pub fn pose_recovery() -> Outcome {
    let mut worst_r = 0.0f64;
    let mut worst_t = 0.0f64;
    let mut failures = 0;
    for trial in 0..20u64 {
        let f = pose_fixture(&mut rng(7000 + trial), 100);
        let res = estimate_relative_pose(&f.matches, &f.k, &f.k, &RansacConfig::default().with_seed(trial));
        match res.model.filter(|_| res.is_success()) {
            Some(est) => {
                worst_r = worst_r.max(rotation_error_deg(est.rotation(), &f.rotation));
                worst_t = worst_t.max(direction_error_deg(est.translation(), &f.translation));
            }
            None => failures += 1,
        }
    }
    Outcome::new(
        failures == 0 && worst_r <= 0.1 && worst_t <= 0.5,
        format!("20 zero-noise fixtures: {failures} failed, max rotation error {worst_r:.2e} deg, max translation error {worst_t:.2e} deg"),
    )
}

pub fn gt_pose(f: &PoseFixture) -> RelativePose {
    RelativePose::new(f.rotation, f.translation).unwrap()
}
