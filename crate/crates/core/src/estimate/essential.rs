use nalgebra::{DMatrix, Matrix2, Matrix3, Vector2, Vector3, SVD};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{hartley_transform, null_space, transform_point};
use super::{EstimationResult, FailureReason, RansacConfig};
use crate::geometry::{CameraIntrinsics, MatchSet, Point2, RelativePose};

/// Below this ratio of the 8th to the 1st singular value the epipolar
/// system has more than a one-dimensional solution space.
const RANK_TOL: f64 = 1e-8;
const MIN_CHEIRALITY_SHARE: f64 = 0.5;

/// Essential matrix from ≥ 8 normalized-plane correspondences, with
/// singular values projected to (1, 1, 0). Convention: `x2ᵀ E x1 = 0`.
pub fn eight_point(x1: &[Point2], x2: &[Point2]) -> Option<Matrix3<f64>> {
    eight_point_with_rank(x1, x2).map(|(e, _)| e)
}

/// Also returns σ₈/σ₁ of the design matrix as a degeneracy indicator.
fn eight_point_with_rank(x1: &[Point2], x2: &[Point2]) -> Option<(Matrix3<f64>, f64)> {
    if x1.len() < 8 || x1.len() != x2.len() {
        return None;
    }
    let t1 = hartley_transform(x1)?;
    let t2 = hartley_transform(x2)?;
    let mut a = DMatrix::<f64>::zeros(x1.len(), 9);
    for (i, (p, q)) in x1.iter().zip(x2).enumerate() {
        let p = transform_point(&t1, p);
        let q = transform_point(&t2, q);
        let row = [
            q.x * p.x,
            q.x * p.y,
            q.x,
            q.y * p.x,
            q.y * p.y,
            q.y,
            p.x,
            p.y,
            1.0,
        ];
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    let ns = null_space(a)?;
    let sv = &ns.singular_values;
    if sv[0] <= 0.0 {
        return None;
    }
    let rank_ratio = sv[7] / sv[0];
    let v = &ns.vector;
    let e_norm = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let e = t2.transpose() * e_norm * t1;
    let svd = SVD::new(e, true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let projected = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t;
    projected
        .iter()
        .all(|x| x.is_finite())
        .then_some((projected, rank_ratio))
}

/// First-order geometric (Sampson) distance of a correspondence to the
/// epipolar constraint, in normalized-plane units.
pub fn sampson_distance(e: &Matrix3<f64>, x1: &Point2, x2: &Point2) -> f64 {
    let p = Vector3::new(x1.x, x1.y, 1.0);
    let q = Vector3::new(x2.x, x2.y, 1.0);
    let ep = e * p;
    let etq = e.transpose() * q;
    let num = q.dot(&ep);
    let den = ep.x * ep.x + ep.y * ep.y + etq.x * etq.x + etq.y * etq.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    (num * num / den).sqrt()
}

/// The four (R, t) factorizations of an essential matrix.
pub fn decompose_essential(e: &Matrix3<f64>) -> Option<[(Matrix3<f64>, Vector3<f64>); 4]> {
    let svd = SVD::new(*e, true, true);
    let mut u = svd.u?;
    let mut v_t = svd.v_t?;
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t = u.column(2).into_owned();
    Some([(r1, t), (r1, -t), (r2, t), (r2, -t)])
}

/// Depths `(d1, d2)` minimizing `‖d2·x2 − (d1·R·x1 + t)‖` (midpoint triangulation).
fn triangulate_depths(r: &Matrix3<f64>, t: &Vector3<f64>, x1: &Point2, x2: &Point2) -> Option<(f64, f64)> {
    let a = r * Vector3::new(x1.x, x1.y, 1.0);
    let b = Vector3::new(x2.x, x2.y, 1.0);
    // Normal equations of [a, -b] [d1, d2]ᵀ = -t.
    let m = Matrix2::new(a.dot(&a), -a.dot(&b), -a.dot(&b), b.dot(&b));
    let rhs = Vector2::new(-a.dot(t), b.dot(t));
    let sol = m.try_inverse()? * rhs;
    (sol.x.is_finite() && sol.y.is_finite()).then_some((sol.x, sol.y))
}

fn parallax_angle(r: &Matrix3<f64>, x1: &Point2, x2: &Point2) -> f64 {
    let a = r * Vector3::new(x1.x, x1.y, 1.0);
    let b = Vector3::new(x2.x, x2.y, 1.0);
    a.cross(&b).norm().atan2(a.dot(&b))
}

fn orthonormalize(r: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = SVD::new(*r, true, true);
    let out = svd.u? * svd.v_t?;
    (out.determinant() > 0.0).then_some(out)
}

/// Relative pose of camera B with respect to camera A from pixel matches.
///
/// The inlier test thresholds the Sampson distance at
/// `cfg.threshold / mean focal length`, so the threshold stays in pixels.
pub fn estimate_relative_pose(
    matches: &MatchSet,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> EstimationResult<RelativePose> {
    let n = matches.len();
    if cfg.validate().is_err() || k1.validate().is_err() || k2.validate().is_err() {
        return EstimationResult::failed(n, FailureReason::InvalidConfig, 0);
    }
    if n < 8 {
        return EstimationResult::failed(n, FailureReason::TooFewMatches, 0);
    }
    let x1: Vec<Point2> = matches.iter().map(|c| k1.normalize(c.a)).collect();
    let x2: Vec<Point2> = matches.iter().map(|c| k2.normalize(c.b)).collect();
    let threshold = cfg.threshold / (0.5 * (k1.mean_focal() + k2.mean_focal()));

    let mask_for = |e: &Matrix3<f64>| -> Vec<bool> {
        x1.iter()
            .zip(&x2)
            .map(|(p, q)| sampson_distance(e, p, q) < threshold)
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Matrix3<f64>, Vec<bool>, usize)> = None;
    let mut needed = cfg.max_iterations;
    let mut iterations = 0;
    let mut s1 = Vec::with_capacity(8);
    let mut s2 = Vec::with_capacity(8);
    while iterations < needed {
        iterations += 1;
        s1.clear();
        s2.clear();
        for i in sample(&mut rng, n, 8).iter() {
            s1.push(x1[i]);
            s2.push(x2[i]);
        }
        let Some(e) = eight_point(&s1, &s2) else {
            continue;
        };
        let mask = mask_for(&e);
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|(_, _, c)| count > *c) {
            needed = cfg.required_iterations(count as f64 / n as f64, 8).max(iterations);
            best = Some((e, mask, count));
        }
    }
    let Some((mut e, mut mask, mut count)) = best else {
        return EstimationResult::failed(n, FailureReason::NoConsensus, iterations);
    };
    if count < 8 {
        return EstimationResult::failed(n, FailureReason::NoConsensus, iterations);
    }

    let mut rank_ratio = f64::INFINITY;
    for _ in 0..5 {
        let (i1, i2): (Vec<Point2>, Vec<Point2>) = x1
            .iter()
            .zip(&x2)
            .zip(&mask)
            .filter_map(|((p, q), &m)| m.then_some((*p, *q)))
            .unzip();
        let Some((refit, ratio)) = eight_point_with_rank(&i1, &i2) else {
            break;
        };
        rank_ratio = ratio;
        let refit_mask = mask_for(&refit);
        let refit_count = refit_mask.iter().filter(|&&b| b).count();
        if refit_count < count {
            break;
        }
        let changed = refit_mask != mask;
        e = refit;
        mask = refit_mask;
        count = refit_count;
        if !changed {
            break;
        }
    }
    if rank_ratio < RANK_TOL {
        return EstimationResult::failed(n, FailureReason::DegenerateMotion, iterations);
    }

    let Some(candidates) = decompose_essential(&e) else {
        return EstimationResult::failed(n, FailureReason::NoConsensus, iterations);
    };
    let inlier_idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let (best_r, best_t, front) = candidates
        .iter()
        .map(|(r, t)| {
            let front = inlier_idx
                .iter()
                .filter(|&&i| {
                    triangulate_depths(r, t, &x1[i], &x2[i]).is_some_and(|(d1, d2)| d1 > 0.0 && d2 > 0.0)
                })
                .count();
            (*r, *t, front)
        })
        .fold(None::<(Matrix3<f64>, Vector3<f64>, usize)>, |acc, cand| match acc {
            Some(a) if a.2 >= cand.2 => Some(a),
            _ => Some(cand),
        })
        .expect("four candidates");
    if (front as f64) < MIN_CHEIRALITY_SHARE * inlier_idx.len() as f64 {
        return EstimationResult::failed(n, FailureReason::Cheirality, iterations);
    }

    let mut parallax: Vec<f64> = inlier_idx
        .iter()
        .map(|&i| parallax_angle(&best_r, &x1[i], &x2[i]))
        .collect();
    parallax.sort_by(f64::total_cmp);
    if parallax[parallax.len() / 2] < threshold {
        return EstimationResult::failed(n, FailureReason::DegenerateMotion, iterations);
    }

    let Some(rotation) = orthonormalize(&best_r) else {
        return EstimationResult::failed(n, FailureReason::NoConsensus, iterations);
    };
    match RelativePose::new(rotation, best_t) {
        Ok(pose) => EstimationResult::success(pose, mask, iterations),
        Err(_) => EstimationResult::failed(n, FailureReason::NoConsensus, iterations),
    }
}
