use nalgebra::{DMatrix, Matrix3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::linalg::{degenerate_quad, hartley_transform, null_space, transform_point};
use super::{inlier_mask, EstimateError, EstimationResult, FailureReason, RansacConfig};
use crate::geometry::{Correspondence, Homography, MatchSet, Point2};

const COLLINEAR_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-12;
const MAX_REFITS: usize = 5;

/// Normalized DLT fit of a homography mapping A-side points onto B-side points.
pub fn dlt_homography(matches: &MatchSet) -> Result<Homography, EstimateError> {
    dlt(matches.pairs())
}

fn dlt(pairs: &[Correspondence]) -> Result<Homography, EstimateError> {
    if pairs.len() < 4 {
        return Err(EstimateError::TooFewPoints {
            needed: 4,
            got: pairs.len(),
        });
    }
    if pairs.len() == 4 {
        let src = [pairs[0].a, pairs[1].a, pairs[2].a, pairs[3].a];
        let dst = [pairs[0].b, pairs[1].b, pairs[2].b, pairs[3].b];
        if degenerate_quad(&src, COLLINEAR_TOL) || degenerate_quad(&dst, COLLINEAR_TOL) {
            return Err(EstimateError::DegenerateConfiguration("collinear points"));
        }
    }
    let src: Vec<Point2> = pairs.iter().map(|c| c.a).collect();
    let dst: Vec<Point2> = pairs.iter().map(|c| c.b).collect();
    let t_src = hartley_transform(&src)
        .ok_or(EstimateError::DegenerateConfiguration("coincident source points"))?;
    let t_dst = hartley_transform(&dst)
        .ok_or(EstimateError::DegenerateConfiguration("coincident target points"))?;

    let mut a = DMatrix::<f64>::zeros(2 * pairs.len(), 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let p = transform_point(&t_src, s);
        let q = transform_point(&t_dst, d);
        let r = 2 * i;
        a[(r, 0)] = -p.x;
        a[(r, 1)] = -p.y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = q.x * p.x;
        a[(r, 7)] = q.x * p.y;
        a[(r, 8)] = q.x;
        a[(r + 1, 3)] = -p.x;
        a[(r + 1, 4)] = -p.y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = q.y * p.x;
        a[(r + 1, 7)] = q.y * p.y;
        a[(r + 1, 8)] = q.y;
    }
    let ns = null_space(a).ok_or(EstimateError::DegenerateConfiguration("SVD failed"))?;
    let sv = &ns.singular_values;
    if sv[0] <= 0.0 || sv[7] / sv[0] < RANK_TOL {
        return Err(EstimateError::DegenerateConfiguration("rank-deficient system"));
    }
    let v = &ns.vector;
    let h_norm = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let t_dst_inv = t_dst
        .try_inverse()
        .ok_or(EstimateError::DegenerateConfiguration("normalization"))?;
    Homography::new(t_dst_inv * h_norm * t_src)
        .map_err(|_| EstimateError::DegenerateConfiguration("singular homography"))
}

/// A hypothesis whose sample points straddle the line at infinity cannot be
/// a valid mapping of the sampled region.
fn consistent_depths(h: &Homography, sample: &[Correspondence]) -> bool {
    let m = h.matrix();
    let mut sign = 0.0f64;
    for c in sample {
        let w = m[(2, 0)] * c.a.x + m[(2, 1)] * c.a.y + m[(2, 2)];
        if sign != 0.0 && w.signum() != sign {
            return false;
        }
        sign = w.signum();
    }
    true
}

/// Hypothesize-and-verify homography fit with adaptive stopping and a final
/// least-squares refit on the consensus set.
pub fn ransac_homography(matches: &MatchSet, cfg: &RansacConfig) -> EstimationResult<Homography> {
    let n = matches.len();
    if cfg.validate().is_err() {
        return EstimationResult::failed(n, FailureReason::InvalidConfig, 0);
    }
    if n < 4 {
        return EstimationResult::failed(n, FailureReason::TooFewMatches, 0);
    }
    let pairs = matches.pairs();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(Homography, Vec<bool>, usize)> = None;
    let mut needed = cfg.max_iterations;
    let mut iterations = 0;
    let mut sample_buf = [pairs[0]; 4];

    while iterations < needed {
        iterations += 1;
        let idx = sample(&mut rng, n, 4);
        for (slot, i) in sample_buf.iter_mut().zip(idx.iter()) {
            *slot = pairs[i];
        }
        let Ok(h) = dlt(&sample_buf) else {
            continue;
        };
        if !consistent_depths(&h, &sample_buf) {
            continue;
        }
        let mask = inlier_mask(&h, matches, cfg.threshold);
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|(_, _, c)| count > *c) {
            needed = cfg.required_iterations(count as f64 / n as f64, 4).max(iterations);
            best = Some((h, mask, count));
        }
    }

    let Some((mut h, mut mask, mut count)) = best else {
        return EstimationResult::failed(n, FailureReason::NoConsensus, iterations);
    };
    if count < 4 {
        return EstimationResult::failed(n, FailureReason::NoConsensus, iterations);
    }

    for _ in 0..MAX_REFITS {
        let inliers: Vec<Correspondence> = pairs
            .iter()
            .zip(&mask)
            .filter_map(|(c, &m)| m.then_some(*c))
            .collect();
        let Ok(refit) = dlt(&inliers) else {
            break;
        };
        let refit_mask = inlier_mask(&refit, matches, cfg.threshold);
        let refit_count = refit_mask.iter().filter(|&&b| b).count();
        if refit_count < count {
            break;
        }
        let changed = refit_mask != mask;
        h = refit;
        mask = refit_mask;
        count = refit_count;
        if !changed {
            break;
        }
    }
    EstimationResult::success(h, mask, iterations)
}
