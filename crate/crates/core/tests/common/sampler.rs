use cmbench::synth::{sample_homography, HomographySamplerParams, SyntheticPair, TransformParams};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use super::{rng, Outcome};

pub const W: u32 = 640;
pub const H: u32 = 480;

/// The sampler's transform written as a point map: rotate and scale about
/// the frame center, apply the projective row, shift back, translate.
pub fn reference_map(p: &TransformParams, w: f64, h: f64, x: f64, y: f64) -> (f64, f64) {
    let (cx, cy) = (w / 2.0, h / 2.0);
    let (sin, cos) = p.rotation_deg.to_radians().sin_cos();
    let (ux, uy) = (x - cx, y - cy);
    let vx = p.scale * (cos * ux - sin * uy);
    let vy = p.scale * (sin * ux + cos * uy);
    let d = 1.0 + p.perspective[0] / w * vx + p.perspective[1] / h * vy;
    (vx / d + cx + p.translation[0] * w, vy / d + cy + p.translation[1] * h)
}

pub fn in_bounds(p: &TransformParams) -> bool {
    (0.65..=1.35).contains(&p.scale)
        && p.rotation_deg.abs() <= 25.0
        && p.perspective.iter().all(|v| v.abs() <= 0.23)
        && p.translation.iter().all(|v| v.abs() <= 0.17)
}

fn source_of(inv: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let q = inv * Vector3::new(x, y, 1.0);
    (q.x / q.z, q.y / q.z)
}

fn covered(inv: &Matrix3<f64>, x: f64, y: f64, w: f64, h: f64) -> bool {
    let (sx, sy) = source_of(inv, x, y);
    (0.0..=w).contains(&sx) && (0.0..=h).contains(&sy)
}

/// Share of target-frame cell centers whose preimage lies in the source frame.
pub fn grid_overlap(pair: &SyntheticPair, nx: usize, ny: usize) -> f64 {
    let (w, h) = (pair.source_size.0 as f64, pair.source_size.1 as f64);
    let inv = pair.ground_truth.matrix().try_inverse().expect("invertible");
    let mut hit = 0usize;
    for j in 0..ny {
        for i in 0..nx {
            let x = (i as f64 + 0.5) * w / nx as f64;
            let y = (j as f64 + 0.5) * h / ny as f64;
            hit += covered(&inv, x, y, w, h) as usize;
        }
    }
    hit as f64 / (nx * ny) as f64
}

pub fn monte_carlo_overlap(pair: &SyntheticPair, samples: usize, seed: u64) -> f64 {
    let (w, h) = (pair.source_size.0 as f64, pair.source_size.1 as f64);
    let inv = pair.ground_truth.matrix().try_inverse().expect("invertible");
    let mut r = rng(seed);
    let hit = (0..samples)
        .filter(|_| covered(&inv, r.random_range(0.0..w), r.random_range(0.0..h), w, h))
        .count();
    hit as f64 / samples as f64
}

pub fn sampler_bounds() -> Outcome {
    let params = HomographySamplerParams::default();
    let (w, h) = (W as f64, H as f64);
    let mut out_of_bounds = 0;
    let mut map_mismatch = 0;
    let mut low_overlap = 0;
    let mut worst_grid = 0.0f64;
    let mut worst_mc = 0.0f64;
    let mut nondeterministic = 0;
    for seed in 0..10_000u64 {
        let pair = sample_homography(seed, W, H, &params).expect("sampling succeeds");
        if !in_bounds(&pair.parameters) {
            out_of_bounds += 1;
        }
        let m = pair.ground_truth.to_row_major();
        for &(x, y) in &[(0.0, 0.0), (w, 0.0), (w, h), (0.0, h), (w / 3.0, h / 4.0)] {
            let (ex, ey) = reference_map(&pair.parameters, w, h, x, y);
            let d = m[6] * x + m[7] * y + m[8];
            let (gx, gy) = ((m[0] * x + m[1] * y + m[2]) / d, (m[3] * x + m[4] * y + m[5]) / d);
            if (ex - gx).hypot(ey - gy) > 1e-7 {
                map_mismatch += 1;
            }
        }
        if pair.overlap < 0.60 {
            low_overlap += 1;
        }
        worst_grid = worst_grid.max((grid_overlap(&pair, 128, 96) - pair.overlap).abs());
        if seed < 20 {
            worst_mc = worst_mc.max((monte_carlo_overlap(&pair, 1_000_000, seed) - pair.overlap).abs());
        }
        if seed < 200 {
            let again = sample_homography(seed, W, H, &params).unwrap();
            let bits = |p: &SyntheticPair| p.ground_truth.to_row_major().map(f64::to_bits);
            if bits(&again) != bits(&pair) {
                nondeterministic += 1;
            }
        }
    }
    Outcome::new(
        out_of_bounds == 0
            && map_mismatch == 0
            && low_overlap == 0
            && worst_grid <= 0.02
            && worst_mc <= 2e-3
            && nondeterministic == 0,
        format!(
            "10^4 draws: {out_of_bounds} out of bounds, {map_mismatch} transform mismatches, {low_overlap} below 0.60 overlap; \
             overlap vs grid {worst_grid:.1e}, vs Monte Carlo {worst_mc:.1e}; {nondeterministic} non-reproducible"
        ),
    )
}
