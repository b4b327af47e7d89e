//! Random homographies for the synthetic homography-estimation task.
//!
//! A sampled transform is composed, in this order, from
//!
//! 1. isotropic scale `s` and rotation `θ` about the image center,
//! 2. a perspective perturbation of the projective row, `(p0 / w, p1 / h)`,
//!    also anchored at the center,
//! 3. a translation of `(tx * w, ty * h)`.
//!
//! so `H = T · C · P · A · C⁻¹` where `C` moves the origin to the center.
//! [`decompose`] inverts that construction exactly.

use nalgebra::{Matrix2, Matrix3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Homography, Point2};

/// Maximum number of rejected draws before sampling gives up.
pub const MAX_DRAWS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("no sample reached the overlap requirement after {0} draws")]
    SamplingExhausted(usize),
    #[error("warped frame corners are degenerate")]
    DegenerateQuad,
    #[error("invalid sampler parameters: {0}")]
    InvalidParams(String),
    #[error("image size {width}x{height} is below the 32px minimum")]
    ImageTooSmall { width: u32, height: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub low: f64,
    pub high: f64,
}

impl ParamRange {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { low: v, high: v }
    }

    pub fn contains(&self, v: f64, slack: f64) -> bool {
        v >= self.low - slack && v <= self.high + slack
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.random_range(self.low..=self.high)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomographySamplerParams {
    pub scale: ParamRange,
    /// Degrees.
    pub rotation: ParamRange,
    /// Dimensionless; divided by width / height to form the projective row.
    pub perspective: ParamRange,
    /// Fraction of width / height.
    pub translation: ParamRange,
    pub min_overlap: f64,
}

impl Default for HomographySamplerParams {
    fn default() -> Self {
        Self {
            scale: ParamRange::new(0.65, 1.35),
            rotation: ParamRange::new(-25.0, 25.0),
            perspective: ParamRange::new(-0.23, 0.23),
            translation: ParamRange::new(-0.17, 0.17),
            min_overlap: 0.60,
        }
    }
}

impl HomographySamplerParams {
    /// Every range collapsed onto the identity transform.
    pub fn identity() -> Self {
        Self {
            scale: ParamRange::fixed(1.0),
            rotation: ParamRange::fixed(0.0),
            perspective: ParamRange::fixed(0.0),
            translation: ParamRange::fixed(0.0),
            min_overlap: 0.60,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, r) in [
            ("scale", self.scale),
            ("rotation", self.rotation),
            ("perspective", self.perspective),
            ("translation", self.translation),
        ] {
            if !(r.low.is_finite() && r.high.is_finite() && r.low <= r.high) {
                return Err(SynthError::InvalidParams(format!(
                    "{name} range [{}, {}]",
                    r.low, r.high
                )));
            }
        }
        if self.scale.low <= 0.0 {
            return Err(SynthError::InvalidParams("scale must be positive".into()));
        }
        if !(self.min_overlap > 0.0 && self.min_overlap <= 1.0) {
            return Err(SynthError::InvalidParams(format!(
                "min_overlap {} outside (0, 1]",
                self.min_overlap
            )));
        }
        Ok(())
    }
}

/// The parameter draw behind one sampled homography.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub scale: f64,
    pub rotation_deg: f64,
    pub perspective: [f64; 2],
    pub translation: [f64; 2],
}

impl TransformParams {
    pub fn within(&self, params: &HomographySamplerParams, slack: f64) -> bool {
        params.scale.contains(self.scale, slack)
            && params.rotation.contains(self.rotation_deg, slack)
            && self
                .perspective
                .iter()
                .all(|&p| params.perspective.contains(p, slack))
            && self
                .translation
                .iter()
                .all(|&t| params.translation.contains(t, slack))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticPair {
    pub ground_truth: Homography,
    pub source_size: (u32, u32),
    pub target_size: (u32, u32),
    pub seed: u64,
    pub parameters: TransformParams,
    pub overlap: f64,
    pub draws: usize,
}

/// Serialized form embedded in pair manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPairRecord {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    #[serde(rename = "H")]
    pub h: [f64; 9],
}

impl SyntheticPair {
    pub fn to_record(&self) -> SyntheticPairRecord {
        SyntheticPairRecord {
            seed: self.seed,
            width: self.source_size.0,
            height: self.source_size.1,
            h: self.ground_truth.to_row_major(),
        }
    }
}

/// Builds the transform for one parameter draw on a `width` x `height` frame.
pub fn compose(params: &TransformParams, width: f64, height: f64) -> Result<Homography, GeometryError> {
    let (cx, cy) = (width / 2.0, height / 2.0);
    let (sin, cos) = params.rotation_deg.to_radians().sin_cos();
    let s = params.scale;
    let a = Matrix3::new(s * cos, -s * sin, 0.0, s * sin, s * cos, 0.0, 0.0, 0.0, 1.0);
    let p = Matrix3::new(
        1.0,
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
        params.perspective[0] / width,
        params.perspective[1] / height,
        1.0,
    );
    let c = translation(cx, cy);
    let c_inv = translation(-cx, -cy);
    let t = translation(params.translation[0] * width, params.translation[1] * height);
    Homography::new(t * c * p * a * c_inv)
}

fn translation(tx: f64, ty: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0)
}

/// Recovers the construction parameters of a transform produced by [`compose`].
///
/// Returns `None` when the linear block is not a positive similarity.
pub fn decompose(h: &Homography, width: f64, height: f64) -> Option<TransformParams> {
    let (cx, cy) = (width / 2.0, height / 2.0);
    // G = C⁻¹ H C = T P A, with G[2][2] == 1 after normalization.
    let g = translation(-cx, -cy) * h.matrix() * translation(cx, cy);
    let g = g / g[(2, 2)];
    let t = Vector2::new(g[(0, 2)], g[(1, 2)]);
    let b = Vector2::new(g[(2, 0)], g[(2, 1)]);
    let top = Matrix2::new(g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)]);
    let sr = top - t * b.transpose();
    let det = sr.determinant();
    if det <= 0.0 {
        return None;
    }
    let scale = det.sqrt();
    let rotation_deg = sr[(1, 0)].atan2(sr[(0, 0)]).to_degrees();
    let p = sr.transpose().try_inverse()? * b;
    Some(TransformParams {
        scale,
        rotation_deg,
        perspective: [p.x * width, p.y * height],
        translation: [t.x / width, t.y / height],
    })
}

/// Samples a ground-truth homography whose warped frame covers at least
/// `params.min_overlap` of the target frame. Deterministic in `seed`.
pub fn sample_homography(
    seed: u64,
    width: u32,
    height: u32,
    params: &HomographySamplerParams,
) -> Result<SyntheticPair, SynthError> {
    if width < 32 || height < 32 {
        return Err(SynthError::ImageTooSmall { width, height });
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    for draw in 1..=MAX_DRAWS {
        let drawn = TransformParams {
            scale: params.scale.draw(&mut rng),
            rotation_deg: params.rotation.draw(&mut rng),
            perspective: [params.perspective.draw(&mut rng), params.perspective.draw(&mut rng)],
            translation: [params.translation.draw(&mut rng), params.translation.draw(&mut rng)],
        };
        let Ok(hom) = compose(&drawn, w, h) else {
            continue;
        };
        let Ok(overlap) = overlap_ratio(&hom, width, height) else {
            continue;
        };
        if overlap >= params.min_overlap {
            return Ok(SyntheticPair {
                ground_truth: hom,
                source_size: (width, height),
                target_size: (width, height),
                seed,
                parameters: drawn,
                overlap,
                draws: draw,
            });
        }
    }
    Err(SynthError::SamplingExhausted(MAX_DRAWS))
}

/// Fraction of the target frame covered by the warped source frame.
pub fn overlap_ratio(h: &Homography, width: u32, height: u32) -> Result<f64, SynthError> {
    let (w, hgt) = (width as f64, height as f64);
    let corners = [(0.0, 0.0), (w, 0.0), (w, hgt), (0.0, hgt)];
    let m = h.matrix();
    let mut quad = Vec::with_capacity(4);
    let mut sign = 0.0f64;
    for &(x, y) in &corners {
        let depth = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
        // A sign change means the frame straddles the line at infinity.
        if sign != 0.0 && depth.signum() != sign {
            return Err(SynthError::DegenerateQuad);
        }
        sign = depth.signum();
        let p = h
            .apply(Point2::new(x, y))
            .map_err(|_| SynthError::DegenerateQuad)?;
        quad.push(p);
    }
    let clipped = clip_to_rect(&quad, w, hgt);
    let area = polygon_area(&clipped);
    Ok((area / (w * hgt)).clamp(0.0, 1.0))
}

/// Shoelace area, orientation-independent.
pub fn polygon_area(poly: &[Point2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc.abs()
}

/// Sutherland–Hodgman clipping of `subject` against `[0, w] x [0, h]`.
pub fn clip_to_rect(subject: &[Point2], w: f64, h: f64) -> Vec<Point2> {
    #[derive(Clone, Copy)]
    enum Edge {
        Left,
        Right,
        Top,
        Bottom,
    }
    let inside = |p: &Point2, e: Edge| match e {
        Edge::Left => p.x >= 0.0,
        Edge::Right => p.x <= w,
        Edge::Top => p.y >= 0.0,
        Edge::Bottom => p.y <= h,
    };
    let intersect = |a: &Point2, b: &Point2, e: Edge| {
        let t = match e {
            Edge::Left => (0.0 - a.x) / (b.x - a.x),
            Edge::Right => (w - a.x) / (b.x - a.x),
            Edge::Top => (0.0 - a.y) / (b.y - a.y),
            Edge::Bottom => (h - a.y) / (b.y - a.y),
        };
        Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
    };

    let mut output: Vec<Point2> = subject.to_vec();
    for edge in [Edge::Left, Edge::Right, Edge::Top, Edge::Bottom] {
        if output.is_empty() {
            break;
        }
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().unwrap();
        for cur in input {
            let cur_in = inside(&cur, edge);
            let prev_in = inside(&prev, edge);
            if cur_in {
                if !prev_in {
                    output.push(intersect(&prev, &cur, edge));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(&prev, &cur, edge));
            }
            prev = cur;
        }
    }
    output
}

/// Warps each point; points that fail to dehomogenize are dropped and their
/// indices returned alongside.
pub fn warp_correspondences(h: &Homography, points: &[Point2]) -> (Vec<Point2>, Vec<usize>) {
    let mut out = Vec::with_capacity(points.len());
    let mut dropped = Vec::new();
    for (i, p) in points.iter().enumerate() {
        match h.apply(*p) {
            Ok(q) => out.push(q),
            Err(_) => dropped.push(i),
        }
    }
    (out, dropped)
}
