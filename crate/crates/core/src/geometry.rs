//! Geometric primitives shared by the estimators and metrics.
//!
//! Everything here is plain value arithmetic: points, normalized
//! homographies, calibrated relative poses and the correspondence sets
//! the estimators consume.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest homogeneous depth accepted when dehomogenizing.
pub const MIN_DEPTH: f64 = 1e-12;
/// Smallest absolute determinant accepted for an invertible homography.
pub const MIN_DETERMINANT: f64 = 1e-12;
/// Default cap on the number of correspondences per image pair.
pub const DEFAULT_MATCH_CAP: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point ({x}, {y}) maps to homogeneous depth {w:e}")]
    DegeneratePoint { x: f64, y: f64, w: f64 },
    #[error("matrix is singular (|det| = {det:e})")]
    SingularMatrix { det: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("not a rotation: {0}")]
    InvalidRotation(String),
    #[error("translation must have non-zero finite norm")]
    InvalidTranslation,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A 3x3 projective transform, stored normalized so that `m[2][2] == 1`
/// whenever that entry is non-zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    /// Builds a homography from a matrix, rejecting singular or non-finite input.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("homography"));
        }
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= MIN_DETERMINANT * scale_of(&m).powi(3) {
            return Err(GeometryError::SingularMatrix { det });
        }
        Ok(Self { m: normalize(m) })
    }

    pub fn from_row_major(values: &[f64; 9]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_row_slice(values))
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    pub fn scaling(sx: f64, sy: f64) -> Result<Self, GeometryError> {
        Self::new(Matrix3::new(sx, 0.0, 0.0, 0.0, sy, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn apply(&self, p: Point2) -> Result<Point2, GeometryError> {
        apply_homography(self, p)
    }

    pub fn inverse(&self) -> Result<Homography, GeometryError> {
        invert_homography(self)
    }

    /// `self` applied after `first`, i.e. `p -> self(first(p))`.
    pub fn compose(&self, first: &Homography) -> Result<Homography, GeometryError> {
        Homography::new(self.m * first.m)
    }
}

fn scale_of(m: &Matrix3<f64>) -> f64 {
    let s = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

fn normalize(m: Matrix3<f64>) -> Matrix3<f64> {
    let w = m[(2, 2)];
    if w != 0.0 {
        m / w
    } else {
        m
    }
}

/// Maps `p` through `h` and dehomogenizes.
pub fn apply_homography(h: &Homography, p: Point2) -> Result<Point2, GeometryError> {
    let m = &h.m;
    let u = m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)];
    let v = m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)];
    let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
    if !(w.abs() > MIN_DEPTH) {
        return Err(GeometryError::DegeneratePoint { x: p.x, y: p.y, w });
    }
    let out = Point2::new(u / w, v / w);
    if !out.is_finite() {
        return Err(GeometryError::DegeneratePoint { x: p.x, y: p.y, w });
    }
    Ok(out)
}

pub fn invert_homography(h: &Homography) -> Result<Homography, GeometryError> {
    let det = h.m.determinant();
    if !(det.abs() > MIN_DETERMINANT) {
        return Err(GeometryError::SingularMatrix { det });
    }
    let inv = h
        .m
        .try_inverse()
        .ok_or(GeometryError::SingularMatrix { det })?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::SingularMatrix { det });
    }
    Ok(Homography { m: normalize(inv) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "fx={}, fy={}, cx={}, cy={}",
                self.fx, self.fy, self.cx, self.cy
            )));
        }
        if !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics("non-finite focal length".into()));
        }
        Ok(())
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.fx + self.fy)
    }

    /// Pixel coordinates to the normalized image plane.
    pub fn normalize(&self, p: Point2) -> Point2 {
        Point2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    pub fn project(&self, p: &Vector3<f64>) -> Point2 {
        Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Intrinsics of the same camera after resizing the image by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
        }
    }
}

/// Rigid motion from camera A to camera B: `x_b = rotation * x_a + translation`,
/// with the translation known only up to scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RelativePose {
    /// Validates orthonormality and normalizes the translation to unit length.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if rotation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rotation"));
        }
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if orth > 1e-9 {
            return Err(GeometryError::InvalidRotation(format!(
                "RᵀR deviates from identity by {orth:e}"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidRotation(format!("det = {det}")));
        }
        let norm = translation.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(GeometryError::InvalidTranslation);
        }
        Ok(Self {
            rotation,
            translation: translation / norm,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }
}

/// Angular error between two relative poses in degrees: the larger of the
/// rotation geodesic distance and the sign-agnostic translation direction
/// angle.
pub fn pose_angular_error(est: &RelativePose, gt: &RelativePose) -> f64 {
    rotation_angle_deg(&est.rotation, &gt.rotation).max(translation_angle_deg(
        &est.translation,
        &gt.translation,
    ))
}

pub fn rotation_angle_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    let cos = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    // acos loses precision near zero; fall back to the antisymmetric part.
    if cos > 0.99 {
        let s = Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        )
        .norm()
            * 0.5;
        return s.atan2(cos).to_degrees();
    }
    cos.acos().to_degrees()
}

/// Angle between two directions, treating `t` and `-t` as equivalent.
pub fn translation_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 90.0;
    }
    let cos = (a.dot(b) / (na * nb)).clamp(-1.0, 1.0);
    let sin = a.cross(b).norm() / (na * nb);
    let theta = sin.atan2(cos).to_degrees();
    theta.min(180.0 - theta)
}

/// Rotation by `angle_deg` about `axis` (need not be unit length).
pub fn axis_angle(axis: Vector3<f64>, angle_deg: f64) -> Matrix3<f64> {
    let q = UnitQuaternion::from_axis_angle(
        &nalgebra::Unit::new_normalize(axis),
        angle_deg.to_radians(),
    );
    *Rotation3::from(q).matrix()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub a: Point2,
    pub b: Point2,
    pub confidence: Option<f64>,
}

impl Correspondence {
    pub fn new(a: Point2, b: Point2) -> Self {
        Self {
            a,
            b,
            confidence: None,
        }
    }
}

/// Putative correspondences between image A and image B.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pairs: Vec<Correspondence>,
}

impl MatchSet {
    pub fn new(pairs: Vec<Correspondence>) -> Self {
        Self { pairs }
    }

    pub fn from_points(a: &[Point2], b: &[Point2]) -> Self {
        Self {
            pairs: a
                .iter()
                .zip(b)
                .map(|(&a, &b)| Correspondence::new(a, b))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Correspondence] {
        &self.pairs
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Correspondence> {
        self.pairs.iter()
    }

    /// Multiplies A-side and B-side coordinates by independent factors.
    pub fn rescaled(&self, scale_a: f64, scale_b: f64) -> MatchSet {
        MatchSet {
            pairs: self
                .pairs
                .iter()
                .map(|c| Correspondence {
                    a: Point2::new(c.a.x * scale_a, c.a.y * scale_a),
                    b: Point2::new(c.b.x * scale_b, c.b.y * scale_b),
                    confidence: c.confidence,
                })
                .collect(),
        }
    }
}

impl FromIterator<Correspondence> for MatchSet {
    fn from_iter<T: IntoIterator<Item = Correspondence>>(iter: T) -> Self {
        Self {
            pairs: iter.into_iter().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a MatchSet {
    type Item = &'a Correspondence;
    type IntoIter = std::slice::Iter<'a, Correspondence>;

    fn into_iter(self) -> Self::IntoIter {
        self.pairs.iter()
    }
}
