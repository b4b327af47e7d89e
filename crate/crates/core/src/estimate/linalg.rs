use nalgebra::{DMatrix, DVector, Matrix3};

use crate::geometry::Point2;

/// Isotropic normalization: centroid to the origin, mean distance √2.
pub(crate) fn hartley_transform(points: &[Point2]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points
        .iter()
        .map(|p| (p.x - cx).hypot(p.y - cy))
        .sum::<f64>()
        / n;
    if !(mean_dist > 1e-12) || !mean_dist.is_finite() {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

pub(crate) fn transform_point(t: &Matrix3<f64>, p: &Point2) -> Point2 {
    Point2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// Right singular vector for the smallest singular value, plus all singular
/// values sorted descending.
pub(crate) struct NullSpace {
    pub vector: DVector<f64>,
    pub singular_values: Vec<f64>,
}

/// Rows are zero-padded up to the column count so the full right basis is
/// available from a thin SVD.
pub(crate) fn null_space(mut a: DMatrix<f64>) -> Option<NullSpace> {
    let cols = a.ncols();
    if a.nrows() < cols {
        a = a.resize_vertically(cols, 0.0);
    }
    let svd = a.try_svd(false, true, 1e-15, 500)?;
    let v_t = svd.v_t?;
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let smallest = *order.last()?;
    let vector = v_t.row(smallest).transpose();
    if vector.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(NullSpace {
        vector,
        singular_values: order.iter().map(|&i| sv[i]).collect(),
    })
}

/// Sine of the angle at `a` in triangle `abc`; zero for coincident points.
pub(crate) fn collinearity(a: &Point2, b: &Point2, c: &Point2) -> f64 {
    let (ux, uy) = (b.x - a.x, b.y - a.y);
    let (vx, vy) = (c.x - a.x, c.y - a.y);
    let denom = ux.hypot(uy) * vx.hypot(vy);
    if denom == 0.0 {
        return 0.0;
    }
    (ux * vy - uy * vx) / denom
}

/// True when any three of the four points are (nearly) collinear or coincide.
pub(crate) fn degenerate_quad(points: &[Point2; 4], tol: f64) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES.iter().any(|t| {
        let (a, b, c) = (&points[t[0]], &points[t[1]], &points[t[2]]);
        collinearity(a, b, c).abs() < tol
            || collinearity(b, c, a).abs() < tol
            || collinearity(c, a, b).abs() < tol
    })
}
