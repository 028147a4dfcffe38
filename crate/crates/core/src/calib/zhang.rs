//! Closed-form initialisation: homographies, intrinsics, per-view poses.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point2, RigidTransform};

/// Condition number above which the intrinsic system is rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Similarity moving the centroid to the origin with mean distance √2.
fn normalizing_transform(points: &[Point2]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let c = points.iter().fold(nalgebra::Vector2::zeros(), |a, p| a + p.coords) / n;
    let mean_dist = points.iter().map(|p| (p.coords - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { 2f64.sqrt() / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn apply_h(h: &Matrix3<f64>, p: &Point2) -> Point2 {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

/// Right singular vector of the smallest singular value, and the ratio of the
/// two smallest singular values to the largest.
fn null_vector(a: DMatrix<f64>) -> (nalgebra::DVector<f64>, f64, f64) {
    let n = a.ncols();
    let a = if a.nrows() < n {
        a.resize_vertically(n, 0.0)
    } else {
        a
    };
    let svd = a.svd(false, true);
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let v_t = svd.v_t.unwrap();
    let null = v_t.row(order[n - 1]).transpose();
    let s1 = sv[order[0]];
    (null, sv[order[n - 1]] / s1, sv[order[n - 2]] / s1)
}

/// Hartley-normalised DLT homography mapping board-plane coordinates to
/// pixels, scaled to unit Frobenius norm with `H[2,2] ≥ 0`.
pub fn estimate_homography(board: &[Point2], image: &[Point2]) -> Result<Matrix3<f64>> {
    if board.len() != image.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} board points vs {} image points",
            board.len(),
            image.len()
        )));
    }
    if board.len() < 4 {
        return Err(Error::Degenerate(format!("homography needs 4 points, got {}", board.len())));
    }
    for pts in [board, image] {
        let n = pts.len() as f64;
        let c = pts.iter().fold(nalgebra::Vector2::zeros(), |a, p| a + p.coords) / n;
        let cov = pts.iter().fold(nalgebra::Matrix2::zeros(), |a, p| {
            let d = p.coords - c;
            a + d * d.transpose()
        });
        let ev = cov.symmetric_eigenvalues();
        let (lo, hi) = (ev.min(), ev.max());
        if !(hi > 0.0) || lo / hi < 1e-12 {
            return Err(Error::Degenerate("collinear correspondences".into()));
        }
    }
    let tb = normalizing_transform(board);
    let ti = normalizing_transform(image);
    let mut a = DMatrix::zeros(2 * board.len(), 9);
    for (k, (b, p)) in board.iter().zip(image).enumerate() {
        let b = apply_h(&tb, b);
        let p = apply_h(&ti, p);
        let (x, y, u, v) = (b.x, b.y, p.x, p.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * k, j)] = r0[j];
            a[(2 * k + 1, j)] = r1[j];
        }
    }
    let (h, _, second) = null_vector(a);
    if second < 1e-12 {
        return Err(Error::Degenerate("homography null space is not one-dimensional".into()));
    }
    let hn = Matrix3::from_row_slice(h.as_slice());
    let ti_inv = ti.try_inverse().ok_or_else(|| Error::Degenerate("normalisation".into()))?;
    let mut hm = ti_inv * hn * tb;
    hm /= hm.norm();
    if hm[(2, 2)] < 0.0 {
        hm = -hm;
    }
    if !hm.iter().all(|v| v.is_finite()) {
        return Err(Error::Degenerate("non-finite homography".into()));
    }
    Ok(hm)
}

/// Row `v_ij` of the zero-skew absolute-conic system, `h_iᵀ B h_j = v_ij · b`
/// with `b = (B11, B22, B13, B23, B33)`.
fn conic_row(h: &Matrix3<f64>, i: usize, j: usize) -> [f64; 5] {
    let (a, b) = (h.column(i), h.column(j));
    [
        a[0] * b[0],
        a[1] * b[1],
        a[0] * b[2] + a[2] * b[0],
        a[1] * b[2] + a[2] * b[1],
        a[2] * b[2],
    ]
}

/// Closed-form zero-skew intrinsics from `≥ 3` board homographies.
///
/// Pixels are first mapped to a unit-scale frame centred on the image to keep
/// the conic system well conditioned.
pub fn intrinsics_from_homographies(hs: &[Matrix3<f64>], width: u32, height: u32) -> Result<Matrix3<f64>> {
    if hs.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 views, got {}", hs.len())));
    }
    let s = 0.5 * (width + height) as f64;
    let n = Matrix3::new(1.0 / s, 0.0, -0.5 * width as f64 / s, 0.0, 1.0 / s, -0.5 * height as f64 / s, 0.0, 0.0, 1.0);
    let mut v = DMatrix::zeros(2 * hs.len(), 5);
    for (k, h) in hs.iter().enumerate() {
        let h = n * h;
        let h = h / h.norm();
        let v12 = conic_row(&h, 0, 1);
        let v11 = conic_row(&h, 0, 0);
        let v22 = conic_row(&h, 1, 1);
        for j in 0..5 {
            v[(2 * k, j)] = v12[j];
            v[(2 * k + 1, j)] = v11[j] - v22[j];
        }
    }
    let (b, _, second) = null_vector(v);
    let condition = 1.0 / second;
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(Error::IllConditioned(condition));
    }
    let mut b = b;
    if b[0] < 0.0 {
        b = -b;
    }
    let (b11, b22, b13, b23, b33) = (b[0], b[1], b[2], b[3], b[4]);
    if !(b11 > 0.0 && b22 > 0.0) {
        return Err(Error::Degenerate("absolute conic is not positive definite".into()));
    }
    let v0 = -b23 / b22;
    let lambda = b33 - b13 * b13 / b11 + v0 * b23;
    if !(lambda > 0.0) {
        return Err(Error::Degenerate("absolute conic is not positive definite".into()));
    }
    let alpha = (lambda / b11).sqrt();
    let beta = (lambda / b22).sqrt();
    let u0 = -b13 * alpha * alpha / lambda;
    let kn = Matrix3::new(alpha, 0.0, u0, 0.0, beta, v0, 0.0, 0.0, 1.0);
    let k = n.try_inverse().unwrap() * kn;
    Ok(k / k[(2, 2)])
}

/// Board-to-device pose from `H ∝ K [r1 r2 t]`. The sign is chosen so that
/// the board lies in front of the device.
pub fn pose_from_homography(k: &Matrix3<f64>, h: &Matrix3<f64>) -> Result<RigidTransform> {
    let k_inv = k
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("singular intrinsic matrix".into()))?;
    let m = k_inv * h;
    let (m1, m2, m3) = (m.column(0).into_owned(), m.column(1).into_owned(), m.column(2).into_owned());
    let norm = 0.5 * (m1.norm() + m2.norm());
    if !(norm > 0.0) {
        return Err(Error::Degenerate("homography has null columns".into()));
    }
    let mut scale = 1.0 / norm;
    if m3.z * scale < 0.0 {
        scale = -scale;
    }
    let r1 = m1 * scale;
    let r2 = m2 * scale;
    let r3 = r1.cross(&r2);
    let r = Matrix3::from_columns(&[r1, r2, r3]);
    Ok(RigidTransform {
        rotation: RigidTransform::nearest_rotation(&r),
        translation: m3 * scale,
    })
}
