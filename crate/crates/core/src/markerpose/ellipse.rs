//! Direct least-squares ellipse fitting (numerically stable form of the
//! ellipse-specific conic fit).

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseFit {
    pub center: Point2,
    /// Semi-major and semi-minor axes (px).
    pub semi_axes: (f64, f64),
    /// Angle of the major axis from +x (radians, in `(-π/2, π/2]`).
    pub angle: f64,
    /// Conic `a x² + b xy + c y² + d x + e y + f = 0` in pixel coordinates.
    pub conic: [f64; 6],
    /// RMS first-order geometric distance of the points to the conic (px).
    pub residual: f64,
}

/// Fits an ellipse to `≥ 5` points.
pub fn fit_ellipse(points: &[Point2]) -> Result<EllipseFit> {
    if points.len() < 5 {
        return Err(Error::Degenerate(format!("ellipse fit needs 5 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector2::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = p.coords - mean;
        cov += d * d.transpose();
    }
    let ev = (cov / n).symmetric_eigenvalues();
    if !(ev.max() > 0.0) || ev.min() / ev.max() < 1e-10 {
        return Err(Error::Degenerate("near-collinear ellipse points".into()));
    }
    let scale = ev.max().sqrt();

    // Scatter blocks for quadratic (x², xy, y²) and linear (x, y, 1) terms.
    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for p in points {
        let x = (p.x - mean.x) / scale;
        let y = (p.y - mean.y) / scale;
        let q = Vector3::new(x * x, x * y, y * y);
        let l = Vector3::new(x, y, 1.0);
        s1 += q * q.transpose();
        s2 += q * l.transpose();
        s3 += l * l.transpose();
    }
    let s3_inv = s3
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("singular linear scatter".into()))?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // Premultiply by the inverse of the constraint matrix 4ac − b².
    let mc = Matrix3::from_rows(&[
        (m.row(2) / 2.0).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) / 2.0).into_owned(),
    ]);

    let mut best: Option<(Vector3<f64>, f64)> = None;
    for lambda in mc.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * lambda.re.abs().max(1.0) {
            continue;
        }
        let shifted = mc - Matrix3::identity() * lambda.re;
        let svd = shifted.svd(false, true);
        let k = svd.singular_values.imin();
        let v: Vector3<f64> = svd.v_t.unwrap().row(k).transpose();
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 && best.is_none_or(|(_, c)| cond > c) {
            best = Some((v, cond));
        }
    }
    let (a1, _) = best.ok_or_else(|| Error::Degenerate("no elliptical solution".into()))?;
    let a2 = t * a1;

    // Undo the normalisation: x = (X − mx)/s.
    let (a, b, c) = (a1[0], a1[1], a1[2]);
    let (d, e, f) = (a2[0], a2[1], a2[2]);
    let s = scale;
    let (mx, my) = (mean.x, mean.y);
    let big_a = a / (s * s);
    let big_b = b / (s * s);
    let big_c = c / (s * s);
    let big_d = -2.0 * a * mx / (s * s) - b * my / (s * s) + d / s;
    let big_e = -2.0 * c * my / (s * s) - b * mx / (s * s) + e / s;
    let big_f = a * mx * mx / (s * s) + b * mx * my / (s * s) + c * my * my / (s * s) - d * mx / s - e * my / s + f;
    let conic = [big_a, big_b, big_c, big_d, big_e, big_f];
    let mut fit = ellipse_from_conic(conic)?;

    let sum: f64 = points
        .iter()
        .map(|p| {
            let v = conic_value(&conic, p);
            let g = Vector2::new(2.0 * big_a * p.x + big_b * p.y + big_d, big_b * p.x + 2.0 * big_c * p.y + big_e);
            let gn = g.norm();
            if gn > 0.0 {
                (v / gn).powi(2)
            } else {
                0.0
            }
        })
        .sum();
    fit.residual = (sum / n).sqrt();
    Ok(fit)
}

fn conic_value(c: &[f64; 6], p: &Point2) -> f64 {
    c[0] * p.x * p.x + c[1] * p.x * p.y + c[2] * p.y * p.y + c[3] * p.x + c[4] * p.y + c[5]
}

/// Geometric parameters of an elliptical conic.
pub fn ellipse_from_conic(conic: [f64; 6]) -> Result<EllipseFit> {
    let [a, b, c, d, e, _] = conic;
    let q = Matrix2::new(2.0 * a, b, b, 2.0 * c);
    let center = q
        .try_inverse()
        .map(|inv| inv * Vector2::new(-d, -e))
        .ok_or_else(|| Error::Degenerate("conic has no centre".into()))?;
    let center = Point2::from(center);
    let f0 = conic_value(&conic, &center);
    let eig = Matrix2::new(a, b / 2.0, b / 2.0, c).symmetric_eigen();
    let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    let ax0 = -f0 / l0;
    let ax1 = -f0 / l1;
    if !(ax0 > 0.0 && ax1 > 0.0) {
        return Err(Error::Degenerate("conic is not a real ellipse".into()));
    }
    let (r0, r1) = (ax0.sqrt(), ax1.sqrt());
    let (major, minor, dir) = if r0 >= r1 {
        (r0, r1, eig.eigenvectors.column(0).into_owned())
    } else {
        (r1, r0, eig.eigenvectors.column(1).into_owned())
    };
    let mut angle = dir.y.atan2(dir.x);
    if angle > std::f64::consts::FRAC_PI_2 {
        angle -= std::f64::consts::PI;
    } else if angle <= -std::f64::consts::FRAC_PI_2 {
        angle += std::f64::consts::PI;
    }
    Ok(EllipseFit {
        center,
        semi_axes: (major, minor),
        angle,
        conic,
        residual: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    fn ellipse_points(c: (f64, f64), a: f64, b: f64, theta: f64, n: usize) -> Vec<Point2> {
        (0..n)
            .map(|i| {
                let t = TAU * i as f64 / n as f64;
                let (x, y) = (a * t.cos(), b * t.sin());
                Point2::new(
                    c.0 + x * theta.cos() - y * theta.sin(),
                    c.1 + x * theta.sin() + y * theta.cos(),
                )
            })
            .collect()
    }

    #[test]
    fn exact_circle() {
        let fit = fit_ellipse(&ellipse_points((100.0, 200.0), 10.0, 10.0, 0.0, 40)).unwrap();
        assert!((fit.center - Point2::new(100.0, 200.0)).norm() < 1e-9);
        assert!((fit.semi_axes.0 - 10.0).abs() < 1e-9 && (fit.semi_axes.1 - 10.0).abs() < 1e-9);
        assert!(fit.residual < 1e-9);
    }

    #[test]
    fn rotated_ellipse_parameters() {
        let theta = PI / 6.0;
        let fit = fit_ellipse(&ellipse_points((-3.0, 12.5), 20.0, 10.0, theta, 30)).unwrap();
        assert!((fit.center - Point2::new(-3.0, 12.5)).norm() < 1e-6);
        assert!((fit.semi_axes.0 - 20.0).abs() < 1e-6);
        assert!((fit.semi_axes.1 - 10.0).abs() < 1e-6);
        assert!((fit.angle - theta).abs() < 1e-6);
    }

    #[test]
    fn partial_arc_still_fits() {
        let pts: Vec<Point2> = ellipse_points((50.0, 50.0), 15.0, 8.0, -0.4, 60).into_iter().take(25).collect();
        let fit = fit_ellipse(&pts).unwrap();
        assert!((fit.center - Point2::new(50.0, 50.0)).norm() < 1e-6);
    }

    #[test]
    fn too_few_or_collinear_points() {
        let four = ellipse_points((0.0, 0.0), 5.0, 3.0, 0.0, 4);
        assert!(fit_ellipse(&four).is_err());
        let line: Vec<Point2> = (0..10).map(|i| Point2::new(i as f64, 2.0 * i as f64 + 1.0)).collect();
        assert!(fit_ellipse(&line).is_err());
    }

    #[test]
    fn residual_reflects_noise() {
        let mut pts = ellipse_points((0.0, 0.0), 20.0, 20.0, 0.0, 200);
        for (i, p) in pts.iter_mut().enumerate() {
            let s = if i % 2 == 0 { 0.1 } else { -0.1 };
            *p = Point2::from(p.coords * (1.0 + s / 20.0));
        }
        let fit = fit_ellipse(&pts).unwrap();
        assert!((fit.residual - 0.1).abs() < 0.02);
    }
}
