//! Least-squares plane, sphere and cylinder fitting with orthogonal-distance RMS.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};
use crate::lm::{minimize, LeastSquares, LmConfig, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub normal: Vector3<f64>,
    /// `normal · x = offset` on the plane.
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereModel {
    pub center: Point3,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderModel {
    /// Axis point closest to the fitted cloud's centroid.
    pub point: Point3,
    pub direction: Vector3<f64>,
    pub radius: f64,
}

impl PlaneModel {
    pub fn distance(&self, p: &Point3) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    pub fn transformed(&self, t: &RigidTransform) -> PlaneModel {
        let n = t.apply_vector(&self.normal);
        PlaneModel {
            normal: n,
            offset: self.offset + n.dot(&t.translation),
        }
    }
}

impl CylinderModel {
    pub fn axis_distance(&self, p: &Point3) -> f64 {
        let v = p - self.point;
        (v - self.direction * v.dot(&self.direction)).norm()
    }
}

/// A fitted model with its orthogonal-distance RMS (mm).
#[derive(Debug, Clone, Copy)]
pub struct Fit<M> {
    pub model: M,
    pub rms: f64,
    /// RMS of the closed-form initializer (equal to `rms` for planes).
    pub initial_rms: f64,
}

fn centroid(points: &[Point3]) -> Vector3<f64> {
    points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / points.len() as f64
}

/// Eigen-decomposition of the scatter matrix, eigenvalues ascending.
fn principal_axes(points: &[Point3], c: &Vector3<f64>) -> ([f64; 3], [Vector3<f64>; 3]) {
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.map(|i| eig.eigenvalues[i]);
    let vecs = idx.map(|i| eig.eigenvectors.column(i).into_owned());
    (vals, vecs)
}

/// Sign convention for directions: first non-negligible component positive,
/// scanning z, y, x.
fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    for k in [2, 1, 0] {
        if v[k].abs() > 1e-12 {
            return if v[k] < 0.0 { -v } else { v };
        }
    }
    v
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    (s / n.max(1) as f64).sqrt()
}

/// Total least squares plane through the centroid.
pub fn fit_plane(points: &[Point3]) -> Result<Fit<PlaneModel>> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("plane fit needs 3 points, got {}", points.len())));
    }
    let c = centroid(points);
    let (vals, vecs) = principal_axes(points, &c);
    if vals[2] <= 0.0 || vals[1] <= 1e-12 * vals[2] {
        return Err(Error::Degenerate("collinear or coincident points".into()));
    }
    let normal = canonical_sign(vecs[0]);
    let model = PlaneModel {
        normal,
        offset: normal.dot(&c),
    };
    let r = rms(points.iter().map(|p| model.distance(p)));
    Ok(Fit {
        model,
        rms: r,
        initial_rms: r,
    })
}

struct SphereProblem<'a> {
    points: &'a [Point3],
}

impl LeastSquares for SphereProblem<'_> {
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let c = Vector3::new(p[0], p[1], p[2]);
        DVector::from_iterator(self.points.len(), self.points.iter().map(|x| (x.coords - c).norm() - p[3]))
    }

    fn jacobian(&self, p: &DVector<f64>, m: usize) -> DMatrix<f64> {
        let c = Vector3::new(p[0], p[1], p[2]);
        let mut j = DMatrix::zeros(m, 4);
        for (i, x) in self.points.iter().enumerate() {
            let d = x.coords - c;
            let n = d.norm().max(1e-300);
            for k in 0..3 {
                j[(i, k)] = -d[k] / n;
            }
            j[(i, 3)] = -1.0;
        }
        j
    }
}

/// Algebraic sphere fit refined by geometric Levenberg–Marquardt.
pub fn fit_sphere(points: &[Point3]) -> Result<Fit<SphereModel>> {
    if points.len() < 4 {
        return Err(Error::Degenerate(format!("sphere fit needs 4 points, got {}", points.len())));
    }
    let c0 = centroid(points);
    let (vals, _) = principal_axes(points, &c0);
    if vals[2] <= 0.0 || vals[0] <= 1e-12 * vals[2] {
        return Err(Error::Degenerate("coplanar points cannot define a sphere".into()));
    }
    // |x|^2 = 2 c·x + k in centroid-relative coordinates.
    let n = points.len();
    let mut a = DMatrix::zeros(n, 4);
    let mut b = DVector::zeros(n);
    for (i, p) in points.iter().enumerate() {
        let d = p.coords - c0;
        a[(i, 0)] = 2.0 * d.x;
        a[(i, 1)] = 2.0 * d.y;
        a[(i, 2)] = 2.0 * d.z;
        a[(i, 3)] = 1.0;
        b[i] = d.norm_squared();
    }
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let center = Vector3::new(sol[0], sol[1], sol[2]);
    let r2 = sol[3] + center.norm_squared();
    if !(r2 > 0.0) {
        return Err(Error::Degenerate("algebraic sphere fit has no real radius".into()));
    }
    let init = DVector::from_vec(vec![center.x + c0.x, center.y + c0.y, center.z + c0.z, r2.sqrt()]);
    let problem = SphereProblem { points };
    let initial_rms = (problem.residuals(&init).norm_squared() / n as f64).sqrt();
    let rep = minimize(&problem, init, &LmConfig::default())?;
    if rep.termination == Termination::MaxIterations {
        return Err(Error::NonConvergence { iterations: rep.iterations });
    }
    let p = &rep.params;
    let model = SphereModel {
        center: Point3::new(p[0], p[1], p[2]),
        radius: p[3].abs(),
    };
    Ok(Fit {
        model,
        rms: rep.rms(),
        initial_rms,
    })
}

/// Kasa circle fit in 2D: returns `(center, radius)`.
fn fit_circle_2d(pts: &[(f64, f64)]) -> Option<((f64, f64), f64)> {
    let n = pts.len();
    let mut a = DMatrix::zeros(n, 3);
    let mut b = DVector::zeros(n);
    for (i, (x, y)) in pts.iter().enumerate() {
        a[(i, 0)] = 2.0 * x;
        a[(i, 1)] = 2.0 * y;
        a[(i, 2)] = 1.0;
        b[i] = x * x + y * y;
    }
    let sol = a.svd(true, true).solve(&b, 1e-14).ok()?;
    let r2 = sol[2] + sol[0] * sol[0] + sol[1] * sol[1];
    (r2 > 0.0 && r2.is_finite()).then(|| ((sol[0], sol[1]), r2.sqrt()))
}

fn orthonormal_basis(d: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if d.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = d.cross(&helper).normalize();
    let e2 = d.cross(&e1);
    (e1, e2)
}

/// Cylinder parameterized around a reference axis `d0` through `c`:
/// `[a, b, α, β, r]` with axis point `c + a e1 + b e2` and direction
/// `normalize(d0 + α e1 + β e2)`.
struct CylinderProblem<'a> {
    points: &'a [Point3],
    c: Vector3<f64>,
    d0: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
}

impl CylinderProblem<'_> {
    fn decode(&self, p: &DVector<f64>) -> (Vector3<f64>, Vector3<f64>, f64) {
        let point = self.c + self.e1 * p[0] + self.e2 * p[1];
        let dir = (self.d0 + self.e1 * p[2] + self.e2 * p[3]).normalize();
        (point, dir, p[4])
    }
}

impl LeastSquares for CylinderProblem<'_> {
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let (q, d, r) = self.decode(p);
        DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|x| {
                let v = x.coords - q;
                (v - d * v.dot(&d)).norm() - r
            }),
        )
    }

    fn diff_step(&self, _p: &DVector<f64>, j: usize) -> f64 {
        if j == 2 || j == 3 {
            1e-7
        } else {
            1e-5
        }
    }
}

/// Smallest-variance direction of local surface normals (the cylinder axis is
/// perpendicular to every normal).
fn axis_from_normals(points: &[Point3]) -> Option<Vector3<f64>> {
    const MAX_SAMPLES: usize = 400;
    const NEIGHBOURS: usize = 12;
    let stride = points.len().div_ceil(MAX_SAMPLES).max(1);
    let sample: Vec<Point3> = points.iter().step_by(stride).copied().collect();
    if sample.len() < NEIGHBOURS + 1 {
        return None;
    }
    let mut scatter = Matrix3::zeros();
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(sample.len());
    for p in &sample {
        dists.clear();
        dists.extend(sample.iter().enumerate().map(|(j, q)| ((q - p).norm_squared(), j)));
        dists.select_nth_unstable_by(NEIGHBOURS, |a, b| a.0.total_cmp(&b.0));
        let nb: Vec<Point3> = dists[..=NEIGHBOURS].iter().map(|&(_, j)| sample[j]).collect();
        let c = centroid(&nb);
        let (vals, vecs) = principal_axes(&nb, &c);
        // Skip neighbourhoods that are curves rather than surface patches.
        if vals[1] <= 0.05 * vals[2] {
            continue;
        }
        let n = vecs[0];
        scatter += n * n.transpose();
    }
    if scatter.norm() == 0.0 {
        return None;
    }
    let eig = SymmetricEigen::new(scatter);
    let i = eig.eigenvalues.imin();
    Some(eig.eigenvectors.column(i).into_owned())
}

/// Geometric cylinder fit. The axis is initialised from the principal
/// direction (elongated clouds) and from surface normals (short patches); the
/// better refined candidate wins.
pub fn fit_cylinder(points: &[Point3]) -> Result<Fit<CylinderModel>> {
    if points.len() < 6 {
        return Err(Error::Degenerate(format!("cylinder fit needs 6 points, got {}", points.len())));
    }
    let c = centroid(points);
    let (vals, vecs) = principal_axes(points, &c);
    if vals[2] <= 0.0 || vals[0] <= 1e-10 * vals[2] {
        return Err(Error::Degenerate("points are coplanar".into()));
    }
    let extent = vals[2].sqrt();
    let mut candidates = vec![vecs[2]];
    if let Some(d) = axis_from_normals(points) {
        candidates.push(d);
    }
    candidates.push(vecs[0]);

    let mut best: Option<Fit<CylinderModel>> = None;
    let mut last_err = Error::Degenerate("no cylinder candidate converged".into());
    for d0 in candidates {
        let (e1, e2) = orthonormal_basis(&d0);
        let flat: Vec<(f64, f64)> = points
            .iter()
            .map(|p| {
                let v = p.coords - c;
                (v.dot(&e1), v.dot(&e2))
            })
            .collect();
        let Some(((a, b), r)) = fit_circle_2d(&flat) else { continue };
        if r > 1e3 * extent {
            last_err = Error::Degenerate("cylinder radius unbounded (flat spread)".into());
            continue;
        }
        let problem = CylinderProblem {
            points,
            c,
            d0,
            e1,
            e2,
        };
        let init = DVector::from_vec(vec![a, b, 0.0, 0.0, r]);
        let initial_rms = (problem.residuals(&init).norm_squared() / points.len() as f64).sqrt();
        let rep = match minimize(&problem, init, &LmConfig { max_iterations: 500, ..LmConfig::default() }) {
            Ok(r) => r,
            Err(e) => {
                last_err = e;
                continue;
            }
        };
        if rep.termination == Termination::MaxIterations {
            last_err = Error::NonConvergence { iterations: rep.iterations };
            continue;
        }
        let (q, d, r) = problem.decode(&rep.params);
        if !(r.abs() < 1e3 * extent) {
            last_err = Error::Degenerate("cylinder radius unbounded (flat spread)".into());
            continue;
        }
        let d = canonical_sign(d);
        let point = Point3::from(q + d * (c - q).dot(&d));
        let fit = Fit {
            model: CylinderModel {
                point,
                direction: d,
                radius: r.abs(),
            },
            rms: rep.rms(),
            initial_rms,
        };
        if best.as_ref().is_none_or(|b| fit.rms < b.rms) {
            best = Some(fit);
        }
    }
    best.ok_or(last_err)
}

/// Radial gap between two nearly coaxial cylinders.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CylinderGap {
    /// `r_outer − r_inner` (mm).
    pub distance: f64,
    pub axis_angle_deg: f64,
    /// Distance from the inner axis point to the outer axis (mm).
    pub axis_offset: f64,
}

pub const MAX_GAP_AXIS_ANGLE_DEG: f64 = 5.0;

pub fn cylinder_gap(inner: &CylinderModel, outer: &CylinderModel) -> Result<CylinderGap> {
    let cos = inner.direction.dot(&outer.direction).abs().min(1.0);
    let angle = cos.acos().to_degrees();
    if angle > MAX_GAP_AXIS_ANGLE_DEG {
        return Err(Error::Degenerate(format!("cylinder axes differ by {angle:.2} deg")));
    }
    Ok(CylinderGap {
        distance: outer.radius - inner.radius,
        axis_angle_deg: angle,
        axis_offset: outer.axis_distance(&inner.point),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn rand_rigid(rng: &mut ChaCha8Rng) -> RigidTransform {
        RigidTransform::from_axis_angle(
            Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            Vector3::new(rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0)),
        )
    }

    fn cylinder_points(r: f64, len: f64, arc: (f64, f64), n: usize, noise: f64, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Normal::new(0.0, noise.max(1e-300)).unwrap();
        (0..n)
            .map(|_| {
                let t = rng.random_range(arc.0..arc.1);
                let z = rng.random_range(-len / 2.0..len / 2.0);
                let rr = r + if noise > 0.0 { g.sample(&mut rng) } else { 0.0 };
                Point3::new(rr * t.cos(), rr * t.sin(), z)
            })
            .collect()
    }

    #[test]
    fn plane_three_points() {
        let pts = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)];
        let fit = fit_plane(&pts).unwrap();
        assert!((fit.model.normal - Vector3::z()).norm() < 1e-12);
        assert!(fit.rms < 1e-12);
    }

    #[test]
    fn plane_collinear_degenerate() {
        let pts: Vec<Point3> = (0..5).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(fit_plane(&pts), Err(Error::Degenerate(_))));
    }

    #[test]
    fn plane_noise_rms_and_tilt_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Normal::new(0.0, 0.1).unwrap();
        let pts: Vec<Point3> = (0..20_000)
            .map(|_| Point3::new(rng.random_range(-100.0..100.0), rng.random_range(-80.0..80.0), g.sample(&mut rng)))
            .collect();
        let fit = fit_plane(&pts).unwrap();
        assert!((fit.rms - 0.1).abs() < 0.01, "rms {}", fit.rms);
        let tilt = RigidTransform::from_axis_angle(Vector3::new(PI / 4.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 700.0));
        let moved: Vec<Point3> = pts.iter().map(|p| tilt.apply(p)).collect();
        let fit2 = fit_plane(&moved).unwrap();
        assert!((fit2.rms - fit.rms).abs() < 1e-9);
        let expect = fit.model.transformed(&tilt);
        assert!((expect.normal.dot(&fit2.model.normal).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = Point3::new(10.0, -20.0, 650.0);
        let pts: Vec<Point3> = (0..500)
            .map(|_| {
                let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                    .normalize();
                c + v * 19.8
            })
            .collect();
        let fit = fit_sphere(&pts).unwrap();
        assert!((fit.model.radius - 19.8).abs() < 1e-9);
        assert!((fit.model.center - c).norm() < 1e-9);
        assert!(fit.rms < 1e-9);
    }

    #[test]
    fn sphere_hemisphere_noise_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Normal::new(0.0, 0.05).unwrap();
        let mut bias = 0.0;
        let trials = 20;
        for _ in 0..trials {
            let pts: Vec<Point3> = (0..3000)
                .map(|_| {
                    let mut v: Vector3<f64> = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                        .normalize();
                    v.z = -v.z.abs();
                    Point3::from(v * (19.8 + g.sample(&mut rng)))
                })
                .collect();
            let fit = fit_sphere(&pts).unwrap();
            assert!(fit.rms <= fit.initial_rms + 1e-12);
            bias += fit.model.radius - 19.8;
        }
        assert!((bias / trials as f64).abs() < 0.05);
    }

    #[test]
    fn sphere_coplanar_degenerate() {
        let pts: Vec<Point3> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.3;
                Point3::new(5.0 * t.cos(), 5.0 * t.sin(), 1.0)
            })
            .collect();
        assert!(matches!(fit_sphere(&pts), Err(Error::Degenerate(_))));
    }

    #[test]
    fn cylinder_exact_full() {
        let pts = cylinder_points(30.0, 100.0, (0.0, 2.0 * PI), 800, 0.0, 6);
        let fit = fit_cylinder(&pts).unwrap();
        assert!((fit.model.radius - 30.0).abs() < 1e-6);
        assert!((fit.model.direction - Vector3::z()).norm() < 1e-6);
        assert!(fit.model.point.x.abs() < 1e-6 && fit.model.point.y.abs() < 1e-6);
        assert!(fit.rms < 1e-9);
    }

    #[test]
    fn cylinder_short_cap_uses_normals() {
        // Short, wide cap: the principal direction is across the axis.
        let pts = cylinder_points(30.0, 20.0, (PI / 6.0, 5.0 * PI / 6.0), 2000, 0.0, 8);
        let fit = fit_cylinder(&pts).unwrap();
        assert!((fit.model.radius - 30.0).abs() < 1e-6, "{:?}", fit.model);
        assert!(fit.model.direction.dot(&Vector3::z()).abs() > 1.0 - 1e-9);
    }

    #[test]
    fn cylinder_half_shell_noise() {
        let pts = cylinder_points(30.0, 120.0, (0.0, PI), 4000, 0.05, 9);
        let fit = fit_cylinder(&pts).unwrap();
        assert!((fit.model.radius - 30.0).abs() < 0.2, "{}", fit.model.radius);
        assert!(fit.rms <= fit.initial_rms + 1e-12);
    }

    #[test]
    fn cylinder_plane_degenerate() {
        let pts: Vec<Point3> = (0..100).map(|i| Point3::new((i % 10) as f64, (i / 10) as f64, 3.0)).collect();
        assert!(matches!(fit_cylinder(&pts), Err(Error::Degenerate(_))));
        assert!(fit_cylinder(&pts[..5]).is_err());
    }

    #[test]
    fn fits_are_rigid_motion_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cyl = cylinder_points(12.0, 80.0, (0.0, 1.5 * PI), 1500, 0.03, 11);
        let base = fit_cylinder(&cyl).unwrap();
        let g = Normal::new(0.0, 0.03).unwrap();
        let sph: Vec<Point3> = (0..1500)
            .map(|_| {
                let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                    .normalize();
                Point3::from(v * (15.0 + g.sample(&mut rng)))
            })
            .collect();
        let sbase = fit_sphere(&sph).unwrap();
        for _ in 0..5 {
            let t = rand_rigid(&mut rng);
            let moved: Vec<Point3> = cyl.iter().map(|p| t.apply(p)).collect();
            let f = fit_cylinder(&moved).unwrap();
            assert!((f.rms - base.rms).abs() < 1e-9);
            assert!((f.model.radius - base.model.radius).abs() < 1e-7);
            let d = t.apply_vector(&base.model.direction);
            assert!(d.dot(&f.model.direction).abs() > 1.0 - 1e-10);
            let smoved: Vec<Point3> = sph.iter().map(|p| t.apply(p)).collect();
            let sf = fit_sphere(&smoved).unwrap();
            assert!((sf.rms - sbase.rms).abs() < 1e-9);
            assert!((sf.model.center - t.apply(&sbase.model.center)).norm() < 1e-7);
        }
    }

    #[test]
    fn gap_cases() {
        let outer = CylinderModel { point: Point3::origin(), direction: Vector3::z(), radius: 32.38 };
        let inner = CylinderModel { radius: 10.0, ..outer };
        let g = cylinder_gap(&inner, &outer).unwrap();
        assert!((g.distance - 22.38).abs() < 1e-12);
        assert_eq!(cylinder_gap(&outer, &outer).unwrap().distance, 0.0);
        let tilted = CylinderModel {
            direction: Vector3::new(0.0, (10f64).to_radians().sin(), (10f64).to_radians().cos()),
            ..inner
        };
        assert!(cylinder_gap(&tilted, &outer).is_err());
    }
}
