//! Rigid transforms, pinhole cameras, projection and multi-view triangulation.
//!
//! Conventions: millimetres for world coordinates, pixels for image planes,
//! pixel centres at integer coordinates. A [`CameraModel`] pose maps device
//! coordinates into the world frame, which is the camera-1 frame.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point2 = nalgebra::Point2<f64>;
pub type Point3 = nalgebra::Point3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// Proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not orthonormal with
    /// unit determinant.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        if !t.is_valid() {
            return Err(Error::InvalidParameter(format!(
                "rotation not orthonormal (|RtR-I|={:.3e}, det={:.12})",
                (rotation.transpose() * rotation - Matrix3::identity()).norm(),
                rotation.determinant()
            )));
        }
        Ok(t)
    }

    /// Rotation given as an axis-angle vector (radians).
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_scaled_axis(axis_angle).matrix(),
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Nearest proper rotation (orthogonal polar factor) of an arbitrary 3x3 matrix.
    pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
        let svd = m.svd(true, true);
        let u = svd.u.unwrap();
        let v_t = svd.v_t.unwrap();
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut fix = Matrix3::identity();
            fix[(2, 2)] = -1.0;
            r = u * fix * v_t;
        }
        r
    }

    pub fn is_valid(&self) -> bool {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).norm();
        ortho < ORTHONORMAL_TOL
            && (r.determinant() - 1.0).abs() < ORTHONORMAL_TOL
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        Rotation3::from_matrix_unchecked(self.rotation).scaled_axis()
    }

    /// Rotation angle (radians) of `self⁻¹ ∘ other`.
    pub fn angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Nine rotation entries (row-major) followed by the translation.
    pub fn to_row12(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t[0],
            t[1],
            t[2],
        ]
    }

    /// Inverse of [`to_row12`](Self::to_row12). A rotation block that is not
    /// orthonormal to working precision (values written with few digits) is
    /// projected onto SO(3).
    pub fn from_row12(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::Parse(format!("expected 12 pose numbers, got {}", v.len())));
        }
        let r = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
        let t = Vector3::new(v[9], v[10], v[11]);
        if let Ok(exact) = Self::new(r, t) {
            return Ok(exact);
        }
        let projected = Self::nearest_rotation(&r);
        if (projected - r).norm() > 1e-6 {
            return Err(Error::Parse("pose rotation block is not a rotation".into()));
        }
        Self::new(projected, t)
    }

    /// Applies a left increment `exp(dw)` to the rotation and adds `dt`.
    pub fn perturbed(&self, dw: &Vector3<f64>, dt: &Vector3<f64>) -> RigidTransform {
        let dr = Rotation3::from_scaled_axis(*dw);
        RigidTransform {
            rotation: dr.matrix() * self.rotation,
            translation: self.translation + dt,
        }
    }
}

/// Pinhole camera (also used for the projector as an inverse camera).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    /// Device -> world.
    pub pose: RigidTransform,
    pub width: u32,
    pub height: u32,
    /// Two-term radial distortion `(k1, k2)`; `None` means ideal pinhole.
    pub distortion: Option<[f64; 2]>,
}

impl CameraModel {
    pub fn new(fu: f64, fv: f64, cu: f64, cv: f64, width: u32, height: u32) -> Result<Self> {
        let cam = Self {
            fu,
            fv,
            cu,
            cv,
            pose: RigidTransform::identity(),
            width,
            height,
            distortion: None,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn with_pose(mut self, pose: RigidTransform) -> Self {
        self.pose = pose;
        self
    }

    pub fn with_distortion(mut self, k: Option<[f64; 2]>) -> Self {
        self.distortion = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fu > 0.0
            && self.fv > 0.0
            && self.cu >= 0.0
            && self.cv >= 0.0
            && self.cu < self.width as f64
            && self.cv < self.height as f64;
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "bad intrinsics fu={} fv={} c=({}, {}) size {}x{}",
                self.fu, self.fv, self.cu, self.cv, self.width, self.height
            )));
        }
        if !self.pose.is_valid() {
            return Err(Error::InvalidParameter("camera pose is not a rigid motion".into()));
        }
        Ok(())
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fu, 0.0, self.cu, 0.0, self.fv, self.cv, 0.0, 0.0, 1.0)
    }

    pub fn world_to_device(&self) -> RigidTransform {
        self.pose.inverse()
    }

    /// Optical centre in world coordinates.
    pub fn center(&self) -> Point3 {
        Point3::from(self.pose.translation)
    }

    /// `K [R | t]` mapping homogeneous world points to homogeneous pixels.
    /// Ignores distortion.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let w2d = self.world_to_device();
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&w2d.rotation);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&w2d.translation);
        self.intrinsic_matrix() * rt
    }

    fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        match self.distortion {
            Some([k1, k2]) => {
                let r2 = x * x + y * y;
                let s = 1.0 + k1 * r2 + k2 * r2 * r2;
                (x * s, y * s)
            }
            None => (x, y),
        }
    }

    /// Projects a point given in the device frame.
    pub fn project_device(&self, p: &Vector3<f64>) -> Result<Point2> {
        if !(p.z > 0.0) {
            return Err(Error::PointBehindCamera { depth: p.z });
        }
        let (x, y) = self.distort(p.x / p.z, p.y / p.z);
        Ok(Point2::new(self.fu * x + self.cu, self.fv * y + self.cv))
    }

    pub fn project(&self, x: &Point3) -> Result<Point2> {
        let pd = self.world_to_device().apply(x);
        self.project_device(&pd.coords)
    }

    /// Undistorted normalized image coordinates `(x/z, y/z)` of a pixel.
    pub fn normalized(&self, p: &Point2) -> (f64, f64) {
        let xd = (p.x - self.cu) / self.fu;
        let yd = (p.y - self.cv) / self.fv;
        match self.distortion {
            None => (xd, yd),
            Some([k1, k2]) => {
                let (mut x, mut y) = (xd, yd);
                for _ in 0..50 {
                    let r2 = x * x + y * y;
                    let s = 1.0 + k1 * r2 + k2 * r2 * r2;
                    let (nx, ny) = (xd / s, yd / s);
                    let done = (nx - x).abs() < 1e-15 && (ny - y).abs() < 1e-15;
                    x = nx;
                    y = ny;
                    if done {
                        break;
                    }
                }
                (x, y)
            }
        }
    }

    /// World point on the pixel's ray at the given device-frame depth.
    pub fn backproject(&self, p: &Point2, depth: f64) -> Point3 {
        let (x, y) = self.normalized(p);
        self.pose.apply(&Point3::new(x * depth, y * depth, depth))
    }

    /// Ray `(origin, unit direction)` through a pixel, in world coordinates.
    pub fn ray(&self, p: &Point2) -> (Point3, Vector3<f64>) {
        let (x, y) = self.normalized(p);
        let d = self.pose.apply_vector(&Vector3::new(x, y, 1.0)).normalize();
        (self.center(), d)
    }
}

/// Result of [`triangulate`].
#[derive(Debug, Clone, Copy)]
pub struct Triangulation {
    pub point: Point3,
    /// RMS reprojection residual over the observations (px).
    pub rms_px: f64,
}

const RANK_THRESHOLD: f64 = 1e-10;

/// Linear (normalized DLT) triangulation followed by one Gauss–Newton step on
/// the reprojection error.
pub fn triangulate(obs: &[(&CameraModel, Point2)]) -> Result<Triangulation> {
    if obs.len() < 2 {
        return Err(Error::EmptyInput("triangulation needs at least two views"));
    }

    // Condition the world coordinates around the camera centres.
    let n = obs.len() as f64;
    let origin = obs
        .iter()
        .fold(Vector3::zeros(), |acc, (c, _)| acc + c.center().coords)
        / n;
    let spread = obs
        .iter()
        .map(|(c, _)| (c.center().coords - origin).norm())
        .fold(0.0, f64::max);
    let scale = if spread > 1e-9 { spread } else { 1.0 };

    let mut a = DMatrix::<f64>::zeros(2 * obs.len(), 4);
    for (i, (cam, px)) in obs.iter().enumerate() {
        let w2d = cam.world_to_device();
        let (x, y) = cam.normalized(px);
        let r = &w2d.rotation;
        let t = &w2d.translation;
        for (k, coord) in [x, y].into_iter().enumerate() {
            let row = 2 * i + k;
            for j in 0..3 {
                let c = coord * r[(2, j)] - r[(k, j)];
                a[(row, j)] = c * scale;
                a[(row, 3)] += c * origin[j];
            }
            a[(row, 3)] += coord * t[2] - t[k];
        }
        let norm = a.row(2 * i).norm().max(a.row(2 * i + 1).norm());
        if norm > 0.0 {
            for k in 0..2 {
                let mut row = a.row_mut(2 * i + k);
                row /= norm;
            }
        }
    }

    let svd = a.svd(false, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    if sv[0] <= 0.0 || sv[2] / sv[0] < RANK_THRESHOLD {
        return Err(Error::DegenerateRays);
    }
    let v_t = svd.v_t.unwrap();
    let h = v_t.row(order[3]);
    if h[3].abs() < RANK_THRESHOLD * h.norm() {
        return Err(Error::DegenerateRays);
    }
    let mut x = Point3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]);
    x = Point3::from(x.coords * scale + origin);

    // One Gauss–Newton step on pixel residuals.
    let mut jtj = Matrix3::<f64>::zeros();
    let mut jtr = Vector3::<f64>::zeros();
    for (cam, px) in obs {
        let (r, j) = reprojection_jacobian(cam, &x, px)?;
        jtj += j.transpose() * j;
        jtr += j.transpose() * r;
    }
    if let Some(inv) = jtj.try_inverse() {
        let step = -(inv * jtr);
        let candidate = Point3::from(x.coords + step);
        if rms_over(obs, &candidate).unwrap_or(f64::INFINITY) <= rms_over(obs, &x)? {
            x = candidate;
        }
    }

    let rms_px = rms_over(obs, &x)?;
    Ok(Triangulation { point: x, rms_px })
}

fn rms_over(obs: &[(&CameraModel, Point2)], x: &Point3) -> Result<f64> {
    let mut sum = 0.0;
    for (cam, px) in obs {
        sum += (cam.project(x)? - px).norm_squared();
    }
    Ok((sum / obs.len() as f64).sqrt())
}

/// Pixel residual `project(x) - observed` and its 2x3 derivative w.r.t. `x`.
/// Distortion is ignored in the derivative.
fn reprojection_jacobian(
    cam: &CameraModel,
    x: &Point3,
    observed: &Point2,
) -> Result<(nalgebra::Vector2<f64>, nalgebra::Matrix2x3<f64>)> {
    let w2d = cam.world_to_device();
    let pc = w2d.apply(x).coords;
    let proj = cam.project_device(&pc)?;
    let z = pc.z;
    let d_proj = nalgebra::Matrix2x3::new(
        cam.fu / z,
        0.0,
        -cam.fu * pc.x / (z * z),
        0.0,
        cam.fv / z,
        -cam.fv * pc.y / (z * z),
    );
    Ok((proj - observed, d_proj * w2d.rotation))
}

/// Root-mean-square of `‖project(X) − x‖` over all pairs.
pub fn reprojection_rms(cam: &CameraModel, pairs: &[(Point3, Point2)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("reprojection_rms needs at least one pair"));
    }
    let mut sum = 0.0;
    for (x, p) in pairs {
        sum += (cam.project(x)? - p).norm_squared();
    }
    Ok((sum / pairs.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Vector4, Matrix3x4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rz(deg: f64) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vector3::z_axis(), deg.to_radians()).matrix()
    }

    fn cam1000() -> CameraModel {
        CameraModel::new(1000.0, 1000.0, 640.0, 512.0, 1280, 1024).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransform {
        let w = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let t = Vector3::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0));
        RigidTransform::from_axis_angle(w, t)
    }

    #[test]
    fn compose_identity_and_inverse() {
        let i = RigidTransform::identity();
        assert_eq!(i.compose(&i), i);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t = random_pose(&mut rng);
            let e = t.compose(&t.inverse());
            assert!((e.rotation - Matrix3::identity()).norm() < 1e-9);
            assert!(e.translation.norm() < 1e-6);
        }
    }

    #[test]
    fn compose_matches_homogeneous_product() {
        // b first: Rz90 (1,0,0) = (0,1,0); then a: Rz90 (0,1,0) + (1,0,0) = (0,0,0).
        let a = RigidTransform::new(rz(90.0), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let b = RigidTransform::new(rz(90.0), Vector3::zeros()).unwrap();
        let x = Point3::new(1.0, 0.0, 0.0);
        let p = a.compose(&b).apply(&x);
        let h = a.to_matrix() * b.to_matrix() * Vector4::new(1.0, 0.0, 0.0, 1.0);
        assert_abs_diff_eq!(p, Point3::new(h.x, h.y, h.z), epsilon = 1e-12);
        assert_abs_diff_eq!(p, Point3::new(0.0, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p, a.apply(&b.apply(&x)), epsilon = 1e-12);
        // a alone sends (1,0,0) to (1,1,0).
        assert_abs_diff_eq!(a.apply(&x), Point3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn compose_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let (a, b, c) = (random_pose(&mut rng), random_pose(&mut rng), random_pose(&mut rng));
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            assert!((l.rotation - r.rotation).norm() < 1e-9);
            assert!((l.translation - r.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
        assert!(RigidTransform::new(m * 1.01, Vector3::zeros()).is_err());
    }

    #[test]
    fn row12_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_pose(&mut rng);
        let back = RigidTransform::from_row12(&t.to_row12()).unwrap();
        assert!((back.rotation - t.rotation).norm() < 1e-12);
        assert!(RigidTransform::from_row12(&[0.0; 11]).is_err());
    }

    #[test]
    fn project_optical_axis_and_similar_triangles() {
        let cam = cam1000();
        let p = cam.project(&Point3::new(0.0, 0.0, 1000.0)).unwrap();
        assert_abs_diff_eq!(p, Point2::new(640.0, 512.0), epsilon = 1e-12);
        let p = cam.project(&Point3::new(100.0, 0.0, 1000.0)).unwrap();
        assert_abs_diff_eq!(p, Point2::new(740.0, 512.0), epsilon = 1e-12);
        assert!(matches!(
            cam.project(&Point3::new(0.0, 0.0, -5.0)),
            Err(Error::PointBehindCamera { .. })
        ));
        assert!(cam.project(&Point3::new(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn project_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let cam = CameraModel::new(
                rng.random_range(500.0..4000.0),
                rng.random_range(500.0..4000.0),
                rng.random_range(300.0..900.0),
                rng.random_range(200.0..800.0),
                1280,
                1024,
            )
            .unwrap()
            .with_pose(RigidTransform::from_axis_angle(
                Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
                Vector3::new(rng.random_range(-200.0..200.0), rng.random_range(-200.0..200.0), rng.random_range(-50.0..50.0)),
            ));
            let x = cam.backproject(
                &Point2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..1024.0)),
                rng.random_range(200.0..2000.0),
            );
            // Independent oracle: explicit K [R^T | -R^T C] built entry by entry.
            let r = cam.pose.rotation;
            let c = cam.pose.translation;
            let mut rt = Matrix3x4::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    rt[(i, j)] = r[(j, i)];
                }
                rt[(i, 3)] = -(r[(0, i)] * c[0] + r[(1, i)] * c[1] + r[(2, i)] * c[2]);
            }
            let k = Matrix3::new(cam.fu, 0.0, cam.cu, 0.0, cam.fv, cam.cv, 0.0, 0.0, 1.0);
            let h = k * rt * Vector4::new(x.x, x.y, x.z, 1.0);
            let p = cam.project(&x).unwrap();
            assert!((p.x - h.x / h.z).abs() < 1e-9);
            assert!((p.y - h.y / h.z).abs() < 1e-9);
            // Homogeneous scale invariance.
            let h2 = k * rt * (Vector4::new(x.x, x.y, x.z, 1.0) * 3.7);
            assert!((h2.x / h2.z - h.x / h.z).abs() < 1e-9);
        }
    }

    #[test]
    fn backproject_project_identity() {
        let cam = cam1000().with_pose(RigidTransform::from_axis_angle(
            Vector3::new(0.1, -0.2, 0.05),
            Vector3::new(10.0, 20.0, -30.0),
        ));
        for &(u, v) in &[(0.0, 0.0), (640.0, 512.0), (1279.0, 1023.0), (123.4, 987.6)] {
            let p = Point2::new(u, v);
            let q = cam.project(&cam.backproject(&p, 700.0)).unwrap();
            assert!((q - p).norm() < 1e-9);
        }
    }

    #[test]
    fn distortion_round_trip() {
        let cam = cam1000().with_distortion(Some([-0.12, 0.03]));
        let p = Point2::new(100.0, 900.0);
        let q = cam.project(&cam.backproject(&p, 500.0)).unwrap();
        assert!((q - p).norm() < 1e-8);
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(CameraModel::new(0.0, 1000.0, 640.0, 512.0, 1280, 1024).is_err());
        assert!(CameraModel::new(1000.0, 1000.0, 1280.0, 512.0, 1280, 1024).is_err());
    }

    fn stereo_pair(baseline: f64) -> (CameraModel, CameraModel) {
        let c1 = cam1000();
        let c2 = cam1000().with_pose(RigidTransform::from_translation(Vector3::new(baseline, 0.0, 0.0)));
        (c1, c2)
    }

    #[test]
    fn triangulate_recovers_point() {
        let (c1, c2) = stereo_pair(100.0);
        let x = Point3::new(10.0, 20.0, 700.0);
        let obs = [(&c1, c1.project(&x).unwrap()), (&c2, c2.project(&x).unwrap())];
        let t = triangulate(&obs).unwrap();
        assert!((t.point - x).norm() < 1e-6);
        assert!(t.rms_px < 1e-9);
    }

    #[test]
    fn triangulate_identical_cameras_degenerate() {
        let c1 = cam1000();
        let x = Point3::new(10.0, 20.0, 700.0);
        let p = c1.project(&x).unwrap();
        assert!(matches!(triangulate(&[(&c1, p), (&c1, p)]), Err(Error::DegenerateRays)));
        assert!(triangulate(&[(&c1, p)]).is_err());
    }

    #[test]
    fn triangulate_noise_matches_first_order_covariance() {
        let (c1, c2) = stereo_pair(100.0);
        let x = Point3::new(10.0, 20.0, 700.0);
        let sigma = 0.1;
        // First-order prediction: cov = σ² (JᵀJ)⁻¹ with J stacked projection Jacobians.
        let mut jtj = Matrix3::zeros();
        for cam in [&c1, &c2] {
            let (_, j) = reprojection_jacobian(cam, &x, &cam.project(&x).unwrap()).unwrap();
            jtj += j.transpose() * j;
        }
        let cov = jtj.try_inverse().unwrap() * sigma * sigma;
        // Monte-Carlo mean error of a Gaussian with this covariance, estimated
        // by sampling the covariance directly (independent of triangulate()).
        let chol = cov.cholesky().unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = Normal::new(0.0, 1.0).unwrap();
        let trials = 1000;
        let mut predicted = 0.0;
        let mut measured = 0.0;
        let p1 = c1.project(&x).unwrap();
        let p2 = c2.project(&x).unwrap();
        for _ in 0..trials {
            let z = Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
            predicted += (chol * z).norm();
            let noisy = |p: Point2, rng: &mut ChaCha8Rng| {
                Point2::new(p.x + sigma * n.sample(rng), p.y + sigma * n.sample(rng))
            };
            let o1 = noisy(p1, &mut rng);
            let o2 = noisy(p2, &mut rng);
            let t = triangulate(&[(&c1, o1), (&c2, o2)]).unwrap();
            measured += (t.point - x).norm();
        }
        predicted /= trials as f64;
        measured /= trials as f64;
        let ratio = measured / predicted;
        assert!(ratio > 0.5 && ratio < 2.0, "ratio {ratio}");
    }

    #[test]
    fn reprojection_rms_cases() {
        let cam = cam1000();
        assert!(reprojection_rms(&cam, &[]).is_err());
        let pts: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64 * 10.0, 5.0, 800.0)).collect();
        let mut pairs: Vec<(Point3, Point2)> = pts.iter().map(|x| (*x, cam.project(x).unwrap())).collect();
        assert!(reprojection_rms(&cam, &pairs).unwrap() < 1e-12);
        pairs[3].1 += nalgebra::Vector2::new(3.0, 4.0);
        assert_abs_diff_eq!(reprojection_rms(&cam, &pairs).unwrap(), 5.0 / 10f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn reprojection_rms_noise_level() {
        let cam = cam1000();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = Normal::new(0.0, 0.1).unwrap();
        let pairs: Vec<(Point3, Point2)> = (0..10_000)
            .map(|_| {
                let x = cam.backproject(&Point2::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..1024.0)), 700.0);
                let p = cam.project(&x).unwrap();
                (x, Point2::new(p.x + n.sample(&mut rng), p.y + n.sample(&mut rng)))
            })
            .collect();
        let rms = reprojection_rms(&cam, &pairs).unwrap();
        let expect = 0.1 * 2f64.sqrt();
        assert!((rms - expect).abs() < 0.1 * expect, "rms {rms}");
    }
}
