use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::calib::Device;
use crate::error::{Error, Result};
use crate::geometry::{triangulate, CameraModel, Point2, Point3, RigidTransform};

use super::ellipse::fit_ellipse;

/// Largest tolerated deviation of the c0 corner from a right angle (deg).
pub const MAX_CORNER_DEVIATION_DEG: f64 = 20.0;
/// Relative tolerance on the triangulated centre spacing.
pub const SCALE_TOLERANCE: f64 = 0.05;

/// Three-circle target: `c0` at the origin, `c1` on +x, `c2` on +y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerGeometry {
    pub d01: f64,
    pub d02: f64,
    pub radius: f64,
}

impl Default for MarkerGeometry {
    fn default() -> Self {
        Self {
            d01: 40.0,
            d02: 40.0,
            radius: 7.5,
        }
    }
}

impl MarkerGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.d01 > 2.0 * self.radius && self.d02 > 2.0 * self.radius) {
            return Err(Error::InvalidParameter("marker circles overlap or have no size".into()));
        }
        Ok(())
    }

    /// Circle centres in the target frame, indexed by ID.
    pub fn centers(&self) -> [Point3; 3] {
        [
            Point3::origin(),
            Point3::new(self.d01, 0.0, 0.0),
            Point3::new(0.0, self.d02, 0.0),
        ]
    }
}

/// Labelled centres in one view; `centers[id]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerDetection {
    pub centers: [Point2; 3],
    pub view: Device,
    /// Largest ellipse-fit residual of the three circles (px).
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPose {
    /// Target -> world.
    pub pose: RigidTransform,
    /// RMS reprojection residual of the triangulated centres (px).
    pub residual_px: f64,
}

fn cross2(a: nalgebra::Vector2<f64>, b: nalgebra::Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Orders three centres as `[c0, c1, c2]`.
///
/// `c0` is the corner closest to a right angle. With the marker facing the
/// camera, `(c1 − c0) × (c2 − c0)` is negative in pixel coordinates (y down).
pub fn label_centers(centers: &[Point2]) -> Result<[Point2; 3]> {
    if centers.len() != 3 {
        return Err(Error::Degenerate(format!("expected 3 marker circles, found {}", centers.len())));
    }
    let mut best = (usize::MAX, f64::INFINITY);
    for i in 0..3 {
        let a = centers[(i + 1) % 3] - centers[i];
        let b = centers[(i + 2) % 3] - centers[i];
        let cos = a.dot(&b) / (a.norm() * b.norm());
        if !cos.is_finite() {
            return Err(Error::Degenerate("coincident marker centres".into()));
        }
        let dev = (cos.clamp(-1.0, 1.0).acos().to_degrees() - 90.0).abs();
        if dev < best.1 {
            best = (i, dev);
        }
    }
    if best.1 > MAX_CORNER_DEVIATION_DEG {
        return Err(Error::AmbiguousTarget { deviation_deg: best.1 });
    }
    let c0 = centers[best.0];
    let (mut c1, mut c2) = (centers[(best.0 + 1) % 3], centers[(best.0 + 2) % 3]);
    if cross2(c1 - c0, c2 - c0) > 0.0 {
        std::mem::swap(&mut c1, &mut c2);
    }
    Ok([c0, c1, c2])
}

/// Labels the circles in both views; matching across views follows from the
/// shared ID convention.
pub fn assign_ids(
    view1: &[Point2],
    view2: &[Point2],
    residuals: (f64, f64),
) -> Result<(MarkerDetection, MarkerDetection)> {
    Ok((
        MarkerDetection {
            centers: label_centers(view1)?,
            view: Device::Cam1,
            residual: residuals.0,
        },
        MarkerDetection {
            centers: label_centers(view2)?,
            view: Device::Cam2,
            residual: residuals.1,
        },
    ))
}

/// Frame from three triangulated centres: `x̂` along `C1 − C0`, `ŷ` from
/// `C2 − C0` made orthogonal to `x̂`, origin at `C0`.
pub fn frame_from_centers(c: &[Point3; 3]) -> Result<RigidTransform> {
    let ex = c[1] - c[0];
    if !(ex.norm() > 0.0) {
        return Err(Error::Degenerate("coincident marker centres".into()));
    }
    let x = ex.normalize();
    let v = c[2] - c[0];
    let y = v - x * v.dot(&x);
    if !(y.norm() > 1e-9 * v.norm().max(1e-300)) {
        return Err(Error::Degenerate("collinear marker centres".into()));
    }
    let y = y.normalize();
    let r = Matrix3::from_columns(&[x, y, x.cross(&y)]);
    Ok(RigidTransform {
        rotation: r,
        translation: c[0].coords,
    })
}

/// Pixel offset of the image-ellipse centre from the projected centre for a
/// circle of `radius` at `center` with unit normal `normal` (world frame).
pub fn ellipse_center_bias(cam: &CameraModel, center: &Point3, normal: &Vector3<f64>, radius: f64) -> Result<nalgebra::Vector2<f64>> {
    let helper = if normal.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = normal.cross(&helper).normalize();
    let v = normal.cross(&u);
    let rim: Vec<Point2> = (0..24)
        .map(|i| {
            let t = TAU * i as f64 / 24.0;
            cam.project(&(center + (u * t.cos() + v * t.sin()) * radius))
        })
        .collect::<Result<_>>()?;
    let fit = fit_ellipse(&rim)?;
    Ok(fit.center - cam.project(center)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseOptions {
    /// Iterations of perspective-bias correction (the image of a tilted
    /// circle's centre is not the centre of its image ellipse).
    pub bias_iterations: usize,
    pub check_scale: bool,
}

impl Default for PoseOptions {
    fn default() -> Self {
        Self {
            bias_iterations: 2,
            check_scale: true,
        }
    }
}

pub fn estimate_pose(
    detections: (&MarkerDetection, &MarkerDetection),
    cams: (&CameraModel, &CameraModel),
    geometry: &MarkerGeometry,
) -> Result<TargetPose> {
    estimate_pose_with(detections, cams, geometry, &PoseOptions::default())
}

/// Triangulates the three labelled centres and builds the target frame.
pub fn estimate_pose_with(
    detections: (&MarkerDetection, &MarkerDetection),
    cams: (&CameraModel, &CameraModel),
    geometry: &MarkerGeometry,
    options: &PoseOptions,
) -> Result<TargetPose> {
    let (d1, d2) = detections;
    let (cam1, cam2) = cams;
    let mut obs1 = d1.centers;
    let mut obs2 = d2.centers;
    let mut result = solve(&obs1, &obs2, cam1, cam2)?;
    for _ in 0..options.bias_iterations {
        let normal = result.0.rotation.column(2).into_owned();
        let world = geometry.centers().map(|c| result.0.apply(&c));
        for k in 0..3 {
            obs1[k] = d1.centers[k] - ellipse_center_bias(cam1, &world[k], &normal, geometry.radius)?;
            obs2[k] = d2.centers[k] - ellipse_center_bias(cam2, &world[k], &normal, geometry.radius)?;
        }
        result = solve(&obs1, &obs2, cam1, cam2)?;
    }
    let (pose, residual_px, pts) = result;
    if options.check_scale {
        for (k, expected) in [(1, geometry.d01), (2, geometry.d02)] {
            let measured = (pts[k] - pts[0]).norm();
            if (measured - expected).abs() > SCALE_TOLERANCE * expected {
                return Err(Error::ScaleMismatch { measured, expected });
            }
        }
    }
    Ok(TargetPose { pose, residual_px })
}

fn solve(
    obs1: &[Point2; 3],
    obs2: &[Point2; 3],
    cam1: &CameraModel,
    cam2: &CameraModel,
) -> Result<(RigidTransform, f64, [Point3; 3])> {
    let mut pts = [Point3::origin(); 3];
    let mut sq = 0.0;
    for k in 0..3 {
        let t = triangulate(&[(cam1, obs1[k]), (cam2, obs2[k])])?;
        pts[k] = t.point;
        sq += t.rms_px * t.rms_px;
    }
    Ok((frame_from_centers(&pts)?, (sq / 3.0).sqrt(), pts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    pub(super) fn stereo() -> (CameraModel, CameraModel) {
        let cam1 = CameraModel::new(3300.0, 3300.0, 640.0, 512.0, 1280, 1024).unwrap();
        let cam2 = CameraModel::new(3300.0, 3300.0, 640.0, 512.0, 1280, 1024)
            .unwrap()
            .with_pose(RigidTransform::from_axis_angle(Vector3::new(0.0, -0.21, 0.0), Vector3::new(150.0, 0.0, 0.0)));
        (cam1, cam2)
    }

    /// Target facing the cameras: base orientation flips y and z.
    fn facing(aa: Vector3<f64>, t: Vector3<f64>) -> RigidTransform {
        let base = RigidTransform::from_axis_angle(Vector3::new(std::f64::consts::PI, 0.0, 0.0), Vector3::zeros());
        RigidTransform::from_axis_angle(aa, t).compose(&base)
    }

    fn project_all(cam: &CameraModel, pose: &RigidTransform, g: &MarkerGeometry, exact_ellipse: bool) -> [Point2; 3] {
        let n = pose.rotation.column(2).into_owned();
        g.centers().map(|c| {
            let w = pose.apply(&c);
            let p = cam.project(&w).unwrap();
            if exact_ellipse {
                p + ellipse_center_bias(cam, &w, &n, g.radius).unwrap()
            } else {
                p
            }
        })
    }

    #[test]
    fn right_angle_labels() {
        let pts = [Point2::new(100.0, 100.0), Point2::new(100.0, 60.0), Point2::new(140.0, 100.0)];
        let l = label_centers(&pts).unwrap();
        assert_eq!(l[0], pts[0]);
        assert_eq!(l[1], pts[2]);
        assert_eq!(l[2], pts[1]);
        // Order of the input does not matter.
        let l2 = label_centers(&[pts[2], pts[0], pts[1]]).unwrap();
        assert_eq!(l, l2);
    }

    #[test]
    fn equilateral_is_ambiguous() {
        let pts = [Point2::new(0.0, 0.0), Point2::new(40.0, 0.0), Point2::new(20.0, 34.641)];
        assert!(matches!(label_centers(&pts), Err(Error::AmbiguousTarget { .. })));
        assert!(label_centers(&pts[..2]).is_err());
    }

    #[test]
    fn labels_survive_in_plane_rotation() {
        let (cam1, cam2) = stereo();
        let g = MarkerGeometry::default();
        for k in 0..24 {
            let spin = TAU * k as f64 / 24.0;
            let pose = facing(Vector3::zeros(), Vector3::new(0.0, 0.0, 700.0))
                .compose(&RigidTransform::from_axis_angle(Vector3::new(0.0, 0.0, spin), Vector3::zeros()));
            for cam in [&cam1, &cam2] {
                let truth = project_all(cam, &pose, &g, false);
                let shuffled = [truth[(k + 1) % 3], truth[k % 3], truth[(k + 2) % 3]];
                assert_eq!(label_centers(&shuffled).unwrap(), truth);
            }
        }
    }

    #[test]
    fn aligned_target_gives_identity() {
        let c = [Point3::origin(), Point3::new(40.0, 0.0, 0.0), Point3::new(0.0, 40.0, 0.0)];
        let f = frame_from_centers(&c).unwrap();
        assert!((f.rotation - Matrix3::identity()).norm() < 1e-15);
        assert!(f.translation.norm() < 1e-15);
    }

    #[test]
    fn gram_schmidt_keeps_rotation_valid() {
        let c = [Point3::origin(), Point3::new(40.0, 0.3, -0.2), Point3::new(0.5, 39.0, 0.4)];
        let f = frame_from_centers(&c).unwrap();
        assert!(f.is_valid());
    }

    #[test]
    fn noiseless_pose_recovered() {
        let (cam1, cam2) = stereo();
        let g = MarkerGeometry::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let aa = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-3.0..3.0));
            let t = Vector3::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0), rng.random_range(650.0..750.0));
            let truth = facing(aa, t);
            let (a, b) = assign_ids(
                &project_all(&cam1, &truth, &g, true),
                &project_all(&cam2, &truth, &g, true),
                (0.0, 0.0),
            )
            .unwrap();
            let est = estimate_pose((&a, &b), (&cam1, &cam2), &g).unwrap();
            assert!(est.pose.angle_to(&truth).to_degrees() < 0.05);
            assert!((est.pose.translation - truth.translation).norm() < 0.02);
        }
    }

    #[test]
    fn scale_mismatch_detected() {
        let (cam1, cam2) = stereo();
        let g = MarkerGeometry::default();
        let truth = facing(Vector3::zeros(), Vector3::new(0.0, 0.0, 700.0));
        let (a, b) = assign_ids(&project_all(&cam1, &truth, &g, false), &project_all(&cam2, &truth, &g, false), (0.0, 0.0)).unwrap();
        let wrong = MarkerGeometry { d01: 50.0, ..g };
        assert!(matches!(
            estimate_pose((&a, &b), (&cam1, &cam2), &wrong),
            Err(Error::ScaleMismatch { .. })
        ));
    }

    #[test]
    fn orientation_error_under_centre_noise() {
        let (cam1, cam2) = stereo();
        let g = MarkerGeometry { d01: 60.0, d02: 60.0, radius: 7.5 };
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut errors: Vec<f64> = (0..1000)
            .map(|_| {
                let aa = Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-3.0..3.0));
                let truth = facing(aa, Vector3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), 700.0));
                let mut v1 = project_all(&cam1, &truth, &g, true);
                let mut v2 = project_all(&cam2, &truth, &g, true);
                for p in v1.iter_mut().chain(v2.iter_mut()) {
                    *p += nalgebra::Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                }
                let (a, b) = assign_ids(&v1, &v2, (0.0, 0.0)).unwrap();
                let est = estimate_pose((&a, &b), (&cam1, &cam2), &g).unwrap();
                est.pose.angle_to(&truth).to_degrees()
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        assert!(errors[500] < 0.3, "median {}", errors[500]);
    }
}
