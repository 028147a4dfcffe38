use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::calib::Device;
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Point2, Point3, RigidTransform};

/// Two cameras and a projector. Camera 1 defines the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rig {
    pub cam1: CameraModel,
    pub cam2: CameraModel,
    pub projector: CameraModel,
}

impl Rig {
    /// Cameras 150 mm apart and a projector 200 mm to the left of camera 1,
    /// all converging at about 700 mm.
    pub fn nominal() -> Self {
        let cam1 = CameraModel::new(3300.0, 3310.0, 640.0, 512.0, 1280, 1024).expect("valid intrinsics");
        let cam2 = CameraModel::new(3290.0, 3295.0, 630.0, 520.0, 1280, 1024)
            .expect("valid intrinsics")
            .with_pose(RigidTransform::from_axis_angle(Vector3::new(0.0, -0.21, 0.0), Vector3::new(150.0, 0.0, 0.0)));
        let projector = CameraModel::new(2800.0, 2805.0, 635.0, 410.0, 1280, 800)
            .expect("valid intrinsics")
            .with_pose(RigidTransform::from_axis_angle(Vector3::new(0.0, 0.278, 0.0), Vector3::new(-200.0, 0.0, 0.0)));
        Self { cam1, cam2, projector }
    }

    pub fn device(&self, d: Device) -> &CameraModel {
        match d {
            Device::Cam1 => &self.cam1,
            Device::Cam2 => &self.cam2,
            Device::Projector => &self.projector,
        }
    }

    pub fn devices(&self) -> [(Device, CameraModel); 3] {
        [(Device::Cam1, self.cam1), (Device::Cam2, self.cam2), (Device::Projector, self.projector)]
    }
}

/// Reflectance pattern printed on a plane, in plane coordinates (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Texture {
    Uniform { albedo: f64 },
    /// Discs of one radius on a uniform background.
    Discs {
        centers: Vec<[f64; 2]>,
        radius: f64,
        disc: f64,
        background: f64,
    },
}

impl Texture {
    pub fn albedo(&self, x: f64, y: f64) -> f64 {
        match self {
            Texture::Uniform { albedo } => *albedo,
            Texture::Discs {
                centers,
                radius,
                disc,
                background,
            } => {
                let r2 = radius * radius;
                if centers.iter().any(|c| (x - c[0]).powi(2) + (y - c[1]).powi(2) < r2) {
                    *disc
                } else {
                    *background
                }
            }
        }
    }
}

/// Analytic surfaces seen by the cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surface {
    /// The `z = 0` plane of `pose` (plane -> world), limited to
    /// `|x| <= half_width`, `|y| <= half_height` unless they are infinite.
    Plane {
        pose: RigidTransform,
        half_width: f64,
        half_height: f64,
        texture: Texture,
    },
    Sphere { center: Point3, radius: f64 },
    /// Finite cylinder around `point + s·direction`, `|s| <= half_length`.
    Cylinder {
        point: Point3,
        direction: Vector3<f64>,
        radius: f64,
        half_length: f64,
    },
    /// `|x/a|^(2/e) + |y/b|^(2/e) + |z/c|^(2/e) = 1` in the axis-aligned
    /// frame centred at `center`.
    Superellipsoid {
        center: Point3,
        semi_axes: Vector3<f64>,
        exponent: f64,
    },
}

/// First ray intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Point3,
    /// Unit normal facing the ray origin.
    pub normal: Vector3<f64>,
    pub albedo: f64,
}

const EPS: f64 = 1e-9;

fn face(normal: Vector3<f64>, dir: &Vector3<f64>) -> Vector3<f64> {
    if normal.dot(dir) > 0.0 {
        -normal
    } else {
        normal
    }
}

/// Roots of `a t² + 2 b t + c = 0` in increasing order.
fn quadratic(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    if a.abs() < 1e-300 {
        return None;
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // Numerically stable pairing.
    let q = -(b + b.signum() * s);
    let (r0, r1) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    Some((r0.min(r1), r0.max(r1)))
}

impl Surface {
    pub fn intersect(&self, origin: &Point3, dir: &Vector3<f64>) -> Option<Hit> {
        match self {
            Surface::Plane {
                pose,
                half_width,
                half_height,
                texture,
            } => {
                let n = pose.rotation.column(2).into_owned();
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = n.dot(&(pose.translation - origin.coords)) / denom;
                if t <= EPS {
                    return None;
                }
                let point = origin + dir * t;
                let local = pose.inverse().apply(&point);
                if local.x.abs() > *half_width || local.y.abs() > *half_height {
                    return None;
                }
                Some(Hit {
                    t,
                    point,
                    normal: face(n, dir),
                    albedo: texture.albedo(local.x, local.y),
                })
            }
            Surface::Sphere { center, radius } => {
                let oc = origin - center;
                let (t0, t1) = quadratic(dir.norm_squared(), oc.dot(dir), oc.norm_squared() - radius * radius)?;
                let t = if t0 > EPS { t0 } else { t1 };
                if t <= EPS {
                    return None;
                }
                let point = origin + dir * t;
                Some(Hit {
                    t,
                    point,
                    normal: face((point - center) / *radius, dir),
                    albedo: 1.0,
                })
            }
            Surface::Cylinder {
                point: p0,
                direction,
                radius,
                half_length,
            } => {
                let d = direction.normalize();
                let oc = origin - p0;
                let dp = dir - d * d.dot(dir);
                let op = oc - d * d.dot(&oc);
                let (t0, t1) = quadratic(dp.norm_squared(), op.dot(&dp), op.norm_squared() - radius * radius)?;
                for t in [t0, t1] {
                    if t <= EPS {
                        continue;
                    }
                    let point = origin + dir * t;
                    let s = d.dot(&(point - p0));
                    if s.abs() > *half_length {
                        continue;
                    }
                    let radial = (point - p0) - d * s;
                    return Some(Hit {
                        t,
                        point,
                        normal: face(radial / *radius, dir),
                        albedo: 1.0,
                    });
                }
                None
            }
            Surface::Superellipsoid {
                center,
                semi_axes,
                exponent,
            } => superellipsoid_hit(center, semi_axes, *exponent, origin, dir),
        }
    }

    /// Implicit value: negative inside closed surfaces, zero on the surface.
    pub fn inside_value(&self, p: &Point3) -> Option<f64> {
        match self {
            Surface::Plane { .. } => None,
            Surface::Sphere { center, radius } => Some((p - center).norm() - radius),
            Surface::Cylinder {
                point, direction, radius, ..
            } => {
                let d = direction.normalize();
                let v = p - point;
                Some((v - d * d.dot(&v)).norm() - radius)
            }
            Surface::Superellipsoid {
                center,
                semi_axes,
                exponent,
            } => Some(superellipsoid_value(center, semi_axes, *exponent, p) - 1.0),
        }
    }
}

fn superellipsoid_value(c: &Point3, ax: &Vector3<f64>, e: f64, p: &Point3) -> f64 {
    let q = p - c;
    let k = 2.0 / e;
    (q.x / ax.x).abs().powf(k) + (q.y / ax.y).abs().powf(k) + (q.z / ax.z).abs().powf(k)
}

fn superellipsoid_hit(c: &Point3, ax: &Vector3<f64>, e: f64, origin: &Point3, dir: &Vector3<f64>) -> Option<Hit> {
    // Clip the ray to the bounding box, then march and bisect.
    let (mut lo, mut hi) = (EPS, f64::INFINITY);
    for i in 0..3 {
        let o = origin[i] - c[i];
        if dir[i].abs() < 1e-15 {
            if o.abs() > ax[i] {
                return None;
            }
            continue;
        }
        let (a, b) = ((-ax[i] - o) / dir[i], (ax[i] - o) / dir[i]);
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    if !(hi > lo) {
        return None;
    }
    let f = |t: f64| superellipsoid_value(c, ax, e, &(origin + dir * t)) - 1.0;
    let steps = 400;
    let dt = (hi - lo) / steps as f64;
    let mut t_prev = lo;
    if f(lo) <= 0.0 {
        // Origin inside the shell: not a camera configuration we render.
        return None;
    }
    for k in 1..=steps {
        let t = lo + dt * k as f64;
        let v = f(t);
        if v <= 0.0 {
            let (mut a, mut b) = (t_prev, t);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if f(m) > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            let t = 0.5 * (a + b);
            let point = origin + dir * t;
            let q = point - c;
            let k = 2.0 / e;
            let grad = Vector3::from_fn(|i, _| {
                let u = q[i] / ax[i];
                k * u.abs().powf(k - 1.0) * u.signum() / ax[i]
            });
            return Some(Hit {
                t,
                point,
                normal: face(grad.normalize(), dir),
                albedo: 1.0,
            });
        }
        t_prev = t;
    }
    None
}

/// Surfaces seen by the optical devices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scene {
    pub surfaces: Vec<Surface>,
}

impl Scene {
    pub fn new(surfaces: Vec<Surface>) -> Self {
        Self { surfaces }
    }

    pub fn intersect(&self, origin: &Point3, dir: &Vector3<f64>) -> Option<Hit> {
        self.surfaces
            .iter()
            .filter_map(|s| s.intersect(origin, dir))
            .min_by(|a, b| a.t.total_cmp(&b.t))
    }

    /// Whether `point` is the first surface hit seen from `from`.
    pub fn visible_from(&self, from: &Point3, point: &Point3) -> bool {
        let v = point - from;
        let dist = v.norm();
        match self.intersect(from, &(v / dist)) {
            Some(h) => h.t >= dist - 1e-6 * dist.max(1.0),
            None => true,
        }
    }

    /// Surface point seen through a camera pixel.
    pub fn trace_pixel(&self, cam: &CameraModel, pixel: &Point2) -> Option<Hit> {
        let (o, d) = cam.ray(pixel);
        self.intersect(&o, &d)
    }
}

/// Checks that `point` projects inside the image of `cam` with `margin` px.
pub fn in_view(cam: &CameraModel, point: &Point3, margin: f64) -> Result<Point2> {
    let p = cam.project(point)?;
    let ok = p.x >= margin && p.y >= margin && p.x <= cam.width as f64 - 1.0 - margin && p.y <= cam.height as f64 - 1.0 - margin;
    if ok {
        Ok(p)
    } else {
        Err(Error::OutOfView(format!("point projects to ({:.1}, {:.1}), outside the image", p.x, p.y)))
    }
}
