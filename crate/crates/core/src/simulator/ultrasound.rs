use nalgebra::{Matrix3, Rotation3, Vector3};
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::fringe::row_rng;
use super::NoiseModel;
use crate::geometry::{Point2, Point3, RigidTransform};
use crate::image::{quantize, GrayImage};
use crate::usfreehand::{ProbeCalibration, TrackedBScan};

pub const BSCAN_WIDTH: usize = 321;
pub const BSCAN_HEIGHT: usize = 408;
/// Imaged field (mm) across and along the beam.
pub const BSCAN_WIDTH_MM: f64 = 40.0;
pub const BSCAN_DEPTH_MM: f64 = 50.0;

/// Ground-truth probe calibration of the simulated scanner. The image plane
/// sits about 110 mm beyond the marker, with rows running away from it.
pub fn nominal_probe() -> ProbeCalibration {
    let axes = Matrix3::from_columns(&[-Vector3::y(), -Vector3::z(), Vector3::x()]);
    let mount = Rotation3::from_scaled_axis(Vector3::new(0.03, -0.02, 0.04));
    let r = axes * mount.matrix();
    let t_t_i = RigidTransform::new(r, Vector3::new(0.0, 20.0, -110.0)).expect("rotation");
    ProbeCalibration::new(t_t_i, BSCAN_WIDTH_MM / BSCAN_WIDTH as f64, BSCAN_DEPTH_MM / BSCAN_HEIGHT as f64)
        .expect("plausible scales")
}

/// Echogenic structures of an ultrasound phantom (world frame, mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomFeature {
    /// Crossing of two wires; shows as a single spot.
    CrossWire { point: [f64; 3] },
    /// Tube wall; shows as a ring where the plane cuts it.
    Cylinder {
        point: [f64; 3],
        direction: [f64; 3],
        radius: f64,
    },
    Sphere { center: [f64; 3], radius: f64 },
}

impl PhantomFeature {
    /// Unsigned distance (mm) from `p` to the echogenic surface.
    fn distance(&self, p: &Point3) -> f64 {
        match *self {
            PhantomFeature::CrossWire { point } => (p - Point3::from(point)).norm(),
            PhantomFeature::Cylinder {
                point,
                direction,
                radius,
            } => {
                let d = Vector3::from(direction).normalize();
                let v = p - Point3::from(point);
                ((v - d * v.dot(&d)).norm() - radius).abs()
            }
            PhantomFeature::Sphere { center, radius } => ((p - Point3::from(center)).norm() - radius).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BScanOptions {
    /// Echo amplitude above background (gray levels).
    pub peak: f64,
    pub background: f64,
    /// Echo width (px).
    pub sigma_px: f64,
    /// A cross-wire further than this from the image plane is not seen (mm).
    pub beam_half_thickness: f64,
    pub seed: u64,
    pub frame: u64,
}

impl Default for BScanOptions {
    fn default() -> Self {
        Self {
            peak: 120.0,
            background: 15.0,
            sigma_px: 2.0,
            beam_half_thickness: 1.0,
            seed: 0,
            frame: 0,
        }
    }
}

/// What the synthetic B-scan shows, for oracles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BScanTruth {
    /// Probe pose the image was rendered with.
    pub probe_pose: [f64; 12],
    /// In-plane projection of the cross-wire point, if one is present.
    pub cross_pixel: Option<[f64; 2]>,
    /// Where the spot was drawn (projection plus segmentation jitter).
    pub drawn_pixel: Option<[f64; 2]>,
    /// Signed distance of the cross-wire point from the image plane (mm).
    pub plane_offset_mm: Option<f64>,
    /// No echo anywhere in the image.
    pub blank: bool,
}

/// Renders the B-scan seen at the true probe pose and records it with a pose
/// perturbed by the tracking noise of `noise`.
pub fn synth_bscan(
    features: &[PhantomFeature],
    true_pose: &RigidTransform,
    cal: &ProbeCalibration,
    noise: &NoiseModel,
    options: &BScanOptions,
) -> (TrackedBScan, BScanTruth) {
    let (w, h) = (BSCAN_WIDTH, BSCAN_HEIGHT);
    // Stream 0 of each frame drives pose and jitter; rows use 1 + y.
    let mut rng = row_rng(options.seed, options.frame, 0);
    let mut gauss = |sigma: f64| {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("finite sigma").sample(&mut rng)
        } else {
            0.0
        }
    };
    let image_to_world = true_pose.compose(&cal.t_t_i);
    let world_to_transducer = true_pose.inverse();
    let scale = 0.5 * (cal.sx + cal.sy);
    let s2 = 2.0 * options.sigma_px * options.sigma_px;

    let mut truth = BScanTruth {
        probe_pose: true_pose.to_row12(),
        cross_pixel: None,
        drawn_pixel: None,
        plane_offset_mm: None,
        blank: true,
    };
    let mut spots = Vec::new();
    let mut surfaces = Vec::new();
    for f in features {
        match f {
            PhantomFeature::CrossWire { point } => {
                let (px, offset) = cal.to_pixel(&world_to_transducer.apply(&Point3::from(*point)));
                let drawn = Point2::new(px.x + gauss(noise.seg_sigma_px), px.y + gauss(noise.seg_sigma_px));
                truth.cross_pixel = Some([px.x, px.y]);
                truth.plane_offset_mm = Some(offset);
                let inside = px.x >= 0.0 && px.y >= 0.0 && px.x <= (w - 1) as f64 && px.y <= (h - 1) as f64;
                if offset.abs() <= options.beam_half_thickness && inside {
                    truth.drawn_pixel = Some([drawn.x, drawn.y]);
                    truth.blank = false;
                    spots.push(drawn);
                }
            }
            other => surfaces.push(*other),
        }
    }
    let dw = Vector3::from_fn(|_, _| gauss(noise.pose_sigma_deg.to_radians()));
    let dt = Vector3::from_fn(|_, _| gauss(noise.pose_sigma_mm));
    let recorded = true_pose.perturbed(&dw, &dt);

    let speckle = (noise.speckle_sigma > 0.0).then(|| LogNormal::new(0.0, noise.speckle_sigma).expect("finite sigma"));
    let mut data = vec![0u8; w * h];
    let mut echo_seen = false;
    for (y, row) in data.chunks_mut(w).enumerate() {
        let mut rng = row_rng(options.seed, options.frame, 1 + y as u64);
        for (x, out) in row.iter_mut().enumerate() {
            let px = Point2::new(x as f64, y as f64);
            let mut echo: f64 = 0.0;
            for s in &spots {
                echo = echo.max((-(px - s).norm_squared() / s2).exp());
            }
            if !surfaces.is_empty() {
                let p = image_to_world.apply(&cal.image_point(&px));
                for f in &surfaces {
                    let d = f.distance(&p) / scale;
                    if d < 0.5 {
                        echo_seen = true;
                    }
                    echo = echo.max((-d * d / s2).exp());
                }
            }
            let mut v = options.background + options.peak * echo;
            if let Some(sp) = &speckle {
                v *= sp.sample(&mut rng);
            }
            *out = quantize(v);
        }
    }
    truth.blank &= !echo_seen;
    let image = GrayImage { width: w, height: h, data };
    (
        TrackedBScan {
            image,
            probe_pose: recorded,
            timestamp: options.frame as f64 / 10.0,
        },
        truth,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::usfreehand::{map_pixel_to_world, segment_cross_point};

    fn facing_pose(t: Vector3<f64>) -> RigidTransform {
        RigidTransform::from_axis_angle(Vector3::new(std::f64::consts::PI, 0.0, 0.0), t)
    }

    #[test]
    fn nominal_image_plane_faces_away_from_cameras() {
        let cal = nominal_probe();
        let pose = facing_pose(Vector3::new(0.0, 0.0, 565.0));
        let top = map_pixel_to_world(&cal, &pose, &Point2::new(160.0, 0.0));
        let deep = map_pixel_to_world(&cal, &pose, &Point2::new(160.0, 407.0));
        assert!(deep.z - top.z > 45.0);
        assert!((top.z - 675.0).abs() < 5.0, "{top}");
    }

    #[test]
    fn cross_wire_spot_lands_on_the_projected_point() {
        let cal = nominal_probe();
        let pose = facing_pose(Vector3::new(3.0, -4.0, 560.0));
        let target = Point2::new(123.25, 250.5);
        let p = map_pixel_to_world(&cal, &pose, &target);
        let feature = [PhantomFeature::CrossWire { point: [p.x, p.y, p.z] }];
        let (scan, truth) = synth_bscan(&feature, &pose, &cal, &NoiseModel::none(), &BScanOptions::default());
        let [u, v] = truth.cross_pixel.unwrap();
        assert!((u - target.x).abs() < 1e-9 && (v - target.y).abs() < 1e-9);
        assert!(truth.plane_offset_mm.unwrap().abs() < 1e-9);
        assert_eq!(scan.probe_pose, pose);
        let seg = segment_cross_point(&scan.image).unwrap();
        assert!((seg - target).norm() < 0.1, "{seg}");
    }

    #[test]
    fn plane_missing_the_wire_is_blank() {
        let cal = nominal_probe();
        let pose = facing_pose(Vector3::new(0.0, 0.0, 560.0));
        let p = map_pixel_to_world(&cal, &pose, &Point2::new(160.0, 200.0)) + pose.rotation * cal.t_t_i.rotation.column(2) * 5.0;
        let feature = [PhantomFeature::CrossWire { point: [p.x, p.y, p.z] }];
        let (scan, truth) = synth_bscan(&feature, &pose, &cal, &NoiseModel::none(), &BScanOptions::default());
        assert!(truth.blank);
        assert!((truth.plane_offset_mm.unwrap().abs() - 5.0).abs() < 1e-9);
        assert!(scan.image.data.iter().all(|&v| v == 15));
    }

    #[test]
    fn recorded_pose_carries_tracking_noise_and_is_seeded() {
        let cal = nominal_probe();
        let pose = facing_pose(Vector3::new(0.0, 0.0, 560.0));
        let feature = [PhantomFeature::Sphere {
            center: [0.0, 0.0, 700.0],
            radius: 7.0,
        }];
        let opts = BScanOptions {
            seed: 4,
            frame: 2,
            ..Default::default()
        };
        let noise = NoiseModel::default();
        let (a, ta) = synth_bscan(&feature, &pose, &cal, &noise, &opts);
        let (b, _) = synth_bscan(&feature, &pose, &cal, &noise, &opts);
        assert_eq!(a, b);
        assert!(!ta.blank);
        assert_ne!(a.probe_pose, pose);
        assert!(a.probe_pose.angle_to(&pose).to_degrees() < 1.0);
        assert!((a.probe_pose.translation - pose.translation).norm() < 1.0);
    }
}
