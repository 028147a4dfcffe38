use std::f64::consts::{PI, TAU};

use mmscan_core::cloud::{PointCloud, Source};
use mmscan_core::geomfit::{fit_plane, fit_sphere};
use mmscan_core::image::GrayImage;
use mmscan_core::lm::{minimize, LeastSquares, LmConfig};
use mmscan_core::markerpose::{label_centers, MarkerGeometry};
use mmscan_core::simulator::{nominal_probe, Rig};
use mmscan_core::slcodec::{gray_decode, gray_encode, phase_from_samples, wrap_angle};
use mmscan_core::usfreehand::{ProbeCalibration, ProbeRecord};
use mmscan_core::{CameraModel, Point2, Point3, RigidTransform};
use nalgebra::{DVector, Vector3};
use proptest::prelude::*;

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn rigid() -> impl Strategy<Value = RigidTransform> {
    (vec3(3.0), vec3(500.0)).prop_map(|(aa, t)| RigidTransform::from_axis_angle(aa, t))
}

fn close(a: &Point3, b: &Point3, tol: f64) -> bool {
    (a - b).norm() <= tol * (1.0 + a.coords.norm())
}

struct ExpFit {
    t: Vec<f64>,
    y: Vec<f64>,
}

impl LeastSquares for ExpFit {
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.t.len(), self.t.iter().zip(&self.y).map(|(t, y)| p[0] * (p[1] * t).exp() + p[2] - y))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn compose_applies_right_then_left(a in rigid(), b in rigid(), x in vec3(100.0)) {
        let x = Point3::from(x);
        prop_assert!(close(&a.compose(&b).apply(&x), &a.apply(&b.apply(&x)), 1e-12));
        prop_assert!(close(&a.inverse().apply(&a.apply(&x)), &x, 1e-12));
    }

    #[test]
    fn twelve_numbers_round_trip(a in rigid(), x in vec3(100.0)) {
        let b = RigidTransform::from_row12(&a.to_row12()).unwrap();
        let x = Point3::from(x);
        prop_assert!(close(&a.apply(&x), &b.apply(&x), 1e-12));
    }

    #[test]
    fn backprojection_inverts_projection(u in 0.0..1279.0f64, v in 0.0..1023.0f64, depth in 200.0..2000.0f64, pose in rigid()) {
        let cam = CameraModel::new(3300.0, 3310.0, 640.0, 512.0, 1280, 1024).unwrap().with_pose(pose);
        let p = Point2::new(u, v);
        let q = cam.project(&cam.backproject(&p, depth)).unwrap();
        prop_assert!((q - p).norm() < 1e-7);
    }

    #[test]
    fn gray_code_round_trip(k in 0u32..u32::MAX) {
        prop_assert_eq!(gray_decode(gray_encode(k)), k);
        prop_assert_eq!((gray_encode(k) ^ gray_encode(k + 1)).count_ones(), 1);
    }

    #[test]
    fn wrapped_angles_stay_in_range(a in -1e4..1e4f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI && w <= PI);
        let turns = (a - w) / TAU;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn phase_shifting_recovers_phase(n in 3usize..24, phi in -3.14..3.14f64, a in 0.0..200.0f64, b in 1.0..120.0f64) {
        let samples: Vec<f64> = (0..n).map(|k| a + b * (phi - TAU * k as f64 / n as f64).cos()).collect();
        let (got, m) = phase_from_samples(&samples);
        prop_assert!(wrap_angle(got - phi).abs() < 1e-9);
        prop_assert!((m - b).abs() < 1e-9 * b);
    }

    #[test]
    fn fits_follow_rigid_motion(t in rigid(), seed in 0u64..1000) {
        let mut plane = Vec::new();
        let mut sphere = Vec::new();
        for i in 0..200u64 {
            // Deterministic jitter from the seed.
            let h = |k: u64| (((seed * 7919 + i * 104_729 + k * 1_299_709) % 10_007) as f64 / 10_007.0) - 0.5;
            let (u, v) = (100.0 * h(1), 100.0 * h(2));
            plane.push(Point3::new(u, v, 0.2 * u + 0.1 * h(3)));
            let d = Vector3::new(h(4), h(5), h(6)).normalize();
            sphere.push(Point3::from(d * (20.0 + 0.1 * h(7))));
        }
        let moved = |p: &[Point3]| p.iter().map(|q| t.apply(q)).collect::<Vec<_>>();
        let (p0, p1) = (fit_plane(&plane).unwrap(), fit_plane(&moved(&plane)).unwrap());
        prop_assert!((p0.rms - p1.rms).abs() < 1e-9);
        prop_assert!(t.apply_vector(&p0.model.normal).cross(&p1.model.normal).norm() < 1e-9);
        let (s0, s1) = (fit_sphere(&sphere).unwrap(), fit_sphere(&moved(&sphere)).unwrap());
        prop_assert!((s0.model.radius - s1.model.radius).abs() < 1e-8);
        prop_assert!(close(&t.apply(&s0.model.center), &s1.model.center, 1e-9));
    }

    #[test]
    fn probe_pixels_round_trip(u in 0.0..320.0f64, v in 0.0..407.0f64, aa in vec3(3.0), t in vec3(50.0), sx in 0.05..0.2f64, sy in 0.05..0.2f64) {
        let cal = ProbeCalibration::new(RigidTransform::from_axis_angle(aa, t), sx, sy).unwrap();
        let p = Point2::new(u, v);
        let (q, off) = cal.to_pixel(&cal.to_transducer(&p));
        prop_assert!((q - p).norm() < 1e-9 && off.abs() < 1e-9);
        let back = ProbeRecord::new(&cal).calibration().unwrap();
        prop_assert!(close(&back.to_transducer(&p), &cal.to_transducer(&p), 1e-12));
    }

    #[test]
    fn marker_labels_ignore_detection_order(aa in vec3(0.4), x in -40.0..0.0f64, y in 0.0..30.0f64, z in 620.0..780.0f64, k in 0usize..6) {
        let rig = Rig::nominal();
        let base = RigidTransform::from_axis_angle(Vector3::new(PI, 0.0, 0.0), Vector3::zeros());
        let pose = RigidTransform::from_axis_angle(aa, Vector3::new(x, y, z)).compose(&base);
        let px: Vec<Point2> = MarkerGeometry::default().centers().iter().map(|c| rig.cam1.project(&pose.apply(c)).unwrap()).collect();
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let shuffled: Vec<Point2> = perms[k].iter().map(|&i| px[i]).collect();
        let labels = label_centers(&shuffled).unwrap();
        prop_assert_eq!(labels.to_vec(), px);
    }

    #[test]
    fn ply_round_trips(pts in prop::collection::vec(vec3(1e4), 0..50), binary in any::<bool>()) {
        let points: Vec<Point3> = pts.into_iter().map(Point3::from).collect();
        let cloud = PointCloud::tagged(points, Source::Ultrasound);
        let bytes = if binary { cloud.to_ply_binary() } else { cloud.to_ply_ascii().into_bytes() };
        let back = PointCloud::parse_ply(&bytes).unwrap();
        prop_assert_eq!(back, cloud);
    }

    #[test]
    fn pgm_round_trips(w in 1usize..40, h in 1usize..40, seed in any::<u8>()) {
        let img = GrayImage::from_fn(w, h, |x, y| (x * 31 + y * 17) as u8 ^ seed);
        let back = GrayImage::parse_pgm(std::io::Cursor::new(img.to_pgm_bytes())).unwrap();
        prop_assert_eq!(back, img);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn accepted_lm_steps_never_raise_the_cost(a in 0.5..3.0f64, k in -1.0..-0.1f64, c in -1.0..1.0f64, start in vec3(1.0)) {
        let t: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = t.iter().enumerate().map(|(i, t)| a * (k * t).exp() + c + 0.01 * ((i * 37 % 11) as f64 - 5.0)).collect();
        let x0 = DVector::from_vec(vec![a + 0.5 * start.x, k + 0.3 * start.y, c + start.z]);
        let rep = minimize(&ExpFit { t, y }, x0, &LmConfig::default()).unwrap();
        prop_assert!(rep.cost_history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(rep.cost <= rep.initial_cost);
    }
}

#[test]
fn nominal_probe_is_valid() {
    assert!(nominal_probe().validate().is_ok());
}
