use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mmscan_core::cloud::{PointCloud, Source};
use mmscan_core::image::GrayImage;
use mmscan_core::pipeline::*;
use mmscan_core::simulator::{NoiseModel, Protocol, SimConfig};
use mmscan_core::Error;

const DET: OutputConfig = OutputConfig {
    deterministic: true,
    binary_ply: false,
};

fn simulate(dir: &Path, protocol: Protocol, edit: impl FnOnce(&mut SimConfig)) -> PathBuf {
    let mut cfg = SimConfig::new(protocol, 21);
    cfg.noise = NoiseModel::none();
    edit(&mut cfg);
    let data = dir.join("data");
    cmd_simulate(&cfg, &data).unwrap();
    data
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.clone(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn tracked_cylinder_sweep_fuses_to_the_true_gap() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), Protocol::ConcentricCylinders, |c| c.frames = Some(24));
    let before = snapshot(&data);
    let cal = data.join("truth/calibration.toml");
    let res = dir.path().join("res");
    let rec = cmd_reconstruct(&data, &cal, &res, &DET).unwrap();
    assert!(rec.points > 100_000);
    let track = cmd_track(&data, &cal, &res, &DET).unwrap();
    assert_eq!(track.tracked, 24);
    let fuse = cmd_fuse(
        &data,
        &cal,
        res.join("scan_0.ply"),
        Some(&res.join("poses.txt")),
        &FuseConfig::default(),
        &res,
        &DET,
    )
    .unwrap();
    assert_eq!(fuse.frame, WORLD_FRAME);
    assert!((fuse.gap_mm.unwrap() - 22.09).abs() < 0.01, "{:?}", fuse.gap_mm);
    let fused = PointCloud::read_ply(res.join("fused.ply")).unwrap();
    assert_eq!(fused.len(), fuse.sl_points + fuse.us_points);
    assert_eq!(fused.filter_source(Source::Ultrasound).len(), fuse.us_points);

    let eval = cmd_evaluate(&data, &res, &res, &DET).unwrap();
    let t = eval.tracking.unwrap();
    assert!(t.max_rotation_deg < 0.1 && t.max_translation_mm < 0.05, "{t:?}");
    assert!(eval.fusion.unwrap().gap_error_mm.unwrap().abs() < 0.01);
    assert_eq!(snapshot(&data), before, "commands must not modify the dataset");
}

#[test]
fn blank_bscans_give_a_surface_only_result() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), Protocol::ConcentricCylinders, |c| {
        c.frames = Some(4);
        c.marker_images = false;
    });
    for i in 0..4 {
        GrayImage::filled(321, 408, 15)
            .write_pgm(data.join("bscans").join(format!("{i:04}.pgm")))
            .unwrap();
    }
    let cal = data.join("truth/calibration.toml");
    let res = dir.path().join("res");
    cmd_reconstruct(&data, &cal, &res, &DET).unwrap();
    let fuse = cmd_fuse(&data, &cal, res.join("scan_0.ply"), None, &FuseConfig::default(), &res, &DET).unwrap();
    assert_eq!(fuse.us_points, 0);
    assert_eq!(fuse.frames_without_echo, 4);
    assert!(fuse.gap_mm.is_none());
    assert_eq!(fuse.warnings.len(), 1);
    assert_eq!(PointCloud::read_ply(res.join("fused.ply")).unwrap().len(), fuse.sl_points);
}

#[test]
fn dark_scan_gives_an_empty_cloud_and_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), Protocol::Sphere, |_| {});
    let scan = data.join("cam1/scan_0");
    for e in fs::read_dir(&scan).unwrap() {
        GrayImage::filled(1280, 1024, 0).write_pgm(e.unwrap().path()).unwrap();
    }
    let res = dir.path().join("res");
    let rep = cmd_reconstruct(&data, data.join("truth/calibration.toml"), &res, &DET).unwrap();
    assert_eq!(rep.points, 0);
    assert_eq!(rep.warnings.len(), 1);
    assert!(PointCloud::read_ply(res.join("scan_0.ply")).unwrap().is_empty());
}

#[test]
fn noiseless_breast_analog_inclusions_lie_inside_the_shell() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), Protocol::BreastAnalog, |c| c.marker_images = false);
    let cal = data.join("truth/calibration.toml");
    let res = dir.path().join("res");
    cmd_reconstruct(&data, &cal, &res, &DET).unwrap();
    let fuse = cmd_fuse(&data, &cal, res.join("scan_0.ply"), None, &FuseConfig::default(), &res, &DET).unwrap();
    assert_eq!(fuse.inclusions.len(), 3);
    assert_eq!(fuse.all_inside, Some(true));
    let eval = cmd_evaluate(&data, &res, &res, &DET).unwrap();
    for e in eval.fusion.unwrap().radius_errors_mm {
        assert!(e.abs() < 0.1, "{e}");
    }
}

#[test]
fn noiseless_plane_and_calibration_metrics_vanish() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), Protocol::Plane5Poses, |c| c.poses = Some(2));
    let res = dir.path().join("res");
    fs::create_dir_all(&res).unwrap();
    fs::copy(data.join("truth/calibration.toml"), res.join("calibration.toml")).unwrap();
    cmd_reconstruct(&data, res.join("calibration.toml"), &res, &DET).unwrap();
    let eval = cmd_evaluate(&data, &res, &res, &DET).unwrap();
    assert_eq!(eval.calibration.len(), 3);
    for d in &eval.calibration {
        assert_eq!(d.focal_rel, 0.0);
        assert_eq!(d.rotation_deg, 0.0);
    }
    assert_eq!(eval.probe.as_ref().unwrap().trial_point_mm, 0.0);
    for s in &eval.surface {
        assert!(s.plane_rms_mm.unwrap() < 0.01);
    }
}

#[test]
fn evaluate_needs_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), Protocol::RigCalib, |c| c.poses = Some(3));
    fs::remove_file(data.join("truth/truth.toml")).unwrap();
    let err = cmd_evaluate(&data, dir.path(), dir.path().join("e"), &DET).unwrap_err();
    assert!(matches!(err, Error::Io(_)));
}

#[test]
fn rig_calibration_from_rendered_boards() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), Protocol::RigCalib, |c| {
        c.poses = Some(6);
        c.board_images = true;
        c.noise.pixel_sigma = 1.0;
    });
    let res = dir.path().join("res");
    let rep = cmd_calibrate(&data, &CalibrateConfig::default(), None, &res, &DET).unwrap();
    assert_eq!(rep.views, 6);
    assert!(rep.warnings.is_empty(), "{:?}", rep.warnings);
    assert!(rep.rms_px.unwrap() < 0.1);
    let eval = cmd_evaluate(&data, &res, &res, &DET).unwrap();
    for d in &eval.calibration {
        assert!(d.focal_rel < 2e-3 && d.translation_mm < 0.5, "{d:?}");
    }
}
