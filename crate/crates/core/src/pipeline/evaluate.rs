use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ensure_dir, CalibrateReport, Dataset, FuseReport, Header, OutputConfig, ProbeEntry, ReconstructReport};
use crate::calib::{CalibrationFile, Device};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Point3};
use crate::simulator::{PhantomFeature, ProtocolTruth};
use crate::usfreehand::{read_poses, reproducibility, trial_pixels, ProbeCalibration};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceError {
    pub device: Device,
    /// Largest of the two relative focal-length errors.
    pub focal_rel: f64,
    pub principal_px: f64,
    pub rotation_deg: f64,
    pub translation_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeError {
    pub rotation_deg: f64,
    pub translation_mm: f64,
    pub sx_rel: f64,
    pub sy_rel: f64,
    /// Worst distance between the true and estimated mapping of the five
    /// trial pixels (mm).
    pub trial_point_mm: f64,
}

fn pooled_rms(entries: &[ProbeEntry]) -> f64 {
    let n: usize = entries.iter().map(|p| p.segmented).sum();
    let ss: f64 = entries.iter().map(|p| p.rms_mm * p.rms_mm * p.segmented as f64).sum();
    (ss / n.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reproducibility {
    pub calibrations: usize,
    pub cr1_center_mm: f64,
    pub cr2_center_mm: f64,
    pub mean_cr1_mm: f64,
    pub mean_cr2_mm: f64,
    /// Mean of the per-calibration RMS values.
    pub mean_rms_mm: f64,
    /// RMS over the observations of all calibrations together.
    pub pooled_rms_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMetrics {
    pub scan: usize,
    pub points: usize,
    pub plane_rms_mm: Option<f64>,
    pub sphere_radius_error_mm: Option<f64>,
    pub sphere_rms_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub frames: usize,
    pub mean_rotation_deg: f64,
    pub max_rotation_deg: f64,
    pub mean_translation_mm: f64,
    pub max_translation_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionMetrics {
    pub gap_mm: Option<f64>,
    pub truth_gap_mm: Option<f64>,
    pub gap_error_mm: Option<f64>,
    pub inclusions: usize,
    pub truth_inclusions: usize,
    /// Per found inclusion, radius error against the nearest true one.
    pub radius_errors_mm: Vec<f64>,
    pub all_inside: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub header: Header,
    pub calibration: Vec<DeviceError>,
    pub probe: Option<ProbeError>,
    pub reproducibility: Option<Reproducibility>,
    pub surface: Vec<SurfaceMetrics>,
    /// Extent of all reconstructed scans and of the lit truth surface.
    pub extent_mm: Option<[f64; 3]>,
    pub truth_extent_mm: Option<[f64; 3]>,
    pub tracking: Option<TrackingMetrics>,
    pub fusion: Option<FusionMetrics>,
}

fn device_error(device: Device, est: &CameraModel, truth: &CameraModel) -> DeviceError {
    DeviceError {
        device,
        focal_rel: ((est.fu - truth.fu) / truth.fu).abs().max(((est.fv - truth.fv) / truth.fv).abs()),
        principal_px: (est.cu - truth.cu).hypot(est.cv - truth.cv),
        rotation_deg: est.pose.angle_to(&truth.pose).to_degrees(),
        translation_mm: (est.pose.translation - truth.pose.translation).norm(),
    }
}

fn probe_error(est: &ProbeCalibration, truth: &ProbeCalibration) -> ProbeError {
    let w = crate::simulator::BSCAN_WIDTH;
    let h = crate::simulator::BSCAN_HEIGHT;
    let trial_point_mm = trial_pixels(w, h)
        .iter()
        .map(|(_, px)| (est.to_transducer(px) - truth.to_transducer(px)).norm())
        .fold(0.0, f64::max);
    ProbeError {
        rotation_deg: est.t_t_i.angle_to(&truth.t_t_i).to_degrees(),
        translation_mm: (est.t_t_i.translation - truth.t_t_i.translation).norm(),
        sx_rel: (est.sx - truth.sx).abs() / truth.sx,
        sy_rel: (est.sy - truth.sy).abs() / truth.sy,
        trial_point_mm,
    }
}

fn read_if<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if path.exists() {
        crate::kv::read(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Compares the products in `results` (any of `calibration.toml`,
/// `calibrate.toml`, `reconstruct.toml`, `poses.txt`, `fuse.toml`) with the
/// dataset's ground truth and writes `evaluate.toml` into `out`.
pub fn cmd_evaluate(
    dataset: impl AsRef<Path>,
    results: impl AsRef<Path>,
    out: impl AsRef<Path>,
    output: &OutputConfig,
) -> Result<EvaluateReport> {
    let ds = Dataset::open(dataset)?;
    let results = results.as_ref();
    let truth: ProtocolTruth = crate::kv::read(ds.root.join("truth").join("truth.toml"))?;
    let truth_cal = CalibrationFile::read(ds.root.join("truth").join("calibration.toml"))?;
    let mut report = EvaluateReport {
        header: Header::new("evaluate", output),
        calibration: Vec::new(),
        probe: None,
        reproducibility: None,
        surface: Vec::new(),
        extent_mm: None,
        truth_extent_mm: truth.extent_mm,
        tracking: None,
        fusion: None,
    };
    let true_probe = truth_cal.probe.as_ref().map(|p| p.calibration()).transpose()?;

    if let Some(cal) = read_if::<CalibrationFile>(&results.join("calibration.toml"))? {
        for rec in &cal.devices {
            let t = truth_cal.device(rec.device)?;
            report.calibration.push(device_error(rec.device, &rec.camera()?, &t));
        }
        if let (Some(p), Some(t)) = (&cal.probe, &true_probe) {
            report.probe = Some(probe_error(&p.calibration()?, t));
        }
    }
    if let Some(rep) = read_if::<CalibrateReport>(&results.join("calibrate.toml"))? {
        if rep.probe.len() > 1 {
            let cals = rep.probe.iter().map(|p| p.calibration()).collect::<Result<Vec<_>>>()?;
            let cr = reproducibility(&cals, crate::simulator::BSCAN_WIDTH, crate::simulator::BSCAN_HEIGHT)?;
            let center = cr.trial("center").ok_or(Error::EmptyInput("no centre trial point"))?;
            report.reproducibility = Some(Reproducibility {
                calibrations: cals.len(),
                cr1_center_mm: center.cr1_mm,
                cr2_center_mm: center.cr2_mm,
                mean_cr1_mm: cr.mean_cr1_mm,
                mean_cr2_mm: cr.mean_cr2_mm,
                mean_rms_mm: rep.probe.iter().map(|p| p.rms_mm).sum::<f64>() / rep.probe.len() as f64,
                pooled_rms_mm: pooled_rms(&rep.probe),
            });
        }
    }
    if let Some(rep) = read_if::<ReconstructReport>(&results.join("reconstruct.toml"))? {
        report.extent_mm = rep.extent_mm;
        for s in &rep.scans {
            report.surface.push(SurfaceMetrics {
                scan: s.scan,
                points: s.points,
                plane_rms_mm: s.plane_rms_mm,
                sphere_radius_error_mm: s.sphere_radius_mm.zip(truth.sphere_radius_mm).map(|(a, b)| a - b),
                sphere_rms_mm: s.sphere_rms_mm,
            });
        }
    }
    let tracked = results.join("poses.txt");
    let truth_poses = ds.root.join("truth").join("poses.txt");
    if tracked.exists() && truth_poses.exists() {
        let truth_poses = read_poses(truth_poses)?;
        let mut rot = Vec::new();
        let mut tr = Vec::new();
        for (i, p) in read_poses(&tracked)? {
            if let Some((_, t)) = truth_poses.iter().find(|(j, _)| *j == i) {
                rot.push(p.angle_to(t).to_degrees());
                tr.push((p.translation - t.translation).norm());
            }
        }
        if !rot.is_empty() {
            let n = rot.len() as f64;
            report.tracking = Some(TrackingMetrics {
                frames: rot.len(),
                mean_rotation_deg: rot.iter().sum::<f64>() / n,
                max_rotation_deg: rot.iter().copied().fold(0.0, f64::max),
                mean_translation_mm: tr.iter().sum::<f64>() / n,
                max_translation_mm: tr.iter().copied().fold(0.0, f64::max),
            });
        }
    }
    if let Some(rep) = read_if::<FuseReport>(&results.join("fuse.toml"))? {
        let spheres: Vec<(Point3, f64)> = truth
            .features
            .iter()
            .filter_map(|f| match f {
                PhantomFeature::Sphere { center, radius } => Some((Point3::from(*center), *radius)),
                _ => None,
            })
            .collect();
        let radius_errors_mm = rep
            .inclusions
            .iter()
            .filter_map(|inc| {
                let c = Point3::from(inc.center);
                spheres
                    .iter()
                    .min_by(|a, b| (a.0 - c).norm().total_cmp(&(b.0 - c).norm()))
                    .map(|(_, r)| inc.radius_mm - r)
            })
            .collect();
        report.fusion = Some(FusionMetrics {
            gap_mm: rep.gap_mm,
            truth_gap_mm: truth.gap_mm,
            gap_error_mm: rep.gap_mm.zip(truth.gap_mm).map(|(a, b)| a - b),
            inclusions: rep.inclusions.len(),
            truth_inclusions: spheres.len(),
            radius_errors_mm,
            all_inside: rep.all_inside,
        });
    }
    let out = out.as_ref();
    ensure_dir(out)?;
    crate::kv::write(out.join("evaluate.toml"), &report)?;
    Ok(report)
}
