use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{ensure_dir, read_calibration, read_frames, Dataset, Header, OutputConfig};
use crate::calib::Device;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::geomfit::{fit_plane, fit_sphere};
use crate::simulator::SlUnwrap;
use crate::slcodec::{absolute_phase, reconstruct, wrapped_phase, Captures, UnwrapMethod};

/// A plane fit worse than this (mm) is also tried as a sphere.
const SPHERE_TRIAL_RMS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub scan: usize,
    pub points: usize,
    pub extent_mm: Option<[f64; 3]>,
    pub plane_normal: Option<[f64; 3]>,
    pub plane_rms_mm: Option<f64>,
    pub sphere_center: Option<[f64; 3]>,
    pub sphere_radius_mm: Option<f64>,
    pub sphere_rms_mm: Option<f64>,
    pub elapsed_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructReport {
    pub header: Header,
    pub points: usize,
    /// Extent of all scans together.
    pub extent_mm: Option<[f64; 3]>,
    pub scans: Vec<ScanReport>,
    pub warnings: Vec<String>,
}

/// Decodes and triangulates scan `k` of `ds` with camera 1 and the projector.
/// A scan without a single modulated pixel gives an empty cloud.
pub fn reconstruct_scan(ds: &Dataset, k: usize, cam: &CameraModel, proj: &CameraModel) -> Result<PointCloud> {
    let info = &ds.info;
    let count: usize = info.sequence.iter().map(|s| s.frame_count()).sum();
    let frames = read_frames(&ds.root.join("cam1").join(format!("scan_{k}")), count)?;
    let captures = Captures::from_sequence(&info.sequence, frames)?;
    if !wrapped_phase(&captures.phase)?.mask.iter().any(|&m| m) {
        return Ok(PointCloud::default());
    }
    let method = match info.unwrap {
        SlUnwrap::Centerline => UnwrapMethod::Centerline {
            column: info.centerline_column,
        },
        SlUnwrap::GrayCode => UnwrapMethod::GrayCode,
    };
    let abs = absolute_phase(&captures, method, info.pitch)?;
    Ok(reconstruct(&abs, cam, proj, info.pitch))
}

fn extent(cloud: &PointCloud) -> Option<[f64; 3]> {
    cloud.bounding_box().map(|b| b.extent().into())
}

/// Reconstructs every scan of `dataset`, writing `scan_K.ply` and
/// `reconstruct.toml` into `out`.
pub fn cmd_reconstruct(
    dataset: impl AsRef<Path>,
    calibration: impl AsRef<Path>,
    out: impl AsRef<Path>,
    output: &OutputConfig,
) -> Result<ReconstructReport> {
    let ds = Dataset::open(dataset)?;
    let cal = read_calibration(calibration.as_ref())?;
    let cam = cal.device(Device::Cam1)?;
    let proj = cal.device(Device::Projector)?;
    let out = out.as_ref();
    ensure_dir(out)?;
    if ds.info.scans == 0 {
        return Err(Error::EmptyInput("dataset has no structured-light scans"));
    }
    let mut report = ReconstructReport {
        header: Header::new("reconstruct", output),
        points: 0,
        extent_mm: None,
        scans: Vec::new(),
        warnings: Vec::new(),
    };
    let mut all = Vec::new();
    for k in 0..ds.info.scans {
        let t0 = Instant::now();
        let cloud = reconstruct_scan(&ds, k, &cam, &proj)?;
        let elapsed = t0.elapsed().as_secs_f64();
        cloud.write_ply(out.join(format!("scan_{k}.ply")), output.binary_ply)?;
        let mut scan = ScanReport {
            scan: k,
            points: cloud.len(),
            extent_mm: extent(&cloud),
            plane_normal: None,
            plane_rms_mm: None,
            sphere_center: None,
            sphere_radius_mm: None,
            sphere_rms_mm: None,
            elapsed_s: (!output.deterministic).then_some(elapsed),
        };
        if cloud.is_empty() {
            report.warnings.push(format!("scan {k}: no valid pixels, wrote an empty cloud"));
        } else if let Ok(plane) = fit_plane(&cloud.points) {
            scan.plane_normal = Some(plane.model.normal.into());
            scan.plane_rms_mm = Some(plane.rms);
            if plane.rms > SPHERE_TRIAL_RMS {
                if let Ok(s) = fit_sphere(&cloud.points) {
                    scan.sphere_center = Some(s.model.center.coords.into());
                    scan.sphere_radius_mm = Some(s.model.radius);
                    scan.sphere_rms_mm = Some(s.rms);
                }
            }
        }
        report.points += cloud.len();
        all.extend(cloud.points);
        report.scans.push(scan);
    }
    report.extent_mm = extent(&PointCloud::new(all));
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    crate::kv::write(out.join("reconstruct.toml"), &report)?;
    Ok(report)
}
