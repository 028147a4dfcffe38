use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ensure_dir, read_calibration, Dataset, Header, OutputConfig};
use crate::calib::Device;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::markerpose::{track_frame, BlobEllipseDetector};
use crate::usfreehand::{read_poses, write_poses};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFailure {
    pub frame: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub header: Header,
    pub frames: usize,
    pub tracked: usize,
    pub mean_residual_px: f64,
    pub max_residual_px: f64,
    pub failures: Vec<FrameFailure>,
}

/// Estimates the probe marker pose in every stereo frame and writes
/// `poses.txt` and `track.toml` into `out`. Frames whose target cannot be
/// found are reported and left out.
pub fn cmd_track(
    dataset: impl AsRef<Path>,
    calibration: impl AsRef<Path>,
    out: impl AsRef<Path>,
    output: &OutputConfig,
) -> Result<TrackReport> {
    let ds = Dataset::open(dataset)?;
    if !ds.info.marker_images {
        return Err(Error::EmptyInput("dataset has no marker images"));
    }
    let cal = read_calibration(calibration.as_ref())?;
    let (cam1, cam2) = (cal.device(Device::Cam1)?, cal.device(Device::Cam2)?);
    // Frame ids follow the recorded sweep.
    let ids: Vec<usize> = read_poses(ds.root.join("poses.txt"))?.into_iter().map(|(i, _)| i).collect();
    let detector = BlobEllipseDetector::default();
    let mut poses = Vec::with_capacity(ids.len());
    let mut residuals = Vec::with_capacity(ids.len());
    let mut failures = Vec::new();
    for &i in &ids {
        let name = format!("marker_{i:04}.pgm");
        let a = GrayImage::read_pgm(ds.root.join("cam1").join(&name))?;
        let b = GrayImage::read_pgm(ds.root.join("cam2").join(&name))?;
        match track_frame(&detector, (&a, &b), (&cam1, &cam2), &ds.info.marker) {
            Ok(t) => {
                poses.push((i, t.pose));
                residuals.push(t.residual_px);
            }
            Err(e) => failures.push(FrameFailure {
                frame: i,
                reason: e.to_string(),
            }),
        }
    }
    if poses.is_empty() {
        return Err(Error::Degenerate("the marker was not tracked in any frame".into()));
    }
    let out = out.as_ref();
    ensure_dir(out)?;
    write_poses(out.join("poses.txt"), &poses)?;
    let report = TrackReport {
        header: Header::new("track", output),
        frames: ids.len(),
        tracked: poses.len(),
        mean_residual_px: residuals.iter().sum::<f64>() / residuals.len() as f64,
        max_residual_px: residuals.iter().copied().fold(0.0, f64::max),
        failures,
    };
    for f in &report.failures {
        eprintln!("warning: frame {}: {}", f.frame, f.reason);
    }
    crate::kv::write(out.join("track.toml"), &report)?;
    Ok(report)
}
