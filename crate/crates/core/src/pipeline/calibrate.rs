use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ensure_dir, read_calibration, read_frames, Dataset, Header, OutputConfig};
use crate::calib::{
    calibrate_rig, detect_board, projector_correspondences, CalibrationFile, Device, DeviceRecord, DeviceSpec,
    ViewObservation,
};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::lm::{LmConfig, Termination};
use crate::simulator::read_observations;
use crate::slcodec::{absolute_phase, Captures, PatternKind, UnwrapMethod};
use crate::usfreehand::{
    read_poses, reproducibility, segment_cross_point, solve_calibration, CrReport, ProbeCalibration,
    ProbeObservation, ProbeRecord, SolveOptions,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Both cameras.
    Stereo,
    /// Camera 1 and the projector.
    Projector,
    /// Both cameras and the projector in one adjustment.
    #[default]
    Rig,
    /// Ultrasound probe from cross-wire sweeps.
    Probe,
}

impl CalibrationMode {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "stereo" => Self::Stereo,
            "projector" => Self::Projector,
            "rig" => Self::Rig,
            "probe" => Self::Probe,
            _ => return Err(Error::InvalidParameter(format!("unknown calibration mode '{s}'"))),
        })
    }

    fn devices(self) -> &'static [Device] {
        match self {
            Self::Stereo => &[Device::Cam1, Device::Cam2],
            Self::Projector => &[Device::Cam1, Device::Projector],
            Self::Rig => &[Device::Cam1, Device::Cam2, Device::Projector],
            Self::Probe => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrateConfig {
    pub mode: CalibrationMode,
    pub max_iterations: usize,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            mode: CalibrationMode::Rig,
            max_iterations: 200,
        }
    }
}

/// All eleven estimated parameters of one probe calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub sweep: String,
    pub frames: usize,
    pub segmented: usize,
    /// Image -> transducer rotation as an axis-angle vector (rad).
    pub rotation: [f64; 3],
    pub translation_mm: [f64; 3],
    pub sx: f64,
    pub sy: f64,
    pub cross_point: [f64; 3],
    pub rms_mm: f64,
    pub initial_rms_mm: f64,
    pub iterations: usize,
}

impl ProbeEntry {
    pub fn calibration(&self) -> Result<ProbeCalibration> {
        ProbeCalibration::new(
            crate::geometry::RigidTransform::from_axis_angle(self.rotation.into(), self.translation_mm.into()),
            self.sx,
            self.sy,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateReport {
    pub header: Header,
    pub mode: CalibrationMode,
    /// Board poses with at least one usable view.
    pub views: usize,
    pub rms_px: Option<f64>,
    pub initial_rms_px: Option<f64>,
    pub iterations: usize,
    pub devices: Vec<DeviceRecord>,
    pub probe: Vec<ProbeEntry>,
    /// Reproducibility across sweeps, when there are several.
    pub reproducibility: Option<CrReport>,
    pub warnings: Vec<String>,
}

/// Calibrates from `dataset` and writes `calibration.toml` and
/// `calibrate.toml` into `out`. When `base` is given its contents are kept
/// except for what this run estimates.
pub fn cmd_calibrate(
    dataset: impl AsRef<Path>,
    config: &CalibrateConfig,
    base: Option<&Path>,
    out: impl AsRef<Path>,
    output: &OutputConfig,
) -> Result<CalibrateReport> {
    let ds = Dataset::open(dataset)?;
    let out = out.as_ref();
    let mut file = match base {
        Some(p) => read_calibration(p)?,
        None => CalibrationFile::default(),
    };
    let mut report = CalibrateReport {
        header: Header::new("calibrate", output),
        mode: config.mode,
        views: 0,
        rms_px: None,
        initial_rms_px: None,
        iterations: 0,
        devices: Vec::new(),
        probe: Vec::new(),
        reproducibility: None,
        warnings: Vec::new(),
    };
    if config.mode == CalibrationMode::Probe {
        calibrate_probe(&ds, &mut file, &mut report)?;
    } else {
        calibrate_optics(&ds, config, &mut file, &mut report)?;
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    ensure_dir(out)?;
    file.write(out.join("calibration.toml"))?;
    crate::kv::write(out.join("calibrate.toml"), &report)?;
    Ok(report)
}

fn calibrate_optics(
    ds: &Dataset,
    config: &CalibrateConfig,
    file: &mut CalibrationFile,
    report: &mut CalibrateReport,
) -> Result<()> {
    let wanted = config.mode.devices();
    let obs_dir = ds.root.join("observations");
    let observations: Vec<ViewObservation> = if obs_dir.is_dir() {
        read_observations(&obs_dir)?
    } else if ds.info.board_images {
        board_image_observations(ds, wanted, &mut report.warnings)?
    } else {
        return Err(Error::EmptyInput("dataset has neither board observations nor board images"));
    };
    let observations: Vec<ViewObservation> = observations.into_iter().filter(|o| wanted.contains(&o.device)).collect();
    if observations.is_empty() {
        return Err(Error::EmptyInput("no board observations for the requested devices"));
    }
    let size = |d: Device| match d {
        Device::Projector => ds.info.projector_size,
        _ => ds.info.camera_size,
    };
    let specs: Vec<DeviceSpec> = wanted
        .iter()
        .map(|&device| DeviceSpec {
            device,
            width: size(device)[0],
            height: size(device)[1],
        })
        .collect();
    let lm = LmConfig {
        max_iterations: config.max_iterations,
        ..LmConfig::default()
    };
    let rig = calibrate_rig(&ds.info.board, &specs, &observations, &lm)?;
    if rig.report.termination == Termination::MaxIterations {
        return Err(Error::NonConvergence {
            iterations: rig.report.iterations,
        });
    }
    for (device, cam) in &rig.devices {
        let dr = rig.report.devices.iter().find(|r| r.device == *device);
        let record = DeviceRecord::new(*device, cam, dr);
        file.set_device(record.clone());
        report.devices.push(record);
    }
    report.views = rig.board_poses.len();
    report.rms_px = Some(rig.report.rms_px);
    report.initial_rms_px = Some(rig.report.initial_rms_px);
    report.iterations = rig.report.iterations;
    Ok(())
}

/// Splits a board capture into its vertical and horizontal halves and reads
/// projector coordinates at the camera-1 detections.
fn projector_view(
    cam1: &ViewObservation,
    sequence: &[PatternKind],
    frames: Vec<GrayImage>,
) -> Result<Option<ViewObservation>> {
    if sequence.len() != 4 {
        return Err(Error::InvalidParameter("board scans need phase + gray code for both fringe axes".into()));
    }
    let n_v: usize = sequence[..2].iter().map(|k| k.frame_count()).sum();
    let mut frames = frames;
    let horizontal = frames.split_off(n_v);
    let pitch = |k: &PatternKind| match *k {
        PatternKind::PhaseShift { pitch, .. } => pitch,
        _ => 0.0,
    };
    let (pv, ph) = (pitch(&sequence[0]), pitch(&sequence[2]));
    let v = absolute_phase(&Captures::from_sequence(&sequence[..2], frames)?, UnwrapMethod::GrayCode, pv)?;
    let h = absolute_phase(&Captures::from_sequence(&sequence[2..], horizontal)?, UnwrapMethod::GrayCode, ph)?;
    projector_correspondences(cam1, &v, &h, pv, ph)
}

fn board_image_observations(ds: &Dataset, wanted: &[Device], warnings: &mut Vec<String>) -> Result<Vec<ViewObservation>> {
    let board = &ds.info.board;
    let seq = &ds.info.calib_sequence;
    let frame_count: usize = seq.iter().map(|k| k.frame_count()).sum();
    let mut out = Vec::new();
    for k in 0..ds.info.board_poses {
        let detect = |device: Device| -> Result<Option<ViewObservation>> {
            let img = GrayImage::read_pgm(ds.root.join(device.name()).join(format!("board_{k:03}.pgm")))?;
            match detect_board(&img, board) {
                Ok(points) => Ok(Some(ViewObservation {
                    device,
                    pose_index: k,
                    points,
                })),
                Err(e) if e.exit_code() == 2 => Ok(None),
                Err(e) => Err(e),
            }
        };
        let cam1 = detect(Device::Cam1)?;
        if cam1.is_none() {
            warnings.push(format!("board {k}: not found in cam1"));
        }
        if wanted.contains(&Device::Cam2) {
            match detect(Device::Cam2)? {
                Some(o) => out.push(o),
                None => warnings.push(format!("board {k}: not found in cam2")),
            }
        }
        let Some(cam1) = cam1 else { continue };
        if wanted.contains(&Device::Projector) {
            let frames = read_frames(&ds.root.join("cam1").join(format!("board_{k:03}")), frame_count)?;
            match projector_view(&cam1, seq, frames)? {
                Some(o) if o.points.len() == cam1.points.len() => out.push(o),
                _ => warnings.push(format!("board {k}: projector coordinates missing at some circles")),
            }
        }
        out.push(cam1);
    }
    Ok(out)
}

fn calibrate_probe(ds: &Dataset, file: &mut CalibrationFile, report: &mut CalibrateReport) -> Result<()> {
    let mut cals = Vec::new();
    for (name, dir) in ds.sweep_dirs() {
        let poses = read_poses(dir.join("poses.txt"))?;
        let mut obs = Vec::with_capacity(poses.len());
        let mut height = 0;
        for (i, pose) in &poses {
            let img = GrayImage::read_pgm(dir.join("bscans").join(format!("{i:04}.pgm")))?;
            height = img.height;
            match segment_cross_point(&img) {
                Ok(pixel) => obs.push(ProbeObservation { pose: *pose, pixel }),
                Err(Error::NoBlob) => report.warnings.push(format!("{name}: no cross-wire echo in frame {i}")),
                Err(e) => return Err(e),
            }
        }
        let sol = solve_calibration(&obs, &SolveOptions::from_depth(ds.info.us_depth_mm, height.max(1)))?;
        let c = &sol.calibration;
        let p = sol.phantom.cross_point;
        report.probe.push(ProbeEntry {
            sweep: name,
            frames: poses.len(),
            segmented: obs.len(),
            rotation: c.t_t_i.axis_angle().into(),
            translation_mm: c.t_t_i.translation.into(),
            sx: c.sx,
            sy: c.sy,
            cross_point: [p.x, p.y, p.z],
            rms_mm: sol.rms_mm,
            initial_rms_mm: sol.initial_rms_mm,
            iterations: sol.iterations,
        });
        if cals.is_empty() {
            file.probe = Some(ProbeRecord::from_solution(&sol));
        }
        cals.push(sol.calibration);
    }
    if cals.len() > 1 {
        let (width, height) = bscan_size(ds)?;
        report.reproducibility = Some(reproducibility(&cals, width, height)?);
    }
    Ok(())
}

fn bscan_size(ds: &Dataset) -> Result<(usize, usize)> {
    let (_, dir) = ds.sweep_dirs().swap_remove(0);
    let (i, _) = *read_poses(dir.join("poses.txt"))?
        .first()
        .ok_or(Error::EmptyInput("no tracked B-scans"))?;
    let img = GrayImage::read_pgm(dir.join("bscans").join(format!("{i:04}.pgm")))?;
    Ok((img.width, img.height))
}
