use serde::{Deserialize, Serialize};

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, RigidTransform};
use crate::usfreehand::ProbeRecord;

use super::refine::{Device, DeviceReport, RigCalibration};

/// One device as stored in a calibration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device: Device,
    pub width: u32,
    pub height: u32,
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    /// Radial terms `k1, k2`; zeros for an ideal pinhole.
    pub distortion: [f64; 2],
    /// Device -> world, 9 rotation entries row-major then translation.
    pub pose: Vec<f64>,
    pub rms_px: f64,
    #[serde(default)]
    pub view_index: Vec<usize>,
    #[serde(default)]
    pub view_rms_px: Vec<f64>,
}

impl DeviceRecord {
    pub fn new(device: Device, cam: &CameraModel, report: Option<&DeviceReport>) -> Self {
        Self {
            device,
            width: cam.width,
            height: cam.height,
            fu: cam.fu,
            fv: cam.fv,
            cu: cam.cu,
            cv: cam.cv,
            distortion: cam.distortion.unwrap_or([0.0, 0.0]),
            pose: cam.pose.to_row12().to_vec(),
            rms_px: report.map_or(0.0, |r| r.rms_px),
            view_index: report.map_or(Vec::new(), |r| r.views.iter().map(|v| v.pose_index).collect()),
            view_rms_px: report.map_or(Vec::new(), |r| r.views.iter().map(|v| v.rms_px).collect()),
        }
    }

    pub fn camera(&self) -> Result<CameraModel> {
        let pose = RigidTransform::from_row12(&self.pose)?;
        let distortion = (self.distortion != [0.0, 0.0]).then_some(self.distortion);
        let cam = CameraModel::new(self.fu, self.fv, self.cu, self.cv, self.width, self.height)?
            .with_pose(pose)
            .with_distortion(distortion);
        Ok(cam)
    }
}

/// Everything a reconstruction needs: optical devices in the world frame and,
/// once calibrated, the ultrasound probe.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    #[serde(default)]
    pub devices: Vec<DeviceRecord>,
    #[serde(default)]
    pub probe: Option<ProbeRecord>,
}

impl CalibrationFile {
    pub fn from_rig(rig: &RigCalibration) -> Self {
        let devices = rig
            .devices
            .iter()
            .map(|(d, cam)| DeviceRecord::new(*d, cam, rig.report.devices.iter().find(|r| r.device == *d)))
            .collect();
        Self { devices, probe: None }
    }

    pub fn device(&self, d: Device) -> Result<CameraModel> {
        self.devices
            .iter()
            .find(|r| r.device == d)
            .ok_or_else(|| Error::InvalidParameter(format!("calibration has no {} entry", d.name())))?
            .camera()
    }

    /// Replaces or adds the record of `d`.
    pub fn set_device(&mut self, record: DeviceRecord) {
        match self.devices.iter_mut().find(|r| r.device == record.device) {
            Some(r) => *r = record,
            None => self.devices.push(record),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        crate::kv::read(path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::kv::write(path, self)
    }
}
