//! Joint Levenberg–Marquardt refinement of a camera/projector rig.

use std::collections::BTreeMap;

use nalgebra::{DVector, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Point2, Point3, RigidTransform};
use crate::lm::{self, LeastSquares, LmConfig, Termination};

use super::board::CalibrationBoard;
use super::stereo::{stereo_extrinsics, StereoEstimate};
use super::zhang::{estimate_homography, intrinsics_from_homographies, pose_from_homography};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    Cam1,
    Cam2,
    Projector,
}

impl Device {
    pub fn name(self) -> &'static str {
        match self {
            Device::Cam1 => "cam1",
            Device::Cam2 => "cam2",
            Device::Projector => "projector",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cam1" => Ok(Device::Cam1),
            "cam2" => Ok(Device::Cam2),
            "projector" => Ok(Device::Projector),
            _ => Err(Error::Parse(format!("unknown device '{s}'"))),
        }
    }
}

/// Board points seen by one device in one board pose. Each entry pairs a
/// board-grid index with its pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewObservation {
    pub device: Device,
    pub pose_index: usize,
    pub points: Vec<(usize, Point2)>,
}

impl ViewObservation {
    pub fn validate(&self, board_len: usize) -> Result<()> {
        let mut seen = vec![false; board_len];
        for (i, p) in &self.points {
            if *i >= board_len || seen[*i] {
                return Err(Error::InvalidParameter(format!(
                    "{} view {}: bad or repeated board index {i}",
                    self.device.name(),
                    self.pose_index
                )));
            }
            seen[*i] = true;
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(Error::InvalidParameter("non-finite observation".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewResidual {
    pub pose_index: usize,
    pub rms_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub device: Device,
    /// `sqrt(mean ‖r‖²)` over this device's points.
    pub rms_px: f64,
    pub points: usize,
    pub views: Vec<ViewResidual>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub devices: Vec<DeviceReport>,
    pub rms_px: f64,
    pub initial_rms_px: f64,
    pub iterations: usize,
    pub cost_history: Vec<f64>,
    pub termination: Termination,
    /// Per-view relative-pose consistency for each non-reference device.
    pub stereo: Vec<(Device, StereoEstimate)>,
}

#[derive(Debug, Clone)]
pub struct RigCalibration {
    /// Device -> world poses; the first device defines the world frame.
    pub devices: Vec<(Device, CameraModel)>,
    /// Board -> world for every pose index.
    pub board_poses: BTreeMap<usize, RigidTransform>,
    pub report: CalibrationReport,
}

impl RigCalibration {
    pub fn device(&self, d: Device) -> Option<&CameraModel> {
        self.devices.iter().find(|(k, _)| *k == d).map(|(_, c)| c)
    }
}

struct RigProblem<'a> {
    board: &'a [Point3],
    obs: &'a [ViewObservation],
    /// Per observation: (device slot, view slot).
    slots: Vec<(usize, usize)>,
    n_dev: usize,
    n_views: usize,
    /// Fixed pose of the reference device.
    reference_pose: RigidTransform,
}

impl RigProblem<'_> {
    fn extr_offset(&self) -> usize {
        4 * self.n_dev
    }

    fn view_offset(&self) -> usize {
        4 * self.n_dev + 6 * (self.n_dev - 1)
    }

    fn block(p: &DVector<f64>, at: usize) -> RigidTransform {
        RigidTransform::from_axis_angle(
            Vector3::new(p[at], p[at + 1], p[at + 2]),
            Vector3::new(p[at + 3], p[at + 4], p[at + 5]),
        )
    }

    fn device_pose(&self, p: &DVector<f64>, d: usize) -> RigidTransform {
        if d == 0 {
            self.reference_pose
        } else {
            Self::block(p, self.extr_offset() + 6 * (d - 1))
        }
    }

    fn view_pose(&self, p: &DVector<f64>, v: usize) -> RigidTransform {
        Self::block(p, self.view_offset() + 6 * v)
    }

    fn rotation_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        let extr = (0..self.n_dev - 1).map(move |d| self.extr_offset() + 6 * d);
        let views = (0..self.n_views).map(move |v| self.view_offset() + 6 * v);
        extr.chain(views)
    }

    /// Per-point residual vectors grouped by observation.
    fn point_residuals(&self, p: &DVector<f64>) -> Vec<Vec<nalgebra::Vector2<f64>>> {
        let device_inv: Vec<RigidTransform> = (0..self.n_dev).map(|d| self.device_pose(p, d).inverse()).collect();
        let views: Vec<RigidTransform> = (0..self.n_views).map(|v| self.view_pose(p, v)).collect();
        self.obs
            .iter()
            .zip(&self.slots)
            .map(|(o, &(d, v))| {
                let t = device_inv[d].compose(&views[v]);
                let (fu, fv, cu, cv) = (p[4 * d], p[4 * d + 1], p[4 * d + 2], p[4 * d + 3]);
                o.points
                    .iter()
                    .map(|(i, px)| {
                        let x = t.apply(&self.board[*i]);
                        if x.z <= 1e-9 {
                            return nalgebra::Vector2::new(1e6, 1e6);
                        }
                        nalgebra::Vector2::new(fu * x.x / x.z + cu - px.x, fv * x.y / x.z + cv - px.y)
                    })
                    .collect()
            })
            .collect()
    }
}

impl LeastSquares for RigProblem<'_> {
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let r = self.point_residuals(p);
        let flat: Vec<f64> = r.iter().flatten().flat_map(|v| [v.x, v.y]).collect();
        DVector::from_vec(flat)
    }

    fn retract(&self, p: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        let mut out = p + delta;
        for at in self.rotation_blocks() {
            let r = Rotation3::from_scaled_axis(Vector3::new(p[at], p[at + 1], p[at + 2]));
            let dr = Rotation3::from_scaled_axis(Vector3::new(delta[at], delta[at + 1], delta[at + 2]));
            let aa = (dr * r).scaled_axis();
            out[at] = aa.x;
            out[at + 1] = aa.y;
            out[at + 2] = aa.z;
        }
        out
    }
}

fn push_block(params: &mut Vec<f64>, t: &RigidTransform) {
    let aa = t.axis_angle();
    params.extend_from_slice(&[aa.x, aa.y, aa.z, t.translation.x, t.translation.y, t.translation.z]);
}

/// Minimises the total squared reprojection error over every device's
/// intrinsics, the poses of all but the first device, and every board pose.
///
/// `devices` supplies initial models (device -> world); the first one fixes
/// the world frame. `board_poses` maps each pose index to its initial
/// board -> world transform.
pub fn refine_lm(
    board: &CalibrationBoard,
    devices: &[(Device, CameraModel)],
    board_poses: &BTreeMap<usize, RigidTransform>,
    observations: &[ViewObservation],
    config: &LmConfig,
) -> Result<RigCalibration> {
    if devices.is_empty() || observations.is_empty() {
        return Err(Error::EmptyInput("calibration needs devices and observations"));
    }
    let board_points = board.points();
    let view_keys: Vec<usize> = board_poses.keys().copied().collect();
    let mut slots = Vec::with_capacity(observations.len());
    for o in observations {
        o.validate(board_points.len())?;
        let d = devices
            .iter()
            .position(|(k, _)| *k == o.device)
            .ok_or_else(|| Error::InvalidParameter(format!("no initial model for {}", o.device.name())))?;
        let v = view_keys
            .binary_search(&o.pose_index)
            .map_err(|_| Error::InvalidParameter(format!("no initial board pose {}", o.pose_index)))?;
        slots.push((d, v));
    }
    let problem = RigProblem {
        board: &board_points,
        obs: observations,
        slots,
        n_dev: devices.len(),
        n_views: view_keys.len(),
        reference_pose: devices[0].1.pose,
    };

    let mut x0 = Vec::new();
    for (_, c) in devices {
        x0.extend_from_slice(&[c.fu, c.fv, c.cu, c.cv]);
    }
    for (_, c) in &devices[1..] {
        push_block(&mut x0, &c.pose);
    }
    for k in &view_keys {
        push_block(&mut x0, &board_poses[k]);
    }
    let x0 = DVector::from_vec(x0);
    let n_points: usize = observations.iter().map(|o| o.points.len()).sum();
    let initial_rms_px = (problem.residuals(&x0).norm_squared() / n_points as f64).sqrt();
    let rep = lm::minimize(&problem, x0, config)?;
    let p = &rep.params;

    let mut out_devices = Vec::with_capacity(devices.len());
    for (d, (kind, init)) in devices.iter().enumerate() {
        let mut cam = *init;
        cam.fu = p[4 * d];
        cam.fv = p[4 * d + 1];
        cam.cu = p[4 * d + 2];
        cam.cv = p[4 * d + 3];
        cam.pose = problem.device_pose(p, d);
        cam.validate()?;
        out_devices.push((*kind, cam));
    }
    let out_poses: BTreeMap<usize, RigidTransform> =
        view_keys.iter().enumerate().map(|(v, k)| (*k, problem.view_pose(p, v))).collect();

    let residuals = problem.point_residuals(p);
    let mut reports = Vec::new();
    for (kind, _) in devices {
        let mut views = Vec::new();
        let (mut sum, mut count) = (0.0, 0usize);
        for (o, r) in observations.iter().zip(&residuals) {
            if o.device != *kind || r.is_empty() {
                continue;
            }
            let s: f64 = r.iter().map(|v| v.norm_squared()).sum();
            views.push(ViewResidual {
                pose_index: o.pose_index,
                rms_px: (s / r.len() as f64).sqrt(),
            });
            sum += s;
            count += r.len();
        }
        views.sort_by_key(|v| v.pose_index);
        reports.push(DeviceReport {
            device: *kind,
            rms_px: (sum / count.max(1) as f64).sqrt(),
            points: count,
            views,
        });
    }

    Ok(RigCalibration {
        devices: out_devices,
        board_poses: out_poses,
        report: CalibrationReport {
            devices: reports,
            rms_px: (rep.cost / n_points as f64).sqrt(),
            initial_rms_px,
            iterations: rep.iterations,
            cost_history: rep.cost_history,
            termination: rep.termination,
            stereo: Vec::new(),
        },
    })
}

/// Image size of a device being calibrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceSpec {
    pub device: Device,
    pub width: u32,
    pub height: u32,
}

/// Full planar calibration: per-device closed-form initialisation, relative
/// poses averaged over shared views, then joint refinement. The first entry
/// of `devices` is the reference (world) device.
pub fn calibrate_rig(
    board: &CalibrationBoard,
    devices: &[DeviceSpec],
    observations: &[ViewObservation],
    config: &LmConfig,
) -> Result<RigCalibration> {
    board.validate()?;
    if devices.is_empty() {
        return Err(Error::EmptyInput("no devices to calibrate"));
    }
    let planar = board.planar_points();
    let mut initial = Vec::new();
    // Board -> device poses per device, keyed by pose index.
    let mut per_device: Vec<BTreeMap<usize, RigidTransform>> = Vec::new();
    for spec in devices {
        let views: Vec<&ViewObservation> = observations
            .iter()
            .filter(|o| o.device == spec.device && o.points.len() >= 4)
            .collect();
        let mut hs = Vec::with_capacity(views.len());
        for o in &views {
            o.validate(planar.len())?;
            let b: Vec<Point2> = o.points.iter().map(|(i, _)| planar[*i]).collect();
            let im: Vec<Point2> = o.points.iter().map(|(_, p)| *p).collect();
            hs.push(estimate_homography(&b, &im)?);
        }
        let k = intrinsics_from_homographies(&hs, spec.width, spec.height)?;
        let cam = CameraModel::new(k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)], spec.width, spec.height)?;
        let mut poses = BTreeMap::new();
        for (o, h) in views.iter().zip(&hs) {
            poses.insert(o.pose_index, pose_from_homography(&k, h)?);
        }
        initial.push((spec.device, cam));
        per_device.push(poses);
    }

    let mut stereo = Vec::new();
    for d in 1..devices.len() {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (k, p) in &per_device[d] {
            if let Some(r) = per_device[0].get(k) {
                a.push(*r);
                b.push(*p);
            }
        }
        let est = stereo_extrinsics(&a, &b)?;
        initial[d].1.pose = est.pose;
        stereo.push((devices[d].device, est));
    }

    let mut board_poses = BTreeMap::new();
    for (d, poses) in per_device.iter().enumerate() {
        for (k, p) in poses {
            board_poses.entry(*k).or_insert_with(|| initial[d].1.pose.compose(p));
        }
    }
    let used: Vec<ViewObservation> = observations
        .iter()
        .filter(|o| devices.iter().any(|s| s.device == o.device) && board_poses.contains_key(&o.pose_index))
        .cloned()
        .collect();
    let mut rig = refine_lm(board, &initial, &board_poses, &used, config)?;
    rig.report.stereo = stereo;
    Ok(rig)
}
