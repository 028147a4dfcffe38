use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ensure_dir, read_calibration, Dataset, Header, OutputConfig};
use crate::calib::Device;
use crate::cloud::{PointCloud, Source};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Point3};
use crate::geomfit::{cylinder_gap, fit_cylinder, fit_sphere, CylinderModel};
use crate::image::GrayImage;
use crate::simulator::Protocol;
use crate::usfreehand::{map_pixel_to_world, read_poses, segment_rings};

/// The only frame fused data can be in: camera 1.
pub const WORLD_FRAME: &str = "W";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuseConfig {
    /// Ultrasound points closer than this join one inclusion (mm).
    pub cluster_distance_mm: f64,
    /// Smaller clusters are dropped as noise.
    pub min_cluster_points: usize,
    /// Surface points used for the outer cylinder fit, at most.
    pub max_fit_points: usize,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self {
            cluster_distance_mm: 3.0,
            min_cluster_points: 30,
            max_fit_points: 60_000,
        }
    }
}

/// Surface and interior points in the world frame. There is no registration
/// transform: both modalities are mapped into camera 1's frame directly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionResult {
    pub sl_cloud: PointCloud,
    pub us_cloud: PointCloud,
}

impl FusionResult {
    pub fn frame(&self) -> &'static str {
        WORLD_FRAME
    }

    pub fn merged(&self) -> PointCloud {
        PointCloud::merge(&self.sl_cloud, Source::StructuredLight, &self.us_cloud, Source::Ultrasound)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderEcho {
    pub point: [f64; 3],
    pub direction: [f64; 3],
    pub radius_mm: f64,
    pub rms_mm: f64,
    pub points: usize,
}

impl CylinderEcho {
    fn new(m: &CylinderModel, rms: f64, points: usize) -> Self {
        Self {
            point: m.point.coords.into(),
            direction: m.direction.into(),
            radius_mm: m.radius,
            rms_mm: rms,
            points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InclusionEcho {
    pub points: usize,
    pub center: [f64; 3],
    pub radius_mm: f64,
    pub rms_mm: f64,
    /// Share of the cluster lying beneath the reconstructed surface.
    pub inside_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseReport {
    pub header: Header,
    pub frame: String,
    pub sl_points: usize,
    pub us_points: usize,
    pub sl_bbox: Option<[[f64; 3]; 2]>,
    pub us_bbox: Option<[[f64; 3]; 2]>,
    pub frames: usize,
    pub frames_without_echo: usize,
    pub inner_cylinder: Option<CylinderEcho>,
    pub outer_cylinder: Option<CylinderEcho>,
    pub gap_mm: Option<f64>,
    pub gap_axis_angle_deg: Option<f64>,
    pub gap_axis_offset_mm: Option<f64>,
    pub inclusions: Vec<InclusionEcho>,
    pub all_inside: Option<bool>,
    pub warnings: Vec<String>,
}

fn bbox(c: &PointCloud) -> Option<[[f64; 3]; 2]> {
    c.bounding_box().map(|b| [b.min.coords.into(), b.max.coords.into()])
}

/// For each point, whether the surface seen by `cam` lies in front of it
/// along the viewing ray. The surface depth at a pixel is the nearest
/// surface point projecting within `radius_px` of it.
pub fn containment(surface: &PointCloud, cam: &CameraModel, points: &[Point3], radius_px: usize) -> Vec<bool> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let to_dev = cam.world_to_device();
    let mut depth = vec![f64::INFINITY; w * h];
    for p in &surface.points {
        let Ok(q) = cam.project(p) else { continue };
        let (x, y) = (q.x.round(), q.y.round());
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            continue;
        }
        let i = y as usize * w + x as usize;
        depth[i] = depth[i].min(to_dev.apply(p).z);
    }
    points
        .iter()
        .map(|p| {
            let Ok(q) = cam.project(p) else { return false };
            let (x, y) = (q.x.round() as i64, q.y.round() as i64);
            let r = radius_px as i64;
            let mut surf = f64::INFINITY;
            for yy in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
                for xx in (x - r).max(0)..=(x + r).min(w as i64 - 1) {
                    surf = surf.min(depth[yy as usize * w + xx as usize]);
                }
            }
            surf.is_finite() && to_dev.apply(p).z > surf
        })
        .collect()
}

/// Groups points whose grid cells (of side `d`) touch.
fn clusters(points: &[Point3], d: f64) -> Vec<Vec<usize>> {
    let key = |p: &Point3| ((p.x / d).floor() as i64, (p.y / d).floor() as i64, (p.z / d).floor() as i64);
    let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        cells.entry(key(p)).or_default().push(i);
    }
    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();
    let mut label: HashMap<(i64, i64, i64), usize> = HashMap::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for start in keys {
        if label.contains_key(&start) {
            continue;
        }
        let id = out.len();
        let mut members = Vec::new();
        let mut stack = vec![start];
        label.insert(start, id);
        while let Some(c) = stack.pop() {
            members.extend(&cells[&c]);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let n = (c.0 + dx, c.1 + dy, c.2 + dz);
                        if cells.contains_key(&n) && !label.contains_key(&n) {
                            label.insert(n, id);
                            stack.push(n);
                        }
                    }
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    out
}

/// Maps the segmented B-scan echoes of `dataset` into the world frame with
/// the probe calibration and poses, merges them with the surface cloud, and
/// writes `fused.ply`, `us.ply` and `fuse.toml` into `out`.
///
/// Poses come from `poses` (such as `track` output) or the dataset's own
/// `poses.txt`.
pub fn cmd_fuse(
    dataset: impl AsRef<Path>,
    calibration: impl AsRef<Path>,
    sl_cloud: impl AsRef<Path>,
    poses: Option<&Path>,
    config: &FuseConfig,
    out: impl AsRef<Path>,
    output: &OutputConfig,
) -> Result<FuseReport> {
    let ds = Dataset::open(dataset)?;
    let cal = read_calibration(calibration.as_ref())?;
    let cam1 = cal.device(Device::Cam1)?;
    if cam1.pose.angle_to(&crate::geometry::RigidTransform::identity()) > 1e-9 || cam1.pose.translation.norm() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "calibration is not expressed in the camera-1 frame {WORLD_FRAME}"
        )));
    }
    let probe = cal
        .probe
        .as_ref()
        .ok_or(Error::EmptyInput("calibration has no probe section"))?
        .calibration()?;
    let sl = PointCloud::new(PointCloud::read_ply(sl_cloud)?.points);
    let poses = match poses {
        Some(p) => read_poses(p)?,
        None => read_poses(ds.root.join("poses.txt"))?,
    };
    let mut warnings = Vec::new();
    let mut us = Vec::new();
    let mut without = 0;
    for (i, pose) in &poses {
        let img = GrayImage::read_pgm(ds.root.join("bscans").join(format!("{i:04}.pgm")))?;
        let ring = segment_rings(&img);
        if ring.is_empty() {
            without += 1;
        }
        us.extend(ring.iter().map(|px| map_pixel_to_world(&probe, pose, px)));
    }
    if us.is_empty() {
        warnings.push("no ultrasound echoes; the result holds the surface only".to_string());
    }
    let result = FusionResult {
        sl_cloud: sl,
        us_cloud: PointCloud::new(us),
    };
    let mut report = FuseReport {
        header: Header::new("fuse", output),
        frame: result.frame().to_string(),
        sl_points: result.sl_cloud.len(),
        us_points: result.us_cloud.len(),
        sl_bbox: bbox(&result.sl_cloud),
        us_bbox: bbox(&result.us_cloud),
        frames: poses.len(),
        frames_without_echo: without,
        inner_cylinder: None,
        outer_cylinder: None,
        gap_mm: None,
        gap_axis_angle_deg: None,
        gap_axis_offset_mm: None,
        inclusions: Vec::new(),
        all_inside: None,
        warnings,
    };
    if !result.us_cloud.is_empty() {
        match ds.info.protocol {
            Protocol::ConcentricCylinders => cylinders(&result, config, &mut report)?,
            Protocol::BreastAnalog => inclusions(&result, &cam1, config, &mut report),
            _ => {}
        }
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let out = out.as_ref();
    ensure_dir(out)?;
    result.merged().write_ply(out.join("fused.ply"), output.binary_ply)?;
    result.us_cloud.write_ply(out.join("us.ply"), output.binary_ply)?;
    crate::kv::write(out.join("fuse.toml"), &report)?;
    Ok(report)
}

fn cylinders(result: &FusionResult, config: &FuseConfig, report: &mut FuseReport) -> Result<()> {
    let inner = fit_cylinder(&result.us_cloud.points)?;
    let step = result.sl_cloud.len().div_ceil(config.max_fit_points.max(1)).max(1);
    let sl: Vec<Point3> = result.sl_cloud.points.iter().step_by(step).copied().collect();
    let outer = fit_cylinder(&sl)?;
    let gap = cylinder_gap(&inner.model, &outer.model)?;
    report.inner_cylinder = Some(CylinderEcho::new(&inner.model, inner.rms, result.us_cloud.len()));
    report.outer_cylinder = Some(CylinderEcho::new(&outer.model, outer.rms, sl.len()));
    report.gap_mm = Some(gap.distance);
    report.gap_axis_angle_deg = Some(gap.axis_angle_deg);
    report.gap_axis_offset_mm = Some(gap.axis_offset);
    Ok(())
}

fn inclusions(result: &FusionResult, cam: &CameraModel, config: &FuseConfig, report: &mut FuseReport) {
    let pts = &result.us_cloud.points;
    let inside = containment(&result.sl_cloud, cam, pts, 2);
    for members in clusters(pts, config.cluster_distance_mm) {
        if members.len() < config.min_cluster_points {
            continue;
        }
        let cp: Vec<Point3> = members.iter().map(|&i| pts[i]).collect();
        let Ok(s) = fit_sphere(&cp) else {
            report.warnings.push(format!("a cluster of {} points is not spherical", cp.len()));
            continue;
        };
        let n_in = members.iter().filter(|&&i| inside[i]).count();
        report.inclusions.push(InclusionEcho {
            points: cp.len(),
            center: s.model.center.coords.into(),
            radius_mm: s.model.radius,
            rms_mm: s.rms,
            inside_fraction: n_in as f64 / cp.len() as f64,
        });
    }
    report.all_inside = Some(!report.inclusions.is_empty() && report.inclusions.iter().all(|c| c.inside_fraction == 1.0));
}
