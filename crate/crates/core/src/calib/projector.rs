use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::slcodec::{PhaseKind, PhaseMap};

use super::refine::{Device, ViewObservation};

/// Projector pixels of the board points a camera detected, read from the
/// absolute phase of vertical (column) and horizontal (row) fringes at the
/// detected centres.
///
/// Points on masked phase are dropped. Returns `None` when fewer than four
/// points survive.
pub fn projector_correspondences(
    camera: &ViewObservation,
    vertical: &PhaseMap,
    horizontal: &PhaseMap,
    pitch_v: f64,
    pitch_h: f64,
) -> Result<Option<ViewObservation>> {
    if vertical.width != horizontal.width || vertical.height != horizontal.height {
        return Err(Error::DimensionMismatch("vertical and horizontal phase maps differ in size".into()));
    }
    if vertical.kind != PhaseKind::Absolute || horizontal.kind != PhaseKind::Absolute {
        return Err(Error::InvalidParameter("projector correspondences need absolute phase".into()));
    }
    let points: Vec<(usize, Point2)> = camera
        .points
        .iter()
        .filter_map(|(i, p)| {
            let pv = vertical.sample(p.x, p.y)?;
            let ph = horizontal.sample(p.x, p.y)?;
            Some((*i, Point2::new(pv * pitch_v / TAU, ph * pitch_h / TAU)))
        })
        .collect();
    if points.len() < 4 {
        return Ok(None);
    }
    Ok(Some(ViewObservation {
        device: Device::Projector,
        pose_index: camera.pose_index,
        points,
    }))
}
