use std::f64::consts::TAU;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::geometry::{CameraModel, Point2, Point3};

use super::phase::{PhaseKind, PhaseMap};

/// Intersects the camera ray of `pixel` with the projector plane of column
/// `proj_column`. Returns `None` for grazing or behind-device solutions.
pub fn intersect_column(cam: &CameraModel, proj: &CameraModel, pixel: &Point2, proj_column: f64) -> Option<Point3> {
    let (origin, dir) = cam.ray(pixel);
    let p = proj.projection_matrix();
    let row = p.row(0) - p.row(2) * proj_column;
    let normal = Vector3::new(row[0], row[1], row[2]);
    let offset = row[3];
    let denom = normal.dot(&dir);
    let scale = normal.norm();
    if denom.abs() < 1e-12 * scale {
        return None;
    }
    let lambda = -(normal.dot(&origin.coords) + offset) / denom;
    if !(lambda > 0.0) {
        return None;
    }
    let x = origin + dir * lambda;
    let depth_in_proj = proj.world_to_device().apply(&x).z;
    (depth_in_proj > 0.0).then_some(x)
}

/// Triangulates every valid pixel of an absolute phase map (vertical fringes
/// of `pitch` projector pixels) against the projector column planes.
pub fn reconstruct(absolute: &PhaseMap, cam: &CameraModel, proj: &CameraModel, pitch: f64) -> PointCloud {
    debug_assert_eq!(absolute.kind, PhaseKind::Absolute);
    let w = absolute.width;
    let rows: Vec<Vec<Point3>> = (0..absolute.height)
        .into_par_iter()
        .map(|y| {
            let mut pts = Vec::new();
            for x in 0..w {
                let Some(phase) = absolute.get(x, y) else { continue };
                let column = phase * pitch / TAU;
                if let Some(p) = intersect_column(cam, proj, &Point2::new(x as f64, y as f64), column) {
                    pts.push(p);
                }
            }
            pts
        })
        .collect();
    PointCloud::new(rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;

    fn rig() -> (CameraModel, CameraModel) {
        let cam = CameraModel::new(1000.0, 1000.0, 320.0, 240.0, 640, 480).unwrap();
        let proj = CameraModel::new(900.0, 900.0, 320.0, 200.0, 640, 400)
            .unwrap()
            .with_pose(RigidTransform::from_axis_angle(Vector3::new(0.0, 0.25, 0.0), Vector3::new(-200.0, 0.0, 30.0)));
        (cam, proj)
    }

    #[test]
    fn intersect_recovers_known_point() {
        let (cam, proj) = rig();
        let x = Point3::new(12.0, -30.0, 650.0);
        let pc = cam.project(&x).unwrap();
        let pp = proj.project(&x).unwrap();
        let got = intersect_column(&cam, &proj, &pc, pp.x).unwrap();
        assert!((got - x).norm() < 1e-9);
    }

    #[test]
    fn empty_mask_gives_empty_cloud() {
        let (cam, proj) = rig();
        let map = PhaseMap::masked(640, 480, PhaseKind::Absolute);
        assert!(reconstruct(&map, &cam, &proj, 18.0).is_empty());
    }
}
