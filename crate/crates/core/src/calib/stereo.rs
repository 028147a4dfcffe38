use nalgebra::{Matrix4, Rotation3, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// Averaged relative pose with its per-view consistency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoEstimate {
    /// Device -> reference.
    pub pose: RigidTransform,
    /// Largest angular deviation of a single view from the mean (deg).
    pub rotation_spread_deg: f64,
    /// RMS deviation of per-view translations from the mean (mm).
    pub translation_spread_mm: f64,
    pub views: usize,
}

/// Relative pose of a second device from board poses seen by both.
///
/// `reference[i]` and `device[i]` are board -> device transforms of the same
/// board pose. The per-view estimates `reference[i] · device[i]⁻¹` are
/// combined by a chordal quaternion mean and a translation mean.
pub fn stereo_extrinsics(reference: &[RigidTransform], device: &[RigidTransform]) -> Result<StereoEstimate> {
    if reference.len() != device.len() {
        return Err(Error::DimensionMismatch("unpaired stereo views".into()));
    }
    if reference.is_empty() {
        return Err(Error::EmptyInput("no views shared by the two devices"));
    }
    let rel: Vec<RigidTransform> = reference.iter().zip(device).map(|(a, b)| a.compose(&b.inverse())).collect();
    let mut m = Matrix4::<f64>::zeros();
    for t in &rel {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(t.rotation));
        let v = Vector4::new(q.w, q.i, q.j, q.k);
        m += v * v.transpose();
    }
    let eig = m.symmetric_eigen();
    let best = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(best);
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]));
    let n = rel.len() as f64;
    let t = rel.iter().fold(Vector3::zeros(), |a, r| a + r.translation) / n;
    let pose = RigidTransform {
        rotation: *q.to_rotation_matrix().matrix(),
        translation: t,
    };
    let rotation_spread_deg = rel.iter().map(|r| r.angle_to(&pose).to_degrees()).fold(0.0, f64::max);
    let translation_spread_mm = (rel.iter().map(|r| (r.translation - t).norm_squared()).sum::<f64>() / n).sqrt();
    Ok(StereoEstimate {
        pose,
        rotation_spread_deg,
        translation_spread_mm,
        views: rel.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> RigidTransform {
        RigidTransform::from_axis_angle(Vector3::new(0.01, -0.21, 0.02), Vector3::new(150.0, 2.0, 5.0))
    }

    fn board(i: usize) -> RigidTransform {
        let a = i as f64;
        RigidTransform::from_axis_angle(Vector3::new(0.3 * a.sin(), 0.2 * a.cos(), 0.1), Vector3::new(a, -a, 700.0))
    }

    #[test]
    fn single_view_is_exact() {
        let b = board(0);
        let dev = truth().inverse().compose(&b);
        let est = stereo_extrinsics(&[b], &[dev]).unwrap();
        assert!(est.pose.angle_to(&truth()) < 1e-12);
        assert!((est.pose.translation - truth().translation).norm() < 1e-9);
        assert!(est.rotation_spread_deg < 1e-9);
    }

    #[test]
    fn inconsistent_views_report_spread() {
        let (a, b): (Vec<_>, Vec<_>) = (0..5)
            .map(|i| {
                let fake = RigidTransform::from_axis_angle(
                    Vector3::new(0.0, 0.1 * i as f64, 0.0),
                    Vector3::new(100.0 + 20.0 * i as f64, 0.0, 0.0),
                );
                (board(i), fake.inverse().compose(&board(i)))
            })
            .unzip();
        let est = stereo_extrinsics(&a, &b).unwrap();
        assert!(est.rotation_spread_deg > 5.0);
        assert!(est.translation_spread_mm > 10.0);
    }

    #[test]
    fn no_shared_views() {
        assert!(stereo_extrinsics(&[], &[]).is_err());
    }
}
