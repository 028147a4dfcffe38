//! Freehand ultrasound: probe calibration against a cross-wire point phantom,
//! mapping of B-scan pixels into the world frame, and calibration
//! reproducibility metrics.
//!
//! Frames: `{I}` image (origin at pixel (0, 0), x along columns, y along rows),
//! `{T}` transducer (the tracked marker), `{W}` world.

mod cr;
mod dataset;
mod segment;
mod solve;

pub use cr::{cr1, cr1_mean, cr2, reproducibility, trial_pixels, CrReport, TrialPoint};
pub use dataset::{read_poses, write_poses, ProbeRecord};
pub use segment::{segment_cross_point, segment_rings, MIN_RING_AREA, MIN_RING_CONTRAST};
pub use solve::{
    orientation_spread_deg, solve_calibration, ProbeObservation, ProbeSolution, SolveOptions, MIN_OBSERVATIONS,
    MIN_SPREAD_DEG,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, Point3, RigidTransform};
use crate::image::GrayImage;

/// Image-to-transducer transform and pixel scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeCalibration {
    /// `{I} -> {T}`.
    pub t_t_i: RigidTransform,
    /// mm per pixel along columns.
    pub sx: f64,
    /// mm per pixel along rows.
    pub sy: f64,
}

impl ProbeCalibration {
    pub fn new(t_t_i: RigidTransform, sx: f64, sy: f64) -> Result<Self> {
        let cal = Self { t_t_i, sx, sy };
        cal.validate()?;
        Ok(cal)
    }

    /// Scales must be positive and within a plausible 0.01–1 mm/px.
    pub fn validate(&self) -> Result<()> {
        if !self.t_t_i.is_valid() {
            return Err(Error::InvalidParameter("probe rotation is not orthonormal".into()));
        }
        for (name, s) in [("sx", self.sx), ("sy", self.sy)] {
            if !(0.01..=1.0).contains(&s) {
                return Err(Error::InvalidParameter(format!("{name} = {s} mm/px is out of range")));
            }
        }
        Ok(())
    }

    /// Pixel in the image plane, in mm.
    pub fn image_point(&self, pixel: &Point2) -> Point3 {
        Point3::new(self.sx * pixel.x, self.sy * pixel.y, 0.0)
    }

    /// Pixel expressed in the transducer frame.
    pub fn to_transducer(&self, pixel: &Point2) -> Point3 {
        self.t_t_i.apply(&self.image_point(pixel))
    }

    /// Image-plane coordinates of a transducer-frame point, with its signed
    /// distance from the plane (mm).
    pub fn to_pixel(&self, p_t: &Point3) -> (Point2, f64) {
        let q = self.t_t_i.inverse().apply(p_t);
        (Point2::new(q.x / self.sx, q.y / self.sy), q.z)
    }
}

/// Cross-wire phantom. Only the position of the crossing is observable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomModel {
    pub cross_point: Point3,
}

/// A B-scan with the probe pose `{T} -> {W}` at capture time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedBScan {
    pub image: GrayImage,
    pub probe_pose: RigidTransform,
    /// Seconds.
    pub timestamp: f64,
}

impl TrackedBScan {
    pub fn validate(&self) -> Result<()> {
        if self.image.is_empty() {
            return Err(Error::EmptyInput("B-scan image"));
        }
        if !self.probe_pose.is_valid() {
            return Err(Error::InvalidParameter("probe pose is not a rigid motion".into()));
        }
        Ok(())
    }
}

/// World position of a B-scan pixel.
pub fn map_pixel_to_world(cal: &ProbeCalibration, probe_pose: &RigidTransform, pixel: &Point2) -> Point3 {
    probe_pose.apply(&cal.to_transducer(pixel))
}
