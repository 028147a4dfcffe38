//! Three-circle target detection and probe pose from a calibrated stereo pair.
//!
//! Circle centres come from a [`CenterDetector`]; the bundled detector
//! thresholds dark blobs and fits ellipses to sub-pixel edge points.

mod blobs;
mod ellipse;
mod target;

pub use blobs::{detect_blobs, detect_blobs_with, edge_points, Blob, BlobParams};
pub use ellipse::{ellipse_from_conic, fit_ellipse, EllipseFit};
pub use target::{
    assign_ids, ellipse_center_bias, estimate_pose, estimate_pose_with, frame_from_centers, label_centers,
    MarkerDetection, MarkerGeometry, PoseOptions, TargetPose, MAX_CORNER_DEVIATION_DEG, SCALE_TOLERANCE,
};

use rayon::join;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Point2};
use crate::image::GrayImage;

/// A detected circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleCandidate {
    pub center: Point2,
    /// Fit residual (px).
    pub residual: f64,
    pub area: usize,
}

/// Source of sub-pixel circle centres.
pub trait CenterDetector: Sync {
    fn detect(&self, image: &GrayImage) -> Vec<CircleCandidate>;
}

/// Threshold + connected components + direct ellipse fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobEllipseDetector {
    pub blobs: BlobParams,
    /// Fits with a larger residual are rejected (px).
    pub max_residual: f64,
}

impl Default for BlobEllipseDetector {
    fn default() -> Self {
        Self {
            blobs: BlobParams::default(),
            max_residual: 0.5,
        }
    }
}

impl CenterDetector for BlobEllipseDetector {
    fn detect(&self, image: &GrayImage) -> Vec<CircleCandidate> {
        detect_blobs_with(image, &self.blobs)
            .iter()
            .filter_map(|b| {
                let fit = fit_ellipse(&edge_points(image, b)).ok()?;
                (fit.residual < self.max_residual).then_some(CircleCandidate {
                    center: fit.center,
                    residual: fit.residual,
                    area: b.area(),
                })
            })
            .collect()
    }
}

/// Detects, labels and triangulates the target in one stereo frame.
pub fn track_frame(
    detector: &dyn CenterDetector,
    images: (&GrayImage, &GrayImage),
    cams: (&CameraModel, &CameraModel),
    geometry: &MarkerGeometry,
) -> Result<TargetPose> {
    let (c1, c2) = join(|| detector.detect(images.0), || detector.detect(images.1));
    for (name, c) in [("cam1", &c1), ("cam2", &c2)] {
        if c.len() != 3 {
            return Err(Error::Degenerate(format!("{name}: expected 3 marker circles, found {}", c.len())));
        }
    }
    let worst = |c: &[CircleCandidate]| c.iter().map(|k| k.residual).fold(0.0, f64::max);
    let p1: Vec<Point2> = c1.iter().map(|c| c.center).collect();
    let p2: Vec<Point2> = c2.iter().map(|c| c.center).collect();
    let (a, b) = assign_ids(&p1, &p2, (worst(&c1), worst(&c2)))?;
    estimate_pose((&a, &b), cams, geometry)
}
