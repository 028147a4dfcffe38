//! Calibration reproducibility: spread of one B-scan pixel mapped into the
//! transducer frame by repeated calibrations.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::ProbeCalibration;
use crate::error::{Error, Result};
use crate::geometry::{Point2, Point3};

/// Pairwise distance of `pixel` mapped through two calibrations (mm).
pub fn cr1(a: &ProbeCalibration, b: &ProbeCalibration, pixel: &Point2) -> f64 {
    (a.to_transducer(pixel) - b.to_transducer(pixel)).norm()
}

/// Mean of [`cr1`] over all unordered pairs.
pub fn cr1_mean(cals: &[ProbeCalibration], pixel: &Point2) -> Result<f64> {
    if cals.len() < 2 {
        return Err(Error::InvalidParameter("reproducibility needs at least two calibrations".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, a) in cals.iter().enumerate() {
        for b in &cals[i + 1..] {
            sum += cr1(a, b, pixel);
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Mean distance of the mapped points from their centroid (mm).
pub fn cr2(cals: &[ProbeCalibration], pixel: &Point2) -> Result<f64> {
    if cals.len() < 2 {
        return Err(Error::InvalidParameter("reproducibility needs at least two calibrations".into()));
    }
    let pts: Vec<Point3> = cals.iter().map(|c| c.to_transducer(pixel)).collect();
    // Offsets from the first point keep identical inputs exactly at zero.
    let n = pts.len() as f64;
    let mean = pts[0].coords + pts.iter().fold(Vector3::zeros(), |a, p| a + (p - pts[0])) / n;
    Ok(pts.iter().map(|p| (p.coords - mean).norm()).sum::<f64>() / n)
}

/// Image centre followed by the four corners. The bottom-right corner is
/// `(width − 1, height − 1)`.
pub fn trial_pixels(width: usize, height: usize) -> [(&'static str, Point2); 5] {
    let (u, v) = ((width - 1) as f64, (height - 1) as f64);
    [
        ("center", Point2::new(0.5 * u, 0.5 * v)),
        ("top_left", Point2::new(0.0, 0.0)),
        ("top_right", Point2::new(u, 0.0)),
        ("bottom_left", Point2::new(0.0, v)),
        ("bottom_right", Point2::new(u, v)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPoint {
    pub name: String,
    pub pixel: [f64; 2],
    pub cr1_mm: f64,
    pub cr2_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrReport {
    pub calibrations: usize,
    pub trials: Vec<TrialPoint>,
    /// Means over the five trial points.
    pub mean_cr1_mm: f64,
    pub mean_cr2_mm: f64,
}

impl CrReport {
    pub fn trial(&self, name: &str) -> Option<&TrialPoint> {
        self.trials.iter().find(|t| t.name == name)
    }
}

/// Both metrics at the five standard trial pixels.
pub fn reproducibility(cals: &[ProbeCalibration], width: usize, height: usize) -> Result<CrReport> {
    let mut trials = Vec::with_capacity(5);
    for (name, px) in trial_pixels(width, height) {
        trials.push(TrialPoint {
            name: name.to_string(),
            pixel: [px.x, px.y],
            cr1_mm: cr1_mean(cals, &px)?,
            cr2_mm: cr2(cals, &px)?,
        });
    }
    let n = trials.len() as f64;
    Ok(CrReport {
        calibrations: cals.len(),
        mean_cr1_mm: trials.iter().map(|t| t.cr1_mm).sum::<f64>() / n,
        mean_cr2_mm: trials.iter().map(|t| t.cr2_mm).sum::<f64>() / n,
        trials,
    })
}
