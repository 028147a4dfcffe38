use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, Point3};

/// Planar asymmetric-circle target. Point `(i, j)` (row `i`, column `j`) sits
/// at `((2j + i mod 2)·s, i·s, 0)` in the board frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBoard {
    pub rows: usize,
    pub cols: usize,
    /// Grid spacing (mm).
    pub spacing: f64,
    /// Printed circle radius (mm).
    pub circle_radius: f64,
}

impl Default for CalibrationBoard {
    fn default() -> Self {
        Self {
            rows: 13,
            cols: 10,
            spacing: 10.0,
            circle_radius: 3.0,
        }
    }
}

impl CalibrationBoard {
    pub fn new(rows: usize, cols: usize, spacing: f64, circle_radius: f64) -> Result<Self> {
        let board = Self {
            rows,
            cols,
            spacing,
            circle_radius,
        };
        board.validate()?;
        Ok(board)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows < 2 || self.cols < 2 || self.rows * self.cols < 4 {
            return Err(Error::InvalidParameter(format!(
                "board {}x{} has too few points",
                self.rows, self.cols
            )));
        }
        // Nearest neighbours are diagonal at distance s·√2.
        if !(self.spacing > 0.0 && self.circle_radius > 0.0 && 2.0 * self.circle_radius < self.spacing * 2f64.sqrt()) {
            return Err(Error::InvalidParameter("circle radius must leave gaps between circles".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Board-plane coordinates in row-major order.
    pub fn planar_points(&self) -> Vec<Point2> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(Point2::new(
                    (2 * j + i % 2) as f64 * self.spacing,
                    i as f64 * self.spacing,
                ));
            }
        }
        out
    }

    pub fn points(&self) -> Vec<Point3> {
        self.planar_points().iter().map(|p| Point3::new(p.x, p.y, 0.0)).collect()
    }

    /// Centre of the point grid in the board frame.
    pub fn center(&self) -> Point3 {
        let n = self.len() as f64;
        Point3::from(self.points().iter().fold(nalgebra::Vector3::zeros(), |a, p| a + p.coords) / n)
    }
}
