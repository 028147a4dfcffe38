use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PhantomModel, ProbeCalibration, ProbeSolution};
use crate::error::{Error, Result};
use crate::geometry::{Point3, RigidTransform};

/// Probe calibration as stored in a calibration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    /// Image -> transducer, 9 rotation entries row-major then translation.
    pub pose: Vec<f64>,
    pub sx: f64,
    pub sy: f64,
    #[serde(default)]
    pub cross_point: Option<[f64; 3]>,
    #[serde(default)]
    pub rms_mm: f64,
    #[serde(default)]
    pub observations: usize,
}

impl ProbeRecord {
    pub fn new(cal: &ProbeCalibration) -> Self {
        Self {
            pose: cal.t_t_i.to_row12().to_vec(),
            sx: cal.sx,
            sy: cal.sy,
            cross_point: None,
            rms_mm: 0.0,
            observations: 0,
        }
    }

    pub fn from_solution(sol: &ProbeSolution) -> Self {
        let p = sol.phantom.cross_point;
        Self {
            cross_point: Some([p.x, p.y, p.z]),
            rms_mm: sol.rms_mm,
            observations: sol.residuals_mm.len(),
            ..Self::new(&sol.calibration)
        }
    }

    pub fn calibration(&self) -> Result<ProbeCalibration> {
        ProbeCalibration::new(RigidTransform::from_row12(&self.pose)?, self.sx, self.sy)
    }

    pub fn phantom(&self) -> Option<PhantomModel> {
        self.cross_point.map(|p| PhantomModel {
            cross_point: Point3::new(p[0], p[1], p[2]),
        })
    }
}

/// Reads `id r11 r12 … r33 tx ty tz` lines. Blank lines and `#` comments are
/// skipped.
pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<(usize, RigidTransform)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("{}:{}: {what}", path.display(), n + 1));
        let mut fields = line.split_whitespace();
        let id: usize = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("missing frame id"))?;
        let v: Vec<f64> = fields
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("non-numeric pose entry"))?;
        if v.len() != 12 {
            return Err(bad(&format!("expected 12 pose numbers, got {}", v.len())));
        }
        out.push((id, RigidTransform::from_row12(&v)?));
    }
    Ok(out)
}

pub fn write_poses(path: impl AsRef<Path>, poses: &[(usize, RigidTransform)]) -> Result<()> {
    let mut text = String::new();
    for (id, pose) in poses {
        let _ = write!(text, "{id}");
        for v in pose.to_row12() {
            let _ = write!(text, " {v:e}");
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}
