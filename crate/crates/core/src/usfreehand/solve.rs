use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{PhantomModel, ProbeCalibration};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Point3, RigidTransform};
use crate::lm::{minimize, LeastSquares, LmConfig, LmReport, Termination};

pub const MIN_OBSERVATIONS: usize = 6;
/// Largest pairwise probe rotation required for a well-posed solve (degrees).
pub const MIN_SPREAD_DEG: f64 = 30.0;

/// Segmented wire crossing in one tracked B-scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeObservation {
    /// `{T} -> {W}`.
    pub pose: RigidTransform,
    pub pixel: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Initial mm/px for both axes, typically imaging depth over image height.
    pub nominal_scale: f64,
    pub max_iterations: usize,
    /// Number of coarse orientations refined by LM.
    pub starts: usize,
}

impl SolveOptions {
    pub fn from_depth(depth_mm: f64, image_height_px: usize) -> Self {
        Self {
            nominal_scale: depth_mm / image_height_px as f64,
            max_iterations: 500,
            starts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSolution {
    pub calibration: ProbeCalibration,
    pub phantom: PhantomModel,
    /// `sqrt(mean ‖r‖²)` over observations, `r` the 3D closure error (mm).
    pub rms_mm: f64,
    pub initial_rms_mm: f64,
    /// Per-observation closure error (mm).
    pub residuals_mm: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

struct ProbeProblem<'a> {
    obs: &'a [ProbeObservation],
}

impl ProbeProblem<'_> {
    fn unpack(p: &DVector<f64>) -> (ProbeCalibration, Point3) {
        let cal = ProbeCalibration {
            t_t_i: RigidTransform::from_axis_angle(Vector3::new(p[0], p[1], p[2]), Vector3::new(p[3], p[4], p[5])),
            sx: p[6],
            sy: p[7],
        };
        (cal, Point3::new(p[8], p[9], p[10]))
    }
}

impl LeastSquares for ProbeProblem<'_> {
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let (cal, cross) = Self::unpack(p);
        let mut r = DVector::zeros(3 * self.obs.len());
        for (i, o) in self.obs.iter().enumerate() {
            let d = o.pose.apply(&cal.to_transducer(&o.pixel)) - cross;
            r.fixed_rows_mut::<3>(3 * i).copy_from(&d);
        }
        r
    }

    fn retract(&self, p: &DVector<f64>, delta: &DVector<f64>) -> DVector<f64> {
        let mut out = p + delta;
        let r = Rotation3::from_scaled_axis(Vector3::new(p[0], p[1], p[2]));
        let dr = Rotation3::from_scaled_axis(Vector3::new(delta[0], delta[1], delta[2]));
        out.fixed_rows_mut::<3>(0).copy_from(&(dr * r).scaled_axis());
        out
    }
}

/// Largest rotation angle between any two probe poses (degrees).
pub fn orientation_spread_deg(obs: &[ProbeObservation]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in obs.iter().enumerate() {
        for b in &obs[i + 1..] {
            best = best.max(a.pose.angle_to(&b.pose));
        }
    }
    best.to_degrees()
}

/// The 24 rotations of the cube.
fn cube_rotations() -> Vec<Matrix3<f64>> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for p in perms {
        for signs in 0..8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

/// With the rotation and scales fixed the closure equations are linear in the
/// image-origin offset and the cross point.
fn linear_start(obs: &[ProbeObservation], rotation: &Matrix3<f64>, scale: f64) -> Option<(DVector<f64>, f64)> {
    let n = obs.len();
    let mut a = DMatrix::zeros(3 * n, 6);
    let mut b = DVector::zeros(3 * n);
    for (i, o) in obs.iter().enumerate() {
        let r = o.pose.rotation;
        let q = rotation * Vector3::new(scale * o.pixel.x, scale * o.pixel.y, 0.0);
        a.view_mut((3 * i, 0), (3, 3)).copy_from(&r);
        a.view_mut((3 * i, 3), (3, 3)).copy_from(&(-Matrix3::identity()));
        b.fixed_rows_mut::<3>(3 * i).copy_from(&(-o.pose.translation - r * q));
    }
    let x = a.clone().svd(true, true).solve(&b, 1e-12).ok()?;
    let cost = (&a * &x - &b).norm_squared();
    let aa = Rotation3::from_matrix_unchecked(*rotation).scaled_axis();
    let params = DVector::from_vec(vec![aa.x, aa.y, aa.z, x[0], x[1], x[2], scale, scale, x[3], x[4], x[5]]);
    Some((params, cost))
}

/// Estimates the image-to-transducer transform, pixel scales and phantom
/// point from tracked observations of the wire crossing.
pub fn solve_calibration(obs: &[ProbeObservation], options: &SolveOptions) -> Result<ProbeSolution> {
    if obs.len() < MIN_OBSERVATIONS {
        return Err(Error::Degenerate(format!(
            "probe calibration needs {MIN_OBSERVATIONS} observations, got {}",
            obs.len()
        )));
    }
    let spread_deg = orientation_spread_deg(obs);
    if spread_deg <= MIN_SPREAD_DEG {
        return Err(Error::UnderconstrainedMotion { spread_deg });
    }
    if !(options.nominal_scale > 0.0) {
        return Err(Error::InvalidParameter("nominal scale must be positive".into()));
    }

    let mut starts: Vec<(DVector<f64>, f64)> = cube_rotations()
        .iter()
        .filter_map(|r| linear_start(obs, r, options.nominal_scale))
        .collect();
    starts.sort_by(|a, b| a.1.total_cmp(&b.1));
    starts.truncate(options.starts.max(1));

    let problem = ProbeProblem { obs };
    let config = LmConfig {
        max_iterations: options.max_iterations,
        ..LmConfig::default()
    };
    let mut best: Option<LmReport> = None;
    for (x0, _) in starts {
        let Ok(rep) = minimize(&problem, x0, &config) else {
            continue;
        };
        // Negative scales describe a mirrored image plane, not a calibration.
        if rep.params[6] <= 0.0 || rep.params[7] <= 0.0 {
            continue;
        }
        if best.as_ref().is_none_or(|b| rep.cost < b.cost) {
            best = Some(rep);
        }
    }
    let rep = best.ok_or_else(|| Error::Divergence("no probe calibration start converged".into()))?;
    if rep.termination == Termination::MaxIterations {
        return Err(Error::NonConvergence {
            iterations: rep.iterations,
        });
    }

    let (calibration, cross_point) = ProbeProblem::unpack(&rep.params);
    let r = problem.residuals(&rep.params);
    let residuals_mm: Vec<f64> = (0..obs.len()).map(|i| r.fixed_rows::<3>(3 * i).norm()).collect();
    let n = obs.len() as f64;
    Ok(ProbeSolution {
        calibration,
        phantom: PhantomModel { cross_point },
        rms_mm: (rep.cost / n).sqrt(),
        initial_rms_mm: (rep.initial_cost / n).sqrt(),
        residuals_mm,
        iterations: rep.iterations,
        termination: rep.termination,
    })
}
