//! Structured-light coding: pattern generation, phase retrieval, unwrapping
//! and camera/projector triangulation.

mod gray;
mod patterns;
mod phase;
mod reconstruct;
mod unwrap;

pub use crate::cloud::{PointCloud, Source};
pub use gray::{decode_gray, PeriodMap};
pub use patterns::{
    generate_patterns, gray_decode, gray_encode, FringeAxis, PatternKind, PatternSet, FRINGE_AMPLITUDE,
    FRINGE_OFFSET,
};
pub use phase::{phase_from_samples, wrap_angle, wrapped_phase, PhaseKind, PhaseMap, MIN_MODULATION};
pub use reconstruct::{intersect_column, reconstruct};
pub use unwrap::{detect_centerline, unwrap_absolute, unwrap_centerline};

use crate::error::Result;
use crate::image::GrayImage;

/// Captured frames for one projection sequence.
#[derive(Debug, Clone)]
pub struct Captures {
    pub phase: Vec<GrayImage>,
    pub gray: Option<GrayCaptures>,
    pub centerline: Option<GrayImage>,
}

#[derive(Debug, Clone)]
pub struct GrayCaptures {
    pub planes: Vec<GrayImage>,
    pub complementary: Option<GrayImage>,
    pub white: GrayImage,
    pub black: GrayImage,
}

impl Captures {
    /// Splits a capture sequence recorded in the order of `kinds`. Expects
    /// one phase-shift set plus an optional Gray-code set and centerline.
    pub fn from_sequence(kinds: &[PatternKind], frames: Vec<GrayImage>) -> Result<Self> {
        let expected: usize = kinds.iter().map(|k| k.frame_count()).sum();
        if frames.len() != expected {
            return Err(crate::Error::DimensionMismatch(format!(
                "sequence needs {expected} frames, got {}",
                frames.len()
            )));
        }
        let mut it = frames.into_iter();
        let mut out = Captures {
            phase: Vec::new(),
            gray: None,
            centerline: None,
        };
        for kind in kinds {
            let mut take: Vec<GrayImage> = it.by_ref().take(kind.frame_count()).collect();
            match kind {
                PatternKind::PhaseShift { .. } => out.phase = take,
                PatternKind::GrayCode { bits, .. } => {
                    let black = take.pop().expect("frame count");
                    let white = take.pop().expect("frame count");
                    let complementary = take.pop();
                    debug_assert_eq!(take.len(), *bits as usize);
                    out.gray = Some(GrayCaptures {
                        planes: take,
                        complementary,
                        white,
                        black,
                    });
                }
                PatternKind::Centerline { .. } => out.centerline = take.pop(),
                PatternKind::White | PatternKind::Black => {}
            }
        }
        if out.phase.is_empty() {
            return Err(crate::Error::InvalidParameter("sequence has no phase-shift frames".into()));
        }
        Ok(out)
    }
}

/// Absolute phase recovery route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnwrapMethod {
    GrayCode,
    /// Centerline at the given projector column.
    Centerline { column: f64 },
}

/// Wrapped phase followed by the chosen unwrapping.
pub fn absolute_phase(captures: &Captures, method: UnwrapMethod, pitch: f64) -> Result<PhaseMap> {
    let wrapped = wrapped_phase(&captures.phase)?;
    match method {
        UnwrapMethod::GrayCode => {
            let g = captures
                .gray
                .as_ref()
                .ok_or_else(|| crate::Error::InvalidParameter("gray-code captures missing".into()))?;
            let periods = decode_gray(&g.planes, g.complementary.as_ref(), &g.white, &g.black)?;
            unwrap_absolute(&wrapped, &periods)
        }
        UnwrapMethod::Centerline { column } => {
            let line = captures
                .centerline
                .as_ref()
                .ok_or_else(|| crate::Error::InvalidParameter("centerline capture missing".into()))?;
            unwrap_centerline(&wrapped, line, std::f64::consts::TAU * column / pitch)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_is_split_by_kind() {
        let kinds = [
            PatternKind::PhaseShift {
                steps: 4,
                pitch: 16.0,
                axis: FringeAxis::Vertical,
            },
            PatternKind::GrayCode {
                bits: 3,
                pitch: 16.0,
                axis: FringeAxis::Vertical,
            },
            PatternKind::Centerline {
                column: 40.0,
                half_width: 1.0,
            },
        ];
        let mut frames = Vec::new();
        for k in &kinds {
            frames.extend(generate_patterns(*k, 128, 8).unwrap().images);
        }
        let total = frames.len();
        let caps = Captures::from_sequence(&kinds, frames.clone()).unwrap();
        assert_eq!(caps.phase.len(), 4);
        let g = caps.gray.as_ref().unwrap();
        assert_eq!(g.planes.len(), 3);
        assert!(g.complementary.is_some());
        assert!(g.white.data.iter().all(|&v| v == 255));
        assert!(g.black.data.iter().all(|&v| v == 0));
        assert_eq!(caps.centerline.as_ref().unwrap(), &frames[total - 1]);
        let abs = absolute_phase(&caps, UnwrapMethod::GrayCode, 16.0).unwrap();
        let c = abs.get(70, 4).unwrap();
        assert!((c - std::f64::consts::TAU * 70.0 / 16.0).abs() < 1e-6, "{c}");
        frames.pop();
        assert!(matches!(
            Captures::from_sequence(&kinds, frames),
            Err(crate::Error::DimensionMismatch(_))
        ));
    }
}
