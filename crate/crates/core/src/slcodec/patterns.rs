use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{quantize, GrayImage};

/// Which projector axis a pattern encodes. Vertical fringes vary along the
/// projector column (x) and encode the column coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FringeAxis {
    #[default]
    Vertical,
    Horizontal,
}

impl FringeAxis {
    #[inline]
    pub fn coordinate(self, x: f64, y: f64) -> f64 {
        match self {
            FringeAxis::Vertical => x,
            FringeAxis::Horizontal => y,
        }
    }

    pub fn extent(self, width: usize, height: usize) -> usize {
        match self {
            FringeAxis::Vertical => width,
            FringeAxis::Horizontal => height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternKind {
    /// `N` sinusoidal frames `A + B cos(2πc/p − 2πn/N)`, `A = B = 127.5`.
    PhaseShift { steps: usize, pitch: f64, axis: FringeAxis },
    /// `bits` Gray-code planes of period `pitch`, one complementary plane
    /// (finest bit of the `bits + 1` code with half period), then white and black.
    GrayCode { bits: u32, pitch: f64, axis: FringeAxis },
    /// Single bright stripe `|x − column| ≤ half_width` on black.
    Centerline { column: f64, half_width: f64 },
    White,
    Black,
}

pub const FRINGE_OFFSET: f64 = 127.5;
pub const FRINGE_AMPLITUDE: f64 = 127.5;

#[inline]
pub fn gray_encode(k: u32) -> u32 {
    k ^ (k >> 1)
}

/// Gray to binary by prefix XOR.
#[inline]
pub fn gray_decode(mut g: u32) -> u32 {
    let mut shift = 1;
    while shift < 32 {
        g ^= g >> shift;
        shift <<= 1;
    }
    g
}

impl PatternKind {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("empty projector size".into()));
        }
        match *self {
            PatternKind::PhaseShift { steps, pitch, .. } => {
                if steps < 3 {
                    return Err(Error::InvalidParameter(format!("phase shifting needs N >= 3 (got {steps})")));
                }
                if !(pitch >= 4.0) {
                    return Err(Error::InvalidParameter(format!("fringe pitch must be >= 4 px (got {pitch})")));
                }
            }
            PatternKind::GrayCode { bits, pitch, axis } => {
                if bits == 0 || bits > 20 {
                    return Err(Error::InvalidParameter(format!("bad gray-code bit count {bits}")));
                }
                if !(pitch >= 4.0) {
                    return Err(Error::InvalidParameter(format!("fringe pitch must be >= 4 px (got {pitch})")));
                }
                let coverage = (1u64 << bits) as f64 * pitch;
                if coverage < axis.extent(width, height) as f64 {
                    return Err(Error::InvalidParameter(format!(
                        "{bits} bits x pitch {pitch} covers {coverage} px < projector extent"
                    )));
                }
            }
            PatternKind::Centerline { column, half_width } => {
                if !(column >= 0.0 && column < width as f64 && half_width > 0.0) {
                    return Err(Error::InvalidParameter("centerline outside projector".into()));
                }
            }
            PatternKind::White | PatternKind::Black => {}
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        match *self {
            PatternKind::PhaseShift { steps, .. } => steps,
            PatternKind::GrayCode { bits, .. } => bits as usize + 3,
            _ => 1,
        }
    }

    /// Emitted intensity (0..=255, unquantized) of frame `index` at continuous
    /// projector coordinates.
    pub fn intensity(&self, index: usize, x: f64, y: f64) -> f64 {
        match *self {
            PatternKind::PhaseShift { steps, pitch, axis } => {
                let c = axis.coordinate(x, y).rem_euclid(pitch);
                let shift = 2.0 * PI * index as f64 / steps as f64;
                FRINGE_OFFSET + FRINGE_AMPLITUDE * (2.0 * PI * c / pitch - shift).cos()
            }
            PatternKind::GrayCode { bits, pitch, axis } => {
                let c = axis.coordinate(x, y);
                let b = bits as usize;
                let on = if index < b {
                    let k = (c / pitch).floor().max(0.0) as u32;
                    (gray_encode(k) >> (b - 1 - index)) & 1 == 1
                } else if index == b {
                    let k = (2.0 * c / pitch).floor().max(0.0) as u32;
                    gray_encode(k) & 1 == 1
                } else {
                    index == b + 1
                };
                if on {
                    255.0
                } else {
                    0.0
                }
            }
            PatternKind::Centerline { column, half_width } => {
                if (x - column).abs() <= half_width {
                    255.0
                } else {
                    0.0
                }
            }
            PatternKind::White => 255.0,
            PatternKind::Black => 0.0,
        }
    }
}

/// A stack of projector frames at projector resolution.
#[derive(Debug, Clone)]
pub struct PatternSet {
    pub kind: PatternKind,
    pub width: usize,
    pub height: usize,
    pub images: Vec<GrayImage>,
}

impl PatternSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Gray-code bit planes, most significant first.
    pub fn bit_planes(&self) -> &[GrayImage] {
        match self.kind {
            PatternKind::GrayCode { bits, .. } => &self.images[..bits as usize],
            _ => &[],
        }
    }

    pub fn complementary(&self) -> Option<&GrayImage> {
        match self.kind {
            PatternKind::GrayCode { bits, .. } => self.images.get(bits as usize),
            _ => None,
        }
    }

    pub fn white(&self) -> Option<&GrayImage> {
        match self.kind {
            PatternKind::GrayCode { bits, .. } => self.images.get(bits as usize + 1),
            PatternKind::White => self.images.first(),
            _ => None,
        }
    }

    pub fn black(&self) -> Option<&GrayImage> {
        match self.kind {
            PatternKind::GrayCode { bits, .. } => self.images.get(bits as usize + 2),
            PatternKind::Black => self.images.first(),
            _ => None,
        }
    }
}

/// Renders the projector frames for `kind` at `width x height`.
pub fn generate_patterns(kind: PatternKind, width: usize, height: usize) -> Result<PatternSet> {
    kind.validate(width, height)?;
    let images = (0..kind.frame_count())
        .map(|n| GrayImage::from_fn(width, height, |x, y| quantize(kind.intensity(n, x as f64, y as f64))))
        .collect();
    Ok(PatternSet {
        kind,
        width,
        height,
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_shift_periodicity() {
        let kind = PatternKind::PhaseShift { steps: 8, pitch: 18.0, axis: FringeAxis::Vertical };
        let set = generate_patterns(kind, 1280, 4).unwrap();
        assert_eq!(set.len(), 8);
        for img in &set.images {
            for y in 0..4 {
                assert_eq!(img.get(0, y), img.get(18, y));
                assert_eq!(img.get(100, y), img.get(118, y));
            }
        }
        // Frame 0 peaks at column 0.
        assert_eq!(set.images[0].get(0, 0), 255);
    }

    #[test]
    fn gray_planes_one_bit_transitions() {
        let kind = PatternKind::GrayCode { bits: 7, pitch: 18.0, axis: FringeAxis::Vertical };
        let set = generate_patterns(kind, 1280, 2).unwrap();
        assert_eq!(set.bit_planes().len(), 7);
        assert!(set.complementary().is_some());
        assert_eq!(set.white().unwrap().get(5, 1), 255);
        assert_eq!(set.black().unwrap().get(5, 1), 0);
        for img in &set.images {
            assert!(img.data.iter().all(|&v| v == 0 || v == 255));
        }
        let code_at = |x: usize| -> u32 {
            set.bit_planes().iter().fold(0, |acc, p| (acc << 1) | u32::from(p.get(x, 0) == 255))
        };
        for period in 0..(1280 / 18) {
            let a = code_at(period * 18);
            let b = code_at((period + 1) * 18);
            assert_eq!((a ^ b).count_ones(), 1, "period {period}");
            assert_eq!(gray_decode(a), period as u32);
        }
    }

    #[test]
    fn gray_round_trip_all_codes() {
        for bits in 1..=10u32 {
            for k in 0..(1u32 << bits) {
                assert_eq!(gray_decode(gray_encode(k)), k);
                if k > 0 {
                    assert_eq!((gray_encode(k) ^ gray_encode(k - 1)).count_ones(), 1);
                }
            }
        }
        assert_eq!(gray_decode(0b111), 5);
        assert_eq!(gray_decode(0), 0);
    }

    #[test]
    fn invalid_geometry_rejected() {
        let bad = [
            PatternKind::PhaseShift { steps: 2, pitch: 18.0, axis: FringeAxis::Vertical },
            PatternKind::PhaseShift { steps: 8, pitch: 3.0, axis: FringeAxis::Vertical },
            PatternKind::GrayCode { bits: 6, pitch: 18.0, axis: FringeAxis::Vertical },
            PatternKind::Centerline { column: 2000.0, half_width: 1.0 },
        ];
        for k in bad {
            assert!(generate_patterns(k, 1280, 800).is_err(), "{k:?}");
        }
    }

    #[test]
    fn centerline_stripe() {
        let set = generate_patterns(PatternKind::Centerline { column: 640.0, half_width: 1.5 }, 1280, 3).unwrap();
        let lit: Vec<usize> = (0..1280).filter(|&x| set.images[0].get(x, 1) == 255).collect();
        assert_eq!(lit, vec![639, 640, 641]);
    }
}
