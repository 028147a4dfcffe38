use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{bilinear, GrayImage};

/// Pixels whose fitted modulation amplitude falls below this (8-bit units)
/// are masked out.
pub const MIN_MODULATION: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    Wrapped,
    Absolute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap {
    pub width: usize,
    pub height: usize,
    /// Radians, row-major. Meaningful only where `mask` is set.
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
    pub kind: PhaseKind,
}

impl PhaseMap {
    pub fn masked(width: usize, height: usize, kind: PhaseKind) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            mask: vec![false; width * height],
            kind,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.mask[i].then_some(self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Bilinear phase at a subpixel location; `None` if any of the four
    /// neighbours is masked.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width.checked_sub(1)?);
        let y1 = (y0 + 1).min(self.height.checked_sub(1)?);
        if x0 >= self.width || y0 >= self.height {
            return None;
        }
        for (xx, yy) in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)] {
            if !self.mask[yy * self.width + xx] {
                return None;
            }
        }
        bilinear(self.width, self.height, x, y, |i| self.values[i])
    }
}

/// Wraps an angle into `(−π, π]`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - TAU * ((a + PI) / TAU).floor();
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// Phase and modulation amplitude from `N` equally shifted samples of
/// `A + B cos(φ − 2πn/N)`.
pub fn phase_from_samples(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let (mut s, mut c) = (0.0, 0.0);
    for (k, &v) in samples.iter().enumerate() {
        let d = TAU * k as f64 / n;
        s += v * d.sin();
        c += v * d.cos();
    }
    let modulation = 2.0 / n * (s * s + c * c).sqrt();
    (wrap_angle(s.atan2(c)), modulation)
}

/// Wrapped phase of an `N ≥ 3` phase-shifted capture stack.
pub fn wrapped_phase(frames: &[GrayImage]) -> Result<PhaseMap> {
    if frames.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "phase shifting needs at least 3 frames (got {})",
            frames.len()
        )));
    }
    let (w, h) = (frames[0].width, frames[0].height);
    if frames.iter().any(|f| f.width != w || f.height != h) {
        return Err(Error::DimensionMismatch("phase-shift frames differ in size".into()));
    }
    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut vals = vec![0.0; w];
            let mut mask = vec![false; w];
            let mut samples = vec![0.0; frames.len()];
            for x in 0..w {
                for (s, f) in samples.iter_mut().zip(frames) {
                    *s = f.get(x, y) as f64;
                }
                let (phi, b) = phase_from_samples(&samples);
                if b >= MIN_MODULATION {
                    vals[x] = phi;
                    mask[x] = true;
                }
            }
            (vals, mask)
        })
        .collect();
    let mut out = PhaseMap::masked(w, h, PhaseKind::Wrapped);
    for (y, (v, m)) in rows.into_iter().enumerate() {
        out.values[y * w..(y + 1) * w].copy_from_slice(&v);
        out.mask[y * w..(y + 1) * w].copy_from_slice(&m);
    }
    Ok(out)
}
