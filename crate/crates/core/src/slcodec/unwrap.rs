//! Absolute phase recovery: temporal (Gray code) and spatial (centerline seed).

use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_2, TAU};

use crate::error::{Error, Result};
use crate::image::GrayImage;

use super::gray::PeriodMap;
use super::phase::{wrap_angle, PhaseKind, PhaseMap};

/// `Φ = φ + 2πk` with period-boundary correction.
///
/// The wrapped phase jumps at half periods while `k` changes at whole
/// periods. Near `φ ≈ 0` (where `k` may be misread) the half-period shifted
/// index is used; elsewhere `k` is used, bumped by one past the wrap. Without
/// a shifted index the sign of `φ` alone selects the bump.
pub fn unwrap_absolute(wrapped: &PhaseMap, periods: &PeriodMap) -> Result<PhaseMap> {
    if wrapped.width != periods.width || wrapped.height != periods.height {
        return Err(Error::DimensionMismatch(format!(
            "phase {}x{} vs period map {}x{}",
            wrapped.width, wrapped.height, periods.width, periods.height
        )));
    }
    let mut out = PhaseMap::masked(wrapped.width, wrapped.height, PhaseKind::Absolute);
    for i in 0..wrapped.values.len() {
        if !(wrapped.mask[i] && periods.mask[i]) {
            continue;
        }
        let phi = wrapped.values[i];
        let k = periods.k[i] as f64;
        let order = match &periods.k_shifted {
            Some(ks) if phi.abs() <= FRAC_PI_2 => ks[i] as f64,
            Some(_) if phi > FRAC_PI_2 => k,
            Some(_) => k + 1.0,
            None if phi >= 0.0 => k,
            None => k + 1.0,
        };
        out.values[i] = phi + TAU * order;
        out.mask[i] = true;
    }
    Ok(out)
}

/// Minimum stripe brightness (8-bit) for a centerline detection.
const CENTERLINE_MIN_LEVEL: f64 = 32.0;

/// Column of the centerline stripe in each row (`None` where not found).
pub fn detect_centerline(image: &GrayImage, valid: &[bool]) -> Vec<Option<usize>> {
    (0..image.height)
        .map(|y| {
            let mut best: Option<(usize, u8)> = None;
            let mut sum = 0.0;
            let mut count = 0usize;
            for x in 0..image.width {
                if !valid[y * image.width + x] {
                    continue;
                }
                let v = image.get(x, y);
                sum += v as f64;
                count += 1;
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((x, v));
                }
            }
            let (x, v) = best?;
            let mean = sum / count as f64;
            (v as f64 >= CENTERLINE_MIN_LEVEL && v as f64 >= 4.0 * mean).then_some(x)
        })
        .collect()
}

/// Spatial unwrapping seeded at the centerline.
///
/// In each row the stripe pixel receives the absolute phase closest to
/// `center_phase`; the phase is then integrated along the row run and, for
/// runs cut off by gaps, from resolved vertical neighbours. Rows without a
/// detectable stripe are masked.
pub fn unwrap_centerline(wrapped: &PhaseMap, centerline: &GrayImage, center_phase: f64) -> Result<PhaseMap> {
    if wrapped.width != centerline.width || wrapped.height != centerline.height {
        return Err(Error::DimensionMismatch("centerline image size differs from phase map".into()));
    }
    let (w, h) = (wrapped.width, wrapped.height);
    let seeds = detect_centerline(centerline, &wrapped.mask);
    if seeds.iter().all(Option::is_none) {
        return Err(Error::CenterlineNotFound);
    }
    let mut out = PhaseMap::masked(w, h, PhaseKind::Absolute);
    let row_ok: Vec<bool> = seeds.iter().map(Option::is_some).collect();
    let mut queue = VecDeque::new();
    for (y, seed) in seeds.iter().enumerate() {
        if let Some(x) = *seed {
            let i = y * w + x;
            let phi = wrapped.values[i];
            out.values[i] = phi + TAU * ((center_phase - phi) / TAU).round();
            out.mask[i] = true;
            fill_row(wrapped, &mut out, x, y, &mut queue);
        }
    }
    // Column pass: resolved pixels seed unresolved row runs above and below.
    while let Some((x, y)) = queue.pop_front() {
        for ny in [y.wrapping_sub(1), y + 1] {
            if ny >= h || !row_ok[ny] {
                continue;
            }
            let j = ny * w + x;
            if out.mask[j] || !wrapped.mask[j] {
                continue;
            }
            let i = y * w + x;
            out.values[j] = out.values[i] + wrap_angle(wrapped.values[j] - wrapped.values[i]);
            out.mask[j] = true;
            fill_row(wrapped, &mut out, x, ny, &mut queue);
        }
    }
    Ok(out)
}

fn fill_row(wrapped: &PhaseMap, out: &mut PhaseMap, x0: usize, y: usize, queue: &mut VecDeque<(usize, usize)>) {
    let w = wrapped.width;
    queue.push_back((x0, y));
    for dir in [-1isize, 1] {
        let mut x = x0;
        loop {
            let nx = x as isize + dir;
            if nx < 0 || nx >= w as isize {
                break;
            }
            let nx = nx as usize;
            let (i, j) = (y * w + x, y * w + nx);
            if out.mask[j] || !wrapped.mask[j] {
                break;
            }
            out.values[j] = out.values[i] + wrap_angle(wrapped.values[j] - wrapped.values[i]);
            out.mask[j] = true;
            queue.push_back((nx, y));
            x = nx;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ramp(width: usize, pitch: f64, offset: f64) -> (PhaseMap, Vec<f64>) {
        let truth: Vec<f64> = (0..width).map(|x| TAU * (x as f64 * 0.37 + offset) / pitch).collect();
        let map = PhaseMap {
            width,
            height: 1,
            values: truth.iter().map(|&t| wrap_angle(t)).collect(),
            mask: vec![true; width],
            kind: PhaseKind::Wrapped,
        };
        (map, truth)
    }

    fn periods_from(truth: &[f64], with_shift: bool) -> PeriodMap {
        let k = truth.iter().map(|t| (t / TAU).floor() as i32).collect();
        let ks = truth.iter().map(|t| (t / TAU + 0.5).floor() as i32).collect();
        PeriodMap {
            width: truth.len(),
            height: 1,
            k,
            k_shifted: with_shift.then_some(ks),
            mask: vec![true; truth.len()],
        }
    }

    #[test]
    fn simple_offset() {
        let wrapped = PhaseMap {
            width: 1,
            height: 1,
            values: vec![0.5],
            mask: vec![true],
            kind: PhaseKind::Wrapped,
        };
        let periods = PeriodMap { width: 1, height: 1, k: vec![3], k_shifted: Some(vec![3]), mask: vec![true] };
        let abs = unwrap_absolute(&wrapped, &periods).unwrap();
        assert!((abs.values[0] - (0.5 + 6.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn ramp_recovers_truth_with_and_without_shift() {
        let (wrapped, truth) = ramp(2000, 18.0, 0.123);
        for shift in [true, false] {
            let abs = unwrap_absolute(&wrapped, &periods_from(&truth, shift)).unwrap();
            for (a, t) in abs.values.iter().zip(&truth) {
                assert!((a - t).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn boundary_misread_corrected_by_shifted_index() {
        // Misread k by ±1 within 2% of each period boundary; the result must
        // stay continuous.
        let (wrapped, truth) = ramp(2000, 18.0, 0.0);
        let mut periods = periods_from(&truth, true);
        let mut corrupted = 0;
        for (i, t) in truth.iter().enumerate() {
            let f = t / TAU - (t / TAU).floor();
            if f < 0.02 {
                periods.k[i] -= 1;
                corrupted += 1;
            } else if f > 0.98 {
                periods.k[i] += 1;
                corrupted += 1;
            }
        }
        assert!(corrupted > 10);
        let abs = unwrap_absolute(&wrapped, &periods).unwrap();
        for (a, t) in abs.values.iter().zip(&truth) {
            assert!((a - t).abs() < 1e-9);
        }
        for w in abs.values.windows(2) {
            assert!((w[1] - w[0]).abs() < 0.2);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let (wrapped, truth) = ramp(10, 18.0, 0.0);
        let mut periods = periods_from(&truth, true);
        periods.width = 9;
        assert!(matches!(unwrap_absolute(&wrapped, &periods), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn centerline_flat_rows_linear_and_equal_to_truth() {
        let (w, h, pitch) = (300usize, 4usize, 18.0);
        let xc = 150.0;
        let truth = |x: usize| TAU * (x as f64 + 5.0) / pitch;
        let wrapped = PhaseMap {
            width: w,
            height: h,
            values: (0..w * h).map(|i| wrap_angle(truth(i % w))).collect(),
            mask: vec![true; w * h],
            kind: PhaseKind::Wrapped,
        };
        // The projector stripe at column xc + 5 lands on camera column 150.
        let line = GrayImage::from_fn(w, h, |x, _| if x == 150 { 220 } else { 2 });
        let abs = unwrap_centerline(&wrapped, &line, TAU * (xc + 5.0) / pitch).unwrap();
        for y in 0..h {
            for x in 0..w {
                assert!((abs.get(x, y).unwrap() - truth(x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn centerline_missing_everywhere_is_error() {
        let wrapped = PhaseMap {
            width: 10,
            height: 3,
            values: vec![0.0; 30],
            mask: vec![true; 30],
            kind: PhaseKind::Wrapped,
        };
        let dark = GrayImage::filled(10, 3, 1);
        assert!(matches!(unwrap_centerline(&wrapped, &dark, 0.0), Err(Error::CenterlineNotFound)));
    }

    #[test]
    fn rows_without_centerline_are_masked() {
        let w = 40;
        let wrapped = PhaseMap {
            width: w,
            height: 2,
            values: (0..2 * w).map(|i| wrap_angle(0.3 * (i % w) as f64)).collect(),
            mask: vec![true; 2 * w],
            kind: PhaseKind::Wrapped,
        };
        let line = GrayImage::from_fn(w, 2, |x, y| if y == 0 && x == 20 { 200 } else { 0 });
        let abs = unwrap_centerline(&wrapped, &line, 6.0).unwrap();
        assert!(abs.get(5, 0).is_some());
        assert!(abs.get(5, 1).is_none());
    }

    #[test]
    fn centerline_column_pass_reaches_cut_runs() {
        // Row 0 has a gap separating the stripe from the right part; row 1 is
        // intact and connects them.
        let w = 30;
        let truth = |x: usize| 0.4 * x as f64 + 1.0;
        let mut mask = vec![true; 2 * w];
        mask[10] = false;
        let wrapped = PhaseMap {
            width: w,
            height: 2,
            values: (0..2 * w).map(|i| wrap_angle(truth(i % w))).collect(),
            mask,
            kind: PhaseKind::Wrapped,
        };
        let line = GrayImage::from_fn(w, 2, |x, _| if x == 3 { 200 } else { 0 });
        let abs = unwrap_centerline(&wrapped, &line, truth(3)).unwrap();
        for x in 11..w {
            assert!((abs.get(x, 0).unwrap() - truth(x)).abs() < 1e-9);
        }
        assert!(abs.get(10, 0).is_none());
    }
}
