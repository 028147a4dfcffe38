use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::image::{bilinear, GrayImage};

/// 8-connected regions of pixels with `values[i] > threshold`.
fn regions(values: &[f64], w: usize, h: usize, threshold: f64) -> Vec<Vec<usize>> {
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    for start in 0..w * h {
        if seen[start] || values[start] <= threshold {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut region = Vec::new();
        while let Some(i) = stack.pop() {
            region.push(i);
            let (x, y) = (i % w, i / w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if !seen[j] && values[j] > threshold {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(region);
    }
    out
}

/// Background-subtracted centroid of the strongest 8-connected region of the
/// 3x3-smoothed image. The region is cut at 30% of the way from the median
/// background to the maximum. "Strongest" is the largest summed echo, so an
/// isolated bright speckle does not beat the wire.
pub fn segment_cross_point(image: &GrayImage) -> Result<Point2> {
    let w = image.width;
    if image.is_empty() {
        return Err(Error::NoBlob);
    }
    let values = box3(image);
    let background = median(&values);
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    if max - background < MIN_RING_CONTRAST {
        return Err(Error::NoBlob);
    }
    let threshold = background + 0.3 * (max - background);
    let mut best: Option<(f64, f64, f64)> = None;
    for region in regions(&values, w, image.height, threshold) {
        let (mut sum, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for i in region {
            let v = values[i] - background;
            sum += v;
            sx += v * (i % w) as f64;
            sy += v * (i / w) as f64;
        }
        if best.is_none_or(|b| sum > b.0) {
            best = Some((sum, sx, sy));
        }
    }
    let (sum, sx, sy) = best.ok_or(Error::NoBlob)?;
    Ok(Point2::new(sx / sum, sy / sum))
}

/// Regions smaller than this are treated as speckle by [`segment_rings`].
pub const MIN_RING_AREA: usize = 20;
/// Smallest echo height above the median background (gray levels).
pub const MIN_RING_CONTRAST: f64 = 10.0;
const RING_RAYS: usize = 90;
const RAY_STEP: f64 = 0.25;

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    let mid = sorted.len() / 2;
    *sorted.select_nth_unstable_by(mid, f64::total_cmp).1
}

fn box3(image: &GrayImage) -> Vec<f64> {
    let (w, h) = (image.width, image.height);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut n) = (0.0, 0.0);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    s += image.data[ny * w + nx] as f64;
                    n += 1.0;
                }
            }
            out[y * w + x] = s / n;
        }
    }
    out
}

/// Ridge points of ring-shaped echoes (cross-sections of tubes and spheres).
///
/// The image is smoothed with a 3×3 box; every region above the midpoint
/// between the median background and the smoothed maximum is probed with
/// radial profiles from its centroid; each profile contributes the centroid
/// of its run above threshold.
pub fn segment_rings(image: &GrayImage) -> Vec<Point2> {
    let (w, h) = (image.width, image.height);
    if image.is_empty() {
        return Vec::new();
    }
    let smooth = box3(image);
    let max = smooth.iter().copied().fold(0.0, f64::max);
    let background = median(&smooth);
    if max - background < MIN_RING_CONTRAST {
        return Vec::new();
    }
    let threshold = background + 0.5 * (max - background);
    let at = |x: f64, y: f64| bilinear(w, h, x, y, |i| smooth[i]);
    let mut out = Vec::new();
    for region in regions(&smooth, w, h, threshold) {
        if region.len() < MIN_RING_AREA {
            continue;
        }
        let n = region.len() as f64;
        let cx = region.iter().map(|&i| (i % w) as f64).sum::<f64>() / n;
        let cy = region.iter().map(|&i| (i / w) as f64).sum::<f64>() / n;
        let reach = region
            .iter()
            .map(|&i| ((i % w) as f64 - cx).hypot((i / w) as f64 - cy))
            .fold(0.0, f64::max)
            + 4.0;
        for k in 0..RING_RAYS {
            let a = std::f64::consts::TAU * k as f64 / RING_RAYS as f64;
            let (dx, dy) = (a.cos(), a.sin());
            let profile: Vec<f64> = (0..)
                .map(|s| s as f64 * RAY_STEP)
                .take_while(|&t| t <= reach)
                .map_while(|t| at(cx + t * dx, cy + t * dy))
                .collect();
            let Some((m, &peak)) = profile.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) else {
                continue;
            };
            if peak <= threshold {
                continue;
            }
            // Centroid of the run above threshold around the maximum.
            let (mut lo, mut hi) = (m, m);
            while lo > 0 && profile[lo - 1] > threshold {
                lo -= 1;
            }
            while hi + 1 < profile.len() && profile[hi + 1] > threshold {
                hi += 1;
            }
            let (mut sw, mut st) = (0.0, 0.0);
            for (i, v) in profile.iter().enumerate().take(hi + 1).skip(lo) {
                sw += v - threshold;
                st += (v - threshold) * i as f64 * RAY_STEP;
            }
            let t = st / sw;
            out.push(Point2::new(cx + t * dx, cy + t * dy));
        }
    }
    out
}
