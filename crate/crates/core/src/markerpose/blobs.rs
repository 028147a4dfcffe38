use crate::geometry::Point2;
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobParams {
    /// Threshold is `mean − k·σ` of the whole image.
    pub threshold_sigmas: f64,
    pub min_area: usize,
    pub max_area: usize,
    /// Area over the area of the moment-equivalent ellipse.
    pub min_fill: f64,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            threshold_sigmas: 2.0,
            min_area: 50,
            max_area: 20000,
            min_fill: 0.8,
        }
    }
}

/// Dark connected region.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    /// Row-major pixel indices.
    pub pixels: Vec<usize>,
    pub centroid: Point2,
    /// Inclusive `(x0, y0, x1, y1)`.
    pub bbox: (usize, usize, usize, usize),
    pub fill_ratio: f64,
}

impl Blob {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

pub fn detect_blobs(image: &GrayImage) -> Vec<Blob> {
    detect_blobs_with(image, &BlobParams::default())
}

/// 8-connected components below the adaptive threshold, filtered by area and
/// ellipse-likeness. Components touching the border are discarded.
pub fn detect_blobs_with(image: &GrayImage, params: &BlobParams) -> Vec<Blob> {
    let (w, h) = (image.width, image.height);
    if w == 0 || h == 0 {
        return Vec::new();
    }
    let (mean, std) = image.mean_std();
    let threshold = mean - params.threshold_sigmas * std;
    let dark: Vec<bool> = image.data.iter().map(|&v| (v as f64) < threshold).collect();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !dark[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        let mut touches_border = false;
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            if x == 0 || y == 0 || x == w as isize - 1 || y == h as isize - 1 {
                touches_border = true;
            }
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if dark[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if touches_border || pixels.len() < params.min_area || pixels.len() > params.max_area {
            continue;
        }
        pixels.sort_unstable();
        let blob = describe(pixels, w);
        if blob.fill_ratio > params.min_fill {
            out.push(blob);
        }
    }
    out
}

fn describe(pixels: Vec<usize>, w: usize) -> Blob {
    let n = pixels.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut bbox = (usize::MAX, usize::MAX, 0, 0);
    for &i in &pixels {
        let (x, y) = (i % w, i / w);
        sx += x as f64;
        sy += y as f64;
        bbox = (bbox.0.min(x), bbox.1.min(y), bbox.2.max(x), bbox.3.max(y));
    }
    let (cx, cy) = (sx / n, sy / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &i in &pixels {
        let dx = (i % w) as f64 - cx;
        let dy = (i / w) as f64 - cy;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // Pixel-area correction (+1/12) keeps small discs near a ratio of one.
    let (sxx, syy, sxy) = (sxx / n + 1.0 / 12.0, syy / n + 1.0 / 12.0, sxy / n);
    let det = (sxx * syy - sxy * sxy).max(0.0);
    let ellipse_area = 4.0 * std::f64::consts::PI * det.sqrt();
    let fill_ratio = if ellipse_area > 0.0 { n / ellipse_area } else { 0.0 };
    Blob {
        pixels,
        centroid: Point2::new(cx, cy),
        bbox,
        fill_ratio,
    }
}

/// Sub-pixel points on the iso-contour halfway between the blob interior and
/// its surroundings, from linear interpolation along rows and columns.
pub fn edge_points(image: &GrayImage, blob: &Blob) -> Vec<Point2> {
    let (w, h) = (image.width, image.height);
    let margin = 4usize;
    let x0 = blob.bbox.0.saturating_sub(margin);
    let y0 = blob.bbox.1.saturating_sub(margin);
    let x1 = (blob.bbox.2 + margin).min(w - 1);
    let y1 = (blob.bbox.3 + margin).min(h - 1);
    let (rw, rh) = (x1 - x0 + 1, y1 - y0 + 1);
    let local = |i: usize| (i % w - x0) + (i / w - y0) * rw;

    let mut inside = vec![false; rw * rh];
    for &i in &blob.pixels {
        inside[local(i)] = true;
    }
    // Two-pixel dilation of the blob: the band where its edge can lie.
    let dilate = |mask: &[bool]| {
        let mut out = mask.to_vec();
        for y in 0..rh {
            for x in 0..rw {
                if mask[y * rw + x] {
                    continue;
                }
                'n: for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (nx, ny) = (x as isize + dx, y as isize + dy);
                        if nx >= 0 && ny >= 0 && (nx as usize) < rw && (ny as usize) < rh && mask[ny as usize * rw + nx as usize] {
                            out[y * rw + x] = true;
                            break 'n;
                        }
                    }
                }
            }
        }
        out
    };
    let band = dilate(&dilate(&inside));

    let mut values: Vec<u8> = blob.pixels.iter().map(|&i| image.data[i]).collect();
    values.sort_unstable();
    let dark_half = &values[..values.len().div_ceil(2)];
    let inner = dark_half.iter().map(|&v| v as f64).sum::<f64>() / dark_half.len() as f64;
    let (mut outer_sum, mut outer_n) = (0.0, 0usize);
    for y in 0..rh {
        for x in 0..rw {
            if !band[y * rw + x] {
                outer_sum += image.get(x0 + x, y0 + y) as f64;
                outer_n += 1;
            }
        }
    }
    if outer_n == 0 {
        return Vec::new();
    }
    let level = 0.5 * (inner + outer_sum / outer_n as f64);

    let mut pts = Vec::new();
    let mut crossing = |a: f64, b: f64, pa: (f64, f64), pb: (f64, f64)| {
        if (a < level) != (b < level) && a != b {
            let t = (level - a) / (b - a);
            pts.push(Point2::new(pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1)));
        }
    };
    for y in 0..rh {
        for x in 0..rw {
            let here = band[y * rw + x];
            let v = image.get(x0 + x, y0 + y) as f64;
            let p = ((x0 + x) as f64, (y0 + y) as f64);
            if x + 1 < rw && (here || band[y * rw + x + 1]) {
                crossing(v, image.get(x0 + x + 1, y0 + y) as f64, p, (p.0 + 1.0, p.1));
            }
            if y + 1 < rh && (here || band[(y + 1) * rw + x]) {
                crossing(v, image.get(x0 + x, y0 + y + 1) as f64, p, (p.0, p.1 + 1.0));
            }
        }
    }
    pts
}
