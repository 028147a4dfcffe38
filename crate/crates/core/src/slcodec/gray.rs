use crate::error::{Error, Result};
use crate::image::GrayImage;

use super::patterns::gray_decode;

/// Per-pixel fringe period indices decoded from Gray-code captures.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodMap {
    pub width: usize,
    pub height: usize,
    /// Period index `k = floor(c / p)`.
    pub k: Vec<i32>,
    /// Half-period shifted index `floor(c / p + 1/2)`, present when the
    /// complementary plane was captured.
    pub k_shifted: Option<Vec<i32>>,
    pub mask: Vec<bool>,
}

/// Decodes captured Gray-code planes (most significant first) using per-pixel
/// thresholds `(white + black) / 2`. Pixels with `white <= black` are masked.
pub fn decode_gray(
    planes: &[GrayImage],
    complementary: Option<&GrayImage>,
    white: &GrayImage,
    black: &GrayImage,
) -> Result<PeriodMap> {
    if planes.is_empty() {
        return Err(Error::InvalidParameter("gray decoding needs at least one bit plane".into()));
    }
    if planes.len() > 30 {
        return Err(Error::InvalidParameter("too many gray-code planes".into()));
    }
    let all = planes.iter().chain(complementary).chain([white, black]);
    if all.clone().any(|p| !p.same_size(white)) {
        return Err(Error::DimensionMismatch("gray-code captures differ in size".into()));
    }
    let (w, h) = (white.width, white.height);
    let n = w * h;
    let mut k = vec![0i32; n];
    let mut k_shifted = complementary.map(|_| vec![0i32; n]);
    let mut mask = vec![false; n];
    for i in 0..n {
        let (wv, bv) = (white.data[i] as f64, black.data[i] as f64);
        if wv <= bv {
            continue;
        }
        let thr = 0.5 * (wv + bv);
        let code = planes
            .iter()
            .fold(0u32, |acc, p| (acc << 1) | u32::from(p.data[i] as f64 > thr));
        k[i] = gray_decode(code) as i32;
        if let (Some(c), Some(ks)) = (complementary, k_shifted.as_mut()) {
            let fine = (code << 1) | u32::from(c.data[i] as f64 > thr);
            ks[i] = gray_decode(fine).div_ceil(2) as i32;
        }
        mask[i] = true;
    }
    Ok(PeriodMap {
        width: w,
        height: h,
        k,
        k_shifted,
        mask,
    })
}
