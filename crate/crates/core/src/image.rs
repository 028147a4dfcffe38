//! 8-bit grayscale images and binary PGM (P5) I/O.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major pixels.
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0)
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Rounds and clamps float intensities to 8 bits.
    pub fn from_f64(width: usize, height: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            data: values.iter().map(|&v| quantize(v)).collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_size(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io_at(path, e))?;
        f.write_all(&self.to_pgm_bytes())?;
        Ok(())
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::io_at(path, e))?;
        Self::parse_pgm(BufReader::new(f))
    }

    pub fn parse_pgm<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = Vec::new();
        // magic, width, height, maxval separated by whitespace; '#' comments allowed
        while header.len() < 4 {
            let mut tok = Vec::new();
            loop {
                let mut b = [0u8; 1];
                if r.read(&mut b)? == 0 {
                    return Err(Error::Parse("truncated PGM header".into()));
                }
                match b[0] {
                    b'#' if tok.is_empty() => {
                        let mut skip = Vec::new();
                        r.read_until(b'\n', &mut skip)?;
                    }
                    c if c.is_ascii_whitespace() => {
                        if !tok.is_empty() {
                            break;
                        }
                    }
                    c => tok.push(c),
                }
            }
            header.push(String::from_utf8_lossy(&tok).into_owned());
        }
        if header[0] != "P5" {
            return Err(Error::Parse(format!("unsupported PGM magic {}", header[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("PGM header: {e}")));
        let (width, height, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
        if maxval != 255 {
            return Err(Error::Parse(format!("only 8-bit PGM supported (maxval {maxval})")));
        }
        let mut data = vec![0u8; width * height];
        r.read_exact(&mut data)?;
        Ok(Self { width, height, data })
    }

    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.data.len().max(1) as f64;
        let mean = self.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centres on integers).
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        bilinear(self.width, self.height, x, y, |i| self.data[i] as f64)
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Bilinear interpolation over a row-major grid accessed through `at`.
pub fn bilinear(width: usize, height: usize, x: f64, y: f64, at: impl Fn(usize) -> f64) -> Option<f64> {
    if !(x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64) {
        return None;
    }
    let x0 = (x.floor() as usize).min(width.saturating_sub(2));
    let y0 = (y.floor() as usize).min(height.saturating_sub(2));
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let v00 = at(y0 * width + x0);
    let v10 = at(y0 * width + x1);
    let v01 = at(y1 * width + x0);
    let v11 = at(y1 * width + x1);
    Some((v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage::from_fn(7, 3, |x, y| (x * 30 + y) as u8);
        let bytes = img.to_pgm_bytes();
        assert!(bytes.starts_with(b"P5\n7 3\n255\n"));
        let back = GrayImage::parse_pgm(&bytes[..]).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_header_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[4, 200]);
        let img = GrayImage::parse_pgm(&bytes[..]).unwrap();
        assert_eq!(img.data, vec![4, 200]);
    }

    #[test]
    fn rejects_ascii_pgm_and_truncation() {
        assert!(GrayImage::parse_pgm(&b"P2\n1 1\n255\n0"[..]).is_err());
        assert!(GrayImage::parse_pgm(&b"P5\n4 4\n255\n\x00"[..]).is_err());
    }

    #[test]
    fn bilinear_samples() {
        let img = GrayImage::from_fn(3, 2, |x, y| (x * 10 + y * 100) as u8);
        assert_eq!(img.sample(0.5, 0.5), Some(55.0));
        assert_eq!(img.sample(2.0, 1.0), Some(120.0));
        assert_eq!(img.sample(2.1, 0.0), None);
    }
}
