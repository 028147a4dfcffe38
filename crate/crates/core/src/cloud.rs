//! Point clouds with optional per-point modality tags, and PLY I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    StructuredLight,
    Ultrasound,
}

impl Source {
    fn code(self) -> u8 {
        match self {
            Source::StructuredLight => 0,
            Source::Ultrasound => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Source::StructuredLight),
            1 => Ok(Source::Ultrasound),
            _ => Err(Error::Parse(format!("unknown source tag {c}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    /// Parallel to `points` when present.
    pub sources: Option<Vec<Source>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Point3,
    pub max: Point3,
}

impl BoundingBox {
    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points, sources: None }
    }

    pub fn tagged(points: Vec<Point3>, source: Source) -> Self {
        let sources = Some(vec![source; points.len()]);
        Self { points, sources }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let first = *self.points.first()?;
        let (mut min, mut max) = (first, first);
        for p in &self.points {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Some(BoundingBox { min, max })
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |a, p| a + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }

    /// Points carrying the given tag (all points when untagged and `source`
    /// is structured light).
    pub fn filter_source(&self, source: Source) -> Vec<Point3> {
        match &self.sources {
            Some(tags) => self
                .points
                .iter()
                .zip(tags)
                .filter(|(_, t)| **t == source)
                .map(|(p, _)| *p)
                .collect(),
            None if source == Source::StructuredLight => self.points.clone(),
            None => Vec::new(),
        }
    }

    /// Concatenates two clouds, tagging every point.
    pub fn merge(a: &PointCloud, a_src: Source, b: &PointCloud, b_src: Source) -> PointCloud {
        let mut points = a.points.clone();
        points.extend_from_slice(&b.points);
        let mut tags = vec![a_src; a.len()];
        tags.extend(std::iter::repeat_n(b_src, b.len()));
        PointCloud {
            points,
            sources: Some(tags),
        }
    }

    pub fn to_ply_ascii(&self) -> String {
        let mut s = String::new();
        s.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(s, "element vertex {}", self.points.len());
        s.push_str("property double x\nproperty double y\nproperty double z\n");
        if self.sources.is_some() {
            s.push_str("property uchar source\n");
        }
        s.push_str("end_header\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
            if let Some(tags) = &self.sources {
                let _ = write!(s, " {}", tags[i].code());
            }
            s.push('\n');
        }
        s
    }

    pub fn to_ply_binary(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str("ply\nformat binary_little_endian 1.0\n");
        let _ = writeln!(header, "element vertex {}", self.points.len());
        header.push_str("property double x\nproperty double y\nproperty double z\n");
        if self.sources.is_some() {
            header.push_str("property uchar source\n");
        }
        header.push_str("end_header\n");
        let mut out = header.into_bytes();
        for (i, p) in self.points.iter().enumerate() {
            for v in [p.x, p.y, p.z] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if let Some(tags) = &self.sources {
                out.push(tags[i].code());
            }
        }
        out
    }

    pub fn write_ply(&self, path: impl AsRef<Path>, binary: bool) -> Result<()> {
        if binary {
            fs::write(path, self.to_ply_binary())?;
        } else {
            fs::write(path, self.to_ply_ascii())?;
        }
        Ok(())
    }

    pub fn read_ply(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::parse_ply(&bytes)
    }

    /// Parses ASCII or binary little-endian PLY with `x y z [source]` vertices.
    pub fn parse_ply(bytes: &[u8]) -> Result<Self> {
        let marker = b"end_header\n";
        let end = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| Error::Parse("PLY header not terminated".into()))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|e| Error::Parse(e.to_string()))?;
        let body = &bytes[end + marker.len()..];
        let mut lines = header.lines();
        if lines.next() != Some("ply") {
            return Err(Error::Parse("missing ply magic".into()));
        }
        let mut format = "";
        let mut count = 0usize;
        let mut props: Vec<(String, String)> = Vec::new();
        for line in lines {
            let tok: Vec<&str> = line.split_whitespace().collect();
            match tok.as_slice() {
                ["format", f, _] => format = if *f == "ascii" { "ascii" } else { "binary" },
                ["element", "vertex", n] => {
                    count = n.parse().map_err(|_| Error::Parse("bad vertex count".into()))?
                }
                ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
                _ => {}
            }
        }
        let names: Vec<&str> = props.iter().map(|(_, n)| n.as_str()).collect();
        if names.len() < 3 || names[..3] != ["x", "y", "z"] {
            return Err(Error::Parse("PLY vertices must start with x y z".into()));
        }
        let has_source = names.get(3) == Some(&"source");
        let mut points = Vec::with_capacity(count);
        let mut tags = Vec::new();
        if format == "ascii" {
            let text = std::str::from_utf8(body).map_err(|e| Error::Parse(e.to_string()))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()).take(count) {
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::Parse(format!("bad PLY value '{t}'"))))
                    .collect::<Result<_>>()?;
                if vals.len() < 3 {
                    return Err(Error::Parse("short PLY vertex line".into()));
                }
                points.push(Point3::new(vals[0], vals[1], vals[2]));
                if has_source {
                    tags.push(Source::from_code(*vals.get(3).unwrap_or(&0.0) as u8)?);
                }
            }
        } else {
            if props[..3].iter().any(|(t, _)| t != "double") {
                return Err(Error::Parse("binary PLY expects double coordinates".into()));
            }
            let stride = 24 + usize::from(has_source);
            if body.len() < stride * count {
                return Err(Error::Parse("truncated binary PLY".into()));
            }
            for i in 0..count {
                let rec = &body[i * stride..(i + 1) * stride];
                let f = |k: usize| f64::from_le_bytes(rec[8 * k..8 * k + 8].try_into().unwrap());
                points.push(Point3::new(f(0), f(1), f(2)));
                if has_source {
                    tags.push(Source::from_code(rec[24])?);
                }
            }
        }
        if points.len() != count {
            return Err(Error::Parse(format!("expected {count} vertices, found {}", points.len())));
        }
        Ok(PointCloud {
            points,
            sources: has_source.then_some(tags),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> PointCloud {
        PointCloud::merge(
            &PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0), Point3::new(-0.5, 1e-7, 700.25)]),
            Source::StructuredLight,
            &PointCloud::new(vec![Point3::new(4.0, 5.0, 6.125)]),
            Source::Ultrasound,
        )
    }

    #[test]
    fn ply_ascii_and_binary_round_trip() {
        let c = sample();
        assert_eq!(PointCloud::parse_ply(c.to_ply_ascii().as_bytes()).unwrap(), c);
        assert_eq!(PointCloud::parse_ply(&c.to_ply_binary()).unwrap(), c);
        let untagged = PointCloud::new(c.points.clone());
        assert_eq!(PointCloud::parse_ply(untagged.to_ply_ascii().as_bytes()).unwrap(), untagged);
    }

    #[test]
    fn empty_cloud_writes_valid_ply() {
        let c = PointCloud::default();
        let back = PointCloud::parse_ply(c.to_ply_ascii().as_bytes()).unwrap();
        assert!(back.is_empty());
        assert!(c.bounding_box().is_none());
    }

    #[test]
    fn filter_and_bbox() {
        let c = sample();
        assert_eq!(c.filter_source(Source::Ultrasound), vec![Point3::new(4.0, 5.0, 6.125)]);
        let bb = c.bounding_box().unwrap();
        assert_eq!(bb.min, Point3::new(-0.5, 1e-7, 3.0));
        assert_eq!(bb.max.z, 700.25);
    }
}
