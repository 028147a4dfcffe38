use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::image::GrayImage;
use crate::markerpose::{BlobEllipseDetector, CenterDetector};

use super::board::CalibrationBoard;
use super::zhang::estimate_homography;

fn cross(o: &Point2, a: &Point2, b: &Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull with positive turning (monotone chain), dropping vertices
/// within `tol` of the line through their neighbours.
fn hull(points: &[Point2], tol: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x).then(points[a].y.total_cmp(&points[b].y)));
    let mut h: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for pass in 0..2 {
        let start = h.len();
        let seq: Vec<usize> = if pass == 0 { idx.clone() } else { idx.iter().rev().copied().collect() };
        for &i in &seq {
            while h.len() >= start + 2 && cross(&points[h[h.len() - 2]], &points[h[h.len() - 1]], &points[i]) <= 0.0 {
                h.pop();
            }
            h.push(i);
        }
        h.pop();
    }
    loop {
        let n = h.len();
        if n <= 3 {
            return h;
        }
        let flat = (0..n).find(|&k| {
            let (a, b, c) = (&points[h[(k + n - 1) % n]], &points[h[k]], &points[h[(k + 1) % n]]);
            cross(a, b, c).abs() / (c - a).norm() < tol
        });
        match flat {
            Some(k) => {
                h.remove(k);
            }
            None => return h,
        }
    }
}

fn project_h(h: &nalgebra::Matrix3<f64>, p: &Point2) -> Point2 {
    let v = h * nalgebra::Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

/// Nearest detection for every predicted board point; `None` unless the
/// assignment is one-to-one.
fn associate(h: &nalgebra::Matrix3<f64>, planar: &[Point2], found: &[Point2]) -> Option<(Vec<usize>, f64)> {
    let mut used = vec![false; found.len()];
    let mut out = Vec::with_capacity(planar.len());
    let mut worst = 0.0f64;
    for p in planar {
        let q = project_h(h, p);
        let (k, d) = found
            .iter()
            .enumerate()
            .map(|(k, f)| (k, (f - q).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        if used[k] {
            return None;
        }
        used[k] = true;
        worst = worst.max(d);
        out.push(k);
    }
    Some((out, worst))
}

/// Detects and labels every circle of `board` in `image`.
///
/// The outline of an asymmetric grid with an odd number of rows is a hexagon.
/// Each orientation-preserving match of the image hexagon to the board
/// hexagon gives a homography; the one whose predicted grid lands on the
/// detections is kept and refined with all points. The board must be seen
/// from the side its z axis points away from, as in every calibration view.
pub fn detect_board(image: &GrayImage, board: &CalibrationBoard) -> Result<Vec<(usize, Point2)>> {
    detect_board_with(image, board, &BlobEllipseDetector::default())
}

pub fn detect_board_with(
    image: &GrayImage,
    board: &CalibrationBoard,
    detector: &dyn CenterDetector,
) -> Result<Vec<(usize, Point2)>> {
    board.validate()?;
    if board.rows.is_multiple_of(2) {
        return Err(Error::InvalidParameter("board detection needs an odd number of rows".into()));
    }
    let found: Vec<Point2> = detector.detect(image).iter().map(|c| c.center).collect();
    if found.len() != board.len() {
        return Err(Error::Degenerate(format!(
            "found {} board circles, expected {}",
            found.len(),
            board.len()
        )));
    }
    let planar = board.planar_points();
    let spacing_px = found
        .iter()
        .enumerate()
        .map(|(i, a)| {
            found
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| (a - b).norm())
                .fold(f64::MAX, f64::min)
        })
        .fold(f64::MAX, f64::min);
    let model = hull(&planar, 0.25 * board.spacing);
    let seen = hull(&found, 0.25 * spacing_px);
    if model.len() != seen.len() {
        return Err(Error::Degenerate(format!(
            "board outline has {} corners, expected {}",
            seen.len(),
            model.len()
        )));
    }
    let n = model.len();
    let b: Vec<Point2> = model.iter().map(|&i| planar[i]).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for shift in 0..n {
        let im: Vec<Point2> = (0..n).map(|k| found[seen[(k + shift) % n]]).collect();
        let Ok(h) = estimate_homography(&b, &im) else { continue };
        let Some(mut assoc) = associate(&h, &planar, &found) else { continue };
        // Refit with every point until the labelling is stable.
        for _ in 0..3 {
            let im_all: Vec<Point2> = assoc.0.iter().map(|&k| found[k]).collect();
            let Ok(h) = estimate_homography(&planar, &im_all) else { break };
            match associate(&h, &planar, &found) {
                Some(next) if next.0 == assoc.0 => {
                    assoc = next;
                    break;
                }
                Some(next) => assoc = next,
                None => break,
            }
        }
        if best.as_ref().is_none_or(|b| assoc.1 < b.1) {
            best = Some(assoc);
        }
    }
    let (labels, worst) = best.ok_or_else(|| Error::Degenerate("board grid could not be labelled".into()))?;
    if worst > 0.25 * spacing_px {
        return Err(Error::Degenerate(format!("board grid fit is off by {worst:.2} px")));
    }
    Ok(labels.iter().enumerate().map(|(i, &k)| (i, found[k])).collect())
}
