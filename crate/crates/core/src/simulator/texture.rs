use nalgebra::Vector3;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::fringe::row_rng;
use super::scene::Texture;
use crate::calib::CalibrationBoard;
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Point2, Point3, RigidTransform};
use crate::image::{quantize, GrayImage};
use crate::markerpose::MarkerGeometry;

const SUPERSAMPLE: usize = 8;

/// A printed rectangle `[min, max]` (plane coordinates, mm) lying in the
/// z = 0 plane of `pose` (plane -> world).
#[derive(Debug, Clone, PartialEq)]
pub struct PlanePrint {
    pub pose: RigidTransform,
    pub texture: Texture,
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneRenderOptions {
    /// Gray level of albedo 1 under full light.
    pub exposure: f64,
    /// Illumination factor (low light < 1).
    pub gain: f64,
    /// Albedo seen where rays miss the print.
    pub surround: f64,
    /// Horizontal motion blur length (px); 0 or 1 disables it.
    pub blur_px: usize,
    pub pixel_sigma: f64,
    pub seed: u64,
    /// Noise stream index, so several views from one seed stay independent.
    pub stream: u64,
}

impl Default for PlaneRenderOptions {
    fn default() -> Self {
        Self {
            exposure: 255.0,
            gain: 1.0,
            surround: 0.5,
            blur_px: 0,
            pixel_sigma: 0.0,
            seed: 0,
            stream: 0,
        }
    }
}

impl PlanePrint {
    /// Plane coordinates where a camera ray meets the plane.
    fn hit(&self, inv: &RigidTransform, origin: &Point3, dir: &Vector3<f64>) -> Option<[f64; 2]> {
        let o = inv.apply(origin);
        let d = inv.apply_vector(dir);
        if d.z.abs() < 1e-12 {
            return None;
        }
        let t = -o.z / d.z;
        (t > 0.0).then(|| [o.x + t * d.x, o.y + t * d.y])
    }

    fn albedo(&self, q: Option<[f64; 2]>, surround: f64) -> f64 {
        match q {
            Some([x, y]) if x >= self.min[0] && x <= self.max[0] && y >= self.min[1] && y <= self.max[1] => {
                self.texture.albedo(x, y)
            }
            _ => surround,
        }
    }

    /// Distance (mm) from `q` to the nearest albedo discontinuity.
    fn edge_distance(&self, q: [f64; 2]) -> f64 {
        let [x, y] = q;
        let border = (x - self.min[0])
            .abs()
            .min((x - self.max[0]).abs())
            .min((y - self.min[1]).abs())
            .min((y - self.max[1]).abs());
        match &self.texture {
            Texture::Uniform { .. } => border,
            Texture::Discs { centers, radius, .. } => centers
                .iter()
                .map(|c| ((x - c[0]).hypot(y - c[1]) - radius).abs())
                .fold(border, f64::min),
        }
    }
}

fn pixel_value(print: &PlanePrint, inv: &RigidTransform, cam: &CameraModel, x: f64, y: f64, surround: f64) -> f64 {
    let ray = |u: f64, v: f64| {
        let (o, d) = cam.ray(&Point2::new(u, v));
        print.hit(inv, &o, &d)
    };
    let center = ray(x, y);
    let corners = [ray(x - 0.5, y - 0.5), ray(x + 0.5, y - 0.5), ray(x - 0.5, y + 0.5), ray(x + 0.5, y + 0.5)];
    let uniform = match center {
        Some(c) if corners.iter().all(|k| k.is_some()) => {
            let footprint = corners
                .iter()
                .flatten()
                .map(|k| (k[0] - c[0]).hypot(k[1] - c[1]))
                .fold(0.0, f64::max);
            print.edge_distance(c) > 1.5 * footprint
        }
        None if corners.iter().all(|k| k.is_none()) => true,
        _ => false,
    };
    if uniform {
        return print.albedo(center, surround);
    }
    let n = SUPERSAMPLE as f64;
    let mut sum = 0.0;
    for i in 0..SUPERSAMPLE {
        for j in 0..SUPERSAMPLE {
            let u = x - 0.5 + (j as f64 + 0.5) / n;
            let v = y - 0.5 + (i as f64 + 0.5) / n;
            sum += print.albedo(ray(u, v), surround);
        }
    }
    sum / (n * n)
}

/// Symmetric horizontal box filter of `len` px. Even lengths use half
/// weights at both ends so the filter does not shift features.
fn box_blur_rows(values: &mut [f64], width: usize, len: usize) {
    if len <= 1 {
        return;
    }
    let half = len / 2;
    let weights: Vec<f64> = if len % 2 == 1 {
        vec![1.0; len]
    } else {
        (0..=len).map(|k| if k == 0 || k == len { 0.5 } else { 1.0 }).collect()
    };
    let total: f64 = weights.iter().sum();
    values.par_chunks_mut(width).for_each(|row| {
        let src = row.to_vec();
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, w) in weights.iter().enumerate() {
                let xi = (x as isize + k as isize - half as isize).clamp(0, width as isize - 1) as usize;
                acc += w * src[xi];
            }
            *out = acc / total;
        }
    });
}

/// Anti-aliased render of a planar print: exact albedo away from edges,
/// 8×8 supersampling on pixels an edge passes near.
pub fn render_plane_view(cam: &CameraModel, print: &PlanePrint, options: &PlaneRenderOptions) -> GrayImage {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let inv = print.pose.inverse();
    let scale = options.exposure * options.gain;
    // Pixels outside the projected print see only the surround.
    let corners = [
        [print.min[0], print.min[1]],
        [print.max[0], print.min[1]],
        [print.min[0], print.max[1]],
        [print.max[0], print.max[1]],
    ]
    .map(|[x, y]| cam.project(&print.pose.apply(&Point3::new(x, y, 0.0))).ok());
    let bbox = corners.iter().all(|c| c.is_some()).then(|| {
        let c = corners.map(|c| c.expect("checked"));
        let lo = |f: fn(&Point2) -> f64| c.iter().map(f).fold(f64::MAX, f64::min) - 2.0;
        let hi = |f: fn(&Point2) -> f64| c.iter().map(f).fold(f64::MIN, f64::max) + 2.0;
        [lo(|p| p.x), lo(|p| p.y), hi(|p| p.x), hi(|p| p.y)]
    });
    let mut values: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let inv = &inv;
            (0..w).map(move |x| {
                let (xf, yf) = (x as f64, y as f64);
                if let Some([x0, y0, x1, y1]) = bbox {
                    if xf < x0 || xf > x1 || yf < y0 || yf > y1 {
                        return scale * options.surround;
                    }
                }
                scale * pixel_value(print, inv, cam, xf, yf, options.surround)
            })
        })
        .collect();
    box_blur_rows(&mut values, w, options.blur_px);
    let noise = (options.pixel_sigma > 0.0).then(|| Normal::new(0.0, options.pixel_sigma).expect("finite sigma"));
    let mut data = vec![0u8; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut rng = row_rng(options.seed, options.stream, y as u64);
        for (x, out) in row.iter_mut().enumerate() {
            let mut v = values[y * w + x];
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            *out = quantize(v);
        }
    });
    GrayImage { width: w, height: h, data }
}

/// Board print: dark circles (albedo 0.15) on white (0.9) with one spacing
/// of margin around the grid.
pub fn board_texture(board: &CalibrationBoard) -> (Texture, [f64; 2], [f64; 2]) {
    let centers: Vec<[f64; 2]> = board.planar_points().iter().map(|p| [p.x, p.y]).collect();
    let s = board.spacing;
    let max_x = (2 * board.cols - 1) as f64 * s;
    let max_y = (board.rows - 1) as f64 * s;
    (
        Texture::Discs {
            centers,
            radius: board.circle_radius,
            disc: 0.15,
            background: 0.9,
        },
        [-s, -s],
        [max_x + s, max_y + s],
    )
}

/// Board at `pose` (board -> world) as seen by `cam` under even lighting.
pub fn render_board_view(
    cam: &CameraModel,
    board: &CalibrationBoard,
    pose: &RigidTransform,
    options: &PlaneRenderOptions,
) -> GrayImage {
    let (texture, min, max) = board_texture(board);
    let print = PlanePrint {
        pose: *pose,
        texture,
        min,
        max,
    };
    render_plane_view(cam, &print, options)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerRenderOptions {
    pub gain: f64,
    pub blur_px: usize,
    pub pixel_sigma: f64,
    pub seed: u64,
    /// Frame number; selects the noise streams of both views.
    pub frame: u64,
}

impl Default for MarkerRenderOptions {
    fn default() -> Self {
        Self {
            gain: 1.0,
            blur_px: 0,
            pixel_sigma: 0.0,
            seed: 0,
            frame: 0,
        }
    }
}

/// Stereo marker render with the true projected circle centres.
#[derive(Debug, Clone)]
pub struct MarkerRender {
    pub images: [GrayImage; 2],
    /// `centers[view][id]`.
    pub centers: [[Point2; 3]; 2],
}

/// Plate gray level 220, circles 30, surroundings 140 at unit gain.
pub fn render_marker_views(
    cams: (&CameraModel, &CameraModel),
    pose: &RigidTransform,
    geometry: &MarkerGeometry,
    options: &MarkerRenderOptions,
) -> Result<MarkerRender> {
    geometry.validate()?;
    let world = geometry.centers().map(|c| pose.apply(&c));
    let mut centers = [[Point2::origin(); 3]; 2];
    for (v, cam) in [cams.0, cams.1].into_iter().enumerate() {
        for k in 0..3 {
            let depth = cam.world_to_device().apply(&world[k]).z;
            if depth <= geometry.radius {
                return Err(Error::OutOfView(format!("marker circle {k} is behind the camera")));
            }
            let margin = cam.fu.max(cam.fv) * geometry.radius / depth + options.blur_px as f64 + 3.0;
            centers[v][k] = super::scene::in_view(cam, &world[k], margin)?;
        }
    }
    let r = geometry.radius;
    let print = PlanePrint {
        pose: *pose,
        texture: Texture::Discs {
            centers: geometry.centers().iter().map(|c| [c.x, c.y]).collect(),
            radius: r,
            disc: 30.0 / 255.0,
            background: 220.0 / 255.0,
        },
        min: [-2.5 * r, -2.5 * r],
        max: [geometry.d01 + 2.5 * r, geometry.d02 + 2.5 * r],
    };
    let render = |cam: &CameraModel, view: u64| {
        let opts = PlaneRenderOptions {
            exposure: 255.0,
            gain: options.gain,
            surround: 140.0 / 255.0,
            blur_px: options.blur_px,
            pixel_sigma: options.pixel_sigma,
            seed: options.seed,
            stream: 2 * options.frame + view,
        };
        render_plane_view(cam, &print, &opts)
    };
    let (a, b) = rayon::join(|| render(cams.0, 0), || render(cams.1, 1));
    Ok(MarkerRender {
        images: [a, b],
        centers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markerpose::{track_frame, BlobEllipseDetector, CenterDetector};
    use crate::simulator::Rig;
    use std::f64::consts::PI;

    fn facing(aa: Vector3<f64>, t: Vector3<f64>) -> RigidTransform {
        let base = RigidTransform::from_axis_angle(Vector3::new(PI, 0.0, 0.0), Vector3::zeros());
        RigidTransform::from_axis_angle(aa, t).compose(&base)
    }

    #[test]
    fn disc_coverage_is_area_weighted() {
        // Fronto-parallel disc: total darkness equals the projected disc area.
        let cam = CameraModel::new(1000.0, 1000.0, 50.0, 50.0, 100, 100).unwrap();
        let print = PlanePrint {
            pose: RigidTransform::from_translation(Vector3::new(0.0, 0.0, 1000.0)),
            texture: Texture::Discs {
                centers: vec![[0.3, -0.2]],
                radius: 20.0,
                disc: 0.0,
                background: 1.0,
            },
            min: [-100.0, -100.0],
            max: [100.0, 100.0],
        };
        let opts = PlaneRenderOptions {
            exposure: 1.0,
            ..Default::default()
        };
        let inv = print.pose.inverse();
        let mut dark = 0.0;
        for y in 0..100 {
            for x in 0..100 {
                dark += 1.0 - pixel_value(&print, &inv, &cam, x as f64, y as f64, 0.0);
            }
        }
        let area = PI * 20.0 * 20.0;
        assert!((dark - area).abs() / area < 2e-3, "{dark} vs {area}");
        let img = render_plane_view(&cam, &print, &opts);
        assert_eq!(img.width, 100);
    }

    #[test]
    fn blur_keeps_symmetric_features_in_place() {
        let mut v = vec![0.0; 41];
        v[20] = 1.0;
        let mut even = v.clone();
        box_blur_rows(&mut v, 41, 9);
        box_blur_rows(&mut even, 41, 4);
        for row in [&v, &even] {
            let total: f64 = row.iter().sum();
            let mean: f64 = row.iter().enumerate().map(|(i, a)| i as f64 * a).sum::<f64>() / total;
            assert!((total - 1.0).abs() < 1e-12);
            assert!((mean - 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn marker_centres_detected_under_low_light_and_blur() {
        let rig = Rig::nominal();
        let g = MarkerGeometry::default();
        let pose = facing(Vector3::new(0.2, -0.3, 0.4), Vector3::new(-10.0, 15.0, 690.0));
        let det = BlobEllipseDetector::default();
        for (gain, blur) in [(1.0, 0), (0.3, 9)] {
            let opts = MarkerRenderOptions {
                gain,
                blur_px: blur,
                pixel_sigma: 1.0,
                seed: 3,
                frame: 0,
            };
            let r = render_marker_views((&rig.cam1, &rig.cam2), &pose, &g, &opts).unwrap();
            for v in 0..2 {
                let found = det.detect(&r.images[v]);
                assert_eq!(found.len(), 3, "gain {gain} blur {blur}");
                for truth in r.centers[v] {
                    let e = found.iter().map(|c| (c.center - truth).norm()).fold(f64::MAX, f64::min);
                    assert!(e < 0.3, "centre error {e} at gain {gain} blur {blur}");
                }
            }
            let tp = track_frame(&det, (&r.images[0], &r.images[1]), (&rig.cam1, &rig.cam2), &g).unwrap();
            assert!(tp.pose.angle_to(&pose).to_degrees() < 0.5);
            assert!((tp.pose.translation - pose.translation).norm() < 0.3);
        }
    }

    #[test]
    fn noiseless_marker_pose_is_recovered_tightly() {
        let rig = Rig::nominal();
        let g = MarkerGeometry::default();
        let pose = facing(Vector3::new(-0.25, 0.15, 0.1), Vector3::new(5.0, -20.0, 710.0));
        let r = render_marker_views((&rig.cam1, &rig.cam2), &pose, &g, &MarkerRenderOptions::default()).unwrap();
        let det = BlobEllipseDetector::default();
        let tp = track_frame(&det, (&r.images[0], &r.images[1]), (&rig.cam1, &rig.cam2), &g).unwrap();
        assert!(tp.pose.angle_to(&pose).to_degrees() < 0.05, "{}", tp.pose.angle_to(&pose).to_degrees());
        assert!((tp.pose.translation - pose.translation).norm() < 0.02);
    }

    #[test]
    fn marker_behind_or_outside_is_rejected() {
        let rig = Rig::nominal();
        let g = MarkerGeometry::default();
        let behind = facing(Vector3::zeros(), Vector3::new(0.0, 0.0, -500.0));
        let aside = facing(Vector3::zeros(), Vector3::new(400.0, 0.0, 700.0));
        for pose in [behind, aside] {
            let e = render_marker_views((&rig.cam1, &rig.cam2), &pose, &g, &MarkerRenderOptions::default());
            assert!(matches!(e, Err(Error::OutOfView(_))));
        }
    }

    #[test]
    fn board_circles_render_dark() {
        let rig = Rig::nominal();
        let board = CalibrationBoard::default();
        let pose = RigidTransform::from_axis_angle(Vector3::new(0.1, 0.2, 0.0), Vector3::new(-100.0, -60.0, 700.0));
        let img = render_board_view(&rig.cam1, &board, &pose, &PlaneRenderOptions::default());
        for p in board.points().iter().step_by(17) {
            let px = rig.cam1.project(&pose.apply(p)).unwrap();
            let v = img.get(px.x.round() as usize, px.y.round() as usize);
            assert!(v < 50, "{v}");
        }
    }
}
