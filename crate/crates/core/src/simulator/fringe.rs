use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::scene::Scene;
use crate::geometry::{CameraModel, Point2, Point3};
use crate::image::{quantize, GrayImage};
use crate::slcodec::{FringeAxis, PatternKind, PhaseKind, PhaseMap};

/// Photometry of a structured-light capture. Pixel value is
/// `gain · albedo · (ambient + shading · pattern) + noise`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeOptions {
    /// Gray levels added everywhere the surface is seen.
    pub ambient: f64,
    pub gain: f64,
    /// Additive Gaussian noise (gray levels) before quantisation.
    pub pixel_sigma: f64,
    pub seed: u64,
}

impl Default for FringeOptions {
    fn default() -> Self {
        Self {
            ambient: 0.0,
            gain: 0.9,
            pixel_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Per-pixel ground truth of a fringe render.
#[derive(Debug, Clone, PartialEq)]
pub struct FringeTruth {
    pub width: usize,
    pub height: usize,
    /// Surface point seen by each pixel, if lit by the projector.
    pub points: Vec<Option<Point3>>,
    /// Projector pixel illuminating that point.
    pub projector: Vec<Option<Point2>>,
}

impl FringeTruth {
    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }

    /// Absolute phase `2π·c/p` of the projector coordinate along `axis`.
    pub fn absolute_phase(&self, axis: FringeAxis, pitch: f64) -> PhaseMap {
        let mut map = PhaseMap::masked(self.width, self.height, PhaseKind::Absolute);
        for (i, p) in self.projector.iter().enumerate() {
            if let Some(p) = p {
                map.values[i] = TAU * axis.coordinate(p.x, p.y) / pitch;
                map.mask[i] = true;
            }
        }
        map
    }

    /// Depth along the optical axis of `cam`.
    pub fn depth(&self, cam: &CameraModel) -> Vec<Option<f64>> {
        let w2d = cam.world_to_device();
        self.points.iter().map(|p| p.map(|p| w2d.apply(&p).z)).collect()
    }
}

/// A rendered capture sequence.
#[derive(Debug, Clone)]
pub struct FringeRender {
    pub frames: Vec<GrayImage>,
    pub truth: FringeTruth,
}

struct Sample {
    point: Point3,
    proj: Point2,
    albedo: f64,
    shading: f64,
    lit: bool,
}

fn trace(scene: &Scene, cam: &CameraModel, projector: &CameraModel) -> Vec<Option<Sample>> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let pc = projector.center();
    let (pw, ph) = (projector.width as f64, projector.height as f64);
    (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).map(move |x| {
                let hit = scene.trace_pixel(cam, &Point2::new(x as f64, y as f64))?;
                let to_light = pc - hit.point;
                let shading = hit.normal.dot(&to_light.normalize()).max(0.0);
                let proj = projector.project(&hit.point).ok();
                let inside = proj.is_some_and(|p| p.x >= -0.5 && p.y >= -0.5 && p.x < pw - 0.5 && p.y < ph - 0.5);
                let lit = inside && shading > 0.0 && scene.visible_from(&pc, &hit.point);
                Some(Sample {
                    point: hit.point,
                    proj: proj.unwrap_or(Point2::origin()),
                    albedo: hit.albedo,
                    shading,
                    lit,
                })
            })
        })
        .collect()
}

/// Noise stream for one image row; independent of thread scheduling.
pub(crate) fn row_rng(seed: u64, frame: u64, row: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((frame << 32) | row);
    rng
}

/// Renders every frame of `patterns` (in order) as seen by `cam`, with the
/// scene illuminated by `projector`. Pixels that miss the scene or are not
/// lit stay at zero apart from ambient light and noise.
pub fn render_fringe_views(
    scene: &Scene,
    cam: &CameraModel,
    projector: &CameraModel,
    patterns: &[PatternKind],
    options: &FringeOptions,
) -> FringeRender {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let samples = trace(scene, cam, projector);
    let noise = (options.pixel_sigma > 0.0).then(|| Normal::new(0.0, options.pixel_sigma).expect("finite sigma"));

    let mut jobs = Vec::new();
    for kind in patterns {
        for index in 0..kind.frame_count() {
            jobs.push((*kind, index));
        }
    }
    let frames = jobs
        .par_iter()
        .enumerate()
        .map(|(f, &(kind, index))| {
            let mut data = vec![0u8; w * h];
            for (y, row) in data.chunks_mut(w).enumerate() {
                let mut rng = row_rng(options.seed, f as u64, y as u64);
                for (x, out) in row.iter_mut().enumerate() {
                    let mut v = match &samples[y * w + x] {
                        Some(s) => {
                            let light = if s.lit {
                                s.shading * kind.intensity(index, s.proj.x, s.proj.y)
                            } else {
                                0.0
                            };
                            options.gain * s.albedo * (options.ambient + light)
                        }
                        None => 0.0,
                    };
                    if let Some(n) = &noise {
                        v += n.sample(&mut rng);
                    }
                    *out = quantize(v);
                }
            }
            GrayImage {
                width: w,
                height: h,
                data,
            }
        })
        .collect();

    let truth = FringeTruth {
        width: w,
        height: h,
        points: samples.iter().map(|s| s.as_ref().filter(|s| s.lit).map(|s| s.point)).collect(),
        projector: samples.iter().map(|s| s.as_ref().filter(|s| s.lit).map(|s| s.proj)).collect(),
    };
    FringeRender { frames, truth }
}
