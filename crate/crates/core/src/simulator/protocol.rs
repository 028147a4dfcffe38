use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::fringe::{render_fringe_views, FringeOptions};
use super::scene::{Rig, Scene, Surface, Texture};
use super::texture::{render_board_view, render_marker_views, MarkerRenderOptions, PlaneRenderOptions};
use super::ultrasound::{nominal_probe, synth_bscan, BScanOptions, BScanTruth, PhantomFeature, BSCAN_DEPTH_MM};
use super::NoiseModel;
use crate::calib::{CalibrationBoard, CalibrationFile, Device, DeviceRecord, ViewObservation};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Point2, Point3, RigidTransform};
use crate::markerpose::MarkerGeometry;
use crate::slcodec::{generate_patterns, FringeAxis, PatternKind};
use crate::usfreehand::{map_pixel_to_world, write_poses, ProbeCalibration, ProbeRecord, TrackedBScan};

/// Names accepted by [`Protocol::parse`].
pub const PROTOCOLS: [&str; 6] = [
    "probe-calib-5x30",
    "plane-5poses",
    "sphere",
    "concentric-cylinders",
    "breast-analog",
    "rig-calib",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Protocol {
    /// Five cross-wire sweeps of 30 B-scans each.
    #[serde(rename = "probe-calib-5x30")]
    ProbeCalib5x30,
    /// One plane in five poses.
    #[serde(rename = "plane-5poses")]
    Plane5Poses,
    /// Sphere of radius 19.8 mm.
    #[default]
    #[serde(rename = "sphere")]
    Sphere,
    /// Outer cylinder for structured light, inner tube swept by ultrasound.
    #[serde(rename = "concentric-cylinders")]
    ConcentricCylinders,
    /// Superellipsoid shell with three spherical inclusions.
    #[serde(rename = "breast-analog")]
    BreastAnalog,
    /// Calibration board in many poses, seen by both cameras and the projector.
    #[serde(rename = "rig-calib")]
    RigCalib,
}

impl Protocol {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "probe-calib-5x30" => Protocol::ProbeCalib5x30,
            "plane-5poses" => Protocol::Plane5Poses,
            "sphere" => Protocol::Sphere,
            "concentric-cylinders" => Protocol::ConcentricCylinders,
            "breast-analog" => Protocol::BreastAnalog,
            "rig-calib" => Protocol::RigCalib,
            other => return Err(Error::UnknownProtocol(other.to_string())),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::ProbeCalib5x30 => PROTOCOLS[0],
            Protocol::Plane5Poses => PROTOCOLS[1],
            Protocol::Sphere => PROTOCOLS[2],
            Protocol::ConcentricCylinders => PROTOCOLS[3],
            Protocol::BreastAnalog => PROTOCOLS[4],
            Protocol::RigCalib => PROTOCOLS[5],
        }
    }
}

/// How structured-light scans find the absolute phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlUnwrap {
    #[default]
    Centerline,
    GrayCode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlSettings {
    /// Phase steps of surface scans.
    pub steps: usize,
    /// Fringe pitch (projector px).
    pub pitch: f64,
    pub unwrap: SlUnwrap,
    pub gray_bits: u32,
    /// Half width of the centerline stripe (projector px).
    pub centerline_half_width: f64,
    /// Phase steps of the board scans used for projector calibration.
    pub calib_steps: usize,
    pub gain: f64,
    pub ambient: f64,
}

impl Default for SlSettings {
    fn default() -> Self {
        Self {
            steps: 8,
            pitch: 18.0,
            unwrap: SlUnwrap::Centerline,
            gray_bits: 7,
            centerline_half_width: 1.0,
            calib_steps: 18,
            gain: 0.9,
            ambient: 0.0,
        }
    }
}

impl SlSettings {
    /// Projector column of the centerline stripe.
    pub fn centerline_column(&self, projector: &CameraModel) -> f64 {
        projector.cu.round()
    }

    /// Frames of one surface scan, in capture order.
    pub fn sequence(&self, projector: &CameraModel) -> Vec<PatternKind> {
        let mut seq = vec![PatternKind::PhaseShift {
            steps: self.steps,
            pitch: self.pitch,
            axis: FringeAxis::Vertical,
        }];
        seq.push(match self.unwrap {
            SlUnwrap::Centerline => PatternKind::Centerline {
                column: self.centerline_column(projector),
                half_width: self.centerline_half_width,
            },
            SlUnwrap::GrayCode => PatternKind::GrayCode {
                bits: self.gray_bits,
                pitch: self.pitch,
                axis: FringeAxis::Vertical,
            },
        });
        seq
    }

    /// Board-scan frames for one fringe axis: phase shifting plus Gray code.
    pub fn calib_sequence(&self, axis: FringeAxis) -> Vec<PatternKind> {
        vec![
            PatternKind::PhaseShift {
                steps: self.calib_steps,
                pitch: self.pitch,
                axis,
            },
            PatternKind::GrayCode {
                bits: self.gray_bits,
                pitch: self.pitch,
                axis,
            },
        ]
    }
}

/// Simulation parameters, read from the `--config` file of `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub protocol: Protocol,
    pub seed: u64,
    pub noise: NoiseModel,
    pub sl: SlSettings,
    pub marker: MarkerGeometry,
    pub board: CalibrationBoard,
    /// Sweeps of the probe-calibration protocol.
    pub calibrations: usize,
    /// B-scans per sweep (30 for probe calibration, 94 otherwise).
    pub frames: Option<usize>,
    /// Board poses of rig-calib (34).
    pub poses: Option<usize>,
    /// Render stereo marker views for every B-scan.
    pub marker_images: bool,
    /// Render board images and board fringe scans instead of writing the
    /// board observations directly.
    pub board_images: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::default(),
            seed: 0,
            noise: NoiseModel::default(),
            sl: SlSettings::default(),
            marker: MarkerGeometry::default(),
            board: CalibrationBoard::default(),
            calibrations: 5,
            frames: None,
            poses: None,
            marker_images: true,
            board_images: false,
        }
    }
}

impl SimConfig {
    pub fn new(protocol: Protocol, seed: u64) -> Self {
        Self {
            protocol,
            seed,
            ..Self::default()
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.unwrap_or(match self.protocol {
            Protocol::ProbeCalib5x30 => 30,
            _ => 94,
        })
    }

    pub fn pose_count(&self) -> usize {
        self.poses.unwrap_or(match self.protocol {
            Protocol::Plane5Poses => 5,
            _ => 34,
        })
    }
}

/// Layout description written to `dataset.toml` at the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub protocol: Protocol,
    pub seed: u64,
    /// Camera and projector resolutions (px).
    pub camera_size: [u32; 2],
    pub projector_size: [u32; 2],
    /// Structured-light scans `cam1/scan_K/`.
    pub scans: usize,
    pub pitch: f64,
    pub unwrap: SlUnwrap,
    pub centerline_column: f64,
    /// B-scans in `bscans/`.
    pub frames: usize,
    pub marker_images: bool,
    pub us_depth_mm: f64,
    pub marker: MarkerGeometry,
    pub board: CalibrationBoard,
    /// Board poses (`rig-calib`).
    pub board_poses: usize,
    pub board_images: bool,
    /// Sub-datasets (`probe-calib-5x30`).
    pub subsets: Vec<String>,
    /// Capture order of every surface scan.
    pub sequence: Vec<PatternKind>,
    /// Capture order of the vertical then horizontal board scans.
    pub calib_sequence: Vec<PatternKind>,
}

/// Ground truth written to `truth/truth.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTruth {
    pub protocol: Protocol,
    pub seed: u64,
    pub noise: NoiseModel,
    /// Scene of each structured-light scan.
    pub scenes: Vec<Scene>,
    /// Ultrasound phantom.
    pub features: Vec<PhantomFeature>,
    pub probe: Option<ProbeRecord>,
    /// Known sphere radius (`sphere`).
    pub sphere_radius_mm: Option<f64>,
    /// Outer minus inner radius (`concentric-cylinders`).
    pub gap_mm: Option<f64>,
    /// Extent of all lit surface points over every scan.
    pub extent_mm: Option<[f64; 3]>,
    /// Lit camera pixels per scan.
    pub lit_pixels: Vec<usize>,
    /// Board -> world per board pose.
    pub board_poses: Vec<[f64; 12]>,
    pub bscans: Vec<BScanTruth>,
}

impl ProtocolTruth {
    fn new(config: &SimConfig) -> Self {
        Self {
            protocol: config.protocol,
            seed: config.seed,
            noise: config.noise,
            scenes: Vec::new(),
            features: Vec::new(),
            probe: None,
            sphere_radius_mm: None,
            gap_mm: None,
            extent_mm: None,
            lit_pixels: Vec::new(),
            board_poses: Vec::new(),
            bscans: Vec::new(),
        }
    }
}

/// One B-scan of a simulated sweep.
#[derive(Debug, Clone)]
pub struct SweepFrame {
    /// Sweep number within the protocol.
    pub set: usize,
    pub index: usize,
    pub bscan: TrackedBScan,
    pub true_pose: RigidTransform,
    pub truth: BScanTruth,
    /// Stereo marker views on disk, when rendered.
    pub stereo: Option<[PathBuf; 2]>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepRecording {
    pub frames: Vec<SweepFrame>,
}

/// Independent seed for a named stage of a protocol.
fn sub_seed(seed: u64, stage: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ stage.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STAGE_SCAN: u64 = 1;
const STAGE_SWEEP: u64 = 2;
const STAGE_MARKER: u64 = 3;
const STAGE_BOARD: u64 = 4;

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io_at(p, e))
}

/// Simulates `config.protocol` and writes the dataset under `out`.
pub fn run_protocol(config: &SimConfig, out: impl AsRef<Path>) -> Result<SweepRecording> {
    let out = out.as_ref();
    mkdir(out)?;
    let rig = Rig::nominal();
    let probe = nominal_probe();
    let mut info = DatasetInfo {
        protocol: config.protocol,
        seed: config.seed,
        camera_size: [rig.cam1.width, rig.cam1.height],
        projector_size: [rig.projector.width, rig.projector.height],
        scans: 0,
        pitch: config.sl.pitch,
        unwrap: config.sl.unwrap,
        centerline_column: config.sl.centerline_column(&rig.projector),
        frames: 0,
        marker_images: false,
        us_depth_mm: BSCAN_DEPTH_MM,
        marker: config.marker,
        board: config.board.clone(),
        board_poses: 0,
        board_images: false,
        subsets: Vec::new(),
        sequence: config.sl.sequence(&rig.projector),
        calib_sequence: Vec::new(),
    };
    let mut truth = ProtocolTruth::new(config);
    let mut recording = SweepRecording::default();

    match config.protocol {
        Protocol::ProbeCalib5x30 => {
            let cross = Point3::new(12.0, -6.0, 700.0);
            truth.features = vec![PhantomFeature::CrossWire {
                point: [cross.x, cross.y, cross.z],
            }];
            for set in 0..config.calibrations {
                let name = format!("calib_{set}");
                let dir = out.join(&name);
                let poses = cross_wire_poses(&probe, &cross, config.frame_count(), sub_seed(config.seed, 100 + set as u64));
                let frames = write_sweep(config, &dir, set, &truth.features, &probe, &rig, &poses, false)?;
                write_truth_poses(&dir, &frames)?;
                recording.frames.extend(frames);
                info.subsets.push(name);
            }
            info.frames = config.frame_count();
            let mut rec = ProbeRecord::new(&probe);
            rec.cross_point = Some([cross.x, cross.y, cross.z]);
            truth.probe = Some(rec);
        }
        Protocol::Plane5Poses | Protocol::Sphere => {
            let scenes = if config.protocol == Protocol::Sphere {
                truth.sphere_radius_mm = Some(19.8);
                vec![Scene::new(vec![Surface::Sphere {
                    center: Point3::new(8.0, -5.0, 690.0),
                    radius: 19.8,
                }])]
            } else {
                plane_scenes(config.pose_count())
            };
            write_scans(config, out, &rig, &scenes, &mut info, &mut truth)?;
        }
        Protocol::ConcentricCylinders | Protocol::BreastAnalog => {
            let (scene, features, top) = if config.protocol == Protocol::ConcentricCylinders {
                let (outer, inner) = (30.0, 7.91);
                truth.gap_mm = Some(outer - inner);
                (
                    Scene::new(vec![Surface::Cylinder {
                        point: Point3::new(0.0, 0.0, 700.0),
                        direction: Vector3::x(),
                        radius: outer,
                        half_length: 100.0,
                    }]),
                    vec![PhantomFeature::Cylinder {
                        point: [0.0, 0.0, 700.0],
                        direction: [1.0, 0.0, 0.0],
                        radius: inner,
                    }],
                    675.0,
                )
            } else {
                let (scene, features) = breast_phantom();
                (scene, features, 682.0)
            };
            write_scans(config, out, &rig, std::slice::from_ref(&scene), &mut info, &mut truth)?;
            truth.features = features;
            let poses = linear_sweep(&probe, config.frame_count(), top);
            let frames = write_sweep(config, out, 0, &truth.features, &probe, &rig, &poses, config.marker_images)?;
            write_truth_poses(out, &frames)?;
            info.frames = frames.len();
            info.marker_images = config.marker_images;
            recording.frames = frames;
        }
        Protocol::RigCalib => {
            let poses = board_poses(&config.board, &rig, config.pose_count(), sub_seed(config.seed, STAGE_BOARD))?;
            truth.board_poses = poses.iter().map(|p| p.to_row12()).collect();
            info.board_poses = poses.len();
            if config.board_images {
                write_board_images(config, out, &rig, &poses, &mut info)?;
            } else {
                let obs = board_observations(&config.board, &rig, &poses, config.noise.obs_sigma_px, config.seed);
                write_observations(&out.join("observations"), &obs)?;
            }
        }
    }

    if !info.sequence.is_empty() && info.scans > 0 {
        write_patterns(&out.join("patterns"), &info.sequence, &rig.projector)?;
    }
    let truth_dir = out.join("truth");
    mkdir(&truth_dir)?;
    crate::kv::write(out.join("dataset.toml"), &info)?;
    crate::kv::write(truth_dir.join("truth.toml"), &truth)?;
    let mut cal = CalibrationFile {
        devices: rig.devices().iter().map(|(d, c)| DeviceRecord::new(*d, c, None)).collect(),
        probe: truth.probe.clone().or(Some(ProbeRecord::new(&probe))),
    };
    if let Some(p) = &mut cal.probe {
        p.observations = 0;
    }
    cal.write(truth_dir.join("calibration.toml"))?;
    Ok(recording)
}

fn write_patterns(dir: &Path, sequence: &[PatternKind], projector: &CameraModel) -> Result<()> {
    mkdir(dir)?;
    let mut n = 0;
    for kind in sequence {
        let set = generate_patterns(*kind, projector.width as usize, projector.height as usize)?;
        for img in &set.images {
            img.write_pgm(dir.join(format!("frame_{n:03}.pgm")))?;
            n += 1;
        }
    }
    Ok(())
}

fn write_scans(
    config: &SimConfig,
    out: &Path,
    rig: &Rig,
    scenes: &[Scene],
    info: &mut DatasetInfo,
    truth: &mut ProtocolTruth,
) -> Result<()> {
    let (mut lo, mut hi) = (Vector3::repeat(f64::MAX), Vector3::repeat(f64::MIN));
    for (k, scene) in scenes.iter().enumerate() {
        let opts = FringeOptions {
            ambient: config.sl.ambient,
            gain: config.sl.gain,
            pixel_sigma: config.noise.pixel_sigma,
            seed: sub_seed(config.seed, STAGE_SCAN * 1000 + k as u64),
        };
        let render = render_fringe_views(scene, &rig.cam1, &rig.projector, &info.sequence, &opts);
        let dir = out.join("cam1").join(format!("scan_{k}"));
        mkdir(&dir)?;
        for (n, img) in render.frames.iter().enumerate() {
            img.write_pgm(dir.join(format!("frame_{n:03}.pgm")))?;
        }
        for p in render.truth.points.iter().flatten() {
            lo = lo.inf(&p.coords);
            hi = hi.sup(&p.coords);
        }
        truth.lit_pixels.push(render.truth.valid_count());
    }
    info.scans = scenes.len();
    truth.scenes = scenes.to_vec();
    if hi.x >= lo.x {
        let e = hi - lo;
        truth.extent_mm = Some([e.x, e.y, e.z]);
    }
    Ok(())
}

/// Five plane poses between about 605 and 712 mm, together spanning about
/// 253 x 198 x 107 mm.
fn plane_scenes(n: usize) -> Vec<Scene> {
    let table = [
        (Vector3::new(0.0, 0.0, 0.0), 660.0),
        (Vector3::new(0.183, -0.1525, 0.0), 640.0),
        (Vector3::new(-0.2135, 0.183, 0.061), 670.0),
        (Vector3::new(0.061, 0.2745, -0.0305), 655.0),
        (Vector3::new(-0.122, -0.244, 0.0305), 665.0),
    ];
    (0..n)
        .map(|k| {
            let (aa, z) = table[k % table.len()];
            Scene::new(vec![Surface::Plane {
                pose: RigidTransform::from_axis_angle(aa, Vector3::new(0.0, 0.0, z)),
                half_width: 120.9,
                half_height: 99.6,
                texture: Texture::Uniform { albedo: 1.0 },
            }])
        })
        .collect()
}

fn breast_phantom() -> (Scene, Vec<PhantomFeature>) {
    let scene = Scene::new(vec![Surface::Superellipsoid {
        center: Point3::new(0.0, 0.0, 725.0),
        semi_axes: Vector3::new(80.0, 60.0, 45.0),
        exponent: 0.9,
    }]);
    let features = vec![
        PhantomFeature::Sphere {
            center: [-30.0, 0.0, 708.0],
            radius: 13.5,
        },
        PhantomFeature::Sphere {
            center: [5.0, 4.0, 705.0],
            radius: 7.0,
        },
        PhantomFeature::Sphere {
            center: [32.0, -4.0, 706.0],
            radius: 6.0,
        },
    ];
    (scene, features)
}

/// Marker facing the cameras, image plane across the world x axis.
fn facing() -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
}

/// Probe translated along x in 1 mm steps with a slight wobble; the image
/// top edge sits near depth `top`.
fn linear_sweep(probe: &ProbeCalibration, n: usize, top: f64) -> Vec<RigidTransform> {
    let base = facing();
    (0..n)
        .map(|i| {
            let a = i as f64;
            let wobble = Rotation3::from_scaled_axis(Vector3::new(
                0.03 * (0.31 * a).sin(),
                0.04 * (0.23 * a).cos(),
                0.03 * (0.17 * a).sin(),
            ));
            let r = wobble * base;
            let x = -0.5 * (n as f64 - 1.0) + a;
            // Place the top-centre image pixel at (x, 0, top).
            let p_t = probe.to_transducer(&Point2::new(0.5 * (super::BSCAN_WIDTH - 1) as f64, 0.0));
            let t = Vector3::new(x, 0.0, top) - r * p_t.coords;
            RigidTransform::from_axis_angle(r.scaled_axis(), t)
        })
        .collect()
}

/// Probe poses that image `cross` at random pixels from varied orientations.
fn cross_wire_poses(probe: &ProbeCalibration, cross: &Point3, n: usize, seed: u64) -> Vec<RigidTransform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = facing();
    (0..n)
        .map(|_| {
            let tilt = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.36..0.36),
            );
            let pixel = Point2::new(rng.random_range(40.0..280.0), rng.random_range(40.0..370.0));
            let r = Rotation3::from_scaled_axis(tilt) * base;
            let t = cross.coords - r * probe.to_transducer(&pixel).coords;
            RigidTransform::from_axis_angle(r.scaled_axis(), t)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn write_sweep(
    config: &SimConfig,
    dir: &Path,
    set: usize,
    features: &[PhantomFeature],
    probe: &ProbeCalibration,
    rig: &Rig,
    poses: &[RigidTransform],
    markers: bool,
) -> Result<Vec<SweepFrame>> {
    let bdir = dir.join("bscans");
    mkdir(&bdir)?;
    if markers {
        mkdir(&dir.join("cam1"))?;
        mkdir(&dir.join("cam2"))?;
    }
    let seed = sub_seed(config.seed, STAGE_SWEEP * 1000 + set as u64);
    let mut frames = Vec::with_capacity(poses.len());
    let mut recorded = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let opts = BScanOptions {
            seed,
            frame: i as u64,
            ..BScanOptions::default()
        };
        let (bscan, truth) = synth_bscan(features, pose, probe, &config.noise, &opts);
        bscan.image.write_pgm(bdir.join(format!("{i:04}.pgm")))?;
        recorded.push((i, bscan.probe_pose));
        let stereo = if markers {
            let mopts = MarkerRenderOptions {
                gain: 1.0,
                blur_px: 0,
                pixel_sigma: config.noise.pixel_sigma,
                seed: sub_seed(config.seed, STAGE_MARKER),
                frame: i as u64,
            };
            let r = render_marker_views((&rig.cam1, &rig.cam2), pose, &config.marker, &mopts)?;
            let paths = [
                dir.join("cam1").join(format!("marker_{i:04}.pgm")),
                dir.join("cam2").join(format!("marker_{i:04}.pgm")),
            ];
            r.images[0].write_pgm(&paths[0])?;
            r.images[1].write_pgm(&paths[1])?;
            Some(paths)
        } else {
            None
        };
        frames.push(SweepFrame {
            set,
            index: i,
            bscan,
            true_pose: *pose,
            truth,
            stereo,
        });
    }
    write_poses(dir.join("poses.txt"), &recorded)?;
    Ok(frames)
}

fn write_truth_poses(dir: &Path, frames: &[SweepFrame]) -> Result<()> {
    let tdir = dir.join("truth");
    mkdir(&tdir)?;
    let poses: Vec<(usize, RigidTransform)> = frames.iter().map(|f| (f.index, f.true_pose)).collect();
    write_poses(tdir.join("poses.txt"), &poses)?;
    let bscans: Vec<BScanTruth> = frames.iter().map(|f| f.truth).collect();
    #[derive(Serialize)]
    struct Frames<'a> {
        bscans: &'a [BScanTruth],
    }
    crate::kv::write(tdir.join("bscans.toml"), &Frames { bscans: &bscans })
}

/// Whether every board point projects inside all three devices with margin.
fn board_visible(board: &CalibrationBoard, rig: &Rig, pose: &RigidTransform, margin: f64) -> bool {
    let pts = board.points();
    rig.devices().iter().all(|(_, cam)| {
        pts.iter()
            .all(|p| super::scene::in_view(cam, &pose.apply(p), margin).is_ok())
    })
}

/// Board poses around 700 mm with tilts up to about 55°, each fully visible
/// to both cameras and the projector.
pub fn board_poses(board: &CalibrationBoard, rig: &Rig, n: usize, seed: u64) -> Result<Vec<RigidTransform>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = board.center().coords;
    let mut out = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        if tries > 200 * n.max(1) {
            return Err(Error::Degenerate("could not place the board inside every field of view".into()));
        }
        let rot = Rotation3::from_scaled_axis(Vector3::new(
            rng.random_range(-0.95..0.95),
            rng.random_range(-0.95..0.95),
            rng.random_range(-0.3..0.3),
        ));
        let centre = Vector3::new(
            rng.random_range(-25.0..25.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(620.0..800.0),
        );
        let pose = RigidTransform::from_axis_angle(rot.scaled_axis(), centre - rot * c);
        if board_visible(board, rig, &pose, 25.0) {
            out.push(pose);
        }
    }
    Ok(out)
}

/// Exact board projections in every device plus Gaussian noise.
pub fn board_observations(
    board: &CalibrationBoard,
    rig: &Rig,
    poses: &[RigidTransform],
    sigma_px: f64,
    seed: u64,
) -> Vec<ViewObservation> {
    let pts = board.points();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, STAGE_BOARD + 10));
    let noise = (sigma_px > 0.0).then(|| Normal::new(0.0, sigma_px).expect("finite sigma"));
    let mut out = Vec::new();
    for (k, pose) in poses.iter().enumerate() {
        for (device, cam) in rig.devices() {
            let points = pts
                .iter()
                .enumerate()
                .filter_map(|(i, p)| {
                    let q = cam.project(&pose.apply(p)).ok()?;
                    let (du, dv) = match &noise {
                        Some(n) => (n.sample(&mut rng), n.sample(&mut rng)),
                        None => (0.0, 0.0),
                    };
                    Some((i, Point2::new(q.x + du, q.y + dv)))
                })
                .collect();
            out.push(ViewObservation {
                device,
                pose_index: k,
                points,
            });
        }
    }
    out
}

/// `observations/<device>.txt`, one `pose point u v` line per point.
pub fn write_observations(dir: &Path, obs: &[ViewObservation]) -> Result<()> {
    mkdir(dir)?;
    for device in [Device::Cam1, Device::Cam2, Device::Projector] {
        let mut text = String::new();
        for o in obs.iter().filter(|o| o.device == device) {
            for (i, p) in &o.points {
                let _ = writeln!(text, "{} {} {:e} {:e}", o.pose_index, i, p.x, p.y);
            }
        }
        if !text.is_empty() {
            fs::write(dir.join(format!("{}.txt", device.name())), text)?;
        }
    }
    Ok(())
}

/// Reads the files written by [`write_observations`]; missing devices are
/// skipped.
pub fn read_observations(dir: &Path) -> Result<Vec<ViewObservation>> {
    let mut out: Vec<ViewObservation> = Vec::new();
    for device in [Device::Cam1, Device::Cam2, Device::Projector] {
        let path = dir.join(format!("{}.txt", device.name()));
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path)?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Parse(format!("{}:{}: expected `pose point u v`", path.display(), n + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            let pose: usize = f[0].parse().map_err(|_| bad())?;
            let idx: usize = f[1].parse().map_err(|_| bad())?;
            let u: f64 = f[2].parse().map_err(|_| bad())?;
            let v: f64 = f[3].parse().map_err(|_| bad())?;
            match out.iter_mut().find(|o| o.device == device && o.pose_index == pose) {
                Some(o) => o.points.push((idx, Point2::new(u, v))),
                None => out.push(ViewObservation {
                    device,
                    pose_index: pose,
                    points: vec![(idx, Point2::new(u, v))],
                }),
            }
        }
    }
    Ok(out)
}

fn write_board_images(
    config: &SimConfig,
    out: &Path,
    rig: &Rig,
    poses: &[RigidTransform],
    info: &mut DatasetInfo,
) -> Result<()> {
    let mut sequence = config.sl.calib_sequence(FringeAxis::Vertical);
    sequence.extend(config.sl.calib_sequence(FringeAxis::Horizontal));
    for k in &sequence {
        k.validate(rig.projector.width as usize, rig.projector.height as usize)?;
    }
    let (texture, min, max) = super::texture::board_texture(&config.board);
    for (k, pose) in poses.iter().enumerate() {
        for (v, (device, cam)) in [(Device::Cam1, rig.cam1), (Device::Cam2, rig.cam2)].into_iter().enumerate() {
            let dir = out.join(device.name());
            mkdir(&dir)?;
            let opts = PlaneRenderOptions {
                pixel_sigma: config.noise.pixel_sigma,
                seed: sub_seed(config.seed, STAGE_BOARD + 20),
                stream: 2 * k as u64 + v as u64,
                ..PlaneRenderOptions::default()
            };
            render_board_view(&cam, &config.board, pose, &opts).write_pgm(dir.join(format!("board_{k:03}.pgm")))?;
        }
        // The fringe scan sees the board as a finite textured plane.
        let half = [(max[0] - min[0]) / 2.0, (max[1] - min[1]) / 2.0];
        let centre = Vector3::new((max[0] + min[0]) / 2.0, (max[1] + min[1]) / 2.0, 0.0);
        let texture = match &texture {
            Texture::Discs {
                centers,
                radius,
                disc,
                background,
            } => Texture::Discs {
                centers: centers.iter().map(|c| [c[0] - centre.x, c[1] - centre.y]).collect(),
                radius: *radius,
                disc: *disc,
                background: *background,
            },
            t => t.clone(),
        };
        let scene = Scene::new(vec![Surface::Plane {
            pose: pose.compose(&RigidTransform::from_translation(centre)),
            half_width: half[0],
            half_height: half[1],
            texture,
        }]);
        let opts = FringeOptions {
            ambient: config.sl.ambient,
            gain: config.sl.gain,
            pixel_sigma: config.noise.pixel_sigma,
            seed: sub_seed(config.seed, STAGE_BOARD * 1000 + k as u64),
        };
        let render = render_fringe_views(&scene, &rig.cam1, &rig.projector, &sequence, &opts);
        let dir = out.join("cam1").join(format!("board_{k:03}"));
        mkdir(&dir)?;
        for (n, img) in render.frames.iter().enumerate() {
            img.write_pgm(dir.join(format!("frame_{n:03}.pgm")))?;
        }
    }
    info.board_images = true;
    info.calib_sequence = sequence;
    Ok(())
}

/// Pixels of the sweep image mapped to the world with the true poses.
pub fn true_world_point(probe: &ProbeCalibration, frame: &SweepFrame, pixel: &Point2) -> Point3 {
    map_pixel_to_world(probe, &frame.true_pose, pixel)
}
