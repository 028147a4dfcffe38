//! `mmscan`: simulate, calibrate, reconstruct, track, fuse and evaluate.
//!
//! Exit status: 0 on success, 2 for degenerate input, 3 when an optimizer
//! does not converge, 1 for any other failure.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mmscan_core::pipeline::{
    cmd_calibrate, cmd_evaluate, cmd_fuse, cmd_reconstruct, cmd_simulate, cmd_track, CalibrationMode, PipelineConfig,
};
use mmscan_core::simulator::{NoiseModel, Protocol};
use mmscan_core::Error;

#[derive(Parser, Debug)]
#[command(name = "mmscan", version, about = "Structured-light and tracked ultrasound imaging in one world frame")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML configuration file (sections: simulate, calibrate, fuse, output).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed for `simulate`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Leave timestamps and timings out of reports.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Write binary PLY.
    #[arg(long, global = true)]
    binary_ply: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with ground truth.
    Simulate {
        /// probe-calib-5x30, plane-5poses, sphere, concentric-cylinders,
        /// breast-analog or rig-calib.
        #[arg(long)]
        protocol: Option<String>,
        /// B-scans per sweep.
        #[arg(long)]
        frames: Option<usize>,
        /// Turn every noise source off.
        #[arg(long)]
        noiseless: bool,
    },
    /// Estimate camera, projector or probe calibration.
    Calibrate {
        dataset: PathBuf,
        /// stereo, projector, rig or probe.
        #[arg(long)]
        mode: Option<String>,
        /// Existing calibration to extend.
        #[arg(long)]
        calib: Option<PathBuf>,
    },
    /// Triangulate every structured-light scan to PLY.
    Reconstruct {
        dataset: PathBuf,
        #[arg(long)]
        calib: PathBuf,
    },
    /// Estimate probe poses from the stereo marker views.
    Track {
        dataset: PathBuf,
        #[arg(long)]
        calib: PathBuf,
    },
    /// Map B-scan echoes into the world frame and merge with a surface cloud.
    Fuse {
        dataset: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        /// Surface cloud from `reconstruct`.
        #[arg(long)]
        cloud: PathBuf,
        /// Probe poses (default: the dataset's poses.txt).
        #[arg(long)]
        poses: Option<PathBuf>,
    },
    /// Compare results with the dataset's ground truth.
    Evaluate {
        dataset: PathBuf,
        /// Directory holding the products of earlier commands.
        #[arg(long)]
        results: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    let mut config = match &g.config {
        Some(p) => PipelineConfig::read(p).with_context(|| format!("reading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    config.output.deterministic |= g.deterministic;
    config.output.binary_ply |= g.binary_ply;
    let output = config.output;
    match cli.command {
        Command::Simulate {
            protocol,
            frames,
            noiseless,
        } => {
            let mut sim = config.simulate;
            if let Some(p) = protocol {
                sim.protocol = Protocol::parse(&p)?;
            }
            if let Some(s) = g.seed {
                sim.seed = s;
            }
            if frames.is_some() {
                sim.frames = frames;
            }
            if noiseless {
                sim.noise = NoiseModel::none();
            }
            let info = cmd_simulate(&sim, &g.out)?;
            println!(
                "{}: seed {}, {} scans, {} B-scans, {} board poses -> {}",
                info.protocol.name(),
                info.seed,
                info.scans,
                info.frames,
                info.board_poses,
                g.out.display()
            );
        }
        Command::Calibrate { dataset, mode, calib } => {
            let mut c = config.calibrate;
            if let Some(m) = mode {
                c.mode = CalibrationMode::parse(&m)?;
            }
            let r = cmd_calibrate(&dataset, &c, calib.as_deref(), &g.out, &output)?;
            if let Some(rms) = r.rms_px {
                println!("reprojection rms {rms:.6} px over {} views", r.views);
                for d in &r.devices {
                    println!("  {}: rms {:.6} px", d.device.name(), d.rms_px);
                }
            }
            for p in &r.probe {
                println!(
                    "probe {}: rms {:.4} mm, {} of {} frames, rotation [{:.6}, {:.6}, {:.6}] rad, translation [{:.4}, {:.4}, {:.4}] mm, sx {:.6}, sy {:.6}, cross point [{:.4}, {:.4}, {:.4}] mm",
                    p.sweep,
                    p.rms_mm,
                    p.segmented,
                    p.frames,
                    p.rotation[0],
                    p.rotation[1],
                    p.rotation[2],
                    p.translation_mm[0],
                    p.translation_mm[1],
                    p.translation_mm[2],
                    p.sx,
                    p.sy,
                    p.cross_point[0],
                    p.cross_point[1],
                    p.cross_point[2]
                );
            }
            if let Some(cr) = &r.reproducibility {
                println!("CR1 {:.4} mm, CR2 {:.4} mm (means over trial points)", cr.mean_cr1_mm, cr.mean_cr2_mm);
            }
        }
        Command::Reconstruct { dataset, calib } => {
            let r = cmd_reconstruct(&dataset, &calib, &g.out, &output)?;
            for s in &r.scans {
                print!("scan {}: {} points", s.scan, s.points);
                if let Some(rms) = s.plane_rms_mm {
                    print!(", plane rms {rms:.4} mm");
                }
                if let (Some(r), Some(rms)) = (s.sphere_radius_mm, s.sphere_rms_mm) {
                    print!(", sphere radius {r:.4} mm rms {rms:.4} mm");
                }
                println!();
            }
        }
        Command::Track { dataset, calib } => {
            let r = cmd_track(&dataset, &calib, &g.out, &output)?;
            println!(
                "tracked {} of {} frames, mean residual {:.4} px",
                r.tracked, r.frames, r.mean_residual_px
            );
        }
        Command::Fuse {
            dataset,
            calib,
            cloud,
            poses,
        } => {
            let r = cmd_fuse(&dataset, &calib, &cloud, poses.as_deref(), &config.fuse, &g.out, &output)?;
            println!("{} surface and {} ultrasound points in frame {}", r.sl_points, r.us_points, r.frame);
            if let Some(d) = r.gap_mm {
                println!("cylinder gap {d:.4} mm");
            }
            for c in &r.inclusions {
                println!(
                    "inclusion r {:.3} mm at [{:.2}, {:.2}, {:.2}], inside {:.3}",
                    c.radius_mm, c.center[0], c.center[1], c.center[2], c.inside_fraction
                );
            }
        }
        Command::Evaluate { dataset, results } => {
            let r = cmd_evaluate(&dataset, &results, &g.out, &output)?;
            println!("{}", mmscan_core::kv::to_string(&r)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(1, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
