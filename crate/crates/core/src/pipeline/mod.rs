//! Command implementations behind the `mmscan` binary.
//!
//! Every command reads a dataset directory written by [`cmd_simulate`] (or
//! laid out the same way by hand) and writes its products plus a TOML report
//! into an output directory. Inputs are never modified.

mod calibrate;
mod evaluate;
mod fuse;
mod reconstruct;
mod track;

pub use calibrate::{cmd_calibrate, CalibrateConfig, CalibrateReport, CalibrationMode, ProbeEntry};
pub use evaluate::{
    cmd_evaluate, DeviceError, EvaluateReport, FusionMetrics, ProbeError, Reproducibility, SurfaceMetrics,
    TrackingMetrics,
};
pub use fuse::{
    cmd_fuse, containment, CylinderEcho, FuseConfig, FuseReport, FusionResult, InclusionEcho, WORLD_FRAME,
};
pub use reconstruct::{cmd_reconstruct, reconstruct_scan, ReconstructReport, ScanReport};
pub use track::{cmd_track, FrameFailure, TrackReport};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::calib::CalibrationFile;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::simulator::{run_protocol, DatasetInfo, SimConfig};

/// Contents of the `--config` file; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub simulate: SimConfig,
    pub calibrate: CalibrateConfig,
    pub fuse: FuseConfig,
    pub output: OutputConfig,
}

impl PipelineConfig {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        crate::kv::read(path)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    /// Leave timestamps and timings out of reports.
    pub deterministic: bool,
    /// Write binary little-endian PLY instead of ASCII.
    pub binary_ply: bool,
}

/// First table of every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub command: String,
    pub version: String,
    pub generated_unix: Option<u64>,
}

impl Header {
    pub fn new(command: &str, output: &OutputConfig) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            generated_unix: (!output.deterministic)
                .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())),
        }
    }
}

/// A dataset directory and its `dataset.toml`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub info: DatasetInfo,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let info = crate::kv::read(root.join("dataset.toml"))?;
        Ok(Self { root, info })
    }

    /// Directory of sweep `k` (the root unless the dataset has subsets).
    pub fn sweep_dirs(&self) -> Vec<(String, PathBuf)> {
        if self.info.subsets.is_empty() {
            vec![(".".to_string(), self.root.clone())]
        } else {
            self.info.subsets.iter().map(|s| (s.clone(), self.root.join(s))).collect()
        }
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))
}

/// `frame_000.pgm`, `frame_001.pgm`, ... of one capture directory.
pub(crate) fn read_frames(dir: &Path, count: usize) -> Result<Vec<GrayImage>> {
    (0..count).map(|n| GrayImage::read_pgm(dir.join(format!("frame_{n:03}.pgm")))).collect()
}

pub(crate) fn read_calibration(path: &Path) -> Result<CalibrationFile> {
    CalibrationFile::read(path)
}

/// Writes a simulated dataset; see [`run_protocol`].
pub fn cmd_simulate(config: &SimConfig, out: impl AsRef<Path>) -> Result<DatasetInfo> {
    let out = out.as_ref();
    run_protocol(config, out)?;
    crate::kv::write(out.join("config.toml"), config)?;
    Dataset::open(out).map(|d| d.info)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_sections_are_optional() {
        let c: PipelineConfig = crate::kv::from_str("[output]\ndeterministic = true\n").unwrap();
        assert!(c.output.deterministic);
        assert_eq!(c.simulate, SimConfig::default());
        let text = crate::kv::to_string(&PipelineConfig::default()).unwrap();
        assert_eq!(crate::kv::from_str::<PipelineConfig>(&text).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn header_timestamp_is_suppressed_when_deterministic() {
        let det = OutputConfig {
            deterministic: true,
            ..Default::default()
        };
        assert_eq!(Header::new("x", &det).generated_unix, None);
        assert!(Header::new("x", &OutputConfig::default()).generated_unix.is_some());
    }

    #[test]
    fn missing_dataset_file_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::open(dir.path()), Err(Error::Io(_))));
    }
}
