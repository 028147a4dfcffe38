//! Ray-cast synthetic data with ground truth: fringe captures, marker and
//! calibration-board views, tracked B-scans and complete on-disk datasets.
//!
//! Every stochastic draw comes from a seeded ChaCha stream keyed by frame and
//! row, so renders are bit-identical whatever the thread schedule.

mod fringe;
mod protocol;
mod scene;
mod texture;
mod ultrasound;

pub use fringe::{render_fringe_views, FringeOptions, FringeRender, FringeTruth};
pub use protocol::{
    board_observations, board_poses, read_observations, run_protocol, true_world_point, write_observations,
    DatasetInfo, Protocol, ProtocolTruth, SimConfig, SlSettings, SlUnwrap, SweepFrame, SweepRecording, PROTOCOLS,
};
pub use scene::{in_view, Hit, Rig, Scene, Surface, Texture};
pub use texture::{
    board_texture, render_board_view, render_marker_views, render_plane_view, MarkerRender, MarkerRenderOptions,
    PlanePrint, PlaneRenderOptions,
};

pub use ultrasound::{
    nominal_probe, synth_bscan, BScanOptions, BScanTruth, PhantomFeature, BSCAN_DEPTH_MM, BSCAN_HEIGHT, BSCAN_WIDTH,
    BSCAN_WIDTH_MM,
};


use serde::{Deserialize, Serialize};

/// Noise levels of a simulated acquisition. All zero gives exact data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Camera pixel noise (gray levels).
    pub pixel_sigma: f64,
    /// Tracking error of recorded probe poses.
    pub pose_sigma_deg: f64,
    pub pose_sigma_mm: f64,
    /// Jitter of the cross-wire echo in B-scans (px).
    pub seg_sigma_px: f64,
    /// Log-normal speckle in B-scans.
    pub speckle_sigma: f64,
    /// Noise on calibration-board observations (px) when generated
    /// directly instead of rendered.
    pub obs_sigma_px: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            pixel_sigma: 1.0,
            pose_sigma_deg: 0.1,
            pose_sigma_mm: 0.1,
            seg_sigma_px: 0.5,
            speckle_sigma: 0.2,
            obs_sigma_px: 0.1,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            pixel_sigma: 0.0,
            pose_sigma_deg: 0.0,
            pose_sigma_mm: 0.0,
            seg_sigma_px: 0.0,
            speckle_sigma: 0.0,
            obs_sigma_px: 0.0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        *self == Self::none()
    }
}
