//! Planar-target calibration of cameras and of the projector treated as an
//! inverse camera, with stereo extrinsics in the camera-1 frame.

mod board;
mod file;
mod grid;
mod projector;
mod refine;
mod stereo;
mod zhang;

pub use board::CalibrationBoard;
pub use file::{CalibrationFile, DeviceRecord};
pub use grid::{detect_board, detect_board_with};
pub use projector::projector_correspondences;
pub use refine::{
    calibrate_rig, refine_lm, CalibrationReport, Device, DeviceReport, DeviceSpec, RigCalibration, ViewObservation,
    ViewResidual,
};
pub use stereo::{stereo_extrinsics, StereoEstimate};
pub use zhang::{estimate_homography, intrinsics_from_homographies, pose_from_homography, MAX_CONDITION};
