//! Multimodal 3D imaging toolkit: structured-light surface reconstruction and
//! tracked freehand ultrasound, both expressed in the camera-1 world frame so
//! that the two modalities fuse without registration.
//!
//! Modules:
//!
//! - [`geometry`] rigid transforms, pinhole cameras, triangulation
//! - [`slcodec`] fringe and Gray-code patterns, phase retrieval, unwrapping
//! - [`calib`] planar-target calibration of cameras and the projector
//! - [`markerpose`] three-circle target detection and probe pose
//! - [`usfreehand`] ultrasound probe calibration and reproducibility metrics
//! - [`geomfit`] plane, sphere and cylinder fitting
//! - [`simulator`] ray-cast synthetic scenes with ground truth
//! - [`pipeline`] file formats and the command implementations

pub mod calib;
pub mod cloud;
pub mod error;
pub mod geometry;
pub mod geomfit;
pub mod image;
pub mod kv;
pub mod lm;
pub mod markerpose;
pub mod pipeline;
pub mod simulator;
pub mod slcodec;
pub mod usfreehand;

pub use error::{Error, Result};
pub use geometry::{CameraModel, Point2, Point3, RigidTransform};
