//! 4D panoptic LiDAR segmentation: volume formation, density-based clustering,
//! cross-window tracking, the LSTQ metric family and supporting tooling.

pub mod classes;
pub mod cli;
pub mod clustering;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod kitti_io;
pub mod losses;
pub mod metrics;
pub mod sampling;
pub mod spatial;
pub mod synth;
pub mod tracking;
pub mod volume4d;

pub use error::{Error, Result};
