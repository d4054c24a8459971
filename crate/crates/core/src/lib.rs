//! Simulation and reconstruction toolkit for IMU-based motion compensation
//! in weight-bearing cone-beam CT.

pub mod error;
pub mod experiment;
pub mod geometry;
pub mod image;
pub mod imu;
pub mod io;
pub mod metrics;
pub mod moco;
pub mod phantom;
pub mod pose;
pub mod recon;
pub mod rotation;
pub mod volume;

pub use error::{Error, Result};
pub use geometry::{ProjectionMatrix, ScanConfig, ScanGeometry};
pub use image::{Image2D, ProjectionStack};
pub use rotation::{Affine4, Mat3, Vec3};
pub use volume::{Grid, Volume, VolumeSpec};
