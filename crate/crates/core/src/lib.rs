//! Simulator for vision-tactile fusion sensors.

pub mod camera;
pub mod config;
pub mod conversion;
pub mod dataset;
pub mod error;
pub mod frame;
pub mod mechanics;
pub mod optics;
pub mod perception;
pub mod protocol;
pub mod sensor;
pub mod stimulus;
pub mod tasks;

pub use error::{Error, Result};
