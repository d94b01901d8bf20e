pub mod calibrate;
pub mod container;
pub mod control;
pub mod dataset;
pub mod demo;
pub mod error;
pub mod features;
pub mod fno;
pub mod params;
pub mod plane;
pub mod sim;
pub mod surrogate;
pub mod thermo;

pub use error::{Error, Result};
