pub mod doa;
pub mod error;
pub mod geometry;
pub mod imaging;
pub mod linalg;
pub mod metrics;
pub mod sigproc;
pub mod simulator;
pub mod upsampler;
pub mod wav;

pub use error::{Error, Result};
