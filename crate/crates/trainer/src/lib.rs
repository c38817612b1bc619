//! Training, evaluation, ablation and gradient checking for the dcrnet
//! segmentation model.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod train;

pub use config::{DataSource, RunConfig};
pub use error::{Error, Result};
