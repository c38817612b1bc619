//! Duplex contextual-relation segmentation: within-image position attention,
//! cross-image attention over a FIFO bank of region embeddings, and the
//! small encoder–decoder, losses, metrics and data pipeline around them.

pub mod attention;
pub mod data;
pub mod error;
pub mod losses;
pub mod memory;
pub mod metrics;
pub mod network;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{BatchNormState, Tape, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type RegionMemory32 = memory::RegionMemory<f32>;
pub type Network32 = network::Network<f32>;
pub type Network64 = network::Network<f64>;
