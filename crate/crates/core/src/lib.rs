pub mod arch;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod io;
pub mod network;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use arch::{param_count, ArchId, ArchitectureSpec};
pub use data::{Dataset, LabeledExample, Provenance};
pub use error::{Error, Result};
pub use network::Network;
pub use rng::Rng;
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
pub use train::{TrainConfig, TrainHistory};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
