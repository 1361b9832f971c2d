//! Layers, reverse-mode differentiation and gradient verification.

pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod tape;

pub use gradcheck::{gradient_check, relative_error, GradCheck, DEFAULT_EPS};
pub use kernels::{ConvGeometry, Padding};
pub use layers::{
    activation, conv2d, dense, dropout, glorot_uniform, lstm, Activation, ConvParams, DenseParams,
    LstmParams, Mode,
};
pub use tape::{Gradients, ParamId, Tape, Var, PROB_FLOOR};
