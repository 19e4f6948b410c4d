//! Dense `f64` tensors with tape-based reverse-mode differentiation.

pub(crate) mod conv;
mod optim;
mod params;
mod tape;
mod tensor;

pub use conv::ConvGeom;
pub use optim::Sgd;
pub use params::{ParamId, ParamStore};
pub use tape::{concat_channels, conv2d, relu, sigmoid, sigmoid_tensor, Tape, Var};
pub use tensor::Tensor;
