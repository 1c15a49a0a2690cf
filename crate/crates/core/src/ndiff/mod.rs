//! Small differentiable-numerics substrate.
//!
//! Every primitive comes as a forward function plus a hand-written adjoint;
//! the model composes them statically instead of recording a tape.

pub mod activation;
pub mod attention;
pub mod conv;
pub mod gradcheck;
pub mod gru;
pub mod linear;
pub mod pool;
pub mod suite;
mod tensor;
pub mod transformer;

pub use activation::{gelu, layer_norm, relu, sigmoid, sigmoid_scalar, softmax, tanh};
pub use attention::{multi_head_self_attention, MhsaParams};
pub use conv::{conv1d, conv1d_backward, conv1d_out_len};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, TensorCheck};
pub use gru::{bigru, gru_cell, GruCellParams};
pub use linear::{linear, linear_backward};
pub use pool::mean_pool;
#[doc(hidden)]
pub use tensor::join as tensor_join;
pub use tensor::{Parameters, TensorD};
pub use transformer::{transformer_block, BlockParams};
