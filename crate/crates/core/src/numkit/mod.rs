//! Dense matrices, small feed-forward networks, and reverse-mode gradients.

mod adam;
mod gradcheck;
mod matrix;
mod mlp;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, DEFAULT_EPS};
pub use matrix::{dot, matmul, matmul_transa, matmul_transb, Matrix};
pub use mlp::{Activation, Layer, Mlp};
pub use tape::{log_sigmoid, normalize_rows, sigmoid, Gradients, NodeId, ParamId, Tape};
