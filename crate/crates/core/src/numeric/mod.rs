//! Deterministic tensor math, reverse-mode gradients, initialization and
//! optimization.

mod graph;
mod init;
mod optim;
mod params;
mod real;
mod rng;
mod tensor;

pub mod gradcheck;

pub use graph::{huber_grad, huber_value, Graph, NodeId};
pub(crate) use graph::{dropout_mask, log_sum_exp};
pub use init::{dropout, glorot_bound, glorot_uniform};
pub use optim::{adam_step, adam_step_where, clip_global_norm, global_grad_norm, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use real::{axpy, dot, sigmoid, Real};
pub use rng::RngState;
pub use tensor::Tensor;
