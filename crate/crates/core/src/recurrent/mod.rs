//! GRU cell and the multirate GRU with clocked state groups.

mod gru;
mod mgru;

pub use gru::{gru_step, GruWeights};
pub use mgru::{
    mgru_step, unroll, CouplingMode, GroupWeights, MgruConfig, MgruState, MgruWeights, Unrolled,
};
