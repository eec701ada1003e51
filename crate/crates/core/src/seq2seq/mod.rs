//! Attention decoders and unsupervised bidirectional reconstruction.

mod attention;
mod checkpoint;
mod recon;
mod trainer;
mod window;

pub use attention::{attend_decode_step, AttnDecoderWeights, AttnDims, AttnMemory, DecodeStep, EncoderTrace};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use recon::{eval_loss, reconstruct_loss, Direction, Encoder, ReconModel, ReconOutput, Regularization};
pub(crate) use trainer::Streams;
pub use trainer::{eval_windows, train_unsupervised, DecoderSelector, Pretrainer, StepLog};
pub use window::{sample_window, ReconWindow};

use crate::numeric::{huber_value, Real};

/// Huber threshold; 0.5 unless configured otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberParams {
    pub delta: f64,
}

impl Default for HuberParams {
    fn default() -> Self {
        Self { delta: 0.5 }
    }
}

/// Huber loss of a single residual: quadratic within `delta`, linear beyond.
pub fn huber<F: Real>(y: F, y_hat: F, p: HuberParams) -> F {
    huber_value(y - y_hat, F::lit(p.delta))
}
