//! Multirate visual recurrent models.
//!
//! A multirate GRU encoder whose hidden state is split into clocked groups,
//! trained without labels by reconstructing the clips before and after the
//! encoded one, plus the pipelines that consume the learned encoder:
//! VLAD-aggregated or average-pooled event classification, and
//! attention-based caption generation.

mod binio;
pub mod encoding;
pub mod error;
pub mod gradsuite;
pub mod caption;
pub mod classify;
pub mod config;
pub mod data;
pub mod numeric;
pub mod recurrent;
pub mod seq2seq;

pub use error::{Error, Result};
pub use numeric::{Graph, NodeId, ParamId, ParamStore, Real, RngState, Tensor};
