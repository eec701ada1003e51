//! VLAD aggregation of per-step encoder states.

mod codebook;
mod kmeans;
mod pca;
mod vlad;

pub use codebook::Codebook;
pub use kmeans::{kmeans_fit, nearest, KmeansFit};
pub use pca::Pca;
pub use vlad::{
    encode_groups, intra_normalize, l2_normalize, late_fuse, ssr, vlad_encode, vlad_residuals, Normalization,
    VladStatus, VladVector,
};
