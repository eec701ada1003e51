//! On-disk formats and synthetic corpora.

mod features;
mod manifest;
pub mod synth;

pub use features::{decode_features, encode_features, read_features, write_features};
pub use manifest::{
    read_captions, read_decoded, write_captions, write_decoded, CaptionRecord, DecodedCaption, Manifest,
    ManifestEntry, Split,
};
