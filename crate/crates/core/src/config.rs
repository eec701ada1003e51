//! Run configuration shared by every pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::AdamConfig;
use crate::recurrent::{CouplingMode, MgruConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Hyper-parameters of a run. Unknown keys are rejected when parsing.
///
/// Defaults follow the reference training setup except `cell_size`, which
/// is 64 rather than 1024 so that runs fit on a desk machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Segment length: frames per encoded clip and per reconstructed context.
    #[serde(rename = "K")]
    pub seq_len: usize,
    pub cell_size: usize,
    pub groups: usize,
    pub periods: Vec<usize>,
    /// Explicit group sizes; split `cell_size` evenly when absent.
    pub group_sizes: Option<Vec<usize>>,
    pub mode: CouplingMode,
    pub attention_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub huber_delta: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub steps: usize,
    pub precision: Precision,
    /// Width of the two hidden layers of the classification head.
    pub head_dim: usize,
    /// Linear SVM regularization constant.
    pub svm_c: f64,
    /// k-means centers per VLAD codebook.
    pub centers: usize,
    /// Target PCA dimension before VLAD; skipped when inputs are narrower.
    pub pca_dim: usize,
    pub kmeans_iters: usize,
    /// Encoder steps used at inference over whole videos.
    pub infer_steps: usize,
    /// Caption word-embedding width; `cell_size` when absent.
    pub embed_dim: Option<usize>,
    pub max_caption_len: usize,
    /// Whether caption training updates the pretrained encoder.
    pub finetune_encoder: bool,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seq_len: 30,
            cell_size: 64,
            groups: 3,
            periods: vec![1, 3, 6],
            group_sizes: None,
            mode: CouplingMode::FastToSlow,
            attention_size: 50,
            lr: 1e-4,
            clip_norm: 10.0,
            dropout: 0.5,
            weight_decay: 1e-4,
            huber_delta: 0.5,
            batch_size: 12,
            seed: 0,
            steps: 1000,
            precision: Precision::F32,
            head_dim: 1024,
            svm_c: 1.0,
            centers: 256,
            pca_dim: 256,
            kmeans_iters: 25,
            infer_steps: 150,
            embed_dim: None,
            max_caption_len: 20,
            finetune_encoder: true,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("K", self.seq_len),
            ("cell_size", self.cell_size),
            ("groups", self.groups),
            ("attention_size", self.attention_size),
            ("batch_size", self.batch_size),
            ("head_dim", self.head_dim),
            ("centers", self.centers),
            ("pca_dim", self.pca_dim),
            ("infer_steps", self.infer_steps),
            ("max_caption_len", self.max_caption_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return invalid(format!("config `{name}` must be at least 1"));
            }
        }
        if self.periods.len() != self.groups {
            return invalid(format!(
                "config `periods` has {} entries but `groups` is {}",
                self.periods.len(),
                self.groups
            ));
        }
        if !(self.lr > 0.0) {
            return invalid("config `lr` must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return invalid("config `clip_norm` must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid("config `dropout` must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return invalid("config `weight_decay` must be non-negative");
        }
        if !(self.huber_delta > 0.0) {
            return invalid("config `huber_delta` must be positive");
        }
        if !(self.svm_c > 0.0) {
            return invalid("config `svm_c` must be positive");
        }
        if self.embed_dim == Some(0) {
            return invalid("config `embed_dim` must be at least 1");
        }
        self.mgru()?;
        Ok(())
    }

    pub fn mgru(&self) -> Result<MgruConfig> {
        match &self.group_sizes {
            Some(sizes) => {
                if sizes.iter().sum::<usize>() != self.cell_size {
                    return invalid(format!(
                        "config `group_sizes` {sizes:?} must sum to cell_size {}",
                        self.cell_size
                    ));
                }
                MgruConfig::new(sizes.clone(), self.periods.clone(), self.mode)
            }
            None => MgruConfig::split_evenly(self.cell_size, self.periods.clone(), self.mode),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn embed_width(&self) -> usize {
        self.embed_dim.unwrap_or(self.cell_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.seq_len, 30);
        assert_eq!(cfg.attention_size, 50);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.clip_norm, 10.0);
        assert_eq!(cfg.dropout, 0.5);
        assert_eq!(cfg.weight_decay, 1e-4);
        assert_eq!(cfg.huber_delta, 0.5);
        assert_eq!(cfg.periods, vec![1, 3, 6]);
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"K": 10, "seed": 4}"#).unwrap();
        assert_eq!(cfg.seq_len, 10);
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.cell_size, 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(r#"{"learning_rate": 0.1}"#).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(RunConfig::from_json(r#"{"dropout": 1.0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"lr": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"K": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"groups": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"periods": [3, 1, 6]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"group_sizes": [1, 2, 3]}"#).is_err());
        assert!(RunConfig::from_json(r#"{"mode": "sideways"}"#).is_err());
    }
}
