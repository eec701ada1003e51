use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{invalid, Error, Result};

pub const GO: usize = 0;
pub const PAD: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<GO>", "<PAD>", "<EOS>", "<UNK>"];

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Token table with the four reserved entries first; remaining tokens are
/// in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        for w in words {
            if index.contains_key(&w) {
                return invalid(format!("duplicate vocabulary entry `{w}`"));
            }
            index.insert(w.clone(), tokens.len());
            tokens.push(w);
        }
        Ok(Self { tokens, index })
    }

    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = captions
            .into_iter()
            .flat_map(tokenize)
            .filter(|w| !RESERVED.contains(&w.as_str()))
            .collect();
        Self::from_tokens(words).expect("set entries are unique")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Words up to the first `<EOS>`, skipping `<GO>` and `<PAD>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != GO && i != PAD)
            .map(|&i| self.tokens.get(i).map_or("<UNK>", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.tokens[RESERVED.len()..])?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let words: Vec<String> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_tokens(words).map_err(|e| Error::Data(e.to_string()))
    }
}

/// Decoder inputs and targets for one caption: inputs are `<GO> w_1..w_N`,
/// targets `w_1..w_N <EOS>`, both padded with `<PAD>` to `max_len + 1`.
/// Longer captions are cut to `max_len` words.
pub fn caption_pair(words: &[usize], max_len: usize) -> (Vec<usize>, Vec<usize>) {
    let n = if words.len() > max_len {
        log::warn!("caption of {} tokens truncated to {max_len}", words.len());
        max_len
    } else {
        words.len()
    };
    let mut inputs = vec![PAD; max_len + 1];
    let mut targets = vec![PAD; max_len + 1];
    inputs[0] = GO;
    inputs[1..=n].copy_from_slice(&words[..n]);
    targets[..n].copy_from_slice(&words[..n]);
    targets[n] = EOS;
    (inputs, targets)
}
