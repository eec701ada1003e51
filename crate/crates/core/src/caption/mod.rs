//! Caption generation: vocabulary, attention decoder over word
//! embeddings, beam search and BLEU.

mod beam;
mod bleu;
mod model;
mod vocab;

pub use beam::{beam_search, greedy_search, BeamHyp, SearchConfig, StepModel};
pub use bleu::{bleu, corpus_bleu, modified_precision, BleuScore, BleuStatus};
pub(crate) use model::stack_frames;
pub use model::{caption_nll, caption_search, decode_video, CaptionModel, CaptionTrainer, DecodeSession};
pub use vocab::{caption_pair, tokenize, Vocab, EOS, GO, PAD, UNK};
