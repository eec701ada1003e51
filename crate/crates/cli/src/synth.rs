use std::path::Path;

use mvrm_core::data::synth::{captions, events, multirate, write_corpus, CaptionSpec, EventSpec, MultirateSpec};
use mvrm_core::Error;

use crate::{CmdResult, SynthKind};

pub fn run(kind: SynthKind, out: &Path, seed: u64, count: Option<usize>) -> CmdResult {
    if count == Some(0) {
        return Err(Error::InvalidArgument("--count must be at least 1".into()).into());
    }
    let videos = match kind {
        SynthKind::Multirate => {
            let d = MultirateSpec::default();
            multirate(&MultirateSpec { seed, count: count.unwrap_or(d.count), ..d })
        }
        SynthKind::Events => {
            let d = EventSpec::default();
            events(&EventSpec { seed, train: count.unwrap_or(d.train), ..d })
        }
        SynthKind::Captions => {
            let d = CaptionSpec::default();
            captions(&CaptionSpec { seed, count: count.unwrap_or(d.count), ..d })
        }
    };
    let manifest = write_corpus(out, &videos)?;
    println!("wrote {} videos to {}", manifest.entries.len(), out.display());
    Ok(())
}
