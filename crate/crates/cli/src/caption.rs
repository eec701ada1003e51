use std::collections::HashMap;
use std::path::{Path, PathBuf};

use mvrm_core::caption::{corpus_bleu, decode_video, tokenize, CaptionModel, CaptionTrainer, Vocab};
use mvrm_core::config::{Precision, RunConfig};
use mvrm_core::data::{read_captions, write_decoded, DecodedCaption, Manifest, Split};
use mvrm_core::seq2seq::{load_checkpoint, save_checkpoint};
use mvrm_core::{Error, ParamStore, Real, RngState, Tensor};

use crate::runlog::{self, StepLog, CKPT_FILE};
use crate::train::pretrained;
use crate::CmdResult;

pub const VOCAB_FILE: &str = "vocab.json";

fn captions_path(manifest: &Path, captions: Option<&Path>) -> PathBuf {
    captions.map_or_else(|| manifest.with_file_name("captions.jsonl"), Path::to_path_buf)
}

pub fn train(
    config: Option<&Path>,
    ckpt: Option<&Path>,
    manifest: &Path,
    captions: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> CmdResult {
    let cfg = runlog::load_config(config, seed)?;
    let captions = captions_path(manifest, captions);
    match cfg.precision {
        Precision::F32 => train_as::<f32>(&cfg, ckpt, manifest, &captions, out),
        Precision::F64 => train_as::<f64>(&cfg, ckpt, manifest, &captions, out),
    }
}

fn train_as<F: Real>(cfg: &RunConfig, ckpt: Option<&Path>, manifest: &Path, captions: &Path, out: &Path) -> CmdResult {
    let m = Manifest::load(manifest)?;
    let (entries, videos) = m.load_split::<F>(Split::Train)?;
    let index: HashMap<&str, usize> = entries.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
    let records: Vec<_> = read_captions(captions)?
        .into_iter()
        .filter_map(|r| index.get(r.id.as_str()).map(|&i| (i, r.caption)))
        .collect();
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no captions for train videos", captions.display())).into());
    }
    let vocab = Vocab::build(records.iter().map(|(_, c)| c.as_str()));
    let items: Vec<(usize, Vec<usize>)> = records.iter().map(|(i, c)| (*i, vocab.encode(c))).collect();
    let pre = pretrained::<F>(ckpt)?;
    runlog::prepare(out, cfg)?;
    let mut trainer = CaptionTrainer::new(&videos, items, vocab.len(), cfg, pre.as_ref())?;
    let mut log = StepLog::create(out)?;
    trainer.run(|s, l| log.step(s, l))?;
    log.finish()?;
    save_checkpoint(&out.join(CKPT_FILE), &trainer.store, cfg)?;
    vocab.save(&out.join(VOCAB_FILE))?;
    println!("vocabulary of {} tokens, {} captions", vocab.len(), records.len());
    Ok(())
}

pub fn decode(
    ckpt: &Path,
    vocab: Option<&Path>,
    manifest: &Path,
    beam: usize,
    greedy: bool,
    captions: Option<&Path>,
    out: &Path,
) -> CmdResult {
    if beam == 0 {
        return Err(Error::InvalidArgument("--beam must be at least 1".into()).into());
    }
    let vocab_path = vocab.map_or_else(|| ckpt.with_file_name(VOCAB_FILE), Path::to_path_buf);
    let vocab = Vocab::load(&vocab_path)?;
    let (_, cfg) = load_checkpoint::<f64>(ckpt)?;
    let search = Search { beam, greedy };
    match cfg.precision {
        Precision::F32 => decode_as::<f32>(ckpt, &vocab, manifest, search, captions, out),
        Precision::F64 => decode_as::<f64>(ckpt, &vocab, manifest, search, captions, out),
    }
}

#[derive(Clone, Copy)]
struct Search {
    beam: usize,
    greedy: bool,
}

fn decode_as<F: Real>(
    ckpt: &Path,
    vocab: &Vocab,
    manifest: &Path,
    search: Search,
    captions: Option<&Path>,
    out: &Path,
) -> CmdResult {
    let (src, cfg) = load_checkpoint::<F>(ckpt)?;
    let m = Manifest::load(manifest)?;
    let videos: Vec<Tensor<F>> = m.entries.iter().map(|e| m.load_features(e)).collect::<Result<_, _>>()?;
    let Some(first) = videos.first() else {
        return Err(Error::Data(format!("{}: manifest is empty", manifest.display())).into());
    };
    let mut store = ParamStore::new();
    let model = CaptionModel::new(&mut store, &cfg, first.cols(), vocab.len(), &mut RngState::new(cfg.seed))?;
    store
        .load_prefix(&src, "")
        .map_err(|e| Error::Data(format!("checkpoint does not fit the vocabulary and features: {e}")))?;

    let mut rows = Vec::with_capacity(videos.len());
    for (e, v) in m.entries.iter().zip(&videos) {
        let hyp = decode_video(&store, &model, v, &cfg, search.beam, search.greedy)?;
        let caption = vocab.decode(&hyp.tokens);
        println!("id={} logprob={:.6} caption=\"{}\"", e.id, hyp.logprob, caption);
        rows.push(DecodedCaption { id: e.id.clone(), caption, logprob: hyp.logprob });
    }
    write_decoded(out, &rows)?;

    if let Some(path) = captions {
        let mut refs: HashMap<String, Vec<Vec<String>>> = HashMap::new();
        for r in read_captions(path)? {
            refs.entry(r.id).or_default().push(tokenize(&r.caption));
        }
        let mut exact = 0;
        let mut pairs = Vec::new();
        for row in &rows {
            let Some(r) = refs.get(&row.id) else { continue };
            let cand = tokenize(&row.caption);
            if r.contains(&cand) {
                exact += 1;
            }
            pairs.push((cand, r.clone()));
        }
        if pairs.is_empty() {
            println!("no references for the decoded videos");
        } else {
            let b = corpus_bleu(&pairs, 4);
            println!(
                "exact={exact}/{} bleu1={:.4} bleu2={:.4} bleu3={:.4} bleu4={:.4}",
                pairs.len(),
                b[0],
                b[1],
                b[2],
                b[3]
            );
        }
    }
    Ok(())
}
