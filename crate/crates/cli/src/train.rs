use std::path::Path;

use mvrm_core::classify::{mean_average_precision, Finetuner};
use mvrm_core::config::{Precision, RunConfig};
use mvrm_core::data::{Manifest, Split};
use mvrm_core::seq2seq::{eval_windows, load_checkpoint, save_checkpoint, Pretrainer};
use mvrm_core::{Error, ParamStore, Real, Tensor};
use serde_json::json;

use crate::runlog::{self, StepLog, CKPT_FILE, EVAL_FILE};
use crate::CmdResult;

/// Fixed held-out windows scored before and after pretraining.
const EVAL_WINDOWS: usize = 64;
const EVAL_SEED: u64 = 0x5eed;

pub fn pretrain(config: Option<&Path>, manifest: &Path, out: &Path, seed: Option<u64>) -> CmdResult {
    let cfg = runlog::load_config(config, seed)?;
    match cfg.precision {
        Precision::F32 => pretrain_as::<f32>(&cfg, manifest, out),
        Precision::F64 => pretrain_as::<f64>(&cfg, manifest, out),
    }
}

fn pretrain_as<F: Real>(cfg: &RunConfig, manifest: &Path, out: &Path) -> CmdResult {
    let m = Manifest::load(manifest)?;
    let (_, corpus) = m.load_split::<F>(Split::Train)?;
    if corpus.is_empty() {
        return Err(Error::Data(format!("{}: no train videos", manifest.display())).into());
    }
    runlog::prepare(out, cfg)?;
    let windows = eval_windows(&corpus, cfg.seq_len, EVAL_WINDOWS, EVAL_SEED)?;
    let mut trainer = Pretrainer::new(&corpus, cfg)?.with_checkpoint(out.join(CKPT_FILE));
    let initial = trainer.eval(&windows)?;
    let mut log = StepLog::create(out)?;
    trainer.run(|s| log.step(s.step, s.loss))?;
    log.finish()?;
    let last = trainer.eval(&windows)?;
    save_checkpoint(&out.join(CKPT_FILE), &trainer.store, cfg)?;
    runlog::write_json(
        &out.join(EVAL_FILE),
        &json!({ "windows": EVAL_WINDOWS, "recon_loss_initial": initial, "recon_loss": last }),
    )?;
    println!("recon_loss_initial={initial:.6} recon_loss={last:.6}");
    Ok(())
}

pub fn finetune(
    config: Option<&Path>,
    ckpt: Option<&Path>,
    manifest: &Path,
    out: &Path,
    seed: Option<u64>,
) -> CmdResult {
    let cfg = runlog::load_config(config, seed)?;
    match cfg.precision {
        Precision::F32 => finetune_as::<f32>(&cfg, ckpt, manifest, out),
        Precision::F64 => finetune_as::<f64>(&cfg, ckpt, manifest, out),
    }
}

pub fn labels_of(m: &Manifest, split: Split) -> Result<Vec<usize>, Error> {
    m.split(split)
        .iter()
        .map(|e| e.label.ok_or_else(|| Error::Data(format!("video `{}` has no label", e.id))))
        .collect()
}

/// Pretrained parameters from `ckpt`, converted to the run's precision.
pub fn pretrained<F: Real>(ckpt: Option<&Path>) -> Result<Option<ParamStore<F>>, Error> {
    ckpt.map(|p| load_checkpoint::<F>(p).map(|(store, _)| store)).transpose()
}

fn finetune_as<F: Real>(cfg: &RunConfig, ckpt: Option<&Path>, manifest: &Path, out: &Path) -> CmdResult {
    let m = Manifest::load(manifest)?;
    let (_, corpus) = m.load_split::<F>(Split::Train)?;
    let labels = labels_of(&m, Split::Train)?;
    let num_classes = labels.iter().copied().max().unwrap_or(0);
    if num_classes == 0 {
        return Err(Error::Data(format!("{}: no labeled event videos in the train split", manifest.display())).into());
    }
    let pre = pretrained::<F>(ckpt)?;
    runlog::prepare(out, cfg)?;
    let mut ft = Finetuner::new(&corpus, &labels, num_classes, cfg, pre.as_ref())?;
    let mut log = StepLog::create(out)?;
    ft.run(|s, l| log.step(s, l))?;
    log.finish()?;
    save_checkpoint(&out.join(CKPT_FILE), &ft.store, cfg)?;

    let (_, test) = m.load_split::<F>(Split::Test)?;
    if test.is_empty() {
        runlog::write_json(&out.join(EVAL_FILE), &json!({ "videos": 0 }))?;
        println!("no test videos");
        return Ok(());
    }
    let truth = labels_of(&m, Split::Test)?;
    let classes: Vec<usize> = (1..=num_classes).collect();
    let mut scores = vec![Vec::with_capacity(test.len()); num_classes];
    for video in &test {
        let states = ft.states(video)?;
        let last = Tensor::row(states.row_slice(states.rows() - 1)).cast::<F>();
        let p = ft.head.probabilities(&ft.store, &last)?;
        for (c, s) in scores.iter_mut().enumerate() {
            s.push(p.row_slice(0)[c + 1].to_f64().unwrap_or(f64::NAN));
        }
    }
    let r = mean_average_precision(&scores, &truth, &classes)?;
    runlog::write_json(
        &out.join(EVAL_FILE),
        &json!({ "videos": test.len(), "mAP": r.map, "per_class": r.per_class }),
    )?;
    println!("mAP={:.4}", r.map);
    Ok(())
}
