use std::path::PathBuf;

use super::checkpoint::save_checkpoint;
use super::recon::{eval_loss, reconstruct_loss, Direction, ReconModel, Regularization};
use super::window::{sample_window, ReconWindow};
use crate::config::RunConfig;
use crate::error::{invalid, Result};
use crate::numeric::{adam_step_where, clip_global_norm, Graph, ParamStore, Real, RngState, Tensor};

/// Picks which decoder trains on a batch; each is chosen with probability
/// one half.
#[derive(Debug, Clone)]
pub struct DecoderSelector {
    rng: RngState,
}

impl DecoderSelector {
    pub fn new(rng: RngState) -> Self {
        Self { rng }
    }

    pub fn next_direction(&mut self) -> Direction {
        if self.rng.bernoulli(0.5) {
            Direction::Past
        } else {
            Direction::Future
        }
    }
}

/// Independent random streams of a training run, all derived from its seed.
pub(crate) struct Streams {
    pub init: RngState,
    pub batch: RngState,
    pub select: RngState,
    pub dropout: RngState,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let root = RngState::new(seed);
        Self {
            init: root.fork(0),
            batch: root.fork(1),
            select: root.fork(2),
            dropout: root.fork(3),
        }
    }
}

/// What happened in one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub direction: Direction,
    pub grad_scale: f64,
}

/// Unsupervised trainer: encoder plus two reconstruction decoders, one of
/// which is dropped on every batch.
pub struct Pretrainer<'a, F> {
    corpus: &'a [Tensor<F>],
    cfg: RunConfig,
    pub store: ParamStore<F>,
    pub model: ReconModel,
    selector: DecoderSelector,
    batch_rng: RngState,
    dropout_rng: RngState,
    step: usize,
    checkpoint: Option<PathBuf>,
}

impl<'a, F: Real> Pretrainer<'a, F> {
    pub fn new(corpus: &'a [Tensor<F>], cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let Some(first) = corpus.first() else {
            return invalid("pretraining corpus is empty");
        };
        let dim = first.cols();
        if corpus.iter().any(|v| v.cols() != dim) {
            return invalid("all videos must share one feature width");
        }
        let mut streams = Streams::new(cfg.seed);
        let mut store = ParamStore::new();
        let model = ReconModel::from_config(&mut store, cfg, dim, &mut streams.init)?;
        Ok(Self {
            corpus,
            cfg: cfg.clone(),
            store,
            model,
            selector: DecoderSelector::new(streams.select),
            batch_rng: streams.batch,
            dropout_rng: streams.dropout,
            step: 0,
            checkpoint: None,
        })
    }

    /// Writes a checkpoint to `path` every `checkpoint_every` steps.
    pub fn with_checkpoint(mut self, path: PathBuf) -> Self {
        self.checkpoint = Some(path);
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn sample_batch(&mut self) -> Result<Vec<ReconWindow<F>>> {
        (0..self.cfg.batch_size)
            .map(|_| {
                let v = self.batch_rng.below(self.corpus.len());
                sample_window(&self.corpus[v], self.cfg.seq_len, &mut self.batch_rng)
            })
            .collect()
    }

    /// One batch: select a decoder, backpropagate through it and the
    /// encoder, clip, and update only the parameters that were used.
    pub fn step(&mut self) -> Result<StepLog> {
        let windows = self.sample_batch()?;
        let refs: Vec<&ReconWindow<F>> = windows.iter().collect();
        let direction = self.selector.next_direction();
        let mut g = Graph::new();
        let out = reconstruct_loss(
            &mut g,
            &self.store,
            &self.model,
            &refs,
            direction,
            self.cfg.huber_delta,
            Regularization::train(self.cfg.dropout),
            &mut self.dropout_rng,
        )?;
        g.backward(out.loss, &mut self.store)?;
        let scale = clip_global_norm(&mut self.store, self.cfg.clip_norm)?;
        let dropped = ReconModel::decoder_prefix(match direction {
            Direction::Past => Direction::Future,
            Direction::Future => Direction::Past,
        });
        adam_step_where(&mut self.store, &self.cfg.adam(), |name| !name.starts_with(dropped))?;
        self.step += 1;
        if let Some(path) = &self.checkpoint {
            let every = self.cfg.checkpoint_every;
            if every > 0 && self.step % every == 0 {
                save_checkpoint(path, &self.store, &self.cfg)?;
            }
        }
        Ok(StepLog {
            step: self.step,
            loss: g.scalar(out.loss).to_f64().unwrap_or(f64::NAN),
            direction,
            grad_scale: scale.to_f64().unwrap_or(f64::NAN),
        })
    }

    /// Runs `cfg.steps` steps, reporting each to `on_step`.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepLog)) -> Result<Vec<StepLog>> {
        let mut logs = Vec::with_capacity(self.cfg.steps);
        for _ in 0..self.cfg.steps {
            let log = self.step()?;
            on_step(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    /// Mean eval-mode loss of both decoders on fixed windows.
    pub fn eval(&self, windows: &[ReconWindow<F>]) -> Result<f64> {
        let past = eval_loss(&self.store, &self.model, windows, Direction::Past, self.cfg.huber_delta)?;
        let future = eval_loss(&self.store, &self.model, windows, Direction::Future, self.cfg.huber_delta)?;
        Ok(0.5 * (past + future))
    }
}

/// Fixed evaluation windows, one per video (cycling), drawn from `seed`.
pub fn eval_windows<F: Real>(corpus: &[Tensor<F>], k: usize, count: usize, seed: u64) -> Result<Vec<ReconWindow<F>>> {
    if corpus.is_empty() {
        return invalid("evaluation corpus is empty");
    }
    let mut rng = RngState::new(seed);
    (0..count)
        .map(|i| sample_window(&corpus[i % corpus.len()], k, &mut rng))
        .collect()
}

/// Convenience wrapper: train from scratch for `cfg.steps` steps.
pub fn train_unsupervised<F: Real>(
    corpus: &[Tensor<F>],
    cfg: &RunConfig,
    on_step: impl FnMut(&StepLog),
) -> Result<(ParamStore<F>, ReconModel, Vec<StepLog>)> {
    let mut trainer = Pretrainer::new(corpus, cfg)?;
    let logs = trainer.run(on_step)?;
    Ok((trainer.store, trainer.model, logs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> RunConfig {
        RunConfig {
            seq_len: 3,
            cell_size: 6,
            attention_size: 4,
            batch_size: 2,
            steps: 5,
            ..RunConfig::default()
        }
    }

    fn corpus() -> Vec<Tensor<f64>> {
        (0..3)
            .map(|v| Tensor::matrix(12, 2, (0..24).map(|i| ((i + v) as f64 * 0.3).sin()).collect()).unwrap())
            .collect()
    }

    #[test]
    fn selector_is_fair() {
        let mut sel = DecoderSelector::new(RngState::new(42).fork(2));
        let past = (0..10_000).filter(|_| sel.next_direction() == Direction::Past).count();
        let freq = past as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&freq), "{freq}");
    }

    #[test]
    fn only_one_decoder_gets_gradients() {
        let data = corpus();
        let mut t = Pretrainer::new(&data, &tiny_cfg()).unwrap();
        for _ in 0..6 {
            let log = t.step().unwrap();
            let past = t.store.has_nonzero_grad(ReconModel::PAST_PREFIX);
            let future = t.store.has_nonzero_grad(ReconModel::FUTURE_PREFIX);
            assert!(!(past && future));
            assert_eq!(past, log.direction == Direction::Past);
            assert!(t.store.has_nonzero_grad("enc."));
        }
    }

    #[test]
    fn dropped_decoder_is_frozen() {
        let data = corpus();
        let mut t = Pretrainer::new(&data, &tiny_cfg()).unwrap();
        for _ in 0..4 {
            let before = t.store.clone();
            let log = t.step().unwrap();
            let frozen = match log.direction {
                Direction::Past => ReconModel::FUTURE_PREFIX,
                Direction::Future => ReconModel::PAST_PREFIX,
            };
            for id in t.store.ids() {
                if t.store.name(id).starts_with(frozen) {
                    assert_eq!(t.store.value(id), before.value(id));
                }
            }
        }
    }

    #[test]
    fn decoders_share_no_parameters() {
        let data = corpus();
        let mut t = Pretrainer::new(&data, &tiny_cfg()).unwrap();
        let windows = eval_windows(&data, 3, 2, 1).unwrap();
        let before = eval_loss(&t.store, &t.model, &windows, Direction::Future, 0.5).unwrap();
        for id in t.store.ids().collect::<Vec<_>>() {
            if t.store.name(id).starts_with(ReconModel::PAST_PREFIX) {
                t.store.value_mut(id).data_mut().iter_mut().for_each(|v| *v += 0.3);
            }
        }
        let after = eval_loss(&t.store, &t.model, &windows, Direction::Future, 0.5).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn same_seed_same_losses() {
        let data = corpus();
        let run = || {
            let (_, _, logs) = train_unsupervised(&data, &tiny_cfg(), |_| {}).unwrap();
            logs.iter().map(|l| l.loss.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_corpus_rejected() {
        let data: Vec<Tensor<f64>> = Vec::new();
        assert!(Pretrainer::new(&data, &tiny_cfg()).is_err());
    }
}
