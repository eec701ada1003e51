use super::head::ClassifierHead;
use crate::config::RunConfig;
use crate::error::{invalid, Result};
use crate::numeric::{adam_step, clip_global_norm, Graph, ParamStore, Real, RngState, Tensor};
use crate::seq2seq::{sample_window, Encoder, Regularization, Streams};

/// Indices for one batch: a third drawn uniformly from the positive
/// (non-background) videos and two thirds from the background ones.
pub fn biased_batch(labels: &[usize], batch_size: usize, rng: &mut RngState) -> Result<Vec<usize>> {
    if batch_size == 0 || batch_size % 3 != 0 {
        return invalid(format!("batch size {batch_size} is not a positive multiple of 3"));
    }
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 0).collect();
    let background: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if positives.is_empty() {
        return invalid("no positive videos to sample");
    }
    if background.is_empty() {
        return invalid("no background videos to sample");
    }
    let n_pos = batch_size / 3;
    let mut batch = Vec::with_capacity(batch_size);
    batch.extend((0..n_pos).map(|_| positives[rng.below(positives.len())]));
    batch.extend((0..batch_size - n_pos).map(|_| background[rng.below(background.len())]));
    Ok(batch)
}

/// Mean over steps.
pub fn pool_average(outputs: &Tensor<f64>) -> Result<Vec<f64>> {
    let s = outputs.rows();
    if s == 0 {
        return invalid("cannot average zero steps");
    }
    let mut mean = vec![0.0; outputs.cols()];
    for r in 0..s {
        for (m, v) in mean.iter_mut().zip(outputs.row_slice(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= s as f64);
    Ok(mean)
}

/// Frames fed to the encoder at inference: the whole video when it fits in
/// `max_steps`, otherwise `max_steps` frames evenly spread over it.
pub fn inference_frames(t: usize, max_steps: usize) -> Vec<usize> {
    if t <= max_steps {
        (0..t).collect()
    } else {
        (0..max_steps).map(|i| i * t / max_steps).collect()
    }
}

/// Hidden states (`steps x state_dim`) of the encoder run in evaluation
/// mode over one video.
pub fn infer_states<F: Real>(store: &ParamStore<F>, encoder: &Encoder, video: &Tensor<F>, max_steps: usize) -> Result<Tensor<f64>> {
    let idx = inference_frames(video.rows(), max_steps);
    let frames: Vec<Tensor<F>> = idx.iter().map(|&i| Tensor::row(video.row_slice(i))).collect();
    let mut g = Graph::new();
    let mut unused = RngState::new(0);
    let trace = encoder.encode(&mut g, store, &frames, Regularization::eval(), &mut unused)?;
    let n = encoder.state_dim();
    let mut out = Vec::with_capacity(trace.states.len() * n);
    for &s in &trace.states {
        out.extend(g.value(s).data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)));
    }
    Tensor::matrix(trace.states.len(), n, out)
}

/// Supervised training of encoder plus head on the final hidden state of
/// each clip.
pub struct Finetuner<'a, F> {
    corpus: &'a [Tensor<F>],
    labels: &'a [usize],
    cfg: RunConfig,
    pub store: ParamStore<F>,
    pub encoder: Encoder,
    pub head: ClassifierHead,
    batch_rng: RngState,
    dropout_rng: RngState,
    step: usize,
}

impl<'a, F: Real> Finetuner<'a, F> {
    /// Encoder weights are copied from `pretrained` when given; otherwise
    /// they keep their random initialization.
    pub fn new(
        corpus: &'a [Tensor<F>],
        labels: &'a [usize],
        num_classes: usize,
        cfg: &RunConfig,
        pretrained: Option<&ParamStore<F>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() || corpus.len() != labels.len() {
            return invalid("need one label per video and at least one video");
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > num_classes) {
            return invalid(format!("label {bad} outside 0..={num_classes}"));
        }
        let dim = corpus[0].cols();
        if corpus.iter().any(|v| v.cols() != dim || v.rows() == 0) {
            return invalid("videos must be non-empty and share one feature width");
        }
        let mut streams = Streams::new(cfg.seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, cfg.mgru()?, dim, &mut streams.init)?;
        let head = ClassifierHead::new(&mut store, encoder.state_dim(), cfg.head_dim, num_classes, &mut streams.init)?;
        if let Some(src) = pretrained {
            let copied = store.load_prefix(src, &format!("{}.", Encoder::PREFIX))?;
            if copied == 0 {
                return invalid("pretrained parameters contain no encoder weights");
            }
        }
        Ok(Self {
            corpus,
            labels,
            cfg: cfg.clone(),
            store,
            encoder,
            head,
            batch_rng: streams.batch,
            dropout_rng: streams.dropout,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One biased batch of present-segment clips; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let idx = biased_batch(self.labels, self.cfg.batch_size, &mut self.batch_rng)?;
        let k = self.cfg.seq_len;
        let d = self.encoder.input_dim();
        let b = idx.len();
        let mut frames = vec![Tensor::zeros(&[b, d]); k];
        for (row, &v) in idx.iter().enumerate() {
            let w = sample_window(&self.corpus[v], k, &mut self.batch_rng)?;
            for (t, f) in frames.iter_mut().enumerate() {
                f.row_slice_mut(row).copy_from_slice(w.present.row_slice(t));
            }
        }
        let labels: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        let reg = Regularization::train(self.cfg.dropout);
        let mut g = Graph::new();
        let trace = self.encoder.encode(&mut g, &self.store, &frames, reg, &mut self.dropout_rng)?;
        let loss = self.head.loss(&mut g, &self.store, trace.last_state, &labels, reg, &mut self.dropout_rng)?;
        g.backward(loss, &mut self.store)?;
        clip_global_norm(&mut self.store, self.cfg.clip_norm)?;
        adam_step(&mut self.store, &self.cfg.adam())?;
        self.step += 1;
        Ok(g.scalar(loss).to_f64().unwrap_or(f64::NAN))
    }

    /// Runs `cfg.steps` steps, reporting `(step, loss)` to `on_step`.
    pub fn run(&mut self, mut on_step: impl FnMut(usize, f64)) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(self.cfg.steps);
        for _ in 0..self.cfg.steps {
            let loss = self.step()?;
            on_step(self.step, loss);
            losses.push(loss);
        }
        Ok(losses)
    }

    pub fn states(&self, video: &Tensor<F>) -> Result<Tensor<f64>> {
        infer_states(&self.store, &self.encoder, video, self.cfg.infer_steps)
    }
}
