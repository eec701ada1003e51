use std::collections::BTreeMap;

use super::beam::{beam_search, greedy_search, BeamHyp, SearchConfig, StepModel};
use super::vocab::{caption_pair, EOS, GO, PAD};
use crate::classify::inference_frames;
use crate::config::RunConfig;
use crate::error::{invalid, Result};
use crate::numeric::{
    adam_step_where, clip_global_norm, glorot_uniform, log_sum_exp, Graph, NodeId, ParamId, ParamStore, Real,
    RngState, Tensor,
};
use crate::seq2seq::{attend_decode_step, AttnDecoderWeights, AttnDims, AttnMemory, Encoder, Regularization, Streams};

/// Video encoder plus a word-embedding attention decoder over `V` tokens.
#[derive(Debug, Clone)]
pub struct CaptionModel {
    pub encoder: Encoder,
    pub embed: ParamId,
    pub decoder: AttnDecoderWeights,
    pub vocab_size: usize,
}

impl CaptionModel {
    pub const EMBED: &'static str = "cap.embed";
    pub const DECODER_PREFIX: &'static str = "cap.dec";

    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        cfg: &RunConfig,
        feature_dim: usize,
        vocab_size: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        if vocab_size < 5 {
            return invalid(format!("vocabulary of {vocab_size} tokens is too small"));
        }
        let encoder = Encoder::new(store, cfg.mgru()?, feature_dim, rng)?;
        let e = cfg.embed_width();
        let embed = store.add(Self::EMBED, glorot_uniform(e, vocab_size, rng)?)?;
        let dims = AttnDims {
            input_dim: e,
            context_dim: encoder.out_dim(),
            state_dim: encoder.state_dim(),
            out_dim: vocab_size,
            attention_size: cfg.attention_size,
        };
        let decoder = AttnDecoderWeights::new(store, Self::DECODER_PREFIX, dims, rng)?;
        Ok(Self { encoder, embed, decoder, vocab_size })
    }
}

/// Per-step `batch x D` frames: the inference frames of each video, which
/// must all have the same count.
pub(crate) fn stack_frames<F: Real>(videos: &[&Tensor<F>], max_steps: usize) -> Result<Vec<Tensor<F>>> {
    let idx = inference_frames(videos[0].rows(), max_steps);
    if videos.iter().any(|v| inference_frames(v.rows(), max_steps) != idx) {
        return invalid("videos in one batch must have the same length");
    }
    let d = videos[0].cols();
    Ok(idx
        .iter()
        .map(|&t| {
            let mut data = Vec::with_capacity(videos.len() * d);
            for v in videos {
                data.extend_from_slice(v.row_slice(t));
            }
            Tensor::matrix(videos.len(), d, data).expect("consistent")
        })
        .collect())
}

/// Summed negative log-likelihood of the targets of `pairs` (inputs,
/// targets) given per-step `frames`, and the number of non-`<PAD>` targets.
/// All-padding targets give a constant zero.
pub fn caption_nll<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    model: &CaptionModel,
    frames: &[Tensor<F>],
    pairs: &[(Vec<usize>, Vec<usize>)],
    reg: Regularization,
    rng: &mut RngState,
) -> Result<(NodeId, usize)> {
    let Some(len) = pairs.first().map(|p| p.0.len()) else {
        return invalid("caption loss needs at least one caption");
    };
    if pairs.iter().any(|(i, t)| i.len() != len || t.len() != len) {
        return invalid("caption inputs and targets must share one padded length");
    }
    if let Some(bad) = pairs.iter().flat_map(|(i, t)| i.iter().chain(t)).find(|&&v| v >= model.vocab_size) {
        return invalid(format!("token {bad} outside a vocabulary of {}", model.vocab_size));
    }
    let tokens = pairs.iter().flat_map(|p| &p.1).filter(|&&t| t != PAD).count();
    if tokens == 0 {
        return Ok((g.constant(Tensor::scalar(F::zero())), 0));
    }
    let batch = pairs.len();
    let trace = model.encoder.encode(g, store, frames, reg, rng)?;
    let dec = &model.decoder;
    let memory = AttnMemory::new(g, store, dec, &trace.outputs)?;
    let table = g.param(store, model.embed);
    let mut h = g.dropout(trace.last_state, reg.dropout, reg.training, rng)?;
    let mut a = g.constant(Tensor::zeros(&[batch, dec.context_dim]));
    let mut total: Option<NodeId> = None;
    for t in 0..len {
        let targets: Vec<usize> = pairs.iter().map(|p| p.1[t]).collect();
        if targets.iter().all(|&v| v == PAD) {
            break;
        }
        let y = g.gather_rows(table, pairs.iter().map(|p| p.0[t]).collect());
        let step = attend_decode_step(g, store, dec, &memory, y, a, h)?;
        let weights = targets.iter().map(|&v| if v == PAD { F::zero() } else { F::one() }).collect();
        let term = g.cross_entropy(step.output, targets, weights);
        total = Some(match total {
            Some(acc) => g.add(acc, term),
            None => term,
        });
        h = step.state;
        a = step.context;
    }
    Ok((total.expect("at least one target"), tokens))
}

/// Trains a caption model on `(video index, word ids)` items.
pub struct CaptionTrainer<'a, F> {
    videos: &'a [Tensor<F>],
    items: Vec<(usize, Vec<usize>)>,
    cfg: RunConfig,
    pub store: ParamStore<F>,
    pub model: CaptionModel,
    order: Vec<usize>,
    cursor: usize,
    batch_rng: RngState,
    dropout_rng: RngState,
}

impl<'a, F: Real> CaptionTrainer<'a, F> {
    pub fn new(
        videos: &'a [Tensor<F>],
        items: Vec<(usize, Vec<usize>)>,
        vocab_size: usize,
        cfg: &RunConfig,
        pretrained: Option<&ParamStore<F>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if videos.is_empty() || items.is_empty() {
            return invalid("captioning needs videos and captions");
        }
        if items.iter().any(|(v, _)| *v >= videos.len()) {
            return invalid("caption refers to a missing video");
        }
        let d = videos[0].cols();
        if videos.iter().any(|v| v.cols() != d || v.rows() == 0) {
            return invalid("videos must be non-empty and share one feature width");
        }
        let mut streams = Streams::new(cfg.seed);
        let mut store = ParamStore::new();
        let model = CaptionModel::new(&mut store, cfg, d, vocab_size, &mut streams.init)?;
        if let Some(src) = pretrained {
            if store.load_prefix(src, &format!("{}.", Encoder::PREFIX))? == 0 {
                return invalid("pretrained parameters contain no encoder weights");
            }
        }
        let order = (0..items.len()).collect();
        Ok(Self {
            videos,
            items,
            cfg: cfg.clone(),
            store,
            model,
            order,
            cursor: usize::MAX,
            batch_rng: streams.batch,
            dropout_rng: streams.dropout,
        })
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let n = self.cfg.batch_size.min(self.items.len());
        let mut batch = Vec::with_capacity(n);
        while batch.len() < n {
            if self.cursor >= self.order.len() {
                self.batch_rng.shuffle(&mut self.order);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }

    /// One update; returns the mean negative log-likelihood per target token.
    pub fn step(&mut self) -> Result<f64> {
        let batch = self.next_batch();
        let max_steps = self.cfg.infer_steps;
        // one sub-batch per distinct frame count
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in &batch {
            let t = inference_frames(self.videos[self.items[i].0].rows(), max_steps).len();
            groups.entry(t).or_default().push(i);
        }
        let reg = Regularization::train(self.cfg.dropout);
        let mut g = Graph::new();
        let mut total = None;
        let mut tokens = 0;
        for members in groups.values() {
            let videos: Vec<&Tensor<F>> = members.iter().map(|&i| &self.videos[self.items[i].0]).collect();
            let frames = stack_frames(&videos, max_steps)?;
            let pairs: Vec<_> = members
                .iter()
                .map(|&i| caption_pair(&self.items[i].1, self.cfg.max_caption_len))
                .collect();
            let (nll, n) = caption_nll(&mut g, &self.store, &self.model, &frames, &pairs, reg, &mut self.dropout_rng)?;
            tokens += n;
            total = Some(match total {
                Some(acc) => g.add(acc, nll),
                None => nll,
            });
        }
        let total = total.expect("non-empty batch");
        let loss = g.scale(total, F::lit(1.0 / tokens.max(1) as f64));
        g.backward(loss, &mut self.store)?;
        clip_global_norm(&mut self.store, self.cfg.clip_norm)?;
        let frozen = format!("{}.", Encoder::PREFIX);
        let tune_encoder = self.cfg.finetune_encoder;
        adam_step_where(&mut self.store, &self.cfg.adam(), |name| tune_encoder || !name.starts_with(&frozen))?;
        Ok(g.scalar(loss).to_f64().unwrap_or(f64::NAN))
    }

    pub fn run(&mut self, mut on_step: impl FnMut(usize, f64)) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(self.cfg.steps);
        for s in 1..=self.cfg.steps {
            let loss = self.step()?;
            on_step(s, loss);
            losses.push(loss);
        }
        Ok(losses)
    }
}

/// Incremental decoder over one encoded video, for search.
pub struct DecodeSession<'a, F> {
    g: Graph<F>,
    store: &'a ParamStore<F>,
    model: &'a CaptionModel,
    memory: AttnMemory,
    table: NodeId,
    h0: NodeId,
}

impl<'a, F: Real> DecodeSession<'a, F> {
    pub fn new(store: &'a ParamStore<F>, model: &'a CaptionModel, video: &Tensor<F>, max_steps: usize) -> Result<Self> {
        let frames = stack_frames(&[video], max_steps)?;
        let mut g = Graph::new();
        let mut unused = RngState::new(0);
        let trace = model.encoder.encode(&mut g, store, &frames, Regularization::eval(), &mut unused)?;
        let memory = AttnMemory::new(&mut g, store, &model.decoder, &trace.outputs)?;
        let table = g.param(store, model.embed);
        Ok(Self { g, store, model, memory, table, h0: trace.last_state })
    }
}

impl<F: Real> StepModel for DecodeSession<'_, F> {
    type State = (NodeId, NodeId);

    fn initial(&mut self) -> Result<Self::State> {
        let a = self.g.constant(Tensor::zeros(&[1, self.model.decoder.context_dim]));
        Ok((self.h0, a))
    }

    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)> {
        if prev >= self.model.vocab_size {
            return invalid(format!("token {prev} outside the vocabulary"));
        }
        let y = self.g.gather_rows(self.table, vec![prev]);
        let step = attend_decode_step(&mut self.g, self.store, &self.model.decoder, &self.memory, y, state.1, state.0)?;
        let logits: Vec<f64> = self.g.value(step.output).data().iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        let z = log_sum_exp(&logits);
        Ok((logits.iter().map(|l| l - z).collect(), (step.state, step.context)))
    }
}

/// Search settings used for captions: `<GO>` and `<PAD>` are never emitted.
pub fn caption_search(beam: usize, max_len: usize) -> SearchConfig {
    SearchConfig { beam, max_len, go: GO, eos: EOS, banned: vec![GO, PAD] }
}

/// Beam search (greedy when `beam` is 1 and `greedy` is set) over one video;
/// `max_words` excludes the final `<EOS>`.
pub fn decode_video<F: Real>(
    store: &ParamStore<F>,
    model: &CaptionModel,
    video: &Tensor<F>,
    cfg: &RunConfig,
    beam: usize,
    greedy: bool,
) -> Result<BeamHyp> {
    let mut session = DecodeSession::new(store, model, video, cfg.infer_steps)?;
    let search = caption_search(beam, cfg.max_caption_len + 1);
    if greedy {
        greedy_search(&mut session, &search)
    } else {
        beam_search(&mut session, &search)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::{check_gradients, GradCheckOptions};

    fn tiny() -> RunConfig {
        RunConfig { seq_len: 3, cell_size: 6, attention_size: 4, embed_dim: Some(3), batch_size: 2, ..RunConfig::default() }
    }

    fn video(seed: u64, t: usize) -> Tensor<f64> {
        let mut rng = RngState::new(seed);
        Tensor::matrix(t, 2, (0..2 * t).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn uniform_logits_cost_log_v() {
        let cfg = tiny();
        let mut store = ParamStore::<f64>::new();
        let model = CaptionModel::new(&mut store, &cfg, 2, 7, &mut RngState::new(0)).unwrap();
        for p in [model.decoder.out_o, model.decoder.out_a, model.decoder.out_b] {
            store.value_mut(p).fill(0.0);
        }
        let frames = stack_frames(&[&video(1, 4)], 150).unwrap();
        let pair = caption_pair(&[4, 5, 6], 5);
        let mut g = Graph::new();
        let (nll, n) = caption_nll(&mut g, &store, &model, &frames, &[pair], Regularization::eval(), &mut RngState::new(0)).unwrap();
        assert_eq!(n, 4);
        assert!((g.scalar(nll) / n as f64 - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn all_padding_is_zero() {
        let cfg = tiny();
        let mut store = ParamStore::<f64>::new();
        let model = CaptionModel::new(&mut store, &cfg, 2, 6, &mut RngState::new(0)).unwrap();
        let frames = stack_frames(&[&video(1, 4)], 150).unwrap();
        let mut g = Graph::new();
        let pair = (vec![GO, PAD, PAD], vec![PAD; 3]);
        let (nll, n) = caption_nll(&mut g, &store, &model, &frames, &[pair], Regularization::eval(), &mut RngState::new(0)).unwrap();
        assert_eq!((g.scalar(nll), n), (0.0, 0));
    }

    #[test]
    fn extra_padding_changes_nothing() {
        let cfg = tiny();
        let mut store = ParamStore::<f64>::new();
        let model = CaptionModel::new(&mut store, &cfg, 2, 8, &mut RngState::new(3)).unwrap();
        let frames = stack_frames(&[&video(2, 5)], 150).unwrap();
        let run = |store: &mut ParamStore<f64>, max_len: usize| {
            let mut g = Graph::new();
            let pair = caption_pair(&[4, 7], max_len);
            let (nll, _) = caption_nll(&mut g, store, &model, &frames, &[pair], Regularization::eval(), &mut RngState::new(0)).unwrap();
            g.backward(nll, store).unwrap();
            let grads: Vec<Tensor<f64>> = store.ids().map(|id| store.grad(id).clone()).collect();
            (g.scalar(nll), grads)
        };
        let (a, ga) = run(&mut store, 2);
        let (b, gb) = run(&mut store, 9);
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        let pad_row = store.grad(model.embed).row_slice(PAD).to_vec();
        assert!(pad_row.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny();
        for seed in 0..10 {
            let mut rng = RngState::new(seed);
            let mut store = ParamStore::<f64>::new();
            let model = CaptionModel::new(&mut store, &cfg, 2, 6, &mut rng).unwrap();
            let frames = stack_frames(&[&video(seed, 3), &video(seed + 50, 3)], 150).unwrap();
            let pairs = vec![caption_pair(&[4, 5], 3), caption_pair(&[5], 3)];
            let opts = GradCheckOptions { seed, ..GradCheckOptions::default() };
            let report = check_gradients(
                &mut store,
                |g, s| {
                    let (nll, _) = caption_nll(g, s, &model, &frames, &pairs, Regularization::eval(), &mut RngState::new(0))?;
                    Ok(nll)
                },
                opts,
            )
            .unwrap();
            assert!(report.passes(1e-4), "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn step_distribution_is_normalized() {
        let cfg = tiny();
        let mut store = ParamStore::<f64>::new();
        let model = CaptionModel::new(&mut store, &cfg, 2, 9, &mut RngState::new(4)).unwrap();
        let v = video(8, 6);
        let mut s = DecodeSession::new(&store, &model, &v, 150).unwrap();
        let init = s.initial().unwrap();
        let (lp, next) = s.step(&init, GO).unwrap();
        let (lp2, _) = s.step(&next, 5).unwrap();
        for l in [lp, lp2] {
            assert_eq!(l.len(), 9);
            assert!((l.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decoding_is_consistent() {
        let cfg = RunConfig { max_caption_len: 6, ..tiny() };
        let mut store = ParamStore::<f64>::new();
        let model = CaptionModel::new(&mut store, &cfg, 2, 8, &mut RngState::new(5)).unwrap();
        let v = video(1, 5);
        let greedy = decode_video(&store, &model, &v, &cfg, 1, true).unwrap();
        let b1 = decode_video(&store, &model, &v, &cfg, 1, false).unwrap();
        assert!(greedy.finished);
        assert_eq!(greedy, b1);
        let b5 = decode_video(&store, &model, &v, &cfg, 5, false).unwrap();
        assert!(b5.tokens.iter().all(|&t| t != GO && t != PAD));
    }

    #[test]
    fn memorizes_one_caption() {
        let cfg = RunConfig { lr: 1e-2, dropout: 0.0, steps: 200, batch_size: 1, ..tiny() };
        let videos = vec![video(0, 4)];
        let mut t = CaptionTrainer::new(&videos, vec![(0, vec![4, 5, 6, 4])], 7, &cfg, None).unwrap();
        let losses = t.run(|_, _| {}).unwrap();
        assert!(*losses.last().unwrap() < 0.1, "{:?}", &losses[losses.len() - 3..]);
        let hyp = decode_video(&t.store, &t.model, &videos[0], &cfg, 1, true).unwrap();
        assert_eq!(hyp.tokens, vec![4, 5, 6, 4, EOS]);
    }
}
