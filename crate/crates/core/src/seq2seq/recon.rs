use std::fmt;

use serde::{Deserialize, Serialize};

use super::attention::{attend_decode_step, AttnDecoderWeights, AttnDims, AttnMemory, EncoderTrace};
use super::window::ReconWindow;
use crate::config::RunConfig;
use crate::error::{invalid, Result};
use crate::numeric::{Graph, NodeId, ParamStore, Real, RngState, Tensor};
use crate::recurrent::{unroll, MgruConfig, MgruState, MgruWeights};

/// Which context segment a decoder reconstructs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Past,
    Future,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Past => f.write_str("past"),
            Direction::Future => f.write_str("future"),
        }
    }
}

/// Dropout settings of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regularization {
    pub dropout: f64,
    pub training: bool,
}

impl Regularization {
    pub fn eval() -> Self {
        Self {
            dropout: 0.0,
            training: false,
        }
    }

    pub fn train(dropout: f64) -> Self {
        Self {
            dropout,
            training: true,
        }
    }
}

/// mGRU encoder with dropout on its input and output layers.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub weights: MgruWeights,
}

impl Encoder {
    pub const PREFIX: &'static str = "enc";

    /// Encoder under the `enc` prefix whose output width equals its state
    /// width.
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        cfg: MgruConfig,
        input_dim: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        let n = cfg.state_dim();
        let weights = MgruWeights::new(store, Self::PREFIX, cfg, input_dim, n, rng)?;
        Ok(Self { weights })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.input_dim
    }

    pub fn state_dim(&self) -> usize {
        self.weights.state_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.out_dim
    }

    /// Runs over per-step `batch x input_dim` frames from a zero state.
    pub fn encode<F: Real>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        frames: &[Tensor<F>],
        reg: Regularization,
        rng: &mut RngState,
    ) -> Result<EncoderTrace> {
        if frames.is_empty() {
            return invalid("encoder needs at least one frame");
        }
        let batch = frames[0].rows();
        let mut inputs = Vec::with_capacity(frames.len());
        for f in frames {
            let x = g.constant(f.clone());
            inputs.push(g.dropout(x, reg.dropout, reg.training, rng)?);
        }
        let init = MgruState::zeros(g, batch, self.state_dim());
        let run = unroll(g, store, &self.weights, &inputs, init)?;
        let mut outputs = Vec::with_capacity(run.outputs.len());
        for &o in &run.outputs {
            outputs.push(g.dropout(o, reg.dropout, reg.training, rng)?);
        }
        let last_state = *run.states.last().expect("non-empty input");
        Ok(EncoderTrace {
            outputs,
            states: run.states,
            last_state,
        })
    }
}

/// Shared encoder with separate past and future reconstruction decoders.
#[derive(Debug, Clone)]
pub struct ReconModel {
    pub encoder: Encoder,
    pub past: AttnDecoderWeights,
    pub future: AttnDecoderWeights,
    pub feature_dim: usize,
}

impl ReconModel {
    pub const PAST_PREFIX: &'static str = "dec_past";
    pub const FUTURE_PREFIX: &'static str = "dec_future";

    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        mgru: MgruConfig,
        feature_dim: usize,
        attention_size: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        let encoder = Encoder::new(store, mgru, feature_dim, rng)?;
        let dims = AttnDims {
            input_dim: feature_dim,
            context_dim: encoder.out_dim(),
            state_dim: encoder.state_dim(),
            out_dim: feature_dim,
            attention_size,
        };
        let past = AttnDecoderWeights::new(store, Self::PAST_PREFIX, dims, rng)?;
        let future = AttnDecoderWeights::new(store, Self::FUTURE_PREFIX, dims, rng)?;
        Ok(Self {
            encoder,
            past,
            future,
            feature_dim,
        })
    }

    pub fn from_config<F: Real>(
        store: &mut ParamStore<F>,
        cfg: &RunConfig,
        feature_dim: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        Self::new(store, cfg.mgru()?, feature_dim, cfg.attention_size, rng)
    }

    pub fn decoder(&self, direction: Direction) -> &AttnDecoderWeights {
        match direction {
            Direction::Past => &self.past,
            Direction::Future => &self.future,
        }
    }

    pub fn decoder_prefix(direction: Direction) -> &'static str {
        match direction {
            Direction::Past => Self::PAST_PREFIX,
            Direction::Future => Self::FUTURE_PREFIX,
        }
    }
}

/// Outcome of a reconstruction forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ReconOutput {
    /// Masked mean Huber loss, `1 x 1`.
    pub loss: NodeId,
    /// Number of target frames that contributed.
    pub valid_frames: usize,
}

impl ReconOutput {
    /// True when every target frame was padding and the loss is a constant 0.
    pub fn is_empty(&self) -> bool {
        self.valid_frames == 0
    }
}

/// Per-step `batch x D` tensors taken from one segment of every window.
fn stack_steps<F: Real>(segments: &[&Tensor<F>], reverse: bool) -> Vec<Tensor<F>> {
    let k = segments[0].rows();
    let d = segments[0].cols();
    (0..k)
        .map(|t| {
            let src = if reverse { k - 1 - t } else { t };
            let mut data = Vec::with_capacity(segments.len() * d);
            for s in segments {
                data.extend_from_slice(s.row_slice(src));
            }
            Tensor::matrix(segments.len(), d, data).expect("consistent")
        })
        .collect()
}

/// Encodes the present segments and reconstructs one context segment.
///
/// The decoder starts from the encoder's last state (after dropout), sees
/// a zero `<GO>` frame at its first step and the ground-truth previous target
/// afterwards. Past targets, and therefore the teacher-forced inputs, run in
/// reverse time order. The loss is the Huber penalty averaged over valid
/// target frames and feature dimensions.
pub fn reconstruct_loss<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    model: &ReconModel,
    windows: &[&ReconWindow<F>],
    direction: Direction,
    huber_delta: f64,
    reg: Regularization,
    rng: &mut RngState,
) -> Result<ReconOutput> {
    if windows.is_empty() {
        return invalid("reconstruction needs at least one window");
    }
    let k = windows[0].seq_len();
    let d = windows[0].dim();
    if d != model.feature_dim {
        return invalid(format!(
            "window feature width {d} differs from model width {}",
            model.feature_dim
        ));
    }
    if windows.iter().any(|w| w.seq_len() != k || w.dim() != d) {
        return invalid("all windows in a batch must share K and D");
    }
    let batch = windows.len();
    let present: Vec<&Tensor<F>> = windows.iter().map(|w| &w.present).collect();
    let frames = stack_steps(&present, false);
    let trace = model.encoder.encode(g, store, &frames, reg, rng)?;

    let reverse = direction == Direction::Past;
    let (targets, masks): (Vec<&Tensor<F>>, Vec<&Vec<bool>>) = windows
        .iter()
        .map(|w| match direction {
            Direction::Past => (&w.past, &w.past_mask),
            Direction::Future => (&w.future, &w.future_mask),
        })
        .unzip();
    let targets = stack_steps(&targets, reverse);
    let row_weights: Vec<Vec<F>> = (0..k)
        .map(|t| {
            let src = if reverse { k - 1 - t } else { t };
            masks
                .iter()
                .map(|m| if m[src] { F::one() } else { F::zero() })
                .collect()
        })
        .collect();
    let valid_frames: usize = masks.iter().map(|m| m.iter().filter(|&&v| v).count()).sum();
    if valid_frames == 0 {
        log::warn!("reconstruction batch has no valid target frames; loss is 0");
        let loss = g.constant(Tensor::scalar(F::zero()));
        return Ok(ReconOutput { loss, valid_frames });
    }

    let dec = model.decoder(direction);
    let memory = AttnMemory::new(g, store, dec, &trace.outputs)?;
    let mut h = g.dropout(trace.last_state, reg.dropout, reg.training, rng)?;
    let mut a = g.constant(Tensor::zeros(&[batch, dec.context_dim]));
    let mut y = g.constant(Tensor::zeros(&[batch, d]));
    let mut total = None;
    for t in 0..k {
        let step = attend_decode_step(g, store, dec, &memory, y, a, h)?;
        let term = g.huber(step.output, targets[t].clone(), row_weights[t].clone(), F::lit(huber_delta));
        total = Some(match total {
            Some(acc) => g.add(acc, term),
            None => term,
        });
        h = step.state;
        a = step.context;
        y = g.constant(targets[t].clone());
    }
    let total = total.expect("K >= 1");
    let norm = F::lit(1.0 / (valid_frames * d) as f64);
    let loss = g.scale(total, norm);
    Ok(ReconOutput { loss, valid_frames })
}

/// Mean reconstruction loss of `windows` in eval mode.
pub fn eval_loss<F: Real>(
    store: &ParamStore<F>,
    model: &ReconModel,
    windows: &[ReconWindow<F>],
    direction: Direction,
    huber_delta: f64,
) -> Result<f64> {
    let refs: Vec<&ReconWindow<F>> = windows.iter().collect();
    let mut g = Graph::new();
    let mut rng = RngState::new(0);
    let out = reconstruct_loss(
        &mut g,
        store,
        model,
        &refs,
        direction,
        huber_delta,
        Regularization::eval(),
        &mut rng,
    )?;
    Ok(g.scalar(out.loss).to_f64().unwrap_or(f64::NAN))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::gradcheck::{check_gradients, GradCheckOptions};
    use crate::recurrent::CouplingMode;
    use crate::seq2seq::sample_window;

    fn model(store: &mut ParamStore<f64>, seed: u64, d: usize) -> ReconModel {
        let mut rng = RngState::new(seed);
        let cfg = MgruConfig::new(vec![2, 2, 2], vec![1, 2, 4], CouplingMode::FastToSlow).unwrap();
        ReconModel::new(store, cfg, d, 4, &mut rng).unwrap()
    }

    fn video(seed: u64, t: usize, d: usize) -> Tensor<f64> {
        let mut rng = RngState::new(seed);
        Tensor::matrix(t, d, (0..t * d).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_model_on_zero_features_has_zero_loss() {
        let mut store = ParamStore::new();
        let m = model(&mut store, 1, 3);
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).fill(0.0);
        }
        let mut rng = RngState::new(2);
        let w = sample_window(&Tensor::zeros(&[12, 3]), 4, &mut rng).unwrap();
        for dir in [Direction::Past, Direction::Future] {
            assert_eq!(eval_loss(&store, &m, std::slice::from_ref(&w), dir, 0.5).unwrap(), 0.0);
        }
    }

    #[test]
    fn palindromic_targets_give_equal_directions() {
        let mut store = ParamStore::new();
        let m = model(&mut store, 3, 2);
        // decoders share weights for this check
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            if let Some(rest) = name.strip_prefix("dec_past") {
                let src = store.id(&format!("dec_future{rest}")).unwrap();
                let v = store.value(src).clone();
                *store.value_mut(id) = v;
            }
        }
        let seg = Tensor::from_rows(&[
            vec![0.1, 0.5],
            vec![-0.3, 0.2],
            vec![0.7, -0.1],
            vec![-0.3, 0.2],
            vec![0.1, 0.5],
        ])
        .unwrap();
        let present = video(4, 5, 2);
        let w = ReconWindow {
            past: seg.clone(),
            present,
            future: seg,
            past_mask: vec![true; 5],
            present_mask: vec![true; 5],
            future_mask: vec![true; 5],
            start: 0,
        };
        let ws = [w];
        let past = eval_loss(&store, &m, &ws, Direction::Past, 0.5).unwrap();
        let future = eval_loss(&store, &m, &ws, Direction::Future, 0.5).unwrap();
        assert_eq!(past, future);
    }

    #[test]
    fn all_padding_gives_zero_loss() {
        let mut store = ParamStore::new();
        let m = model(&mut store, 5, 2);
        let w = ReconWindow {
            past: Tensor::zeros(&[3, 2]),
            present: video(1, 3, 2),
            future: Tensor::zeros(&[3, 2]),
            past_mask: vec![false; 3],
            present_mask: vec![true; 3],
            future_mask: vec![false; 3],
            start: 0,
        };
        let mut g = Graph::new();
        let mut rng = RngState::new(0);
        let out = reconstruct_loss(&mut g, &store, &m, &[&w], Direction::Future, 0.5, Regularization::eval(), &mut rng)
            .unwrap();
        assert!(out.is_empty());
        assert_eq!(g.scalar(out.loss), 0.0);
    }

    #[test]
    fn padding_frames_contribute_nothing() {
        let mut store = ParamStore::new();
        let m = model(&mut store, 6, 2);
        let mut rng = RngState::new(1);
        let base = sample_window(&video(2, 7, 2), 4, &mut rng).unwrap();
        assert!(base.future_mask.iter().any(|&v| !v));
        let mut noisy = base.clone();
        for (r, &valid) in base.future_mask.iter().enumerate() {
            if !valid {
                noisy.future.row_slice_mut(r).fill(9.0);
            }
        }
        let grads = |w: &ReconWindow<f64>, store: &mut ParamStore<f64>| {
            let mut g = Graph::new();
            let mut rng = RngState::new(0);
            let out = reconstruct_loss(&mut g, store, &m, &[w], Direction::Future, 0.5, Regularization::eval(), &mut rng)
                .unwrap();
            g.backward(out.loss, store).unwrap();
            let loss = g.scalar(out.loss);
            let gs: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).data().to_vec()).collect();
            (loss, gs)
        };
        let (l1, g1) = grads(&base, &mut store);
        let (l2, g2) = grads(&noisy, &mut store);
        // padded rows sit at the tail; they are fed as inputs only after the
        // last valid target, so both loss and gradients are unchanged
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn gradients_match_differences() {
        for seed in 0..10 {
            let mut store = ParamStore::new();
            let m = model(&mut store, seed, 2);
            let mut rng = RngState::new(seed);
            let w1 = sample_window(&video(seed, 11, 2), 3, &mut rng).unwrap();
            let w2 = sample_window(&video(seed + 50, 5, 2), 3, &mut rng).unwrap();
            let dir = if seed % 2 == 0 { Direction::Past } else { Direction::Future };
            let report = check_gradients(
                &mut store,
                |g, st| {
                    let mut rng = RngState::new(0);
                    Ok(reconstruct_loss(g, st, &m, &[&w1, &w2], dir, 0.5, Regularization::eval(), &mut rng)?.loss)
                },
                GradCheckOptions {
                    seed,
                    per_param: Some(6),
                    ..GradCheckOptions::default()
                },
            )
            .unwrap();
            assert!(report.passes(1e-4), "seed {seed}: {report:?}");
        }
    }
}
