use crate::error::{contract, invalid, Result};
use crate::numeric::{glorot_uniform, Graph, NodeId, ParamId, ParamStore, Real, RngState, Tensor};
use crate::recurrent::{gru_step, GruWeights};

/// Encoder outputs consumed by attention decoders.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// `o_1..o_S`, each `batch x out_dim`.
    pub outputs: Vec<NodeId>,
    /// Hidden states after every step.
    pub states: Vec<NodeId>,
    /// `h_S`, handed to the decoder as its initial state.
    pub last_state: NodeId,
}

impl EncoderTrace {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

/// Parameters of a GRU decoder with additive attention over encoder outputs.
#[derive(Debug, Clone)]
pub struct AttnDecoderWeights {
    pub input_dim: usize,
    pub context_dim: usize,
    pub state_dim: usize,
    pub out_dim: usize,
    pub attention_size: usize,
    /// Input combination `W_y y + W_a a + b`.
    pub in_y: ParamId,
    pub in_a: ParamId,
    pub in_b: ParamId,
    pub cell: GruWeights,
    pub w_he: ParamId,
    pub w_oe: ParamId,
    pub b_e: ParamId,
    /// Score vector, `1 x attention_size`.
    pub v: ParamId,
    /// Output combination `W_o o + W_c a + b`.
    pub out_o: ParamId,
    pub out_a: ParamId,
    pub out_b: ParamId,
}

/// Dimensions of an attention decoder.
#[derive(Debug, Clone, Copy)]
pub struct AttnDims {
    /// Width of the per-step decoder input `y_t`.
    pub input_dim: usize,
    /// Width of the encoder outputs attended over.
    pub context_dim: usize,
    /// Decoder state width; equals the encoder state width.
    pub state_dim: usize,
    /// Width of the prediction `o_t^dec`.
    pub out_dim: usize,
    pub attention_size: usize,
}

impl AttnDecoderWeights {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        dims: AttnDims,
        rng: &mut RngState,
    ) -> Result<Self> {
        let AttnDims {
            input_dim,
            context_dim,
            state_dim,
            out_dim,
            attention_size,
        } = dims;
        if [input_dim, context_dim, state_dim, out_dim, attention_size].contains(&0) {
            return invalid("attention decoder dimensions must be positive");
        }
        // GRU input and GRU output both use the state width.
        let hidden = state_dim;
        let mut mat = |name: &str, rows: usize, cols: usize, store: &mut ParamStore<F>| {
            let w = glorot_uniform(cols, rows, rng)?;
            store.add(format!("{prefix}.{name}"), w)
        };
        let in_y = mat("in_y", hidden, input_dim, store)?;
        let in_a = mat("in_a", hidden, context_dim, store)?;
        let w_he = mat("w_he", attention_size, state_dim, store)?;
        let w_oe = mat("w_oe", attention_size, context_dim, store)?;
        let v = mat("v", 1, attention_size, store)?;
        let out_o = mat("out_o", out_dim, hidden, store)?;
        let out_a = mat("out_a", out_dim, context_dim, store)?;
        let in_b = store.add(format!("{prefix}.in_b"), Tensor::zeros(&[1, hidden]))?;
        let b_e = store.add(format!("{prefix}.b_e"), Tensor::zeros(&[1, attention_size]))?;
        let out_b = store.add(format!("{prefix}.out_b"), Tensor::zeros(&[1, out_dim]))?;
        let cell = GruWeights::new(store, &format!("{prefix}.gru"), hidden, state_dim, hidden, rng)?;
        Ok(Self {
            input_dim,
            context_dim,
            state_dim,
            out_dim,
            attention_size,
            in_y,
            in_a,
            in_b,
            cell,
            w_he,
            w_oe,
            b_e,
            v,
            out_o,
            out_a,
            out_b,
        })
    }
}

/// Encoder outputs with their score-space projections `W_oe o_i`, computed
/// once per sequence and reused at every decoder step.
#[derive(Debug, Clone)]
pub struct AttnMemory {
    outputs: Vec<NodeId>,
    keys: Vec<NodeId>,
}

impl AttnMemory {
    pub fn new<F: Real>(
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        w: &AttnDecoderWeights,
        outputs: &[NodeId],
    ) -> Result<Self> {
        if outputs.is_empty() {
            return contract("attention over an empty encoder trace");
        }
        if let Some(&o) = outputs.iter().find(|&&o| g.value(o).cols() != w.context_dim) {
            return invalid(format!(
                "encoder output width {} differs from decoder context width {}",
                g.value(o).cols(),
                w.context_dim
            ));
        }
        let w_oe = g.param(store, w.w_oe);
        let b_e = g.param(store, w.b_e);
        let keys = outputs.iter().map(|&o| g.linear(o, w_oe, Some(b_e))).collect();
        Ok(Self {
            outputs: outputs.to_vec(),
            keys,
        })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

/// Result of one decoder step.
#[derive(Debug, Clone, Copy)]
pub struct DecodeStep {
    pub state: NodeId,
    /// Attention context `a_t`.
    pub context: NodeId,
    /// Prediction `o_t^dec`.
    pub output: NodeId,
    /// Normalized attention weights, `batch x S`.
    pub weights: NodeId,
}

/// One step of the attention decoder:
///
/// ```text
/// y'  = W_y y_t + W_a a_{t-1}
/// h_t, o'_t = GRU(y', h_{t-1})
/// e_i = v . tanh(W_he h_t + W_oe o_i)
/// a_t = sum_i softmax(e)_i o_i
/// out = W_o o'_t + W_c a_t
/// ```
pub fn attend_decode_step<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    w: &AttnDecoderWeights,
    memory: &AttnMemory,
    y: NodeId,
    a_prev: NodeId,
    h_prev: NodeId,
) -> Result<DecodeStep> {
    if memory.is_empty() {
        return contract("attention over an empty encoder trace");
    }
    if g.value(y).cols() != w.input_dim {
        return invalid(format!(
            "decoder input width {} differs from {}",
            g.value(y).cols(),
            w.input_dim
        ));
    }
    if g.value(a_prev).cols() != w.context_dim {
        return invalid(format!(
            "previous context width {} differs from {}",
            g.value(a_prev).cols(),
            w.context_dim
        ));
    }
    let in_y = g.param(store, w.in_y);
    let in_a = g.param(store, w.in_a);
    let in_b = g.param(store, w.in_b);
    let ya = g.linear(y, in_y, Some(in_b));
    let aa = g.matmul_nt(a_prev, in_a);
    let y_attn = g.add(ya, aa);

    let (h, o_attn) = gru_step(g, store, &w.cell, y_attn, h_prev)?;

    let w_he = g.param(store, w.w_he);
    let v = g.param(store, w.v);
    let query = g.matmul_nt(h, w_he);
    let scores: Vec<NodeId> = memory
        .keys
        .iter()
        .map(|&k| {
            let s = g.add(query, k);
            let s = g.tanh(s);
            g.matmul_nt(s, v)
        })
        .collect();
    let scores = g.concat(&scores);
    let weights = g.softmax_rows(scores);

    let mut context = None;
    for (i, &o) in memory.outputs.iter().enumerate() {
        let wi = g.slice(weights, i, i + 1);
        let term = g.mul_col(o, wi);
        context = Some(match context {
            Some(c) => g.add(c, term),
            None => term,
        });
    }
    let context = context.expect("memory is non-empty");

    let out_o = g.param(store, w.out_o);
    let out_a = g.param(store, w.out_a);
    let out_b = g.param(store, w.out_b);
    let po = g.linear(o_attn, out_o, Some(out_b));
    let pa = g.matmul_nt(context, out_a);
    let output = g.add(po, pa);
    Ok(DecodeStep {
        state: h,
        context,
        output,
        weights,
    })
}
