use crate::error::{invalid, Result};
use crate::numeric::{glorot_uniform, Graph, NodeId, ParamId, ParamStore, Real, RngState, Tensor};

/// Parameters of one GRU cell, registered in a [`ParamStore`].
///
/// Input matrices are `state_dim x input_dim`, recurrent matrices
/// `state_dim x state_dim`, and the output projection `out_dim x state_dim`.
#[derive(Debug, Clone)]
pub struct GruWeights {
    pub input_dim: usize,
    pub state_dim: usize,
    pub out_dim: usize,
    pub u_r: ParamId,
    pub u_z: ParamId,
    pub u_h: ParamId,
    pub v_r: ParamId,
    pub v_z: ParamId,
    pub v_h: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b_h: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
}

impl GruWeights {
    /// Glorot-initialized matrices and zero biases under `prefix`.
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        input_dim: usize,
        state_dim: usize,
        out_dim: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        let mut mat = |name: &str, rows: usize, cols: usize, store: &mut ParamStore<F>| {
            let w = glorot_uniform(cols, rows, rng)?;
            store.add(format!("{prefix}.{name}"), w)
        };
        let u_r = mat("u_r", state_dim, input_dim, store)?;
        let u_z = mat("u_z", state_dim, input_dim, store)?;
        let u_h = mat("u_h", state_dim, input_dim, store)?;
        let v_r = mat("v_r", state_dim, state_dim, store)?;
        let v_z = mat("v_z", state_dim, state_dim, store)?;
        let v_h = mat("v_h", state_dim, state_dim, store)?;
        let w_o = mat("w_o", out_dim, state_dim, store)?;
        let b_r = store.add(format!("{prefix}.b_r"), Tensor::zeros(&[1, state_dim]))?;
        let b_z = store.add(format!("{prefix}.b_z"), Tensor::zeros(&[1, state_dim]))?;
        let b_h = store.add(format!("{prefix}.b_h"), Tensor::zeros(&[1, state_dim]))?;
        let b_o = store.add(format!("{prefix}.b_o"), Tensor::zeros(&[1, out_dim]))?;
        Ok(Self {
            input_dim,
            state_dim,
            out_dim,
            u_r,
            u_z,
            u_h,
            v_r,
            v_z,
            v_h,
            b_r,
            b_z,
            b_h,
            w_o,
            b_o,
        })
    }

    /// Recurrent scalars across the three gates.
    pub fn recurrent_param_count(&self) -> usize {
        3 * self.state_dim * self.state_dim
    }
}

/// One GRU transition on a batch.
///
/// ```text
/// r  = sigmoid(U_r x + V_r h)
/// z  = sigmoid(U_z x + V_z h)
/// h~ = tanh(U_h x + V_h (r * h))
/// h' = (1 - z) * h + z * h~
/// o  = W_o h'
/// ```
pub fn gru_step<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    w: &GruWeights,
    x: NodeId,
    h_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    if g.value(x).cols() != w.input_dim {
        return invalid(format!(
            "gru input has width {}, expected {}",
            g.value(x).cols(),
            w.input_dim
        ));
    }
    if g.value(h_prev).cols() != w.state_dim || g.value(h_prev).rows() != g.value(x).rows() {
        return invalid(format!(
            "gru state has shape {:?}, expected [{}, {}]",
            g.value(h_prev).shape(),
            g.value(x).rows(),
            w.state_dim
        ));
    }
    let p = |g: &mut Graph<F>, id| g.param(store, id);
    let (u_r, v_r, b_r) = (p(g, w.u_r), p(g, w.v_r), p(g, w.b_r));
    let (u_z, v_z, b_z) = (p(g, w.u_z), p(g, w.v_z), p(g, w.b_z));
    let (u_h, v_h, b_h) = (p(g, w.u_h), p(g, w.v_h), p(g, w.b_h));
    let (w_o, b_o) = (p(g, w.w_o), p(g, w.b_o));

    let r = gate(g, x, u_r, b_r, h_prev, v_r);
    let r = g.sigmoid(r);
    let z = gate(g, x, u_z, b_z, h_prev, v_z);
    let z = g.sigmoid(z);
    let rh = g.mul(r, h_prev);
    let cand = gate(g, x, u_h, b_h, rh, v_h);
    let cand = g.tanh(cand);
    let h = convex_update(g, z, h_prev, cand);
    let o = g.linear(h, w_o, Some(b_o));
    Ok((h, o))
}

/// `x U^T + b + s V^T`, summed in that order.
pub(crate) fn gate<F: Real>(
    g: &mut Graph<F>,
    x: NodeId,
    u: NodeId,
    b: NodeId,
    s: NodeId,
    v: NodeId,
) -> NodeId {
    let xin = g.linear(x, u, Some(b));
    let rec = g.matmul_nt(s, v);
    g.add(xin, rec)
}

/// `(1 - z) * h + z * cand`
pub(crate) fn convex_update<F: Real>(g: &mut Graph<F>, z: NodeId, h: NodeId, cand: NodeId) -> NodeId {
    let keep = g.one_minus(z);
    let kept = g.mul(keep, h);
    let new = g.mul(z, cand);
    g.add(kept, new)
}
