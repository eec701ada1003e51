use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::gru::{convex_update, gate};
use super::GruWeights;
use crate::error::{contract, invalid, Error, Result};
use crate::numeric::{glorot_uniform, Graph, NodeId, ParamId, ParamStore, Real, RngState, Tensor};

/// Which groups a group reads in its recurrent sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Group `i` reads groups `1..=i`: block lower-triangular recurrence.
    #[default]
    FastToSlow,
    /// Group `i` reads groups `i..=k`: block upper-triangular recurrence.
    SlowToFast,
}

impl fmt::Display for CouplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CouplingMode::FastToSlow => f.write_str("fast_to_slow"),
            CouplingMode::SlowToFast => f.write_str("slow_to_fast"),
        }
    }
}

impl FromStr for CouplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast_to_slow" => Ok(CouplingMode::FastToSlow),
            "slow_to_fast" => Ok(CouplingMode::SlowToFast),
            other => invalid(format!(
                "unknown coupling mode `{other}` (expected fast_to_slow or slow_to_fast)"
            )),
        }
    }
}

/// Group layout and clocks of a multirate GRU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MgruConfig {
    pub group_sizes: Vec<usize>,
    pub periods: Vec<usize>,
    pub mode: CouplingMode,
}

impl MgruConfig {
    pub fn new(group_sizes: Vec<usize>, periods: Vec<usize>, mode: CouplingMode) -> Result<Self> {
        let cfg = Self {
            group_sizes,
            periods,
            mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `state_dim` split into `periods.len()` nearly equal groups, the
    /// remainder going to the fastest groups.
    pub fn split_evenly(state_dim: usize, periods: Vec<usize>, mode: CouplingMode) -> Result<Self> {
        let k = periods.len();
        if k == 0 || state_dim < k {
            return invalid(format!("cannot split {state_dim} units into {k} groups"));
        }
        let base = state_dim / k;
        let extra = state_dim % k;
        let sizes = (0..k).map(|i| base + usize::from(i < extra)).collect();
        Self::new(sizes, periods, mode)
    }

    /// A single always-active group: the plain GRU.
    pub fn single(state_dim: usize) -> Result<Self> {
        Self::new(vec![state_dim], vec![1], CouplingMode::FastToSlow)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.group_sizes.len();
        if k == 0 {
            return invalid("an mGRU needs at least one group");
        }
        if self.periods.len() != k {
            return invalid(format!(
                "{} group sizes but {} clock periods",
                k,
                self.periods.len()
            ));
        }
        if self.group_sizes.iter().any(|&s| s == 0) {
            return invalid("group sizes must be positive");
        }
        if self.periods.iter().any(|&t| t == 0) {
            return invalid("clock periods must be at least 1");
        }
        if self.periods.windows(2).any(|w| w[0] > w[1]) {
            return invalid(format!(
                "clock periods {:?} must be non-decreasing",
                self.periods
            ));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn state_dim(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    /// Column range of group `i` inside the state.
    pub fn group_range(&self, i: usize) -> (usize, usize) {
        let start: usize = self.group_sizes[..i].iter().sum();
        (start, start + self.group_sizes[i])
    }

    /// Range of groups (inclusive start, exclusive end) that group `i` reads.
    pub fn read_groups(&self, i: usize) -> (usize, usize) {
        match self.mode {
            CouplingMode::FastToSlow => (0, i + 1),
            CouplingMode::SlowToFast => (i, self.k()),
        }
    }

    /// State columns read by group `i`.
    pub fn read_range(&self, i: usize) -> (usize, usize) {
        let (lo, hi) = self.read_groups(i);
        (self.group_range(lo).0, self.group_range(hi - 1).1)
    }

    /// Groups whose clock fires at the 1-based step `t`.
    pub fn active_groups(&self, t: usize) -> Result<Vec<usize>> {
        if t < 1 {
            return contract("mGRU steps are numbered from 1");
        }
        Ok((0..self.k()).filter(|&i| t % self.periods[i] == 0).collect())
    }

    /// Scalars stored in the recurrent blocks of all three gates.
    pub fn recurrent_param_count(&self) -> usize {
        let per_gate: usize = (0..self.k())
            .map(|i| {
                let (lo, hi) = self.read_range(i);
                self.group_sizes[i] * (hi - lo)
            })
            .sum();
        3 * per_gate
    }
}

/// Parameters of one clocked group.
#[derive(Debug, Clone)]
pub struct GroupWeights {
    pub u_r: ParamId,
    pub u_z: ParamId,
    pub u_h: ParamId,
    /// `size x read_width` block rows; only the permitted blocks exist.
    pub v_r: ParamId,
    pub v_z: ParamId,
    pub v_h: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b_h: ParamId,
}

#[derive(Debug, Clone)]
pub struct MgruWeights {
    pub cfg: MgruConfig,
    pub input_dim: usize,
    pub out_dim: usize,
    pub groups: Vec<GroupWeights>,
    pub w_o: ParamId,
    pub b_o: ParamId,
}

impl MgruWeights {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        prefix: &str,
        cfg: MgruConfig,
        input_dim: usize,
        out_dim: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 || out_dim == 0 {
            return invalid("mGRU input and output widths must be positive");
        }
        let mut groups = Vec::with_capacity(cfg.k());
        for i in 0..cfg.k() {
            let size = cfg.group_sizes[i];
            let (lo, hi) = cfg.read_range(i);
            let width = hi - lo;
            let mut mat = |name: &str, cols: usize, store: &mut ParamStore<F>| {
                let w = glorot_uniform(cols, size, rng)?;
                store.add(format!("{prefix}.g{i}.{name}"), w)
            };
            let u_r = mat("u_r", input_dim, store)?;
            let u_z = mat("u_z", input_dim, store)?;
            let u_h = mat("u_h", input_dim, store)?;
            let v_r = mat("v_r", width, store)?;
            let v_z = mat("v_z", width, store)?;
            let v_h = mat("v_h", width, store)?;
            let mut bias = |name: &str| store.add(format!("{prefix}.g{i}.{name}"), Tensor::zeros(&[1, size]));
            let b_r = bias("b_r")?;
            let b_z = bias("b_z")?;
            let b_h = bias("b_h")?;
            groups.push(GroupWeights {
                u_r,
                u_z,
                u_h,
                v_r,
                v_z,
                v_h,
                b_r,
                b_z,
                b_h,
            });
        }
        let n = cfg.state_dim();
        let w_o = store.add(format!("{prefix}.w_o"), glorot_uniform(n, out_dim, rng)?)?;
        let b_o = store.add(format!("{prefix}.b_o"), Tensor::zeros(&[1, out_dim]))?;
        Ok(Self {
            cfg,
            input_dim,
            out_dim,
            groups,
            w_o,
            b_o,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.cfg.state_dim()
    }

    /// Copies a plain GRU's values into a single-group mGRU.
    pub fn load_from_gru<F: Real>(&self, store: &mut ParamStore<F>, gru: &GruWeights) -> Result<()> {
        if self.cfg.k() != 1 || gru.state_dim != self.state_dim() || gru.input_dim != self.input_dim {
            return invalid("only a single-group mGRU of identical shape can take GRU weights");
        }
        let gw = &self.groups[0];
        let pairs = [
            (gru.u_r, gw.u_r),
            (gru.u_z, gw.u_z),
            (gru.u_h, gw.u_h),
            (gru.v_r, gw.v_r),
            (gru.v_z, gw.v_z),
            (gru.v_h, gw.v_h),
            (gru.b_r, gw.b_r),
            (gru.b_z, gw.b_z),
            (gru.b_h, gw.b_h),
            (gru.w_o, self.w_o),
            (gru.b_o, self.b_o),
        ];
        for (src, dst) in pairs {
            let v = store.value(src).clone();
            *store.value_mut(dst) = v;
        }
        Ok(())
    }
}

/// Recurrent state of a batch: `h` is `batch x state_dim`, `t` the number of
/// steps taken so far.
#[derive(Debug, Clone, Copy)]
pub struct MgruState {
    pub h: NodeId,
    pub t: usize,
}

impl MgruState {
    /// Zero state before the first step.
    pub fn zeros<F: Real>(g: &mut Graph<F>, batch: usize, state_dim: usize) -> Self {
        let h = g.constant(Tensor::zeros(&[batch, state_dim]));
        Self { h, t: 0 }
    }
}

/// Advances the state by one step (to `state.t + 1`).
///
/// Groups whose clock fires recompute their slice of the state from the
/// input and the groups they are coupled to; all other groups carry their
/// previous values over unchanged. The reset gate applied to group `j`'s
/// state is group `j`'s own gate. The output projection always reads the
/// full state.
pub fn mgru_step<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    w: &MgruWeights,
    x: NodeId,
    state: MgruState,
) -> Result<(MgruState, NodeId)> {
    let cfg = &w.cfg;
    let batch = g.value(x).rows();
    if g.value(x).cols() != w.input_dim {
        return invalid(format!(
            "mGRU input has width {}, expected {}",
            g.value(x).cols(),
            w.input_dim
        ));
    }
    if g.value(state.h).cols() != cfg.state_dim() || g.value(state.h).rows() != batch {
        return invalid(format!(
            "mGRU state has shape {:?}, expected [{batch}, {}]",
            g.value(state.h).shape(),
            cfg.state_dim()
        ));
    }
    let t = state.t + 1;
    let active = cfg.active_groups(t)?;
    let h_prev = state.h;

    let new_h = if active.is_empty() {
        h_prev
    } else {
        // Groups read by at least one active group need their reset gate.
        let lo = active.iter().map(|&i| cfg.read_groups(i).0).min().unwrap_or(0);
        let hi = active.iter().map(|&i| cfg.read_groups(i).1).max().unwrap_or(0);
        let needed_start = cfg.group_range(lo).0;
        let mut reset_parts = Vec::with_capacity(hi - lo);
        for j in lo..hi {
            let gw = &w.groups[j];
            let (rs, re) = cfg.read_range(j);
            let (js, je) = cfg.group_range(j);
            let h_read = g.slice(h_prev, rs, re);
            let h_own = g.slice(h_prev, js, je);
            let (u, b, v) = (g.param(store, gw.u_r), g.param(store, gw.b_r), g.param(store, gw.v_r));
            let r = gate(g, x, u, b, h_read, v);
            let r = g.sigmoid(r);
            reset_parts.push(g.mul(r, h_own));
        }
        let reset_h = g.concat(&reset_parts);

        let mut parts = Vec::with_capacity(cfg.k());
        for i in 0..cfg.k() {
            let (s, e) = cfg.group_range(i);
            let h_own = g.slice(h_prev, s, e);
            if !active.contains(&i) {
                parts.push(h_own);
                continue;
            }
            let gw = &w.groups[i];
            let (rs, re) = cfg.read_range(i);
            let h_read = g.slice(h_prev, rs, re);
            let (u, b, v) = (g.param(store, gw.u_z), g.param(store, gw.b_z), g.param(store, gw.v_z));
            let z = gate(g, x, u, b, h_read, v);
            let z = g.sigmoid(z);
            let rh_read = g.slice(reset_h, rs - needed_start, re - needed_start);
            let (u, b, v) = (g.param(store, gw.u_h), g.param(store, gw.b_h), g.param(store, gw.v_h));
            let cand = gate(g, x, u, b, rh_read, v);
            let cand = g.tanh(cand);
            parts.push(convex_update(g, z, h_own, cand));
        }
        g.concat(&parts)
    };
    let w_o = g.param(store, w.w_o);
    let b_o = g.param(store, w.b_o);
    let o = g.linear(new_h, w_o, Some(b_o));
    Ok((MgruState { h: new_h, t }, o))
}

/// Per-step states and outputs of an unrolled sequence.
#[derive(Debug, Clone)]
pub struct Unrolled {
    pub states: Vec<NodeId>,
    pub outputs: Vec<NodeId>,
}

/// Runs the mGRU over `inputs` starting from `init`.
pub fn unroll<F: Real>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    w: &MgruWeights,
    inputs: &[NodeId],
    init: MgruState,
) -> Result<Unrolled> {
    let mut state = init;
    let mut out = Unrolled {
        states: Vec::with_capacity(inputs.len()),
        outputs: Vec::with_capacity(inputs.len()),
    };
    for &x in inputs {
        let (next, o) = mgru_step(g, store, w, x, state)?;
        state = next;
        out.states.push(state.h);
        out.outputs.push(o);
    }
    Ok(out)
}
