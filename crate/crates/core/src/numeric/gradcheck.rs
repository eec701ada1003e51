//! Central finite-difference oracle for analytic gradients.

use super::{Graph, NodeId, ParamStore, RngState};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Perturbation applied on each side of the evaluated coordinate.
    pub step: f64,
    /// Magnitude below which gradients are compared absolutely rather than
    /// relatively, per unit of loss. Difference quotients carry round-off
    /// proportional to the loss value.
    pub floor: f64,
    /// Coordinates sampled per parameter; `None` checks every coordinate.
    pub per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            per_param: Some(16),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and coordinate of the largest error.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backward-pass gradients against central differences of the
/// scalar produced by `build`. `build` must be deterministic.
pub fn check_gradients<B>(
    store: &mut ParamStore<f64>,
    mut build: B,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    B: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    g.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.ids().map(|id| store.grad(id).data().to_vec()).collect();

    let mut eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, store)?;
        if let Some(e) = g.nonfinite() {
            return Err(e);
        }
        Ok(g.scalar(loss))
    };

    let floor = opts.floor * g.scalar(loss).abs().max(1.0);
    let mut rng = RngState::new(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = match opts.per_param {
            Some(k) if k < n => (0..k).map(|_| rng.below(n)).collect(),
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = store.value(id).data()[c];
            store.value_mut(id).data_mut()[c] = orig + opts.step;
            let up = eval(store)?;
            store.value_mut(id).data_mut()[c] = orig - opts.step;
            let down = eval(store)?;
            store.value_mut(id).data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let err = relative_error(analytic[id.index()][c], numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), c));
                report.worst_values = (analytic[id.index()][c], numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn random_store(seed: u64, shapes: &[(&str, usize, usize)]) -> ParamStore<f64> {
        let mut rng = RngState::new(seed);
        let mut s = ParamStore::new();
        for &(name, r, c) in shapes {
            let data = (0..r * c).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            s.add(name, Tensor::matrix(r, c, data).unwrap()).unwrap();
        }
        s
    }

    #[test]
    fn primitive_ops_match_differences() {
        for seed in 0..10 {
            let mut s = random_store(
                seed,
                &[("x", 3, 4), ("w", 5, 4), ("b", 1, 5), ("c", 3, 1), ("t", 6, 2)],
            );
            let ids: Vec<_> = s.ids().collect();
            let target = Tensor::matrix(3, 5, (0..15).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
            let report = check_gradients(
                &mut s,
                |g, st| {
                    let x = g.param(st, ids[0]);
                    let w = g.param(st, ids[1]);
                    let b = g.param(st, ids[2]);
                    let c = g.param(st, ids[3]);
                    let t = g.param(st, ids[4]);
                    let h = g.linear(x, w, Some(b));
                    let a = g.tanh(h);
                    let s1 = g.sigmoid(h);
                    let r = g.relu(h);
                    let m = g.mul(a, s1);
                    let om = g.one_minus(m);
                    let sum = g.add(om, r);
                    let d = g.sub(sum, a);
                    let mc = g.mul_col(d, c);
                    let sl = g.slice(mc, 1, 4);
                    let cat = g.concat(&[sl, a]);
                    let sm = g.softmax_rows(cat);
                    let sc = g.scale(sm, 3.0);
                    let emb = g.gather_rows(t, vec![0, 5, 5]);
                    let cat2 = g.concat(&[sc, emb]);
                    let hub = g.huber(cat2, Tensor::zeros(&[3, 10]), vec![1.0, 0.5, 0.0], 0.5);
                    let sub = g.slice(cat2, 0, 5);
                    let ce = g.cross_entropy(sub, vec![0, 2, 4], vec![1.0, 1.0, 0.5]);
                    let hub2 = g.huber(h, target.clone(), vec![1.0, 1.0, 1.0], 0.5);
                    let l1 = g.add(hub, ce);
                    let l2 = g.add(l1, hub2);
                    Ok(g.mean_all(l2))
                },
                GradCheckOptions {
                    per_param: None,
                    seed,
                    ..GradCheckOptions::default()
                },
            )
            .unwrap();
            assert!(report.passes(1e-4), "seed {seed}: {report:?}");
        }
    }
}
