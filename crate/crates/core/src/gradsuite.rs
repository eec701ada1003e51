//! Finite-difference checks for every differentiable operation, grouped by
//! module. Shared by the test suites and the `gradcheck` command.

use crate::caption::{caption_nll, caption_pair, stack_frames, CaptionModel};
use crate::classify::ClassifierHead;
use crate::config::RunConfig;
use crate::error::{invalid, Result};
use crate::numeric::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use crate::numeric::{Graph, NodeId, ParamStore, RngState, Tensor};
use crate::recurrent::{gru_step, unroll, CouplingMode, GruWeights, MgruConfig, MgruState, MgruWeights};
use crate::seq2seq::{
    attend_decode_step, reconstruct_loss, sample_window, AttnDecoderWeights, AttnDims, AttnMemory, Direction,
    ReconModel, Regularization,
};

pub const MODULES: [&str; 5] = ["numeric", "recurrent", "seq2seq", "classify", "caption"];

/// Worst result of one operation over all seeds.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub module: &'static str,
    pub op: &'static str,
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub worst_seed: u64,
    pub checked: usize,
}

impl OpCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

type Case = fn(u64) -> Result<GradCheckReport>;

fn cases(module: &str) -> Option<Vec<(&'static str, &'static str, Case)>> {
    let v: Vec<(&'static str, &'static str, Case)> = match module {
        "numeric" => vec![("numeric", "primitives", primitives), ("numeric", "huber", huber)],
        "recurrent" => vec![
            ("recurrent", "gru_step", gru),
            ("recurrent", "mgru_step_fast_to_slow", mgru_fast_to_slow),
            ("recurrent", "mgru_step_slow_to_fast", mgru_slow_to_fast),
        ],
        "seq2seq" => vec![
            ("seq2seq", "attention_step", attention),
            ("seq2seq", "reconstruction_loss", reconstruction),
        ],
        "classify" => vec![("classify", "classifier_head", head)],
        "caption" => vec![("caption", "caption_decoder", caption)],
        _ => return None,
    };
    Some(v)
}

/// Runs every check of `module` (or of all modules for `"all"`) over seeds
/// `0..seeds`.
pub fn run(module: &str, seeds: u64) -> Result<Vec<OpCheck>> {
    let names: Vec<&str> = if module == "all" { MODULES.to_vec() } else { vec![module] };
    let mut out = Vec::new();
    for name in names {
        let Some(list) = cases(name) else {
            return invalid(format!(
                "unknown module `{name}`; expected one of {} or all",
                MODULES.join(", ")
            ));
        };
        for (module, op, case) in list {
            let mut check = OpCheck {
                module,
                op,
                max_rel_error: 0.0,
                worst: None,
                worst_seed: 0,
                checked: 0,
            };
            for seed in 0..seeds {
                let r = case(seed)?;
                check.checked += r.checked;
                if r.max_rel_error > check.max_rel_error || check.worst.is_none() {
                    check.max_rel_error = r.max_rel_error;
                    check.worst = r.worst;
                    check.worst_seed = seed;
                }
            }
            out.push(check);
        }
    }
    Ok(out)
}

fn all_coords(seed: u64) -> GradCheckOptions {
    GradCheckOptions { per_param: None, seed, ..GradCheckOptions::default() }
}

fn sampled(seed: u64, k: usize) -> GradCheckOptions {
    GradCheckOptions { per_param: Some(k), seed, ..GradCheckOptions::default() }
}

fn random_matrix(rng: &mut RngState, r: usize, c: usize) -> Tensor<f64> {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

fn accumulate(g: &mut Graph<f64>, total: Option<NodeId>, term: NodeId) -> Option<NodeId> {
    Some(match total {
        Some(t) => g.add(t, term),
        None => term,
    })
}

fn randomize_biases(store: &mut ParamStore<f64>, needle: &str, scale: f64, rng: &mut RngState) {
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains(needle) {
            for v in store.value_mut(id).data_mut() {
                *v = rng.uniform_in(-scale, scale);
            }
        }
    }
}

fn primitives(seed: u64) -> Result<GradCheckReport> {
    let mut rng = RngState::new(seed);
    let mut s = ParamStore::new();
    for (name, r, c) in [("x", 3, 4), ("w", 5, 4), ("b", 1, 5), ("c", 3, 1), ("t", 6, 2)] {
        s.add(name, random_matrix(&mut rng, r, c))?;
    }
    let ids: Vec<_> = s.ids().collect();
    let target = random_matrix(&mut rng, 3, 5);
    check_gradients(
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
            let sub = g.slice(cat2, 0, 5);
            let ce = g.cross_entropy(sub, vec![0, 2, 4], vec![1.0, 1.0, 0.5]);
            let sq = g.mul(h, h);
            let l2 = g.mean_all(sq);
            let tgt = g.constant(target.clone());
            let diff = g.sub(h, tgt);
            let dsum = g.sum_all(diff);
            let l1 = g.add(ce, l2);
            Ok(g.add(l1, dsum))
        },
        all_coords(seed),
    )
}

fn huber(seed: u64) -> Result<GradCheckReport> {
    let mut rng = RngState::new(seed);
    let mut s = ParamStore::new();
    // residuals spread over both branches, kept clear of the knee where the
    // second derivative jumps
    let mut pred = Vec::new();
    while pred.len() < 24 {
        let v = rng.uniform_in(-2.0, 2.0);
        if (v.abs() - 0.5).abs() > 0.01 {
            pred.push(v);
        }
    }
    let id = s.add("pred", Tensor::matrix(4, 6, pred)?)?;
    let weights: Vec<f64> = (0..4).map(|_| rng.uniform_in(0.0, 1.0)).collect();
    check_gradients(
        &mut s,
        |g, st| {
            let p = g.param(st, id);
            Ok(g.huber(p, Tensor::zeros(&[4, 6]), weights.clone(), 0.5))
        },
        all_coords(seed),
    )
}

fn gru(seed: u64) -> Result<GradCheckReport> {
    let mut rng = RngState::new(seed);
    let mut store = ParamStore::new();
    let w = GruWeights::new(&mut store, "gru", 3, 4, 2, &mut rng)?;
    randomize_biases(&mut store, ".b_", 0.5, &mut rng);
    let xs: Vec<Tensor<f64>> = (0..3).map(|_| random_matrix(&mut rng, 2, 3)).collect();
    let h0 = random_matrix(&mut rng, 2, 4);
    check_gradients(
        &mut store,
        |g, st| {
            let mut h = g.constant(h0.clone());
            let mut total = None;
            for x in &xs {
                let xn = g.constant(x.clone());
                let (h1, o) = gru_step(g, st, &w, xn, h)?;
                h = h1;
                let s = g.sum_all(o);
                let sq = g.mul(s, s);
                total = accumulate(g, total, sq);
            }
            Ok(total.unwrap())
        },
        all_coords(seed),
    )
}

// periods (1, 2, 4) over five steps: every group skips at least one step
fn mgru(seed: u64, mode: CouplingMode) -> Result<GradCheckReport> {
    let mut rng = RngState::new(seed);
    let mut store = ParamStore::new();
    let c = MgruConfig::new(vec![2, 3, 2], vec![1, 2, 4], mode)?;
    let w = MgruWeights::new(&mut store, "enc", c, 3, 3, &mut rng)?;
    randomize_biases(&mut store, ".b_", 0.3, &mut rng);
    let xs: Vec<Tensor<f64>> = (0..5).map(|_| random_matrix(&mut rng, 2, 3)).collect();
    check_gradients(
        &mut store,
        |g, st| {
            let xn: Vec<_> = xs.iter().map(|x| g.constant(x.clone())).collect();
            let init = MgruState::zeros(g, 2, 7);
            let run = unroll(g, st, &w, &xn, init)?;
            let mut total = None;
            for (&o, &h) in run.outputs.iter().zip(&run.states) {
                let a = g.tanh(o);
                let s = g.sum_all(a);
                let hs = g.sum_all(h);
                let term = g.mul(s, hs);
                total = accumulate(g, total, term);
            }
            Ok(total.unwrap())
        },
        all_coords(seed),
    )
}

fn mgru_fast_to_slow(seed: u64) -> Result<GradCheckReport> {
    mgru(seed, CouplingMode::FastToSlow)
}

fn mgru_slow_to_fast(seed: u64) -> Result<GradCheckReport> {
    mgru(seed, CouplingMode::SlowToFast)
}

fn attention(seed: u64) -> Result<GradCheckReport> {
    let mut rng = RngState::new(seed);
    let mut store = ParamStore::new();
    let dims = AttnDims {
        input_dim: 3,
        context_dim: 4,
        state_dim: 5,
        out_dim: 3,
        attention_size: 6,
    };
    let w = AttnDecoderWeights::new(&mut store, "dec", dims, &mut rng)?;
    randomize_biases(&mut store, "b", 0.2, &mut rng);
    let outs: Vec<Tensor<f64>> = (0..4).map(|_| random_matrix(&mut rng, 2, 4)).collect();
    check_gradients(
        &mut store,
        |g, st| {
            let o: Vec<_> = outs.iter().map(|t| g.constant(t.clone())).collect();
            let mem = AttnMemory::new(g, st, &w, &o)?;
            let mut a = g.constant(Tensor::zeros(&[2, 4]));
            let mut h = g.constant(Tensor::full(&[2, 5], 0.05));
            let mut total = None;
            for t in 0..3 {
                let y = g.constant(Tensor::full(&[2, 3], 0.2 * t as f64 - 0.1));
                let step = attend_decode_step(g, st, &w, &mem, y, a, h)?;
                let sq = g.mul(step.output, step.output);
                let s = g.sum_all(sq);
                total = accumulate(g, total, s);
                a = step.context;
                h = step.state;
            }
            Ok(total.unwrap())
        },
        sampled(seed, 16),
    )
}

fn reconstruction(seed: u64) -> Result<GradCheckReport> {
    let mut rng = RngState::new(seed);
    let mut store = ParamStore::new();
    let cfg = MgruConfig::new(vec![2, 2, 2], vec![1, 2, 4], CouplingMode::FastToSlow)?;
    let m = ReconModel::new(&mut store, cfg, 2, 4, &mut rng)?;
    let v1 = random_matrix(&mut rng, 11, 2);
    let v2 = random_matrix(&mut rng, 5, 2);
    let w1 = sample_window(&v1, 3, &mut rng)?;
    let w2 = sample_window(&v2, 3, &mut rng)?;
    let dir = if seed % 2 == 0 { Direction::Past } else { Direction::Future };
    check_gradients(
        &mut store,
        |g, st| {
            let mut rng = RngState::new(0);
            Ok(reconstruct_loss(g, st, &m, &[&w1, &w2], dir, 0.5, Regularization::eval(), &mut rng)?.loss)
        },
        sampled(seed, 6),
    )
}

fn head(seed: u64) -> Result<GradCheckReport> {
    let mut rng = RngState::new(seed);
    let mut store = ParamStore::new();
    let head = ClassifierHead::new(&mut store, 4, 6, 3, &mut rng)?;
    let x = random_matrix(&mut rng, 3, 4);
    check_gradients(
        &mut store,
        |g, s| {
            let xn = g.constant(x.clone());
            head.loss(g, s, xn, &[0, 2, 3], Regularization::eval(), &mut RngState::new(0))
        },
        sampled(seed, 16),
    )
}

fn caption(seed: u64) -> Result<GradCheckReport> {
    let cfg = RunConfig {
        seq_len: 3,
        cell_size: 6,
        attention_size: 4,
        embed_dim: Some(3),
        batch_size: 2,
        ..RunConfig::default()
    };
    let mut rng = RngState::new(seed);
    let mut store = ParamStore::new();
    let model = CaptionModel::new(&mut store, &cfg, 2, 6, &mut rng)?;
    let v1 = random_matrix(&mut rng, 3, 2);
    let v2 = random_matrix(&mut rng, 3, 2);
    let frames = stack_frames(&[&v1, &v2], 150)?;
    let pairs = vec![caption_pair(&[4, 5], 3), caption_pair(&[5], 3)];
    check_gradients(
        &mut store,
        |g, s| {
            let (nll, _) = caption_nll(g, s, &model, &frames, &pairs, Regularization::eval(), &mut RngState::new(0))?;
            Ok(nll)
        },
        sampled(seed, 16),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_module_rejected() {
        assert!(run("optics", 1).is_err());
    }

    #[test]
    fn every_module_has_checks() {
        for m in MODULES {
            let r = run(m, 1).unwrap();
            assert!(!r.is_empty());
            assert!(r.iter().all(|c| c.checked > 0));
        }
    }
}
