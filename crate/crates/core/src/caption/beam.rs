use crate::error::{invalid, Result};

/// An autoregressive model queried one token at a time.
pub trait StepModel {
    type State: Clone;

    fn initial(&mut self) -> Result<Self::State>;

    /// Log-probabilities of the next token after feeding `prev`, and the
    /// state that follows.
    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)>;
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub beam: usize,
    /// Maximum generated tokens, `<EOS>` included.
    pub max_len: usize,
    pub go: usize,
    pub eos: usize,
    /// Tokens never generated.
    pub banned: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHyp {
    /// Generated tokens, ending with `<EOS>` when finished.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub finished: bool,
}

fn check(cfg: &SearchConfig) -> Result<()> {
    if cfg.beam == 0 {
        return invalid("beam size must be at least 1");
    }
    if cfg.max_len == 0 {
        return invalid("maximum length must be at least 1");
    }
    Ok(())
}

/// Argmax decoding; the lowest index wins ties. The last of `max_len`
/// tokens is `<EOS>` unless it is banned or impossible.
pub fn greedy_search<M: StepModel>(model: &mut M, cfg: &SearchConfig) -> Result<BeamHyp> {
    check(cfg)?;
    let mut state = model.initial()?;
    let mut prev = cfg.go;
    let mut hyp = BeamHyp { tokens: Vec::new(), logprob: 0.0, finished: false };
    for t in 1..=cfg.max_len {
        let (lp, next) = model.step(&state, prev)?;
        let can_end = !cfg.banned.contains(&cfg.eos) && lp.get(cfg.eos).is_some_and(|&p| p > f64::NEG_INFINITY);
        let best = if t == cfg.max_len && can_end {
            cfg.eos
        } else {
            (0..lp.len())
                .filter(|v| !cfg.banned.contains(v))
                .fold(None, |b: Option<usize>, v| match b {
                    Some(b) if lp[b] >= lp[v] => Some(b),
                    _ => Some(v),
                })
                .ok_or_else(|| crate::Error::InvalidArgument("every token is banned".into()))?
        };
        hyp.tokens.push(best);
        hyp.logprob += lp[best];
        if best == cfg.eos {
            hyp.finished = true;
            break;
        }
        state = next;
        prev = best;
    }
    Ok(hyp)
}

struct Live<S> {
    hyp: BeamHyp,
    state: S,
}

/// Beam search without length normalization.
///
/// At each step the best `beam` continuations survive; those ending in
/// `<EOS>` move to a finished pool. At the final step nothing is expanded
/// further, so every `<EOS>` continuation joins the pool. Returns the best
/// finished hypothesis, or the best unfinished one when none finished.
/// With `beam = 1` this equals [`greedy_search`].
pub fn beam_search<M: StepModel>(model: &mut M, cfg: &SearchConfig) -> Result<BeamHyp> {
    check(cfg)?;
    let mut live = vec![Live {
        hyp: BeamHyp { tokens: Vec::new(), logprob: 0.0, finished: false },
        state: model.initial()?,
    }];
    let mut pool: Vec<BeamHyp> = Vec::new();
    let mut fallback: Vec<BeamHyp> = Vec::new();
    for t in 1..=cfg.max_len {
        let last = t == cfg.max_len;
        // (score, parent, token)
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (i, l) in live.iter().enumerate() {
            let prev = l.hyp.tokens.last().copied().unwrap_or(cfg.go);
            let (lp, next) = model.step(&l.state, prev)?;
            for (v, &p) in lp.iter().enumerate() {
                if !cfg.banned.contains(&v) && p > f64::NEG_INFINITY {
                    cands.push((l.hyp.logprob + p, i, v));
                }
            }
            states.push(next);
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let extend = |&(score, parent, token): &(f64, usize, usize)| {
            let mut tokens = live[parent].hyp.tokens.clone();
            tokens.push(token);
            BeamHyp { tokens, logprob: score, finished: token == cfg.eos }
        };
        if last {
            pool.extend(cands.iter().filter(|c| c.2 == cfg.eos).map(extend));
        }
        let mut next_live = Vec::new();
        for c in cands.iter().take(cfg.beam) {
            let hyp = extend(c);
            if hyp.finished {
                if !last {
                    pool.push(hyp);
                }
            } else if last {
                fallback.push(hyp);
            } else {
                next_live.push(Live { hyp, state: states[c.1].clone() });
            }
        }
        live = next_live;
        let best_pool = pool.iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
        let best_live = live.iter().map(|l| l.hyp.logprob).fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || best_pool >= best_live {
            break;
        }
    }
    let pick = |hyps: Vec<BeamHyp>| {
        hyps.into_iter()
            .fold(None, |best: Option<BeamHyp>, h| match best {
                Some(b) if b.logprob >= h.logprob => Some(b),
                _ => Some(h),
            })
    };
    pick(pool)
        .or_else(|| pick(fallback))
        .or_else(|| pick(live.into_iter().map(|l| l.hyp).collect()))
        .ok_or_else(|| crate::Error::InvalidArgument("every token is banned".into()))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numeric::RngState;

    /// Next-token distribution drawn from a hash of the whole prefix.
    pub struct TableModel {
        pub vocab: usize,
        pub seed: u64,
        pub sharpness: f64,
    }

    impl StepModel for TableModel {
        type State = Vec<usize>;

        fn initial(&mut self) -> Result<Vec<usize>> {
            Ok(Vec::new())
        }

        fn step(&mut self, state: &Vec<usize>, prev: usize) -> Result<(Vec<f64>, Vec<usize>)> {
            let mut prefix = state.clone();
            prefix.push(prev);
            let key = prefix.iter().fold(self.seed, |h, &t| h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 1));
            let mut rng = RngState::new(key);
            let logits: Vec<f64> = (0..self.vocab).map(|_| self.sharpness * rng.normal()).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z = logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
            Ok((logits.iter().map(|l| l - z).collect(), prefix))
        }
    }

    /// Best finished sequence of at most `max_len` tokens by brute force,
    /// falling back to the best unfinished full-length one.
    pub fn enumerate<M: StepModel>(model: &mut M, cfg: &SearchConfig) -> BeamHyp {
        fn walk<M: StepModel>(
            model: &mut M,
            cfg: &SearchConfig,
            state: M::State,
            prefix: Vec<usize>,
            score: f64,
            best: &mut (Option<BeamHyp>, Option<BeamHyp>),
        ) {
            let prev = prefix.last().copied().unwrap_or(cfg.go);
            let (lp, next) = model.step(&state, prev).unwrap();
            for v in 0..lp.len() {
                if cfg.banned.contains(&v) {
                    continue;
                }
                let mut tokens = prefix.clone();
                tokens.push(v);
                let s = score + lp[v];
                if v == cfg.eos {
                    if best.0.as_ref().is_none_or(|b| s > b.logprob) {
                        best.0 = Some(BeamHyp { tokens, logprob: s, finished: true });
                    }
                } else if tokens.len() == cfg.max_len {
                    if best.1.as_ref().is_none_or(|b| s > b.logprob) {
                        best.1 = Some(BeamHyp { tokens, logprob: s, finished: false });
                    }
                } else {
                    walk(model, cfg, next.clone(), tokens, s, best);
                }
            }
        }
        let mut best = (None, None);
        let init = model.initial().unwrap();
        walk(model, cfg, init, Vec::new(), 0.0, &mut best);
        best.0.or(best.1).unwrap()
    }

    fn cfg(beam: usize, max_len: usize) -> SearchConfig {
        SearchConfig { beam, max_len, go: 0, eos: 2, banned: vec![0, 1] }
    }

    #[test]
    fn matches_enumeration_on_five_token_models() {
        for seed in 0..200 {
            let mut m = TableModel { vocab: 5, seed, sharpness: 2.0 };
            let c = cfg(5, 3);
            let beam = beam_search(&mut m, &c).unwrap();
            let exact = enumerate(&mut m, &c);
            assert_eq!(beam.tokens, exact.tokens, "seed {seed}");
            assert!((beam.logprob - exact.logprob).abs() < 1e-12);
        }
    }

    #[test]
    fn width_one_is_greedy() {
        for seed in 0..200 {
            let mut m = TableModel { vocab: 7, seed, sharpness: 1.5 };
            let c = cfg(1, 8);
            let greedy = greedy_search(&mut m, &c).unwrap();
            let beam = beam_search(&mut m, &c).unwrap();
            assert!(greedy.finished);
            assert_eq!(beam, greedy, "seed {seed}");
        }
    }

    #[test]
    fn wider_beam_never_worse_than_greedy_here() {
        for seed in 0..100 {
            let mut m = TableModel { vocab: 5, seed, sharpness: 2.0 };
            let greedy = greedy_search(&mut m, &cfg(1, 3)).unwrap();
            let beam = beam_search(&mut m, &cfg(5, 3)).unwrap();
            assert!(beam.logprob >= greedy.logprob);
        }
    }

    struct EosFirst;

    impl StepModel for EosFirst {
        type State = ();

        fn initial(&mut self) -> Result<()> {
            Ok(())
        }

        fn step(&mut self, _: &(), _: usize) -> Result<(Vec<f64>, ())> {
            Ok((vec![-5.0, -5.0, -0.01, -5.0, -6.0], ()))
        }
    }

    #[test]
    fn eos_first_gives_empty_caption() {
        let hyp = beam_search(&mut EosFirst, &cfg(3, 5)).unwrap();
        assert_eq!(hyp.tokens, vec![2]);
        assert!(hyp.finished);
        assert_eq!(greedy_search(&mut EosFirst, &cfg(1, 5)).unwrap(), hyp);
    }

    #[test]
    fn unfinished_is_flagged() {
        let mut m = TableModel { vocab: 5, seed: 1, sharpness: 1.0 };
        let c = SearchConfig { banned: vec![0, 1, 2], ..cfg(2, 3) };
        let hyp = beam_search(&mut m, &c).unwrap();
        assert!(!hyp.finished);
        assert_eq!(hyp.tokens.len(), 3);
        assert!(beam_search(&mut m, &cfg(0, 3)).is_err());
    }
}
