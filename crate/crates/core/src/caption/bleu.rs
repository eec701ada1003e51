use std::collections::HashMap;

fn ngrams<T: Eq + std::hash::Hash + Clone>(tokens: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches and the candidate's n-gram count.
pub fn modified_precision<T: Eq + std::hash::Hash + Clone>(candidate: &[T], references: &[Vec<T>], n: usize) -> (usize, usize) {
    let cand = ngrams(candidate, n);
    let mut max_ref: HashMap<Vec<T>, usize> = HashMap::new();
    for r in references {
        for (g, c) in ngrams(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matches = cand.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    (matches, candidate.len().saturating_sub(n - 1))
}

/// Reference length closest to `c`, the shorter one on ties.
fn closest_ref_len<T>(c: usize, references: &[Vec<T>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BleuStatus {
    Ok,
    EmptyCandidate,
}

/// `scores[n - 1]` is BLEU@n.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuScore {
    pub scores: Vec<f64>,
    pub status: BleuStatus,
}

fn combine(matches: &[usize], totals: &[usize], cand_len: usize, ref_len: usize) -> Vec<f64> {
    let bp = if cand_len == 0 {
        0.0
    } else if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    let mut log_sum = 0.0;
    let mut out = Vec::with_capacity(matches.len());
    for (i, (&m, &t)) in matches.iter().zip(totals).enumerate() {
        if m == 0 || t == 0 || log_sum == f64::NEG_INFINITY {
            log_sum = f64::NEG_INFINITY;
            out.push(0.0);
            continue;
        }
        log_sum += (m as f64 / t as f64).ln();
        out.push(bp * (log_sum / (i + 1) as f64).exp());
    }
    out
}

/// Sentence BLEU@1..=max_n with clipping and brevity penalty.
pub fn bleu<T: Eq + std::hash::Hash + Clone>(candidate: &[T], references: &[Vec<T>], max_n: usize) -> BleuScore {
    assert!((1..=4).contains(&max_n), "BLEU order must be 1..=4");
    if candidate.is_empty() {
        return BleuScore { scores: vec![0.0; max_n], status: BleuStatus::EmptyCandidate };
    }
    let (m, t): (Vec<usize>, Vec<usize>) = (1..=max_n).map(|n| modified_precision(candidate, references, n)).unzip();
    let r = closest_ref_len(candidate.len(), references);
    BleuScore { scores: combine(&m, &t, candidate.len(), r), status: BleuStatus::Ok }
}

/// Corpus BLEU: n-gram counts and lengths are pooled before combining.
pub fn corpus_bleu<T: Eq + std::hash::Hash + Clone>(pairs: &[(Vec<T>, Vec<Vec<T>>)], max_n: usize) -> Vec<f64> {
    assert!((1..=4).contains(&max_n), "BLEU order must be 1..=4");
    let mut m = vec![0; max_n];
    let mut t = vec![0; max_n];
    let (mut c, mut r) = (0, 0);
    for (cand, refs) in pairs {
        for n in 1..=max_n {
            let (a, b) = modified_precision(cand, refs, n);
            m[n - 1] += a;
            t[n - 1] += b;
        }
        c += cand.len();
        r += closest_ref_len(cand.len(), refs);
    }
    combine(&m, &t, c, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split(' ').collect()
    }

    #[test]
    fn clipping_example() {
        let (m, t) = modified_precision(&toks("a a a"), &[toks("a b")], 1);
        assert_eq!((m, t), (1, 3));
        assert_eq!(m as f64 / t as f64, 1.0 / 3.0);
    }

    #[test]
    fn identical_is_one() {
        let c = toks("the cat sat on the mat");
        let s = bleu(&c, &[c.clone()], 4);
        assert_eq!(s.scores, vec![1.0; 4]);
        let short = toks("a b");
        assert_eq!(bleu(&short, &[short.clone()], 4).scores, vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(bleu(&toks("x y"), &[toks("a b")], 2).scores, vec![0.0, 0.0]);
        let e: Vec<&str> = Vec::new();
        assert_eq!(bleu(&e, &[toks("a")], 1).status, BleuStatus::EmptyCandidate);
    }

    #[test]
    fn brevity_penalty() {
        let s = bleu(&toks("a b"), &[toks("a b c d")], 1);
        assert!((s.scores[0] - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn corpus_pools_counts() {
        let pairs = vec![
            (toks("a b c d"), vec![toks("a b c d")]),
            (toks("a b c e"), vec![toks("a b c d")]),
        ];
        let s = corpus_bleu(&pairs, 4);
        let want = ((7.0f64 / 8.0).ln() + (5.0f64 / 6.0).ln() + (3.0f64 / 4.0).ln() + 0.5f64.ln()) / 4.0;
        assert!((s[3] - want.exp()).abs() < 1e-12);
    }
}
