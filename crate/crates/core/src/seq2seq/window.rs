use crate::error::{invalid, Result};
use crate::numeric::{Real, RngState, Tensor};

/// One training example: a present clip and its past and future contexts,
/// each exactly `K` rows. Rows that did not come from the video are zero and
/// flagged invalid in the matching mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconWindow<F> {
    pub past: Tensor<F>,
    pub present: Tensor<F>,
    pub future: Tensor<F>,
    pub past_mask: Vec<bool>,
    pub present_mask: Vec<bool>,
    pub future_mask: Vec<bool>,
    /// First frame of the window in the source video.
    pub start: usize,
}

impl<F: Real> ReconWindow<F> {
    pub fn seq_len(&self) -> usize {
        self.present.rows()
    }

    pub fn dim(&self) -> usize {
        self.present.cols()
    }
}

/// Samples `3K` consecutive frames from a `T x D` feature matrix.
///
/// Long videos yield a uniformly placed window with three full segments.
/// Videos shorter than `3K` frames are split into consecutive runs of
/// `ceil(T/3)`, `ceil(T/3)` and the remainder, each zero-padded at the tail.
pub fn sample_window<F: Real>(features: &Tensor<F>, k: usize, rng: &mut RngState) -> Result<ReconWindow<F>> {
    if k == 0 {
        return invalid("segment length K must be at least 1");
    }
    let t = features.rows();
    let d = features.cols();
    let (start, bounds) = if t >= 3 * k {
        let s = rng.below(t - 3 * k + 1);
        (s, [(s, s + k), (s + k, s + 2 * k), (s + 2 * k, s + 3 * k)])
    } else {
        let third = t.div_ceil(3);
        let a = third.min(t);
        let b = (2 * third).min(t);
        (0, [(0, a), (a, b), (b, t)])
    };
    let segment = |(lo, hi): (usize, usize)| {
        let mut out = Tensor::zeros(&[k, d]);
        let mut mask = vec![false; k];
        for (row, src) in (lo..hi).enumerate().take(k) {
            out.row_slice_mut(row).copy_from_slice(features.row_slice(src));
            mask[row] = true;
        }
        (out, mask)
    };
    let (past, past_mask) = segment(bounds[0]);
    let (present, present_mask) = segment(bounds[1]);
    let (future, future_mask) = segment(bounds[2]);
    Ok(ReconWindow {
        past,
        present,
        future,
        past_mask,
        present_mask,
        future_mask,
        start,
    })
}
