use crate::error::{invalid, Result};
use crate::numeric::{RngState, Tensor};

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest row of `centers`; the lowest index wins ties.
pub fn nearest(centers: &Tensor<f64>, x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for k in 0..centers.rows() {
        let d = sq_dist(centers.row_slice(k), x);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Centers and the within-cluster sum of squares measured after each
/// assignment pass.
#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub centers: Tensor<f64>,
    pub sse: Vec<f64>,
}

fn seed_centers(x: &Tensor<f64>, k: usize, rng: &mut RngState) -> Tensor<f64> {
    let (n, d) = (x.rows(), x.cols());
    let mut centers = Tensor::zeros(&[k, d]);
    let first = rng.below(n);
    centers.row_slice_mut(0).copy_from_slice(x.row_slice(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(x.row_slice(i), x.row_slice(first))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.below(n)
        };
        centers.row_slice_mut(c).copy_from_slice(x.row_slice(pick));
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(x.row_slice(i), x.row_slice(pick)));
        }
    }
    centers
}

/// Lloyd's algorithm from k-means++ seeds. Stops early once assignments
/// no longer change.
pub fn kmeans_fit(x: &Tensor<f64>, k: usize, iters: usize, rng: &mut RngState) -> Result<KmeansFit> {
    let (n, d) = (x.rows(), x.cols());
    if k == 0 {
        return invalid("k-means needs at least one center");
    }
    if n < k {
        return invalid(format!("k-means with {k} centers needs at least {k} points, got {n}"));
    }
    if !x.is_finite() {
        return invalid("k-means input contains non-finite values");
    }
    let mut centers = seed_centers(x, k, rng);
    let mut assign = vec![usize::MAX; n];
    let mut sse = Vec::new();
    for _ in 0..iters.max(1) {
        let mut changed = false;
        let mut total = 0.0;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let a = nearest(&centers, x.row_slice(i));
            changed |= a != assign[i];
            assign[i] = a;
            dists[i] = sq_dist(centers.row_slice(a), x.row_slice(i));
            total += dists[i];
        }
        sse.push(total);
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i] * d..(assign[i] + 1) * d].iter_mut().zip(x.row_slice(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centers.row_slice_mut(c).iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                    *dst = s / counts[c] as f64;
                }
            } else {
                // farthest point from its current center, lowest index on ties
                let far = (0..n).fold(0, |best, i| if dists[i] > dists[best] { i } else { best });
                centers.row_slice_mut(c).copy_from_slice(x.row_slice(far));
                dists[far] = 0.0;
            }
        }
    }
    Ok(KmeansFit { centers, sse })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_obvious_clusters() {
        let x = Tensor::matrix(4, 1, vec![0.0, 0.0, 10.0, 10.0]).unwrap();
        for seed in 0..10 {
            let fit = kmeans_fit(&x, 2, 10, &mut RngState::new(seed)).unwrap();
            let mut c = fit.centers.data().to_vec();
            c.sort_by(f64::total_cmp);
            assert_eq!(c, vec![0.0, 10.0]);
        }
    }

    #[test]
    fn single_center_is_mean() {
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap();
        let fit = kmeans_fit(&x, 1, 5, &mut RngState::new(1)).unwrap();
        assert_eq!(fit.centers.data(), &[3.0, 5.0]);
    }

    #[test]
    fn sse_never_increases() {
        for seed in 0..10 {
            let mut rng = RngState::new(seed);
            let mut data = Vec::new();
            for i in 0..90 {
                let c = (i % 3) as f64 * 4.0;
                data.push(c + rng.normal());
                data.push(-c + rng.normal());
            }
            let x = Tensor::matrix(90, 2, data).unwrap();
            let fit = kmeans_fit(&x, 5, 50, &mut rng).unwrap();
            for w in fit.sse.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{:?}", fit.sse);
            }
        }
    }

    #[test]
    fn too_few_points() {
        let x = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(kmeans_fit(&x, 3, 5, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let c = Tensor::matrix(2, 1, vec![-1.0, 1.0]).unwrap();
        assert_eq!(nearest(&c, &[0.0]), 0);
    }

    #[test]
    fn duplicate_points_still_fill_all_centers() {
        let x = Tensor::matrix(5, 1, vec![1.0, 1.0, 1.0, 1.0, 7.0]).unwrap();
        let fit = kmeans_fit(&x, 3, 10, &mut RngState::new(3)).unwrap();
        assert!(fit.centers.is_finite());
        assert_eq!(*fit.sse.last().unwrap(), 0.0);
    }
}
