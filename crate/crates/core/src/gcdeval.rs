//! Clustering accuracy under an optimal cluster-to-class matching, and a
//! k-means baseline.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Optimal assignment of rows to columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `mapping[row] = column`.
    pub mapping: Vec<usize>,
    pub total: f64,
}

/// Minimum-cost perfect matching on a square matrix, O(n³).
///
/// Shortest augmenting paths with row/column potentials. Rows are inserted in
/// index order and ties on the minimal slack go to the lowest column index,
/// so the result is reproducible.
pub fn hungarian(cost: &Matrix) -> Result<Assignment> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::shape("hungarian", "square matrix", format!("{:?}", cost.shape())));
    }
    if !cost.is_finite() {
        return Err(Error::NonFinite("hungarian"));
    }
    if n == 0 {
        return Ok(Assignment {
            mapping: Vec::new(),
            total: 0.0,
        });
    }
    // 1-based arrays; index 0 is the virtual source column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut mapping = vec![0; n];
    for j in 1..=n {
        mapping[col_owner[j] - 1] = j - 1;
    }
    let total = mapping.iter().enumerate().map(|(r, &c)| cost[(r, c)]).sum();
    Ok(Assignment { mapping, total })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GcdReport {
    pub acc_all: f64,
    pub acc_known: f64,
    pub acc_unknown: f64,
    pub n_known: usize,
    pub n_unknown: usize,
    pub matched_known: usize,
    pub matched_unknown: usize,
    /// Predicted cluster id → class id under the single optimal matching.
    #[serde(skip)]
    pub mapping: Vec<usize>,
}

/// Hungarian-matched accuracy on all samples, then restricted to the known
/// and unknown subsets under that same mapping. An empty subset scores 0.
pub fn gcd_accuracy(pred: &[usize], gt: &[usize], known_mask: &[bool]) -> Result<GcdReport> {
    if pred.len() != gt.len() || pred.len() != known_mask.len() {
        return Err(Error::shape(
            "gcd_accuracy",
            format!("{} predictions", pred.len()),
            format!("{} labels, {} mask entries", gt.len(), known_mask.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("gcd_accuracy on zero samples".into()));
    }
    let size = pred.iter().chain(gt).max().map_or(0, |m| m + 1);
    // zero-padded square overlap; maximize overlap = minimize its negation
    let mut cost = Matrix::zeros(size, size);
    for (&p, &g) in pred.iter().zip(gt) {
        cost[(p, g)] -= 1.0;
    }
    let mapping = hungarian(&cost)?.mapping;
    let (mut n_known, mut n_unknown, mut matched_known, mut matched_unknown) = (0, 0, 0, 0);
    for ((&p, &g), &known) in pred.iter().zip(gt).zip(known_mask) {
        let hit = usize::from(mapping[p] == g);
        if known {
            n_known += 1;
            matched_known += hit;
        } else {
            n_unknown += 1;
            matched_unknown += hit;
        }
    }
    let frac = |m: usize, n: usize| if n == 0 { 0.0 } else { m as f64 / n as f64 };
    Ok(GcdReport {
        acc_all: frac(matched_known + matched_unknown, n_known + n_unknown),
        acc_known: frac(matched_known, n_known),
        acc_unknown: frac(matched_unknown, n_unknown),
        n_known,
        n_unknown,
        matched_known,
        matched_unknown,
        mapping,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    /// Within-cluster sum of squares after every Lloyd iteration.
    pub objective: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. A cluster that goes empty is
/// re-seeded at the point farthest from its current centroid.
pub fn kmeans(x: &Matrix, k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let (n, d) = x.shape();
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if n < k {
        return Err(Error::Config(format!("k-means with k = {k} on {n} points")));
    }
    let mut rng = Rng::new(seed);
    let mut centroids = Matrix::zeros(k, d);
    centroids.row_mut(0).copy_from_slice(x.row(rng.below(n)));
    let mut nearest: Vec<f64> = (0..n).map(|r| sq_dist(x.row(r), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut chosen = n - 1;
            for (r, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = r;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.below(n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for r in 0..n {
            nearest[r] = nearest[r].min(sq_dist(x.row(r), centroids.row(c)));
        }
    }

    let mut labels = vec![0; n];
    let mut objective = Vec::new();
    for iter in 0..max_iter.max(1) {
        let mut changed = false;
        for r in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dd = sq_dist(x.row(r), centroids.row(c));
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            if labels[r] != best {
                labels[r] = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = Matrix::zeros(k, d);
        for r in 0..n {
            counts[labels[r]] += 1;
            for (s, v) in sums.row_mut(labels[r]).iter_mut().zip(x.row(r)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            // farthest point from its own centroid, among clusters that can spare one
            let far = (0..n)
                .filter(|&r| counts[labels[r]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(x.row(a), centroids.row(labels[a]))
                        .total_cmp(&sq_dist(x.row(b), centroids.row(labels[b])))
                        .then(b.cmp(&a))
                });
            if let Some(r) = far {
                counts[labels[r]] -= 1;
                labels[r] = c;
                counts[c] = 1;
                let point = x.row(r).to_vec();
                centroids.row_mut(c).copy_from_slice(&point);
                changed = true;
            }
        }
        let obj = (0..n).map(|r| sq_dist(x.row(r), centroids.row(labels[r]))).sum();
        objective.push(obj);
        if !changed && iter > 0 {
            break;
        }
    }
    Ok(KMeansResult {
        labels,
        centroids,
        objective,
    })
}
