//! The logical regularizer and the comparison penalties.
//!
//! L-Reg is computed on the class-by-feature affinity `G = Ŷᵀ Z` of a batch.
//! Each column of `G` (one semantic dimension) is softmaxed over the class
//! axis, giving `σ[:, i]`, and the loss is
//!
//! ```text
//! L = (1/M) Σ_i H(σ[:, i]) − H(p̄),    p̄_j = (1/M) Σ_i σ[j, i]
//! ```
//!
//! which equals `−I(J; I)` for the joint `p(j, i) = σ[j, i] / M`. Minimizing
//! it makes every feature dimension commit to few classes while keeping the
//! classes evenly covered by the dimensions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{entropy_of, neg_plogp_deriv, softmax_in_place, Matrix, LOG_EPS};

/// Class-by-dimension affinity `Ŷᵀ Z` (K×M).
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix(Matrix);

impl AffinityMatrix {
    pub fn new(g: Matrix) -> Result<Self> {
        if g.rows() == 0 || g.cols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "affinity matrix needs K, M >= 1, got {:?}",
                g.shape()
            )));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("AffinityMatrix::new"));
        }
        Ok(Self(g))
    }

    pub fn classes(&self) -> usize {
        self.0.rows()
    }

    pub fn dims(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Column-stochastic K×M matrix: `σ[:, i]` is a distribution over classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaMatrix(Matrix);

impl SigmaMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.0.column(i)
    }

    /// Dimension-averaged class distribution `p̄`.
    pub fn class_marginal(&self) -> Vec<f64> {
        let m = self.0.cols() as f64;
        (0..self.0.rows())
            .map(|j| self.0.row(j).iter().sum::<f64>() / m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossWithGrad {
    pub value: f64,
    pub grad: Matrix,
}

/// Value and gradients of L-Reg evaluated on a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLReg {
    pub value: f64,
    pub d_z: Matrix,
    pub d_yhat: Matrix,
}

pub fn affinity(z: &Matrix, yhat: &Matrix) -> Result<AffinityMatrix> {
    if z.rows() != yhat.rows() {
        return Err(Error::shape("affinity", format!("batch size {}", z.rows()), yhat.rows()));
    }
    if z.rows() == 0 {
        return Err(Error::InvalidArgument("affinity of an empty batch".into()));
    }
    AffinityMatrix::new(yhat.t_matmul(z)?)
}

pub fn column_softmax(g: &AffinityMatrix) -> SigmaMatrix {
    let t = g.matrix().transpose();
    let mut s = t;
    for i in 0..s.rows() {
        softmax_in_place(s.row_mut(i));
    }
    SigmaMatrix(s.transpose())
}

fn lreg_from_sigma(sigma: &SigmaMatrix) -> f64 {
    let s = sigma.matrix();
    let m = s.cols();
    let conditional: f64 = (0..m).map(|i| entropy_of(&s.column(i))).sum::<f64>() / m as f64;
    conditional - entropy_of(&sigma.class_marginal())
}

pub fn lreg_value(g: &AffinityMatrix) -> f64 {
    if g.classes() == 1 {
        return 0.0;
    }
    lreg_from_sigma(&column_softmax(g))
}

/// `∂ lreg_value / ∂G`.
pub fn lreg_grad(g: &AffinityMatrix) -> Matrix {
    lreg_value_and_grad(g).grad
}

pub fn lreg_value_and_grad(g: &AffinityMatrix) -> LossWithGrad {
    let (k, m) = (g.classes(), g.dims());
    if k == 1 {
        return LossWithGrad {
            value: 0.0,
            grad: Matrix::zeros(1, m),
        };
    }
    let sigma = column_softmax(g);
    let value = lreg_from_sigma(&sigma);
    let s = sigma.matrix();
    let marginal_term: Vec<f64> = sigma
        .class_marginal()
        .into_iter()
        .map(neg_plogp_deriv)
        .collect();
    let inv_m = 1.0 / m as f64;
    let mut grad = Matrix::zeros(k, m);
    let mut d_sigma = vec![0.0; k];
    for i in 0..m {
        // dL/dσ[j,i] = (1/M)(h'(σ[j,i]) − h'(p̄_j)) with h(p) = −p ln(p + ε)
        let mut dot = 0.0;
        for j in 0..k {
            d_sigma[j] = inv_m * (neg_plogp_deriv(s[(j, i)]) - marginal_term[j]);
            dot += s[(j, i)] * d_sigma[j];
        }
        for j in 0..k {
            grad[(j, i)] = s[(j, i)] * (d_sigma[j] - dot);
        }
    }
    LossWithGrad { value, grad }
}

/// Diagnostic-only: the loss formula with the softmax taken along the
/// feature axis (each class row sums to one). Under that orientation the
/// marginal term is the constant `−(K/M) ln M`, so it is not used for
/// training.
pub fn lreg_value_row_softmax(g: &AffinityMatrix) -> f64 {
    let (k, m) = (g.classes(), g.dims());
    let mut s = g.matrix().clone();
    for j in 0..k {
        softmax_in_place(s.row_mut(j));
    }
    let inv_m = 1.0 / m as f64;
    let conditional: f64 = -inv_m
        * s.as_slice()
            .iter()
            .map(|&p| p * (p + LOG_EPS).ln())
            .sum::<f64>();
    let marginal: f64 = (0..k)
        .map(|j| {
            let pj = s.row(j).iter().sum::<f64>() * inv_m;
            pj * (pj + LOG_EPS).ln()
        })
        .sum();
    conditional + marginal
}

/// L-Reg on a batch, with gradients pushed through `G = Ŷᵀ Z`.
pub fn lreg_on_batch(z: &Matrix, yhat: &Matrix) -> Result<BatchLReg> {
    lreg_on_batch_scaled(z, yhat, AffinityScale::Sum)
}

/// How the batch affinity is scaled before the column softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinityScale {
    /// `G = Ŷᵀ Z`.
    #[default]
    Sum,
    /// `G = (n / B) Ŷᵀ Z`: the affinity of an `n`-row batch with the same
    /// statistics, whatever the actual batch size `B`.
    Rows(usize),
}

impl AffinityScale {
    pub fn factor(self, batch_rows: usize) -> f64 {
        match self {
            AffinityScale::Sum => 1.0,
            AffinityScale::Rows(n) => n as f64 / batch_rows.max(1) as f64,
        }
    }
}

/// [`lreg_on_batch`] with a rescaled affinity.
pub fn lreg_on_batch_scaled(z: &Matrix, yhat: &Matrix, scale: AffinityScale) -> Result<BatchLReg> {
    let mut g = affinity(z, yhat)?.into_matrix();
    let factor = scale.factor(z.rows());
    if factor != 1.0 {
        g.scale(factor);
    }
    let LossWithGrad { value, mut grad } = lreg_value_and_grad(&AffinityMatrix::new(g)?);
    if factor != 1.0 {
        grad.scale(factor);
    }
    // G = Ŷᵀ Z  ⇒  dZ = Ŷ dG,  dŶ = Z dGᵀ
    let d_z = yhat.matmul(&grad)?;
    let d_yhat = z.matmul_t(&grad)?;
    Ok(BatchLReg { value, d_z, d_yhat })
}

/// L-Reg averaged over groups of rows (e.g. per domain). Empty groups are
/// skipped; rows whose group is not listed get zero gradient.
pub fn lreg_on_batch_grouped(
    z: &Matrix,
    yhat: &Matrix,
    groups: &[Vec<usize>],
    scale: AffinityScale,
) -> Result<BatchLReg> {
    if z.rows() != yhat.rows() {
        return Err(Error::shape("lreg_on_batch_grouped", z.rows(), yhat.rows()));
    }
    let live: Vec<&Vec<usize>> = groups.iter().filter(|g| !g.is_empty()).collect();
    let mut out = BatchLReg {
        value: 0.0,
        d_z: Matrix::zeros(z.rows(), z.cols()),
        d_yhat: Matrix::zeros(yhat.rows(), yhat.cols()),
    };
    if live.is_empty() {
        return Ok(out);
    }
    let w = 1.0 / live.len() as f64;
    for idx in live {
        let part = lreg_on_batch_scaled(&z.select_rows(idx), &yhat.select_rows(idx), scale)?;
        out.value += w * part.value;
        for (r, &row) in idx.iter().enumerate() {
            for (a, b) in out.d_z.row_mut(row).iter_mut().zip(part.d_z.row(r)) {
                *a += w * b;
            }
            for (a, b) in out.d_yhat.row_mut(row).iter_mut().zip(part.d_yhat.row(r)) {
                *a += w * b;
            }
        }
    }
    Ok(out)
}

/// Sum of squared off-diagonal column correlations of `z`.
///
/// Columns with zero variance have all their correlations treated as 0 and
/// receive zero gradient.
pub fn ortho_reg(z: &Matrix) -> Result<LossWithGrad> {
    let (b, m) = z.shape();
    if b < 2 {
        return Err(Error::InvalidArgument(format!(
            "ortho_reg needs at least 2 rows, got {b}"
        )));
    }
    let means: Vec<f64> = z.col_sums().into_iter().map(|s| s / b as f64).collect();
    let mut u = Matrix::from_fn(b, m, |r, c| z[(r, c)] - means[c]);
    let mut norms = vec![0.0; m];
    for (c, norm) in norms.iter_mut().enumerate() {
        let n = (0..b).map(|r| u[(r, c)].powi(2)).sum::<f64>().sqrt();
        let std = n / (b as f64).sqrt();
        // relative threshold: a constant column with rounding noise counts as dead
        let magnitude = (0..b).map(|r| z[(r, c)].abs()).fold(1.0, f64::max);
        *norm = if std <= 1e-12 * magnitude { 0.0 } else { n };
        for r in 0..b {
            u[(r, c)] = if *norm > 0.0 { u[(r, c)] / *norm } else { 0.0 };
        }
    }
    let corr = u.t_matmul(&u)?;
    let mut value = 0.0;
    let mut d_corr = Matrix::zeros(m, m);
    for i in 0..m {
        for k in 0..m {
            if i != k {
                value += corr[(i, k)].powi(2);
                d_corr[(i, k)] = 2.0 * corr[(i, k)];
            }
        }
    }
    // C = UᵀU with symmetric dL/dC  ⇒  dU = 2 U dC
    let mut d_u = u.matmul(&d_corr)?;
    d_u.scale(2.0);
    let mut grad = Matrix::zeros(b, m);
    for c in 0..m {
        if norms[c] == 0.0 {
            continue;
        }
        let proj: f64 = (0..b).map(|r| u[(r, c)] * d_u[(r, c)]).sum();
        let mut col: Vec<f64> = (0..b)
            .map(|r| (d_u[(r, c)] - u[(r, c)] * proj) / norms[c])
            .collect();
        let mean = col.iter().sum::<f64>() / b as f64;
        col.iter_mut().for_each(|v| *v -= mean);
        for r in 0..b {
            grad[(r, c)] = col[r];
        }
    }
    Ok(LossWithGrad { value, grad })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    L1,
    L2,
}

/// L1 (`Σ|w|`, subgradient `sign(w)` with 0 at 0) or L2 (`Σ w²`) penalty.
pub fn weight_penalty(params: &[f64], kind: PenaltyKind) -> (f64, Vec<f64>) {
    match kind {
        PenaltyKind::L1 => (
            params.iter().map(|w| w.abs()).sum(),
            params
                .iter()
                .map(|&w| if w > 0.0 { 1.0 } else if w < 0.0 { -1.0 } else { 0.0 })
                .collect(),
        ),
        PenaltyKind::L2 => (
            params.iter().map(|w| w * w).sum(),
            params.iter().map(|w| 2.0 * w).collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, normal_matrix, relative_error, Rng};

    fn g(rows: &[&[f64]]) -> AffinityMatrix {
        AffinityMatrix::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    /// −I(J;I) by direct summation over the joint σ/M.
    fn neg_mutual_information(gm: &AffinityMatrix) -> f64 {
        let (k, m) = (gm.classes(), gm.dims());
        let mut sigma = vec![vec![0.0; m]; k];
        for i in 0..m {
            let col: Vec<f64> = (0..k).map(|j| gm.matrix()[(j, i)]).collect();
            let max = col.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = col.iter().map(|v| (v - max).exp()).sum();
            for j in 0..k {
                sigma[j][i] = (col[j] - max).exp() / z;
            }
        }
        let mut mi = 0.0;
        for j in 0..k {
            let pj: f64 = sigma[j].iter().sum::<f64>() / m as f64;
            for i in 0..m {
                let pji = sigma[j][i] / m as f64;
                if pji > 0.0 {
                    mi += pji * (pji / (pj / m as f64)).ln();
                }
            }
        }
        -mi
    }

    #[test]
    fn affinity_examples() {
        let yhat = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let z = Matrix::from_rows(&[[2.0, 3.0]]).unwrap();
        let a = affinity(&z, &yhat).unwrap();
        assert_eq!(a.matrix(), &Matrix::from_rows(&[[2.0, 3.0], [0.0, 0.0]]).unwrap());

        let eye = Matrix::identity(3);
        assert_eq!(affinity(&eye, &eye).unwrap().matrix(), &eye);

        let mut rng = Rng::new(1);
        let z = normal_matrix(&mut rng, 3, 2, 1.0);
        let y = normal_matrix(&mut rng, 3, 2, 1.0);
        let a = affinity(&z, &y).unwrap();
        for j in 0..2 {
            for i in 0..2 {
                let mut want = 0.0;
                for b in 0..3 {
                    want += y[(b, j)] * z[(b, i)];
                }
                assert!((a.matrix()[(j, i)] - want).abs() < 1e-14);
            }
        }
        assert!(affinity(&Matrix::zeros(2, 2), &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn column_softmax_examples() {
        let s = column_softmax(&g(&[&[3.0, -1.0, 7.0]]));
        assert!(s.matrix().as_slice().iter().all(|v| *v == 1.0));

        let s = column_softmax(&g(&[&[2.0, 0.0], &[0.0, 2.0]]));
        let hi = 1.0 / (1.0 + (-2f64).exp());
        assert!((s.matrix()[(0, 0)] - hi).abs() < 1e-12);
        assert!((s.matrix()[(1, 0)] - (1.0 - hi)).abs() < 1e-12);
        assert!((s.matrix()[(1, 1)] - hi).abs() < 1e-12);
        assert!((hi - 0.8808).abs() < 1e-4);

        let s = column_softmax(&g(&[&[1.0, 5.0], &[1.0, 5.0], &[1.0, 5.0]]));
        assert!(s.matrix().as_slice().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn lreg_value_anchors() {
        assert_eq!(lreg_value(&g(&[&[4.0, -2.0, 0.5]])), 0.0);
        assert!(lreg_value(&g(&[&[0.3, 0.3], &[0.3, 0.3], &[0.3, 0.3]])).abs() < 1e-12);

        let two = g(&[&[2.0, 0.0], &[0.0, 2.0]]);
        let oracle = neg_mutual_information(&two);
        assert!((lreg_value(&two) - oracle).abs() < 1e-9);
        // ln σ(2) terms give −0.327813; the rounded anchor −0.32791 holds to 1e-4
        assert!((oracle - (-0.327813)).abs() < 1e-6, "oracle {oracle}");
        assert!((lreg_value(&two) - (-0.32791)).abs() < 1e-4);

        let sat = g(&[&[50.0, 0.0], &[0.0, 50.0]]);
        assert!((lreg_value(&sat) + 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn minimum_attained_by_balanced_one_hot_columns() {
        // M = 6 dims, K = 3 classes, two saturated dims per class
        let gm = Matrix::from_fn(3, 6, |j, i| if i % 3 == j { 50.0 } else { 0.0 });
        let v = lreg_value(&AffinityMatrix::new(gm).unwrap());
        assert!((v + 3f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn lreg_grad_examples() {
        assert_eq!(lreg_grad(&g(&[&[1.0, 2.0, 3.0]])), Matrix::zeros(1, 3));

        let gr = lreg_grad(&g(&[&[0.7, 0.7], &[0.7, 0.7], &[0.7, 0.7]]));
        for s in gr.col_sums() {
            assert!(s.abs() < 1e-15);
        }

        let mut rng = Rng::new(2);
        let gm = normal_matrix(&mut rng, 4, 6, 2.0);
        let a = lreg_grad(&AffinityMatrix::new(gm.clone()).unwrap());
        let n = finite_diff_grad(
            |x| Ok(lreg_value(&AffinityMatrix::new(Matrix::new(4, 6, x.to_vec())?)?)),
            gm.as_slice(),
            1e-5,
        )
        .unwrap();
        assert!(relative_error(a.as_slice(), &n) < 1e-6);
    }

    #[test]
    fn row_softmax_reading_is_degenerate() {
        let mut rng = Rng::new(8);
        for _ in 0..5 {
            let gm = AffinityMatrix::new(normal_matrix(&mut rng, 3, 5, 2.0)).unwrap();
            let s = lreg_value_row_softmax(&gm);
            // the marginal term is pinned at −(K/M) ln M whatever G is
            let mut rows = gm.matrix().clone();
            for j in 0..3 {
                softmax_in_place(rows.row_mut(j));
            }
            let conditional = -rows.as_slice().iter().map(|p| p * p.ln()).sum::<f64>() / 5.0;
            assert!((s - (conditional - 0.6 * 5f64.ln())).abs() < 1e-9);
        }
    }

    #[test]
    fn lreg_on_batch_examples() {
        let out = lreg_on_batch(
            &Matrix::from_rows(&[[0.4, -1.0, 2.0]]).unwrap(),
            &Matrix::from_rows(&[[1.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(out.value, 0.0);
        assert_eq!(out.d_z.max_abs(), 0.0);
        assert_eq!(out.d_yhat.max_abs(), 0.0);

        let mut rng = Rng::new(3);
        let z = normal_matrix(&mut rng, 8, 5, 1.0);
        let y = normal_matrix(&mut rng, 8, 3, 1.0);
        check_batch_grads(&z, &y);

        // duplicated rows double G
        let idx: Vec<usize> = (0..8).chain(0..8).collect();
        let (z2, y2) = (z.select_rows(&idx), y.select_rows(&idx));
        let mut doubled = affinity(&z, &y).unwrap().into_matrix();
        doubled.scale(2.0);
        let v2 = lreg_on_batch(&z2, &y2).unwrap().value;
        assert!((v2 - lreg_value(&AffinityMatrix::new(doubled).unwrap())).abs() < 1e-12);
        check_batch_grads(&z2, &y2);
    }

    #[test]
    fn rescaled_affinity_is_invariant_to_row_duplication() {
        let mut rng = Rng::new(9);
        let z = normal_matrix(&mut rng, 8, 5, 1.0);
        let y = normal_matrix(&mut rng, 8, 3, 1.0);
        let idx: Vec<usize> = (0..8).chain(0..8).collect();
        let once = lreg_on_batch_scaled(&z, &y, AffinityScale::Rows(1)).unwrap();
        let twice = lreg_on_batch_scaled(&z.select_rows(&idx), &y.select_rows(&idx), AffinityScale::Rows(1)).unwrap();
        assert!((once.value - twice.value).abs() < 1e-12);
        let mut scaled = z.clone();
        scaled.scale(1.0 / 8.0);
        assert!((once.value - lreg_on_batch(&scaled, &y).unwrap().value).abs() < 1e-12);

        let out = lreg_on_batch_scaled(&z, &y, AffinityScale::Rows(1)).unwrap();
        let nz = finite_diff_grad(
            |x| Ok(lreg_on_batch_scaled(&Matrix::new(8, 5, x.to_vec())?, &y, AffinityScale::Rows(1))?.value),
            z.as_slice(),
            1e-5,
        )
        .unwrap();
        let ny = finite_diff_grad(
            |x| Ok(lreg_on_batch_scaled(&z, &Matrix::new(8, 3, x.to_vec())?, AffinityScale::Rows(1))?.value),
            y.as_slice(),
            1e-5,
        )
        .unwrap();
        assert!(relative_error(out.d_z.as_slice(), &nz) < 1e-6);
        assert!(relative_error(out.d_yhat.as_slice(), &ny) < 1e-6);
    }

    fn check_batch_grads(z: &Matrix, y: &Matrix) {
        let out = lreg_on_batch(z, y).unwrap();
        let nz = finite_diff_grad(
            |x| Ok(lreg_on_batch(&Matrix::new(z.rows(), z.cols(), x.to_vec())?, y)?.value),
            z.as_slice(),
            1e-5,
        )
        .unwrap();
        let ny = finite_diff_grad(
            |x| Ok(lreg_on_batch(z, &Matrix::new(y.rows(), y.cols(), x.to_vec())?)?.value),
            y.as_slice(),
            1e-5,
        )
        .unwrap();
        assert!(relative_error(out.d_z.as_slice(), &nz) < 1e-6);
        assert!(relative_error(out.d_yhat.as_slice(), &ny) < 1e-6);
    }

    #[test]
    fn grouped_lreg_averages_groups() {
        let mut rng = Rng::new(4);
        let z = normal_matrix(&mut rng, 10, 4, 1.0);
        let y = normal_matrix(&mut rng, 10, 3, 1.0);
        let groups = vec![(0..4).collect::<Vec<_>>(), vec![], (4..10).collect()];
        let out = lreg_on_batch_grouped(&z, &y, &groups, AffinityScale::Sum).unwrap();
        let a = lreg_on_batch(&z.select_rows(&groups[0]), &y.select_rows(&groups[0])).unwrap();
        let b = lreg_on_batch(&z.select_rows(&groups[2]), &y.select_rows(&groups[2])).unwrap();
        assert!((out.value - 0.5 * (a.value + b.value)).abs() < 1e-14);
        let n = finite_diff_grad(
            |x| Ok(lreg_on_batch_grouped(&Matrix::new(10, 4, x.to_vec())?, &y, &groups, AffinityScale::Sum)?.value),
            z.as_slice(),
            1e-5,
        )
        .unwrap();
        assert!(relative_error(out.d_z.as_slice(), &n) < 1e-6);
    }

    #[test]
    fn ortho_reg_examples() {
        // centred orthogonal columns
        let z = Matrix::from_rows(&[[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]).unwrap();
        assert!(ortho_reg(&z).unwrap().value.abs() < 1e-15);

        let z = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [-0.5, -0.5]]).unwrap();
        assert!((ortho_reg(&z).unwrap().value - 2.0).abs() < 1e-12);

        let z = Matrix::from_rows(&[[1.0, 3.0, 0.2], [2.0, 3.0, -0.1], [4.0, 3.0, 0.5]]).unwrap();
        let out = ortho_reg(&z).unwrap();
        assert!(out.grad.column(1).iter().all(|v| *v == 0.0));
        assert!(out.value.is_finite());

        assert!(ortho_reg(&Matrix::zeros(1, 3)).is_err());

        let mut rng = Rng::new(6);
        let z = normal_matrix(&mut rng, 16, 4, 1.0);
        let out = ortho_reg(&z).unwrap();
        let n = finite_diff_grad(|x| Ok(ortho_reg(&Matrix::new(16, 4, x.to_vec())?)?.value), z.as_slice(), 1e-5)
            .unwrap();
        assert!(relative_error(out.grad.as_slice(), &n) < 1e-6);
    }

    #[test]
    fn weight_penalty_examples() {
        let (v, gr) = weight_penalty(&[3.0, -4.0, 0.0], PenaltyKind::L1);
        assert_eq!(v, 7.0);
        assert_eq!(gr, vec![1.0, -1.0, 0.0]);
        let (v, gr) = weight_penalty(&[3.0, -4.0], PenaltyKind::L2);
        assert_eq!(v, 25.0);
        assert_eq!(gr, vec![6.0, -8.0]);

        let w = crate::numerics::rng_normal(&mut Rng::new(9), 100);
        let (_, gr) = weight_penalty(&w, PenaltyKind::L2);
        let n = finite_diff_grad(|x| Ok(weight_penalty(x, PenaltyKind::L2).0), &w, 1e-5).unwrap();
        assert!(relative_error(&gr, &n) < 1e-6);
    }
}
