//! Complexity and interpretability measurements.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{argmax_rows, mlp_init, Activation, Head, MlpModel, MlpSpec, TrainConfig, Trainer};
use crate::numerics::Matrix;
use crate::regularizers::{column_softmax, AffinityMatrix};
use crate::synthdata::Prop1Instance;

pub const DEFAULT_EXTREMITY_TAU: f64 = 2.0;
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 0.5;

/// Fraction of entries with `|w| > tau · std(W)`; 0 when `std(W) = 0`.
pub fn weight_extremity(w: &Matrix, tau: f64) -> f64 {
    let vals = w.as_slice();
    if vals.is_empty() {
        return 0.0;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let max_abs = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if std <= 1e-12 * max_abs || std == 0.0 {
        return 0.0;
    }
    vals.iter().filter(|v| v.abs() > tau * std).count() as f64 / n
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportSet {
    /// `supports[j]`: sorted dimensions whose class-softmax mass on `j` is at least the threshold.
    pub supports: Vec<Vec<usize>>,
    /// Mean Jaccard similarity over class pairs.
    pub mean_jaccard: f64,
}

impl SupportSet {
    pub fn mean_size(&self) -> f64 {
        if self.supports.is_empty() {
            return 0.0;
        }
        self.supports.iter().map(Vec::len).sum::<usize>() as f64 / self.supports.len() as f64
    }

    /// `{"0": [..], "1": [..]}` keyed by class.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<String, &Vec<usize>> = self
            .supports
            .iter()
            .enumerate()
            .map(|(j, s)| (j.to_string(), s))
            .collect();
        serde_json::to_string_pretty(&map).expect("support map serializes")
    }
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = a.iter().filter(|x| b.contains(x)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn semantic_support(g: &AffinityMatrix, threshold: f64) -> Result<SupportSet> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("support threshold {threshold} outside (0, 1)")));
    }
    let sigma = column_softmax(g);
    let s = sigma.matrix();
    let supports: Vec<Vec<usize>> = (0..g.classes())
        .map(|j| (0..g.dims()).filter(|&i| s[(j, i)] >= threshold).collect())
        .collect();
    let k = supports.len();
    let mut total = 0.0;
    let mut pairs = 0;
    for a in 0..k {
        for b in a + 1..k {
            total += jaccard(&supports[a], &supports[b]);
            pairs += 1;
        }
    }
    Ok(SupportSet {
        mean_jaccard: if pairs == 0 { 0.0 } else { total / pairs as f64 },
        supports,
    })
}

/// Entropy (nats) of the per-dimension share of total `|Z|` mass; 0 for an all-zero `Z`.
pub fn feature_balance(z: &Matrix) -> f64 {
    let mut mass = vec![0.0; z.cols()];
    for r in 0..z.rows() {
        for (m, v) in mass.iter_mut().zip(z.row(r)) {
            *m += v.abs();
        }
    }
    let total: f64 = mass.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    -mass
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|m| {
            let p = m / total;
            p * p.ln()
        })
        .sum::<f64>()
}

/// Mean over rows of `‖pred_f − pred_fstar‖₂`.
pub fn generalization_gap(pred_f: &Matrix, pred_fstar: &Matrix) -> Result<f64> {
    if pred_f.shape() != pred_fstar.shape() {
        return Err(Error::shape(
            "generalization_gap",
            format!("{:?}", pred_f.shape()),
            format!("{:?}", pred_fstar.shape()),
        ));
    }
    if pred_f.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = (0..pred_f.rows())
        .map(|r| {
            pred_f
                .row(r)
                .iter()
                .zip(pred_fstar.row(r))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / pred_f.rows() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub extreme_weight_fraction: f64,
    pub mean_support_size: f64,
    pub support_jaccard: f64,
    pub feature_balance_entropy: f64,
    /// Euclidean distance between mean features of known- and unknown-class rows.
    pub known_unknown_distance: f64,
}

/// Complexity diagnostics of a classifier on a set of inputs.
///
/// The extremity fraction is taken over the predictor-head weights (layers
/// after the tap). The affinity is rescaled to `batch_size` rows,
/// `(batch_size / n) Ŷᵀ Z`, so the supports describe what a training batch
/// sees regardless of the evaluation set size.
pub fn complexity_report(
    model: &MlpModel,
    x: &Matrix,
    known_mask: &[bool],
    batch_size: usize,
    tau: f64,
    threshold: f64,
) -> Result<(ComplexityReport, SupportSet)> {
    if x.rows() == 0 || known_mask.len() != x.rows() {
        return Err(Error::shape("complexity_report", x.rows(), known_mask.len()));
    }
    let fp = model.forward(x)?;
    let z = fp.z();
    let yhat = fp.probs.as_ref().unwrap_or_else(|| fp.output());
    let mut g = yhat.t_matmul(z)?;
    g.scale(batch_size as f64 / x.rows() as f64);
    let support = semantic_support(&AffinityMatrix::new(g)?, threshold)?;
    let head: Vec<f64> = model.weights[model.spec.tap_layer..]
        .iter()
        .flat_map(|w| w.as_slice().iter().copied())
        .collect();
    let head = Matrix::new(1, head.len(), head)?;
    let mean_of = |want: bool| -> Option<Vec<f64>> {
        let rows: Vec<usize> = (0..x.rows()).filter(|&r| known_mask[r] == want).collect();
        if rows.is_empty() {
            return None;
        }
        let sums = z.select_rows(&rows).col_sums();
        Some(sums.into_iter().map(|s| s / rows.len() as f64).collect())
    };
    let distance = match (mean_of(true), mean_of(false)) {
        (Some(a), Some(b)) => a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt(),
        _ => 0.0,
    };
    Ok((
        ComplexityReport {
            extreme_weight_fraction: weight_extremity(&head, tau),
            mean_support_size: support.mean_size(),
            support_jaccard: support.mean_jaccard,
            feature_balance_entropy: feature_balance(z),
            known_unknown_distance: distance,
        },
        support,
    ))
}

/// Outcome of fitting the same linear classifier with and without L-Reg.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Record {
    pub acc_seen_plain: f64,
    pub acc_seen_lreg: f64,
    pub acc_unseen_plain: f64,
    pub acc_unseen_lreg: f64,
    /// Mean `|weight|` of the end-to-end linear map on spurious inputs.
    pub spurious_weight_plain: f64,
    pub spurious_weight_lreg: f64,
    /// Generalization gap to the support-only rule on the unseen set.
    pub gap_plain: f64,
    pub gap_lreg: f64,
}

/// Width of the linear feature layer the prop1 classifiers tap.
pub const PROP1_FEATURES: usize = 8;

fn prop1_spec(inputs: usize) -> MlpSpec {
    MlpSpec {
        layer_widths: vec![inputs, PROP1_FEATURES, 2],
        activations: vec![Activation::Identity, Activation::Identity],
        tap_layer: 1,
        head: Head::SoftmaxClassifier,
    }
}

fn effective_linear_map(model: &MlpModel) -> Result<Matrix> {
    let mut map = model.weights[0].clone();
    for w in &model.weights[1..] {
        map = w.matmul(&map)?;
    }
    Ok(map)
}

/// Fits the linear classifier `x ↦ W₂W₁x` on the seen set twice: once with
/// `config` as given and once with `alpha = 0`, everything else equal.
pub fn prop1_check(inst: &Prop1Instance, config: &TrainConfig) -> Result<Prop1Record> {
    let d = inst.z_seen.cols();
    let n = inst.z_seen.rows();
    let batch = crate::network::Batch {
        x: inst.z_seen.clone(),
        y: inst.y_seen.iter().map(|&y| y as i64).collect(),
        domain: vec![0; n],
        known_mask: vec![true; n],
        targets: None,
    };
    let spurious: Vec<usize> = (0..d).filter(|c| !inst.support.contains(c)).collect();
    let oracle = Matrix::from_fn(inst.z_unseen.rows(), 2, |r, c| {
        let score: f64 = inst.support.iter().zip(&inst.rule).map(|(&i, w)| inst.z_unseen[(r, i)] * w).sum();
        f64::from(u8::from(usize::from(score > 0.0) == c))
    });
    let fit = |cfg: &TrainConfig| -> Result<(f64, f64, f64, f64)> {
        let mut trainer = Trainer::new(mlp_init(&prop1_spec(d), cfg.seed)?, cfg.clone())?;
        trainer.fit(&batch)?;
        let model = &trainer.model;
        let acc = |x: &Matrix, y: &[usize]| -> Result<f64> {
            let pred = model.predict_classes(x)?;
            Ok(pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64)
        };
        let map = effective_linear_map(model)?;
        let spur = spurious
            .iter()
            .map(|&c| (0..map.rows()).map(|r| map[(r, c)].abs()).sum::<f64>())
            .sum::<f64>()
            / (spurious.len() * map.rows()).max(1) as f64;
        let probs = model.forward(&inst.z_unseen)?.probs.expect("classifier head");
        Ok((
            acc(&inst.z_seen, &inst.y_seen)?,
            acc(&inst.z_unseen, &inst.y_unseen)?,
            spur,
            generalization_gap(&probs, &oracle)?,
        ))
    };
    let plain_cfg = TrainConfig {
        alpha: 0.0,
        ..config.clone()
    };
    let (acc_seen_plain, acc_unseen_plain, spurious_weight_plain, gap_plain) = fit(&plain_cfg)?;
    let (acc_seen_lreg, acc_unseen_lreg, spurious_weight_lreg, gap_lreg) = fit(config)?;
    Ok(Prop1Record {
        acc_seen_plain,
        acc_seen_lreg,
        acc_unseen_plain,
        acc_unseen_lreg,
        spurious_weight_plain,
        spurious_weight_lreg,
        gap_plain,
        gap_lreg,
    })
}

/// Argmax accuracy of a classifier against integer labels.
pub fn accuracy(model: &MlpModel, x: &Matrix, y: &[usize]) -> Result<f64> {
    let fp = model.forward(x)?;
    let pred = argmax_rows(fp.output());
    Ok(pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{normal_matrix, Rng};

    #[test]
    fn weight_extremity_examples() {
        assert_eq!(weight_extremity(&Matrix::filled(3, 3, 0.7), 2.0), 0.0);
        let w = Matrix::from_rows(&[[0.0, 0.0, 0.0, 10.0]]).unwrap();
        // std = sqrt(18.75) ≈ 4.33, only the 10 exceeds it
        assert_eq!(weight_extremity(&w, 1.0), 0.25);
        let mut rng = Rng::new(1);
        for _ in 0..10 {
            let w = normal_matrix(&mut rng, 8, 8, 1.0);
            let c = 0.1 + 10.0 * rng.uniform();
            let mut scaled = w.clone();
            scaled.scale(c);
            assert_eq!(weight_extremity(&w, 2.0), weight_extremity(&scaled, 2.0));
        }
    }

    fn aff(m: Matrix) -> AffinityMatrix {
        AffinityMatrix::new(m).unwrap()
    }

    #[test]
    fn semantic_support_examples() {
        let s = semantic_support(&aff(Matrix::identity(4).map(|v| 20.0 * v)), 0.5).unwrap();
        assert_eq!(s.supports, vec![vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(s.mean_jaccard, 0.0);

        let s = semantic_support(&aff(Matrix::filled(3, 5, 1.0)), 0.2).unwrap();
        assert!(s.supports.iter().all(|x| x.len() == 5));
        assert_eq!(s.mean_jaccard, 1.0);

        let s = semantic_support(&aff(Matrix::from_rows(&[[2.0, 0.0], [0.0, 2.0]]).unwrap()), 0.5).unwrap();
        assert_eq!(s.supports, vec![vec![0], vec![1]]);
        assert_eq!(s.to_json().replace(char::is_whitespace, ""), r#"{"0":[0],"1":[1]}"#);

        // empty ∪ empty counts as Jaccard 0
        let s = semantic_support(&aff(Matrix::filled(3, 2, 0.0)), 0.5).unwrap();
        assert_eq!(s.mean_jaccard, 0.0);
        assert!(semantic_support(&aff(Matrix::filled(3, 2, 0.0)), 1.0).is_err());
    }

    #[test]
    fn support_is_monotone_in_threshold() {
        let mut rng = Rng::new(2);
        for _ in 0..50 {
            let g = aff(normal_matrix(&mut rng, 4, 9, 2.0));
            let lo = semantic_support(&g, 0.3).unwrap();
            let hi = semantic_support(&g, 0.6).unwrap();
            for (a, b) in hi.supports.iter().zip(&lo.supports) {
                assert!(a.iter().all(|i| b.contains(i)));
            }
        }
    }

    #[test]
    fn feature_balance_examples() {
        let one = Matrix::from_fn(6, 4, |r, c| if c == 2 { r as f64 + 1.0 } else { 0.0 });
        assert_eq!(feature_balance(&one), 0.0);
        assert!((feature_balance(&Matrix::filled(5, 8, -0.3)) - 8f64.ln()).abs() < 1e-12);
        assert_eq!(feature_balance(&Matrix::zeros(3, 3)), 0.0);

        let mut rng = Rng::new(3);
        let z = normal_matrix(&mut rng, 10, 5, 1.0);
        let mass: Vec<f64> = (0..5).map(|c| z.column(c).iter().map(|v| v.abs()).sum()).collect();
        let total: f64 = mass.iter().sum();
        let direct: f64 = -mass.iter().map(|m| (m / total) * (m / total).ln()).sum::<f64>();
        assert!((feature_balance(&z) - direct).abs() < 1e-10);

        let perm = z.select_cols(&[3, 1, 4, 0, 2]);
        assert!((feature_balance(&perm) - feature_balance(&z)).abs() < 1e-12);
        let mut scaled = z.clone();
        scaled.scale(7.5);
        assert!((feature_balance(&scaled) - feature_balance(&z)).abs() < 1e-12);
    }

    #[test]
    fn generalization_gap_examples() {
        let mut rng = Rng::new(4);
        let a = normal_matrix(&mut rng, 6, 3, 1.0);
        assert_eq!(generalization_gap(&a, &a).unwrap(), 0.0);
        let shifted = a.map(|v| v + 2.0);
        assert!((generalization_gap(&a, &shifted).unwrap() - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert!(generalization_gap(&a, &Matrix::zeros(6, 2)).is_err());
        for _ in 0..50 {
            let (x, y, z) = (
                normal_matrix(&mut rng, 5, 3, 1.0),
                normal_matrix(&mut rng, 5, 3, 1.0),
                normal_matrix(&mut rng, 5, 3, 1.0),
            );
            let direct: f64 = (0..5)
                .map(|r| (0..3).map(|c| (x[(r, c)] - y[(r, c)]).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / 5.0;
            assert!((generalization_gap(&x, &y).unwrap() - direct).abs() < 1e-12);
            let xz = generalization_gap(&x, &z).unwrap();
            assert!(xz <= generalization_gap(&x, &y).unwrap() + generalization_gap(&y, &z).unwrap() + 1e-12);
        }
    }
}
