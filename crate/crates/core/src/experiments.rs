//! Seeded experiment drivers: the extrapolation toy, the synthetic
//! domain-shift / category-discovery / all-shift tasks and the linear
//! support check. Each driver trains every requested variant for one seed and
//! returns flat metric records.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::diagnostics::{complexity_report, prop1_check, SupportSet, DEFAULT_EXTREMITY_TAU, DEFAULT_SUPPORT_THRESHOLD};
use crate::error::{Error, Result};
use crate::gcdeval::gcd_accuracy;
use crate::network::{
    argmax_rows, mlp_init, Activation, Batch, Head, MainLoss, MlpModel, MlpSpec, RegKind, TrainConfig, Trainer,
};
use crate::numerics::{Matrix, Rng};
use crate::regularizers::AffinityScale;
use crate::synthdata::{allshift_split, gcd_split, mdg_dataset, prop1_instance, toy_dataset, MdgParams, Region, SplitSpec, SynthClassSet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecord {
    pub seed: u64,
    pub variant: String,
    pub alpha: f64,
    pub metric: String,
    pub value: f64,
}

impl MetricRecord {
    fn new(seed: u64, variant: &Variant, alpha: f64, metric: impl Into<String>, value: f64) -> Self {
        Self {
            seed,
            variant: variant.to_string(),
            alpha,
            metric: metric.into(),
            value,
        }
    }
}

/// A set of regularizers added to the task loss, each weighted by the swept
/// strength `α`; `lreg@n` moves L-Reg to tap layer `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Variant {
    pub lreg: bool,
    pub l1: bool,
    pub l2: bool,
    pub ortho: bool,
    pub tap: Option<usize>,
}

impl Variant {
    pub const NONE: Variant = Variant {
        lreg: false,
        l1: false,
        l2: false,
        ortho: false,
        tap: None,
    };

    pub fn lreg() -> Self {
        Variant {
            lreg: true,
            ..Variant::NONE
        }
    }

    pub fn is_none(&self) -> bool {
        !(self.lreg || self.l1 || self.l2 || self.ortho)
    }

    /// `base` with this variant's regularizers added at strength `alpha`.
    pub fn apply(&self, base: &TrainConfig, alpha: f64) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.alpha = if self.lreg { alpha } else { 0.0 };
        for (on, kind) in [(self.l1, RegKind::L1), (self.l2, RegKind::L2), (self.ortho, RegKind::Ortho)] {
            if on {
                cfg.extra_regs.push((kind, alpha));
            }
        }
        cfg
    }

    /// The swept strengths this variant runs at.
    pub fn alphas(&self, sweep: &[f64]) -> Vec<f64> {
        if self.is_none() {
            vec![0.0]
        } else {
            sweep.to_vec()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_none() {
            return f.write_str("none");
        }
        let mut parts = Vec::new();
        if self.lreg {
            parts.push(match self.tap {
                Some(t) => format!("lreg@{t}"),
                None => "lreg".to_string(),
            });
        }
        for (on, name) in [(self.l1, "l1"), (self.l2, "l2"), (self.ortho, "ortho")] {
            if on {
                parts.push(name.to_string());
            }
        }
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut v = Variant::NONE;
        if s.trim() == "none" {
            return Ok(v);
        }
        for part in s.split('+').map(str::trim) {
            let (name, tap) = match part.split_once('@') {
                Some((n, t)) => {
                    let t: usize = t
                        .parse()
                        .map_err(|_| Error::Config(format!("bad tap layer in variant {s:?}")))?;
                    (n, Some(t))
                }
                None => (part, None),
            };
            let flag = match name {
                "lreg" => &mut v.lreg,
                "l1" => &mut v.l1,
                "l2" => &mut v.l2,
                "ortho" => &mut v.ortho,
                _ => return Err(Error::Config(format!("unknown regularizer {name:?} in variant {s:?}"))),
            };
            if *flag {
                return Err(Error::Config(format!("regularizer {name:?} repeated in variant {s:?}")));
            }
            *flag = true;
            if tap.is_some() {
                if name != "lreg" {
                    return Err(Error::Config(format!("only lreg takes a tap layer: {s:?}")));
                }
                v.tap = tap;
            }
        }
        Ok(v)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

// ---------------------------------------------------------------- toy

#[derive(Debug, Clone, PartialEq)]
pub struct ToyParams {
    pub n_train: usize,
    pub half_width: f64,
    pub grid_resolution: usize,
    pub hidden_width: usize,
    /// Linear layers in the network (hidden layers + output).
    pub layers: usize,
    /// Share of the training points held out to select `α`.
    pub holdout_fraction: f64,
    pub train: TrainConfig,
    pub alphas: Vec<f64>,
    pub variants: Vec<Variant>,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            n_train: 2048,
            half_width: 0.5,
            grid_resolution: 101,
            hidden_width: 110,
            layers: 6,
            holdout_fraction: 0.2,
            train: TrainConfig {
                main_loss: MainLoss::Mse,
                steps: 4000,
                batch_size: 64,
                affinity: AffinityScale::Rows(1),
                ..TrainConfig::default()
            },
            alphas: vec![1e-3, 1e-2, 1e-1],
            variants: ["none", "l1", "l2", "lreg"].iter().map(|v| v.parse().expect("known variant")).collect(),
        }
    }
}

impl ToyParams {
    pub fn spec(&self) -> MlpSpec {
        let mut widths = vec![2];
        widths.extend(std::iter::repeat_n(self.hidden_width, self.layers.saturating_sub(1)));
        widths.push(1);
        MlpSpec::relu(widths, Head::LinearRegressor)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::Config("toy network needs at least 2 layers".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config("holdout_fraction must lie in (0, 1)".into()));
        }
        if self.train.main_loss != MainLoss::Mse {
            return Err(Error::Config("the toy task is a regression: main loss must be mse".into()));
        }
        validate_sweep(&self.alphas, &self.variants)?;
        self.train.validate()
    }
}

fn validate_sweep(alphas: &[f64], variants: &[Variant]) -> Result<()> {
    if variants.is_empty() {
        return Err(Error::Config("no variants selected".into()));
    }
    if variants.iter().any(|v| !v.is_none()) && alphas.is_empty() {
        return Err(Error::Config("regularized variants need at least one alpha".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::Config(format!("alpha values must be positive, got {a}")));
    }
    Ok(())
}

/// One evaluation point of a toy prediction grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub x1: f64,
    pub x2: f64,
    pub f_star: f64,
    pub f_pred: f64,
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyOutcome {
    pub records: Vec<MetricRecord>,
    /// Prediction grid of each variant at its selected `α`.
    pub grids: Vec<(String, Vec<GridRow>)>,
}

fn squared_errors(pred: &[f64], target: &[f64], keep: impl Fn(usize) -> bool) -> Vec<f64> {
    (0..pred.len()).filter(|&i| keep(i)).map(|i| (pred[i] - target[i]).powi(2)).collect()
}

fn mse_where(pred: &[f64], target: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
    mean(&squared_errors(pred, target, keep))
}

fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Fits every toy variant for one seed.
///
/// Each regularized variant is trained at every `α` on the training points
/// minus a holdout; the `α` with the lowest holdout MSE is selected and
/// reported as `selected_*` rows together with its prediction grid;
/// `selected_outside_median_se` is the median squared error over the grid
/// points outside the training box.
pub fn run_toy(params: &ToyParams, seed: u64) -> Result<ToyOutcome> {
    params.validate()?;
    let (train, grid) = toy_dataset(params.n_train, Region::square(params.half_width), params.grid_resolution, seed)?;
    let order = Rng::new(seed).fork(1).permutation(train.len());
    let n_hold = ((train.len() as f64 * params.holdout_fraction).round() as usize).clamp(1, train.len() - 1);
    let holdout = train.select(&order[..n_hold]);
    let fit_set = train.select(&order[n_hold..]).to_batch();
    let spec = params.spec();

    let mut records = Vec::new();
    let mut grids = Vec::new();
    for variant in &params.variants {
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        for alpha in variant.alphas(&params.alphas) {
            let mut cfg = variant.apply(&params.train, alpha);
            cfg.seed = seed;
            let spec = match variant.tap {
                Some(t) => spec.clone().with_tap(t),
                None => spec.clone(),
            };
            let mut trainer = Trainer::new(mlp_init(&spec, seed)?, cfg)?;
            trainer.fit(&fit_set)?;
            let hold_pred = trainer.model.forward(&holdout.inputs)?.output().as_slice().to_vec();
            let hold_mse = mse_where(&hold_pred, &holdout.targets, |_| true);
            let pred = trainer.model.forward(&grid.inputs)?.output().as_slice().to_vec();
            let inside = mse_where(&pred, &grid.targets, |i| grid.region_mask[i]);
            let outside = mse_where(&pred, &grid.targets, |i| !grid.region_mask[i]);
            for (metric, value) in [("holdout_mse", hold_mse), ("inside_mse", inside), ("outside_mse", outside)] {
                records.push(MetricRecord::new(seed, variant, alpha, metric, value));
            }
            if best.as_ref().is_none_or(|(b, _, _)| hold_mse < *b) {
                best = Some((hold_mse, alpha, pred));
            }
        }
        let (_, alpha, pred) = best.expect("at least one alpha per variant");
        let inside = mse_where(&pred, &grid.targets, |i| grid.region_mask[i]);
        let outside = mse_where(&pred, &grid.targets, |i| !grid.region_mask[i]);
        records.push(MetricRecord::new(seed, variant, alpha, "selected_inside_mse", inside));
        records.push(MetricRecord::new(seed, variant, alpha, "selected_outside_mse", outside));
        let outside_median = median(&squared_errors(&pred, &grid.targets, |i| !grid.region_mask[i]));
        records.push(MetricRecord::new(seed, variant, alpha, "selected_outside_median_se", outside_median));
        let rows = (0..grid.len())
            .map(|i| GridRow {
                x1: grid.inputs[(i, 0)],
                x2: grid.inputs[(i, 1)],
                f_star: grid.targets[i],
                f_pred: pred[i],
                inside: grid.region_mask[i],
            })
            .collect();
        grids.push((variant.to_string(), rows));
    }
    Ok(ToyOutcome { records, grids })
}

// ---------------------------------------------------------------- classification tasks

/// Synthetic classification tasks share one model layout: an optional
/// "pretrained" backbone of two linear layers (a fixed random rotation
/// followed by its inverse, so the first layer mixes the informative
/// dimensions and the second restores them), then trainable ReLU layers and
/// a softmax head. The rotation layer stays frozen; the layer after it is
/// fine-tuned.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassParams {
    pub data: MdgParams,
    pub split: SplitSpec,
    pub backbone: bool,
    pub hidden: Vec<usize>,
    /// Tap layer for plain `lreg` variants; defaults to the last hidden layer.
    pub tap: Option<usize>,
    pub train: TrainConfig,
    pub alphas: Vec<f64>,
    pub variants: Vec<Variant>,
    /// Support threshold and extremity multiplier for the diagnostics.
    pub support_threshold: f64,
    pub extremity_tau: f64,
}

impl Default for ClassParams {
    fn default() -> Self {
        Self {
            data: MdgParams::default(),
            split: SplitSpec::default(),
            backbone: true,
            hidden: Vec::new(),
            tap: None,
            train: TrainConfig {
                steps: 2000,
                batch_size: 128,
                infomax_weight: 0.5,
                optimizer: crate::network::Optimizer::adam(1e-2),
                affinity: AffinityScale::Rows(20),
                ..TrainConfig::default()
            },
            alphas: vec![0.3],
            variants: vec![Variant::NONE, Variant::lreg()],
            support_threshold: DEFAULT_SUPPORT_THRESHOLD,
            extremity_tau: DEFAULT_EXTREMITY_TAU,
        }
    }
}

impl ClassParams {
    pub fn spec(&self, inputs: usize) -> MlpSpec {
        let mut widths = vec![inputs];
        let mut acts = Vec::new();
        if self.backbone {
            widths.extend([inputs, inputs]);
            acts.extend([Activation::Identity, Activation::Identity]);
        }
        for &h in &self.hidden {
            widths.push(h);
            acts.push(Activation::Relu);
        }
        widths.push(self.data.classes);
        acts.push(Activation::Identity);
        let tap = widths.len() - 2;
        MlpSpec {
            layer_widths: widths,
            activations: acts,
            tap_layer: self.tap.unwrap_or(tap),
            head: Head::SoftmaxClassifier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_sweep(&self.alphas, &self.variants)?;
        self.train.validate()?;
        let spec = self.spec(self.data.m_inf + self.data.m_spur);
        if spec.num_layers() < 2 {
            return Err(Error::Config("classifier needs a backbone or at least one hidden layer".into()));
        }
        spec.validate()?;
        for v in &self.variants {
            if let Some(t) = v.tap {
                spec.clone().with_tap(t).validate()?;
            }
        }
        if !(self.support_threshold > 0.0 && self.support_threshold < 1.0) || !(self.extremity_tau > 0.0) {
            return Err(Error::Config("diagnostic thresholds out of range".into()));
        }
        Ok(())
    }

    fn model(&self, variant: &Variant, inputs: usize, seed: u64) -> Result<MlpModel> {
        let mut spec = self.spec(inputs);
        if let Some(t) = variant.tap {
            spec = spec.with_tap(t);
        }
        let mut model = mlp_init(&spec, seed)?;
        if self.backbone {
            let q = random_rotation(inputs, &mut Rng::new(seed).fork(2));
            model.weights[1] = q.transpose();
            model.weights[0] = q;
        }
        Ok(model)
    }

    fn config(&self, variant: &Variant, alpha: f64, seed: u64) -> TrainConfig {
        let mut cfg = variant.apply(&self.train, alpha);
        cfg.seed = seed;
        if self.backbone {
            cfg.frozen_layers = cfg.frozen_layers.max(1);
        }
        cfg
    }

    /// Rows the diagnostics rescale the evaluation affinity to.
    pub fn reference_rows(&self) -> usize {
        match self.train.affinity {
            AffinityScale::Sum => self.train.batch_size,
            AffinityScale::Rows(n) => n,
        }
    }

    fn train(&self, variant: &Variant, alpha: f64, seed: u64, data: &Batch) -> Result<MlpModel> {
        let mut trainer = Trainer::new(self.model(variant, data.x.cols(), seed)?, self.config(variant, alpha, seed))?;
        trainer.fit(data)?;
        Ok(trainer.model)
    }
}

/// Haar-random orthogonal matrix (Gram–Schmidt on Gaussian rows).
pub fn random_rotation(n: usize, rng: &mut Rng) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for r in &rows {
            let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Matrix::from_fn(n, n, |r, c| rows[r][c])
}

fn seen_rows(set: &SynthClassSet, unseen: usize) -> SynthClassSet {
    let idx: Vec<usize> = (0..set.len()).filter(|&r| set.domain[r] != unseen).collect();
    set.select(&idx)
}

fn train_data(lab: &SynthClassSet, unl: &SynthClassSet) -> Result<Batch> {
    Batch::concat(&[&lab.to_batch(), &unl.to_batch()])
}

/// A fitted model named by seed, variant, strength and held-out domain.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub name: String,
    pub model: MlpModel,
}

/// Supports found on one held-out domain by one fitted variant.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportDump {
    pub seed: u64,
    pub variant: String,
    pub alpha: f64,
    pub domain: usize,
    pub supports: SupportSet,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassOutcome {
    pub records: Vec<MetricRecord>,
    pub supports: Vec<SupportDump>,
    pub models: Vec<FittedModel>,
}

fn checkpoint_name(seed: u64, variant: &Variant, alpha: f64, domain: Option<usize>) -> String {
    let mut name = format!("seed{seed}_{variant}_a{alpha}");
    if let Some(d) = domain {
        name += &format!("_d{d}");
    }
    name.replace(['@', '+'], "-")
}

/// Category discovery on the seen domains: train on labeled known-class rows
/// plus the unlabeled rest, score the unlabeled rows.
pub fn run_gcd(params: &ClassParams, seed: u64) -> Result<ClassOutcome> {
    params.validate()?;
    let set = seen_rows(&mdg_dataset(&params.data, seed)?, params.data.unseen_domain);
    let (lab, unl) = gcd_split(&set, &params.split, seed)?;
    let data = train_data(&lab, &unl)?;
    let mut out = ClassOutcome::default();
    for variant in &params.variants {
        for alpha in variant.alphas(&params.alphas) {
            let model = params.train(variant, alpha, seed, &data)?;
            let pred = model.predict_classes(&unl.x)?;
            let rep = gcd_accuracy(&pred, &unl.y, &unl.known_mask)?;
            for (m, v) in [("acc_all", rep.acc_all), ("acc_known", rep.acc_known), ("acc_unknown", rep.acc_unknown)] {
                out.records.push(MetricRecord::new(seed, variant, alpha, m, v));
            }
            out.models.push(FittedModel {
                name: checkpoint_name(seed, variant, alpha, None),
                model,
            });
        }
    }
    Ok(out)
}

/// Leave-one-domain-out classification with every seen row labeled.
pub fn run_mdg(params: &ClassParams, seed: u64) -> Result<ClassOutcome> {
    params.validate()?;
    let mut plain = params.clone();
    plain.train.infomax_weight = 0.0;
    let mut out = ClassOutcome::default();
    for variant in &params.variants {
        for alpha in variant.alphas(&params.alphas) {
            let mut accs = Vec::new();
            for d in 0..params.data.domains {
                let set = mdg_dataset(&params.data.with_unseen(d), seed)?;
                let train = seen_rows(&set, d).to_batch();
                let test_idx: Vec<usize> = (0..set.len()).filter(|&r| set.domain[r] == d).collect();
                let test = set.select(&test_idx);
                let model = plain.train(variant, alpha, seed, &train)?;
                let pred = model.predict_classes(&test.x)?;
                let acc = pred.iter().zip(&test.y).filter(|(a, b)| a == b).count() as f64 / test.len() as f64;
                out.records.push(MetricRecord::new(seed, variant, alpha, format!("acc_domain_{d}"), acc));
                accs.push(acc);
                out.models.push(FittedModel {
                    name: checkpoint_name(seed, variant, alpha, Some(d)),
                    model,
                });
            }
            out.records.push(MetricRecord::new(seed, variant, alpha, "acc_mean", mean(&accs)));
        }
    }
    Ok(out)
}

/// Rows of held-out domain `domain` in the all-shift protocol, with
/// `known_mask` marking the known classes.
pub fn allshift_test_rows(data: &MdgParams, split: &SplitSpec, domain: usize, seed: u64) -> Result<SynthClassSet> {
    let set = mdg_dataset(&data.with_unseen(domain), seed)?;
    let split = SplitSpec {
        unseen_domain_index: domain,
        ..*split
    };
    Ok(allshift_split(&set, &split, seed)?.2)
}

/// Accuracy and complexity diagnostics of `model` on `test`.
pub fn diagnose(
    model: &MlpModel,
    test: &SynthClassSet,
    reference_rows: usize,
    tau: f64,
    threshold: f64,
) -> Result<(Vec<(&'static str, f64)>, SupportSet)> {
    let pred = argmax_rows(model.forward(&test.x)?.output());
    let rep = gcd_accuracy(&pred, &test.y, &test.known_mask)?;
    let (cx, sup) = complexity_report(model, &test.x, &test.known_mask, reference_rows, tau, threshold)?;
    let values = vec![
        ("acc_all", rep.acc_all),
        ("acc_known", rep.acc_known),
        ("acc_unknown", rep.acc_unknown),
        ("extreme_weight_fraction", cx.extreme_weight_fraction),
        ("mean_support_size", cx.mean_support_size),
        ("support_jaccard", cx.support_jaccard),
        ("feature_balance_entropy", cx.feature_balance_entropy),
        ("known_unknown_distance", cx.known_unknown_distance),
    ];
    Ok((values, sup))
}

/// Category discovery trained on the seen domains and scored on the held-out
/// domain, once per held-out domain, with complexity diagnostics on the
/// held-out rows.
pub fn run_allshift(params: &ClassParams, seed: u64) -> Result<ClassOutcome> {
    params.validate()?;
    let mut out = ClassOutcome::default();
    for variant in &params.variants {
        for alpha in variant.alphas(&params.alphas) {
            let mut per_metric: Vec<(&str, Vec<f64>)> = Vec::new();
            for d in 0..params.data.domains {
                let set = mdg_dataset(&params.data.with_unseen(d), seed)?;
                let split = SplitSpec {
                    unseen_domain_index: d,
                    ..params.split
                };
                let (lab, unl, test) = allshift_split(&set, &split, seed)?;
                let model = params.train(variant, alpha, seed, &train_data(&lab, &unl)?)?;
                let (values, sup) = diagnose(
                    &model,
                    &test,
                    params.reference_rows(),
                    params.extremity_tau,
                    params.support_threshold,
                )?;
                for (m, v) in values {
                    out.records.push(MetricRecord::new(seed, variant, alpha, format!("{m}_domain_{d}"), v));
                    match per_metric.iter_mut().find(|(name, _)| *name == m) {
                        Some((_, vals)) => vals.push(v),
                        None => per_metric.push((m, vec![v])),
                    }
                }
                out.supports.push(SupportDump {
                    seed,
                    variant: variant.to_string(),
                    alpha,
                    domain: d,
                    supports: sup,
                });
                out.models.push(FittedModel {
                    name: checkpoint_name(seed, variant, alpha, Some(d)),
                    model,
                });
            }
            for (m, vals) in per_metric {
                out.records.push(MetricRecord::new(seed, variant, alpha, format!("{m}_mean"), mean(&vals)));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- linear support check

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Params {
    pub m_support: usize,
    pub m_spurious: usize,
    pub samples: usize,
    /// CE plus a fixed L2 penalty; `alpha` is set from the sweep.
    pub train: TrainConfig,
    pub alphas: Vec<f64>,
}

impl Default for Prop1Params {
    fn default() -> Self {
        Self {
            m_support: 4,
            m_spurious: 4,
            samples: 400,
            train: TrainConfig {
                extra_regs: vec![(RegKind::L2, 1e-3)],
                steps: 2000,
                batch_size: 64,
                optimizer: crate::network::Optimizer::adam(1e-2),
                affinity: AffinityScale::Rows(1),
                ..TrainConfig::default()
            },
            alphas: vec![1e-2],
        }
    }
}

impl Prop1Params {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() {
            return Err(Error::Config("prop1 needs at least one alpha".into()));
        }
        validate_sweep(&self.alphas, &[Variant::lreg()])?;
        self.train.validate()
    }
}

/// Fits the plain and the L-Reg linear classifier at every `α`; the plain
/// fit is reported under variant `none`.
pub fn run_prop1(params: &Prop1Params, seed: u64) -> Result<Vec<MetricRecord>> {
    params.validate()?;
    let inst = prop1_instance(params.m_support, params.m_spurious, params.samples, seed)?;
    let mut out = Vec::new();
    for (i, &alpha) in params.alphas.iter().enumerate() {
        let cfg = TrainConfig {
            alpha,
            seed,
            ..params.train.clone()
        };
        let rec = prop1_check(&inst, &cfg)?;
        if i == 0 {
            for (m, v) in [
                ("acc_seen", rec.acc_seen_plain),
                ("acc_unseen", rec.acc_unseen_plain),
                ("spurious_weight", rec.spurious_weight_plain),
                ("generalization_gap", rec.gap_plain),
            ] {
                out.push(MetricRecord::new(seed, &Variant::NONE, 0.0, m, v));
            }
        }
        for (m, v) in [
            ("acc_seen", rec.acc_seen_lreg),
            ("acc_unseen", rec.acc_unseen_lreg),
            ("spurious_weight", rec.spurious_weight_lreg),
            ("generalization_gap", rec.gap_lreg),
        ] {
            out.push(MetricRecord::new(seed, &Variant::lreg(), alpha, m, v));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for s in ["none", "l1", "l2", "lreg", "ortho", "lreg+l2", "lreg@1", "lreg@2+ortho", "l1+l2"] {
            let v: Variant = s.parse().unwrap();
            assert_eq!(v.to_string(), s);
        }
        assert_eq!("l2+lreg".parse::<Variant>().unwrap().to_string(), "lreg+l2");
        for bad in ["", "lreg+lreg", "l2@1", "dropout", "lreg@x"] {
            assert!(bad.parse::<Variant>().is_err(), "{bad}");
        }
    }

    #[test]
    fn variant_applies_its_regularizers() {
        let base = TrainConfig {
            extra_regs: vec![(RegKind::L2, 1e-3)],
            ..TrainConfig::default()
        };
        let cfg = "lreg+l1".parse::<Variant>().unwrap().apply(&base, 0.5);
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.extra_regs, vec![(RegKind::L2, 1e-3), (RegKind::L1, 0.5)]);
        let cfg = Variant::NONE.apply(&base, 0.5);
        assert_eq!(cfg.alpha, 0.0);
        assert_eq!(cfg.extra_regs, base.extra_regs);
        assert_eq!(Variant::NONE.alphas(&[0.1, 0.2]), vec![0.0]);
    }

    #[test]
    fn rotation_is_orthogonal() {
        let q = random_rotation(7, &mut Rng::new(4));
        let qtq = q.t_matmul(&q).unwrap();
        let mut diff = qtq.clone();
        diff.add_scaled(&Matrix::identity(7), -1.0).unwrap();
        assert!(diff.max_abs() < 1e-12);
    }

    #[test]
    fn backbone_starts_as_identity_map() {
        let params = ClassParams::default();
        let model = params.model(&Variant::lreg(), 8, 3).unwrap();
        let x = crate::numerics::normal_matrix(&mut Rng::new(1), 5, 8, 1.0);
        let fp = model.forward(&x).unwrap();
        let mut diff = fp.z().clone();
        diff.add_scaled(&x, -1.0).unwrap();
        assert!(diff.max_abs() < 1e-12);
        assert_eq!(model.spec.tap_layer, 2);
    }

    #[test]
    fn toy_zero_strength_matches_plain_fit() {
        let params = ToyParams {
            n_train: 64,
            grid_resolution: 5,
            hidden_width: 8,
            layers: 3,
            train: TrainConfig {
                main_loss: MainLoss::Mse,
                steps: 20,
                batch_size: 16,
                ..TrainConfig::default()
            },
            variants: vec![Variant::NONE],
            ..ToyParams::default()
        };
        let a = run_toy(&params, 0).unwrap();
        // l2 at weight 0 is the plain objective
        let mut cfg = params.train.clone();
        cfg.extra_regs.push((RegKind::L2, 0.0));
        let b = run_toy(&ToyParams { train: cfg, ..params.clone() }, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.grids[0].1.len(), 25);
        assert!(a.records.iter().all(|r| r.value.is_finite()));
    }

    #[test]
    fn class_runs_are_deterministic() {
        let params = ClassParams {
            data: MdgParams {
                classes: 4,
                domains: 2,
                unseen_domain: 1,
                m_inf: 4,
                m_spur: 2,
                n_per_domain: 80,
                ..MdgParams::default()
            },
            train: TrainConfig {
                steps: 30,
                ..ClassParams::default().train
            },
            ..ClassParams::default()
        };
        let a = run_gcd(&params, 5).unwrap();
        assert_eq!(a, run_gcd(&params, 5).unwrap());
        assert_eq!(a.records.len(), 6);
        assert_eq!(a.models.len(), 2);
        let s = run_allshift(&params, 5).unwrap();
        assert_eq!(s, run_allshift(&params, 5).unwrap());
        assert_eq!(s.supports.len(), 4);
        let m = run_mdg(&params, 5).unwrap();
        assert_eq!(m.records.iter().filter(|r| r.metric == "acc_mean").count(), 2);
        assert_eq!(m.models.len(), 4);
    }
}
