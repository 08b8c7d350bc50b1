//! Feedforward network with hand-derived reverse-mode gradients.
//!
//! Layer `l` (1-based) maps the previous activation `a_{l-1}` to
//! `a_l = act_l(a_{l-1} W_lᵀ + b_l)`, with `W_l` stored as `out × in`. The
//! post-activation output of the tap layer is the semantic feature matrix
//! `Z` that L-Reg reads; the layers after it form the predictor head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{entropy_of, neg_plogp_deriv, softmax_rows, Matrix, Rng};
use crate::regularizers::{lreg_on_batch_grouped, lreg_on_batch_scaled, AffinityScale, ortho_reg, weight_penalty, LossWithGrad, PenaltyKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn deriv(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    SoftmaxClassifier,
    LinearRegressor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub tap_layer: usize,
    pub head: Head,
}

impl MlpSpec {
    /// ReLU hidden layers, identity output, tap on the last hidden layer.
    pub fn relu(layer_widths: Vec<usize>, head: Head) -> Self {
        let n = layer_widths.len().saturating_sub(1);
        let mut activations = vec![Activation::Relu; n];
        if let Some(last) = activations.last_mut() {
            *last = Activation::Identity;
        }
        Self {
            layer_widths,
            activations,
            tap_layer: n.saturating_sub(1),
            head,
        }
    }

    pub fn with_tap(mut self, tap_layer: usize) -> Self {
        self.tap_layer = tap_layer;
        self
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len().saturating_sub(1)
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_layers();
        if n < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least 2 layers, got {n}"
            )));
        }
        if self.activations.len() != n {
            return Err(Error::Config(format!(
                "{} activations for {n} layers",
                self.activations.len()
            )));
        }
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if self.tap_layer == 0 || self.tap_layer >= n {
            return Err(Error::Config(format!(
                "tap layer must lie in 1..{n}, got {}",
                self.tap_layer
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub spec: MlpSpec,
    /// `weights[l]` is `out × in` for layer `l + 1`.
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Glorot-uniform weights, zero biases.
pub fn mlp_init(spec: &MlpSpec, seed: u64) -> Result<MlpModel> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let mut weights = Vec::with_capacity(spec.num_layers());
    let mut biases = Vec::with_capacity(spec.num_layers());
    for pair in spec.layer_widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.push(Matrix::from_fn(fan_out, fan_in, |_, _| {
            rng.uniform_range(-bound, bound)
        }));
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpModel {
        spec: spec.clone(),
        weights,
        biases,
    })
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `pre[l]` is the pre-activation of layer `l + 1`.
    pub pre: Vec<Matrix>,
    /// `acts[0]` is the input, `acts[l]` the output of layer `l`.
    pub acts: Vec<Matrix>,
    /// Softmax of the output, for classifier heads.
    pub probs: Option<Matrix>,
    tap_layer: usize,
}

impl ForwardPass {
    pub fn z(&self) -> &Matrix {
        &self.acts[self.tap_layer]
    }

    /// Final-layer output: logits for classifiers, predictions for regressors.
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("non-empty forward pass")
    }
}

impl MlpModel {
    pub fn num_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.as_slice().len() + b.len())
            .sum()
    }

    /// Parameters in layer order: each layer's weights (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("set_params", self.num_params(), flat.len()));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("set_params"));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
            let nb = b.len();
            b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Mutable views over every parameter tensor, in [`MlpModel::params`] order.
    fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardPass> {
        if x.cols() != self.spec.input_width() {
            return Err(Error::shape(
                "forward",
                format!("{} input columns", self.spec.input_width()),
                x.cols(),
            ));
        }
        let n = self.spec.num_layers();
        let mut pre = Vec::with_capacity(n);
        let mut acts = Vec::with_capacity(n + 1);
        acts.push(x.clone());
        for l in 0..n {
            let mut p = acts[l].matmul_t(&self.weights[l])?;
            p.add_row_vector(&self.biases[l])?;
            let act = self.spec.activations[l];
            acts.push(p.map(|v| act.apply(v)));
            pre.push(p);
        }
        let probs = match self.spec.head {
            Head::SoftmaxClassifier => Some(softmax_rows(&acts[n])),
            Head::LinearRegressor => None,
        };
        Ok(ForwardPass {
            pre,
            acts,
            probs,
            tap_layer: self.spec.tap_layer,
        })
    }

    /// Argmax class per row (lowest index wins ties).
    pub fn predict_classes(&self, x: &Matrix) -> Result<Vec<usize>> {
        let fp = self.forward(x)?;
        Ok(argmax_rows(fp.output()))
    }
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Mean cross-entropy over labeled rows (`label >= 0`); unlabeled rows are
/// ignored. Gradient is with respect to the logits.
pub fn loss_ce(logits: &Matrix, labels: &[i64]) -> Result<LossWithGrad> {
    if labels.len() != logits.rows() {
        return Err(Error::shape("loss_ce", logits.rows(), labels.len()));
    }
    let k = logits.cols() as i64;
    if let Some(bad) = labels.iter().find(|&&y| y < -1 || y >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside [-1, {k})"
        )));
    }
    let probs = softmax_rows(logits);
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let n = labels.iter().filter(|&&y| y >= 0).count();
    if n == 0 {
        return Ok(LossWithGrad { value: 0.0, grad });
    }
    let inv = 1.0 / n as f64;
    let mut value = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if y < 0 {
            continue;
        }
        let y = y as usize;
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        value += lse - row[y];
        let g = grad.row_mut(r);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = inv * (probs[(r, j)] - if j == y { 1.0 } else { 0.0 });
        }
    }
    Ok(LossWithGrad {
        value: value * inv,
        grad,
    })
}

/// `(1/B) Σ_b ‖pred_b − target_b‖²`, gradient with respect to `pred`.
pub fn loss_mse(pred: &Matrix, target: &Matrix) -> Result<LossWithGrad> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "loss_mse",
            format!("{:?}", pred.shape()),
            format!("{:?}", target.shape()),
        ));
    }
    let b = pred.rows().max(1) as f64;
    let mut grad = pred.sub(target)?;
    let value = grad.as_slice().iter().map(|d| d * d).sum::<f64>() / b;
    grad.scale(2.0 / b);
    Ok(LossWithGrad { value, grad })
}

/// InfoMax surrogate on probability rows: `mean_b H(p_b) − H(mean_b p_b)`.
/// Gradient is with respect to the probabilities.
pub fn infomax_loss(probs: &Matrix) -> LossWithGrad {
    let (b, k) = probs.shape();
    if b == 0 {
        return LossWithGrad {
            value: 0.0,
            grad: Matrix::zeros(0, k),
        };
    }
    let inv = 1.0 / b as f64;
    let mean: Vec<f64> = probs.col_sums().into_iter().map(|s| s * inv).collect();
    let conditional: f64 = (0..b).map(|r| entropy_of(probs.row(r))).sum::<f64>() * inv;
    let value = conditional - entropy_of(&mean);
    let mean_term: Vec<f64> = mean.iter().map(|&p| neg_plogp_deriv(p)).collect();
    let grad = Matrix::from_fn(b, k, |r, j| inv * (neg_plogp_deriv(probs[(r, j)]) - mean_term[j]));
    LossWithGrad { value, grad }
}

/// Backpropagates `d_probs` through a row-wise softmax.
fn softmax_backward(probs: &Matrix, d_probs: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let d = d_probs.row(r);
        let dot: f64 = p.iter().zip(d).map(|(a, b)| a * b).sum();
        for (o, (pi, di)) in out.row_mut(r).iter_mut().zip(p.iter().zip(d)) {
            *o = pi * (di - dot);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MainLoss {
    Ce,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    L1,
    L2,
    Ortho,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainMode {
    Pooled,
    PerDomain,
}

/// What L-Reg sees as `Ŷ`.
///
/// For regression heads each output `y` is expanded to the pair `(y, −y)`;
/// with `Probabilities` that pair is softmaxed, giving a soft
/// positive/negative assignment per output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LRegInput {
    Probabilities,
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd {
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd {
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam(1e-3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub main_loss: MainLoss,
    pub extra_regs: Vec<(RegKind, f64)>,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub infomax_weight: f64,
    pub lreg_domain_mode: DomainMode,
    pub lreg_input: LRegInput,
    pub affinity: AffinityScale,
    /// The first `frozen_layers` layers are never updated.
    pub frozen_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            main_loss: MainLoss::Ce,
            extra_regs: Vec::new(),
            optimizer: Optimizer::default(),
            batch_size: 64,
            steps: 1000,
            seed: 0,
            infomax_weight: 0.0,
            lreg_domain_mode: DomainMode::Pooled,
            lreg_input: LRegInput::Probabilities,
            affinity: AffinityScale::Sum,
            frozen_layers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.infomax_weight >= 0.0) {
            return Err(Error::Config("infomax_weight must be >= 0".into()));
        }
        if let Some((k, w)) = self.extra_regs.iter().find(|(_, w)| !(*w >= 0.0)) {
            return Err(Error::Config(format!("weight of {k:?} must be >= 0, got {w}")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    /// Class labels, `-1` for unlabeled rows.
    pub y: Vec<i64>,
    pub domain: Vec<usize>,
    pub known_mask: Vec<bool>,
    /// Regression targets, when the head is a regressor.
    pub targets: Option<Matrix>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x.rows();
        if self.y.len() != n || self.domain.len() != n || self.known_mask.len() != n {
            return Err(Error::shape(
                "Batch",
                format!("{n} rows everywhere"),
                format!(
                    "y {}, domain {}, known {}",
                    self.y.len(),
                    self.domain.len(),
                    self.known_mask.len()
                ),
            ));
        }
        if let Some(t) = &self.targets {
            if t.rows() != n {
                return Err(Error::shape("Batch targets", n, t.rows()));
            }
        }
        Ok(())
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            domain: idx.iter().map(|&i| self.domain[i]).collect(),
            known_mask: idx.iter().map(|&i| self.known_mask[i]).collect(),
            targets: self.targets.as_ref().map(|t| t.select_rows(idx)),
        }
    }

    /// Concatenates batches row-wise.
    pub fn concat(parts: &[&Batch]) -> Result<Batch> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero batches".into()))?;
        let cols = first.x.cols();
        let mut xs = Vec::new();
        let mut ts = Vec::new();
        let (mut y, mut domain, mut known) = (Vec::new(), Vec::new(), Vec::new());
        for p in parts {
            if p.x.cols() != cols {
                return Err(Error::shape("Batch::concat", cols, p.x.cols()));
            }
            xs.extend_from_slice(p.x.as_slice());
            if let Some(t) = &p.targets {
                ts.extend_from_slice(t.as_slice());
            }
            y.extend_from_slice(&p.y);
            domain.extend_from_slice(&p.domain);
            known.extend_from_slice(&p.known_mask);
        }
        let rows = y.len();
        let targets = match first.targets.as_ref() {
            Some(t) => Some(Matrix::new(rows, t.cols(), ts)?),
            None => None,
        };
        Ok(Batch {
            x: Matrix::new(rows, cols, xs)?,
            y,
            domain,
            known_mask: known,
            targets,
        })
    }
}

/// Every loss component of one evaluation of `L_all`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub main: f64,
    pub ce: f64,
    pub infomax: f64,
    pub mse: f64,
    pub lreg: f64,
    /// Unweighted value of each configured extra regularizer, in config order.
    pub extras: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }
}

fn regression_pairs(out: &Matrix, input: LRegInput) -> Matrix {
    let pairs = Matrix::from_fn(out.rows(), 2 * out.cols(), |r, c| {
        let v = out[(r, c / 2)];
        if c % 2 == 0 {
            v
        } else {
            -v
        }
    });
    match input {
        LRegInput::Logits => pairs,
        LRegInput::Probabilities => {
            let mut p = pairs;
            for r in 0..p.rows() {
                for c in (0..p.cols()).step_by(2) {
                    let s = 1.0 / (1.0 + (-2.0 * p[(r, c)]).exp());
                    p[(r, c)] = s;
                    p[(r, c + 1)] = 1.0 - s;
                }
            }
            p
        }
    }
}

/// `L_all = L_main + α·L_LReg + Σ w·extra` and its parameter gradient.
pub fn loss_and_grad(model: &MlpModel, batch: &Batch, config: &TrainConfig) -> Result<(LossBreakdown, Gradients)> {
    batch.validate()?;
    let fp = model.forward(&batch.x)?;
    let n_layers = model.spec.num_layers();
    let out = fp.output();
    let (b, k) = out.shape();
    let mut parts = LossBreakdown::default();

    // gradient w.r.t. the final layer output
    let mut d_out = Matrix::zeros(b, k);
    // gradient w.r.t. the softmax probabilities (classifier heads)
    let mut d_probs = Matrix::zeros(b, k);

    match config.main_loss {
        MainLoss::Ce => {
            let probs = fp.probs.as_ref().ok_or_else(|| {
                Error::Config("cross-entropy needs a softmax classifier head".into())
            })?;
            let ce = loss_ce(out, &batch.y)?;
            parts.ce = ce.value;
            d_out.add_scaled(&ce.grad, 1.0)?;
            if config.infomax_weight > 0.0 {
                let unlabeled: Vec<usize> = (0..b).filter(|&r| batch.y[r] < 0).collect();
                if !unlabeled.is_empty() {
                    let im = infomax_loss(&probs.select_rows(&unlabeled));
                    parts.infomax = im.value;
                    for (i, &r) in unlabeled.iter().enumerate() {
                        for (d, g) in d_probs.row_mut(r).iter_mut().zip(im.grad.row(i)) {
                            *d += config.infomax_weight * g;
                        }
                    }
                }
            }
            parts.main = parts.ce + config.infomax_weight * parts.infomax;
        }
        MainLoss::Mse => {
            let target = batch
                .targets
                .as_ref()
                .ok_or_else(|| Error::Config("MSE needs regression targets".into()))?;
            let mse = loss_mse(out, target)?;
            parts.mse = mse.value;
            parts.main = mse.value;
            d_out.add_scaled(&mse.grad, 1.0)?;
        }
    }

    let z = fp.z();
    let mut d_z = Matrix::zeros(z.rows(), z.cols());
    if config.alpha > 0.0 {
        let (yhat, probs_input) = match (model.spec.head, config.lreg_input) {
            (Head::SoftmaxClassifier, LRegInput::Probabilities) => (fp.probs.clone().expect("classifier"), true),
            (Head::SoftmaxClassifier, LRegInput::Logits) => (out.clone(), false),
            (Head::LinearRegressor, mode) => (regression_pairs(out, mode), false),
        };
        let lr = match config.lreg_domain_mode {
            DomainMode::Pooled => lreg_on_batch_scaled(z, &yhat, config.affinity)?,
            DomainMode::PerDomain => {
                lreg_on_batch_grouped(z, &yhat, &domain_groups(&batch.domain), config.affinity)?
            }
        };
        parts.lreg = lr.value;
        d_z.add_scaled(&lr.d_z, config.alpha)?;
        match model.spec.head {
            Head::SoftmaxClassifier if probs_input => d_probs.add_scaled(&lr.d_yhat, config.alpha)?,
            Head::SoftmaxClassifier => d_out.add_scaled(&lr.d_yhat, config.alpha)?,
            Head::LinearRegressor => {
                // chain through (y, −y) and, for probabilities, the pair softmax
                for r in 0..b {
                    for c in 0..k {
                        let (g0, g1) = (lr.d_yhat[(r, 2 * c)], lr.d_yhat[(r, 2 * c + 1)]);
                        let d = match config.lreg_input {
                            LRegInput::Logits => g0 - g1,
                            LRegInput::Probabilities => {
                                let s = yhat[(r, 2 * c)];
                                2.0 * s * (1.0 - s) * (g0 - g1)
                            }
                        };
                        d_out[(r, c)] += config.alpha * d;
                    }
                }
            }
        }
    }

    let mut weight_grads: Vec<Matrix> = model
        .weights
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect();
    for &(kind, weight) in &config.extra_regs {
        let value = match kind {
            RegKind::L1 | RegKind::L2 => {
                let pk = if kind == RegKind::L1 { PenaltyKind::L1 } else { PenaltyKind::L2 };
                let mut total = 0.0;
                for (w, gw) in model.weights.iter().zip(weight_grads.iter_mut()) {
                    let (v, g) = weight_penalty(w.as_slice(), pk);
                    total += v;
                    for (a, b) in gw.as_mut_slice().iter_mut().zip(g) {
                        *a += weight * b;
                    }
                }
                total
            }
            RegKind::Ortho => {
                let o = ortho_reg(z)?;
                d_z.add_scaled(&o.grad, weight)?;
                o.value
            }
        };
        parts.extras.push(value);
    }

    if let Some(probs) = &fp.probs {
        if d_probs.max_abs() > 0.0 {
            d_out.add_scaled(&softmax_backward(probs, &d_probs), 1.0)?;
        }
    }

    parts.total = parts.main
        + config.alpha * parts.lreg
        + config
            .extra_regs
            .iter()
            .zip(&parts.extras)
            .map(|((_, w), v)| w * v)
            .sum::<f64>();

    // reverse pass
    let mut bias_grads: Vec<Vec<f64>> = model.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut d_act = d_out;
    for l in (0..n_layers).rev() {
        let layer = l + 1;
        if layer == model.spec.tap_layer {
            d_act.add_scaled(&d_z, 1.0)?;
        }
        let act = model.spec.activations[l];
        let pre = &fp.pre[l];
        let mut d_pre = d_act;
        if act != Activation::Identity {
            for (d, p) in d_pre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                *d *= act.deriv(*p);
            }
        }
        let gw = d_pre.t_matmul(&fp.acts[l])?;
        weight_grads[l].add_scaled(&gw, 1.0)?;
        for (g, s) in bias_grads[l].iter_mut().zip(d_pre.col_sums()) {
            *g += s;
        }
        d_act = if l > 0 { d_pre.matmul(&model.weights[l])? } else { Matrix::zeros(0, 0) };
    }

    Ok((
        parts,
        Gradients {
            weights: weight_grads,
            biases: bias_grads,
        },
    ))
}

fn domain_groups(domain: &[usize]) -> Vec<Vec<usize>> {
    let n = domain.iter().max().map_or(0, |d| d + 1);
    let mut groups = vec![Vec::new(); n];
    for (r, &d) in domain.iter().enumerate() {
        groups[d].push(r);
    }
    groups
}

/// Optimizer moment buffers, aligned with [`MlpModel::params`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(num_params: usize) -> Self {
        Self {
            step: 0,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
        }
    }
}

/// `w ← w − lr (v)`, with `v = momentum·v + g + λw`.
pub fn sgd_update(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64, weight_decay: f64) {
    for ((w, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let step = g + weight_decay * *w;
        *v = momentum * *v + step;
        *w -= lr * *v;
    }
}

/// Adam with bias correction; `step` is the 1-based count including this update.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
) {
    let c1 = 1.0 - beta1.powi(step as i32);
    let c2 = 1.0 - beta2.powi(step as i32);
    for (((w, g), m), v) in params.iter_mut().zip(grads).zip(first.iter_mut()).zip(second.iter_mut()) {
        let g = g + weight_decay * *w;
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    }
}

fn apply_update(
    model: &mut MlpModel,
    grads: &Gradients,
    optimizer: &Optimizer,
    frozen_layers: usize,
    state: &mut OptimizerState,
) {
    state.step += 1;
    let step = state.step;
    let flat_grads = grads.flatten();
    let mut off = 0;
    let (first, second) = (&mut state.first, &mut state.second);
    // weights and biases alternate, two slices per layer
    for (i, slice) in model.param_slices_mut().enumerate() {
        let n = slice.len();
        if i / 2 < frozen_layers {
            off += n;
            continue;
        }
        let g = &flat_grads[off..off + n];
        match *optimizer {
            Optimizer::Sgd { lr, momentum, weight_decay } => {
                sgd_update(slice, g, &mut first[off..off + n], lr, momentum, weight_decay)
            }
            Optimizer::Adam { lr, beta1, beta2, eps, weight_decay } => adam_update(
                slice,
                g,
                &mut first[off..off + n],
                &mut second[off..off + n],
                step,
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            ),
        }
        off += n;
    }
}

/// One optimizer step on `L_all` for a batch.
pub fn train_step(
    model: &mut MlpModel,
    batch: &Batch,
    config: &TrainConfig,
    state: &mut OptimizerState,
) -> Result<LossBreakdown> {
    config.validate()?;
    if config.frozen_layers >= model.spec.num_layers() {
        return Err(Error::Config(format!(
            "frozen_layers {} leaves nothing to train in a {}-layer model",
            config.frozen_layers,
            model.spec.num_layers()
        )));
    }
    if state.first.len() != model.num_params() {
        return Err(Error::shape("train_step optimizer state", model.num_params(), state.first.len()));
    }
    let (parts, grads) = loss_and_grad(model, batch, config)?;
    if !parts.total.is_finite() {
        return Err(Error::NonFinite("train_step loss"));
    }
    apply_update(model, &grads, &config.optimizer, config.frozen_layers, state);
    Ok(parts)
}

/// Minibatch trainer: epochs of shuffled, non-overlapping batches.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: MlpModel,
    pub config: TrainConfig,
    pub state: OptimizerState,
    rng: Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(model: MlpModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let state = OptimizerState::new(model.num_params());
        let rng = Rng::new(config.seed ^ 0x5EED_BA7C_0000_0001);
        Ok(Self {
            model,
            config,
            state,
            rng,
            order: Vec::new(),
            cursor: 0,
        })
    }

    fn next_indices(&mut self, n: usize) -> Vec<usize> {
        let bs = self.config.batch_size.min(n);
        if self.cursor + bs > self.order.len() {
            self.order = self.rng.permutation(n);
            self.cursor = 0;
        }
        let idx = self.order[self.cursor..self.cursor + bs].to_vec();
        self.cursor += bs;
        idx
    }

    pub fn step(&mut self, data: &Batch) -> Result<LossBreakdown> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training on an empty dataset".into()));
        }
        let idx = self.next_indices(data.len());
        let batch = data.select(&idx);
        train_step(&mut self.model, &batch, &self.config, &mut self.state)
    }

    /// Runs `config.steps` steps; returns the last step's breakdown.
    pub fn fit(&mut self, data: &Batch) -> Result<LossBreakdown> {
        let mut last = LossBreakdown::default();
        for _ in 0..self.config.steps {
            last = self.step(data)?;
        }
        Ok(last)
    }
}

/// Serialized model: spec, flat parameters, seed and step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
    pub seed: u64,
    pub step: u64,
}

impl Checkpoint {
    pub fn from_model(model: &MlpModel, seed: u64, step: u64) -> Self {
        Self {
            spec: model.spec.clone(),
            params: model.params(),
            seed,
            step,
        }
    }

    pub fn to_model(&self) -> Result<MlpModel> {
        let mut model = mlp_init(&self.spec, self.seed)?;
        model.set_params(&self.params)?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidArgument(format!("bad checkpoint: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, normal_matrix, relative_error};

    fn random_batch(rng: &mut Rng, n: usize, d: usize, k: usize, unlabeled_every: usize) -> Batch {
        let x = normal_matrix(rng, n, d, 1.0);
        let y = (0..n)
            .map(|i| if unlabeled_every > 0 && i % unlabeled_every == 0 { -1 } else { rng.below(k) as i64 })
            .collect();
        Batch {
            x,
            y,
            domain: (0..n).map(|i| i % 2).collect(),
            known_mask: vec![true; n],
            targets: None,
        }
    }

    #[test]
    fn init_examples() {
        let spec = MlpSpec::relu(vec![2, 3, 1], Head::LinearRegressor);
        let a = mlp_init(&spec, 4).unwrap();
        assert_eq!(a, mlp_init(&spec, 4).unwrap());
        assert_eq!(a.weights[0].shape(), (3, 2));
        assert_eq!(a.weights[1].shape(), (1, 3));
        assert!(a.weights[0].max_abs() <= (6.0f64 / 5.0).sqrt());
        assert!(a.weights[1].max_abs() <= (6.0f64 / 4.0).sqrt());
        assert!(a.biases.iter().flatten().all(|b| *b == 0.0));
        assert_ne!(a, mlp_init(&spec, 5).unwrap());

        assert!(mlp_init(&MlpSpec::relu(vec![2, 3], Head::LinearRegressor), 0).is_err());
        assert!(mlp_init(&spec.clone().with_tap(2), 0).is_err());
        assert!(mlp_init(&MlpSpec::relu(vec![2, 0, 1], Head::LinearRegressor), 0).is_err());
    }

    #[test]
    fn forward_examples() {
        let spec = MlpSpec::relu(vec![3, 4, 2], Head::LinearRegressor);
        let mut m = mlp_init(&spec, 0).unwrap();
        m.set_params(&vec![0.0; m.num_params()]).unwrap();
        let x = normal_matrix(&mut Rng::new(1), 5, 3, 1.0);
        assert_eq!(m.forward(&x).unwrap().output().max_abs(), 0.0);

        let mut m = mlp_init(&spec, 0).unwrap();
        m.weights[0] = Matrix::filled(4, 3, -1.0);
        let x = Matrix::filled(2, 3, 1.0);
        assert_eq!(m.forward(&x).unwrap().z().max_abs(), 0.0);

        assert!(m.forward(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn forward_matches_layer_by_layer_recomputation() {
        let mut rng = Rng::new(2);
        let spec = MlpSpec::relu(vec![4, 6, 5, 3], Head::SoftmaxClassifier).with_tap(1);
        let mut m = mlp_init(&spec, 7).unwrap();
        let noisy: Vec<f64> = m.params().iter().map(|p| p + 0.1 * rng.normal()).collect();
        m.set_params(&noisy).unwrap();
        let x = normal_matrix(&mut rng, 6, 4, 1.0);
        let fp = m.forward(&x).unwrap();
        for r in 0..6 {
            let mut a: Vec<f64> = x.row(r).to_vec();
            for l in 0..3 {
                let w = &m.weights[l];
                let next: Vec<f64> = (0..w.rows())
                    .map(|o| {
                        let s: f64 = (0..w.cols()).map(|i| w[(o, i)] * a[i]).sum::<f64>() + m.biases[l][o];
                        if l < 2 { s.max(0.0) } else { s }
                    })
                    .collect();
                a = next;
                if l + 1 == spec.tap_layer {
                    for (i, v) in a.iter().enumerate() {
                        assert!((fp.z()[(r, i)] - v).abs() < 1e-12);
                    }
                }
            }
            for (i, v) in a.iter().enumerate() {
                assert!((fp.output()[(r, i)] - v).abs() < 1e-12);
            }
        }
        let probs = fp.probs.unwrap();
        assert!((probs.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        let logits = Matrix::from_rows(&[[60.0, 0.0, 0.0], [0.0, 0.0, 60.0]]).unwrap();
        assert!(loss_ce(&logits, &[0, 2]).unwrap().value < 1e-20);

        let uniform = Matrix::zeros(3, 4);
        let ce = loss_ce(&uniform, &[0, 3, -1]).unwrap();
        assert!((ce.value - 4f64.ln()).abs() < 1e-15);
        assert!(ce.grad.row(2).iter().all(|g| *g == 0.0));

        let none = loss_ce(&uniform, &[-1, -1, -1]).unwrap();
        assert_eq!(none.value, 0.0);
        assert_eq!(none.grad.max_abs(), 0.0);

        assert!(loss_ce(&uniform, &[0, 4, 1]).is_err());

        let mut rng = Rng::new(3);
        let logits = normal_matrix(&mut rng, 6, 4, 2.0);
        let labels = [0, -1, 3, 2, -1, 1];
        let g = loss_ce(&logits, &labels).unwrap().grad;
        let n = finite_diff_grad(|x| Ok(loss_ce(&Matrix::new(6, 4, x.to_vec())?, &labels)?.value), logits.as_slice(), 1e-5)
            .unwrap();
        assert!(relative_error(g.as_slice(), &n) < 1e-6);
    }

    #[test]
    fn mse_examples() {
        let mut rng = Rng::new(4);
        let p = normal_matrix(&mut rng, 5, 2, 1.0);
        assert_eq!(loss_mse(&p, &p).unwrap().value, 0.0);
        let t = normal_matrix(&mut rng, 5, 2, 1.0);
        let direct: f64 = (0..5)
            .map(|r| (0..2).map(|c| (p[(r, c)] - t[(r, c)]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / 5.0;
        let got = loss_mse(&p, &t).unwrap();
        assert!((got.value - direct).abs() < 1e-14);
        let n = finite_diff_grad(|x| Ok(loss_mse(&Matrix::new(5, 2, x.to_vec())?, &t)?.value), p.as_slice(), 1e-5).unwrap();
        assert!(relative_error(got.grad.as_slice(), &n) < 1e-6);
        assert!(loss_mse(&p, &Matrix::zeros(5, 3)).is_err());
    }

    #[test]
    fn infomax_examples() {
        assert!(infomax_loss(&Matrix::filled(5, 3, 1.0 / 3.0)).value.abs() < 1e-12);
        let onehot = Matrix::from_fn(6, 3, |r, c| if r % 3 == c { 1.0 } else { 0.0 });
        assert!((infomax_loss(&onehot).value + 3f64.ln()).abs() < 1e-10);
        assert_eq!(infomax_loss(&Matrix::zeros(0, 3)).value, 0.0);

        let probs = softmax_rows(&normal_matrix(&mut Rng::new(5), 8, 3, 1.0));
        let g = infomax_loss(&probs).grad;
        let n = finite_diff_grad(|x| Ok(infomax_loss(&Matrix::new(8, 3, x.to_vec())?).value), probs.as_slice(), 1e-5)
            .unwrap();
        assert!(relative_error(g.as_slice(), &n) < 1e-6);
    }

    fn check_full_gradient(spec: &MlpSpec, batch: &Batch, config: &TrainConfig, seed: u64) -> f64 {
        let mut model = mlp_init(spec, seed).unwrap();
        let mut rng = Rng::new(seed + 100);
        let jitter: Vec<f64> = model.params().iter().map(|p| p + 0.05 * rng.normal()).collect();
        model.set_params(&jitter).unwrap();
        let (_, grads) = loss_and_grad(&model, batch, config).unwrap();
        let numeric = finite_diff_grad(
            |p| {
                let mut m = model.clone();
                m.set_params(p)?;
                Ok(loss_and_grad(&m, batch, config)?.0.total)
            },
            &model.params(),
            1e-5,
        )
        .unwrap();
        relative_error(&grads.flatten(), &numeric)
    }

    #[test]
    fn composed_gradient_matches_finite_differences() {
        let mut rng = Rng::new(6);
        let spec = MlpSpec::relu(vec![2, 4, 3], Head::SoftmaxClassifier);
        let batch = random_batch(&mut rng, 10, 2, 3, 3);
        let config = TrainConfig {
            alpha: 0.7,
            infomax_weight: 0.5,
            extra_regs: vec![(RegKind::L2, 0.01), (RegKind::Ortho, 0.1)],
            ..TrainConfig::default()
        };
        assert!(check_full_gradient(&spec, &batch, &config, 1) < 1e-5);

        let per_domain = TrainConfig {
            lreg_domain_mode: DomainMode::PerDomain,
            lreg_input: LRegInput::Logits,
            ..config.clone()
        };
        assert!(check_full_gradient(&spec, &batch, &per_domain, 2) < 1e-5);

        for affinity in [AffinityScale::Rows(1), AffinityScale::Rows(20)] {
            let rescaled = TrainConfig { affinity, ..config.clone() };
            assert!(check_full_gradient(&spec, &batch, &rescaled, 4) < 1e-5);
        }
    }

    #[test]
    fn regression_gradient_matches_finite_differences() {
        let mut rng = Rng::new(7);
        let spec = MlpSpec::relu(vec![2, 5, 4, 1], Head::LinearRegressor);
        let mut batch = random_batch(&mut rng, 12, 2, 2, 0);
        batch.targets = Some(normal_matrix(&mut rng, 12, 1, 1.0));
        for input in [LRegInput::Probabilities, LRegInput::Logits] {
            let config = TrainConfig {
                alpha: 0.3,
                main_loss: MainLoss::Mse,
                extra_regs: vec![(RegKind::L2, 0.02)],
                lreg_input: input,
                ..TrainConfig::default()
            };
            assert!(check_full_gradient(&spec, &batch, &config, 3) < 1e-5);
        }
    }

    #[test]
    fn composition_is_additive() {
        let mut rng = Rng::new(8);
        let spec = MlpSpec::relu(vec![3, 5, 4], Head::SoftmaxClassifier);
        let model = mlp_init(&spec, 0).unwrap();
        let batch = random_batch(&mut rng, 16, 3, 4, 4);
        let config = TrainConfig {
            alpha: 0.25,
            infomax_weight: 0.5,
            extra_regs: vec![(RegKind::L1, 0.1), (RegKind::Ortho, 0.3)],
            ..TrainConfig::default()
        };
        let (p, _) = loss_and_grad(&model, &batch, &config).unwrap();
        let recomposed = p.ce + 0.5 * p.infomax + 0.25 * p.lreg + 0.1 * p.extras[0] + 0.3 * p.extras[1];
        assert!((p.total - recomposed).abs() < 1e-10);
    }

    #[test]
    fn train_step_examples() {
        let mut rng = Rng::new(9);
        let spec = MlpSpec::relu(vec![3, 6, 4], Head::SoftmaxClassifier);
        let batch = random_batch(&mut rng, 12, 3, 4, 0);
        let base = TrainConfig::default();

        // alpha = 0 with no extras is the plain trainer
        let with_zero_alpha = TrainConfig { alpha: 0.0, ..base.clone() };
        let mut a = mlp_init(&spec, 1).unwrap();
        let mut b = a.clone();
        let mut sa = OptimizerState::new(a.num_params());
        let mut sb = sa.clone();
        train_step(&mut a, &batch, &base, &mut sa).unwrap();
        train_step(&mut b, &batch, &with_zero_alpha, &mut sb).unwrap();
        assert_eq!(a.params(), b.params());

        // lr = 0 leaves the model unchanged
        let frozen = TrainConfig {
            alpha: 1.0,
            optimizer: Optimizer::sgd(0.0),
            ..base
        };
        let mut m = mlp_init(&spec, 1).unwrap();
        let before = m.params();
        let mut s = OptimizerState::new(m.num_params());
        train_step(&mut m, &batch, &frozen, &mut s).unwrap();
        assert_eq!(before, m.params());

        // frozen layers keep their parameters, the rest moves
        let spec = MlpSpec::relu(vec![3, 6, 5, 4], Head::SoftmaxClassifier);
        let partly = TrainConfig {
            alpha: 1.0,
            frozen_layers: 2,
            optimizer: Optimizer::adam(0.1),
            ..TrainConfig::default()
        };
        let mut m = mlp_init(&spec, 2).unwrap();
        let before = m.clone();
        let mut s = OptimizerState::new(m.num_params());
        train_step(&mut m, &batch, &partly, &mut s).unwrap();
        assert_eq!(before.weights[..2], m.weights[..2]);
        assert_eq!(before.biases[..2], m.biases[..2]);
        assert_ne!(before.weights[2], m.weights[2]);
        let all = TrainConfig { frozen_layers: 3, ..partly };
        assert!(train_step(&mut m, &batch, &all, &mut s).is_err());
    }

    #[test]
    fn optimizer_examples() {
        let mut w = [1.0];
        sgd_update(&mut w, &[0.5], &mut [0.0], 1.0, 0.0, 0.0);
        assert_eq!(w, [0.5]);
        let mut w = [2.0];
        sgd_update(&mut w, &[0.5], &mut [0.0], 0.1, 0.0, 0.25);
        assert!((w[0] - (2.0 - 0.1 * (0.5 + 0.25 * 2.0))).abs() < 1e-15);

        for g in [0.001, 3.0, -250.0] {
            let mut w = [1.0];
            adam_update(&mut w, &[g], &mut [0.0], &mut [0.0], 1, 0.01, 0.9, 0.999, 1e-8, 0.0);
            let expect = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((w[0] - expect).abs() < 1e-12);
        }

        let (mut w, mut m, mut v) = ([5.0], [0.0], [0.0]);
        for t in 1..=100 {
            let g = [2.0 * w[0]];
            adam_update(&mut w, &g, &mut m, &mut v, t, 0.5, 0.9, 0.999, 1e-8, 0.0);
        }
        assert!(w[0].abs() < 0.1, "w = {}", w[0]);
    }

    #[test]
    fn trainer_is_deterministic() {
        let mut rng = Rng::new(10);
        let spec = MlpSpec::relu(vec![3, 6, 3], Head::SoftmaxClassifier);
        let data = random_batch(&mut rng, 40, 3, 3, 5);
        let config = TrainConfig {
            alpha: 0.1,
            infomax_weight: 0.5,
            steps: 25,
            batch_size: 16,
            seed: 3,
            ..TrainConfig::default()
        };
        let run = || {
            let mut t = Trainer::new(mlp_init(&spec, 3).unwrap(), config.clone()).unwrap();
            t.fit(&data).unwrap();
            t.model.params()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = MlpSpec::relu(vec![2, 3, 2], Head::SoftmaxClassifier);
        let model = mlp_init(&spec, 11).unwrap();
        let ck = Checkpoint::from_model(&model, 11, 42);
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), model);
    }
}
