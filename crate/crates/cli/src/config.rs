//! Experiment configuration: a flat TOML file with section prefixes
//! (`trainer.lr = 0.001` or a `[trainer]` table). Every field is optional
//! except `kind` and `seeds`; [`ExperimentConfig::resolve`] fills the rest
//! with the defaults of the chosen kind.

use std::fmt;
use std::path::PathBuf;

use lreg::experiments::{ClassParams, Prop1Params, ToyParams, Variant};
use lreg::network::{DomainMode, LRegInput, Optimizer, RegKind, TrainConfig};
use lreg::regularizers::AffinityScale;
use lreg::synthdata::{MdgParams, SplitSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Toy,
    Mdg,
    Gcd,
    Allshift,
    Prop1,
    Diag,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Toy => "toy",
            Kind::Mdg => "mdg",
            Kind::Gcd => "gcd",
            Kind::Allshift => "allshift",
            Kind::Prop1 => "prop1",
            Kind::Diag => "diag",
        }
    }

    fn is_class_task(self) -> bool {
        matches!(self, Kind::Mdg | Kind::Gcd | Kind::Allshift)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A configuration problem; `key` names the offending entry when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn at(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: Some(key.into()),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.key {
            Some(k) => write!(f, "config error at `{k}`: {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// `adam` or `sgd`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// SGD only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    /// Fixed L2 penalty shared by every variant.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infomax_weight: Option<f64>,
    /// Rows the L-Reg affinity is rescaled to; 0 keeps the plain batch sum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affinity_rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lreg_input: Option<LRegInput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lreg_domain_mode: Option<DomainMode>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domains: Option<usize>,
    /// Held-out domain for `gcd` and `diag`; `mdg` and `allshift` cycle through all.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unseen_domain: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub informative_dims: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spurious_dims: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_per_domain: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_seen: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub known_class_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labeled_fraction_of_known: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Frozen rotation + fine-tuned inverse rotation in front of the head.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backbone: Option<bool>,
    /// Widths of trainable ReLU layers after the backbone.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    /// Tap layer for plain `lreg` variants (default: last layer before the head).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tap: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prop1Section {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support_dims: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spurious_dims: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extremity_tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support_threshold: Option<f64>,
    /// Rows the evaluation affinity is rescaled to.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_rows: Option<usize>,
    /// Model JSON written by a `save_checkpoints` run (`diag` only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub save_checkpoints: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trainer: Option<TrainerSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prop1: Option<Prop1Section>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsSection>,
}

/// Parses and resolves a configuration file's text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: ExperimentConfig = toml::from_str(text).map_err(|e| toml_error(&e, text))?;
    raw.resolve()
}

fn toml_error(e: &toml::de::Error, text: &str) -> ConfigError {
    let message = e.message().to_string();
    let named = message
        .split('`')
        .nth(1)
        .filter(|_| message.starts_with("unknown field") || message.starts_with("missing field"));
    let key = match (named, e.span()) {
        // a missing field has no line of its own
        (Some(k), _) if message.starts_with("missing field") => Some(k.to_string()),
        (named, Some(span)) => key_at(text, span.start).or(named.map(str::to_string)),
        (named, None) => named.map(str::to_string),
    };
    ConfigError { key, message }
}

/// Dotted path of the `key = value` line holding byte `offset`, prefixed by
/// the enclosing `[section]` header.
fn key_at(text: &str, offset: usize) -> Option<String> {
    let line_start = text[..offset.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next()?;
    let (key, _) = line.split_once('=')?;
    let key = key.trim().trim_matches('"');
    if key.is_empty() || key.starts_with('[') {
        return None;
    }
    let section = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    Some(match section {
        Some(sec) => format!("{sec}.{key}"),
        None => key.to_string(),
    })
}

/// Task defaults that back an unset field.
pub struct Defaults {
    pub toy: ToyParams,
    pub class: ClassParams,
    pub prop1: Prop1Params,
}

impl Defaults {
    pub fn for_kind(kind: Kind) -> Self {
        let mut class = ClassParams::default();
        match kind {
            Kind::Gcd => class.data = gcd_data(),
            Kind::Allshift | Kind::Diag => class.data = allshift_data(),
            Kind::Mdg => {
                class.train.infomax_weight = 0.0;
            }
            _ => {}
        }
        Self {
            toy: ToyParams::default(),
            class,
            prop1: Prop1Params::default(),
        }
    }
}

/// Ten classes, no spurious dimensions: the seen domains are one distribution.
pub fn gcd_data() -> MdgParams {
    MdgParams {
        classes: 10,
        domains: 3,
        unseen_domain: 2,
        m_inf: 10,
        m_spur: 0,
        n_per_domain: 400,
        rho_seen: 0.95,
        separation: 5.0,
    }
}

pub fn allshift_data() -> MdgParams {
    MdgParams {
        classes: 10,
        domains: 4,
        unseen_domain: 3,
        m_inf: 10,
        m_spur: 6,
        n_per_domain: 400,
        rho_seen: 0.95,
        separation: 4.0,
    }
}

fn optimizer_name(o: &Optimizer) -> (&'static str, f64, f64) {
    match *o {
        Optimizer::Adam { lr, .. } => ("adam", lr, 0.0),
        Optimizer::Sgd { lr, momentum, .. } => ("sgd", lr, momentum),
    }
}

fn fill_trainer(t: &mut TrainerSection, base: &TrainConfig, kind: Kind) {
    let (opt, lr, momentum) = optimizer_name(&base.optimizer);
    let base_decay = base
        .extra_regs
        .iter()
        .filter(|(k, _)| *k == RegKind::L2)
        .fold(0.0, |acc, (_, w)| acc + w);
    t.steps.get_or_insert(base.steps);
    t.batch_size.get_or_insert(base.batch_size);
    let opt = t.optimizer.get_or_insert_with(|| opt.to_string()).clone();
    t.lr.get_or_insert(lr);
    if opt == "sgd" {
        t.momentum.get_or_insert(momentum);
    }
    t.weight_decay.get_or_insert(base_decay);
    if kind != Kind::Toy && kind != Kind::Prop1 {
        t.infomax_weight.get_or_insert(base.infomax_weight);
    }
    t.affinity_rows.get_or_insert(match base.affinity {
        AffinityScale::Sum => 0,
        AffinityScale::Rows(n) => n,
    });
    t.lreg_input.get_or_insert(base.lreg_input);
    t.lreg_domain_mode.get_or_insert(base.lreg_domain_mode);
}

fn trainer_config(t: &TrainerSection, base: &TrainConfig) -> Result<TrainConfig, ConfigError> {
    let lr = t.lr.expect("resolved");
    let optimizer = match t.optimizer.as_deref().expect("resolved") {
        "adam" => Optimizer::adam(lr),
        "sgd" => Optimizer::Sgd {
            lr,
            momentum: t.momentum.unwrap_or(0.0),
            weight_decay: 0.0,
        },
        other => return Err(ConfigError::at("trainer.optimizer", format!("expected adam or sgd, got {other:?}"))),
    };
    let mut cfg = base.clone();
    cfg.optimizer = optimizer;
    cfg.steps = t.steps.expect("resolved");
    cfg.batch_size = t.batch_size.expect("resolved");
    cfg.extra_regs.retain(|(k, _)| *k != RegKind::L2);
    let decay = t.weight_decay.expect("resolved");
    if decay != 0.0 {
        cfg.extra_regs.push((RegKind::L2, decay));
    }
    cfg.infomax_weight = t.infomax_weight.unwrap_or(0.0);
    cfg.affinity = match t.affinity_rows.expect("resolved") {
        0 => AffinityScale::Sum,
        n => AffinityScale::Rows(n),
    };
    cfg.lreg_input = t.lreg_input.expect("resolved");
    cfg.lreg_domain_mode = t.lreg_domain_mode.expect("resolved");
    for (key, ok) in [
        ("trainer.lr", lr > 0.0 && lr.is_finite()),
        ("trainer.steps", cfg.steps > 0),
        ("trainer.batch_size", cfg.batch_size > 0),
        ("trainer.weight_decay", decay >= 0.0),
        ("trainer.infomax_weight", cfg.infomax_weight >= 0.0),
        ("trainer.momentum", t.momentum.is_none_or(|m| (0.0..1.0).contains(&m))),
    ] {
        if !ok {
            return Err(ConfigError::at(key, "value out of range"));
        }
    }
    Ok(cfg)
}

impl ExperimentConfig {
    /// Rejects sections the kind does not read, then fills every unset field.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        let kind = self.kind;
        let allowed: &[&str] = match kind {
            Kind::Toy => &["trainer", "toy"],
            Kind::Mdg => &["trainer", "data", "model"],
            Kind::Gcd => &["trainer", "data", "split", "model"],
            Kind::Allshift => &["trainer", "data", "split", "model", "diagnostics"],
            Kind::Prop1 => &["trainer", "prop1"],
            Kind::Diag => &["data", "split", "diagnostics"],
        };
        for (name, present) in [
            ("trainer", self.trainer.is_some()),
            ("toy", self.toy.is_some()),
            ("data", self.data.is_some()),
            ("split", self.split.is_some()),
            ("model", self.model.is_some()),
            ("prop1", self.prop1.is_some()),
            ("diagnostics", self.diagnostics.is_some()),
        ] {
            if present && !allowed.contains(&name) {
                return Err(ConfigError::at(name, format!("section does not apply to kind {kind}")));
            }
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::at("seeds", "at least one seed is required"));
        }
        if kind == Kind::Diag {
            if self.alphas.is_some() || self.variants.is_some() || self.save_checkpoints.is_some() {
                return Err(ConfigError::at(
                    "kind",
                    "diag evaluates a checkpoint; alphas, variants and save_checkpoints do not apply",
                ));
            }
        } else if kind == Kind::Prop1 {
            if self.variants.is_some() {
                return Err(ConfigError::at("variants", "prop1 always compares none against lreg"));
            }
        } else {
            if kind == Kind::Toy && self.save_checkpoints.is_some() {
                return Err(ConfigError::at("save_checkpoints", "toy runs do not write checkpoints"));
            }
            let d = Defaults::for_kind(kind);
            let (alphas, variants) = if kind == Kind::Toy {
                (d.toy.alphas.clone(), d.toy.variants.clone())
            } else {
                (d.class.alphas.clone(), d.class.variants.clone())
            };
            self.variants
                .get_or_insert_with(|| variants.iter().map(Variant::to_string).collect());
            if kind != Kind::Toy {
                self.save_checkpoints.get_or_insert(false);
            }
            self.alphas.get_or_insert(alphas);
        }
        if kind == Kind::Prop1 {
            self.alphas.get_or_insert(Prop1Params::default().alphas);
        }

        let d = Defaults::for_kind(kind);
        match kind {
            Kind::Toy => {
                fill_trainer(self.trainer.get_or_insert_with(Default::default), &d.toy.train, kind);
                let t = self.toy.get_or_insert_with(Default::default);
                t.n_train.get_or_insert(d.toy.n_train);
                t.half_width.get_or_insert(d.toy.half_width);
                t.grid_resolution.get_or_insert(d.toy.grid_resolution);
                t.hidden_width.get_or_insert(d.toy.hidden_width);
                t.layers.get_or_insert(d.toy.layers);
                t.holdout_fraction.get_or_insert(d.toy.holdout_fraction);
            }
            Kind::Prop1 => {
                fill_trainer(self.trainer.get_or_insert_with(Default::default), &d.prop1.train, kind);
                let p = self.prop1.get_or_insert_with(Default::default);
                p.support_dims.get_or_insert(d.prop1.m_support);
                p.spurious_dims.get_or_insert(d.prop1.m_spurious);
                p.samples.get_or_insert(d.prop1.samples);
            }
            _ => {
                if kind.is_class_task() {
                    fill_trainer(self.trainer.get_or_insert_with(Default::default), &d.class.train, kind);
                    let m = self.model.get_or_insert_with(Default::default);
                    m.backbone.get_or_insert(d.class.backbone);
                    m.hidden.get_or_insert_with(|| d.class.hidden.clone());
                }
                let data = self.data.get_or_insert_with(Default::default);
                let dd = &d.class.data;
                data.classes.get_or_insert(dd.classes);
                data.domains.get_or_insert(dd.domains);
                data.unseen_domain.get_or_insert(dd.unseen_domain);
                data.informative_dims.get_or_insert(dd.m_inf);
                data.spurious_dims.get_or_insert(dd.m_spur);
                data.samples_per_domain.get_or_insert(dd.n_per_domain);
                data.rho_seen.get_or_insert(dd.rho_seen);
                data.separation.get_or_insert(dd.separation);
                if kind != Kind::Mdg {
                    let s = self.split.get_or_insert_with(Default::default);
                    s.known_class_fraction.get_or_insert(d.class.split.known_class_fraction);
                    s.labeled_fraction_of_known
                        .get_or_insert(d.class.split.labeled_fraction_of_known);
                }
                if matches!(kind, Kind::Allshift | Kind::Diag) {
                    let g = self.diagnostics.get_or_insert_with(Default::default);
                    g.extremity_tau.get_or_insert(d.class.extremity_tau);
                    g.support_threshold.get_or_insert(d.class.support_threshold);
                    if kind == Kind::Diag {
                        g.reference_rows.get_or_insert(d.class.reference_rows());
                        if g.checkpoint.is_none() {
                            return Err(ConfigError::at("diagnostics.checkpoint", "diag needs a checkpoint path"));
                        }
                    } else if g.reference_rows.is_some() || g.checkpoint.is_some() {
                        return Err(ConfigError::at(
                            "diagnostics",
                            "reference_rows and checkpoint only apply to kind diag",
                        ));
                    }
                }
            }
        }
        self.validate()?;
        Ok(self)
    }

    /// Checks every resolved value by building the task parameters.
    fn validate(&self) -> Result<(), ConfigError> {
        let core = |key: &str, e: lreg::Error| ConfigError::at(key, e.to_string());
        match self.kind {
            Kind::Toy => self.toy_params()?.validate().map_err(|e| core("toy", e)),
            Kind::Prop1 => self.prop1_params()?.validate().map_err(|e| core("prop1", e)),
            Kind::Mdg | Kind::Gcd | Kind::Allshift => {
                let p = self.class_params()?;
                p.data.validate().map_err(|e| core("data", e))?;
                p.validate().map_err(|e| core("model", e))
            }
            Kind::Diag => self.class_params()?.data.validate().map_err(|e| core("data", e)),
        }
    }

    fn variants(&self) -> Result<Vec<Variant>, ConfigError> {
        self.variants
            .as_deref()
            .unwrap_or_default()
            .iter()
            .map(|v| v.parse().map_err(|e: lreg::Error| ConfigError::at("variants", e.to_string())))
            .collect()
    }

    pub fn toy_params(&self) -> Result<ToyParams, ConfigError> {
        let d = ToyParams::default();
        let t = self.toy.clone().unwrap_or_default();
        Ok(ToyParams {
            n_train: t.n_train.unwrap_or(d.n_train),
            half_width: t.half_width.unwrap_or(d.half_width),
            grid_resolution: t.grid_resolution.unwrap_or(d.grid_resolution),
            hidden_width: t.hidden_width.unwrap_or(d.hidden_width),
            layers: t.layers.unwrap_or(d.layers),
            holdout_fraction: t.holdout_fraction.unwrap_or(d.holdout_fraction),
            train: trainer_config(self.trainer.as_ref().expect("resolved"), &d.train)?,
            alphas: self.alphas.clone().unwrap_or_default(),
            variants: self.variants()?,
        })
    }

    pub fn class_params(&self) -> Result<ClassParams, ConfigError> {
        let d = Defaults::for_kind(self.kind).class;
        let data = self.data.clone().unwrap_or_default();
        let split = self.split.clone().unwrap_or_default();
        let model = self.model.clone().unwrap_or_default();
        let diag = self.diagnostics.clone().unwrap_or_default();
        let train = match &self.trainer {
            Some(t) => trainer_config(t, &d.train)?,
            None => d.train.clone(),
        };
        Ok(ClassParams {
            data: MdgParams {
                classes: data.classes.unwrap_or(d.data.classes),
                domains: data.domains.unwrap_or(d.data.domains),
                unseen_domain: data.unseen_domain.unwrap_or(d.data.unseen_domain),
                m_inf: data.informative_dims.unwrap_or(d.data.m_inf),
                m_spur: data.spurious_dims.unwrap_or(d.data.m_spur),
                n_per_domain: data.samples_per_domain.unwrap_or(d.data.n_per_domain),
                rho_seen: data.rho_seen.unwrap_or(d.data.rho_seen),
                separation: data.separation.unwrap_or(d.data.separation),
            },
            split: SplitSpec {
                known_class_fraction: split.known_class_fraction.unwrap_or(d.split.known_class_fraction),
                labeled_fraction_of_known: split
                    .labeled_fraction_of_known
                    .unwrap_or(d.split.labeled_fraction_of_known),
                unseen_domain_index: data.unseen_domain.unwrap_or(d.data.unseen_domain),
            },
            backbone: model.backbone.unwrap_or(d.backbone),
            hidden: model.hidden.unwrap_or(d.hidden),
            tap: model.tap,
            train,
            alphas: self.alphas.clone().unwrap_or_default(),
            variants: self.variants()?,
            support_threshold: diag.support_threshold.unwrap_or(d.support_threshold),
            extremity_tau: diag.extremity_tau.unwrap_or(d.extremity_tau),
        })
    }

    pub fn prop1_params(&self) -> Result<Prop1Params, ConfigError> {
        let d = Prop1Params::default();
        let p = self.prop1.clone().unwrap_or_default();
        Ok(Prop1Params {
            m_support: p.support_dims.unwrap_or(d.m_support),
            m_spurious: p.spurious_dims.unwrap_or(d.m_spurious),
            samples: p.samples.unwrap_or(d.samples),
            train: trainer_config(self.trainer.as_ref().expect("resolved"), &d.train)?,
            alphas: self.alphas.clone().unwrap_or_default(),
        })
    }

    /// The resolved configuration as TOML; parses back to an equal value.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Stable identifier of everything that affects the results (the output
    /// directory excluded).
    pub fn hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.out = None;
        keyed.save_checkpoints = None;
        hex::encode(Sha256::digest(keyed.echo().as_bytes()))
    }
}
