//! Deterministic synthetic datasets.
//!
//! - the 2-D extrapolation toy (`sin 2πx₁ · sin 2πx₂`, trained inside a box)
//! - multi-domain classification sets whose spurious block tracks the label
//!   only in the seen domains, plus the GCD and all-shift splits over them
//! - the linear support/spurious instance used by the data-shift check

use std::io::Write;

use crate::error::{Error, Result};
use crate::network::Batch;
use crate::numerics::{Matrix, Rng};

pub fn toy_oracle(x1: f64, x2: f64) -> f64 {
    (std::f64::consts::TAU * x1).sin() * (std::f64::consts::TAU * x2).sin()
}

/// Axis-aligned rectangle `[x1_lo, x1_hi] × [x2_lo, x2_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x1: (f64, f64),
    pub x2: (f64, f64),
}

impl Region {
    pub fn square(half_width: f64) -> Self {
        Self {
            x1: (-half_width, half_width),
            x2: (-half_width, half_width),
        }
    }

    pub fn contains(&self, x1: f64, x2: f64) -> bool {
        (self.x1.0..=self.x1.1).contains(&x1) && (self.x2.0..=self.x2.1).contains(&x2)
    }

    fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo < hi && lo >= -1.0 && hi <= 1.0;
        if ok(self.x1) && ok(self.x2) {
            Ok(())
        } else {
            Err(Error::Config(format!("training box {self:?} must be a non-degenerate subset of [-1,1]^2")))
        }
    }
}

impl Default for Region {
    fn default() -> Self {
        Region::square(0.5)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySet {
    pub inputs: Matrix,
    pub targets: Vec<f64>,
    pub region_mask: Vec<bool>,
}

impl ToySet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn to_batch(&self) -> Batch {
        let n = self.len();
        Batch {
            x: self.inputs.clone(),
            y: vec![-1; n],
            domain: vec![0; n],
            known_mask: vec![true; n],
            targets: Some(Matrix::new(n, 1, self.targets.clone()).expect("finite targets")),
        }
    }

    pub fn select(&self, idx: &[usize]) -> ToySet {
        ToySet {
            inputs: self.inputs.select_rows(idx),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            region_mask: idx.iter().map(|&i| self.region_mask[i]).collect(),
        }
    }
}

/// Uniform training points inside `region`, and a regular
/// `grid_resolution²` evaluation grid over `[-1, 1]²` (x1-major).
pub fn toy_dataset(n_train: usize, region: Region, grid_resolution: usize, seed: u64) -> Result<(ToySet, ToySet)> {
    region.validate()?;
    if n_train == 0 {
        return Err(Error::Config("n_train must be >= 1".into()));
    }
    if grid_resolution < 2 {
        return Err(Error::Config("grid resolution must be >= 2".into()));
    }
    let mut rng = Rng::new(seed);
    let mut pts = Vec::with_capacity(2 * n_train);
    let mut targets = Vec::with_capacity(n_train);
    for _ in 0..n_train {
        let a = rng.uniform_range(region.x1.0, region.x1.1);
        let b = rng.uniform_range(region.x2.0, region.x2.1);
        pts.extend([a, b]);
        targets.push(toy_oracle(a, b));
    }
    let train = ToySet {
        inputs: Matrix::new(n_train, 2, pts)?,
        targets,
        region_mask: vec![true; n_train],
    };

    let step = 2.0 / (grid_resolution - 1) as f64;
    let coord = |i: usize| if i + 1 == grid_resolution { 1.0 } else { -1.0 + step * i as f64 };
    let n = grid_resolution * grid_resolution;
    let mut pts = Vec::with_capacity(2 * n);
    let mut targets = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for i in 0..grid_resolution {
        for j in 0..grid_resolution {
            let (a, b) = (coord(i), coord(j));
            pts.extend([a, b]);
            targets.push(toy_oracle(a, b));
            mask.push(region.contains(a, b));
        }
    }
    let grid = ToySet {
        inputs: Matrix::new(n, 2, pts)?,
        targets,
        region_mask: mask,
    };
    Ok((train, grid))
}

/// Labeled multi-domain classification data.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClassSet {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub domain: Vec<usize>,
    pub known_mask: Vec<bool>,
    /// Whether the label is visible to the learner.
    pub labeled: Vec<bool>,
    /// Row index in the originally generated set.
    pub row_id: Vec<usize>,
    pub classes: usize,
}

impl SynthClassSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> SynthClassSet {
        SynthClassSet {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            domain: idx.iter().map(|&i| self.domain[i]).collect(),
            known_mask: idx.iter().map(|&i| self.known_mask[i]).collect(),
            labeled: idx.iter().map(|&i| self.labeled[i]).collect(),
            row_id: idx.iter().map(|&i| self.row_id[i]).collect(),
            classes: self.classes,
        }
    }

    /// Training batch: hidden labels become `-1`.
    pub fn to_batch(&self) -> Batch {
        Batch {
            x: self.x.clone(),
            y: self
                .y
                .iter()
                .zip(&self.labeled)
                .map(|(&y, &l)| if l { y as i64 } else { -1 })
                .collect(),
            domain: self.domain.clone(),
            known_mask: self.known_mask.clone(),
            targets: None,
        }
    }

    /// CSV with header `x0..x{d-1},y,domain,known,labeled`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = self.x.cols();
        let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        header.extend(["y", "domain", "known", "labeled"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for r in 0..self.len() {
            let mut fields: Vec<String> = self.x.row(r).iter().map(|v| v.to_string()).collect();
            fields.push(self.y[r].to_string());
            fields.push(self.domain[r].to_string());
            fields.push(u8::from(self.known_mask[r]).to_string());
            fields.push(u8::from(self.labeled[r]).to_string());
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdgParams {
    pub classes: usize,
    pub domains: usize,
    pub unseen_domain: usize,
    pub m_inf: usize,
    pub m_spur: usize,
    pub n_per_domain: usize,
    pub rho_seen: f64,
    /// Pairwise distance between informative class means (unit noise).
    pub separation: f64,
}

impl Default for MdgParams {
    fn default() -> Self {
        Self {
            classes: 4,
            domains: 4,
            unseen_domain: 3,
            m_inf: 4,
            m_spur: 4,
            n_per_domain: 400,
            rho_seen: 0.95,
            separation: 6.0,
        }
    }
}

impl MdgParams {
    /// The same task with domain `d` held out.
    pub fn with_unseen(&self, d: usize) -> Self {
        Self {
            unseen_domain: d,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("mdg needs K >= 2 classes".into()));
        }
        if self.domains < 2 {
            return Err(Error::Config("mdg needs at least 2 domains".into()));
        }
        if self.unseen_domain >= self.domains {
            return Err(Error::Config(format!(
                "unseen domain {} out of range for {} domains",
                self.unseen_domain, self.domains
            )));
        }
        if self.m_inf == 0 {
            return Err(Error::Config("m_inf must be >= 1".into()));
        }
        if self.n_per_domain < self.classes {
            return Err(Error::Config("n_per_domain must cover every class".into()));
        }
        if !(0.0..=1.0).contains(&self.rho_seen) {
            return Err(Error::Config(format!("rho_seen {} outside [0, 1]", self.rho_seen)));
        }
        if !(self.separation > 0.0) {
            return Err(Error::Config("separation must be positive".into()));
        }
        Ok(())
    }
}

/// Informative class means with every pairwise distance at least `separation`.
///
/// With `m_inf >= K` they sit on a scaled simplex (exact pairwise distance);
/// otherwise they are spread along random directions and rescaled.
pub fn class_means(classes: usize, m_inf: usize, separation: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    if m_inf >= classes {
        let s = separation / std::f64::consts::SQRT_2;
        return (0..classes)
            .map(|c| (0..m_inf).map(|i| if i == c { s } else { 0.0 }).collect())
            .collect();
    }
    let mut means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..m_inf).map(|_| rng.normal()).collect())
        .collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..classes {
        for b in a + 1..classes {
            let d = means[a]
                .iter()
                .zip(&means[b])
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    let scale = separation / min_dist.max(1e-12);
    means.iter_mut().flatten().for_each(|v| *v *= scale);
    means
}

/// Multi-domain set: informative dims `N(μ_y, I)` shared by all domains;
/// spurious dims `ρ s_y + √(1−ρ²) ε` in seen domains and pure noise in the
/// unseen one.
pub fn mdg_dataset(params: &MdgParams, seed: u64) -> Result<SynthClassSet> {
    params.validate()?;
    let mut rng = Rng::new(seed);
    let means = class_means(params.classes, params.m_inf, params.separation, &mut rng);
    let patterns: Vec<Vec<f64>> = (0..params.classes)
        .map(|_| {
            (0..params.m_spur)
                .map(|_| if rng.uniform() < 0.5 { -1.0 } else { 1.0 })
                .collect()
        })
        .collect();
    let noise_sd = (1.0 - params.rho_seen * params.rho_seen).sqrt();
    let d = params.m_inf + params.m_spur;
    let n = params.domains * params.n_per_domain;
    let mut data = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    let mut domain = Vec::with_capacity(n);
    for dom in 0..params.domains {
        let mut labels: Vec<usize> = (0..params.n_per_domain).map(|i| i % params.classes).collect();
        rng.shuffle(&mut labels);
        for &c in &labels {
            for mu in &means[c] {
                data.push(mu + rng.normal());
            }
            for s in &patterns[c] {
                let v = if dom == params.unseen_domain {
                    rng.normal()
                } else {
                    params.rho_seen * s + noise_sd * rng.normal()
                };
                data.push(v);
            }
            y.push(c);
            domain.push(dom);
        }
    }
    Ok(SynthClassSet {
        x: Matrix::new(n, d, data)?,
        y,
        domain,
        known_mask: vec![true; n],
        labeled: vec![true; n],
        row_id: (0..n).collect(),
        classes: params.classes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub known_class_fraction: f64,
    pub labeled_fraction_of_known: f64,
    pub unseen_domain_index: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            known_class_fraction: 0.5,
            labeled_fraction_of_known: 0.5,
            unseen_domain_index: 0,
        }
    }
}

impl SplitSpec {
    /// Number of known classes; the lowest-index classes are the known ones.
    pub fn known_classes(&self, classes: usize) -> usize {
        (self.known_class_fraction * classes as f64).round() as usize
    }

    fn validate(&self) -> Result<()> {
        let ok = |f: f64| f > 0.0 && f <= 1.0;
        if !ok(self.known_class_fraction) || !ok(self.labeled_fraction_of_known) {
            return Err(Error::Config(format!("split fractions must lie in (0, 1]: {self:?}")));
        }
        Ok(())
    }
}

/// One split spec per held-out domain.
pub fn leave_one_out(base: &SplitSpec, domains: usize) -> Vec<SplitSpec> {
    (0..domains)
        .map(|d| SplitSpec {
            unseen_domain_index: d,
            ..*base
        })
        .collect()
}

/// Labeled / unlabeled partition for category discovery.
///
/// Within every known class a `labeled_fraction_of_known` share of the rows
/// (rounded down, chosen at random) is labeled; the remaining known-class rows
/// and all unknown-class rows form the unlabeled side.
pub fn gcd_split(set: &SynthClassSet, spec: &SplitSpec, seed: u64) -> Result<(SynthClassSet, SynthClassSet)> {
    spec.validate()?;
    let n_known = spec.known_classes(set.classes);
    if n_known == 0 {
        return Err(Error::Config("split leaves no known class".into()));
    }
    let mut rng = Rng::new(seed);
    let mut labeled_rows = vec![false; set.len()];
    for c in 0..n_known {
        let mut rows: Vec<usize> = (0..set.len()).filter(|&r| set.y[r] == c).collect();
        rng.shuffle(&mut rows);
        let take = (rows.len() as f64 * spec.labeled_fraction_of_known).floor() as usize;
        for &r in &rows[..take] {
            labeled_rows[r] = true;
        }
    }
    let lab: Vec<usize> = (0..set.len()).filter(|&r| labeled_rows[r]).collect();
    let unl: Vec<usize> = (0..set.len()).filter(|&r| !labeled_rows[r]).collect();
    if lab.is_empty() || unl.is_empty() {
        return Err(Error::Config(format!(
            "split has an empty side ({} labeled, {} unlabeled)",
            lab.len(),
            unl.len()
        )));
    }
    let mut marked = set.clone();
    for r in 0..marked.len() {
        marked.known_mask[r] = marked.y[r] < n_known;
        marked.labeled[r] = labeled_rows[r];
    }
    Ok((marked.select(&lab), marked.select(&unl)))
}

/// Seen domains go through [`gcd_split`]; the held-out domain is kept
/// entirely for testing.
pub fn allshift_split(
    set: &SynthClassSet,
    spec: &SplitSpec,
    seed: u64,
) -> Result<(SynthClassSet, SynthClassSet, SynthClassSet)> {
    let domains = set.domain.iter().max().map_or(0, |d| d + 1);
    if spec.unseen_domain_index >= domains {
        return Err(Error::Config(format!(
            "unseen domain {} out of range for {domains} domains",
            spec.unseen_domain_index
        )));
    }
    let seen: Vec<usize> = (0..set.len()).filter(|&r| set.domain[r] != spec.unseen_domain_index).collect();
    let test: Vec<usize> = (0..set.len()).filter(|&r| set.domain[r] == spec.unseen_domain_index).collect();
    if seen.is_empty() || test.is_empty() {
        return Err(Error::Config("all-shift split needs both seen and unseen rows".into()));
    }
    let (lab, unl) = gcd_split(&set.select(&seen), spec, seed)?;
    let n_known = spec.known_classes(set.classes);
    let mut test = set.select(&test);
    for r in 0..test.len() {
        test.known_mask[r] = test.y[r] < n_known;
        test.labeled[r] = false;
    }
    Ok((lab, unl, test))
}

/// Linear instance with a known support set.
#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Instance {
    pub z_seen: Matrix,
    pub y_seen: Vec<usize>,
    pub z_unseen: Matrix,
    pub y_unseen: Vec<usize>,
    /// Columns that determine the label.
    pub support: Vec<usize>,
    /// Label rule: `y = 1[w·z_support > 0]`.
    pub rule: Vec<f64>,
    /// Per spurious column, the sign tying it to the label in the seen set.
    pub spurious_signs: Vec<f64>,
}

/// Magnitude of the binary spurious attribute.
pub const PROP1_SPURIOUS_LEVEL: f64 = 0.3;
/// Noise added to each spurious column.
pub const PROP1_SPURIOUS_NOISE: f64 = 0.05;

/// [`prop1_instance_with`] at the default spurious level and noise.
pub fn prop1_instance(m_support: usize, m_spurious: usize, b: usize, seed: u64) -> Result<Prop1Instance> {
    prop1_instance_with(m_support, m_spurious, b, PROP1_SPURIOUS_LEVEL, PROP1_SPURIOUS_NOISE, seed)
}

/// Support dims `N(0, I)`, label a fixed threshold of them. Each spurious
/// column is a binary attribute `±level` plus noise: in the seen set it copies
/// the sign of the support score (times a fixed per-column sign), in the
/// unseen set the sign is an independent coin flip, so the marginal is
/// unchanged but the link to the label is gone.
pub fn prop1_instance_with(
    m_support: usize,
    m_spurious: usize,
    b: usize,
    level: f64,
    noise: f64,
    seed: u64,
) -> Result<Prop1Instance> {
    if m_support == 0 || m_spurious == 0 || b == 0 {
        return Err(Error::Config("prop1 counts must be >= 1".into()));
    }
    if !(level > 0.0 && level.is_finite()) || !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("prop1 level {level} / noise {noise} invalid")));
    }
    let mut rng = Rng::new(seed);
    let mut rule: Vec<f64> = (0..m_support).map(|_| rng.normal()).collect();
    let norm = rule.iter().map(|v| v * v).sum::<f64>().sqrt();
    rule.iter_mut().for_each(|v| *v /= norm);
    let signs: Vec<f64> = (0..m_spurious).map(|_| if rng.below(2) == 0 { -1.0 } else { 1.0 }).collect();
    let d = m_support + m_spurious;
    let draw = |seen: bool, rng: &mut Rng| -> Result<(Matrix, Vec<usize>)> {
        let mut data = Vec::with_capacity(b * d);
        let mut y = Vec::with_capacity(b);
        for _ in 0..b {
            let sup: Vec<f64> = (0..m_support).map(|_| rng.normal()).collect();
            let score: f64 = sup.iter().zip(&rule).map(|(a, w)| a * w).sum();
            y.push(usize::from(score > 0.0));
            data.extend_from_slice(&sup);
            let attr = if seen {
                score.signum()
            } else if rng.below(2) == 0 {
                -1.0
            } else {
                1.0
            };
            for s in &signs {
                data.push(level * s * attr + noise * rng.normal());
            }
        }
        Ok((Matrix::new(b, d, data)?, y))
    };
    let (z_seen, y_seen) = draw(true, &mut rng)?;
    let (z_unseen, y_unseen) = draw(false, &mut rng)?;
    Ok(Prop1Instance {
        z_seen,
        y_seen,
        z_unseen,
        y_unseen,
        support: (0..m_support).collect(),
        rule,
        spurious_signs: signs,
    })
}
