//! Runs a resolved configuration seed by seed and writes the artifacts under
//! `<out>/<kind>/<config hash>/`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use lreg::experiments::{
    allshift_test_rows, diagnose, run_allshift, run_gcd, run_mdg, run_prop1, run_toy, GridRow, MetricRecord,
    SupportDump,
};
use lreg::network::{Checkpoint, MlpModel};
use serde_json::json;

use crate::config::{ExperimentConfig, Kind};
use crate::report::{summarize, write_summary};

pub const RUNS_HEADER: [&str; 7] = ["run_id", "kind", "seed", "variant", "alpha", "metric", "value"];
pub const GRID_HEADER: [&str; 5] = ["x1", "x2", "f_star", "f_pred", "inside"];

#[derive(Debug)]
pub enum RunError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(m) => write!(f, "config error: {m}"),
            RunError::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

impl From<lreg::Error> for RunError {
    fn from(e: lreg::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

/// Everything one seed produced.
#[derive(Debug, Default)]
struct SeedResult {
    records: Vec<MetricRecord>,
    grids: Vec<(String, Vec<GridRow>)>,
    supports: Vec<SupportDump>,
    checkpoints: Vec<(String, MlpModel)>,
    seconds: f64,
}

fn run_seed(cfg: &ExperimentConfig, seed: u64, checkpoint: Option<&MlpModel>) -> Result<SeedResult, RunError> {
    let start = Instant::now();
    let config_err = |e: crate::config::ConfigError| RunError::Config(e.to_string());
    let mut out = SeedResult::default();
    match cfg.kind {
        Kind::Toy => {
            let o = run_toy(&cfg.toy_params().map_err(config_err)?, seed)?;
            out.records = o.records;
            out.grids = o.grids;
        }
        Kind::Prop1 => out.records = run_prop1(&cfg.prop1_params().map_err(config_err)?, seed)?,
        Kind::Mdg | Kind::Gcd | Kind::Allshift => {
            let p = cfg.class_params().map_err(config_err)?;
            let o = match cfg.kind {
                Kind::Mdg => run_mdg(&p, seed)?,
                Kind::Gcd => run_gcd(&p, seed)?,
                _ => run_allshift(&p, seed)?,
            };
            out.records = o.records;
            out.supports = o.supports;
            if cfg.save_checkpoints == Some(true) {
                out.checkpoints = o.models.into_iter().map(|c| (c.name, c.model)).collect();
            }
        }
        Kind::Diag => {
            let p = cfg.class_params().map_err(config_err)?;
            let diag = cfg.diagnostics.as_ref().expect("resolved");
            let model = checkpoint.expect("diag loads its checkpoint");
            let domain = p.data.unseen_domain;
            let test = allshift_test_rows(&p.data, &p.split, domain, seed)?;
            if test.x.cols() != model.spec.layer_widths[0] {
                return Err(RunError::Config(format!(
                    "checkpoint expects {} inputs, data has {}",
                    model.spec.layer_widths[0],
                    test.x.cols()
                )));
            }
            let (values, sup) = diagnose(
                model,
                &test,
                diag.reference_rows.expect("resolved"),
                p.extremity_tau,
                p.support_threshold,
            )?;
            for (m, v) in values {
                out.records.push(MetricRecord {
                    seed,
                    variant: "checkpoint".into(),
                    alpha: 0.0,
                    metric: m.into(),
                    value: v,
                });
            }
            out.supports.push(SupportDump {
                seed,
                variant: "checkpoint".into(),
                alpha: 0.0,
                domain,
                supports: sup,
            });
        }
    }
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Where a run writes, given the resolved config and an optional override.
pub fn run_dir(cfg: &ExperimentConfig, out_override: Option<&Path>) -> PathBuf {
    let base = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    base.join(cfg.kind.name()).join(cfg.hash())
}

/// Writes seed results in seed order as they complete.
struct Sink {
    dir: PathBuf,
    run_prefix: String,
    kind: Kind,
    runs: csv::Writer<fs::File>,
    timing: csv::Writer<fs::File>,
    pending: BTreeMap<usize, SeedResult>,
    next: usize,
    seeds: Vec<u64>,
    steps: u64,
    records: Vec<MetricRecord>,
    supports: Vec<SupportDump>,
}

impl Sink {
    fn new(dir: &Path, cfg: &ExperimentConfig) -> Result<Self, RunError> {
        fs::create_dir_all(dir)?;
        let mut runs = csv::Writer::from_path(dir.join("runs.csv"))?;
        runs.write_record(RUNS_HEADER)?;
        runs.flush()?;
        let mut timing = csv::Writer::from_path(dir.join("timing.csv"))?;
        timing.write_record(["run_id", "seed", "seconds"])?;
        Ok(Self {
            dir: dir.to_path_buf(),
            run_prefix: cfg.hash()[..12].to_string(),
            kind: cfg.kind,
            runs,
            timing,
            pending: BTreeMap::new(),
            next: 0,
            seeds: cfg.seeds.clone(),
            steps: cfg.trainer.as_ref().and_then(|t| t.steps).unwrap_or(0) as u64,
            records: Vec::new(),
            supports: Vec::new(),
        })
    }

    fn accept(&mut self, index: usize, result: SeedResult) -> Result<(), RunError> {
        self.pending.insert(index, result);
        while let Some(r) = self.pending.remove(&self.next) {
            let seed = self.seeds[self.next];
            let run_id = format!("{}-{seed}", self.run_prefix);
            for rec in &r.records {
                self.runs.write_record([
                    run_id.as_str(),
                    self.kind.name(),
                    &seed.to_string(),
                    &rec.variant,
                    &rec.alpha.to_string(),
                    &rec.metric,
                    &rec.value.to_string(),
                ])?;
            }
            self.runs.flush()?;
            self.timing
                .write_record([run_id.as_str(), &seed.to_string(), &format!("{:.3}", r.seconds)])?;
            self.timing.flush()?;
            if !r.grids.is_empty() {
                let grids = self.dir.join("grids");
                fs::create_dir_all(&grids)?;
                for (variant, rows) in &r.grids {
                    write_grid(&grids.join(format!("seed{seed}_{}.csv", file_safe(variant))), rows)?;
                }
            }
            if !r.checkpoints.is_empty() {
                let ckpt = self.dir.join("checkpoints");
                fs::create_dir_all(&ckpt)?;
                for (name, model) in &r.checkpoints {
                    let text = Checkpoint::from_model(model, seed, self.steps).to_json();
                    fs::write(ckpt.join(format!("{name}.json")), text + "\n")?;
                }
            }
            self.records.extend(r.records);
            self.supports.extend(r.supports);
            self.next += 1;
        }
        Ok(())
    }

    /// Summary and supports over everything flushed so far.
    fn finish(&mut self) -> Result<(), RunError> {
        let rows: Vec<(u64, MetricRecord)> = self.records.iter().map(|r| (r.seed, r.clone())).collect();
        write_summary(&self.dir.join("summary.csv"), &summarize(rows.iter().map(|(_, r)| r)))?;
        if !self.supports.is_empty() {
            let dumps: Vec<_> = self
                .supports
                .iter()
                .map(|d| {
                    let classes: BTreeMap<String, &Vec<usize>> = d
                        .supports
                        .supports
                        .iter()
                        .enumerate()
                        .map(|(k, dims)| (k.to_string(), dims))
                        .collect();
                    json!({
                        "seed": d.seed,
                        "variant": d.variant,
                        "alpha": d.alpha,
                        "domain": d.domain,
                        "mean_jaccard": d.supports.mean_jaccard,
                        "supports": classes,
                    })
                })
                .collect();
            let text = serde_json::to_string_pretty(&dumps).map_err(|e| RunError::Runtime(e.to_string()))?;
            fs::write(self.dir.join("supports.json"), text + "\n")?;
        }
        Ok(())
    }
}

fn file_safe(s: &str) -> String {
    s.replace(['@', '+'], "-")
}

fn write_grid(path: &Path, rows: &[GridRow]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(GRID_HEADER)?;
    for r in rows {
        w.write_record([
            r.x1.to_string(),
            r.x2.to_string(),
            r.f_star.to_string(),
            r.f_pred.to_string(),
            u8::from(r.inside).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every seed of `cfg` on up to `jobs` threads and returns the output
/// directory. Rows reach `runs.csv` in seed order whatever the scheduling;
/// on failure everything finished before the first error is kept.
pub fn run_experiment(cfg: &ExperimentConfig, out_override: Option<&Path>, jobs: usize) -> Result<PathBuf, RunError> {
    let dir = run_dir(cfg, out_override);
    let checkpoint = match cfg.kind {
        Kind::Diag => {
            let path = cfg
                .diagnostics
                .as_ref()
                .and_then(|d| d.checkpoint.as_ref())
                .expect("resolved");
            let text = fs::read_to_string(path)
                .map_err(|e| RunError::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
            let model = Checkpoint::from_json(&text)
                .and_then(|c| c.to_model())
                .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
            Some(model)
        }
        _ => None,
    };
    let sink = Mutex::new(Sink::new(&dir, cfg)?);
    fs::write(dir.join("config.toml"), cfg.echo())?;
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let first_error: Mutex<Option<RunError>> = Mutex::new(None);
    let work = || loop {
        if failed.load(Ordering::SeqCst) {
            return;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&seed) = cfg.seeds.get(i) else { return };
        let outcome = run_seed(cfg, seed, checkpoint.as_ref())
            .and_then(|r| sink.lock().expect("sink lock").accept(i, r));
        if let Err(e) = outcome {
            failed.store(true, Ordering::SeqCst);
            first_error.lock().expect("error lock").get_or_insert(e);
            return;
        }
    };
    std::thread::scope(|s| {
        for _ in 1..jobs.max(1) {
            s.spawn(work);
        }
        work();
    });
    let mut sink = sink.into_inner().expect("sink lock");
    sink.finish()?;
    let mut stderr = std::io::stderr();
    let _ = writeln!(stderr, "{} seed(s) written to {}", sink.next, dir.display());
    match first_error.into_inner().expect("error lock") {
        Some(e) => Err(e),
        None => Ok(dir),
    }
}
