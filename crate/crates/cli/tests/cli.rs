use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lreg_cli::report::{mean, median, read_runs};
use lreg_cli::{parse_config, run_experiment};

fn lreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lreg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_GCD: &str = "kind = \"gcd\"\nseeds = [0, 1, 2]\ntrainer.steps = 40\ndata.samples_per_domain = 120\n";

#[test]
fn validate_echoes_a_reparsable_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "kind = \"toy\"\nseeds = [0]\n");
    let out = lreg(&["validate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let echo = String::from_utf8(out.stdout).unwrap();
    assert!(echo.contains("hidden_width = 110"));
    let parsed = parse_config(&echo).unwrap();
    assert_eq!(parsed, parse_config("kind = \"toy\"\nseeds = [0]\n").unwrap());
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    for (text, key) in [
        ("kind = \"toy\"\nseeds = [0]\nalhpa = [0.1]\n", "alhpa"),
        ("kind = \"gcd\"\nseeds = [0]\ntrainer.lr = \"fast\"\n", "lr"),
        ("seeds = [0]\n", "kind"),
        ("kind = \"gcd\"\nseeds = [0]\ntoy.layers = 3\n", "toy"),
    ] {
        let cfg = write_config(tmp.path(), "bad.toml", text);
        let path = cfg.to_str().unwrap();
        for args in [
            vec!["validate", "--config", path],
            vec!["run", "--config", path, "--out", tmp.path().to_str().unwrap()],
        ] {
            let out = lreg(&args);
            assert_eq!(out.status.code(), Some(2), "{args:?} {text}");
            let err = String::from_utf8(out.stderr).unwrap();
            assert!(err.contains(key), "{err}");
        }
    }
    let cfg = write_config(tmp.path(), "ok.toml", SMALL_GCD);
    let out = lreg(&["run", "--config", cfg.to_str().unwrap(), "--seeds", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", SMALL_GCD);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = lreg(&["run", "--config", cfg.to_str().unwrap(), "--out", blocker.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn repeated_and_parallel_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config(SMALL_GCD).unwrap();
    let a = run_experiment(&cfg, Some(&tmp.path().join("a")), 1).unwrap();
    let b = run_experiment(&cfg, Some(&tmp.path().join("b")), 1).unwrap();
    let c = run_experiment(&cfg, Some(&tmp.path().join("c")), 3).unwrap();
    for name in ["runs.csv", "summary.csv", "config.toml"] {
        let first = fs::read(a.join(name)).unwrap();
        assert_eq!(first, fs::read(b.join(name)).unwrap(), "{name}");
        assert_eq!(first, fs::read(c.join(name)).unwrap(), "{name}");
    }
    assert!(a.ends_with(Path::new("gcd").join(cfg.hash())));
}

#[test]
fn summary_matches_recomputation_from_raw_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config(SMALL_GCD).unwrap();
    let dir = run_experiment(&cfg, Some(tmp.path()), 1).unwrap();
    let records = read_runs(&dir.join("runs.csv")).unwrap();
    assert_eq!(records.len(), 3 * 2 * 3);

    let mut reader = csv::Reader::from_path(dir.join("summary.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["variant", "alpha", "metric", "n", "mean", "median"]
    );
    let mut rows = 0;
    for row in reader.records() {
        let row = row.unwrap();
        let alpha: f64 = row[1].parse().unwrap();
        let values: Vec<f64> = records
            .iter()
            .filter(|r| r.variant == row[0] && r.alpha == alpha && r.metric == row[2])
            .map(|r| r.value)
            .collect();
        assert_eq!(row[3].parse::<usize>().unwrap(), values.len());
        assert_eq!(row[4].parse::<f64>().unwrap(), mean(&values));
        assert_eq!(row[5].parse::<f64>().unwrap(), median(&values));
        rows += 1;
    }
    assert_eq!(rows, 2 * 3);
}

#[test]
fn runs_csv_schema_is_fixed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config("kind = \"prop1\"\nseeds = [4]\ntrainer.steps = 20\n").unwrap();
    let dir = run_experiment(&cfg, Some(tmp.path()), 1).unwrap();
    let text = fs::read_to_string(dir.join("runs.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("run_id,kind,seed,variant,alpha,metric,value"));
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 7 && l.contains(",prop1,4,")));
}

#[test]
fn toy_run_writes_one_grid_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config(
        "kind = \"toy\"\nseeds = [0]\nvariants = [\"none\", \"lreg\"]\nalphas = [0.01]\n\
         trainer.steps = 10\ntoy.grid_resolution = 11\ntoy.hidden_width = 8\ntoy.n_train = 64\n",
    )
    .unwrap();
    let dir = run_experiment(&cfg, Some(tmp.path()), 1).unwrap();
    for v in ["none", "lreg"] {
        let text = fs::read_to_string(dir.join("grids").join(format!("seed0_{v}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x1,x2,f_star,f_pred,inside"));
        assert_eq!(lines.count(), 121);
    }
}

#[test]
fn checkpoints_feed_the_diag_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config(
        "kind = \"allshift\"\nseeds = [0]\nvariants = [\"lreg\"]\nsave_checkpoints = true\n\
         trainer.steps = 30\ndata.samples_per_domain = 100\n",
    )
    .unwrap();
    let dir = run_experiment(&cfg, Some(tmp.path()), 1).unwrap();
    let ckpt = dir.join("checkpoints").join("seed0_lreg_a0.3_d1.json");
    assert!(ckpt.exists());
    let supports: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("supports.json")).unwrap()).unwrap();
    assert_eq!(supports.as_array().unwrap().len(), 4);

    let diag = parse_config(&format!(
        "kind = \"diag\"\nseeds = [0]\ndata.samples_per_domain = 100\ndata.unseen_domain = 1\n\
         diagnostics.checkpoint = {:?}\n",
        ckpt.to_str().unwrap()
    ))
    .unwrap();
    let ddir = run_experiment(&diag, Some(tmp.path()), 1).unwrap();
    let diag_rows = read_runs(&ddir.join("runs.csv")).unwrap();
    let train_rows = read_runs(&dir.join("runs.csv")).unwrap();
    // the diag kind re-derives exactly what the all-shift run measured on that domain
    for r in &diag_rows {
        let same = train_rows
            .iter()
            .find(|t| t.metric == format!("{}_domain_1", r.metric))
            .unwrap();
        assert_eq!(same.value, r.value, "{}", r.metric);
    }
    assert_eq!(diag_rows.len(), 8);
}

#[test]
fn report_prints_the_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config(SMALL_GCD).unwrap();
    let dir = run_experiment(&cfg, Some(tmp.path()), 1).unwrap();
    let out = lreg(&["report", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("acc_unknown"));
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}

/// Golden toy run: seed 0 with default settings, L-Reg variant only (each
/// variant trains independently, so this matches the full default run).
#[test]
fn golden_toy_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config("kind = \"toy\"\nseeds = [0]\nvariants = [\"lreg\"]\n").unwrap();
    let dir = run_experiment(&cfg, Some(tmp.path()), 1).unwrap();
    let rows = read_runs(&dir.join("runs.csv")).unwrap();
    let fixture = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy_seed0_lreg.csv"))
        .unwrap();
    let mut checked = 0;
    for line in fixture.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (alpha, metric, value): (f64, &str, f64) = (f[0].parse().unwrap(), f[1], f[2].parse().unwrap());
        let got = rows.iter().find(|r| r.alpha == alpha && r.metric == metric).unwrap();
        assert!(
            (got.value - value).abs() <= 1e-6 * value.abs().max(1e-3),
            "{metric} at {alpha}: {} vs fixture {value}",
            got.value
        );
        checked += 1;
    }
    assert_eq!(checked, 11);
}
