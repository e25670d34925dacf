//! Runs the binary through the pipeline on a small synthetic city.

use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crashformer"))
        .current_dir(dir)
        .env_remove("CRASHFORMER_CACHE")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

const SMALL: [&str; 8] = [
    "--set",
    "synth.n_regions=6",
    "--set",
    "synth.n_days=10",
    "--set",
    "train.max_epochs=2",
    "--set",
    "model.img_size=16",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(SMALL);
    v
}

#[test]
fn synth_ingest_build_dataset_smoke() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(run(p, &with_small(&["synth", "--seed", "3"])).status.code(), Some(0));
    assert!(p.join("data/accidents.csv").exists());
    assert!(p.join("data/config.json").exists());
    let o = run(p, &with_small(&["ingest", "--offline"]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(p, &with_small(&["build-dataset", "--offline"]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ds = crashformer::dataset::read_dataset(&p.join("runs/dataset")).unwrap();
    assert!(!ds.is_empty());
    let echo = std::fs::read_to_string(p.join("runs/dataset/config.json")).unwrap();
    assert!(echo.contains(crashformer::cli::CODE_VERSION));

    let o = run(p, &with_small(&["train", "--offline"]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(p, &with_small(&["evaluate", "--offline"]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read(p.join("runs/eval/metrics.json")).unwrap();
    let preds = std::fs::read(p.join("runs/eval/preds.f32")).unwrap();

    // same config and seed: identical result files
    let o = run(p, &with_small(&["train", "--offline"]));
    assert_eq!(o.status.code(), Some(0));
    let o = run(p, &with_small(&["evaluate", "--offline"]));
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(p.join("runs/eval/metrics.json")).unwrap(), metrics);
    assert_eq!(std::fs::read(p.join("runs/eval/preds.f32")).unwrap(), preds);
}

#[test]
fn offline_cold_cache_exits_two() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(run(p, &with_small(&["synth"])).status.code(), Some(0));
    std::fs::remove_dir_all(p.join("data/tiles")).unwrap();
    let o = run(p, &with_small(&["ingest", "--offline"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing tile"));
}

#[test]
fn cache_env_var_moves_tile_cache() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(run(p, &with_small(&["synth"])).status.code(), Some(0));
    std::fs::rename(p.join("data/tiles"), p.join("elsewhere")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_crashformer"))
        .current_dir(p)
        .env("CRASHFORMER_CACHE", p.join("elsewhere"))
        .args(with_small(&["ingest", "--offline"]))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn fixture_report_and_usage() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(run(p, &["report", "--fixtures"]).status.code(), Some(0));
    let csv = std::fs::read_to_string(p.join("runs/report/seq_sweep/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(p.join("runs/report/ablation/figure.svg").exists());
    assert_eq!(run(p, &["report"]).status.code(), Some(1));
    assert_eq!(run(p, &["nonsense"]).status.code(), Some(1));
    let o = run(p, &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let help = String::from_utf8_lossy(&o.stdout).to_string();
    for c in ["synth", "ingest", "featurize", "build-dataset", "train", "evaluate", "experiment", "report"] {
        assert!(help.contains(c), "{c}");
    }
}

#[test]
fn seq_sweep_experiment_has_four_arms() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let mut small = with_small(&["synth"]);
    small.extend(["--set", "synth.n_days=12"]);
    assert_eq!(run(p, &small).status.code(), Some(0));
    let mut args = with_small(&["experiment", "--kind", "seq_sweep", "--offline"]);
    args.extend(["--set", "synth.n_days=12", "--set", "model.d_model=8", "--set", "model.img_channels=[4,8]"]);
    let o = run(p, &args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = p.join("runs/experiment-seq_sweep");
    let csv = std::fs::read_to_string(dir.join("report.csv")).unwrap();
    let arms: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(arms, ["len=4", "len=8", "len=12", "len=16"]);
    for a in arms {
        assert!(dir.join("arms").join(a).join("preds.f32").exists());
    }
    let r = crashformer::eval::read_report(&dir).unwrap();
    assert!(r.shared_provenance());
}
