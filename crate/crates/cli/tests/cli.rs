use std::fs;
use std::path::Path;

use mopinn_cli::aggregate::{Spread, SUMMARY_FILE};
use mopinn_cli::commands::cmd_report;
use mopinn_cli::config::ExperimentConfig;
use mopinn_cli::main_with_args;
use mopinn_cli::output::{Manifest, MANIFEST};
use mopinn_core::driver::RunReport;

const TINY: &[&str] = &[
    "--architecture",
    "2,6,6,1",
    "--residual-points",
    "48",
    "--boundary-points",
    "8",
    "--initial-points",
    "8",
    "--residual-batch",
    "16",
    "--eval-residuals",
    "24",
    "--adam-epochs",
    "15",
    "--population",
    "4",
    "--generations",
    "1",
    "--epochs-per-generation",
    "5",
    "--generations-per-outer",
    "1",
    "--outer-max",
    "1",
    "--min-ensemble",
    "4",
];

fn cli(args: &[&str]) -> i32 {
    let mut all = vec!["mopinn"];
    all.extend_from_slice(args);
    main_with_args(all)
}

fn tiny_run(out: &Path, variant: &str, seed: &str) -> i32 {
    let out = out.to_str().unwrap();
    let mut args = vec!["run", "--variant", variant, "--eta", "0.2", "--seed", seed, "--out", out];
    args.extend_from_slice(TINY);
    cli(&args)
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST)).unwrap()).unwrap()
}

#[test]
fn repeated_runs_produce_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(tiny_run(&a, "mopinnenkf", "4"), 0);
    let first = manifest(&a);
    assert_eq!(tiny_run(&a, "mopinnenkf", "4"), 0);
    assert_eq!(manifest(&a), first);
    assert_eq!(tiny_run(&b, "mopinnenkf", "4"), 0);
    // The stored config records its own output directory.
    let strip = |m: Manifest| m.files.into_iter().filter(|f| f.path != "config.toml").collect::<Vec<_>>();
    assert_eq!(strip(manifest(&b)), strip(first.clone()));
    for name in ["report.json", "metrics.csv", "losses.csv", "solution.csv", "fronts.csv", "analysis.csv"] {
        assert!(first.files.iter().any(|f| f.path == name), "{name} missing");
    }
}

#[test]
fn generate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |d: &str| {
        let out = tmp.path().join(d);
        assert_eq!(cli(&["generate", "--problem", "tfmdwe", "--seed", "3", "--out", out.to_str().unwrap()]), 0);
        manifest(&out).files.into_iter().filter(|f| f.path != "config.toml").collect::<Vec<_>>()
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    let names: Vec<_> = a.iter().map(|f| f.path.as_str()).collect();
    assert_eq!(names, ["observations.csv", "collocation.csv"]);
}

#[test]
fn report_aggregates_by_hand() {
    let tmp = tempfile::tempdir().unwrap();
    let seed_dir = tmp.path().join("seed");
    assert_eq!(tiny_run(&seed_dir, "adam", "0"), 0);
    let base: RunReport = serde_json::from_str(&fs::read_to_string(seed_dir.join("report.json")).unwrap()).unwrap();
    let sweep = tmp.path().join("sweep");
    for (seed, mse, mae) in [(1u64, 1.0, 0.5), (2, 3.0, 0.25)] {
        let mut r = base.clone();
        r.seed = seed;
        r.metrics.mse = mse;
        r.metrics.mae = mae;
        let d = sweep.join(format!("s{seed}"));
        fs::create_dir_all(&d).unwrap();
        fs::write(d.join("report.json"), serde_json::to_string(&r).unwrap()).unwrap();
    }
    fs::create_dir_all(sweep.join("broken")).unwrap();
    fs::write(sweep.join("broken/report.json"), "{ not json").unwrap();

    let (table, skipped) = cmd_report(&sweep).unwrap();
    assert_eq!(skipped, 1);
    assert!(table.contains("2 reports aggregated"));
    let text = fs::read_to_string(sweep.join(SUMMARY_FILE)).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let header = rows.headers().unwrap().clone();
    let records: Vec<_> = rows.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 1);
    let get = |k: &str| records[0][header.iter().position(|h| h == k).unwrap()].to_string();
    assert_eq!(get("runs"), "2");
    assert_eq!(get("seeds"), "1 2");
    assert!((get("mse_mean").parse::<f64>().unwrap() - 2.0).abs() < 1e-6);
    assert!((get("mse_std").parse::<f64>().unwrap() - 2f64.sqrt()).abs() < 1e-6);
    assert!((get("mae_mean").parse::<f64>().unwrap() - 0.375).abs() < 1e-6);
    assert_eq!(get("physics_mean"), "");
    assert_eq!(Spread::of(&[4.0]), Some(Spread { mean: 4.0, std: None }));
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let o = out.to_str().unwrap();
    assert_eq!(cli(&["run", "--bogus"]), 2);
    assert_eq!(cli(&["run", "--variant", "mopinnenkf", "--eta", "0", "--out", o]), 2);
    assert_eq!(cli(&["run", "--variant", "adam", "--population", "0", "--out", o]), 2);
    assert_eq!(cli(&["report", tmp.path().join("missing").to_str().unwrap()]), 4);
    assert_eq!(cli(&["run", "--config", tmp.path().join("none.toml").to_str().unwrap()]), 4);
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "problem = 3\n").unwrap();
    assert_eq!(cli(&["run", "--config", bad.to_str().unwrap()]), 2);

    let mut args = vec!["run", "--variant", "adam", "--out", o, "--lr", "1e300"];
    args.extend_from_slice(TINY);
    assert_eq!(cli(&args), 3);
    assert!(out.join("diagnostic.json").exists());
    assert!(!out.join("report.json").exists());
}

#[test]
fn config_files_round_trip_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig { seed: 11, eta: 0.5, out: tmp.path().join("from-file"), ..Default::default() };
    cfg.budgets.population = Some(4);
    cfg.budgets.adam_epochs = Some(15);
    let path = tmp.path().join("exp.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);

    let out = tmp.path().join("flags");
    let mut args = vec!["run", "--config", path.to_str().unwrap(), "--variant", "adam", "--out", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    assert_eq!(cli(&args), 0);
    let stored = ExperimentConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(stored.seed, 11);
    assert_eq!(stored.eta, 0.5);
    assert_eq!(stored.variant.to_string(), "adam");
    assert_eq!(stored.budgets.adam_epochs, Some(15));
}
