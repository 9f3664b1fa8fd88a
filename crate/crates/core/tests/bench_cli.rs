use std::path::Path;
use std::process::{Command, Output};

use ctagd::bench::{load_csv, run_suite, OptimizerKind, RunConfig, CSV_COLUMNS, FLAG_DIVERGED};

fn bench(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench")).args(args).arg("--out").arg(out).output().unwrap()
}

#[test]
fn testbed_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(&["testbed", "--seed-list", "2,3", "--set", "optimizers=[\"sgd\",\"lbfgs\"]"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_COLUMNS.join(","));
    let records = load_csv(&dir.path().join("records.csv")).unwrap();
    let ids: std::collections::BTreeSet<_> = records.iter().map(|r| r.run_id.as_str()).collect();
    assert_eq!(ids.into_iter().collect::<Vec<_>>(), ["lbfgs-s2", "lbfgs-s3", "sgd-s2", "sgd-s3"]);
    assert!(dir.path().join("summary.csv").exists());

    let svg = std::fs::read_to_string(dir.path().join("trajectory-s2.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains(r#"class="contour""#));
    assert_eq!(svg.matches(r#"class="trajectory""#).count(), 2);
    let curves = std::fs::read_to_string(dir.path().join("curves.svg")).unwrap();
    assert_eq!(curves.matches(r#"class="curve""#).count(), 2);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bench(&["testbed", "--set", "ctagd.omega=1.5"], dir.path()).status.code(), Some(2));
    assert_eq!(bench(&["testbed", "--set", "no.such.key=1"], dir.path()).status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"testbed": {"max_steps": 10, "bogus": 1}}"#).unwrap();
    assert_eq!(bench(&["mlp", "--config", cfg.to_str().unwrap()], dir.path()).status.code(), Some(2));
}

#[test]
fn strict_mode_exits_with_three_on_flagged_runs() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["testbed", "--seeds", "3", "--format", "csv", "--set", "optimizers=[\"ctagd_adam\"]"];
    let relaxed = bench(&args, dir.path());
    assert!(relaxed.status.success());
    let flagged = load_csv(&dir.path().join("records.csv")).unwrap().iter().any(|r| !r.flags.is_empty());
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(bench(&strict, dir.path()).status.code(), Some(if flagged { 3 } else { 0 }));
}

#[test]
fn dump_landscape_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(&["dump-landscape", "--seed-list", "7", "--stationary"], dir.path());
    assert!(out.status.success());
    let seq = ctagd::landscape::LandscapeSequence::load(&dir.path().join("landscape-s7.json")).unwrap();
    assert!(seq.train.windows(2).all(|w| w[0] == w[1]));
    assert!(dir.path().join("landscape-s7.svg").exists());
}

#[test]
fn ablate_writes_one_block_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(
        &["ablate", "--seeds", "2", "--set", "optimizers=[\"ctagd_sgd\"]", "--set", "ablation.knob=omega", "--set", "ablation.values=[0.1,0.3]"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("omega,0.1,ctagd_sgd,"));
}

#[test]
fn runs_pair_the_same_landscape_and_start() {
    let cfg = RunConfig {
        optimizers: vec![OptimizerKind::Sgd, OptimizerKind::Newton2d],
        seeds: vec![1],
        ..RunConfig::default()
    };
    let suite = run_suite(&cfg).unwrap();
    let a = suite.run(OptimizerKind::Sgd, 1).unwrap();
    let b = suite.run(OptimizerKind::Newton2d, 1).unwrap();
    assert_eq!(a.trajectory[0], b.trajectory[0]);
    assert_eq!(a.records[0].train_value, b.records[0].train_value);
}

#[test]
fn diverged_runs_are_flagged_and_unconverged() {
    let cfg = RunConfig { optimizers: vec![OptimizerKind::CtagdAdam], ..RunConfig::default() };
    let suite = run_suite(&cfg).unwrap();
    for run in &suite.runs {
        let first = run.records[0].train_value;
        if run.last().flags == FLAG_DIVERGED {
            assert!(run.converged_at().is_none());
            assert!(run.last().train_value > first - 1.0);
        }
    }
    assert!(suite.summary[0].failed > 0);
}
