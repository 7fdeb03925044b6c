use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use roughpvar_cli::{run, EXIT_FAIL, EXIT_PASS, EXIT_USAGE, MANIFEST};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roughpvar")).args(args).output().unwrap()
}

fn in_process(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(std::iter::once("roughpvar").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn constants_brownian_row() {
    let (code, out, _) = in_process(&["constants", "--p", "2", "--hurst", "0.5"]);
    assert_eq!(code, EXIT_PASS);
    let row = out.lines().find(|l| l.starts_with("sigma_sq,")).unwrap();
    let value: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!((value - 2.0).abs() < 1e-12, "{row}");
    let c2 = out.lines().find(|l| l.starts_with("c_p,")).unwrap();
    assert_eq!(c2.split(',').nth(3).unwrap().parse::<f64>().unwrap(), 1.0);
}

#[test]
fn exit_code_partition() {
    let ok = bin(&["constants", "--p", "2", "--hurst", "0.5"]);
    assert_eq!(ok.status.code(), Some(EXIT_PASS));

    let fail = bin(&[
        "limit-check", "--hurst", "0.4", "--p", "2", "--n", "64", "--replicas", "30", "--ks-tol", "0.001",
    ]);
    assert_eq!(fail.status.code(), Some(EXIT_FAIL), "{}", String::from_utf8_lossy(&fail.stderr));

    for args in [
        &["constants", "--bogus"][..],
        &["frobnicate"],
        &["pvar", "--hurst", "0.7", "--p", "2"],
        &["pvar", "--hurst", "abc"],
        &["run"],
    ] {
        let out = bin(args);
        assert_eq!(out.status.code(), Some(EXIT_USAGE), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn out_of_range_needs_force() {
    let (code, _, err) = in_process(&["pvar", "--hurst", "0.2", "--p", "3.5", "--n", "64"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("[5, inf) u {2, 4}"), "{err}");
    let (code, out, _) = in_process(&["pvar", "--hurst", "0.2", "--p", "3.5", "--n", "64", "--force"]);
    assert_eq!(code, EXIT_PASS);
    assert!(out.starts_with("n,p,H,pvar,u_stat,drift,cond_std\n64,"), "{out}");
}

#[test]
fn subcritical_limit_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, stdout, err) = in_process(&[
        "limit-check", "--hurst", "0.15", "--p", "2", "--process", "sq", "--n", "256,1024", "--replicas", "150",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_PASS, "{stdout}{err}");
    let summary = read(&out, "summary.csv");
    assert!(summary.starts_with("experiment_id,n,median_err,ks,slope,slope_se,pass\n"), "{summary}");
    let results = read(&out, "results.csv");
    assert!(results.starts_with("experiment_id,n,replica,stat,drift,cond_std,z\n"));
    assert_eq!(results.lines().count(), 1 + 2 * 150);
    for line in results.lines().skip(1) {
        let drift: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!((drift + 0.25).abs() < 1e-9, "{line}");
    }
}

#[test]
fn run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rates");
    let (code, _, err) = in_process(&[
        "rate-fit", "--hurst", "0.4", "--p", "2", "--n", "64,128,256,512", "--replicas", "40", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(code == EXIT_PASS || code == EXIT_FAIL, "{err}");
    let manifest = read(&out, MANIFEST);
    assert!(manifest.contains("subcommand=rate-fit\n"));
    assert!(manifest.contains(&format!("version={}\n", roughpvar_cli::VERSION)));
    let outputs = manifest.lines().find_map(|l| l.strip_prefix("outputs=")).unwrap();
    for name in outputs.split(',') {
        assert!(out.join(name).is_file(), "{name}");
    }
    let plot = read(&out, "plot.csv");
    assert!(plot.starts_with("log_n,log_err\n"));
    assert_eq!(plot.lines().count(), 5);
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let (code, _, _) = in_process(&["simulate", "--hurst", "0.3", "--n", "8", "--seed", "1", "--out", d.to_str().unwrap()]);
        assert_eq!(code, EXIT_PASS);
    }
    for name in [MANIFEST, "path.csv", "levels.csv"] {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
    let path = read(&a, "path.csv");
    assert!(path.starts_with("t,x\n"));
    assert_eq!(path.lines().count(), 10);
}

#[test]
fn replay_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (first, replay) = (dir.path().join("first"), dir.path().join("replay"));
    let (code, _, _) = in_process(&[
        "pvar", "--hurst", "0.25", "--p", "4", "--process", "exp-rde", "--n", "128", "--seed", "9", "--out",
        first.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_PASS);
    let manifest = first.join(MANIFEST);
    let (code, _, _) = in_process(&["run", "--config", manifest.to_str().unwrap(), "--out", replay.to_str().unwrap()]);
    assert_eq!(code, EXIT_PASS);
    for name in [MANIFEST, "pvar.csv"] {
        assert_eq!(read(&first, name), read(&replay, name), "{name}");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(&cfg, r#"{"hurst": 0.3, "p": 2, "n": [32], "seed": 5}"#).unwrap();
    let (code, out, _) = in_process(&["pvar", "--config", cfg.to_str().unwrap(), "--p", "4"]);
    assert_eq!(code, EXIT_PASS);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "32");
    assert_eq!(row[1].parse::<f64>().unwrap(), 4.0);

    fs::write(&cfg, "hurst=0.3\ncolour=blue\n").unwrap();
    let (code, _, err) = in_process(&["pvar", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("colour"), "{err}");
}

#[test]
fn scaling_check_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scaling");
    let (code, stdout, err) = in_process(&[
        "scaling-check", "--hurst", "0.4", "--rank", "3", "--n", "128,256", "--replicas", "20", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(code == EXIT_PASS || code == EXIT_FAIL, "{err}");
    assert!(stdout.starts_with("experiment_id,rank,n_exponent,length_exponent"));
    let scaling = read(&out, "scaling.csv");
    assert_eq!(scaling.lines().count(), 1 + 2 * 5);

    let (code, stdout, _) = in_process(&["scaling-check", "--hurst", "0.4", "--rank", "0", "--n", "64,128", "--replicas", "4"]);
    assert_eq!(code, EXIT_PASS);
    assert!(stdout.lines().nth(1).unwrap().ends_with(",true,true"), "{stdout}");
}
