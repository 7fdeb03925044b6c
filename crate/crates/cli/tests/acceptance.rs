//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line with its
//! measured values; criteria run one at a time so the runtime budgets are
//! measured without contention.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use roughpvar::fbm::{FbmMethod, FbmPath, FbmSampler};
use roughpvar::harness::{
    ks_statistic, mean_var, median, normal_cdf, rate_fit, scaling_exponent_check, simulate_replicas, ExperimentConfig,
    ProcessSpec, ScalingFunctional,
};
use roughpvar::hermite::{a_2q, c_p, sigma_sq, Truncation};
use roughpvar::rng::{derive_seed, stream};
use roughpvar::rough::{compose, construct_function_of_fbm, rough_integral, solve_rde, ControlledPath, FunctionFamily};
use roughpvar::stats::{riemann_correction_sum, weighted_h_sum, StatConfig};

static SERIAL: Mutex<()> = Mutex::new(());

struct Report {
    id: u32,
    title: &'static str,
    budget: Duration,
    start: Instant,
    checks: Vec<(String, bool)>,
}

impl Report {
    fn new(id: u32, title: &'static str, budget_secs: u64) -> Self {
        Self { id, title, budget: Duration::from_secs(budget_secs), start: Instant::now(), checks: vec![] }
    }

    fn check(&mut self, label: impl Into<String>, ok: bool) {
        self.checks.push((label.into(), ok));
    }

    fn finish(mut self) {
        let elapsed = self.start.elapsed();
        self.check(format!("runtime {:.1}s < {}s", elapsed.as_secs_f64(), self.budget.as_secs()), elapsed < self.budget);
        let passed = self.checks.iter().all(|(_, ok)| *ok);
        let failed: Vec<&str> = self.checks.iter().filter(|(_, ok)| !ok).map(|(l, _)| l.as_str()).collect();
        let detail: Vec<&str> = self.checks.iter().map(|(l, _)| l.as_str()).collect();
        // Bypasses the test harness capture so every verdict shows in plain runs.
        let _ = writeln!(
            std::io::stdout().lock(),
            "criterion {:>2} [{}] {}: {}",
            self.id,
            if passed { "PASS" } else { "FAIL" },
            self.title,
            detail.join("; ")
        );
        assert!(passed, "criterion {} failed: {}", self.id, failed.join("; "));
    }
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn fbm(h: f64, n: usize, seed: u64) -> Arc<FbmPath> {
    Arc::new(FbmSampler::new(h, n, FbmMethod::Auto).unwrap().sample_replica(seed, 0))
}

// Independent quadrature oracle for E[|N|^p He_k(N)] / k!.
fn hermite_coeff_oracle(p: f64, k: usize) -> f64 {
    let he = |x: f64| {
        let (mut a, mut b) = (1.0, x);
        if k == 0 {
            return a;
        }
        for j in 1..k {
            let c = x * b - j as f64 * a;
            a = b;
            b = c;
        }
        b
    };
    let (lo, hi, steps) = (-14.0f64, 14.0f64, 200_000usize);
    let h = (hi - lo) / steps as f64;
    let f = |x: f64| x.abs().powf(p) * he(x) * (-0.5 * x * x).exp();
    let mut acc = f(lo) + f(hi);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    let integral = acc * h / 3.0 / (2.0 * std::f64::consts::PI).sqrt();
    integral / (1..=k).map(|j| j as f64).product::<f64>()
}

#[test]
fn criterion_01_constants() {
    let _g = serial();
    let mut r = Report::new(1, "Gaussian moments, chaos coefficients, limit variance", 1);
    let c2 = c_p(2.0).unwrap();
    let c4 = c_p(4.0).unwrap();
    r.check(format!("c_2 = {c2}"), c2 == 1.0);
    r.check(format!("c_4 = {c4}"), c4 == 3.0);
    let s = sigma_sq(2.0, 0.5, Truncation::default()).unwrap().value;
    r.check(format!("sigma^2(2, 1/2) = {s}"), (s - 2.0).abs() < 1e-8);
    for (q, expected) in [(1usize, 1.0f64), (2, 0.0)] {
        let a = a_2q(2.0, q).unwrap();
        let oracle = hermite_coeff_oracle(2.0, 2 * q);
        r.check(
            format!("a_{}(2) = {a:e}, quadrature {oracle:e}", 2 * q),
            (a - oracle).abs() < 1e-10 && (a - expected).abs() < 1e-10,
        );
    }
    r.finish();
}

fn sin_family() -> FunctionFamily {
    FunctionFamily::smooth(|j, v| match j % 4 {
        0 => v.sin(),
        1 => v.cos(),
        2 => -v.sin(),
        _ => -v.cos(),
    })
}

#[test]
fn criterion_02_remainder_identity() {
    let _g = serial();
    let mut r = Report::new(2, "remainder identity on random triples", 10);
    let n = 1024;
    let mut rng = stream(7, 0);
    for ell in [2usize, 3, 6] {
        let x = fbm(0.35, n, ell as u64);
        let id = ControlledPath::identity(x.clone(), ell).unwrap();
        let paths = [
            ("identity", id.clone()),
            ("function of fbm", construct_function_of_fbm(&FunctionFamily::polynomial(vec![0.5, 0.2, -0.1]), ell, x.clone()).unwrap()),
            ("composition", compose(&sin_family(), &id).unwrap()),
            (
                "rough integral",
                rough_integral(&compose(&sin_family(), &id.truncate(ell - 1).unwrap()).unwrap(), 1).unwrap(),
            ),
            ("rde", solve_rde(&FunctionFamily::affine(0.1, -0.2), &sin_family(), 0.3, x.clone(), ell, 1).unwrap()),
        ];
        for (name, cp) in &paths {
            let scale = cp.magnitude().max(1.0).powi(ell as i32);
            let mut worst = 0.0f64;
            for _ in 0..1000 {
                let mut idx = [0usize; 3];
                while !(idx[0] < idx[1] && idx[1] < idx[2]) {
                    for v in idx.iter_mut() {
                        *v = rng.random_range(0..=n);
                    }
                    idx.sort_unstable();
                }
                worst = worst.max(cp.lemma_dr_check(idx[0], idx[1], idx[2]).unwrap().abs() / scale);
            }
            r.check(format!("{name} l={ell}: max residual/scale {worst:.1e}"), worst < 1e-12);
        }
    }
    r.finish();
}

const REFINES: [usize; 4] = [8, 4, 2, 1];

// Mean sup-norm error against an exact solution over several driver paths,
// on grids coarsened by each of `REFINES`.
fn refinement_errors<F, O>(h: f64, fine: usize, paths: u64, build: F, oracle: O) -> Vec<f64>
where
    F: Fn(Arc<FbmPath>) -> ControlledPath,
    O: Fn(f64) -> f64,
{
    REFINES
        .iter()
        .map(|&refine| {
            (0..paths)
                .map(|seed| {
                    let x = fbm(h, fine, 300 + seed);
                    let coarse = Arc::new(x.subsample(refine).unwrap());
                    let y = build(coarse.clone());
                    y.level(0)
                        .iter()
                        .zip(coarse.values())
                        .map(|(a, b)| (a - oracle(*b)).abs())
                        .fold(0.0f64, f64::max)
                })
                .sum::<f64>()
                / paths as f64
        })
        .collect()
}

fn ratios(errs: &[f64]) -> Vec<f64> {
    errs.windows(2).map(|w| w[0] / w[1]).collect()
}

#[test]
fn criterion_03_construction_oracles() {
    let _g = serial();
    let mut r = Report::new(3, "constructions against closed forms under refinement", 60);
    let (fine, paths) = (4096, 16);
    for (h, int_ell, rde_ell) in [(0.5, 3usize, 4usize), (0.35, 5, 6)] {
        // x dx: the compensated sum telescopes to x^2/2, so only rounding remains.
        let errs = refinement_errors(
            h,
            fine,
            paths,
            |x| rough_integral(&ControlledPath::identity(x, 2).unwrap(), 1).unwrap(),
            |v| 0.5 * v * v,
        );
        let worst = errs.iter().copied().fold(0.0, f64::max);
        r.check(format!("H={h} int x dx: max sup error {worst:.1e} over all refinements"), worst < 1e-12);

        let errs = refinement_errors(
            h,
            fine,
            paths,
            |x| {
                let id = ControlledPath::identity(x, int_ell).unwrap();
                rough_integral(&compose(&FunctionFamily::exp(), &id).unwrap(), 1).unwrap()
            },
            |v| v.exp() - 1.0,
        );
        let q = ratios(&errs);
        r.check(
            format!("H={h} int e^x dx (l={int_ell}): ratios {q:.3?}"),
            q.iter().all(|v| (1.5..=4.0).contains(v)),
        );

        let errs = refinement_errors(
            h,
            fine,
            paths,
            |x| solve_rde(&FunctionFamily::zero(), &FunctionFamily::identity(), 1.0, x, rde_ell, 1).unwrap(),
            f64::exp,
        );
        let q = ratios(&errs);
        r.check(
            format!("H={h} dy = y dx (l={rde_ell}): ratios {q:.3?}"),
            q.iter().all(|v| (1.5..=4.0).contains(v)),
        );
    }
    r.finish();
}

#[test]
fn criterion_04_subcritical_limit() {
    let _g = serial();
    let mut r = Report::new(4, "subcritical limit, y = x^2/2, p = 2, H = 0.15", 300);
    let grid = vec![1 << 10, 1 << 12, 1 << 14];
    let cfg = ExperimentConfig::new(0.15, 2.0, ProcessSpec::Sq, grid.clone(), 200, 404);
    let rows = simulate_replicas(&cfg).unwrap();
    let oracle = -0.25;
    let mut errs = vec![];
    let mut last_median = f64::NAN;
    for &n in &grid {
        let stats: Vec<f64> = rows.iter().filter(|row| row.n == n).map(|row| row.stat).collect();
        last_median = median(&stats);
        errs.push(median(&stats.iter().map(|s| (s - oracle).abs()).collect::<Vec<_>>()));
    }
    r.check(
        format!("median n^0.3 U^n at n=2^14: {last_median:.4} (target -0.25 +- 0.08)"),
        (last_median - oracle).abs() <= 0.08,
    );
    let inv = errs.windows(2).filter(|w| w[1] > w[0]).count();
    r.check(format!("median errors {errs:.4?}, {inv} inversion(s)"), inv <= 1);
    r.finish();
}

#[test]
fn criterion_05_supercritical_clt() {
    let _g = serial();
    let mut r = Report::new(5, "supercritical CLT, y = x, p = 2", 300);
    let n = 1 << 12;
    for h in [0.4, 0.5] {
        let cfg = ExperimentConfig::new(h, 2.0, ProcessSpec::Fbm, vec![n], 2000, 505);
        let rows = simulate_replicas(&cfg).unwrap();
        let z: Vec<f64> = rows.iter().map(|row| row.stat / row.cond_std).collect();
        let ks = ks_statistic(&z, normal_cdf).unwrap();
        r.check(format!("H={h}: KS {ks:.4} < 0.05"), ks < 0.05);
        let stats: Vec<f64> = rows.iter().map(|row| row.stat).collect();
        let (_, var) = mean_var(&stats);
        let target = sigma_sq(2.0, h, Truncation::default()).unwrap().value;
        r.check(
            format!("H={h}: variance {var:.4} vs sigma^2 {target:.4}"),
            ((var - target) / target).abs() <= 0.10,
        );
    }
    r.finish();
}

#[test]
fn criterion_06_critical_limit() {
    let _g = serial();
    let mut r = Report::new(6, "critical limit, y = x^2/2, p = 2, H = 1/4", 300);
    let cfg = ExperimentConfig::new(0.25, 2.0, ProcessSpec::Sq, vec![1 << 13], 1000, 606);
    let rows = simulate_replicas(&cfg).unwrap();
    let drift = median(&rows.iter().map(|row| row.drift).collect::<Vec<_>>());
    r.check(format!("drift {drift:.6} = -1/4"), (drift + 0.25).abs() < 1e-9);
    let z: Vec<f64> = rows.iter().map(|row| (row.stat + 0.25) / row.cond_std).collect();
    let ks = ks_statistic(&z, normal_cdf).unwrap();
    r.check(format!("KS {ks:.4} < 0.07"), ks < 0.07);
    r.finish();
}

#[test]
fn criterion_07_rates() {
    let _g = serial();
    let mut r = Report::new(7, "convergence rates over n = 2^9..2^14", 600);
    let grid: Vec<usize> = (9..=14).map(|k| 1 << k).collect();
    for (label, h, process, target) in [("y = x, H = 0.4", 0.4, ProcessSpec::Fbm, -0.5), ("y = x^2/2, H = 0.15", 0.15, ProcessSpec::Sq, -0.3)] {
        let cfg = ExperimentConfig::new(h, 2.0, process, grid.clone(), 200, 707);
        let res = rate_fit(&cfg, "rates").unwrap();
        let slope = res.fit.unwrap().slope;
        r.check(format!("{label}: slope {slope:.4} (target {target} +- 0.1)"), (slope - target).abs() <= 0.1);
    }
    r.finish();
}

fn replica_medians<F>(replicas: usize, f: F) -> f64
where
    F: Fn(u64) -> f64 + Sync + Send,
{
    let values: Vec<f64> = (0..replicas as u64).into_par_iter().map(f).collect();
    median(&values)
}

#[test]
fn criterion_08_riemann_correction() {
    let _g = serial();
    let mut r = Report::new(8, "Riemann correction, y = x, H = 0.3", 180);
    let (h, n, ff) = (0.3, 1usize << 14, 16);
    let sampler = FbmSampler::new(h, n * ff, FbmMethod::Auto).unwrap();
    let cfg = StatConfig::new(2.0, 1.0, ff).unwrap();
    let seed = derive_seed(808, n as u64);
    let med = replica_medians(500, |rep| {
        let x = Arc::new(sampler.sample_replica(seed, rep));
        let cp = ProcessSpec::Fbm.build(x).unwrap();
        (n as f64).powf(2.0 * h) * riemann_correction_sum(&cp, &cfg).unwrap()
    });
    let target = -0.3125;
    r.check(format!("median {med:.4} vs {target}"), ((med - target) / target).abs() <= 0.10);
    r.finish();
}

#[test]
fn criterion_09_sign_weighted_sum() {
    let _g = serial();
    let mut r = Report::new(9, "weighted sum of |u|^3 sign(u), weight x, H = 0.2", 180);
    let (h, n) = (0.2, 1usize << 14);
    let sampler = FbmSampler::new(h, n, FbmMethod::Auto).unwrap();
    let seed = derive_seed(909, n as u64);
    let med = replica_medians(500, |rep| {
        let x = sampler.sample_replica(seed, rep);
        let sum = weighted_h_sum(&x, |u| u.abs().powi(3) * u.signum(), Some(x.values()), 0.0, 1.0).unwrap();
        (n as f64).powf(h - 1.0) * sum
    });
    let target = -1.5;
    r.check(format!("median {med:.4} vs {target}"), ((med - target) / target).abs() <= 0.10);
    r.finish();
}

#[test]
fn criterion_10_scaling_bounds() {
    let _g = serial();
    let mut r = Report::new(10, "scaling exponents of weighted Hermite sums, weight x", 300);
    let grid = vec![512, 1024, 2048, 4096];
    for (d, h) in [(3usize, 0.4), (1, 0.2)] {
        let mut cfg = ExperimentConfig::new(h, 2.0, ProcessSpec::Fbm, grid.clone(), 200, 1010);
        cfg.force = true;
        let check = scaling_exponent_check(&cfg, ScalingFunctional::Hermite(d)).unwrap();
        let (en, el) = (check.n_exponent.unwrap(), check.length_exponent.unwrap());
        let (xn, xl) = check.expected;
        r.check(format!("d={d} H={h} n exponent {en:.3} (target {xn:.2} +- 0.15)"), (en - xn).abs() <= 0.15);
        r.check(format!("d={d} H={h} length exponent {el:.3} (target {xl:.2} +- 0.15)"), (el - xl).abs() <= 0.15);
    }
    r.finish();
}

fn roughpvar(args: &[&str], workers: usize) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_roughpvar"))
        .args(args)
        .env("ROUGHPVAR_WORKERS", workers.to_string())
        .output()
        .unwrap()
        .status
        .code()
        .unwrap()
}

fn same_tree(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let other = fs::read_dir(b).unwrap().count();
    if names.len() != other {
        return Err(format!("{} vs {} files", names.len(), other));
    }
    for name in &names {
        if fs::read(a.join(name)).unwrap() != fs::read(b.join(name)).unwrap() {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
    }
    Ok(names.len())
}

#[test]
fn criterion_11_determinism() {
    let _g = serial();
    let mut r = Report::new(11, "byte-identical re-runs", 300);
    let tmp = tempfile::tempdir().unwrap();
    let experiments: [(&str, &[&str]); 3] = [
        ("simulate", &["simulate", "--hurst", "0.3", "--n", "8", "--seed", "1"]),
        (
            "limit-check",
            &["limit-check", "--hurst", "0.4", "--p", "2", "--process", "sq", "--n", "256,1024", "--replicas", "120", "--seed", "11"],
        ),
        ("rate-fit", &["rate-fit", "--hurst", "0.15", "--p", "2", "--process", "sq", "--replicas", "60", "--seed", "12"]),
    ];
    for (name, args) in experiments {
        let first = tmp.path().join(format!("{name}-a"));
        let code = roughpvar(&[args, &["--out", first.to_str().unwrap()]].concat(), 1);
        r.check(format!("{name} exit {code}"), code == 0 || code == 1);

        let again = tmp.path().join(format!("{name}-b"));
        let again_code = roughpvar(&[args, &["--out", again.to_str().unwrap()]].concat(), 4);
        let outcome = same_tree(&first, &again);
        r.check(format!("{name} 1 vs 4 workers: {outcome:?}"), outcome.is_ok() && again_code == code);

        let manifest = first.join("manifest.txt");
        let replay = tmp.path().join(format!("{name}-c"));
        let replay_code =
            roughpvar(&["run", "--config", manifest.to_str().unwrap(), "--out", replay.to_str().unwrap()], 2);
        let outcome = same_tree(&first, &replay);
        r.check(format!("{name} replay from manifest: {outcome:?}"), outcome.is_ok() && replay_code == code);
    }
    r.finish();
}
