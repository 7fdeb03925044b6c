//! Monte Carlo experiments: regime checks, rate fits, scaling exponents and
//! conditional-Gaussianity diagnostics.
//!
//! Replica `r` at grid size `n` draws its driver from the stream
//! `(derive_seed(master_seed, n), r)`, and replicas are collected in index
//! order, so results do not depend on the number of worker threads.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{check_hurst, Error, Result};
use crate::fbm::{FbmMethod, FbmPath, FbmSampler};
use crate::hermite::{hermite, HermiteModel, Truncation};
use crate::io::fmt17;
use crate::regression::{ols, ols2, LineFit};
use crate::rng::derive_seed;
use crate::rough::{compose, solve_rde, ControlledPath, FunctionFamily};
use crate::stats::{
    limit_spec, u_statistic, weighted_h_sum, LimitSpec, Quadrature, Regime, StatConfig,
    DEFAULT_FINE_FACTOR,
};

/// Levels carried by every harness process.
pub const PROCESS_LEVELS: usize = 6;
/// Replicas required by [`stable_joint_check`].
pub const MIN_JOINT_REPLICAS: usize = 1000;
/// Quantile bins used by [`stable_joint_check`].
pub const JOINT_BINS: usize = 5;
/// Interval lengths `2^-1, ..., 2^-5` used by [`scaling_exponent_check`].
pub const SCALING_LENGTHS: [f64; 5] = [0.5, 0.25, 0.125, 0.0625, 0.03125];
/// Left end of the intervals used by [`scaling_exponent_check`].
pub const SCALING_START: f64 = 0.5;

/// The controlled process whose power variation is studied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProcessSpec {
    /// `y = x`
    Fbm,
    /// `y = x^2 / 2`
    Sq,
    /// `y = x^3 / 6`
    Cube,
    /// `dy = y dx`, `y_0 = 1`
    ExpRde,
    /// `dy = (b0 + b1 y) dt + (v0 + v1 y) dx`
    CustomRde { b: (f64, f64), v: (f64, f64), y0: f64 },
}

impl ProcessSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Fbm => "fbm",
            Self::Sq => "sq",
            Self::Cube => "cube",
            Self::ExpRde => "exp-rde",
            Self::CustomRde { .. } => "custom-rde",
        }
    }

    /// Controlled path with [`PROCESS_LEVELS`] levels on the grid of `x`.
    pub fn build(&self, x: Arc<FbmPath>) -> Result<ControlledPath> {
        let poly = |coeffs: Vec<f64>| -> Result<ControlledPath> {
            let id = ControlledPath::identity(x.clone(), PROCESS_LEVELS)?;
            compose(&FunctionFamily::polynomial(coeffs), &id)
        };
        match *self {
            Self::Fbm => ControlledPath::identity(x, PROCESS_LEVELS),
            Self::Sq => poly(vec![0.0, 0.0, 0.5]),
            Self::Cube => poly(vec![0.0, 0.0, 0.0, 1.0 / 6.0]),
            Self::ExpRde => solve_rde(&FunctionFamily::zero(), &FunctionFamily::identity(), 1.0, x, PROCESS_LEVELS, 1),
            Self::CustomRde { b, v, y0 } => solve_rde(
                &FunctionFamily::affine(b.0, b.1),
                &FunctionFamily::affine(v.0, v.1),
                y0,
                x,
                PROCESS_LEVELS,
                1,
            ),
        }
    }
}

impl FromStr for ProcessSpec {
    type Err = Error;

    /// Parses the tag; `custom-rde` starts as `dy = dx` with `y_0 = 0`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fbm" => Ok(Self::Fbm),
            "sq" => Ok(Self::Sq),
            "cube" => Ok(Self::Cube),
            "exp-rde" => Ok(Self::ExpRde),
            "custom-rde" => Ok(Self::CustomRde { b: (0.0, 0.0), v: (1.0, 0.0), y0: 0.0 }),
            other => Err(Error::Domain(format!(
                "unknown process '{other}' (expected fbm, sq, cube, exp-rde or custom-rde)"
            ))),
        }
    }
}

impl fmt::Display for ProcessSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pass thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// KS distance bound; `None` picks 0.05 above the critical point and
    /// 0.07 at it.
    pub ks: Option<f64>,
    pub median: f64,
    pub slope: f64,
    pub scaling: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { ks: None, median: 0.08, slope: 0.1, scaling: 0.15 }
    }
}

impl Tolerances {
    pub fn ks_for(&self, regime: Regime) -> f64 {
        self.ks.unwrap_or(match regime {
            Regime::Critical => 0.07,
            _ => 0.05,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub hurst: f64,
    pub p: f64,
    pub process: ProcessSpec,
    pub n_grid: Vec<usize>,
    pub replicas: usize,
    pub master_seed: u64,
    pub t: f64,
    pub fine_factor: usize,
    pub method: FbmMethod,
    pub truncation: Truncation,
    pub tolerances: Tolerances,
    /// Run outside the parameter range covered by the limit theorem.
    pub force: bool,
}

impl ExperimentConfig {
    pub fn new(hurst: f64, p: f64, process: ProcessSpec, n_grid: Vec<usize>, replicas: usize, master_seed: u64) -> Self {
        Self {
            hurst,
            p,
            process,
            n_grid,
            replicas,
            master_seed,
            t: 1.0,
            fine_factor: DEFAULT_FINE_FACTOR,
            method: FbmMethod::Auto,
            truncation: Truncation::default(),
            tolerances: Tolerances::default(),
            force: false,
        }
    }

    pub fn regime(&self) -> Regime {
        Regime::of(self.hurst)
    }

    pub fn stat_config(&self) -> Result<StatConfig> {
        Ok(StatConfig::new(self.p, self.t, self.fine_factor)?.with_quadrature(Quadrature::Trapezoid))
    }

    /// Checks the configuration, including the theorem's `(H, p)` range
    /// unless `force` is set.
    pub fn validate(&self) -> Result<()> {
        check_hurst(self.hurst)?;
        self.stat_config()?;
        if self.n_grid.is_empty() {
            return Err(Error::Domain("n grid is empty".into()));
        }
        if self.n_grid[0] < 2 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(format!(
                "n grid must be strictly increasing with n >= 2, got {:?}",
                self.n_grid
            )));
        }
        if self.replicas == 0 {
            return Err(Error::Domain("replicas must be positive".into()));
        }
        if !self.force {
            check_theorem_range(self.hurst, self.p)?;
        }
        Ok(())
    }

    /// Whether the configuration lies inside the guaranteed range.
    pub fn guaranteed(&self) -> bool {
        check_theorem_range(self.hurst, self.p).is_ok()
    }
}

/// `H <= 1/2` with `p in [3, inf) u {2}` above the critical point and
/// `p in [5, inf) u {2, 4}` at or below it.
pub fn check_theorem_range(hurst: f64, p: f64) -> Result<()> {
    if hurst > 0.5 {
        return Err(Error::Regime(format!(
            "H = {hurst} > 1/2 is outside the limit theorem (requires H <= 1/2); use --force to run anyway"
        )));
    }
    let regime = Regime::of(hurst);
    let (ok, range) = match regime {
        Regime::Supercritical => (p == 2.0 || p >= 3.0, "[3, inf) u {2}"),
        _ => (p == 2.0 || p == 4.0 || p >= 5.0, "[5, inf) u {2, 4}"),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Regime(format!(
            "p = {p} is outside the {regime} range p in {range} for H = {hurst}; use --force to run anyway"
        )))
    }
}

/// One replica at one grid size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaRow {
    pub n: usize,
    pub replica: usize,
    /// `n^{rate} U^n_t`
    pub stat: f64,
    pub drift: f64,
    pub cond_std: f64,
    /// Normalised statistic; `NaN` when `cond_std = 0` above the critical point.
    pub z: f64,
    /// `x_1` of the driver.
    pub x_end: f64,
    /// `int_0^1 x_u du` of the driver (trapezoid on the fine grid).
    pub x_mean: f64,
}

impl ReplicaRow {
    pub fn unnormalized(&self, rate_exponent: f64) -> f64 {
        self.stat * (self.n as f64).powf(-rate_exponent)
    }
}

/// Per-`n` aggregate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    /// `median |stat - drift|`
    pub median_err: f64,
    pub ks: Option<f64>,
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub experiment_id: String,
    pub regime: Regime,
    pub rate_exponent: f64,
    pub rows: Vec<ReplicaRow>,
    pub summary: Vec<SummaryRow>,
    pub fit: Option<LineFit>,
    /// `(ln n, ln size of U^n)` points of the rate fit.
    pub plot: Vec<(f64, f64)>,
    pub passed: bool,
    pub guaranteed: bool,
}

impl ExperimentResult {
    pub fn rows_for(&self, n: usize) -> impl Iterator<Item = &ReplicaRow> {
        self.rows.iter().filter(move |r| r.n == n)
    }

    pub fn write_results_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "experiment_id,n,replica,stat,drift,cond_std,z")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.experiment_id,
                r.n,
                r.replica,
                fmt17(r.stat),
                fmt17(r.drift),
                fmt17(r.cond_std),
                fmt17(r.z)
            )?;
        }
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "experiment_id,n,median_err,ks,slope,slope_se,pass")?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, fmt17);
        for s in &self.summary {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.experiment_id,
                s.n,
                fmt17(s.median_err),
                opt(s.ks),
                opt(s.slope),
                opt(s.slope_se),
                s.pass
            )?;
        }
        Ok(())
    }

    pub fn write_plot_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "log_n,log_err")?;
        for &(a, b) in &self.plot {
            writeln!(out, "{},{}", fmt17(a), fmt17(b))?;
        }
        Ok(())
    }
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov-Smirnov distance between the empirical law of `sample` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Domain("KS statistic of an empty sample".into()));
    }
    if sample.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("KS statistic of a sample containing NaN".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    Ok(sorted.iter().enumerate().fold(0.0f64, |d, (i, &v)| {
        let f = cdf(v);
        d.max((i + 1) as f64 / m - f).max(f - i as f64 / m)
    }))
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var)
}

/// Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 - 1.0);
    cov / (va * vb).sqrt()
}

/// Lag-one sample autocorrelation.
pub fn lag1_autocorrelation(values: &[f64]) -> f64 {
    let m = values.len();
    if m < 3 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let den: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let num: f64 = values.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    num / den
}

fn hermite_model(cfg: &ExperimentConfig) -> Result<Option<HermiteModel>> {
    match cfg.regime() {
        Regime::Subcritical => Ok(None),
        _ => HermiteModel::new(cfg.p, cfg.hurst, cfg.truncation).map(Some),
    }
}

fn z_score(spec: &LimitSpec, stat: f64) -> f64 {
    match spec.regime {
        Regime::Subcritical => stat - spec.drift,
        _ if spec.cond_std > 0.0 => (stat - spec.drift) / spec.cond_std,
        _ => f64::NAN,
    }
}

fn trapezoid_mean(values: &[f64]) -> f64 {
    let n = values.len() - 1;
    (values[1..n].iter().sum::<f64>() + 0.5 * (values[0] + values[n])) / n as f64
}

/// Simulates every `(n, replica)` pair of `cfg`, in `(n, replica)` order.
pub fn simulate_replicas(cfg: &ExperimentConfig) -> Result<Vec<ReplicaRow>> {
    cfg.validate()?;
    let model = hermite_model(cfg)?;
    let stat_cfg = cfg.stat_config()?;
    let mut rows = Vec::with_capacity(cfg.n_grid.len() * cfg.replicas);
    for &n in &cfg.n_grid {
        let sampler = FbmSampler::new(cfg.hurst, n * cfg.fine_factor, cfg.method)?;
        let seed = derive_seed(cfg.master_seed, n as u64);
        let batch = (0..cfg.replicas)
            .into_par_iter()
            .map(|replica| {
                let x = Arc::new(sampler.sample_replica(seed, replica as u64));
                let cp = cfg.process.build(x.clone())?;
                let spec = limit_spec(&cp, &stat_cfg, model.as_ref())?;
                let stat = (n as f64).powf(spec.rate_exponent) * u_statistic(&cp, &stat_cfg)?;
                Ok(ReplicaRow {
                    n,
                    replica,
                    stat,
                    drift: spec.drift,
                    cond_std: spec.cond_std,
                    z: z_score(&spec, stat),
                    x_end: x.values()[x.n()],
                    x_mean: trapezoid_mean(x.values()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(batch);
    }
    Ok(rows)
}

fn finite(values: impl Iterator<Item = f64>) -> Vec<f64> {
    values.filter(|v| v.is_finite()).collect()
}

/// Counts strict increases of `errors` along the grid.
pub fn inversions(errors: &[f64]) -> usize {
    errors.windows(2).filter(|w| w[1] > w[0]).count()
}

fn summarize(cfg: &ExperimentConfig, rows: &[ReplicaRow], regime: Regime) -> Result<Vec<SummaryRow>> {
    let tol = cfg.tolerances;
    cfg.n_grid
        .iter()
        .map(|&n| {
            let at: Vec<&ReplicaRow> = rows.iter().filter(|r| r.n == n).collect();
            let median_err = median(&at.iter().map(|r| (r.stat - r.drift).abs()).collect::<Vec<_>>());
            let (ks, pass) = match regime {
                Regime::Subcritical => {
                    let centred = median(&at.iter().map(|r| r.stat - r.drift).collect::<Vec<_>>());
                    (None, centred.abs() <= tol.median)
                }
                _ => {
                    let z = finite(at.iter().map(|r| r.z));
                    if z.is_empty() {
                        return Err(Error::Degenerate(format!("no replica with cond_std > 0 at n = {n}")));
                    }
                    let ks = ks_statistic(&z, normal_cdf)?;
                    (Some(ks), ks < tol.ks_for(regime))
                }
            };
            Ok(SummaryRow { n, median_err, ks, slope: None, slope_se: None, pass })
        })
        .collect()
}

fn result_from(cfg: &ExperimentConfig, id: &str, rows: Vec<ReplicaRow>, summary: Vec<SummaryRow>) -> ExperimentResult {
    let regime = cfg.regime();
    ExperimentResult {
        experiment_id: id.to_string(),
        regime,
        rate_exponent: regime.rate_exponent(cfg.hurst),
        rows,
        summary,
        fit: None,
        plot: vec![],
        passed: false,
        guaranteed: cfg.guaranteed(),
    }
}

/// Distributional check of the limit at every `n` of the grid.
///
/// Above the critical point `z = stat / cond_std` and at it
/// `z = (stat - drift) / cond_std` are compared with the standard normal law
/// by KS distance. Below it the median of `stat - drift` must lie within the
/// median tolerance of zero, and `median |stat - drift|` may increase along
/// the grid at most once. The experiment passes when the largest `n` passes.
pub fn run_regime_check(cfg: &ExperimentConfig, experiment_id: &str) -> Result<ExperimentResult> {
    let rows = simulate_replicas(cfg)?;
    let regime = cfg.regime();
    let summary = summarize(cfg, &rows, regime)?;
    let mut passed = summary.last().is_some_and(|s| s.pass);
    if regime == Regime::Subcritical {
        let errs: Vec<f64> = summary.iter().map(|s| s.median_err).collect();
        passed &= inversions(&errs) <= 1;
    }
    let mut res = result_from(cfg, experiment_id, rows, summary);
    res.passed = passed;
    Ok(res)
}

/// OLS of the log size of `U^n` against `ln n`, compared with `-1/2` at or
/// above the critical point and with `-2H` below it.
///
/// The size is `median_r |U^n_r|` at or above the critical point, where
/// `U^n` is a centred mixed Gaussian, and `|median_r U^n_r|` below it, where
/// `n^{2H} U^n` tends to the deterministic drift.
pub fn rate_fit(cfg: &ExperimentConfig, experiment_id: &str) -> Result<ExperimentResult> {
    if cfg.n_grid.len() < 4 {
        return Err(Error::Domain(format!("rate fit needs at least 4 grid sizes, got {}", cfg.n_grid.len())));
    }
    let rows = simulate_replicas(cfg)?;
    let regime = cfg.regime();
    let rate = regime.rate_exponent(cfg.hurst);
    let mut plot = Vec::with_capacity(cfg.n_grid.len());
    for &n in &cfg.n_grid {
        let raw: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.unnormalized(rate)).collect();
        let err = match regime {
            Regime::Subcritical => median(&raw).abs(),
            _ => median(&raw.iter().map(|v| v.abs()).collect::<Vec<_>>()),
        };
        if !(err > 0.0) || !err.is_finite() {
            return Err(Error::Degenerate(format!("size of U^n is {err} at n = {n}")));
        }
        plot.push(((n as f64).ln(), err.ln()));
    }
    let (lx, ly): (Vec<f64>, Vec<f64>) = plot.iter().copied().unzip();
    let fit = ols(&lx, &ly).ok_or_else(|| Error::Degenerate("rate regression failed".into()))?;
    let passed = (fit.slope + rate).abs() <= cfg.tolerances.slope;
    let mut summary = summarize(cfg, &rows, regime)?;
    for s in &mut summary {
        s.slope = Some(fit.slope);
        s.slope_se = Some(fit.slope_se);
        s.pass = passed;
    }
    let mut res = result_from(cfg, experiment_id, rows, summary);
    res.fit = Some(fit);
    res.plot = plot;
    res.passed = passed;
    Ok(res)
}

/// Test function of a scaling check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingFunctional {
    /// `H_d`, Hermite rank `d`.
    Hermite(usize),
    Zero,
}

impl ScalingFunctional {
    fn eval(&self, u: f64) -> f64 {
        match *self {
            Self::Hermite(d) => hermite(d, u),
            Self::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingCheck {
    pub functional: ScalingFunctional,
    /// Fitted exponents of `n` and `t - s`; `None` when every norm vanishes.
    pub n_exponent: Option<f64>,
    pub length_exponent: Option<f64>,
    pub expected: (f64, f64),
    /// `(n, t - s, mean |J|)` per cell of the design.
    pub norms: Vec<(usize, f64, f64)>,
    pub skipped: bool,
    pub passed: bool,
}

impl ScalingCheck {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "n,length,mean_abs")?;
        for &(n, len, v) in &self.norms {
            writeln!(out, "{n},{},{}", fmt17(len), fmt17(v))?;
        }
        Ok(())
    }
}

/// Predicted growth exponents of `E|sum_{s <= t_k < t} y_{t_k} f(n^H dx_k)|`
/// in `n` and `t - s` for `f` of Hermite rank `d`.
pub fn expected_scaling(rank: usize, hurst: f64) -> (f64, f64) {
    if rank as f64 > 1.0 / (2.0 * hurst) {
        (0.5, 0.5)
    } else {
        let e = 1.0 - rank as f64 * hurst;
        (e, e)
    }
}

/// Two-way log regression of the empirical `L^1` norm of the weighted
/// `h^n`-sum with weight `y` (the configured process) over the `n` grid and
/// the intervals `[1/2, 1/2 + 2^-j]`, `j = 1..=5`.
pub fn scaling_exponent_check(cfg: &ExperimentConfig, functional: ScalingFunctional) -> Result<ScalingCheck> {
    check_hurst(cfg.hurst)?;
    if cfg.n_grid.len() < 2 || cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("scaling check needs a strictly increasing grid of >= 2 sizes".into()));
    }
    let rank = match functional {
        ScalingFunctional::Hermite(d) if d >= 1 => d,
        ScalingFunctional::Hermite(_) => return Err(Error::Domain("Hermite rank must be at least 1".into())),
        ScalingFunctional::Zero => 1,
    };
    let expected = expected_scaling(rank, cfg.hurst);
    let mut norms = Vec::with_capacity(cfg.n_grid.len() * SCALING_LENGTHS.len());
    for &n in &cfg.n_grid {
        let sampler = FbmSampler::new(cfg.hurst, n, cfg.method)?;
        let seed = derive_seed(cfg.master_seed, n as u64);
        let per_replica = (0..cfg.replicas)
            .into_par_iter()
            .map(|replica| {
                let x = Arc::new(sampler.sample_replica(seed, replica as u64));
                let y = cfg.process.build(x.clone())?;
                SCALING_LENGTHS
                    .iter()
                    .map(|&len| {
                        weighted_h_sum(&x, |u| functional.eval(u), Some(y.level(0)), SCALING_START, SCALING_START + len)
                            .map(f64::abs)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (j, &len) in SCALING_LENGTHS.iter().enumerate() {
            let mean = per_replica.iter().map(|v| v[j]).sum::<f64>() / cfg.replicas as f64;
            norms.push((n, len, mean));
        }
    }
    if norms.iter().all(|&(_, _, v)| v == 0.0) {
        return Ok(ScalingCheck {
            functional,
            n_exponent: None,
            length_exponent: None,
            expected,
            norms,
            skipped: true,
            passed: true,
        });
    }
    if norms.iter().any(|&(_, _, v)| !(v > 0.0)) {
        return Err(Error::Degenerate("some scaling norms vanish".into()));
    }
    let ln_n: Vec<f64> = norms.iter().map(|&(n, _, _)| (n as f64).ln()).collect();
    let ln_len: Vec<f64> = norms.iter().map(|&(_, l, _)| l.ln()).collect();
    let ln_norm: Vec<f64> = norms.iter().map(|&(_, _, v)| v.ln()).collect();
    let fit = ols2(&ln_n, &ln_len, &ln_norm).ok_or_else(|| Error::Degenerate("scaling regression failed".into()))?;
    let tol = cfg.tolerances.scaling;
    let passed = (fit.coef1 - expected.0).abs() <= tol && (fit.coef2 - expected.1).abs() <= tol;
    Ok(ScalingCheck {
        functional,
        n_exponent: Some(fit.coef1),
        length_exponent: Some(fit.coef2),
        expected,
        norms,
        skipped: false,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinCheck {
    pub lower: f64,
    pub upper: f64,
    pub size: usize,
    pub ks: Option<f64>,
    pub threshold: f64,
    pub excluded: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointCheck {
    pub n: usize,
    pub replicas: usize,
    pub corr_end: f64,
    pub corr_mean: f64,
    pub corr_threshold: f64,
    pub bins: Vec<BinCheck>,
    pub passed: bool,
}

/// Mixed-Gaussian diagnostics at the largest `n` of the grid: `z` must be
/// uncorrelated with `x_1` and `int x du` (`|corr| < 3 / sqrt(M)`), and
/// within each quantile bin of `x_1` its KS distance to the standard normal
/// must stay below `1.36 / sqrt(m) + 0.05`. Bins where `cond_std` vanishes
/// are excluded.
pub fn stable_joint_check(cfg: &ExperimentConfig) -> Result<JointCheck> {
    if cfg.regime() == Regime::Subcritical {
        return Err(Error::Regime("conditional Gaussian check needs H >= 1/4".into()));
    }
    if cfg.replicas < MIN_JOINT_REPLICAS {
        return Err(Error::InsufficientReplicas { got: cfg.replicas, needed: MIN_JOINT_REPLICAS });
    }
    let n = *cfg.n_grid.last().ok_or_else(|| Error::Domain("n grid is empty".into()))?;
    let single = ExperimentConfig { n_grid: vec![n], ..cfg.clone() };
    joint_diagnostics(&simulate_replicas(&single)?)
}

/// The diagnostics of [`stable_joint_check`] on already simulated replicas
/// of a single grid size.
pub fn joint_diagnostics(rows: &[ReplicaRow]) -> Result<JointCheck> {
    let n = rows.first().ok_or_else(|| Error::Domain("no replicas".into()))?.n;
    if rows.iter().any(|r| r.n != n) {
        return Err(Error::Domain("joint diagnostics need rows of a single grid size".into()));
    }
    let replicas = rows.len();
    let usable: Vec<&ReplicaRow> = rows.iter().filter(|r| r.z.is_finite()).collect();
    if usable.len() < 3 {
        return Err(Error::Degenerate("fewer than 3 replicas with cond_std > 0".into()));
    }
    let z: Vec<f64> = usable.iter().map(|r| r.z).collect();
    let ends: Vec<f64> = usable.iter().map(|r| r.x_end).collect();
    let means: Vec<f64> = usable.iter().map(|r| r.x_mean).collect();
    let corr_end = correlation(&z, &ends);
    let corr_mean = correlation(&z, &means);
    let corr_threshold = 3.0 / (replicas as f64).sqrt();

    let mut order: Vec<usize> = (0..replicas).collect();
    order.sort_by(|&a, &b| rows[a].x_end.total_cmp(&rows[b].x_end).then(a.cmp(&b)));
    let bins: Vec<BinCheck> = (0..JOINT_BINS)
        .map(|b| {
            let idx = &order[b * replicas / JOINT_BINS..(b + 1) * replicas / JOINT_BINS];
            let lower = rows[idx[0]].x_end;
            let upper = rows[idx[idx.len() - 1]].x_end;
            let zb: Vec<f64> = finite(idx.iter().map(|&i| rows[i].z));
            let threshold = 1.36 / (idx.len() as f64).sqrt() + 0.05;
            if zb.is_empty() {
                return BinCheck { lower, upper, size: idx.len(), ks: None, threshold, excluded: true, passed: true };
            }
            let ks = ks_statistic(&zb, normal_cdf).unwrap_or(f64::INFINITY);
            BinCheck { lower, upper, size: zb.len(), ks: Some(ks), threshold, excluded: false, passed: ks < threshold }
        })
        .collect();
    for bin in bins.iter().filter(|b| b.excluded) {
        log::warn!("bin [{}, {}] excluded: cond_std vanishes", bin.lower, bin.upper);
    }
    let passed = corr_end.abs() < corr_threshold
        && corr_mean.abs() < corr_threshold
        && bins.iter().all(|b| b.passed);
    Ok(JointCheck { n, replicas, corr_end, corr_mean, corr_threshold, bins, passed })
}

impl JointCheck {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "bin,lower,upper,size,ks,threshold,excluded,pass")?;
        for (i, b) in self.bins.iter().enumerate() {
            writeln!(
                out,
                "{i},{},{},{},{},{},{},{}",
                fmt17(b.lower),
                fmt17(b.upper),
                b.size,
                b.ks.map_or_else(String::new, fmt17),
                fmt17(b.threshold),
                b.excluded,
                b.passed
            )?;
        }
        Ok(())
    }
}
