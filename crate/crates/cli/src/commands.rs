//! Subcommand execution and run-directory layout.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use roughpvar::fbm::FbmSampler;
use roughpvar::harness::{joint_diagnostics, rate_fit, run_regime_check, scaling_exponent_check, ExperimentResult, ScalingFunctional, MIN_JOINT_REPLICAS};
use roughpvar::hermite::{c_p, HermiteModel};
use roughpvar::io::fmt17;
use roughpvar::stats::{limit_cond_std, limit_drift, power_variation, u_statistic, Regime};

use crate::config::{RunConfig, Subcommand};
use crate::CliError;

pub const MANIFEST: &str = "manifest.txt";

/// Files written next to the manifest.
pub fn output_files(cfg: &RunConfig) -> Vec<&'static str> {
    match cfg.subcommand {
        Subcommand::Simulate => vec!["path.csv", "levels.csv"],
        Subcommand::Constants => vec!["constants.csv"],
        Subcommand::Pvar => vec!["pvar.csv"],
        Subcommand::LimitCheck if joint_enabled(cfg) => vec!["results.csv", "summary.csv", "joint.csv"],
        Subcommand::LimitCheck => vec!["results.csv", "summary.csv"],
        Subcommand::RateFit => vec!["results.csv", "summary.csv", "plot.csv"],
        Subcommand::ScalingCheck => vec!["scaling.csv", "scaling_summary.csv"],
    }
}

fn joint_enabled(cfg: &RunConfig) -> bool {
    Regime::of(cfg.hurst) != Regime::Subcritical && cfg.replicas >= MIN_JOINT_REPLICAS
}

/// Manifest text: the resolved configuration plus the output list.
pub fn manifest_text(cfg: &RunConfig) -> String {
    let mut text = String::new();
    for (k, v) in cfg.to_pairs() {
        text.push_str(&format!("{k}={v}\n"));
    }
    text.push_str(&format!("outputs={}\n", output_files(cfg).join(",")));
    text
}

/// Collects named CSV outputs; each goes to the run directory when one is
/// given and the primary one is echoed to stdout.
struct Outputs<'a> {
    dir: Option<&'a Path>,
}

impl Outputs<'_> {
    fn emit<F>(&self, name: &str, echo: Option<&mut dyn Write>, write: F) -> Result<(), CliError>
    where
        F: Fn(&mut dyn Write) -> std::io::Result<()>,
    {
        if let Some(dir) = self.dir {
            let mut f = BufWriter::new(File::create(dir.join(name))?);
            write(&mut f)?;
            f.flush()?;
        }
        if let Some(out) = echo {
            write(out)?;
        }
        Ok(())
    }
}

/// Runs one subcommand. Returns whether its acceptance check passed
/// (always `true` for subcommands without one).
pub fn dispatch(cfg: &RunConfig, out_dir: Option<&Path>, stdout: &mut dyn Write) -> Result<bool, CliError> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(MANIFEST), manifest_text(cfg))?;
    }
    let outputs = Outputs { dir: out_dir };
    match cfg.subcommand {
        Subcommand::Simulate => simulate(cfg, &outputs, stdout),
        Subcommand::Constants => constants(cfg, &outputs, stdout),
        Subcommand::Pvar => pvar(cfg, &outputs, stdout),
        Subcommand::LimitCheck => limit_check(cfg, &outputs, stdout),
        Subcommand::RateFit => rate(cfg, &outputs, stdout),
        Subcommand::ScalingCheck => scaling(cfg, &outputs, stdout),
    }
}

fn simulate(cfg: &RunConfig, outputs: &Outputs, stdout: &mut dyn Write) -> Result<bool, CliError> {
    let sampler = FbmSampler::new(cfg.hurst, cfg.n[0], cfg.method)?;
    let path = Arc::new(sampler.sample_replica(cfg.seed, 0));
    let levels = cfg.process.build(path.clone())?;
    outputs.emit("path.csv", Some(stdout), |w| path.write_csv(w))?;
    outputs.emit("levels.csv", None, |w| levels.write_csv(w))?;
    Ok(true)
}

fn constants(cfg: &RunConfig, outputs: &Outputs, stdout: &mut dyn Write) -> Result<bool, CliError> {
    let model = HermiteModel::new(cfg.p, cfg.hurst, cfg.truncation)?;
    let (p, h) = (fmt17(cfg.p), fmt17(cfg.hurst));
    let mut rows = vec![format!("c_p,{p},{h},{},", fmt17(c_p(cfg.p)?))];
    for (q, a) in model.coeffs.iter().enumerate() {
        rows.push(format!("a_{},{p},{h},{},", 2 * (q + 1), fmt17(*a)));
    }
    rows.push(format!("sigma_sq,{p},{h},{},{}", fmt17(model.sigma_sq), fmt17(model.tail_estimate)));
    outputs.emit("constants.csv", Some(stdout), |w| {
        writeln!(w, "name,p,H,value,tail_estimate")?;
        rows.iter().try_for_each(|r| writeln!(w, "{r}"))
    })?;
    Ok(true)
}

fn pvar(cfg: &RunConfig, outputs: &Outputs, stdout: &mut dyn Write) -> Result<bool, CliError> {
    let exp = cfg.experiment();
    let stat_cfg = exp.stat_config()?;
    let n = cfg.n[0];
    let sampler = FbmSampler::new(cfg.hurst, n * cfg.fine_factor, cfg.method)?;
    let x = Arc::new(sampler.sample_replica(cfg.seed, 0));
    let cp = cfg.process.build(x)?;
    let coarse: Vec<f64> = cp.level(0).iter().step_by(cfg.fine_factor).copied().collect();
    let pv = power_variation(&coarse, cfg.p, cfg.t);
    let u = u_statistic(&cp, &stat_cfg)?;
    let drift = limit_drift(&cp, &stat_cfg)?;
    let cond_std = match Regime::of(cfg.hurst) {
        Regime::Subcritical => 0.0,
        _ => limit_cond_std(&cp, &stat_cfg, &HermiteModel::new(cfg.p, cfg.hurst, cfg.truncation)?)?,
    };
    let row = format!(
        "{n},{},{},{},{},{},{}",
        fmt17(cfg.p),
        fmt17(cfg.hurst),
        fmt17(pv),
        fmt17(u),
        fmt17(drift),
        fmt17(cond_std)
    );
    outputs.emit("pvar.csv", Some(stdout), |w| {
        writeln!(w, "n,p,H,pvar,u_stat,drift,cond_std")?;
        writeln!(w, "{row}")
    })?;
    Ok(true)
}

fn emit_experiment(res: &ExperimentResult, outputs: &Outputs, stdout: &mut dyn Write) -> Result<(), CliError> {
    outputs.emit("results.csv", None, |w| res.write_results_csv(w))?;
    outputs.emit("summary.csv", Some(stdout), |w| res.write_summary_csv(w))?;
    if !res.guaranteed {
        log::warn!("{}: parameters outside the guaranteed range; result is unguaranteed", res.experiment_id);
    }
    Ok(())
}

fn limit_check(cfg: &RunConfig, outputs: &Outputs, stdout: &mut dyn Write) -> Result<bool, CliError> {
    let res = run_regime_check(&cfg.experiment(), &cfg.experiment_id)?;
    emit_experiment(&res, outputs, stdout)?;
    if joint_enabled(cfg) {
        let n = *cfg.n.last().expect("validated non-empty grid");
        let rows: Vec<_> = res.rows_for(n).copied().collect();
        let joint = joint_diagnostics(&rows)?;
        log::info!(
            "joint check at n={n}: corr(z, x_1) = {:.4}, corr(z, int x) = {:.4}, threshold {:.4}, pass {}",
            joint.corr_end,
            joint.corr_mean,
            joint.corr_threshold,
            joint.passed
        );
        outputs.emit("joint.csv", None, |w| joint.write_csv(w))?;
    }
    Ok(res.passed)
}

fn rate(cfg: &RunConfig, outputs: &Outputs, stdout: &mut dyn Write) -> Result<bool, CliError> {
    let res = rate_fit(&cfg.experiment(), &cfg.experiment_id)?;
    emit_experiment(&res, outputs, stdout)?;
    outputs.emit("plot.csv", None, |w| res.write_plot_csv(w))?;
    Ok(res.passed)
}

fn scaling(cfg: &RunConfig, outputs: &Outputs, stdout: &mut dyn Write) -> Result<bool, CliError> {
    let functional = if cfg.rank == 0 { ScalingFunctional::Zero } else { ScalingFunctional::Hermite(cfg.rank) };
    let check = scaling_exponent_check(&cfg.experiment(), functional)?;
    outputs.emit("scaling.csv", None, |w| check.write_csv(w))?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, fmt17);
    outputs.emit("scaling_summary.csv", Some(stdout), |w| {
        writeln!(w, "experiment_id,rank,n_exponent,length_exponent,expected_n,expected_length,skipped,pass")?;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            cfg.experiment_id,
            cfg.rank,
            opt(check.n_exponent),
            opt(check.length_exponent),
            fmt17(check.expected.0),
            fmt17(check.expected.1),
            check.skipped,
            check.passed
        )
    })?;
    Ok(check.passed)
}
