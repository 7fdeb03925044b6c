//! Power variations of controlled paths and the functionals describing their
//! limits.
//!
//! Statistics are taken on a coarse grid of `n` cells while integrals in time
//! use the fine grid the controlled path was built on, `N = n * fine_factor`.
//! Terminal times are snapped down to the coarse grid.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fbm::FbmPath;
use crate::hermite::{c_p, phi_eval, HermiteModel};
use crate::rough::ControlledPath;

/// Fine grid points per coarse cell used when none is given.
pub const DEFAULT_FINE_FACTOR: usize = 16;

const CRITICAL_HURST: f64 = 0.25;
const CRITICAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    #[default]
    Trapezoid,
    /// Cell midpoints, with the path interpolated linearly inside a cell.
    Midpoint,
}

impl FromStr for Quadrature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trapezoid" => Ok(Self::Trapezoid),
            "midpoint" => Ok(Self::Midpoint),
            other => Err(Error::Domain(format!("unknown quadrature '{other}'"))),
        }
    }
}

impl fmt::Display for Quadrature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Trapezoid => "trapezoid",
            Self::Midpoint => "midpoint",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatConfig {
    pub p: f64,
    pub t: f64,
    pub quadrature: Quadrature,
    pub fine_factor: usize,
}

impl StatConfig {
    pub fn new(p: f64, t: f64, fine_factor: usize) -> Result<Self> {
        let cfg = Self { p, t, quadrature: Quadrature::Trapezoid, fine_factor };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_quadrature(mut self, quadrature: Quadrature) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) {
            return Err(Error::Domain(format!("p must be at least 1, got {}", self.p)));
        }
        if !(self.t > 0.0 && self.t <= 1.0) {
            return Err(Error::Domain(format!("t must lie in (0, 1], got {}", self.t)));
        }
        if self.fine_factor == 0 {
            return Err(Error::Domain("fine_factor must be positive".into()));
        }
        Ok(())
    }

    /// Coarse cell count for a path built on `fine_n` cells.
    pub fn coarse_n(&self, fine_n: usize) -> Result<usize> {
        if fine_n % self.fine_factor != 0 || fine_n < self.fine_factor {
            return Err(Error::Domain(format!(
                "fine grid of {fine_n} cells is not a multiple of fine_factor {}",
                self.fine_factor
            )));
        }
        Ok(fine_n / self.fine_factor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `H > 1/4`
    Supercritical,
    /// `H = 1/4`
    Critical,
    /// `H < 1/4`
    Subcritical,
}

impl Regime {
    pub fn of(hurst: f64) -> Self {
        if (hurst - CRITICAL_HURST).abs() < CRITICAL_TOL {
            Self::Critical
        } else if hurst > CRITICAL_HURST {
            Self::Supercritical
        } else {
            Self::Subcritical
        }
    }

    /// `n^{rate}` normalises `U^n`.
    pub fn rate_exponent(self, hurst: f64) -> f64 {
        match self {
            Self::Subcritical => 2.0 * hurst,
            _ => 0.5,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Supercritical => "supercritical",
            Self::Critical => "critical",
            Self::Subcritical => "subcritical",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Limit of `n^{rate} U^n_t` given the driving path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitSpec {
    pub regime: Regime,
    pub rate_exponent: f64,
    /// Deterministic part (zero above the critical point).
    pub drift: f64,
    /// Conditional standard deviation of the Gaussian part (zero below).
    pub cond_std: f64,
}

/// Index of the last grid point not after `t` on a grid of `n` cells.
pub fn snap_index(n: usize, t: f64) -> usize {
    let k = (n as f64 * t + 1e-9).floor();
    (k.max(0.0) as usize).min(n)
}

/// `sum_{t_k < t} |dy_k|^p` on the grid of `values`.
pub fn power_variation(values: &[f64], p: f64, t: f64) -> f64 {
    let n = values.len().saturating_sub(1);
    let end = snap_index(n, t);
    values[..=end].windows(2).map(|w| (w[1] - w[0]).abs().powf(p)).sum()
}

/// Fine-grid quadrature of `g(levels at u)` over `[0, t]`. With
/// [`Quadrature::Midpoint`] the levels are interpolated to cell midpoints
/// before `g` is applied.
fn integrate_levels<G>(cp: &ControlledPath, used: &[usize], g: G, cells: usize, rule: Quadrature) -> Result<f64>
where
    G: Fn(&[f64]) -> Result<f64>,
{
    let n = cp.n();
    let mut buf = vec![0.0; cp.ell()];
    let mut at = |k: usize, frac: f64| -> Result<f64> {
        for &i in used {
            let lvl = cp.level(i);
            buf[i] = if frac == 0.0 { lvl[k] } else { lvl[k] + frac * (lvl[k + 1] - lvl[k]) };
        }
        g(&buf)
    };
    match rule {
        Quadrature::Trapezoid => {
            if cells == 0 {
                return Ok(0.0);
            }
            let mut acc = 0.5 * (at(0, 0.0)? + at(cells, 0.0)?);
            for k in 1..cells {
                acc += at(k, 0.0)?;
            }
            Ok(acc / n as f64)
        }
        Quadrature::Midpoint => {
            let mut acc = 0.0;
            for k in 0..cells {
                acc += at(k, 0.5)?;
            }
            Ok(acc / n as f64)
        }
    }
}

fn level_or_zero_warn(cp: &ControlledPath, needed: usize, what: &str) -> Vec<usize> {
    if cp.ell() < needed {
        log::warn!(
            "controlled path has {} levels; {what} treats levels >= {} as zero",
            cp.ell(),
            cp.ell()
        );
    }
    (0..cp.ell().min(needed)).collect()
}

fn fine_cells(cp: &ControlledPath, cfg: &StatConfig) -> Result<(usize, usize)> {
    cfg.validate()?;
    let n = cfg.coarse_n(cp.n())?;
    let end = snap_index(n, cfg.t);
    Ok((n, end * cfg.fine_factor))
}

/// `U^n_t = n^{pH-1} sum_{t_k < t} |dy_k|^p - c_p int_0^t |y'_u|^p du`, the
/// sum on the coarse grid and the integral by quadrature on the fine grid.
pub fn u_statistic(cp: &ControlledPath, cfg: &StatConfig) -> Result<f64> {
    if cp.ell() < 2 {
        return Err(Error::Domain("u_statistic needs the first derivative level".into()));
    }
    let (n, cells) = fine_cells(cp, cfg)?;
    let p = cfg.p;
    let coarse: Vec<f64> = cp.level(0).iter().step_by(cfg.fine_factor).copied().collect();
    let pvar = power_variation(&coarse, p, cfg.t);
    let scale = (n as f64).powf(p * cp.hurst() - 1.0);
    let comp = integrate_levels(cp, &[1], |l| Ok(l[1].abs().powf(p)), cells, cfg.quadrature)?;
    Ok(scale * pvar - c_p(p)? * comp)
}

/// `-c_p/8 int phi''(y') (y'')^2 du + (p-2) c_p/24 int phi'(y') y''' du`.
/// Missing levels count as zero.
pub fn limit_drift(cp: &ControlledPath, cfg: &StatConfig) -> Result<f64> {
    let (_, cells) = fine_cells(cp, cfg)?;
    let used = level_or_zero_warn(cp, 4, "limit_drift");
    let ell = used.len();
    if ell < 3 {
        return Ok(0.0);
    }
    let p = cfg.p;
    let cp_const = c_p(p)?;
    let all_zero = |i: usize| i >= ell || cp.level(i).iter().all(|&v| v == 0.0);
    if all_zero(2) && all_zero(3) {
        return Ok(0.0);
    }
    integrate_levels(
        cp,
        &used,
        |l| {
            let y1 = l[1];
            let y2 = l[2];
            let mut v = -cp_const / 8.0 * phi_eval(p, 2, y1)? * y2 * y2;
            if ell > 3 && p != 2.0 {
                v += (p - 2.0) * cp_const / 24.0 * phi_eval(p, 1, y1)? * l[3];
            }
            Ok(v)
        },
        cells,
        cfg.quadrature,
    )
}

/// `sigma (int_0^t |y'_u|^{2p} du)^{1/2}` for `H >= 1/4`.
pub fn limit_cond_std(cp: &ControlledPath, cfg: &StatConfig, model: &HermiteModel) -> Result<f64> {
    if Regime::of(model.hurst) == Regime::Subcritical {
        return Err(Error::Regime(format!(
            "no Gaussian fluctuation below H = 1/4 (H = {})",
            model.hurst
        )));
    }
    if model.p != cfg.p {
        return Err(Error::Domain(format!("constants for p = {} used with p = {}", model.p, cfg.p)));
    }
    if cp.ell() < 2 {
        return Err(Error::Domain("limit_cond_std needs the first derivative level".into()));
    }
    let (_, cells) = fine_cells(cp, cfg)?;
    let p = cfg.p;
    let integral = integrate_levels(cp, &[1], |l| Ok(l[1].abs().powf(2.0 * p)), cells, cfg.quadrature)?;
    Ok(model.sigma() * integral.max(0.0).sqrt())
}

/// Regime, rate and both limit functionals. `model` is only consulted above
/// the critical point or at it.
pub fn limit_spec(cp: &ControlledPath, cfg: &StatConfig, model: Option<&HermiteModel>) -> Result<LimitSpec> {
    let hurst = cp.hurst();
    let regime = Regime::of(hurst);
    let rate_exponent = regime.rate_exponent(hurst);
    let gaussian = |m: Option<&HermiteModel>| -> Result<f64> {
        let m = m.ok_or_else(|| Error::Domain("Hermite constants required for H >= 1/4".into()))?;
        limit_cond_std(cp, cfg, m)
    };
    let (drift, cond_std) = match regime {
        Regime::Supercritical => (0.0, gaussian(model)?),
        Regime::Critical => (limit_drift(cp, cfg)?, gaussian(model)?),
        Regime::Subcritical => (limit_drift(cp, cfg)?, 0.0),
    };
    Ok(LimitSpec { regime, rate_exponent, drift, cond_std })
}

fn index_range(n: usize, s: f64, t: f64) -> Result<std::ops::Range<usize>> {
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) || s > t {
        return Err(Error::Domain(format!("need 0 <= s <= t <= 1, got s = {s}, t = {t}")));
    }
    let start = ((n as f64 * s) - 1e-9).ceil().max(0.0) as usize;
    let end = snap_index(n, t);
    Ok(start.min(end)..end)
}

/// `sum_{s <= t_k < t} w_{t_k} f(n^H dx_k)` on the grid of `x`; `weight`
/// defaults to 1.
pub fn weighted_h_sum<F: Fn(f64) -> f64>(
    x: &FbmPath,
    f: F,
    weight: Option<&[f64]>,
    s: f64,
    t: f64,
) -> Result<f64> {
    let n = x.n();
    if let Some(w) = weight {
        if w.len() != n + 1 {
            return Err(Error::Domain(format!("weight has {} values, grid has {}", w.len(), n + 1)));
        }
    }
    let scale = (n as f64).powf(x.hurst());
    let xs = x.values();
    Ok(index_range(n, s, t)?
        .map(|k| weight.map_or(1.0, |w| w[k]) * f(scale * (xs[k + 1] - xs[k])))
        .sum())
}

/// `(1/n) sum_{t_k < t} y_{t_k} - int_0^t y du`.
pub fn riemann_error(cp: &ControlledPath, cfg: &StatConfig) -> Result<f64> {
    let (n, cells) = fine_cells(cp, cfg)?;
    let y = cp.level(0);
    let end = cells / cfg.fine_factor;
    let left: f64 = (0..end).map(|k| y[k * cfg.fine_factor]).sum::<f64>() / n as f64;
    let integral = integrate_levels(cp, &[0], |l| Ok(l[0]), cells, cfg.quadrature)?;
    Ok(left - integral)
}

/// `sum_{t_k < t} y_{t_k} int_{t_k}^{t_{k+1}} (x_u - x_{t_k}) du`, the inner
/// integral by the midpoint rule on the fine grid.
pub fn riemann_correction_sum(cp: &ControlledPath, cfg: &StatConfig) -> Result<f64> {
    if cp.hurst() >= 0.5 {
        return Err(Error::Domain(format!("riemann_correction_sum needs H < 1/2, got {}", cp.hurst())));
    }
    if cp.ell() < 2 {
        return Err(Error::Domain("riemann_correction_sum needs two levels".into()));
    }
    let (_, cells) = fine_cells(cp, cfg)?;
    let ff = cfg.fine_factor;
    let fine_h = 1.0 / cp.n() as f64;
    let xs = cp.x().values();
    let y = cp.level(0);
    let mut total = 0.0;
    for k in 0..cells / ff {
        let base = k * ff;
        let x0 = xs[base];
        let inner: f64 = (base..base + ff)
            .map(|j| 0.5 * (xs[j] + xs[j + 1]) - x0)
            .sum::<f64>()
            * fine_h;
        total += y[base] * inner;
    }
    Ok(total)
}

/// `sum_{t_k < t} w_{t_k} (|n^H dx_k|^p - c_p)`, unnormalised.
pub fn weighted_pvar_sum(weight: &[f64], x: &FbmPath, p: f64, t: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("p must be at least 1, got {p}")));
    }
    let cp = c_p(p)?;
    weighted_h_sum(x, |u| u.abs().powf(p) - cp, Some(weight), 0.0, t)
}
