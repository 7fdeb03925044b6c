//! Paths controlled by a fractional Brownian motion.
//!
//! A controlled path carries levels `y^(0) = y, y^(1) = y', ..., y^(l-1)` on
//! the grid of its driver `x`, with remainders
//!
//! ```text
//! r^(k)_{st} = dy^(k)_{st} - sum_{j=1}^{l-1-k} y^(k+j)_s x^j_{st},   x^j_{st} = (dx_{st})^j / j!
//! ```
//!
//! Constructions cover functions of `x`, compositions `f(y)`, rough integrals
//! `int z dx` and Taylor-scheme solutions of `dy = b(y) dt + V(y) dx`. All of
//! them work on the driver's grid and can subsample to a coarser one.

use std::io::{self, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fbm::{power_increment_value, FbmPath};
use crate::io::fmt17;
use crate::regression::ols;

/// Guard for [`solve_rde`].
pub const BLOW_UP_LIMIT: f64 = 1e12;
/// Windows inspected per lag by [`check_controlled`].
pub const CONTROL_WINDOWS: usize = 16;

type DerivFn = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// A scalar function together with its derivatives `f, f', ..., f^(L-1)`.
#[derive(Clone)]
pub struct FunctionFamily {
    eval: DerivFn,
    available: usize,
}

impl std::fmt::Debug for FunctionFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FunctionFamily").field("available", &self.available).finish()
    }
}

impl FunctionFamily {
    /// Family from explicit derivative closures, `derivs[j] = f^(j)`.
    pub fn from_derivatives(derivs: Vec<Arc<dyn Fn(f64) -> f64 + Send + Sync>>) -> Self {
        let available = derivs.len();
        Self { eval: Arc::new(move |j, x| derivs[j](x)), available }
    }

    /// Infinitely differentiable family given by `eval(j, x) = f^(j)(x)`.
    pub fn smooth<F>(eval: F) -> Self
    where
        F: Fn(usize, f64) -> f64 + Send + Sync + 'static,
    {
        Self { eval: Arc::new(eval), available: usize::MAX }
    }

    /// Polynomial `sum_i coeffs[i] x^i`.
    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        Self::smooth(move |j, x| {
            let mut acc = 0.0;
            for i in (j..coeffs.len()).rev() {
                let falling: f64 = (0..j).map(|m| (i - m) as f64).product();
                acc = acc * x + coeffs[i] * falling;
            }
            acc
        })
    }

    pub fn constant(c: f64) -> Self {
        Self::polynomial(vec![c])
    }

    pub fn zero() -> Self {
        Self::polynomial(vec![])
    }

    pub fn identity() -> Self {
        Self::polynomial(vec![0.0, 1.0])
    }

    /// `a + b y`.
    pub fn affine(a: f64, b: f64) -> Self {
        Self::polynomial(vec![a, b])
    }

    pub fn exp() -> Self {
        Self::smooth(|_, x| x.exp())
    }

    /// Number of derivative orders available (`usize::MAX` when unbounded).
    pub fn available(&self) -> usize {
        self.available
    }

    pub fn eval(&self, j: usize, x: f64) -> Result<f64> {
        if j >= self.available {
            return Err(Error::InsufficientDerivatives { needed: j + 1, available: self.available });
        }
        Ok((self.eval)(j, x))
    }

    fn require(&self, needed: usize) -> Result<()> {
        if self.available < needed {
            Err(Error::InsufficientDerivatives { needed, available: self.available })
        } else {
            Ok(())
        }
    }

    /// Taylor coefficients `f^(j)(x) / j!` for `j < len`.
    fn jet(&self, x: f64, len: usize) -> Vec<f64> {
        let mut fact = 1.0;
        (0..len)
            .map(|j| {
                if j > 0 {
                    fact *= j as f64;
                }
                (self.eval)(j, x) / fact
            })
            .collect()
    }
}

/// `[V, L_V V, L_V^2 V, ...](y)` with `count` entries, where `L_V f = V f'`.
pub fn lie_iterates(v: &FunctionFamily, count: usize, y: f64) -> Result<Vec<f64>> {
    if count == 0 {
        return Ok(vec![]);
    }
    v.require(count)?;
    let v_jet = v.jet(y, count);
    let mut g = v_jet.clone();
    let mut out = Vec::with_capacity(count);
    out.push(g[0]);
    for _ in 1..count {
        let len = g.len() - 1;
        let dg: Vec<f64> = (0..len).map(|j| (j + 1) as f64 * g[j + 1]).collect();
        g = (0..len)
            .map(|r| (0..=r).map(|j| v_jet[j] * dg[r - j]).sum())
            .collect();
        out.push(g[0]);
    }
    Ok(out)
}

/// 2-increment `(s, t) -> f_t - f_s` over grid indices.
pub fn delta_1(f: &[f64]) -> impl Fn(usize, usize) -> f64 + '_ {
    move |s, t| f[t] - f[s]
}

/// 3-increment `(s, u, t) -> g_{st} - g_{su} - g_{ut}`.
pub fn delta_2<G: Fn(usize, usize) -> f64>(g: G) -> impl Fn(usize, usize, usize) -> f64 {
    move |s, u, t| g(s, t) - g(s, u) - g(u, t)
}

/// `J_s^t(f, g) = sum_{s <= k < t} f_{s k} g_{k, k+1}` over grid indices.
pub fn discrete_integral_2inc<F, G>(f: F, g: G, s: usize, t: usize) -> f64
where
    F: Fn(usize, usize) -> f64,
    G: Fn(usize, usize) -> f64,
{
    (s..t).map(|k| f(s, k) * g(k, k + 1)).sum()
}

/// `J_s^t(f, g) = sum_{s <= k < t} f_k g_{k, k+1}` for a path `f`.
pub fn discrete_integral_path<G>(f: &[f64], g: G, s: usize, t: usize) -> f64
where
    G: Fn(usize, usize) -> f64,
{
    (s..t).map(|k| f[k] * g(k, k + 1)).sum()
}

/// Levels of a path controlled by the fBm `x`, on the grid of `x`.
///
/// Levels are stored unshifted. `offsets[i] = y^(i)_0` is recorded so that
/// [`ControlledPath::normalized`] exposes the zero-start convention.
#[derive(Debug, Clone)]
pub struct ControlledPath {
    x: Arc<FbmPath>,
    levels: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

impl ControlledPath {
    pub fn new(x: Arc<FbmPath>, levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Domain("a controlled path needs at least one level".into()));
        }
        let len = x.n() + 1;
        if let Some(bad) = levels.iter().position(|l| l.len() != len) {
            return Err(Error::Domain(format!(
                "level {bad} has {} values, grid has {len}",
                levels[bad].len()
            )));
        }
        let offsets = levels.iter().map(|l| l[0]).collect();
        Ok(Self { x, levels, offsets })
    }

    /// `(x, 1, 0, ..., 0)` with `ell` levels.
    pub fn identity(x: Arc<FbmPath>, ell: usize) -> Result<Self> {
        let len = x.n() + 1;
        let mut levels = vec![x.values().to_vec()];
        for i in 1..ell {
            levels.push(vec![if i == 1 { 1.0 } else { 0.0 }; len]);
        }
        Self::new(x, levels)
    }

    pub fn ell(&self) -> usize {
        self.levels.len()
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn hurst(&self) -> f64 {
        self.x.hurst()
    }

    pub fn x(&self) -> &Arc<FbmPath> {
        &self.x
    }

    /// Unshifted values of level `i`.
    pub fn level(&self, i: usize) -> &[f64] {
        &self.levels[i]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn offset(&self, i: usize) -> f64 {
        self.offsets[i]
    }

    /// `y^(i)_{t_k} - y^(i)_0`.
    pub fn normalized(&self, i: usize, k: usize) -> f64 {
        self.levels[i][k] - self.offsets[i]
    }

    /// First `ell` levels.
    pub fn truncate(&self, ell: usize) -> Result<Self> {
        if ell == 0 || ell > self.ell() {
            return Err(Error::Index(format!("cannot truncate {} levels to {ell}", self.ell())));
        }
        Self::new(self.x.clone(), self.levels[..ell].to_vec())
    }

    /// Same path on the grid with `n / stride` cells.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        let x = Arc::new(self.x.subsample(stride)?);
        let levels = self
            .levels
            .iter()
            .map(|l| l.iter().step_by(stride).copied().collect())
            .collect();
        Self::new(x, levels)
    }

    fn check_pair(&self, s: usize, t: usize) -> Result<()> {
        if s > t || t > self.n() {
            return Err(Error::Index(format!("grid pair ({s}, {t}) invalid for n = {}", self.n())));
        }
        Ok(())
    }

    /// Remainder `r^(k)_{st}` between grid indices `s <= t`.
    pub fn remainder(&self, k: usize, s: usize, t: usize) -> Result<f64> {
        if k >= self.ell() {
            return Err(Error::Index(format!("level {k} out of range for ell = {}", self.ell())));
        }
        self.check_pair(s, t)?;
        Ok(self.remainder_unchecked(k, s, t))
    }

    fn remainder_unchecked(&self, k: usize, s: usize, t: usize) -> f64 {
        let dx = self.x.values()[t] - self.x.values()[s];
        let y = &self.levels;
        let mut r = y[k][t] - y[k][s];
        for j in 1..self.ell() - k {
            r -= y[k + j][s] * power_increment_value(dx, j as u32);
        }
        r
    }

    /// `delta r^(0)_{sut} - sum_{i=1}^{l-1} r^(i)_{su} x^i_{ut}`, which vanishes
    /// identically for every controlled path.
    pub fn lemma_dr_check(&self, s: usize, u: usize, t: usize) -> Result<f64> {
        if !(s < u && u < t) {
            return Err(Error::Index(format!("need s < u < t, got ({s}, {u}, {t})")));
        }
        self.check_pair(s, t)?;
        let r0 = |a, b| self.remainder_unchecked(0, a, b);
        let dr = delta_2(r0)(s, u, t);
        let dx_ut = self.x.values()[t] - self.x.values()[u];
        let rhs: f64 = (1..self.ell())
            .map(|i| self.remainder_unchecked(i, s, u) * power_increment_value(dx_ut, i as u32))
            .sum();
        Ok(dr - rhs)
    }

    /// Largest absolute value over all levels and the driver.
    pub fn magnitude(&self) -> f64 {
        self.levels
            .iter()
            .flatten()
            .chain(self.x.values())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// CSV with header `t,y0,...,y{ell-1}` (unshifted values).
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header: Vec<String> = (0..self.ell()).map(|i| format!("y{i}")).collect();
        writeln!(out, "t,{}", header.join(","))?;
        for k in 0..=self.n() {
            let row: Vec<String> = self.levels.iter().map(|l| fmt17(l[k])).collect();
            writeln!(out, "{},{}", fmt17(self.x.time(k)), row.join(","))?;
        }
        Ok(())
    }
}

/// Levels `z^(i) = L_V^i V (x)`, `i < ell`.
pub fn construct_function_of_fbm(
    v: &FunctionFamily,
    ell: usize,
    x: Arc<FbmPath>,
) -> Result<ControlledPath> {
    if ell == 0 {
        return Err(Error::Domain("ell must be positive".into()));
    }
    v.require(ell)?;
    let mut levels = vec![Vec::with_capacity(x.n() + 1); ell];
    for &xv in x.values() {
        for (lvl, val) in levels.iter_mut().zip(lie_iterates(v, ell, xv)?) {
            lvl.push(val);
        }
    }
    ControlledPath::new(x, levels)
}

/// Levels of `f(y)` by the multinomial (Faa di Bruno) formula; the result has
/// `min(L, ell)` levels.
pub fn compose(f: &FunctionFamily, cp: &ControlledPath) -> Result<ControlledPath> {
    f.require(1)?;
    let m = f.available().min(cp.ell());
    let len = cp.n() + 1;
    let mut out = vec![vec![0.0; len]; m];
    // bell[i][r] = sum over j_1+..+j_i = r of r!/(j_1!..j_i!) prod y^(j).
    let binom = binomials(m);
    let mut bell = vec![vec![0.0; m]; m];
    for k in 0..len {
        let y = |j: usize| cp.levels[j][k];
        out[0][k] = f.eval(0, y(0))?;
        if m == 1 {
            continue;
        }
        for r in 1..m {
            bell[1][r] = y(r);
        }
        for i in 2..m {
            for r in 0..m {
                bell[i][r] = 0.0;
            }
            for r in i..m {
                let mut acc = 0.0;
                for j in 1..=r + 1 - i {
                    acc += binom[r][j] * y(j) * bell[i - 1][r - j];
                }
                bell[i][r] = acc;
            }
        }
        let mut fact = 1.0;
        let derivs: Vec<f64> = (1..m)
            .map(|i| {
                fact *= i as f64;
                f.eval(i, y(0)).map(|d| d / fact)
            })
            .collect::<Result<_>>()?;
        for (r, slot) in out.iter_mut().enumerate().skip(1) {
            let mut z = 0.0;
            for i in 1..=r {
                z += derivs[i - 1] * bell[i][r];
            }
            slot[k] = z;
        }
    }
    ControlledPath::new(cp.x.clone(), out)
}

fn binomials(m: usize) -> Vec<Vec<f64>> {
    let mut c = vec![vec![0.0; m + 1]; m + 1];
    for r in 0..=m {
        c[r][0] = 1.0;
        for j in 1..=r {
            c[r][j] = c[r - 1][j - 1] + if j < r { c[r - 1][j] } else { 0.0 };
        }
    }
    c
}

fn check_refine(n: usize, refine: usize) -> Result<()> {
    if refine == 0 {
        return Err(Error::Domain("refinement must be at least 1".into()));
    }
    if n % refine != 0 || n / refine < 2 {
        return Err(Error::Domain(format!(
            "refinement {refine} must divide the driver grid n = {n} into >= 2 cells"
        )));
    }
    Ok(())
}

/// Rough integral `y = int_0^. z dx` by compensated sums
/// `dy = sum_{i=1}^{l} z^(i-1) x^i` on the driver grid, returned on the grid
/// coarsened by `refine` with levels `(y, z^(0), ..., z^(l-1))`.
pub fn rough_integral(z: &ControlledPath, refine: usize) -> Result<ControlledPath> {
    let n = z.n();
    check_refine(n, refine)?;
    let ell = z.ell();
    let h = z.hurst();
    if (ell as f64) * h + h <= 1.0 {
        log::warn!("rough integral with {ell} levels at H={h}: need (ell + 1) H > 1 for convergence");
    }
    let xs = z.x.values();
    let mut y = Vec::with_capacity(n + 1);
    y.push(0.0);
    let mut acc = 0.0;
    for k in 0..n {
        let dx = xs[k + 1] - xs[k];
        for i in 1..=ell {
            acc += z.levels[i - 1][k] * power_increment_value(dx, i as u32);
        }
        y.push(acc);
    }
    let mut levels = Vec::with_capacity(ell + 1);
    levels.push(y);
    levels.extend(z.levels.iter().cloned());
    ControlledPath::new(z.x.clone(), levels)?.subsample(refine)
}

/// Taylor scheme for `dy = b(y) dt + V(y) dx` on the grid of `x`:
/// `y <- y + b(y) h + sum_{i=1}^{l-1} L_V^{i-1} V(y) x^i`, with levels
/// `y^(i) = L_V^{i-1} V(y)`; the result is coarsened by `refine`.
pub fn solve_rde(
    b: &FunctionFamily,
    v: &FunctionFamily,
    y0: f64,
    x: Arc<FbmPath>,
    ell: usize,
    refine: usize,
) -> Result<ControlledPath> {
    if ell == 0 {
        return Err(Error::Domain("ell must be positive".into()));
    }
    let n = x.n();
    check_refine(n, refine)?;
    b.require(1)?;
    v.require(ell - 1)?;
    let step = 1.0 / n as f64;
    let xs = x.values();
    let mut levels = vec![Vec::with_capacity(n + 1); ell];
    let mut y = y0;
    for k in 0..=n {
        let iter = lie_iterates(v, ell - 1, y)?;
        levels[0].push(y);
        for (lvl, val) in levels[1..].iter_mut().zip(&iter) {
            lvl.push(*val);
        }
        if k == n {
            break;
        }
        let dx = xs[k + 1] - xs[k];
        let mut next = y + b.eval(0, y)? * step;
        for (i, coef) in iter.iter().enumerate() {
            next += coef * power_increment_value(dx, (i + 1) as u32);
        }
        if !next.is_finite() || next.abs() > BLOW_UP_LIMIT {
            return Err(Error::BlowUp { step: k + 1, value: next });
        }
        y = next;
    }
    ControlledPath::new(x, levels)?.subsample(refine)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlledCheck {
    /// Fitted exponent of `max |r^(k)_{s,s+h}|` against `h`, per level.
    pub slopes: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub passed: Vec<bool>,
}

impl ControlledCheck {
    pub fn all_passed(&self) -> bool {
        self.passed.iter().all(|&p| p)
    }
}

/// Log-log regression of the worst remainder over dyadic lags `h = 2^j / n`.
///
/// For every lag the same windows are inspected: `[s, s + h]` with `s` on the
/// grid `0, L, 2L, ...`, where `L = n / 16` is the largest lag. A fixed window
/// count keeps the maximum comparable across lags. Level `k` passes when its
/// slope is at least `(l - k)(H - eps) - 0.1`; identically vanishing
/// remainders report `+inf`.
pub fn check_controlled(cp: &ControlledPath, eps: f64) -> ControlledCheck {
    let n = cp.n();
    let ell = cp.ell();
    let hurst = cp.hurst();
    let largest = (n / CONTROL_WINDOWS).max(1);
    let mut lags = vec![];
    let mut lag = 1;
    while lag <= largest {
        lags.push(lag);
        lag *= 2;
    }
    let starts: Vec<usize> = (0..n).step_by(largest).filter(|&s| s + largest <= n).collect();
    let floor = 1e-13 * cp.magnitude().max(1.0);
    let mut slopes = Vec::with_capacity(ell);
    let mut thresholds = Vec::with_capacity(ell);
    for k in 0..ell {
        let mut lx = vec![];
        let mut ly = vec![];
        for &h in &lags {
            let worst = starts
                .iter()
                .map(|&s| cp.remainder_unchecked(k, s, s + h).abs())
                .fold(0.0f64, f64::max);
            if worst > floor {
                lx.push((h as f64 / n as f64).ln());
                ly.push(worst.ln());
            }
        }
        let slope = ols(&lx, &ly).map_or(f64::INFINITY, |f| f.slope);
        slopes.push(slope);
        thresholds.push((ell - k) as f64 * (hurst - eps) - 0.1);
    }
    let passed = slopes.iter().zip(&thresholds).map(|(s, t)| s >= t).collect();
    ControlledCheck { slopes, thresholds, passed }
}
