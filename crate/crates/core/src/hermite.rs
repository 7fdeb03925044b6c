//! Hermite polynomials, Gaussian moments and the constants of the limit
//! theorems for the power functional `phi(x) = |x|^p`.
//!
//! * `c_p = E|N|^p = 2^{p/2} Gamma((p+1)/2) / sqrt(pi)`;
//! * `|x|^p - c_p = sum_{q >= 1} a_{2q} H_{2q}(x)` (Hermite rank 2);
//! * `sigma^2 = sum_q (2q)! a_{2q}^2 sum_k rho(k)^{2q}`, the asymptotic
//!   variance of the centred, normalised power variation of fBm.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

use crate::error::{check_hurst, Error, Result};
use crate::fbm::fgn_autocovariance;

/// Default chaos cutoff for `sigma^2`.
pub const DEFAULT_CHAOS_CUTOFF: usize = 40;
/// Default lag cutoff for `sigma^2`.
pub const DEFAULT_LAG_CUTOFF: usize = 1_000_000;
/// Relative tail size above which `sigma_sq` logs a warning.
pub const TAIL_WARN_RATIO: f64 = 1e-6;

/// Probabilists' Hermite polynomial `H_q(x)` by the three-term recurrence
/// `H_{q+1} = x H_q - q H_{q-1}`.
pub fn hermite(q: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if q == 0 {
        return prev;
    }
    for k in 1..q {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `sign(x)` with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Absolute Gaussian moment `c_p = E|N|^p`, defined for `p > -1`.
pub fn c_p(p: f64) -> Result<f64> {
    if p.is_nan() || p <= -1.0 {
        return Err(Error::Domain(format!("c_p requires p > -1, got {p}")));
    }
    if p >= 0.0 && p.fract() == 0.0 && p <= 300.0 {
        // (p-1)!! for even p, sqrt(2/pi) (p-1)!! for odd p.
        let k = p as usize;
        let dfact = (1..k).rev().step_by(2).fold(1.0, |acc, j| acc * j as f64);
        return Ok(if k % 2 == 0 { dfact } else { dfact * (2.0 / PI).sqrt() });
    }
    Ok(2f64.powf(p / 2.0) * gamma((p + 1.0) / 2.0) / PI.sqrt())
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Chaos coefficient `a_{2q}` of `|x|^p - c_p`.
///
/// Evaluated as `c_p * p (p-2) ... (p-2q+2) / (2q)!`, which equals the
/// alternating moment sum of [`a_2q_series`] but does not cancel.
pub fn a_2q(p: f64, q: usize) -> Result<f64> {
    if p <= -0.5 {
        return Err(Error::Domain(format!("a_2q requires p > -1/2, got {p}")));
    }
    if q == 0 {
        return Err(Error::Domain("a_2q is defined for q >= 1".into()));
    }
    let mut a = c_p(p)?;
    for j in 1..=q {
        a *= (p - 2.0 * (j - 1) as f64) / ((2 * j) as f64 * (2 * j - 1) as f64);
    }
    Ok(a)
}

/// `a_{2q} = sum_{r=0}^{q} (-1)^r c_{2q-2r+p} / (2^r r! (2q-2r)!)`.
///
/// Loses accuracy for large `q`; prefer [`a_2q`].
pub fn a_2q_series(p: f64, q: usize) -> Result<f64> {
    if p <= -0.5 {
        return Err(Error::Domain(format!("a_2q requires p > -1/2, got {p}")));
    }
    let mut sum = 0.0;
    for r in 0..=q {
        let sgn = if r % 2 == 0 { 1.0 } else { -1.0 };
        sum += sgn * c_p((2 * q - 2 * r) as f64 + p)?
            / (2f64.powi(r as i32) * factorial(r) * factorial(2 * q - 2 * r));
    }
    Ok(sum)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncation {
    /// Number of chaos terms `Q`.
    pub chaos: usize,
    /// Lag cutoff `K` for `sum_{|k| <= K} rho(k)^{2q}`.
    pub lags: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Self { chaos: DEFAULT_CHAOS_CUTOFF, lags: DEFAULT_LAG_CUTOFF }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSq {
    pub value: f64,
    /// Estimated size of the neglected chaos and lag tails.
    pub tail_estimate: f64,
}

/// `S_q = sum_{|k| <= K} rho(k)^{2q}` for `q = 1..=Q`.
fn rho_power_sums(hurst: f64, trunc: Truncation) -> Vec<f64> {
    let mut sums = vec![1.0; trunc.chaos];
    for k in 1..=trunc.lags {
        let r2 = fgn_autocovariance(k as i64, hurst).powi(2);
        if r2 == 0.0 {
            continue;
        }
        let mut pw = r2;
        for s in sums.iter_mut() {
            *s += 2.0 * pw;
            pw *= r2;
            if pw < 1e-300 {
                break;
            }
        }
    }
    sums
}

/// Asymptotic variance `sigma^2(p, H)` of `n^{-1/2} sum (|n^H dx|^p - c_p)`.
pub fn sigma_sq(p: f64, hurst: f64, trunc: Truncation) -> Result<SigmaSq> {
    check_hurst(hurst)?;
    if p < 1.0 {
        return Err(Error::Domain(format!("sigma_sq requires p >= 1, got {p}")));
    }
    if hurst >= 0.75 {
        return Err(Error::Domain(format!(
            "sum of rho(k)^2 diverges for H >= 3/4, got {hurst}"
        )));
    }
    if trunc.chaos == 0 {
        return Err(Error::Domain("chaos cutoff must be positive".into()));
    }
    let sums = rho_power_sums(hurst, trunc);
    let decay = 2.0 - 2.0 * hurst;
    let lead = (hurst * (2.0 * hurst - 1.0)).abs();
    let big_k = trunc.lags as f64;

    let mut value = 0.0;
    let mut lag_tail = 0.0;
    let mut chaos_mass = 0.0;
    for q in 1..=trunc.chaos {
        let a = a_2q(p, q)?;
        let weight = factorial(2 * q) * a * a;
        chaos_mass += weight;
        value += weight * sums[q - 1];
        let expo = decay * 2.0 * q as f64;
        if lead > 0.0 {
            lag_tail += weight * 2.0 * lead.powf(2.0 * q as f64) * big_k.powf(1.0 - expo) / (expo - 1.0);
        }
    }
    // |rho| <= 1, so every neglected chaos term is bounded by its weight times S_1.
    let norm_sq = c_p(2.0 * p)? - c_p(p)?.powi(2);
    let chaos_tail = (norm_sq - chaos_mass).max(0.0) * sums[0];
    let tail_estimate = lag_tail + chaos_tail;
    if tail_estimate > TAIL_WARN_RATIO * value {
        log::warn!(
            "sigma^2(p={p}, H={hurst}) truncation tail {tail_estimate:e} exceeds {TAIL_WARN_RATIO:e} of value {value}"
        );
    }
    Ok(SigmaSq { value, tail_estimate })
}

/// All closed-form constants for one `(p, H)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteModel {
    pub p: f64,
    pub hurst: f64,
    pub c_p: f64,
    /// `coeffs[q-1] = a_{2q}` for `q = 1..=Q`.
    pub coeffs: Vec<f64>,
    pub sigma_sq: f64,
    pub tail_estimate: f64,
    pub truncation: Truncation,
}

impl HermiteModel {
    pub fn new(p: f64, hurst: f64, truncation: Truncation) -> Result<Self> {
        let coeffs = (1..=truncation.chaos).map(|q| a_2q(p, q)).collect::<Result<Vec<_>>>()?;
        let s = sigma_sq(p, hurst, truncation)?;
        Ok(Self {
            p,
            hurst,
            c_p: c_p(p)?,
            coeffs,
            sigma_sq: s.value,
            tail_estimate: s.tail_estimate,
            truncation,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }

    /// The power functional always has Hermite rank 2.
    pub fn hermite_rank(&self) -> usize {
        2
    }
}

/// Derivatives of `phi(x) = |x|^p`: `phi^{(j)} = K_j phi_j` with
/// `K_j = p (p-1) ... (p-j+1)` and `phi_j(x) = |x|^{p-j} sign(x)^j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiFamily {
    pub p: f64,
}

impl PhiFamily {
    pub fn new(p: f64) -> Self {
        Self { p }
    }

    fn is_even_integer(&self) -> bool {
        self.p.fract() == 0.0 && (self.p as i64) % 2 == 0
    }

    pub fn k(&self, j: usize) -> f64 {
        (0..j).map(|i| self.p - i as f64).product()
    }

    pub fn phi_j(&self, j: usize, x: f64) -> f64 {
        x.abs().powf(self.p - j as f64) * sign(x).powi(j as i32)
    }

    /// `phi^{(j)}(x)`. For odd integer `p` the undefined `phi^{(p)}(0)` is
    /// returned as 0; for even `p` the polynomial derivative is used, so
    /// `phi''(0) = 2` when `p = 2`.
    pub fn derivative(&self, j: usize, x: f64) -> Result<f64> {
        if self.is_even_integer() {
            let p = self.p as usize;
            if j > p {
                return Ok(0.0);
            }
            return Ok(self.k(j) * x.powi((p - j) as i32));
        }
        if j as f64 > self.p.floor() {
            return Err(Error::Order { order: j, p: self.p });
        }
        Ok(self.k(j) * self.phi_j(j, x))
    }
}

/// `phi^{(j)}(x)` for `phi = |.|^p`.
pub fn phi_eval(p: f64, j: usize, x: f64) -> Result<f64> {
    PhiFamily::new(p).derivative(j, x)
}

/// Gauss-Hermite rule for the standard Gaussian measure: nodes and weights
/// with `sum w_i f(x_i) ~ E f(N)`.
pub fn gauss_hermite(nodes: usize) -> (Vec<f64>, Vec<f64>) {
    // Newton iteration on orthonormal physicists' polynomials, then rescale.
    let n = nodes;
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j - 1) as f64 / j as f64).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let sqrt2 = 2f64.sqrt();
    let sqrtpi = PI.sqrt();
    let xs = x.iter().map(|v| v * sqrt2).collect();
    let ws = w.iter().map(|v| v / sqrtpi).collect();
    (xs, ws)
}

/// Hermite coefficients `a_q = <f, H_q>_{L^2(gamma)} / q!` for `q = 0..=cutoff`
/// by Gauss-Hermite projection with at least `4 * cutoff` nodes.
pub fn hermite_coeffs_numeric<F: Fn(f64) -> f64>(f: F, cutoff: usize) -> Vec<f64> {
    let nodes = (4 * cutoff + 4).max(160);
    let (xs, ws) = gauss_hermite(nodes);
    let mut out = vec![0.0; cutoff + 1];
    for (&x, &w) in xs.iter().zip(&ws) {
        let fx = f(x) * w;
        // h_q = H_q / sqrt(q!) keeps the recurrence in range.
        let (mut prev, mut cur) = (0.0, 1.0);
        for (q, slot) in out.iter_mut().enumerate() {
            *slot += fx * cur;
            let next = (x * cur - (q as f64).sqrt() * prev) / ((q + 1) as f64).sqrt();
            prev = cur;
            cur = next;
        }
    }
    for (q, slot) in out.iter_mut().enumerate() {
        *slot /= factorial(q).sqrt();
    }
    out
}

/// Index of the first coefficient (from `q = 1`) exceeding `tol` in size.
pub fn hermite_rank(coeffs: &[f64], tol: f64) -> Option<usize> {
    coeffs.iter().enumerate().skip(1).find(|(_, a)| a.abs() > tol).map(|(q, _)| q)
}
