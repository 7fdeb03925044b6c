//! Fractional Brownian motion on the uniform grid `t_k = k/n` of `[0, 1]`.
//!
//! Paths are exact in law. The default sampler embeds the fractional Gaussian
//! noise autocovariance `n^{-2H} rho(k)` in a circulant matrix of size `2n`
//! and colours complex white noise with one FFT; a dense Cholesky factor of
//! the Toeplitz covariance serves tiny grids and embeddings whose spectrum is
//! not numerically nonnegative.

use std::io::{self, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_hurst, Error, Result};
use crate::io::fmt17;
use crate::rng;

/// Relative threshold below which negative circulant eigenvalues are treated
/// as round-off and clamped to zero.
pub const EMBEDDING_TOLERANCE: f64 = 1e-12;

/// Grids at or below this size use the Cholesky sampler under `Auto`.
pub const AUTO_CHOLESKY_MAX_N: usize = 8;

/// Largest grid the dense Cholesky sampler accepts.
pub const CHOLESKY_MAX_N: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FbmMethod {
    CirculantEmbedding,
    Cholesky,
    Auto,
}

impl std::str::FromStr for FbmMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circulant-embedding" | "circulant" => Ok(Self::CirculantEmbedding),
            "cholesky" => Ok(Self::Cholesky),
            "auto" => Ok(Self::Auto),
            other => Err(Error::Domain(format!("unknown fbm method '{other}'"))),
        }
    }
}

impl std::fmt::Display for FbmMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::CirculantEmbedding => "circulant-embedding",
            Self::Cholesky => "cholesky",
            Self::Auto => "auto",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbmSpec {
    pub hurst: f64,
    pub n: usize,
    pub seed: u64,
    pub method: FbmMethod,
}

impl FbmSpec {
    pub fn new(hurst: f64, n: usize, seed: u64) -> Result<Self> {
        Self::with_method(hurst, n, seed, FbmMethod::Auto)
    }

    pub fn with_method(hurst: f64, n: usize, seed: u64, method: FbmMethod) -> Result<Self> {
        check_hurst(hurst)?;
        if n < 2 {
            return Err(Error::Domain(format!("grid needs n >= 2 cells, got {n}")));
        }
        Ok(Self { hurst, n, seed, method })
    }
}

/// Values `x_{t_0}, ..., x_{t_n}` of one fBm sample; `values[0] == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    spec: FbmSpec,
    values: Vec<f64>,
}

impl FbmPath {
    /// Wraps externally supplied grid values. The first value must be zero.
    pub fn from_values(hurst: f64, values: Vec<f64>) -> Result<Self> {
        let n = values.len().saturating_sub(1);
        let spec = FbmSpec::with_method(hurst, n, 0, FbmMethod::Auto)?;
        if values[0] != 0.0 {
            return Err(Error::Domain("path must start at 0".into()));
        }
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> &FbmSpec {
        &self.spec
    }

    pub fn hurst(&self) -> f64 {
        self.spec.hurst
    }

    /// Number of grid cells.
    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.spec.n as f64
    }

    /// Every `stride`-th grid value, i.e. the same sample on the coarser grid
    /// of `n / stride` cells.
    pub fn subsample(&self, stride: usize) -> Result<FbmPath> {
        if stride == 0 || self.spec.n % stride != 0 {
            return Err(Error::Domain(format!(
                "stride {stride} does not divide n = {}",
                self.spec.n
            )));
        }
        let values: Vec<f64> = self.values.iter().step_by(stride).copied().collect();
        let spec = FbmSpec { n: self.spec.n / stride, ..self.spec };
        if spec.n < 2 {
            return Err(Error::Domain("subsampled grid has fewer than 2 cells".into()));
        }
        Ok(FbmPath { spec, values })
    }

    /// Writes the path as CSV with header `t,x`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,x")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", fmt17(self.time(k)), fmt17(*v))?;
        }
        Ok(())
    }
}

/// `E[x_s x_t] = (|s|^{2H} + |t|^{2H} - |s - t|^{2H}) / 2`.
pub fn fbm_covariance(s: f64, t: f64, hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    let h2 = 2.0 * hurst;
    Ok(0.5 * (s.abs().powf(h2) + t.abs().powf(h2) - (s - t).abs().powf(h2)))
}

/// Autocovariance of unit-spaced fractional Gaussian noise,
/// `rho(k) = (|k+1|^{2H} + |k-1|^{2H} - 2|k|^{2H}) / 2`.
///
/// For `|k| >= 2` the second difference is evaluated through `expm1`/`ln_1p`
/// so that the result keeps full relative precision at large lags.
pub fn fgn_autocovariance(k: i64, hurst: f64) -> f64 {
    let k = k.unsigned_abs() as f64;
    let h2 = 2.0 * hurst;
    if k < 2.0 {
        return 0.5 * ((k + 1.0).powf(h2) + (k - 1.0).abs().powf(h2) - 2.0 * k.powf(h2));
    }
    let u = 1.0 / k;
    let up = (h2 * u.ln_1p()).exp_m1();
    let down = (h2 * (-u).ln_1p()).exp_m1();
    0.5 * k.powf(h2) * (up + down)
}

enum Backend {
    Circulant {
        sqrt_eigs: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky {
        /// Row-major lower factor of the increment covariance.
        lower: Vec<f64>,
    },
}

/// Reusable sampler for one `(hurst, n)` pair. Construction does the
/// expensive spectral (or Cholesky) work; sampling is then one FFT per path.
pub struct FbmSampler {
    hurst: f64,
    n: usize,
    method: FbmMethod,
    backend: Backend,
}

impl FbmSampler {
    pub fn new(hurst: f64, n: usize, method: FbmMethod) -> Result<Self> {
        FbmSpec::with_method(hurst, n, 0, method)?;
        let use_cholesky = match method {
            FbmMethod::Cholesky => true,
            FbmMethod::Auto => n <= AUTO_CHOLESKY_MAX_N,
            FbmMethod::CirculantEmbedding => false,
        };
        if use_cholesky {
            return Ok(Self { hurst, n, method: FbmMethod::Cholesky, backend: cholesky_backend(hurst, n)? });
        }
        match circulant_backend(hurst, n) {
            Some(backend) => Ok(Self { hurst, n, method: FbmMethod::CirculantEmbedding, backend }),
            None => {
                log::warn!("circulant embedding not nonnegative for H={hurst}, n={n}; using Cholesky");
                Ok(Self { hurst, n, method: FbmMethod::Cholesky, backend: cholesky_backend(hurst, n)? })
            }
        }
    }

    pub fn for_spec(spec: &FbmSpec) -> Result<Self> {
        Self::new(spec.hurst, spec.n, spec.method)
    }

    /// The method actually used (never `Auto`).
    pub fn method(&self) -> FbmMethod {
        self.method
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    /// Draws one path using `rng`; `seed` is recorded in the returned spec.
    pub fn sample_with<R: Rng + ?Sized>(&self, seed: u64, rng: &mut R) -> FbmPath {
        let incr = self.sample_increments(rng);
        let mut values = Vec::with_capacity(self.n + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for d in incr {
            acc += d;
            values.push(acc);
        }
        FbmPath {
            spec: FbmSpec { hurst: self.hurst, n: self.n, seed, method: self.method },
            values,
        }
    }

    /// Path for replica `replica` of the experiment seeded by `seed`.
    pub fn sample_replica(&self, seed: u64, replica: u64) -> FbmPath {
        let mut rng = rng::stream(seed, replica);
        self.sample_with(seed, &mut rng)
    }

    fn sample_increments<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let scale = (self.n as f64).powf(-self.hurst);
        match &self.backend {
            Backend::Circulant { sqrt_eigs, fft } => {
                let mut buf: Vec<Complex<f64>> = sqrt_eigs
                    .iter()
                    .map(|&s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                buf[..self.n].iter().map(|c| c.re * scale).collect()
            }
            Backend::Cholesky { lower } => {
                let z: Vec<f64> = (0..self.n).map(|_| rng.sample(StandardNormal)).collect();
                (0..self.n)
                    .map(|i| {
                        let row = &lower[i * self.n..i * self.n + i + 1];
                        row.iter().zip(&z).map(|(l, z)| l * z).sum::<f64>() * scale
                    })
                    .collect()
            }
        }
    }
}

fn circulant_backend(hurst: f64, n: usize) -> Option<Backend> {
    let m = 2 * n;
    let mut buf: Vec<Complex<f64>> = (0..m)
        .map(|j| {
            let lag = if j <= n { j } else { m - j };
            Complex::new(fgn_autocovariance(lag as i64, hurst), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut buf);
    let max = buf.iter().map(|c| c.re).fold(f64::MIN, f64::max);
    let min = buf.iter().map(|c| c.re).fold(f64::MAX, f64::min);
    if min < -EMBEDDING_TOLERANCE * max {
        return None;
    }
    let sqrt_eigs = buf.iter().map(|c| (c.re.max(0.0) / m as f64).sqrt()).collect();
    Some(Backend::Circulant { sqrt_eigs, fft })
}

fn cholesky_backend(hurst: f64, n: usize) -> Result<Backend> {
    if n > CHOLESKY_MAX_N {
        return Err(Error::Domain(format!(
            "Cholesky sampler limited to n <= {CHOLESKY_MAX_N}, got {n}"
        )));
    }
    let rho: Vec<f64> = (0..n).map(|k| fgn_autocovariance(k as i64, hurst)).collect();
    let mut lower = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = rho[i - j];
            for k in 0..j {
                sum -= lower[i * n + k] * lower[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Cholesky(i));
                }
                lower[i * n + i] = sum.sqrt();
            } else {
                lower[i * n + j] = sum / lower[j * n + j];
            }
        }
    }
    Ok(Backend::Cholesky { lower })
}

/// Samples the path described by `spec` from the stream `(spec.seed, 0)`.
pub fn sample_fbm(spec: &FbmSpec) -> Result<FbmPath> {
    Ok(FbmSampler::for_spec(spec)?.sample_replica(spec.seed, 0))
}

/// `out[k] = values[k+1] - values[k]`.
pub fn increments(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[1] - w[0]).collect()
}

/// `x^i_{st} = (x_t - x_s)^i / i!` for a single increment.
pub fn power_increment_value(dx: f64, order: u32) -> f64 {
    let mut v = 1.0;
    for j in 1..=order {
        v *= dx / j as f64;
    }
    v
}

/// The 2-increment `(s, t) -> x^i_{st}` indexed by grid points.
pub fn power_increment(path: &FbmPath, order: u32) -> impl Fn(usize, usize) -> f64 + '_ {
    move |s, t| power_increment_value(path.values[t] - path.values[s], order)
}
