//! Ordinary least squares used by the exponent and rate fits.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Fits `y = intercept + slope * x`. Needs at least two distinct `x`.
pub fn ols(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some(LineFit { slope, intercept, slope_se })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub coef1: f64,
    pub coef2: f64,
    pub intercept: f64,
    pub se1: f64,
    pub se2: f64,
}

/// Fits `y = intercept + coef1 * x1 + coef2 * x2` by the normal equations.
pub fn ols2(x1: &[f64], x2: &[f64], y: &[f64]) -> Option<PlaneFit> {
    let n = y.len();
    if n < 3 || x1.len() != n || x2.len() != n {
        return None;
    }
    let nf = n as f64;
    let m1 = x1.iter().sum::<f64>() / nf;
    let m2 = x2.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut s11, mut s22, mut s12, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b, c) = (x1[i] - m1, x2[i] - m2, y[i] - my);
        s11 += a * a;
        s22 += b * b;
        s12 += a * b;
        s1y += a * c;
        s2y += b * c;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() <= 1e-12 * (s11 * s22).max(f64::MIN_POSITIVE) {
        return None;
    }
    let coef1 = (s22 * s1y - s12 * s2y) / det;
    let coef2 = (s11 * s2y - s12 * s1y) / det;
    let intercept = my - coef1 * m1 - coef2 * m2;
    let (se1, se2) = if n > 3 {
        let rss: f64 = (0..n)
            .map(|i| (y[i] - intercept - coef1 * x1[i] - coef2 * x2[i]).powi(2))
            .sum();
        let s2 = rss / (nf - 3.0);
        ((s2 * s22 / det).sqrt(), (s2 * s11 / det).sqrt())
    } else {
        (0.0, 0.0)
    };
    Some(PlaneFit { coef1, coef2, intercept, se1, se2 })
}
