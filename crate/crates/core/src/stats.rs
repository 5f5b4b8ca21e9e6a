//! Small statistics kit shared across modules: moments, correlation,
//! Gaussian and Student-t distribution functions, and the empirical
//! tail-risk estimator.

use nalgebra::DMatrix;
use statrs::function::{beta, gamma};

pub const TRADING_DAYS: f64 = 252.0;

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (n − 1 denominator).
pub fn variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Pearson correlation; NaN when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return f64::NAN;
    }
    sxy / (sxx * syy).sqrt()
}

/// Sample covariance (n − 1) of the columns of a T×N matrix.
pub fn covariance_matrix(data: &DMatrix<f64>) -> DMatrix<f64> {
    let (t, n) = data.shape();
    let means: Vec<f64> = (0..n).map(|j| data.column(j).mean()).collect();
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for r in 0..t {
                s += (data[(r, i)] - means[i]) * (data[(r, j)] - means[j]);
            }
            let v = s / (t as f64 - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

/// Rescale a covariance matrix to a correlation matrix with an exact unit diagonal.
pub fn cov_to_corr(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let n = cov.nrows();
    let sd: Vec<f64> = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            cov[(i, j)] / (sd[i] * sd[j])
        }
    })
}

pub fn correlation_matrix(data: &DMatrix<f64>) -> DMatrix<f64> {
    cov_to_corr(&covariance_matrix(data))
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation polished by
/// one Halley step against `erfc`.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let plow = 0.02425;
    let x = if p < plow {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - plow {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = norm_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// CDF of the standard Student-t with `nu` degrees of freedom.
pub fn t_cdf(x: f64, nu: f64) -> f64 {
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta::beta_reg(0.5 * nu, 0.5, nu / (nu + x * x));
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

pub fn t_quantile(p: f64, nu: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    let lower = p.min(1.0 - p);
    let y = beta::inv_beta_reg(0.5 * nu, 0.5, 2.0 * lower);
    let q = (nu * (1.0 - y) / y).sqrt();
    if p < 0.5 {
        -q
    } else {
        q
    }
}

pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

/// Log density of the standard univariate Student-t.
pub fn t_ln_pdf(x: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

/// Empirical value-at-risk and expected shortfall of a return sample at
/// confidence `alpha`, both expressed as positive loss fractions.
///
/// VaR is the smallest loss `l` with empirical `P(L <= l) >= alpha`; CVaR is
/// the Rockafellar-Uryasev tail mean `VaR + E[(L - VaR)^+] / (1 - alpha)`,
/// which equals the average of the worst `(1 - alpha) S` losses whenever that
/// count is an integer and coincides with the scenario LP optimum.
pub fn tail_risk(returns: &[f64], alpha: f64) -> (f64, f64) {
    let s = returns.len();
    let mut losses: Vec<f64> = returns.iter().map(|r| -r).collect();
    losses.sort_by(|a, b| a.total_cmp(b));
    let idx = var_index(s, alpha);
    let var = losses[idx];
    let excess: f64 = losses[idx..].iter().map(|l| l - var).sum();
    let cvar = var + excess / ((1.0 - alpha) * s as f64);
    (var, cvar)
}

/// Zero-based index of the VaR order statistic among ascending losses.
pub(crate) fn var_index(s: usize, alpha: f64) -> usize {
    let k = (alpha * s as f64 - 1e-9).ceil() as usize;
    k.clamp(1, s) - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_cdf_and_quantile_invert() {
        for &nu in &[2.5, 4.0, 10.0, 50.0] {
            for &p in &[1e-4, 0.01, 0.3, 0.5, 0.77, 0.999] {
                let q = t_quantile(p, nu);
                assert!((t_cdf(q, nu) - p).abs() < 1e-10, "nu={nu} p={p}");
            }
        }
    }

    #[test]
    fn normal_quantile_matches_known_value() {
        assert!((norm_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!((norm_cdf(1.0) - 0.8413447460685429).abs() < 1e-14);
    }

    #[test]
    fn tail_risk_integer_tail_is_mean_of_worst() {
        let r: Vec<f64> = (1..=20).map(|i| i as f64 / 100.0 - 0.1).collect();
        // worst losses 0.09, 0.08; the 18th of 20 (0.07) is the 90% quantile
        let (var, cvar) = tail_risk(&r, 0.9);
        assert!((var - 0.07).abs() < 1e-15);
        assert!((cvar - 0.085).abs() < 1e-15);
    }
}
