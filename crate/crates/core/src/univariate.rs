//! Serial-correlation diagnostics and ARMA(1,1)-GARCH(1,1) conditional
//! mean/variance models with optional GJR leverage.
//!
//! Mean:     r_t - mu = phi (r_{t-1} - mu) + theta e_{t-1} + e_t
//! Variance: s2_t = alpha0 + (alpha1 + gamma 1[e_{t-1} <= 0]) e_{t-1}^2 + beta1 s2_{t-1}

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{bfgs, BfgsOptions};
use crate::rng;
use crate::stats;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
/// Bound on |phi| and |theta| in the fit.
const ARMA_BOUND: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmaGarchParams {
    pub mu: f64,
    pub phi: f64,
    pub theta: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub gamma: f64,
}

impl ArmaGarchParams {
    /// Pure GARCH(1,1) around a constant mean.
    pub fn garch(mu: f64, alpha0: f64, alpha1: f64, beta1: f64) -> Self {
        Self {
            mu,
            phi: 0.0,
            theta: 0.0,
            alpha0,
            alpha1,
            beta1,
            gamma: 0.0,
        }
    }

    pub fn persistence(&self) -> f64 {
        self.alpha1 + self.beta1 + 0.5 * self.gamma
    }

    pub fn unconditional_variance(&self) -> f64 {
        self.alpha0 / (1.0 - self.persistence())
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.mu,
            self.phi,
            self.theta,
            self.alpha0,
            self.alpha1,
            self.beta1,
            self.gamma,
        ];
        let bad = |m: &str| Err(Error::InvalidParams(format!("{m}: {self:?}")));
        if fields.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter");
        }
        if self.phi.abs() >= 1.0 || self.theta.abs() >= 1.0 {
            return bad("|phi| and |theta| must be < 1");
        }
        if self.alpha0 <= 0.0 {
            return bad("alpha0 must be positive");
        }
        if self.alpha1 < 0.0 || self.beta1 < 0.0 || self.gamma < 0.0 {
            return bad("alpha1, beta1, gamma must be non-negative");
        }
        if self.persistence() >= 1.0 {
            return bad("alpha1 + beta1 + gamma/2 must be < 1");
        }
        Ok(())
    }

    /// State before any observation: mean at `mu`, no shock, unconditional variance.
    pub fn initial_state(&self) -> FilterState {
        FilterState {
            prev_return: self.mu,
            prev_resid: 0.0,
            next_var: self.unconditional_variance(),
        }
    }

    #[inline]
    fn conditional_mean(&self, state: &FilterState) -> f64 {
        self.mu + self.phi * (state.prev_return - self.mu) + self.theta * state.prev_resid
    }

    #[inline]
    fn next_variance(&self, resid: f64, var: f64) -> f64 {
        let lev = if resid <= 0.0 { self.gamma } else { 0.0 };
        self.alpha0 + (self.alpha1 + lev) * resid * resid + self.beta1 * var
    }
}

/// Recursion state carried between observations: the last return and
/// residual, and the variance of the next innovation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub prev_return: f64,
    pub prev_resid: f64,
    pub next_var: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub residuals: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub std_resid: Vec<f64>,
    pub loglik: f64,
    pub terminal: FilterState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmaGarchFit {
    pub params: ArmaGarchParams,
    pub filter: FilterOutput,
}

fn check_series(series: &[f64], min_len: usize) -> Result<()> {
    if series.len() < min_len {
        return Err(Error::too_short(min_len, series.len()));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutOfRangeInput("non-finite observation".into()));
    }
    if series.iter().all(|v| *v == series[0]) || !(stats::variance(series) > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(())
}

/// Sample autocorrelations at lags 1..=max_lag.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag == 0 {
        return Err(Error::InvalidParams("max_lag must be positive".into()));
    }
    check_series(series, max_lag + 3)?;
    let m = stats::mean(series);
    let dev: Vec<f64> = series.iter().map(|v| v - m).collect();
    let denom: f64 = dev.iter().map(|v| v * v).sum();
    Ok((1..=max_lag)
        .map(|k| dev[k..].iter().zip(&dev).map(|(a, b)| a * b).sum::<f64>() / denom)
        .collect())
}

/// Partial autocorrelations at lags 1..=max_lag by the Durbin-Levinson recursion.
pub fn pacf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let rho = acf(series, max_lag)?;
    let mut out = Vec::with_capacity(max_lag);
    let mut prev: Vec<f64> = Vec::new();
    for k in 1..=max_lag {
        let phi_kk = if k == 1 {
            rho[0]
        } else {
            let num = rho[k - 1] - (1..k).map(|j| prev[j - 1] * rho[k - j - 1]).sum::<f64>();
            let den = 1.0 - (1..k).map(|j| prev[j - 1] * rho[j - 1]).sum::<f64>();
            num / den
        };
        let mut cur = vec![0.0; k];
        for j in 1..k {
            cur[j - 1] = prev[j - 1] - phi_kk * prev[k - j - 1];
        }
        cur[k - 1] = phi_kk;
        out.push(phi_kk);
        prev = cur;
    }
    Ok(out)
}

/// Run the recursion from the unconditional initial state.
pub fn filter_residuals(params: &ArmaGarchParams, series: &[f64]) -> Result<FilterOutput> {
    params.validate()?;
    if series.len() < 2 {
        return Err(Error::too_short(2, series.len()));
    }
    Ok(filter_from(params, params.initial_state(), series))
}

/// Continue the recursion from a saved state. Parameters are assumed valid.
pub fn filter_from(params: &ArmaGarchParams, state: FilterState, series: &[f64]) -> FilterOutput {
    let n = series.len();
    let mut residuals = Vec::with_capacity(n);
    let mut sigmas = Vec::with_capacity(n);
    let mut std_resid = Vec::with_capacity(n);
    let mut loglik = 0.0;
    let mut st = state;
    for &r in series {
        let e = r - params.conditional_mean(&st);
        let var = st.next_var;
        let sd = var.sqrt();
        loglik -= 0.5 * (LN_2PI + var.ln() + e * e / var);
        residuals.push(e);
        sigmas.push(sd);
        std_resid.push(e / sd);
        st = FilterState {
            prev_return: r,
            prev_resid: e,
            next_var: params.next_variance(e, var),
        };
    }
    FilterOutput {
        residuals,
        sigmas,
        std_resid,
        loglik,
        terminal: st,
    }
}

fn loglik_only(params: &ArmaGarchParams, series: &[f64]) -> f64 {
    let mut st = params.initial_state();
    let mut ll = 0.0;
    for &r in series {
        let e = r - params.conditional_mean(&st);
        let var = st.next_var;
        if !(var > 0.0) || !var.is_finite() {
            return f64::NEG_INFINITY;
        }
        ll -= 0.5 * (LN_2PI + var.ln() + e * e / var);
        st = FilterState {
            prev_return: r,
            prev_resid: e,
            next_var: params.next_variance(e, var),
        };
    }
    ll
}

/// Unconstrained coordinates <-> valid parameters. The persistence
/// components (alpha1, beta1[, gamma/2]) are a softmax against a slack term
/// so their sum stays below one.
struct Transform {
    gjr: bool,
}

impl Transform {
    fn to_params(&self, x: &[f64]) -> ArmaGarchParams {
        let k = if self.gjr { 3 } else { 2 };
        let m = x[4..4 + k].iter().cloned().fold(0.0f64, f64::max);
        let exps: Vec<f64> = x[4..4 + k].iter().map(|v| (v - m).exp()).collect();
        let denom = (-m).exp() + exps.iter().sum::<f64>();
        ArmaGarchParams {
            mu: x[0],
            phi: ARMA_BOUND * x[1].tanh(),
            theta: ARMA_BOUND * x[2].tanh(),
            alpha0: x[3].exp(),
            alpha1: exps[0] / denom,
            beta1: exps[1] / denom,
            gamma: if self.gjr { 2.0 * exps[2] / denom } else { 0.0 },
        }
    }

    fn from_params(&self, p: &ArmaGarchParams) -> Vec<f64> {
        let slack = 1.0 - p.persistence();
        let mut x = vec![
            p.mu,
            (p.phi.clamp(-0.99, 0.99) / ARMA_BOUND).atanh(),
            (p.theta.clamp(-0.99, 0.99) / ARMA_BOUND).atanh(),
            p.alpha0.ln(),
            (p.alpha1.max(1e-6) / slack).ln(),
            (p.beta1.max(1e-6) / slack).ln(),
        ];
        if self.gjr {
            x.push((0.5 * p.gamma).max(1e-6).ln() - slack.ln());
        }
        x
    }
}

/// Deterministic starting points on the unit-variance scale.
fn starts(mean: f64, gjr: bool) -> Vec<ArmaGarchParams> {
    let combos = [
        (0.05, 0.90, 0.0, 0.0),
        (0.10, 0.80, 0.1, 0.0),
        (0.03, 0.95, -0.1, 0.1),
        (0.15, 0.60, 0.3, -0.3),
        (0.08, 0.85, 0.0, 0.1),
    ];
    combos
        .iter()
        .map(|&(a1, b1, phi, theta)| {
            let g = if gjr { 0.04 } else { 0.0 };
            let a1 = if gjr { a1 * 0.7 } else { a1 };
            ArmaGarchParams {
                mu: mean,
                phi,
                theta,
                alpha0: 1.0 - a1 - b1 - 0.5 * g,
                alpha1: a1,
                beta1: b1,
                gamma: g,
            }
        })
        .collect()
}

/// Gaussian maximum likelihood fit with five deterministic starts.
pub fn fit_arma_garch(series: &[f64], gjr: bool) -> Result<ArmaGarchFit> {
    check_series(series, 250)?;
    let sd = stats::std_dev(series);
    let scaled: Vec<f64> = series.iter().map(|v| v / sd).collect();
    let tf = Transform { gjr };
    let mean = stats::mean(&scaled);
    let opts = BfgsOptions {
        max_iter: 400,
        grad_tol: 1e-5,
        f_tol: 1e-13,
    };
    let results: Vec<(f64, Vec<f64>)> = starts(mean, gjr)
        .par_iter()
        .map(|p0| {
            let x0 = tf.from_params(p0);
            let m = bfgs(|x| -loglik_only(&tf.to_params(x), &scaled), &x0, opts);
            (m.value, m.x)
        })
        .collect();
    let best = results
        .iter()
        .filter(|(v, _)| v.is_finite())
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::NonConvergence("no ARMA-GARCH start produced a finite likelihood".into()))?;
    let ps = tf.to_params(&best.1);
    let params = ArmaGarchParams {
        mu: ps.mu * sd,
        alpha0: ps.alpha0 * sd * sd,
        ..ps
    };
    params.validate()?;
    let filter = filter_from(&params, params.initial_state(), series);
    Ok(ArmaGarchFit { params, filter })
}

/// Generate a return path from given standardized innovations. Returns the
/// path and the terminal state.
pub fn simulate_path(
    params: &ArmaGarchParams,
    init: FilterState,
    innovations: &[f64],
) -> (Vec<f64>, FilterState) {
    let mut st = init;
    let mut out = Vec::with_capacity(innovations.len());
    for &z in innovations {
        let var = st.next_var;
        let e = var.sqrt() * z;
        let r = params.conditional_mean(&st) + e;
        out.push(r);
        st = FilterState {
            prev_return: r,
            prev_resid: e,
            next_var: params.next_variance(e, var),
        };
    }
    (out, st)
}

/// `n_paths x horizon` matrix of simulated returns with Gaussian innovations.
/// Path `p` draws from stream `(seed, p)`.
pub fn simulate_univariate(
    params: &ArmaGarchParams,
    horizon: usize,
    n_paths: usize,
    seed: u64,
    init: FilterState,
) -> Result<DMatrix<f64>> {
    params.validate()?;
    let rows: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng::stream(seed, p as u64);
            let z: Vec<f64> = (0..horizon).map(|_| StandardNormal.sample(&mut rng)).collect();
            simulate_path(params, init, &z).0
        })
        .collect();
    Ok(DMatrix::from_fn(n_paths, horizon, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, 0);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                x = phi * x + z;
                x
            })
            .collect()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, 0);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn acf_of_ar1_decays_geometrically() {
        let x = ar1(0.5, 100_000, 11);
        let r = acf(&x, 3).unwrap();
        assert!((r[1] - 0.25).abs() < 0.02, "{r:?}");
        assert!((r[0] - 0.5).abs() < 0.02);
    }

    #[test]
    fn acf_white_noise_inside_band() {
        let r = acf(&noise(10_000, 3), 10).unwrap();
        assert!(r[0].abs() < 0.05);
        assert!(r.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn acf_constant_series_errors() {
        assert!(matches!(acf(&[1.0; 50], 5), Err(Error::ZeroVariance)));
        assert!(matches!(acf(&[1.0, 2.0, 3.0], 5), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn pacf_of_ar1_cuts_off() {
        let x = ar1(0.5, 100_000, 12);
        let p = pacf(&x, 4).unwrap();
        assert!((p[0] - 0.5).abs() < 0.02);
        assert!(p[1].abs() < 0.02 && p[2].abs() < 0.02, "{p:?}");
        let w = pacf(&noise(10_000, 5), 10).unwrap();
        assert!(w.iter().all(|v| v.abs() < 0.05), "{w:?}");
    }

    #[test]
    fn pacf_lag_one_equals_acf() {
        let x = noise(500, 9);
        assert_eq!(pacf(&x, 1).unwrap()[0], acf(&x, 1).unwrap()[0]);
    }

    #[test]
    fn degenerate_recursion_constant_sigma() {
        let p = ArmaGarchParams::garch(0.0, 0.04, 0.0, 0.0);
        let out = filter_residuals(&p, &noise(100, 1)).unwrap();
        assert!(out.sigmas.iter().all(|s| (s - 0.2).abs() < 1e-15));
    }

    #[test]
    fn filter_recovers_simulation_innovations() {
        let p = ArmaGarchParams {
            mu: 0.01,
            phi: 0.3,
            theta: -0.2,
            alpha0: 0.02,
            alpha1: 0.1,
            beta1: 0.8,
            gamma: 0.05,
        };
        let z = noise(2000, 21);
        let (path, _) = simulate_path(&p, p.initial_state(), &z);
        let out = filter_residuals(&p, &path).unwrap();
        for (a, b) in out.std_resid.iter().zip(&z) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn loglik_invariant_to_chunking() {
        let p = ArmaGarchParams {
            mu: 0.0,
            phi: 0.1,
            theta: 0.1,
            alpha0: 0.05,
            alpha1: 0.1,
            beta1: 0.85,
            gamma: 0.0,
        };
        let x = noise(1000, 2);
        let whole = filter_residuals(&p, &x).unwrap();
        let first = filter_from(&p, p.initial_state(), &x[..400]);
        let second = filter_from(&p, first.terminal, &x[400..]);
        assert!((whole.loglik - first.loglik - second.loglik).abs() < 1e-9);
        assert_eq!(whole.terminal, second.terminal);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = ArmaGarchParams::garch(0.0, 0.1, 0.5, 0.6);
        assert!(matches!(filter_residuals(&p, &[0.0, 1.0]), Err(Error::InvalidParams(_))));
        assert!(simulate_univariate(&p, 5, 2, 1, p.initial_state()).is_err());
    }

    #[test]
    fn simulation_shapes_and_determinism() {
        let p = ArmaGarchParams::garch(0.0, 0.05, 0.08, 0.90);
        let empty = simulate_univariate(&p, 0, 4, 1, p.initial_state()).unwrap();
        assert_eq!(empty.shape(), (4, 0));
        let a = simulate_univariate(&p, 21, 50, 42, p.initial_state()).unwrap();
        let b = simulate_univariate(&p, 21, 50, 42, p.initial_state()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn long_path_matches_stationary_variance() {
        let p = ArmaGarchParams::garch(0.0, 0.05, 0.08, 0.90);
        let m = simulate_univariate(&p, 200_000, 1, 8, p.initial_state()).unwrap();
        let x: Vec<f64> = m.row(0).iter().cloned().collect();
        let v = stats::variance(&x);
        let target = p.unconditional_variance();
        assert!((v / target - 1.0).abs() < 0.05, "{v} vs {target}");
    }

    #[test]
    fn fit_respects_stationarity_and_rejects_constant() {
        assert!(matches!(fit_arma_garch(&[0.01; 300], false), Err(Error::ZeroVariance)));
        let p = ArmaGarchParams::garch(0.0, 0.1, 0.1, 0.8);
        let x = simulate_univariate(&p, 1500, 1, 4, p.initial_state()).unwrap();
        let x: Vec<f64> = x.row(0).iter().cloned().collect();
        for gjr in [false, true] {
            let fit = fit_arma_garch(&x, gjr).unwrap();
            assert!(fit.params.persistence() < 1.0);
            assert_eq!(fit.filter.residuals.len(), x.len());
        }
    }

    #[test]
    fn mle_is_a_local_maximum() {
        let p = ArmaGarchParams {
            mu: 0.02,
            phi: 0.2,
            theta: 0.1,
            alpha0: 0.05,
            alpha1: 0.1,
            beta1: 0.85,
            gamma: 0.0,
        };
        let mut rng = rng::stream(77, 0);
        let z: Vec<f64> = (0..3000).map(|_| rng.sample(StandardNormal)).collect();
        let (x, _) = simulate_path(&p, p.initial_state(), &z);
        let fit = fit_arma_garch(&x, false).unwrap();
        let best = fit.filter.loglik;
        let f = fit.params;
        let bumps: [fn(&mut ArmaGarchParams, f64); 6] = [
            |p, s| p.mu += s * 0.01,
            |p, s| p.phi += s * 0.02,
            |p, s| p.theta += s * 0.02,
            |p, s| p.alpha0 *= 1.0 + s * 0.1,
            |p, s| p.alpha1 += s * 0.01,
            |p, s| p.beta1 += s * 0.01,
        ];
        for bump in bumps {
            for s in [-1.0, 1.0] {
                let mut q = f;
                bump(&mut q, s);
                if q.validate().is_err() {
                    continue;
                }
                let ll = filter_residuals(&q, &x).unwrap().loglik;
                assert!(ll < best, "perturbed {q:?} gives {ll} >= {best}");
            }
        }
    }
}
