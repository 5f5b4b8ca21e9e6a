//! Two-state Markov switching model with AR(1) errors, regime-specific
//! volatility and logistic time-varying transition probabilities.
//!
//! The driver series is expected pre-lagged: `driver[t]` is the value known
//! at the end of period `t - 1`. It enters both the regime means
//! `mu_t(m) = beta0_m + beta1_m * driver[t]` and the transition into `t`.
//! Regime index 0 is "high", index 1 is "low".

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{bfgs, BfgsOptions};
use crate::stats;

pub const HIGH: usize = 0;
pub const LOW: usize = 1;
pub const MIN_FIT_LENGTH: usize = 60;
pub const DEFAULT_MIN_WINDOW: usize = 60;
const PHI_BOUND: f64 = 0.999;
const LOGIT_BOUND: f64 = 15.0;
const SIGMA_FLOOR: f64 = 0.01;

pub type Transition = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsParams {
    pub beta0: [f64; 2],
    pub beta1: [f64; 2],
    pub sigma: [f64; 2],
    pub phi1: f64,
    pub c: [f64; 2],
    pub d: [f64; 2],
}

impl MsParams {
    pub fn validate(&self) -> Result<()> {
        let finite = self
            .beta0
            .iter()
            .chain(&self.beta1)
            .chain(&self.sigma)
            .chain(&self.c)
            .chain(&self.d)
            .all(|v| v.is_finite());
        if !finite || !self.phi1.is_finite() {
            return Err(Error::InvalidParams("non-finite regime parameter".into()));
        }
        if self.sigma.iter().any(|s| *s <= 0.0) {
            return Err(Error::InvalidParams("regime sigma must be positive".into()));
        }
        if self.phi1.abs() >= 1.0 {
            return Err(Error::InvalidParams(format!("|phi1| = {} must be < 1", self.phi1.abs())));
        }
        Ok(())
    }

    pub fn mean(&self, m: usize, driver: f64) -> f64 {
        self.beta0[m] + self.beta1[m] * driver
    }

    /// Unconditional mean level of regime `m` at the given average driver.
    pub fn level(&self, m: usize, mean_driver: f64) -> f64 {
        self.mean(m, mean_driver)
    }

    pub fn transition(&self, driver: f64) -> Transition {
        transition_matrix(self.c, self.d, driver)
    }

    /// Swap the two regimes.
    pub fn swapped(&self) -> MsParams {
        let sw = |a: [f64; 2]| [a[1], a[0]];
        MsParams {
            beta0: sw(self.beta0),
            beta1: sw(self.beta1),
            sigma: sw(self.sigma),
            phi1: self.phi1,
            c: sw(self.c),
            d: sw(self.d),
        }
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-stochastic matrix `P[i][j] = P(s_t = j | s_{t-1} = i)` with logistic
/// stay probabilities.
pub fn transition_matrix(c: [f64; 2], d: [f64; 2], driver: f64) -> Transition {
    let p0 = logistic(c[0] + d[0] * driver);
    let p1 = logistic(c[1] + d[1] * driver);
    [[p0, 1.0 - p0], [1.0 - p1, p1]]
}

pub fn ergodic(p: &Transition) -> [f64; 2] {
    let denom = 2.0 - p[0][0] - p[1][1];
    if denom < 1e-14 {
        return [0.5, 0.5];
    }
    let h = (1.0 - p[1][1]) / denom;
    [h, 1.0 - h]
}

fn propagate(p: &Transition, prob: [f64; 2]) -> [f64; 2] {
    [
        prob[0] * p[0][0] + prob[1] * p[1][0],
        prob[0] * p[0][1] + prob[1] * p[1][1],
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    /// `P(s_t | y_1..y_{t-1})`.
    pub predicted: Vec<[f64; 2]>,
    /// `P(s_t | y_1..y_t)`.
    pub filtered: Vec<[f64; 2]>,
    /// Transition matrix into each date.
    pub transitions: Vec<Transition>,
    pub loglik: f64,
}

fn check_inputs(y: &[f64], driver: &[f64]) -> Result<()> {
    if y.len() != driver.len() {
        return Err(Error::LengthMismatch(format!("y has {} values, driver {}", y.len(), driver.len())));
    }
    if y.iter().chain(driver).any(|v| !v.is_finite()) {
        return Err(Error::OutOfRangeInput("non-finite value in regime inputs".into()));
    }
    Ok(())
}

/// Log observation density of `y[t]` in each regime.
fn log_densities(params: &MsParams, y: &[f64], driver: &[f64], t: usize) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (m, o) in out.iter_mut().enumerate() {
        let s2 = params.sigma[m] * params.sigma[m];
        let (mean, var) = if t == 0 {
            (params.mean(m, driver[0]), s2 / (1.0 - params.phi1 * params.phi1))
        } else {
            (
                params.mean(m, driver[t]) + params.phi1 * (y[t - 1] - params.mean(m, driver[t - 1])),
                s2,
            )
        };
        let e = y[t] - mean;
        *o = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * e * e / var;
    }
    out
}

pub fn hamilton_filter(params: &MsParams, y: &[f64], driver: &[f64]) -> Result<FilterResult> {
    check_inputs(y, driver)?;
    params.validate()?;
    if y.is_empty() {
        return Err(Error::too_short(1, 0));
    }
    let n = y.len();
    let mut predicted = Vec::with_capacity(n);
    let mut filtered = Vec::with_capacity(n);
    let mut transitions = Vec::with_capacity(n);
    let mut loglik = 0.0;
    for t in 0..n {
        let p = params.transition(driver[t]);
        let prior = if t == 0 { ergodic(&p) } else { propagate(&p, filtered[t - 1]) };
        transitions.push(p);
        predicted.push(prior);
        let ld = log_densities(params, y, driver, t);
        let lw = [prior[0].ln() + ld[0], prior[1].ln() + ld[1]];
        let lmax = lw[0].max(lw[1]);
        if !lmax.is_finite() {
            return Err(Error::NumericalUnderflow(t));
        }
        let w = [(lw[0] - lmax).exp(), (lw[1] - lmax).exp()];
        let s = w[0] + w[1];
        loglik += lmax + s.ln();
        filtered.push([w[0] / s, w[1] / s]);
    }
    Ok(FilterResult {
        predicted,
        filtered,
        transitions,
        loglik,
    })
}

/// One-step-ahead regime probabilities for the date after `filtered_last`.
pub fn predict_next(params: &MsParams, filtered_last: [f64; 2], next_driver: f64) -> [f64; 2] {
    propagate(&params.transition(next_driver), filtered_last)
}

/// Backward smoothing pass; `transitions[t]` governs the move into date `t`.
pub fn kim_smoother(filtered: &[[f64; 2]], predicted: &[[f64; 2]], transitions: &[Transition]) -> Result<Vec<[f64; 2]>> {
    let n = filtered.len();
    if predicted.len() != n || transitions.len() != n {
        return Err(Error::LengthMismatch("smoother inputs".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut smoothed = vec![[0.0; 2]; n];
    smoothed[n - 1] = filtered[n - 1];
    for t in (0..n - 1).rev() {
        let p = &transitions[t + 1];
        let mut s = [0.0; 2];
        for i in 0..2 {
            let mut acc = 0.0;
            for j in 0..2 {
                if predicted[t + 1][j] > 0.0 {
                    acc += p[i][j] * smoothed[t + 1][j] / predicted[t + 1][j];
                }
            }
            s[i] = filtered[t][i] * acc;
        }
        let tot = s[0] + s[1];
        smoothed[t] = if tot > 0.0 { [s[0] / tot, s[1] / tot] } else { filtered[t] };
    }
    Ok(smoothed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeProbSeries {
    pub predicted: Vec<f64>,
    pub filtered: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub oos: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsDiagnostics {
    /// Distance between regime mean levels in units of sd(y).
    pub separation: f64,
    /// Smaller of the two average smoothed occupancies.
    pub min_occupancy: f64,
    pub degenerate: bool,
    /// Log-likelihood at each start before optimization.
    pub start_logliks: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsFit {
    pub params: MsParams,
    pub loglik: f64,
    pub probs: RegimeProbSeries,
    pub diagnostics: MsDiagnostics,
}

/// Affine standardization of `y` and `driver` used internally by the fit.
#[derive(Debug, Clone, Copy)]
struct Scale {
    my: f64,
    sy: f64,
    mx: f64,
    sx: f64,
}

impl Scale {
    fn new(y: &[f64], driver: &[f64]) -> Result<Scale> {
        let sy = stats::std_dev(y);
        if !(sy > 0.0) {
            return Err(Error::ZeroVariance);
        }
        let sx = stats::std_dev(driver);
        Ok(Scale {
            my: stats::mean(y),
            sy,
            mx: stats::mean(driver),
            sx: if sx > 0.0 { sx } else { 1.0 },
        })
    }

    fn to_original(&self, p: &MsParams) -> MsParams {
        let mut o = *p;
        for m in 0..2 {
            o.beta1[m] = self.sy * p.beta1[m] / self.sx;
            o.beta0[m] = self.my + self.sy * p.beta0[m] - o.beta1[m] * self.mx;
            o.sigma[m] = self.sy * p.sigma[m];
            o.d[m] = p.d[m] / self.sx;
            o.c[m] = p.c[m] - o.d[m] * self.mx;
        }
        o
    }

    fn to_standard(&self, p: &MsParams) -> MsParams {
        let mut o = *p;
        for m in 0..2 {
            o.beta1[m] = p.beta1[m] * self.sx / self.sy;
            o.beta0[m] = (p.beta0[m] + p.beta1[m] * self.mx - self.my) / self.sy;
            o.sigma[m] = p.sigma[m] / self.sy;
            o.c[m] = p.c[m] + p.d[m] * self.mx;
            o.d[m] = p.d[m] * self.sx;
        }
        o
    }
}

fn bounded(x: f64, b: f64) -> f64 {
    b * (x / b).tanh()
}

fn unbounded(v: f64, b: f64) -> f64 {
    let r = (v / b).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
    b * r.atanh()
}

fn unpack(th: &[f64]) -> MsParams {
    MsParams {
        beta0: [th[0], th[1]],
        beta1: [th[2], th[3]],
        sigma: [SIGMA_FLOOR + th[4].exp(), SIGMA_FLOOR + th[5].exp()],
        phi1: PHI_BOUND * th[6].tanh(),
        c: [bounded(th[7], LOGIT_BOUND), bounded(th[8], LOGIT_BOUND)],
        d: [bounded(th[9], LOGIT_BOUND), bounded(th[10], LOGIT_BOUND)],
    }
}

fn pack(p: &MsParams) -> Vec<f64> {
    vec![
        p.beta0[0],
        p.beta0[1],
        p.beta1[0],
        p.beta1[1],
        (p.sigma[0] - SIGMA_FLOOR).max(1e-6).ln(),
        (p.sigma[1] - SIGMA_FLOOR).max(1e-6).ln(),
        (p.phi1 / PHI_BOUND).clamp(-0.999, 0.999).atanh(),
        unbounded(p.c[0], LOGIT_BOUND),
        unbounded(p.c[1], LOGIT_BOUND),
        unbounded(p.d[0], LOGIT_BOUND),
        unbounded(p.d[1], LOGIT_BOUND),
    ]
}

/// Deterministic starting points on the standardized scale.
fn default_starts() -> Vec<MsParams> {
    // (high mean, low mean, high sigma, low sigma, phi, stay logit, driver slope)
    let grid: [(f64, f64, f64, f64, f64, f64, f64); 10] = [
        (1.0, -0.5, 1.0, 0.5, 0.0, 2.0, 0.0),
        (0.5, -0.5, 0.7, 0.7, 0.0, 2.0, 0.0),
        (1.5, -0.3, 1.0, 0.5, 0.0, 3.0, 0.0),
        (0.8, -0.8, 0.5, 0.5, 0.0, 1.5, 0.0),
        (1.0, -0.5, 1.0, 0.5, 0.5, 2.0, 0.0),
        (1.0, -0.5, 1.0, 0.5, -0.3, 2.0, 0.0),
        (2.0, 0.0, 1.0, 0.6, 0.2, 2.5, 0.0),
        (0.3, -0.3, 1.2, 0.4, 0.0, 2.0, 0.0),
        (1.0, -1.0, 0.4, 0.4, 0.3, 3.0, 0.0),
        (0.5, -1.0, 0.8, 0.4, 0.0, 1.0, 0.5),
    ];
    grid.iter()
        .map(|&(mh, ml, sh, sl, phi, c, d)| MsParams {
            beta0: [mh, ml],
            beta1: [0.0, 0.0],
            sigma: [sh, sl],
            phi1: phi,
            c: [c, c],
            d: [d, -d],
        })
        .collect()
}

fn fit_standardized(ys: &[f64], xs: &[f64], starts: &[MsParams]) -> Result<(MsParams, f64, Vec<f64>, bool)> {
    let objective = |th: &[f64]| match hamilton_filter(&unpack(th), ys, xs) {
        Ok(f) => -f.loglik,
        Err(_) => f64::INFINITY,
    };
    let opts = BfgsOptions {
        max_iter: 400,
        grad_tol: 1e-5,
        f_tol: 1e-11,
    };
    let results: Vec<_> = starts
        .par_iter()
        .map(|s| {
            let x0 = pack(s);
            let f0 = objective(&x0);
            (f0, bfgs(objective, &x0, opts))
        })
        .collect();
    let start_ll: Vec<f64> = results.iter().map(|(f0, _)| -f0).collect();
    let mut best: Option<&crate::optim::Minimum> = None;
    for (_, m) in &results {
        if m.value.is_finite() && best.map_or(true, |b| m.value < b.value) {
            best = Some(m);
        }
    }
    let best = best.ok_or_else(|| Error::NonConvergence("no finite regime likelihood".into()))?;
    Ok((unpack(&best.x), -best.value, start_ll, best.converged))
}

fn validate_fit_inputs(y: &[f64], driver: &[f64]) -> Result<()> {
    check_inputs(y, driver)?;
    if y.len() < MIN_FIT_LENGTH {
        return Err(Error::too_short(MIN_FIT_LENGTH, y.len()));
    }
    Ok(())
}

fn fit_with_starts(y: &[f64], driver: &[f64], warm: Option<&MsParams>) -> Result<MsFit> {
    validate_fit_inputs(y, driver)?;
    let scale = Scale::new(y, driver)?;
    let ys: Vec<f64> = y.iter().map(|v| (v - scale.my) / scale.sy).collect();
    let xs: Vec<f64> = driver.iter().map(|v| (v - scale.mx) / scale.sx).collect();
    let mut starts = default_starts();
    if let Some(w) = warm {
        starts.insert(0, scale.to_standard(w));
    }
    let (std_params, _, start_ll, converged) = fit_standardized(&ys, &xs, &starts)?;
    // high regime has the larger mean level; driver has mean zero here
    let std_params = if std_params.beta0[HIGH] < std_params.beta0[LOW] {
        std_params.swapped()
    } else {
        std_params
    };
    let params = scale.to_original(&std_params);
    let filt = hamilton_filter(&params, y, driver)?;
    let smoothed = kim_smoother(&filt.filtered, &filt.predicted, &filt.transitions)?;
    let mean_driver = stats::mean(driver);
    let separation = (params.level(HIGH, mean_driver) - params.level(LOW, mean_driver)).abs() / scale.sy;
    let occ_high = smoothed.iter().map(|p| p[HIGH]).sum::<f64>() / y.len() as f64;
    let min_occupancy = occ_high.min(1.0 - occ_high);
    // start log-likelihoods are reported on the original scale
    let shift = -(y.len() as f64) * scale.sy.ln();
    Ok(MsFit {
        params,
        loglik: filt.loglik,
        probs: RegimeProbSeries {
            predicted: filt.predicted.iter().map(|p| p[HIGH]).collect(),
            filtered: filt.filtered.iter().map(|p| p[HIGH]).collect(),
            smoothed: smoothed.iter().map(|p| p[HIGH]).collect(),
            oos: vec![None; y.len()],
        },
        diagnostics: MsDiagnostics {
            separation,
            min_occupancy,
            degenerate: separation < 0.5 || min_occupancy < 0.05,
            start_logliks: start_ll.iter().map(|l| l + shift).collect(),
            converged,
        },
    })
}

/// Maximum likelihood fit from ten deterministic starting points.
pub fn fit_ms(y: &[f64], driver: &[f64]) -> Result<MsFit> {
    fit_with_starts(y, driver, None)
}

/// True out-of-sample probabilities of the high regime: for every
/// `t >= min_window` the model is refit on `y[..t]` and the one-step-ahead
/// probability for date `t` is recorded. Earlier dates are `None`.
pub fn oos_regime_probs(y: &[f64], driver: &[f64], min_window: usize) -> Result<Vec<Option<f64>>> {
    check_inputs(y, driver)?;
    let min_window = min_window.max(MIN_FIT_LENGTH);
    if y.len() <= min_window {
        return Err(Error::too_short(min_window + 1, y.len()));
    }
    let mut out = vec![None; y.len()];
    let mut warm: Option<MsParams> = None;
    for t in min_window..y.len() {
        let fit = fit_with_starts(&y[..t], &driver[..t], warm.as_ref())?;
        let filt = hamilton_filter(&fit.params, &y[..t], &driver[..t])?;
        let next = predict_next(&fit.params, *filt.filtered.last().unwrap(), driver[t]);
        out[t] = Some(next[HIGH]);
        warm = Some(fit.params);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RegimeLabel {
    High,
    Low,
}

impl fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegimeLabel::High => "high",
            RegimeLabel::Low => "low",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FourState {
    HrHc,
    HrLc,
    LrHc,
    LrLc,
}

impl fmt::Display for FourState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FourState::HrHc => "HR/HC",
            FourState::HrLc => "HR/LC",
            FourState::LrHc => "LR/HC",
            FourState::LrLc => "LR/LC",
        })
    }
}

/// High when `p >= threshold`.
pub fn label_regimes(probs: &[f64], threshold: f64) -> Vec<RegimeLabel> {
    probs
        .iter()
        .map(|&p| if p >= threshold { RegimeLabel::High } else { RegimeLabel::Low })
        .collect()
}

pub fn four_state(risk: &[RegimeLabel], corr: &[RegimeLabel]) -> Result<Vec<FourState>> {
    if risk.len() != corr.len() {
        return Err(Error::LengthMismatch("risk and correlation labels".into()));
    }
    Ok(risk
        .iter()
        .zip(corr)
        .map(|(r, c)| match (r, c) {
            (RegimeLabel::High, RegimeLabel::High) => FourState::HrHc,
            (RegimeLabel::High, RegimeLabel::Low) => FourState::HrLc,
            (RegimeLabel::Low, RegimeLabel::High) => FourState::LrHc,
            (RegimeLabel::Low, RegimeLabel::Low) => FourState::LrLc,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub count: usize,
    pub mean_monthly: f64,
    pub ann_mean: f64,
    /// Annualized volatility; NaN for a single observation.
    pub ann_vol: f64,
}

/// Per-label statistics of monthly returns, matched on date. Labels with no
/// matching month are absent from the result.
pub fn regime_conditional_stats<L: Ord + Copy>(
    returns: &[(NaiveDate, f64)],
    labels: &[(NaiveDate, L)],
) -> Result<BTreeMap<L, BucketStats>> {
    let lookup: BTreeMap<NaiveDate, L> = labels.iter().cloned().collect();
    let mut buckets: BTreeMap<L, Vec<f64>> = BTreeMap::new();
    for (d, r) in returns {
        if let Some(l) = lookup.get(d) {
            buckets.entry(*l).or_default().push(*r);
        }
    }
    if buckets.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(buckets
        .into_iter()
        .map(|(l, v)| {
            let m = stats::mean(&v);
            let vol = if v.len() > 1 { stats::std_dev(&v) * 12f64.sqrt() } else { f64::NAN };
            (
                l,
                BucketStats {
                    count: v.len(),
                    mean_monthly: m,
                    ann_mean: 12.0 * m,
                    ann_vol: vol,
                },
            )
        })
        .collect())
}

/// Simulate the model: returns `(y, states)` with `states[t]` in {HIGH, LOW}.
pub fn simulate_ms<R: rand::Rng + ?Sized>(params: &MsParams, driver: &[f64], rng: &mut R) -> (Vec<f64>, Vec<usize>) {
    use rand_distr::{Distribution, StandardNormal};
    let n = driver.len();
    let mut y: Vec<f64> = Vec::with_capacity(n);
    let mut s: Vec<usize> = Vec::with_capacity(n);
    for t in 0..n {
        let p = params.transition(driver[t]);
        let prob_high = if t == 0 { ergodic(&p)[HIGH] } else { p[s[t - 1]][HIGH] };
        let st = if rng.random::<f64>() < prob_high { HIGH } else { LOW };
        let e: f64 = StandardNormal.sample(rng);
        let v = if t == 0 {
            params.mean(st, driver[0]) + params.sigma[st] / (1.0 - params.phi1 * params.phi1).sqrt() * e
        } else {
            params.mean(st, driver[t]) + params.phi1 * (y[t - 1] - params.mean(st, driver[t - 1])) + params.sigma[st] * e
        };
        y.push(v);
        s.push(st);
    }
    (y, s)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    /// Brute-force joint probabilities `P(s_0..s_{k}, y_0..y_k)` for every
    /// state path of length `k + 1`.
    fn path_weights(p: &MsParams, y: &[f64], x: &[f64], k: usize) -> Vec<(Vec<usize>, f64)> {
        let mut out = Vec::new();
        for code in 0..(1usize << (k + 1)) {
            let path: Vec<usize> = (0..=k).map(|t| (code >> t) & 1).collect();
            let mut w = ergodic(&p.transition(x[0]))[path[0]];
            for t in 0..=k {
                if t > 0 {
                    w *= p.transition(x[t])[path[t - 1]][path[t]];
                }
                w *= log_densities(p, y, x, t)[path[t]].exp();
            }
            out.push((path, w));
        }
        out
    }

    pub(crate) fn enumeration_oracle(p: &MsParams, y: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
        let n = y.len();
        let mut filtered = Vec::new();
        let mut predicted = Vec::new();
        for t in 0..n {
            let ws = path_weights(p, y, x, t);
            let tot: f64 = ws.iter().map(|(_, w)| w).sum();
            filtered.push(ws.iter().filter(|(s, _)| s[t] == HIGH).map(|(_, w)| w).sum::<f64>() / tot);
            // predicted: joint of y_0..y_{t-1} and s_t, integrating y_t out
            let pred = if t == 0 {
                ergodic(&p.transition(x[0]))[HIGH]
            } else {
                let prev = path_weights(p, y, x, t - 1);
                let tot_prev: f64 = prev.iter().map(|(_, w)| w).sum();
                prev.iter()
                    .map(|(s, w)| w * p.transition(x[t])[s[t - 1]][HIGH])
                    .sum::<f64>()
                    / tot_prev
            };
            predicted.push(pred);
        }
        let full = path_weights(p, y, x, n - 1);
        let tot: f64 = full.iter().map(|(_, w)| w).sum();
        let smoothed = (0..n)
            .map(|t| full.iter().filter(|(s, _)| s[t] == HIGH).map(|(_, w)| w).sum::<f64>() / tot)
            .collect();
        (predicted, filtered, smoothed, tot.ln())
    }

    pub(crate) fn random_params<R: Rng>(rng: &mut R) -> MsParams {
        MsParams {
            beta0: [rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0)],
            beta1: [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
            sigma: [rng.random_range(0.3..2.0), rng.random_range(0.3..2.0)],
            phi1: rng.random_range(-0.9..0.9),
            c: [rng.random_range(-2.0..3.0), rng.random_range(-2.0..3.0)],
            d: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        }
    }

    #[test]
    fn filter_and_smoother_match_enumeration() {
        let mut r = rng::stream(42, 0);
        for _ in 0..20 {
            let p = random_params(&mut r);
            let n = r.random_range(1..=8);
            let x: Vec<f64> = (0..n).map(|_| r.random_range(-1.5..1.5)).collect();
            let y: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..3.0)).collect();
            let f = hamilton_filter(&p, &y, &x).unwrap();
            let s = kim_smoother(&f.filtered, &f.predicted, &f.transitions).unwrap();
            let (pr, fi, sm, ll) = enumeration_oracle(&p, &y, &x);
            for t in 0..n {
                assert!((f.predicted[t][HIGH] - pr[t]).abs() < 1e-10);
                assert!((f.filtered[t][HIGH] - fi[t]).abs() < 1e-10);
                assert!((s[t][HIGH] - sm[t]).abs() < 1e-10);
            }
            assert!((f.loglik - ll).abs() < 1e-9);
        }
    }

    #[test]
    fn transition_cases() {
        let m = transition_matrix([0.0, 0.0], [0.0, 0.0], 3.7);
        assert!(m.iter().flatten().all(|v| *v == 0.5));
        let a = transition_matrix([1.0, -2.0], [0.0, 0.0], -5.0);
        let b = transition_matrix([1.0, -2.0], [0.0, 0.0], 5.0);
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn transition_rows_sum_to_one(c0 in -20.0..20.0f64, c1 in -20.0..20.0f64, d0 in -5.0..5.0f64,
                                      d1 in -5.0..5.0f64, x in -10.0..10.0f64) {
            let m = transition_matrix([c0, c1], [d0, d1], x);
            for row in m {
                prop_assert!((row[0] + row[1] - 1.0).abs() < 1e-15);
                prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn single_step_is_bayes_update() {
        let p = MsParams {
            beta0: [1.0, 0.0],
            beta1: [0.0, 0.0],
            sigma: [1.0, 0.5],
            phi1: 0.0,
            c: [1.0, 2.0],
            d: [0.0, 0.0],
        };
        let f = hamilton_filter(&p, &[0.7], &[0.0]).unwrap();
        let prior = ergodic(&p.transition(0.0));
        let l: Vec<f64> = (0..2)
            .map(|m| prior[m] * stats::norm_pdf((0.7 - p.beta0[m]) / p.sigma[m]) / p.sigma[m])
            .collect();
        assert!((f.filtered[0][HIGH] - l[0] / (l[0] + l[1])).abs() < 1e-14);
    }

    #[test]
    fn identical_regimes_propagate_prior() {
        let p = MsParams {
            beta0: [0.3, 0.3],
            beta1: [0.2, 0.2],
            sigma: [1.0, 1.0],
            phi1: 0.4,
            c: [1.0, -0.5],
            d: [0.7, 0.1],
        };
        let mut r = rng::stream(1, 0);
        let x: Vec<f64> = (0..30).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..30).map(|_| r.random_range(-1.0..1.0)).collect();
        let f = hamilton_filter(&p, &y, &x).unwrap();
        for t in 0..30 {
            assert!((f.filtered[t][HIGH] - f.predicted[t][HIGH]).abs() < 1e-12);
            if t + 1 < 30 {
                let next = propagate(&f.transitions[t + 1], f.filtered[t]);
                assert!((f.predicted[t + 1][HIGH] - next[HIGH]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn long_series_does_not_underflow() {
        let p = MsParams {
            beta0: [5.0, 0.0],
            beta1: [0.0, 0.0],
            sigma: [0.1, 0.1],
            phi1: 0.0,
            c: [2.0, 2.0],
            d: [0.0, 0.0],
        };
        let y: Vec<f64> = (0..5000).map(|t| if (t / 50) % 2 == 0 { 5.0 } else { 0.0 }).collect();
        let f = hamilton_filter(&p, &y, &vec![0.0; 5000]).unwrap();
        assert!(f.loglik.is_finite());
        let s = kim_smoother(&f.filtered, &f.predicted, &f.transitions).unwrap();
        assert_eq!(s.last(), f.filtered.last());
        assert!(s.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn smoother_length_mismatch() {
        assert!(matches!(
            kim_smoother(&[[0.5, 0.5]], &[], &[]),
            Err(Error::LengthMismatch(_))
        ));
    }

    pub(crate) fn generator() -> MsParams {
        MsParams {
            beta0: [6.0, 0.0],
            beta1: [0.5, 0.5],
            sigma: [4.0, 1.0],
            phi1: 0.3,
            c: [2.5, 2.5],
            d: [0.5, -0.5],
        }
    }

    pub(crate) fn synthetic(seed: u64, n: usize, p: &MsParams) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
        use rand_distr::{Distribution, StandardNormal};
        let mut r = rng::stream(seed, 0);
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let (y, s) = simulate_ms(p, &x, &mut r);
        (y, x, s)
    }

    pub(crate) fn accuracy(probs: &[f64], states: &[usize]) -> f64 {
        probs
            .iter()
            .zip(states)
            .filter(|(p, s)| (**p >= 0.5) == (**s == HIGH))
            .count() as f64
            / states.len() as f64
    }

    #[test]
    fn fit_recovers_regimes() {
        let (y, x, s) = synthetic(3, 500, &generator());
        let fit = fit_ms(&y, &x).unwrap();
        let acc = accuracy(&fit.probs.smoothed, &s);
        assert!(acc >= 0.9, "accuracy {acc}");
        assert!(fit.params.phi1.abs() < 1.0);
        assert!(!fit.diagnostics.degenerate);
        assert!(fit.diagnostics.start_logliks.iter().all(|l| fit.loglik >= *l - 1e-8));
        assert!(fit.params.sigma[HIGH] > fit.params.sigma[LOW]);
    }

    #[test]
    fn single_regime_is_flagged_degenerate() {
        let p = MsParams {
            beta0: [1.0, 1.0],
            beta1: [0.0, 0.0],
            sigma: [1.0, 1.0],
            phi1: 0.2,
            c: [2.0, 2.0],
            d: [0.0, 0.0],
        };
        let (y, x, _) = synthetic(5, 400, &p);
        let fit = fit_ms(&y, &x).unwrap();
        assert!(fit.diagnostics.degenerate, "{:?}", fit.diagnostics);
    }

    #[test]
    fn fit_rejects_short_series() {
        assert!(matches!(fit_ms(&[1.0; 30], &[0.0; 30]), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn oos_is_causal_and_deterministic() {
        let (y, x, _) = synthetic(8, 70, &generator());
        let a = oos_regime_probs(&y, &x, 60).unwrap();
        let b = oos_regime_probs(&y, &x, 60).unwrap();
        assert_eq!(a, b);
        assert!(a[..60].iter().all(|v| v.is_none()));
        assert!(a[60..].iter().all(|v| v.is_some()));
        let mut y2 = y.clone();
        y2[65] += 50.0;
        let c = oos_regime_probs(&y2, &x, 60).unwrap();
        assert_eq!(a[..=65], c[..=65]);
    }

    #[test]
    fn labels_and_four_state() {
        let l = label_regimes(&[0.6, 0.5, 0.49], 0.5);
        assert_eq!(l, vec![RegimeLabel::High, RegimeLabel::High, RegimeLabel::Low]);
        let f = four_state(&[RegimeLabel::High], &[RegimeLabel::Low]).unwrap();
        assert_eq!(f[0].to_string(), "HR/LC");
    }

    #[test]
    fn conditional_stats_buckets() {
        let d = |m| NaiveDate::from_ymd_opt(2001, m, 28).unwrap();
        let labels: Vec<_> = (1..=12)
            .map(|m| (d(m), if m % 3 == 0 { RegimeLabel::High } else { RegimeLabel::Low }))
            .collect();
        let rets: Vec<_> = labels
            .iter()
            .map(|(dt, l)| (*dt, if *l == RegimeLabel::High { 0.01 } else { -0.01 }))
            .collect();
        let s = regime_conditional_stats(&rets, &labels).unwrap();
        assert!((s[&RegimeLabel::High].mean_monthly - 0.01).abs() < 1e-15);
        assert!((s[&RegimeLabel::Low].mean_monthly + 0.01).abs() < 1e-15);
        let all_low: Vec<_> = labels.iter().map(|(dt, _)| (*dt, RegimeLabel::Low)).collect();
        let s = regime_conditional_stats(&rets, &all_low).unwrap();
        assert!(!s.contains_key(&RegimeLabel::High));
        let other = vec![(NaiveDate::from_ymd_opt(1990, 1, 1).unwrap(), RegimeLabel::Low)];
        assert!(matches!(regime_conditional_stats(&rets, &other), Err(Error::NoOverlap)));
    }

    #[test]
    fn scale_round_trip() {
        let mut r = rng::stream(2, 0);
        let p = random_params(&mut r);
        let s = Scale {
            my: 0.3,
            sy: 2.5,
            mx: -0.4,
            sx: 0.7,
        };
        let q = s.to_original(&s.to_standard(&p));
        for m in 0..2 {
            assert!((q.beta0[m] - p.beta0[m]).abs() < 1e-12);
            assert!((q.c[m] - p.c[m]).abs() < 1e-12);
            assert!((q.d[m] - p.d[m]).abs() < 1e-12);
        }
    }
}
