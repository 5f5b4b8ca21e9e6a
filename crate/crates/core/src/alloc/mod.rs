//! Long-only, fully invested portfolio construction.

mod cvar;
pub(crate) mod lp;
pub(crate) mod qp;

use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::scenario::{simulate_scenarios, JointModelFit, ScenarioSet};

pub use cvar::{max_return_cvar, min_cvar, min_cvar_with_floor, portfolio_cvar, CvarOptions, LP_MAX_SCENARIOS};

pub const RESAMPLE_COUNT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocFlag {
    MinVarianceFallback,
    MinCvarFallback,
    PsdRepaired,
    Subsampled,
}

impl fmt::Display for AllocFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AllocFlag::MinVarianceFallback => "min_variance_fallback",
            AllocFlag::MinCvarFallback => "min_cvar_fallback",
            AllocFlag::PsdRepaired => "psd_repaired",
            AllocFlag::Subsampled => "subsampled",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub weights: Vec<f64>,
    pub flags: Vec<AllocFlag>,
}

impl Allocation {
    fn plain(weights: Vec<f64>) -> Self {
        Self {
            weights,
            flags: Vec::new(),
        }
    }

    fn with_flag(mut self, flag: AllocFlag) -> Self {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
            self.flags.sort();
        }
        self
    }

    /// Flags joined with `|`, empty when none.
    pub fn flag_string(&self) -> String {
        self.flags.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("|")
    }
}

/// Clip round-off negatives and renormalize onto the simplex.
pub(crate) fn finalize(w: &[f64]) -> Result<Vec<f64>> {
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence("non-finite weights".into()));
    }
    let clipped: Vec<f64> = w.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = clipped.iter().sum();
    if !(s > 0.0) {
        return Err(Error::NonConvergence("weights vanished".into()));
    }
    Ok(clipped.iter().map(|v| v / s).collect())
}

fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::LengthMismatch(format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutOfRangeInput("non-finite matrix entry".into()));
    }
    Ok(n)
}

fn require_pd(cov: &DMatrix<f64>) -> Result<usize> {
    let n = check_square(cov)?;
    if !linalg::is_symmetric(cov, 1e-12 * cov.amax().max(1.0)) || nalgebra::Cholesky::new(cov.clone()).is_none() {
        return Err(Error::NotPd);
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveWeighting {
    Equal,
    InverseVol,
}

/// Equal weights over `vols.len()` assets, or weights proportional to `1 / vol`.
pub fn naive_weights(vols: &[f64], mode: NaiveWeighting) -> Result<Vec<f64>> {
    let n = vols.len();
    if n == 0 {
        return Err(Error::EmptyPanel);
    }
    match mode {
        NaiveWeighting::Equal => Ok(vec![1.0 / n as f64; n]),
        NaiveWeighting::InverseVol => {
            if vols.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::ZeroVol);
            }
            let inv: Vec<f64> = vols.iter().map(|v| 1.0 / v).collect();
            let s: f64 = inv.iter().sum();
            Ok(inv.iter().map(|v| v / s).collect())
        }
    }
}

pub fn portfolio_variance(w: &[f64], cov: &DMatrix<f64>) -> f64 {
    linalg::quad_form(cov, w)
}

/// `w_i (Cov w)_i`; sums to the portfolio variance.
pub fn risk_contributions(w: &[f64], cov: &DMatrix<f64>) -> Vec<f64> {
    let cw = linalg::mat_vec(cov, w);
    w.iter().zip(&cw).map(|(a, b)| a * b).collect()
}

/// Weighted average volatility over portfolio volatility.
pub fn diversification_ratio(w: &[f64], cov: &DMatrix<f64>) -> f64 {
    let avg: f64 = w.iter().enumerate().map(|(i, wi)| wi * cov[(i, i)].sqrt()).sum();
    avg / portfolio_variance(w, cov).sqrt()
}

fn simplex_qp(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    let a = DMatrix::from_element(1, n, 1.0);
    let x0 = vec![1.0 / n as f64; n];
    finalize(&qp::active_set(m, &a, &[1.0], &x0)?.x)
}

/// Minimize `w'Mw` over the simplex. Small negative eigenvalues (down to
/// -1e-10) are clipped to zero; anything more negative is rejected.
pub fn quadratic_min(m: &DMatrix<f64>) -> Result<Allocation> {
    let n = check_square(m)?;
    if n == 1 {
        return Ok(Allocation::plain(vec![1.0]));
    }
    let sym = linalg::symmetrize(m);
    let min_eig = linalg::min_eigenvalue(&sym);
    if min_eig < -1e-10 {
        return Err(Error::NotPsd(min_eig));
    }
    if min_eig < 0.0 {
        let repaired = linalg::clip_eigenvalues(&sym, 0.0);
        return Ok(Allocation::plain(simplex_qp(&repaired)?).with_flag(AllocFlag::PsdRepaired));
    }
    Ok(Allocation::plain(simplex_qp(&sym)?))
}

/// Equal risk contributions by cyclical coordinate descent on
/// `1/2 y'Cov y - (1/N) sum ln y_i`, whose stationary point has
/// `y_i (Cov y)_i = 1/N` for all `i`.
pub fn risk_parity(cov: &DMatrix<f64>) -> Result<Allocation> {
    let n = require_pd(cov)?;
    if n == 1 {
        return Ok(Allocation::plain(vec![1.0]));
    }
    let scale = (0..n).map(|i| cov[(i, i)]).sum::<f64>() / n as f64;
    let s = cov / scale;
    let budget = 1.0 / n as f64;
    let mut y: Vec<f64> = (0..n).map(|i| 1.0 / s[(i, i)].sqrt() / n as f64).collect();
    for _ in 0..100_000 {
        for i in 0..n {
            let b: f64 = (0..n).filter(|&j| j != i).map(|j| s[(i, j)] * y[j]).sum();
            let a = s[(i, i)];
            y[i] = (-b + (b * b + 4.0 * a * budget).sqrt()) / (2.0 * a);
        }
        let rc = risk_contributions(&y, &s);
        let mean = rc.iter().sum::<f64>() / n as f64;
        let spread = rc.iter().fold(0.0f64, |acc, c| acc.max((c - mean).abs())) / mean;
        if spread < 1e-12 {
            return Ok(Allocation::plain(finalize(&y)?));
        }
    }
    Err(Error::NonConvergence("risk parity".into()))
}

/// Maximize the diversification ratio: minimum-variance weights on the
/// correlation matrix, rescaled by inverse volatility.
pub fn max_diversification(cov: &DMatrix<f64>) -> Result<Allocation> {
    let n = require_pd(cov)?;
    if n == 1 {
        return Ok(Allocation::plain(vec![1.0]));
    }
    let sd: Vec<f64> = (0..n).map(|i| cov[(i, i)].sqrt()).collect();
    let corr = DMatrix::from_fn(n, n, |i, j| cov[(i, j)] / (sd[i] * sd[j]));
    let v = simplex_qp(&linalg::symmetrize(&corr))?;
    let w: Vec<f64> = v.iter().zip(&sd).map(|(a, s)| a / s).collect();
    Ok(Allocation::plain(finalize(&w)?))
}

/// Maximum Sharpe ratio (zero risk-free rate). Solved as
/// `min y'Cov y  s.t.  r'y = 1, y >= 0` and rescaled; falls back to minimum
/// variance when no expected return is positive.
pub fn max_sharpe(expected: &[f64], cov: &DMatrix<f64>) -> Result<Allocation> {
    let n = require_pd(cov)?;
    if expected.len() != n {
        return Err(Error::LengthMismatch("expected returns vs covariance".into()));
    }
    let rmax = expected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(rmax > 0.0) {
        return Ok(quadratic_min(cov)?.with_flag(AllocFlag::MinVarianceFallback));
    }
    if n == 1 {
        return Ok(Allocation::plain(vec![1.0]));
    }
    let r: Vec<f64> = expected.iter().map(|v| v / rmax).collect();
    let k = (0..n)
        .filter(|&i| r[i] > 0.0)
        .max_by(|&a, &b| (r[a] / cov[(a, a)].sqrt()).partial_cmp(&(r[b] / cov[(b, b)].sqrt())).unwrap())
        .unwrap();
    let mut y0 = vec![0.0; n];
    y0[k] = 1.0 / r[k];
    let a = DMatrix::from_row_slice(1, n, &r);
    let y = qp::active_set(cov, &a, &[1.0], &y0)?.x;
    Ok(Allocation::plain(finalize(&y)?))
}

/// Minimum variance subject to `sum w = 1` and `r'w = target`, for a target
/// between the minimum-variance return and the best single-asset return.
pub fn min_variance_for_return(expected: &[f64], cov: &DMatrix<f64>, target: f64) -> Result<Allocation> {
    let n = require_pd(cov)?;
    if expected.len() != n {
        return Err(Error::LengthMismatch("expected returns vs covariance".into()));
    }
    let mv = quadratic_min(cov)?.weights;
    let lo: f64 = mv.iter().zip(expected).map(|(a, b)| a * b).sum();
    let best = (0..n).max_by(|&a, &b| expected[a].partial_cmp(&expected[b]).unwrap()).unwrap();
    let hi = expected[best];
    if target <= lo + 1e-14 * hi.abs().max(1.0) {
        return Ok(Allocation::plain(mv));
    }
    if target > hi + 1e-12 {
        return Err(Error::OutOfRangeInput(format!("target return {target} exceeds best asset {hi}")));
    }
    let target = target.min(hi);
    let theta = (hi - target) / (hi - lo);
    let mut x0: Vec<f64> = mv.iter().map(|v| theta * v).collect();
    x0[best] += 1.0 - theta;
    let rs = expected.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let a = DMatrix::from_fn(2, n, |r, c| if r == 0 { 1.0 } else { expected[c] / rs });
    let x = qp::active_set(cov, &a, &[1.0, target / rs], &x0)?.x;
    Ok(Allocation::plain(finalize(&x)?))
}

#[derive(Debug, Clone, Copy)]
pub enum FrontierRisk<'a> {
    /// Risk is portfolio volatility.
    MeanVariance(&'a DMatrix<f64>),
    /// Risk is scenario CVaR.
    MeanCvar(&'a DMatrix<f64>, CvarOptions),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub risk: f64,
    pub ret: f64,
    pub weights: Vec<f64>,
}

/// Trace the efficient frontier from the minimum-risk portfolio to the best
/// single-asset return with `n_points` evenly spaced return targets.
pub fn efficient_frontier(expected: &[f64], risk: FrontierRisk<'_>, n_points: usize) -> Result<Vec<FrontierPoint>> {
    if n_points < 2 {
        return Err(Error::InvalidParams("frontier needs at least two points".into()));
    }
    let ret = |w: &[f64]| w.iter().zip(expected).map(|(a, b)| a * b).sum::<f64>();
    let start = match risk {
        FrontierRisk::MeanVariance(cov) => quadratic_min(cov)?.weights,
        FrontierRisk::MeanCvar(s, o) => min_cvar(s, &o)?.weights,
    };
    let lo = ret(&start);
    let hi = expected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::with_capacity(n_points);
    let mut prev_ret = f64::NEG_INFINITY;
    let mut prev_risk = f64::NEG_INFINITY;
    for k in 0..n_points {
        let target = if hi > lo { lo + (hi - lo) * k as f64 / (n_points - 1) as f64 } else { lo };
        let (w, r) = match risk {
            FrontierRisk::MeanVariance(cov) => {
                let w = if k == 0 { start.clone() } else { min_variance_for_return(expected, cov, target)?.weights };
                let r = portfolio_variance(&w, cov).max(0.0).sqrt();
                (w, r)
            }
            FrontierRisk::MeanCvar(s, o) => {
                let w = if k == 0 { start.clone() } else { min_cvar_with_floor(s, &o, expected, target)?.weights };
                let r = portfolio_cvar(s, &w, o.alpha);
                (w, r)
            }
        };
        // guard against round-off wiggles at flat stretches
        let pr = ret(&w).max(prev_ret);
        let rk = r.max(prev_risk);
        prev_ret = pr;
        prev_risk = rk;
        out.push(FrontierPoint {
            risk: rk,
            ret: pr,
            weights: w,
        });
    }
    Ok(out)
}

/// Average of `k` allocations, each computed on an independently simulated
/// scenario set. Replica `j` uses a seed derived from `(master_seed, j)`.
pub fn resampled_weights<F>(
    model: &JointModelFit,
    k: usize,
    master_seed: u64,
    horizon: usize,
    n_paths: usize,
    optimizer: F,
) -> Result<Allocation>
where
    F: Fn(&ScenarioSet) -> Result<Allocation> + Sync,
{
    if k == 0 {
        return Err(Error::InvalidParams("resample count must be positive".into()));
    }
    let allocs: Vec<Allocation> = (0..k)
        .into_par_iter()
        .map(|j| {
            let seed = rng::derive_seed(master_seed, 2, j as u64);
            optimizer(&simulate_scenarios(model, horizon, n_paths, seed)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = model.n_assets();
    let mut avg = vec![0.0; n];
    let mut flags = Vec::new();
    for a in &allocs {
        for i in 0..n {
            avg[i] += a.weights[i] / k as f64;
        }
        for f in &a.flags {
            if !flags.contains(f) {
                flags.push(*f);
            }
        }
    }
    flags.sort();
    Ok(Allocation {
        weights: finalize(&avg)?,
        flags,
    })
}
