//! Scenario CVaR allocators. The Rockafellar-Uryasev program is solved in
//! dual form, which has one row per asset plus one, so the simplex basis
//! stays small regardless of the scenario count. Portfolio weights are
//! recovered from the simplex multipliers of the asset rows.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::lp::{self, Lp};
use super::{finalize, AllocFlag, Allocation};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats;

pub const LP_MAX_SCENARIOS: usize = 2000;
const MIN_SCENARIOS: usize = 100;
const DINKELBACH_TOL: f64 = 1e-8;
const DINKELBACH_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvarOptions {
    pub alpha: f64,
    /// Larger scenario sets are subsampled to this many rows.
    pub max_scenarios: usize,
    /// Seed of the subsampling shuffle.
    pub seed: u64,
}

impl Default for CvarOptions {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            max_scenarios: LP_MAX_SCENARIOS,
            seed: 0,
        }
    }
}

/// CVaR of the portfolio `w` over scenario rows.
pub fn portfolio_cvar(scenarios: &DMatrix<f64>, w: &[f64], alpha: f64) -> f64 {
    let port: Vec<f64> = (0..scenarios.nrows())
        .map(|s| (0..w.len()).map(|i| w[i] * scenarios[(s, i)]).sum())
        .collect();
    stats::tail_risk(&port, alpha).1
}

fn prepare(scenarios: &DMatrix<f64>, opts: &CvarOptions) -> Result<(DMatrix<f64>, bool)> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::BadAlpha(opts.alpha));
    }
    let s = scenarios.nrows();
    if s < MIN_SCENARIOS {
        return Err(Error::SampleTooSmall {
            needed: MIN_SCENARIOS,
            got: s,
        });
    }
    if scenarios.ncols() == 0 {
        return Err(Error::EmptyPanel);
    }
    if scenarios.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutOfRangeInput("non-finite scenario return".into()));
    }
    let keep = opts.max_scenarios.max(MIN_SCENARIOS);
    if s <= keep {
        return Ok((scenarios.clone(), false));
    }
    let mut idx: Vec<usize> = (0..s).collect();
    idx.shuffle(&mut rng::stream(opts.seed, 0));
    let mut chosen = idx[..keep].to_vec();
    chosen.sort_unstable();
    Ok((scenarios.select_rows(chosen.iter()), true))
}

/// Solve `min kappa * CVaR(w) - rho' w` over the simplex, optionally with a
/// return floor `mu' w >= tau`.
fn solve_dual(
    scen: &DMatrix<f64>,
    alpha: f64,
    kappa: f64,
    rho: Option<&[f64]>,
    floor: Option<(&[f64], f64)>,
) -> Result<(Vec<f64>, f64)> {
    let (s, n) = scen.shape();
    let cap = kappa / ((1.0 - alpha) * s as f64);
    let mut rhs = vec![0.0; n + 1];
    rhs[0] = kappa;
    if let Some(r) = rho {
        for i in 0..n {
            rhs[i + 1] = -r[i];
        }
    }
    let mut prob = Lp::new(n + 1, rhs);
    let mut col = vec![0.0; n + 1];
    for k in 0..s {
        col[0] = 1.0;
        for i in 0..n {
            col[i + 1] = scen[(k, i)];
        }
        prob.add_column(&col, 0.0, 0.0, cap);
    }
    col[0] = 0.0;
    col[1..].iter_mut().for_each(|v| *v = 1.0);
    prob.add_column(&col, -1.0, f64::NEG_INFINITY, f64::INFINITY);
    if let Some((mu, tau)) = floor {
        col[1..].copy_from_slice(mu);
        prob.add_column(&col, -tau, 0.0, f64::INFINITY);
    }
    for i in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[i + 1] = 1.0;
        prob.add_column(&col, 0.0, 0.0, f64::INFINITY);
    }
    let sol = lp::solve(&prob).map_err(|e| match e {
        Error::InfeasibleLp(m) => Error::InfeasibleLp(format!("CVaR program: {m}")),
        other => other,
    })?;
    let w: Vec<f64> = sol.duals[1..].iter().map(|y| -y).collect();
    Ok((finalize(&w)?, -sol.objective))
}

/// Optimal value of the minimum-CVaR program together with its weights.
#[cfg(test)]
pub(crate) fn min_cvar_program(scenarios: &DMatrix<f64>, alpha: f64) -> Result<(Vec<f64>, f64)> {
    solve_dual(scenarios, alpha, 1.0, None, None)
}

fn tag(alloc: Allocation, subsampled: bool) -> Allocation {
    if subsampled {
        alloc.with_flag(AllocFlag::Subsampled)
    } else {
        alloc
    }
}

/// Minimum scenario CVaR over the simplex.
pub fn min_cvar(scenarios: &DMatrix<f64>, opts: &CvarOptions) -> Result<Allocation> {
    let (scen, sub) = prepare(scenarios, opts)?;
    if scen.ncols() == 1 {
        return Ok(tag(Allocation::plain(vec![1.0]), sub));
    }
    Ok(tag(Allocation::plain(solve_dual(&scen, opts.alpha, 1.0, None, None)?.0), sub))
}

/// Minimum CVaR subject to `expected' w >= target`.
pub fn min_cvar_with_floor(scenarios: &DMatrix<f64>, opts: &CvarOptions, expected: &[f64], target: f64) -> Result<Allocation> {
    let (scen, sub) = prepare(scenarios, opts)?;
    if expected.len() != scen.ncols() {
        return Err(Error::LengthMismatch("expected returns vs scenarios".into()));
    }
    let hi = expected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if target > hi + 1e-12 {
        return Err(Error::OutOfRangeInput(format!("target return {target} exceeds best asset {hi}")));
    }
    // scale the floor row to unit size
    let rs = expected.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let mu: Vec<f64> = expected.iter().map(|v| v / rs).collect();
    let (w, _) = solve_dual(&scen, opts.alpha, 1.0, None, Some((&mu, target.min(hi) / rs)))?;
    Ok(tag(Allocation::plain(w), sub))
}

/// Maximize `expected' w / CVaR(w)` by Dinkelbach iteration. Falls back to
/// minimum CVaR when no expected return is positive or when the minimum
/// CVaR is not positive (the ratio is then unbounded or undefined).
pub fn max_return_cvar(expected: &[f64], scenarios: &DMatrix<f64>, opts: &CvarOptions) -> Result<Allocation> {
    let (scen, sub) = prepare(scenarios, opts)?;
    let n = scen.ncols();
    if expected.len() != n {
        return Err(Error::LengthMismatch("expected returns vs scenarios".into()));
    }
    let rmax = expected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let base = if n == 1 { vec![1.0] } else { solve_dual(&scen, opts.alpha, 1.0, None, None)?.0 };
    let base_cvar = portfolio_cvar(&scen, &base, opts.alpha);
    if !(rmax > 0.0) || !(base_cvar > 0.0) {
        return Ok(tag(Allocation::plain(base).with_flag(AllocFlag::MinCvarFallback), sub));
    }
    if n == 1 {
        return Ok(tag(Allocation::plain(base), sub));
    }
    let ratio = |w: &[f64]| w.iter().zip(expected).map(|(a, b)| a * b).sum::<f64>() / portfolio_cvar(&scen, w, opts.alpha);
    let mut best = base.clone();
    let mut q = ratio(&base);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let qi = ratio(&e);
        if qi > q {
            q = qi;
            best = e;
        }
    }
    for _ in 0..DINKELBACH_MAX_ITER {
        let (w, _) = solve_dual(&scen, opts.alpha, q, Some(expected), None)?;
        let qn = ratio(&w);
        if qn > q {
            best = w;
        }
        if (qn - q).abs() < DINKELBACH_TOL {
            return Ok(tag(Allocation::plain(best), sub));
        }
        q = q.max(qn);
    }
    Err(Error::NonConvergence("Dinkelbach iteration".into()))
}
