//! Walk-forward monthly rebalancing, performance metrics, regime
//! breakdowns and strategy clustering.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::{self, AllocFlag, Allocation, CvarOptions, NaiveWeighting};
use crate::alpha::ForecastSet;
use crate::data::{Calendar, ReturnPanel};
use crate::dependence::{self, fit_t_copula, pseudo_observations, t_tail_dependence};
use crate::error::{Error, Result};
use crate::linalg;
use crate::regime::regime_conditional_stats;
use crate::rng;
use crate::scenario::{fit_joint, simulate_scenarios, FitWindow, DEFAULT_HORIZON, DEFAULT_MIN_DAYS, DEFAULT_PATHS};
use crate::stats::{self, TRADING_DAYS};

/// Weights of the four-asset 60/40 benchmark: US equities, international
/// equities, US bonds, international bonds.
pub const BENCHMARK_60_40: [f64; 4] = [0.30, 0.30, 0.20, 0.20];
pub const ROLLING_DAYS: usize = 252;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Benchmark(Vec<f64>),
    EqualWeight,
    InverseVol,
    RiskParity,
    MaxDiversification,
    MinTailDependence,
    MinVariance,
    MinVarianceTail,
    MinCvar,
    MaxSharpe,
    MaxReturnCvar,
}

impl Strategy {
    pub fn benchmark_60_40() -> Self {
        Strategy::Benchmark(BENCHMARK_60_40.to_vec())
    }

    /// The eleven strategies, with the 60/40 benchmark first.
    pub fn all() -> Vec<Strategy> {
        vec![
            Strategy::benchmark_60_40(),
            Strategy::EqualWeight,
            Strategy::InverseVol,
            Strategy::RiskParity,
            Strategy::MaxDiversification,
            Strategy::MinTailDependence,
            Strategy::MinVariance,
            Strategy::MinVarianceTail,
            Strategy::MinCvar,
            Strategy::MaxSharpe,
            Strategy::MaxReturnCvar,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Benchmark(_) => "benchmark",
            Strategy::EqualWeight => "equal_weight",
            Strategy::InverseVol => "inverse_vol",
            Strategy::RiskParity => "risk_parity",
            Strategy::MaxDiversification => "max_diversification",
            Strategy::MinTailDependence => "min_tail_dependence",
            Strategy::MinVariance => "min_variance",
            Strategy::MinVarianceTail => "min_variance_tail",
            Strategy::MinCvar => "min_cvar",
            Strategy::MaxSharpe => "max_sharpe",
            Strategy::MaxReturnCvar => "max_return_cvar",
        }
    }

    fn needs_tail(&self) -> bool {
        matches!(self, Strategy::MinTailDependence | Strategy::MinVarianceTail)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::all()
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskModel {
    Rolling1y,
    Expanding5y,
    GarchDccCopula,
}

impl RiskModel {
    pub fn all() -> [RiskModel; 3] {
        [RiskModel::Rolling1y, RiskModel::Expanding5y, RiskModel::GarchDccCopula]
    }

    pub fn name(&self) -> &'static str {
        match self {
            RiskModel::Rolling1y => "rolling_1y",
            RiskModel::Expanding5y => "expanding_5y",
            RiskModel::GarchDccCopula => "garch_dcc_copula",
        }
    }

    pub fn min_days(&self) -> usize {
        match self {
            RiskModel::Rolling1y => ROLLING_DAYS,
            RiskModel::Expanding5y | RiskModel::GarchDccCopula => DEFAULT_MIN_DAYS,
        }
    }
}

impl fmt::Display for RiskModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RiskModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RiskModel::all()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown risk model {s:?}")))
    }
}

/// Source of expected returns for the return-seeking strategies.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ExpectedReturns {
    /// Mean of the risk model's scenarios.
    #[default]
    Historical,
    /// Latest forecast row dated on or before each rebalance date; falls
    /// back to `Historical` before the first row.
    Forecasts(ForecastSet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub risk_model: RiskModel,
    pub alpha: f64,
    pub seed: u64,
    pub horizon: usize,
    pub n_paths: usize,
    pub cost_bps: f64,
    /// Overrides the risk model's minimum history.
    pub min_days: Option<usize>,
    pub expected: ExpectedReturns,
    /// Average this many independently simulated allocations for the
    /// scenario-based strategies under the GARCH-DCC-copula model.
    pub resample: Option<usize>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            risk_model: RiskModel::Rolling1y,
            alpha: 0.95,
            seed: 0,
            horizon: DEFAULT_HORIZON,
            n_paths: DEFAULT_PATHS,
            cost_bps: 0.0,
            min_days: None,
            expected: ExpectedReturns::Historical,
            resample: None,
        }
    }
}

impl BacktestConfig {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::BadAlpha(self.alpha));
        }
        if self.horizon == 0 || self.n_paths == 0 || self.min_days == Some(0) || self.resample == Some(0) {
            return Err(Error::Config("horizon, paths, windows and resample counts must be positive".into()));
        }
        if !(self.cost_bps >= 0.0) {
            return Err(Error::Config("transaction cost must be non-negative".into()));
        }
        Ok(())
    }

    fn min_days(&self) -> usize {
        self.min_days.unwrap_or_else(|| self.risk_model.min_days())
    }
}

/// Estimated inputs at one rebalance date.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskInputs {
    pub cov: DMatrix<f64>,
    pub lambda: Option<DMatrix<f64>>,
    pub scenarios: DMatrix<f64>,
    pub expected: Vec<f64>,
}

impl RiskInputs {
    pub fn vols(&self) -> Vec<f64> {
        (0..self.cov.nrows()).map(|i| self.cov[(i, i)].max(0.0).sqrt()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rebalance {
    pub date: NaiveDate,
    pub weights: Vec<f64>,
    pub flags: Vec<AllocFlag>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub strategy: String,
    pub risk_model: RiskModel,
    pub assets: Vec<String>,
    /// Wealth dates; the first entry is the first rebalance date at 1.0.
    pub dates: Vec<NaiveDate>,
    pub wealth: Vec<f64>,
    pub rebalances: Vec<Rebalance>,
    pub final_inputs: Option<RiskInputs>,
    pub alpha: f64,
}

impl BacktestResult {
    pub fn daily_returns(&self) -> Vec<f64> {
        self.wealth.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
    }

    /// Compounded calendar-month returns dated at each month's last day.
    pub fn monthly_returns(&self) -> Vec<(NaiveDate, f64)> {
        let mut out = Vec::new();
        if self.dates.len() < 2 {
            return out;
        }
        let mut start_wealth = self.wealth[0];
        for i in 1..self.dates.len() {
            let last = i + 1 == self.dates.len()
                || (self.dates[i + 1].year(), self.dates[i + 1].month()) != (self.dates[i].year(), self.dates[i].month());
            if last {
                out.push((self.dates[i], self.wealth[i] / start_wealth - 1.0));
                start_wealth = self.wealth[i];
            }
        }
        out
    }
}

fn sample_inputs(window: &ReturnPanel, need_tail: bool, alpha_days: usize) -> Result<RiskInputs> {
    let v = window.values();
    let cov = stats::covariance_matrix(v);
    let lambda = if need_tail && window.n_assets() >= 2 {
        let cop = fit_t_copula(&pseudo_observations(v)?)?;
        Some(t_tail_dependence(&cop)?.lambda)
    } else {
        None
    };
    let expected = (0..window.n_assets())
        .map(|j| stats::mean(&window.column(j)) * alpha_days as f64)
        .collect();
    Ok(RiskInputs {
        cov,
        lambda,
        scenarios: v.clone(),
        expected,
    })
}

fn garch_inputs(history: &ReturnPanel, cfg: &BacktestConfig, month: usize) -> Result<(RiskInputs, crate::scenario::JointModelFit)> {
    let model = fit_joint(history, FitWindow::Expanding(cfg.min_days()))?;
    let seed = rng::derive_seed(cfg.seed, 3, month as u64);
    let sims = simulate_scenarios(&model, cfg.horizon, cfg.n_paths, seed)?;
    let h = &sims.horizon_returns;
    let lambda = if model.n_assets() >= 2 {
        Some(t_tail_dependence(&model.copula)?.lambda)
    } else {
        None
    };
    let expected = (0..h.ncols()).map(|j| h.column(j).mean()).collect();
    Ok((
        RiskInputs {
            cov: stats::covariance_matrix(h),
            lambda,
            scenarios: h.clone(),
            expected,
        },
        model,
    ))
}

fn expected_for(cfg: &BacktestConfig, date: NaiveDate, assets: &[String], inputs: &RiskInputs) -> Result<Vec<f64>> {
    match &cfg.expected {
        ExpectedReturns::Historical => Ok(inputs.expected.clone()),
        ExpectedReturns::Forecasts(f) => {
            let k = f.dates.partition_point(|d| *d <= date);
            if k == 0 {
                return Ok(inputs.expected.clone());
            }
            assets
                .iter()
                .map(|a| {
                    let j = f
                        .assets
                        .iter()
                        .position(|x| x == a)
                        .ok_or_else(|| Error::UnknownAsset(a.clone()))?;
                    Ok(f.values[k - 1][j])
                })
                .collect()
        }
    }
}

fn psd_tail_matrix(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = linalg::symmetrize(m);
    if linalg::min_eigenvalue(&sym) < 0.0 {
        (linalg::clip_eigenvalues(&sym, 0.0), true)
    } else {
        (sym, false)
    }
}

/// Weights for one strategy given estimated inputs.
pub fn allocate(strategy: &Strategy, inputs: &RiskInputs, expected: &[f64], cvar: &CvarOptions) -> Result<Allocation> {
    let n = inputs.cov.nrows();
    let plain = |w: Vec<f64>| Allocation { weights: w, flags: Vec::new() };
    match strategy {
        Strategy::Benchmark(w) => {
            if w.len() != n {
                return Err(Error::Config(format!("benchmark has {} weights for {n} assets", w.len())));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-8 || w.iter().any(|v| *v < 0.0) {
                return Err(Error::WeightSumError(s));
            }
            Ok(plain(w.clone()))
        }
        Strategy::EqualWeight => Ok(plain(alloc::naive_weights(&inputs.vols(), NaiveWeighting::Equal)?)),
        Strategy::InverseVol => Ok(plain(alloc::naive_weights(&inputs.vols(), NaiveWeighting::InverseVol)?)),
        Strategy::RiskParity => alloc::risk_parity(&inputs.cov),
        Strategy::MaxDiversification => alloc::max_diversification(&inputs.cov),
        Strategy::MinVariance => alloc::quadratic_min(&inputs.cov),
        Strategy::MinTailDependence | Strategy::MinVarianceTail => {
            let lambda = match &inputs.lambda {
                Some(l) => l.clone(),
                None => DMatrix::identity(n, n),
            };
            let m = if *strategy == Strategy::MinVarianceTail {
                let s = inputs.vols();
                DMatrix::from_fn(n, n, |i, j| s[i] * s[j] * lambda[(i, j)])
            } else {
                lambda
            };
            let (m, repaired) = psd_tail_matrix(&m);
            let a = alloc::quadratic_min(&m)?;
            Ok(if repaired && !a.flags.contains(&AllocFlag::PsdRepaired) {
                let mut a = a;
                a.flags.push(AllocFlag::PsdRepaired);
                a.flags.sort();
                a
            } else {
                a
            })
        }
        Strategy::MinCvar => alloc::min_cvar(&inputs.scenarios, cvar),
        Strategy::MaxSharpe => alloc::max_sharpe(expected, &inputs.cov),
        Strategy::MaxReturnCvar => alloc::max_return_cvar(expected, &inputs.scenarios, cvar),
    }
}

struct Holding {
    weights: Vec<f64>,
    flags: Vec<AllocFlag>,
}

fn rebalance_at(
    panel: &ReturnPanel,
    strategies: &[Strategy],
    cfg: &BacktestConfig,
    idx: usize,
    k: usize,
    need_tail: bool,
    cvar: &CvarOptions,
) -> Result<(RiskInputs, Vec<Holding>)> {
    let history = panel.slice(0, idx + 1);
    let (inputs, model) = match cfg.risk_model {
        RiskModel::Rolling1y => {
            let start = (idx + 1).saturating_sub(ROLLING_DAYS);
            (sample_inputs(&history.slice(start, idx + 1), need_tail, cfg.horizon)?, None)
        }
        RiskModel::Expanding5y => (sample_inputs(&history, need_tail, cfg.horizon)?, None),
        RiskModel::GarchDccCopula => {
            let (i, m) = garch_inputs(&history, cfg, k)?;
            (i, Some(m))
        }
    };
    let date = panel.dates()[idx];
    let expected = expected_for(cfg, date, panel.assets(), &inputs)?;
    let holdings = strategies
        .par_iter()
        .map(|s| {
            let scenario_based = matches!(s, Strategy::MinCvar | Strategy::MaxReturnCvar);
            let a = match (&model, cfg.resample, scenario_based) {
                (Some(m), Some(reps), true) => {
                    let seed = rng::derive_seed(cfg.seed, 5, k as u64);
                    alloc::resampled_weights(m, reps, seed, cfg.horizon, cfg.n_paths, |set| {
                        let sim = RiskInputs {
                            scenarios: set.horizon_returns.clone(),
                            ..inputs.clone()
                        };
                        allocate(s, &sim, &expected, cvar)
                    })?
                }
                _ => allocate(s, &inputs, &expected, cvar)?,
            };
            Ok(Holding {
                weights: a.weights,
                flags: a.flags,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((inputs, holdings))
}

fn cvar_options(cfg: &BacktestConfig) -> CvarOptions {
    CvarOptions {
        alpha: cfg.alpha,
        seed: rng::derive_seed(cfg.seed, 4, 0),
        ..CvarOptions::default()
    }
}

/// Weights from data through the final panel date, identical to the last
/// rebalance of a walk-forward run on the same panel.
pub fn allocate_latest(panel: &ReturnPanel, strategies: &[Strategy], cfg: &BacktestConfig) -> Result<(RiskInputs, Vec<Rebalance>)> {
    cfg.validate()?;
    let min_days = cfg.min_days();
    if panel.len() < min_days {
        return Err(Error::InsufficientHistory {
            needed: min_days,
            got: panel.len(),
        });
    }
    let cal = Calendar::new(panel.dates());
    let k = cal.month_end_idx.len() - 1;
    let idx = panel.len() - 1;
    let need_tail = strategies.iter().any(|s| s.needs_tail());
    let (inputs, holdings) = rebalance_at(panel, strategies, cfg, idx, k, need_tail, &cvar_options(cfg))?;
    let date = panel.dates()[idx];
    let rebalances = holdings
        .into_iter()
        .map(|h| Rebalance {
            date,
            weights: h.weights,
            flags: h.flags,
        })
        .collect();
    Ok((inputs, rebalances))
}

/// Run several strategies over the same estimated inputs. Rebalances at
/// every month-end with enough history (including the last date, whose
/// weights apply to the period after the panel); holdings drift with
/// prices within each month.
pub fn walk_forward_many(panel: &ReturnPanel, strategies: &[Strategy], cfg: &BacktestConfig) -> Result<Vec<BacktestResult>> {
    cfg.validate()?;
    let min_days = cfg.min_days();
    if panel.len() < min_days {
        return Err(Error::InsufficientHistory {
            needed: min_days,
            got: panel.len(),
        });
    }
    let cal = Calendar::new(panel.dates());
    let need_tail = strategies.iter().any(|s| s.needs_tail());
    let cvar = cvar_options(cfg);
    let mut schedule: Vec<(usize, Vec<Holding>)> = Vec::new();
    let mut last_inputs = None;
    for (k, &idx) in cal.month_end_idx.iter().enumerate() {
        if idx + 1 < min_days {
            continue;
        }
        let (inputs, holdings) = rebalance_at(panel, strategies, cfg, idx, k, need_tail, &cvar)?;
        schedule.push((idx, holdings));
        last_inputs = Some(inputs);
    }
    if schedule.is_empty() {
        return Err(Error::InsufficientHistory {
            needed: min_days,
            got: panel.len(),
        });
    }
    let mut results = Vec::with_capacity(strategies.len());
    for (si, s) in strategies.iter().enumerate() {
        let first = schedule[0].0;
        let mut dates = vec![panel.dates()[first]];
        let mut wealth = vec![1.0];
        let mut rebalances = Vec::with_capacity(schedule.len());
        let mut drifted: Option<Vec<f64>> = None;
        for (p, (idx, holdings)) in schedule.iter().enumerate() {
            let h = &holdings[si];
            rebalances.push(Rebalance {
                date: panel.dates()[*idx],
                weights: h.weights.clone(),
                flags: h.flags.clone(),
            });
            let end = schedule.get(p + 1).map_or(panel.len() - 1, |(e, _)| *e);
            if end <= *idx {
                continue;
            }
            let mut v = *wealth.last().unwrap();
            if cfg.cost_bps > 0.0 {
                let turnover: f64 = match &drifted {
                    Some(d) => d.iter().zip(&h.weights).map(|(a, b)| (a - b).abs()).sum(),
                    None => 1.0,
                };
                v *= 1.0 - cfg.cost_bps / 1e4 * turnover;
            }
            let mut pos: Vec<f64> = h.weights.iter().map(|w| w * v).collect();
            for t in idx + 1..=end {
                for (j, x) in pos.iter_mut().enumerate() {
                    *x *= 1.0 + panel.values()[(t, j)];
                }
                dates.push(panel.dates()[t]);
                wealth.push(pos.iter().sum());
            }
            let total: f64 = pos.iter().sum();
            drifted = Some(pos.iter().map(|x| x / total).collect());
        }
        results.push(BacktestResult {
            strategy: s.name().to_string(),
            risk_model: cfg.risk_model,
            assets: panel.assets().to_vec(),
            dates,
            wealth,
            rebalances,
            final_inputs: last_inputs.clone(),
            alpha: cfg.alpha,
        });
    }
    Ok(results)
}

pub fn walk_forward(panel: &ReturnPanel, strategy: &Strategy, cfg: &BacktestConfig) -> Result<BacktestResult> {
    Ok(walk_forward_many(panel, std::slice::from_ref(strategy), cfg)?.remove(0))
}

/// Every strategy under every risk model, cells run in parallel.
pub fn comparison_grid(
    panel: &ReturnPanel,
    strategies: &[Strategy],
    models: &[RiskModel],
    base: &BacktestConfig,
) -> Result<Vec<BacktestResult>> {
    let cells: Vec<Vec<BacktestResult>> = models
        .par_iter()
        .map(|m| {
            let cfg = BacktestConfig {
                risk_model: *m,
                ..base.clone()
            };
            walk_forward_many(panel, strategies, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(cells.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyMetrics {
    pub ann_return: f64,
    pub ann_vol: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
    pub cvar: f64,
    pub diversification_ratio: f64,
    pub wptd: f64,
}

pub fn max_drawdown(wealth: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut mdd: f64 = 0.0;
    for &w in wealth {
        peak = peak.max(w);
        mdd = mdd.max(1.0 - w / peak);
    }
    mdd
}

/// Annualized performance and end-of-sample diversification measures.
/// `risk_free` is an annual rate subtracted from the annualized return.
pub fn performance_metrics(result: &BacktestResult, risk_free: f64) -> Result<StrategyMetrics> {
    let r = result.daily_returns();
    let year = TRADING_DAYS as usize;
    if r.len() < year {
        return Err(Error::ResultTooShort {
            needed: year,
            got: r.len(),
        });
    }
    let growth = result.wealth.last().unwrap() / result.wealth[0];
    let ann_return = growth.powf(TRADING_DAYS / r.len() as f64) - 1.0;
    let sd = stats::std_dev(&r);
    if !(sd > 1e-15) {
        return Err(Error::ZeroVol);
    }
    let ann_vol = sd * TRADING_DAYS.sqrt();
    let monthly: Vec<f64> = result.monthly_returns().iter().map(|(_, v)| *v).collect();
    let cvar = if monthly.is_empty() { f64::NAN } else { stats::tail_risk(&monthly, result.alpha).1 };
    let (dr, wptd) = match (&result.final_inputs, result.rebalances.last()) {
        (Some(inp), Some(last)) => {
            let dr = alloc::diversification_ratio(&last.weights, &inp.cov);
            let wptd = inp
                .lambda
                .as_ref()
                .and_then(|l| dependence::weighted_pairwise(&last.weights, &inp.vols(), l).ok())
                .unwrap_or(f64::NAN);
            (dr, wptd)
        }
        _ => (f64::NAN, f64::NAN),
    };
    Ok(StrategyMetrics {
        ann_return,
        ann_vol,
        sharpe: (ann_return - risk_free) / ann_vol,
        max_drawdown: max_drawdown(&result.wealth).clamp(0.0, 1.0),
        cvar,
        diversification_ratio: dr,
        wptd,
    })
}

/// Mean monthly return times 12 for each label.
pub fn regime_breakdown<L: Ord + Copy>(result: &BacktestResult, labels: &[(NaiveDate, L)]) -> Result<BTreeMap<L, f64>> {
    let stats = regime_conditional_stats(&result.monthly_returns(), labels)?;
    Ok(stats.into_iter().map(|(l, s)| (l, s.ann_mean)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// Cluster ids: `0..K` are strategies, `K + m` is the cluster formed by
    /// merge `m`.
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub merges: Vec<Merge>,
    /// Eigenvalues of the correlation matrix divided by K, descending.
    pub eigen_ratios: Vec<f64>,
    #[serde(with = "dependence::matrix_serde")]
    pub distances: DMatrix<f64>,
}

/// Average-linkage agglomerative clustering of strategy return columns
/// with distance `sqrt(2 (1 - rho))`.
pub fn cluster_strategies(returns: &DMatrix<f64>) -> Result<ClusterResult> {
    let (t, k) = returns.shape();
    if k < 2 {
        return Err(Error::TooFewStrategies(k));
    }
    if t < 12 {
        return Err(Error::too_short(12, t));
    }
    let corr = stats::correlation_matrix(returns);
    if corr.iter().any(|v| !v.is_finite()) {
        return Err(Error::ZeroVariance);
    }
    let dist = corr.map(|r| (2.0 * (1.0 - r)).max(0.0).sqrt());
    let mut active: Vec<(usize, Vec<usize>)> = (0..k).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::with_capacity(k - 1);
    while active.len() > 1 {
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let (ma, mb) = (&active[a].1, &active[b].1);
                let d = ma.iter().flat_map(|i| mb.iter().map(move |j| (*i, *j))).map(|(i, j)| dist[(i, j)]).sum::<f64>()
                    / (ma.len() * mb.len()) as f64;
                if d < best.2 {
                    best = (a, b, d);
                }
            }
        }
        let (a, b, d) = best;
        let (idb, mb) = active.remove(b);
        let (ida, ma) = active.remove(a);
        let members: Vec<usize> = ma.into_iter().chain(mb).collect();
        merges.push(Merge {
            left: ida,
            right: idb,
            distance: d,
            size: members.len(),
        });
        active.insert(a, (k + merges.len() - 1, members));
    }
    let mut eig: Vec<f64> = linalg::symmetrize(&corr)
        .symmetric_eigenvalues()
        .iter()
        .map(|v| v / k as f64)
        .collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(ClusterResult {
        merges,
        eigen_ratios: eig,
        distances: dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regime::RegimeLabel;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
        let mut out = Vec::with_capacity(n);
        let mut d = start;
        while out.len() < n {
            if d.weekday().number_from_monday() <= 5 {
                out.push(d);
            }
            d = d.succ_opt().unwrap();
        }
        out
    }

    fn random_panel(seed: u64, n: usize, assets: usize) -> ReturnPanel {
        let mut r = rng::stream(seed, 0);
        let dates = business_days(NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(), n);
        let vols = [0.01, 0.006, 0.004, 0.012, 0.008];
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let c: f64 = StandardNormal.sample(&mut r);
                (0..assets)
                    .map(|j| {
                        let e: f64 = StandardNormal.sample(&mut r);
                        0.0002 + vols[j % 5] * (0.5 * c + 0.8 * e)
                    })
                    .collect()
            })
            .collect();
        ReturnPanel::from_rows(dates, (0..assets).map(|j| format!("a{j}")).collect(), &rows).unwrap()
    }

    #[test]
    fn zero_returns_give_flat_wealth() {
        let dates = business_days(NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(), 400);
        let p = ReturnPanel::from_rows(dates, vec!["a".into(), "b".into()], &vec![vec![0.0, 0.0]; 400]).unwrap();
        let r = walk_forward(&p, &Strategy::EqualWeight, &BacktestConfig::default()).unwrap();
        assert!(r.wealth.iter().all(|w| *w == 1.0));
    }

    #[test]
    fn hand_compounded_two_months() {
        let dates = vec![
            NaiveDate::from_ymd_opt(2020, 1, 30).unwrap(),
            NaiveDate::from_ymd_opt(2020, 1, 31).unwrap(),
            NaiveDate::from_ymd_opt(2020, 2, 3).unwrap(),
            NaiveDate::from_ymd_opt(2020, 2, 4).unwrap(),
        ];
        let rows = vec![vec![0.05, -0.02], vec![0.01, 0.03], vec![0.02, -0.01], vec![-0.03, 0.04]];
        let p = ReturnPanel::from_rows(dates, vec!["a".into(), "b".into()], &rows).unwrap();
        let cfg = BacktestConfig {
            min_days: Some(1),
            ..BacktestConfig::default()
        };
        let r = walk_forward(&p, &Strategy::Benchmark(vec![0.25, 0.75]), &cfg).unwrap();
        let a = 0.25 * 1.02 * 0.97;
        let b = 0.75 * 0.99 * 1.04;
        assert!((r.wealth.last().unwrap() - (a + b)).abs() < 1e-12);
        assert_eq!(r.dates[0], NaiveDate::from_ymd_opt(2020, 1, 31).unwrap());
    }

    #[test]
    fn no_positions_before_min_window() {
        let p = random_panel(1, 600, 3);
        let r = walk_forward(&p, &Strategy::MinVariance, &BacktestConfig::default()).unwrap();
        assert!(r.rebalances.iter().all(|x| p.dates().iter().position(|d| *d == x.date).unwrap() + 1 >= 252));
        assert!(r.rebalances.iter().all(|x| (x.weights.iter().sum::<f64>() - 1.0).abs() < 1e-8));
    }

    #[test]
    fn sample_strategies_do_not_look_ahead() {
        let p = random_panel(2, 800, 4);
        let cfg = BacktestConfig::default();
        let full = walk_forward_many(&p, &Strategy::all(), &cfg).unwrap();
        let cal = Calendar::new(p.dates());
        let cut = cal.month_end_idx[cal.month_end_idx.len() - 6];
        let mut rows: Vec<Vec<f64>> = (0..p.len()).map(|i| p.row(i)).collect();
        for row in rows.iter_mut().skip(cut + 1) {
            row.iter_mut().for_each(|v| *v = -0.5);
        }
        let mutated = ReturnPanel::from_rows(p.dates().to_vec(), p.assets().to_vec(), &rows).unwrap();
        let other = walk_forward_many(&mutated, &Strategy::all(), &cfg).unwrap();
        for (a, b) in full.iter().zip(&other) {
            for (x, y) in a.rebalances.iter().zip(&b.rebalances) {
                if x.date <= p.dates()[cut] {
                    assert_eq!(x, y, "{}", a.strategy);
                }
            }
        }
    }

    #[test]
    fn latest_allocation_matches_last_rebalance() {
        let p = random_panel(5, 700, 3);
        let cfg = BacktestConfig::default();
        let strategies = [Strategy::MinCvar, Strategy::MaxDiversification];
        let runs = walk_forward_many(&p, &strategies, &cfg).unwrap();
        let (_, latest) = allocate_latest(&p, &strategies, &cfg).unwrap();
        for (r, l) in runs.iter().zip(&latest) {
            assert_eq!(r.rebalances.last().unwrap(), l);
        }
    }

    #[test]
    fn drawdown_cases() {
        assert_eq!(max_drawdown(&[1.0, 0.5, 0.75]), 0.5);
        assert_eq!(max_drawdown(&[1.0, 1.1, 1.2]), 0.0);
    }

    #[test]
    fn constant_returns_have_no_sharpe() {
        let dates = business_days(NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(), 700);
        let p = ReturnPanel::from_rows(dates, vec!["a".into(), "b".into()], &vec![vec![0.001, 0.001]; 700]).unwrap();
        let r = walk_forward(&p, &Strategy::EqualWeight, &BacktestConfig::default()).unwrap();
        assert!(matches!(performance_metrics(&r, 0.0), Err(Error::ZeroVol)));
    }

    #[test]
    fn metrics_on_random_panel() {
        let p = random_panel(3, 900, 3);
        let r = walk_forward(&p, &Strategy::RiskParity, &BacktestConfig::default()).unwrap();
        let m = performance_metrics(&r, 0.0).unwrap();
        assert!(m.ann_vol > 0.0 && (0.0..=1.0).contains(&m.max_drawdown));
        assert!(m.diversification_ratio >= 1.0);
        let short = walk_forward(&p.slice(0, 400), &Strategy::RiskParity, &BacktestConfig::default()).unwrap();
        assert!(matches!(performance_metrics(&short, 0.0), Err(Error::ResultTooShort { .. })));
    }

    #[test]
    fn breakdown_buckets() {
        let dates = business_days(NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(), 260);
        let cal = Calendar::new(&dates);
        let mut wealth = vec![1.0];
        let mut labels = Vec::new();
        let mut wdates = vec![dates[cal.month_end_idx[0]]];
        for (m, w) in cal.month_end_idx.windows(2).enumerate() {
            let high = m % 2 == 0;
            let days = w[1] - w[0];
            let daily = if high { 1.01f64.powf(1.0 / days as f64) } else { 1.0 };
            for t in w[0] + 1..=w[1] {
                wealth.push(wealth.last().unwrap() * daily);
                wdates.push(dates[t]);
            }
            labels.push((dates[w[1]], if high { RegimeLabel::High } else { RegimeLabel::Low }));
        }
        let r = BacktestResult {
            strategy: "x".into(),
            risk_model: RiskModel::Rolling1y,
            assets: vec![],
            dates: wdates,
            wealth,
            rebalances: vec![],
            final_inputs: None,
            alpha: 0.95,
        };
        let b = regime_breakdown(&r, &labels).unwrap();
        assert!((b[&RegimeLabel::High] - 0.12).abs() < 1e-12);
        assert!(b[&RegimeLabel::Low].abs() < 1e-15);
        let one: Vec<_> = labels.iter().map(|(d, _)| (*d, RegimeLabel::Low)).collect();
        let b = regime_breakdown(&r, &one).unwrap();
        let overall = stats::mean(&r.monthly_returns().iter().map(|x| x.1).collect::<Vec<_>>()) * 12.0;
        assert!((b[&RegimeLabel::Low] - overall).abs() < 1e-15);
    }

    #[test]
    fn clustering_cases() {
        let mut r = rng::stream(4, 0);
        let t = 60;
        let a: Vec<f64> = (0..t).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..t).map(|_| r.random_range(-1.0..1.0)).collect();
        let m = DMatrix::from_fn(t, 4, |i, j| match j {
            0 | 1 => a[i],
            2 => -a[i],
            _ => b[i],
        });
        let c = cluster_strategies(&m).unwrap();
        assert_eq!((c.merges[0].left, c.merges[0].right), (0, 1));
        assert!(c.merges[0].distance.abs() < 1e-7);
        assert!((c.distances[(0, 2)] - 2.0).abs() < 1e-12);
        assert!((c.eigen_ratios.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(c.merges.len(), 3);
        assert!(matches!(cluster_strategies(&m.columns(0, 1).into_owned()), Err(Error::TooFewStrategies(1))));
    }
}
