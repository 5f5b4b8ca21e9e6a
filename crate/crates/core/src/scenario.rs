//! Joint ARMA-GARCH / DCC / t-copula model: staged fit, month-ahead path
//! simulation and the risk forecasts derived from the simulated paths.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand_distr::ChiSquared;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Calendar, ReturnPanel};
use crate::dependence::{
    self, dcc_filter, fit_correlation, fit_t_copula, pseudo_observations, q_to_r, whiten, CorrelationMode,
    DccParams, TCopulaParams,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::stats;
use crate::univariate::{fit_arma_garch, ArmaGarchParams, FilterState};

pub const DEFAULT_HORIZON: usize = 21;
pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_ALPHA: f64 = 0.95;
/// Roughly five years of trading days.
pub const DEFAULT_MIN_DAYS: usize = 1260;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "days")]
pub enum FitWindow {
    Expanding(usize),
    Rolling(usize),
}

impl Default for FitWindow {
    fn default() -> Self {
        FitWindow::Expanding(DEFAULT_MIN_DAYS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointFitOptions {
    pub correlation: CorrelationMode,
    pub gjr: bool,
}

impl Default for JointFitOptions {
    fn default() -> Self {
        Self {
            correlation: CorrelationMode::Dcc,
            gjr: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFit {
    pub asset: String,
    #[serde(flatten)]
    pub params: ArmaGarchParams,
    pub loglik: f64,
    pub state: FilterState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowInfo {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub observations: usize,
    pub window: FitWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModelFit {
    pub marginals: Vec<MarginalFit>,
    pub dcc: DccParams,
    /// DCC state for the first day after the fit window.
    #[serde(with = "dependence::matrix_serde")]
    pub next_q: DMatrix<f64>,
    pub copula: TCopulaParams,
    pub window: WindowInfo,
}

impl JointModelFit {
    pub fn assets(&self) -> Vec<String> {
        self.marginals.iter().map(|m| m.asset.clone()).collect()
    }

    pub fn n_assets(&self) -> usize {
        self.marginals.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_assets();
        if n == 0 || self.dcc.n() != n || self.copula.corr.nrows() != n || self.next_q.shape() != (n, n) {
            return Err(Error::InvalidModel("component dimensions disagree".into()));
        }
        for m in &self.marginals {
            m.params.validate().map_err(|e| Error::InvalidModel(e.to_string()))?;
            if !(m.state.next_var > 0.0) {
                return Err(Error::InvalidModel(format!("non-positive variance state for {}", m.asset)));
            }
        }
        self.dcc.validate().map_err(|e| Error::InvalidModel(e.to_string()))?;
        self.copula.validate().map_err(|e| Error::InvalidModel(e.to_string()))?;
        Ok(())
    }
}

/// Intermediate products of [`fit_joint`], useful for diagnostics.
#[derive(Debug, Clone)]
pub struct JointFitDiagnostics {
    /// GARCH-standardized residuals handed to the correlation stage.
    pub std_residuals: DMatrix<f64>,
    /// DCC-whitened residuals handed to the copula stage.
    pub whitened: DMatrix<f64>,
}

pub fn fit_joint(panel: &ReturnPanel, window: FitWindow) -> Result<JointModelFit> {
    fit_joint_with(panel, window, JointFitOptions::default()).map(|(m, _)| m)
}

/// Staged fit: per-asset ARMA-GARCH, then DCC (or CCC) on the standardized
/// residuals, then a t-copula on the rank transform of the DCC-whitened
/// residuals.
pub fn fit_joint_with(
    panel: &ReturnPanel,
    window: FitWindow,
    opts: JointFitOptions,
) -> Result<(JointModelFit, JointFitDiagnostics)> {
    let (start, needed) = match window {
        FitWindow::Expanding(min) => (0, min),
        FitWindow::Rolling(days) => (panel.len().saturating_sub(days), days),
    };
    if panel.len() < needed || needed == 0 {
        return Err(Error::InsufficientHistory {
            needed: needed.max(1),
            got: panel.len(),
        });
    }
    let sample = panel.slice(start, panel.len());
    let n = sample.n_assets();
    let fits: Vec<_> = (0..n)
        .into_par_iter()
        .map(|j| fit_arma_garch(&sample.column(j), opts.gjr))
        .collect::<Result<Vec<_>>>()?;
    let t = sample.len();
    let z = DMatrix::from_fn(t, n, |i, j| fits[j].filter.std_resid[i]);
    let (dcc, whitened, next_q) = if n >= 2 {
        let dcc = fit_correlation(&z, opts.correlation)?;
        let path = dcc_filter(&dcc, &z)?;
        let w = whiten(&z, &path)?;
        (dcc, w, path.next_q)
    } else {
        let one = DMatrix::identity(1, 1);
        (DccParams::constant(one.clone()), z.clone(), one)
    };
    let copula = if n >= 2 {
        fit_t_copula(&pseudo_observations(&whitened)?)?
    } else {
        TCopulaParams {
            corr: DMatrix::identity(1, 1),
            nu: dependence::NU_CAP,
        }
    };
    let marginals = fits
        .iter()
        .zip(sample.assets())
        .map(|(f, a)| MarginalFit {
            asset: a.clone(),
            params: f.params,
            loglik: f.filter.loglik,
            state: f.filter.terminal,
        })
        .collect();
    let model = JointModelFit {
        marginals,
        dcc,
        next_q,
        copula,
        window: WindowInfo {
            start: sample.dates()[0],
            end: *sample.dates().last().unwrap(),
            observations: t,
            window,
        },
    };
    Ok((
        model,
        JointFitDiagnostics {
            std_residuals: z,
            whitened,
        },
    ))
}

/// Simulated paths. Daily returns are stored path-major:
/// `paths[(p * horizon + h) * n + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub n_paths: usize,
    pub horizon: usize,
    pub n_assets: usize,
    pub paths: Vec<f64>,
    /// `n_paths x N` compounded horizon returns.
    pub horizon_returns: DMatrix<f64>,
    /// Average over paths and days of the model correlation `R_t`.
    pub mean_corr: DMatrix<f64>,
    pub seed: u64,
}

impl ScenarioSet {
    pub fn daily(&self, path: usize, day: usize, asset: usize) -> f64 {
        self.paths[(path * self.horizon + day) * self.n_assets + asset]
    }

    /// Every simulated return multiplied by `factor` (horizon returns are
    /// scaled directly rather than recompounded).
    pub fn scaled(&self, factor: f64) -> ScenarioSet {
        ScenarioSet {
            paths: self.paths.iter().map(|v| v * factor).collect(),
            horizon_returns: &self.horizon_returns * factor,
            ..self.clone()
        }
    }

    /// Portfolio horizon return per path.
    pub fn portfolio_returns(&self, weights: &[f64]) -> Vec<f64> {
        (0..self.n_paths)
            .map(|p| weights.iter().enumerate().map(|(i, w)| w * self.horizon_returns[(p, i)]).sum())
            .collect()
    }
}

struct PathOutput {
    daily: Vec<f64>,
    horizon: Vec<f64>,
    corr_sum: DMatrix<f64>,
}

/// Monte Carlo simulation of the joint model. Path `p` uses RNG stream
/// `(seed, p)`, so the output is independent of the thread count.
pub fn simulate_scenarios(model: &JointModelFit, horizon: usize, n_paths: usize, seed: u64) -> Result<ScenarioSet> {
    model.validate()?;
    let n = model.n_assets();
    let cop_l = linalg::cholesky(&model.copula.corr)
        .map_err(|_| Error::InvalidModel("copula correlation not PD".into()))?
        .l();
    let nu = model.copula.nu;
    let chi = ChiSquared::new(nu).map_err(|e| Error::InvalidModel(e.to_string()))?;
    let outputs: Vec<PathOutput> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = rng::stream(seed, p as u64);
            let mut states: Vec<FilterState> = model.marginals.iter().map(|m| m.state).collect();
            let mut q = model.next_q.clone();
            let mut daily = Vec::with_capacity(horizon * n);
            let mut growth = vec![1.0; n];
            let mut corr_sum = DMatrix::zeros(n, n);
            let mut z = vec![0.0; n];
            for _ in 0..horizon {
                let x = dependence::draw_mvt(&cop_l, &chi, nu, n, &mut rng);
                let eta: Vec<f64> = x
                    .iter()
                    .map(|&v| {
                        // map through the copula uniform without losing the upper tail
                        let lower = stats::norm_quantile(stats::t_cdf(-v.abs(), nu));
                        if v > 0.0 {
                            -lower
                        } else {
                            lower
                        }
                    })
                    .collect();
                let r = q_to_r(&q);
                corr_sum += &r;
                let l = match nalgebra::Cholesky::new(r) {
                    Some(c) => c.l(),
                    None => DMatrix::identity(n, n),
                };
                for i in 0..n {
                    z[i] = (0..=i).map(|k| l[(i, k)] * eta[k]).sum();
                }
                for i in 0..n {
                    let m = &model.marginals[i].params;
                    let (ret, st) = crate::univariate::simulate_path(m, states[i], &z[i..=i]);
                    states[i] = st;
                    daily.push(ret[0]);
                    growth[i] *= 1.0 + ret[0];
                }
                model.dcc.update_q(&mut q, &z);
            }
            PathOutput {
                daily,
                horizon: growth.iter().map(|g| g - 1.0).collect(),
                corr_sum,
            }
        })
        .collect();
    let mut paths = Vec::with_capacity(n_paths * horizon * n);
    let mut horizon_returns = DMatrix::zeros(n_paths, n);
    let mut corr_total = DMatrix::zeros(n, n);
    for (p, out) in outputs.iter().enumerate() {
        paths.extend_from_slice(&out.daily);
        for i in 0..n {
            horizon_returns[(p, i)] = out.horizon[i];
        }
        corr_total += &out.corr_sum;
    }
    let denom = (n_paths * horizon).max(1) as f64;
    let mut mean_corr = corr_total / denom;
    if n_paths * horizon == 0 {
        mean_corr = q_to_r(&model.next_q);
    }
    Ok(ScenarioSet {
        n_paths,
        horizon,
        n_assets: n,
        paths,
        horizon_returns,
        mean_corr,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskMeasures {
    pub var: f64,
    pub cvar: f64,
    pub vol: f64,
}

/// Empirical VaR / CVaR (positive loss fractions) and sample volatility.
pub fn risk_measures(sample: &[f64], alpha: f64) -> Result<RiskMeasures> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::BadAlpha(alpha));
    }
    if sample.len() < 100 {
        return Err(Error::SampleTooSmall {
            needed: 100,
            got: sample.len(),
        });
    }
    let (var, cvar) = stats::tail_risk(sample, alpha);
    Ok(RiskMeasures {
        var,
        cvar,
        vol: stats::std_dev(sample),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskForecast {
    pub var: f64,
    pub cvar: f64,
    /// Volatility of the horizon portfolio return.
    pub vol: f64,
    /// `vol / sqrt(horizon)`.
    pub vol_daily: f64,
    pub corr: DMatrix<f64>,
    pub wpc: f64,
    /// Per-asset volatility of simulated horizon returns.
    pub asset_vols: Vec<f64>,
}

pub(crate) fn check_simplex(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::LengthMismatch(format!("{} weights for {n} assets", weights.len())));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-8 {
        return Err(Error::WeightSumError(sum));
    }
    if let Some(w) = weights.iter().find(|w| **w < -1e-10) {
        return Err(Error::OutOfRangeInput(format!("negative weight {w}")));
    }
    Ok(())
}

pub fn forecast_risk(model: &JointModelFit, scenarios: &ScenarioSet, weights: &[f64], alpha: f64) -> Result<RiskForecast> {
    let n = model.n_assets();
    if scenarios.n_assets != n {
        return Err(Error::LengthMismatch("scenario and model asset counts differ".into()));
    }
    check_simplex(weights, n)?;
    let port = scenarios.portfolio_returns(weights);
    let rm = risk_measures(&port, alpha)?;
    let asset_vols: Vec<f64> = (0..n)
        .map(|i| stats::std_dev(&scenarios.horizon_returns.column(i).iter().cloned().collect::<Vec<_>>()))
        .collect();
    let w_clipped: Vec<f64> = weights.iter().map(|w| w.max(0.0)).collect();
    let wpc = if n >= 2 {
        dependence::weighted_pairwise(&w_clipped, &asset_vols, &scenarios.mean_corr).unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    Ok(RiskForecast {
        var: rm.var,
        cvar: rm.cvar,
        vol: rm.vol,
        vol_daily: rm.vol / (scenarios.horizon.max(1) as f64).sqrt(),
        corr: scenarios.mean_corr.clone(),
        wpc,
        asset_vols,
    })
}

/// Time-series information coefficient: Pearson correlation between
/// forecasts and the realizations they target.
pub fn prediction_ic(predicted: &[f64], realized: &[f64]) -> Result<f64> {
    if predicted.len() != realized.len() {
        return Err(Error::LengthMismatch("prediction_ic inputs".into()));
    }
    if predicted.len() < 3 {
        return Err(Error::too_short(3, predicted.len()));
    }
    let r = stats::pearson(predicted, realized);
    if r.is_nan() {
        return Err(Error::ZeroVariance);
    }
    Ok(r)
}

/// Settings for the month-end forecasting loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastConfig {
    pub window: FitWindow,
    pub horizon: usize,
    pub n_paths: usize,
    pub alpha: f64,
    pub seed: u64,
    pub options: JointFitOptions,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            window: FitWindow::default(),
            horizon: DEFAULT_HORIZON,
            n_paths: DEFAULT_PATHS,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            options: JointFitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonthlyForecast {
    pub date: NaiveDate,
    pub forecast: RiskForecast,
}

/// Refit the joint model at each month-end with enough history, simulate
/// and forecast portfolio risk for the following month. Only data dated at
/// or before each month-end enters its forecast.
pub fn monthly_risk_forecasts(panel: &ReturnPanel, weights: &[f64], cfg: &ForecastConfig) -> Result<Vec<MonthlyForecast>> {
    check_simplex(weights, panel.n_assets())?;
    let cal = Calendar::new(panel.dates());
    let needed = match cfg.window {
        FitWindow::Expanding(m) => m,
        FitWindow::Rolling(d) => d,
    };
    let months: Vec<(usize, usize)> = cal
        .month_end_idx
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, idx)| idx + 1 >= needed)
        .collect();
    months
        .par_iter()
        .map(|&(k, idx)| {
            let hist = panel.slice(0, idx + 1);
            let (model, _) = fit_joint_with(&hist, cfg.window, cfg.options)?;
            let seed = rng::derive_seed(cfg.seed, 1, k as u64);
            let sims = simulate_scenarios(&model, cfg.horizon, cfg.n_paths, seed)?;
            Ok(MonthlyForecast {
                date: panel.dates()[idx],
                forecast: forecast_risk(&model, &sims, weights, cfg.alpha)?,
            })
        })
        .collect()
}

/// Realized volatility of daily returns over each calendar month, scaled by
/// `sqrt(horizon)` so it is comparable with horizon forecasts. Keyed by the
/// month-end date of the month in which the returns were earned.
pub fn realized_monthly_vol(dates: &[NaiveDate], returns: &[f64], horizon: usize) -> Vec<(NaiveDate, f64)> {
    let cal = Calendar::new(dates);
    let mut out = Vec::new();
    let mut start = 0;
    for &end in &cal.month_end_idx {
        let slice = &returns[start..=end];
        if slice.len() >= 2 {
            out.push((dates[end], stats::std_dev(slice) * (horizon as f64).sqrt()));
        }
        start = end + 1;
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dependence::NU_CAP;

    pub(crate) fn degenerate_model(n: usize, sigma: f64) -> JointModelFit {
        let params = ArmaGarchParams::garch(0.0, sigma * sigma, 0.0, 0.0);
        JointModelFit {
            marginals: (0..n)
                .map(|i| MarginalFit {
                    asset: format!("a{i}"),
                    params,
                    loglik: 0.0,
                    state: params.initial_state(),
                })
                .collect(),
            dcc: DccParams::constant(DMatrix::identity(n, n)),
            next_q: DMatrix::identity(n, n),
            copula: TCopulaParams {
                corr: DMatrix::identity(n, n),
                nu: NU_CAP,
            },
            window: WindowInfo {
                start: NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(),
                end: NaiveDate::from_ymd_opt(2000, 1, 3).unwrap(),
                observations: 0,
                window: FitWindow::default(),
            },
        }
    }

    #[test]
    fn risk_measures_cases() {
        let flat = vec![0.01; 200];
        let rm = risk_measures(&flat, 0.95).unwrap();
        assert!((rm.var + 0.01).abs() < 1e-15 && (rm.cvar + 0.01).abs() < 1e-15);
        assert!(matches!(risk_measures(&flat, 1.0), Err(Error::BadAlpha(_))));
        assert!(matches!(risk_measures(&flat[..50], 0.95), Err(Error::SampleTooSmall { .. })));
    }

    #[test]
    fn horizon_returns_compound_daily_paths() {
        let m = degenerate_model(2, 0.01);
        let s = simulate_scenarios(&m, 5, 20, 3).unwrap();
        for p in 0..20 {
            for i in 0..2 {
                let g: f64 = (0..5).map(|h| 1.0 + s.daily(p, h, i)).product();
                assert_eq!(s.horizon_returns[(p, i)], g - 1.0);
            }
        }
    }

    #[test]
    fn degenerate_model_scales_with_sqrt_horizon() {
        let sigma = 0.01;
        let m = degenerate_model(3, sigma);
        let s = simulate_scenarios(&m, 21, 10_000, 11).unwrap();
        let col: Vec<f64> = s.horizon_returns.column(0).iter().cloned().collect();
        let sd = stats::std_dev(&col);
        assert!((sd / (21f64.sqrt() * sigma) - 1.0).abs() < 0.03, "{sd}");
        let f = forecast_risk(&m, &s, &[1.0 / 3.0; 3], 0.95).unwrap();
        assert!(f.wpc.abs() < 0.02, "{}", f.wpc);
        assert!(f.cvar >= f.var);
    }

    #[test]
    fn scaling_scenarios_doubles_vol_and_cvar() {
        let m = degenerate_model(2, 0.02);
        let s = simulate_scenarios(&m, 21, 2000, 5).unwrap();
        let w = [0.3, 0.7];
        let a = forecast_risk(&m, &s, &w, 0.95).unwrap();
        let b = forecast_risk(&m, &s.scaled(2.0), &w, 0.95).unwrap();
        assert!((b.vol - 2.0 * a.vol).abs() < 1e-14);
        assert!((b.cvar - 2.0 * a.cvar).abs() < 1e-14);
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = degenerate_model(2, 0.01);
        let a = simulate_scenarios(&m, 21, 300, 9).unwrap();
        let b = simulate_scenarios(&m, 21, 300, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cvar_stable_when_doubling_paths() {
        let m = degenerate_model(2, 0.01);
        let w = [0.5, 0.5];
        let a = forecast_risk(&m, &simulate_scenarios(&m, 21, 10_000, 1).unwrap(), &w, 0.95).unwrap();
        let b = forecast_risk(&m, &simulate_scenarios(&m, 21, 20_000, 1).unwrap(), &w, 0.95).unwrap();
        assert!((a.cvar / b.cvar - 1.0).abs() < 0.02);
    }

    #[test]
    fn prediction_ic_cases() {
        let x = [1.0, 2.0, 4.0, 3.0];
        assert!((prediction_ic(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((prediction_ic(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(prediction_ic(&x[..2], &x[..2]), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn short_panel_is_insufficient() {
        let dates: Vec<NaiveDate> = (0..100)
            .map(|i| NaiveDate::from_ymd_opt(2000, 1, 1).unwrap() + chrono::Duration::days(i))
            .collect();
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![0.001 * (i % 3) as f64, 0.0]).collect();
        let p = ReturnPanel::from_rows(dates, vec!["a".into(), "b".into()], &rows).unwrap();
        assert!(matches!(
            fit_joint(&p, FitWindow::Expanding(1260)),
            Err(Error::InsufficientHistory { .. })
        ));
    }
}
