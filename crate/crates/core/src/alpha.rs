//! Return forecasting: variance risk premium, rolling regressions, naive
//! trailing means, information coefficients and quintile factor portfolios.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Calendar, ReturnPanel};
use crate::error::{Error, Result};
use crate::stats::{self, TRADING_DAYS};

pub const VRP_WINDOW: usize = 21;
pub const OLS_WINDOW: usize = 60;

/// Implied minus realized monthly variance at each monthly date.
///
/// The implied leg is `(iv / 100)^2 * 21 / 252`; the realized leg is the sum
/// of squared daily returns over the `window` trading days ending on or
/// before the monthly date. Months without a full window are skipped.
pub fn vrp(
    implied_vol: &[(NaiveDate, f64)],
    daily_dates: &[NaiveDate],
    daily_returns: &[f64],
    window: usize,
) -> Result<Vec<(NaiveDate, f64)>> {
    if daily_dates.len() != daily_returns.len() {
        return Err(Error::LengthMismatch("daily dates and returns".into()));
    }
    if window == 0 || daily_returns.len() < window {
        return Err(Error::InsufficientWindow {
            needed: window.max(1),
            got: daily_returns.len(),
        });
    }
    let mut out = Vec::new();
    for &(date, iv) in implied_vol {
        let end = daily_dates.partition_point(|d| *d <= date);
        if end < window {
            continue;
        }
        let realized: f64 = daily_returns[end - window..end].iter().map(|r| r * r).sum();
        let implied = (iv / 100.0).powi(2) * VRP_WINDOW as f64 / TRADING_DAYS;
        out.push((date, implied - realized));
    }
    if out.is_empty() {
        return Err(Error::InsufficientWindow {
            needed: window,
            got: daily_returns.len(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub beta: Vec<f64>,
    pub rss: f64,
}

/// Least squares with an intercept prepended to `regressors` (one vector
/// per regressor, each aligned with `y`).
pub fn ols(y: &[f64], regressors: &[&[f64]]) -> Result<OlsFit> {
    let n = y.len();
    let k = regressors.len() + 1;
    if regressors.iter().any(|r| r.len() != n) {
        return Err(Error::LengthMismatch("regressor length".into()));
    }
    if n < k + 1 {
        return Err(Error::too_short(k + 1, n));
    }
    let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { regressors[j - 1][i] });
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::CollinearRegressors);
    }
    let yv = DVector::from_column_slice(y);
    let beta = svd.solve(&yv, 1e-14 * smax).map_err(|_| Error::CollinearRegressors)?;
    let resid = &yv - &x * &beta;
    Ok(OlsFit {
        beta: beta.iter().cloned().collect(),
        rss: resid.norm_squared(),
    })
}

/// Rolling-window regression forecasts.
///
/// `regressors[k][t]` must already be lagged so that it is known before
/// `y[t]` is realized. Regressors may extend one step past `y`; entry `t`
/// of the output is the forecast of period `t` from the regression on the
/// `window` periods before it, `None` for the first `window` periods.
pub fn rolling_ols_forecast(y: &[f64], regressors: &[Vec<f64>], window: usize) -> Result<Vec<Option<f64>>> {
    let k = regressors.len() + 1;
    if window < k + 2 {
        return Err(Error::too_short(k + 2, window));
    }
    let len = regressors.first().map_or(y.len(), |r| r.len());
    if regressors.iter().any(|r| r.len() != len) || (len != y.len() && len != y.len() + 1) {
        return Err(Error::LengthMismatch("regressors must match y or extend it by one".into()));
    }
    if y.len() < window {
        return Err(Error::too_short(window, y.len()));
    }
    let mut out = vec![None; len];
    for t in window..len {
        let cols: Vec<&[f64]> = regressors.iter().map(|r| &r[t - window..t]).collect();
        let fit = ols(&y[t - window..t], &cols)?;
        let f = fit.beta[0] + regressors.iter().enumerate().map(|(j, r)| fit.beta[j + 1] * r[t]).sum::<f64>();
        out[t] = Some(f);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveMode {
    ShortTerm,
    LongTerm,
}

/// Per month-end, per asset predictions of the next month's return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    /// `values[date][asset]`.
    pub values: Vec<Vec<f64>>,
    pub look_ahead: bool,
}

/// Annualized trailing-mean forecasts. `ShortTerm` averages the last year
/// of daily returns up to each month-end; `LongTerm` uses the whole sample
/// and is flagged as look-ahead.
pub fn naive_forecasts(panel: &ReturnPanel, mode: NaiveMode) -> Result<ForecastSet> {
    let year = TRADING_DAYS as usize;
    if panel.is_empty() {
        return Err(Error::EmptyPanel);
    }
    if mode == NaiveMode::ShortTerm && panel.len() < year {
        return Err(Error::too_short(year, panel.len()));
    }
    let cal = Calendar::new(panel.dates());
    let n = panel.n_assets();
    let full: Vec<f64> = (0..n).map(|j| stats::mean(&panel.column(j)) * TRADING_DAYS).collect();
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for &i in &cal.month_end_idx {
        match mode {
            NaiveMode::ShortTerm => {
                if i + 1 < year {
                    continue;
                }
                let v = panel.values();
                values.push(
                    (0..n)
                        .map(|j| (i + 1 - year..=i).map(|r| v[(r, j)]).sum::<f64>() / year as f64 * TRADING_DAYS)
                        .collect(),
                );
            }
            NaiveMode::LongTerm => values.push(full.clone()),
        }
        dates.push(panel.dates()[i]);
    }
    Ok(ForecastSet {
        dates,
        assets: panel.assets().to_vec(),
        values,
        look_ahead: mode == NaiveMode::LongTerm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcSummary {
    /// Per-date IC; NaN where either cross-section has no dispersion.
    pub ics: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub ratio: f64,
}

/// Per-date Pearson correlation across assets, summarized over the dates
/// with a defined IC.
pub fn cross_sectional_ic(predicted: &[Vec<f64>], realized: &[Vec<f64>]) -> Result<IcSummary> {
    if predicted.len() != realized.len() {
        return Err(Error::LengthMismatch("predicted and realized dates".into()));
    }
    let mut ics = Vec::with_capacity(predicted.len());
    for (p, r) in predicted.iter().zip(realized) {
        if p.len() != r.len() {
            return Err(Error::LengthMismatch("cross-section sizes differ".into()));
        }
        if p.len() < 3 {
            return Err(Error::TooFewAssets(p.len()));
        }
        ics.push(stats::pearson(p, r));
    }
    let finite: Vec<f64> = ics.iter().cloned().filter(|v| v.is_finite()).collect();
    let mean = if finite.is_empty() { f64::NAN } else { stats::mean(&finite) };
    let std = if finite.len() > 1 { stats::std_dev(&finite) } else { f64::NAN };
    Ok(IcSummary {
        ics,
        mean,
        std,
        ratio: mean / std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPortfolio {
    pub factor_return: f64,
    /// Signed weight per stock; long legs sum to 1 and short legs to -1.
    pub weights: Vec<f64>,
    pub groups_used: Vec<String>,
}

/// Group-neutral quintile long/short portfolio: within each group of at
/// least five stocks, long the top fifth by score and short the bottom
/// fifth, equal weights within legs and equal weight per group. Ties keep
/// input order.
pub fn quintile_ls_portfolio(scores: &[f64], groups: &[String], next_returns: &[f64]) -> Result<FactorPortfolio> {
    if scores.len() != groups.len() || scores.len() != next_returns.len() {
        return Err(Error::LengthMismatch("scores, groups and returns".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::OutOfRangeInput("NaN score".into()));
    }
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.as_str()).or_default().push(i);
    }
    let eligible: Vec<(&str, Vec<usize>)> = members.into_iter().filter(|(_, v)| v.len() >= 5).collect();
    if eligible.is_empty() {
        return Err(Error::NoEligibleGroups);
    }
    let g = eligible.len() as f64;
    let mut weights = vec![0.0; scores.len()];
    let mut total = 0.0;
    for (_, idx) in &eligible {
        let mut order = idx.clone();
        order.sort_by(|a, b| scores[*a].partial_cmp(&scores[*b]).unwrap());
        let k = order.len() / 5;
        let short = &order[..k];
        let long = &order[order.len() - k..];
        let leg = |ids: &[usize]| ids.iter().map(|&i| next_returns[i]).sum::<f64>() / k as f64;
        total += leg(long) - leg(short);
        for &i in long {
            weights[i] += 1.0 / (k as f64 * g);
        }
        for &i in short {
            weights[i] -= 1.0 / (k as f64 * g);
        }
    }
    Ok(FactorPortfolio {
        factor_return: total / g,
        weights,
        groups_used: eligible.iter().map(|(n, _)| n.to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn days(n: usize) -> Vec<NaiveDate> {
        let start = NaiveDate::from_ymd_opt(2010, 1, 4).unwrap();
        (0..n).map(|i| start + chrono::Duration::days(i as i64)).collect()
    }

    #[test]
    fn vrp_units() {
        let d = days(40);
        let iv = vec![(d[30], 20.0)];
        let v = vrp(&iv, &d, &vec![0.0; 40], 21).unwrap();
        assert!((v[0].1 - 0.04 * 21.0 / 252.0).abs() < 1e-15);
        assert!((v[0].1 - 0.003333).abs() < 1e-6);
        let r = vec![0.01; 40];
        // implied vol chosen so both legs equal 21 * 0.0001
        let iv_eq = (21.0 * 1e-4 * 252.0 / 21.0f64).sqrt() * 100.0;
        let v = vrp(&[(d[30], iv_eq)], &d, &r, 21).unwrap();
        assert!(v[0].1.abs() < 1e-15);
        assert!(matches!(
            vrp(&iv, &d[..10], &r[..10], 21),
            Err(Error::InsufficientWindow { .. })
        ));
    }

    #[test]
    fn ols_perfect_fit() {
        let x: Vec<f64> = (0..80).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * v).collect();
        let fit = ols(&y, &[&x]).unwrap();
        assert!((fit.beta[0] - 2.0).abs() < 1e-10 && (fit.beta[1] - 3.0).abs() < 1e-10);
        let f = rolling_ols_forecast(&y, &[x.clone()], 60).unwrap();
        for t in 60..80 {
            assert!((f[t].unwrap() - y[t]).abs() < 1e-10);
        }
        assert!(f[..60].iter().all(|v| v.is_none()));
    }

    #[test]
    fn constant_indicator_is_collinear() {
        let x: Vec<f64> = (0..70).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.5).collect();
        let ind = vec![1.0; 70];
        assert!(matches!(
            rolling_ols_forecast(&y, &[x, ind], 60),
            Err(Error::CollinearRegressors)
        ));
    }

    #[test]
    fn ols_matches_normal_equations() {
        let mut r = rng::stream(3, 0);
        let n = 25;
        let x1: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let fit = ols(&y, &[&x1, &x2]).unwrap();
        // independent solve of X'X b = X'y by Gaussian elimination
        let rows: Vec<[f64; 3]> = (0..n).map(|i| [1.0, x1[i], x2[i]]).collect();
        let mut a = [[0.0f64; 4]; 3];
        for row in 0..3 {
            for col in 0..3 {
                a[row][col] = rows.iter().map(|x| x[row] * x[col]).sum();
            }
            a[row][3] = rows.iter().zip(&y).map(|(x, yy)| x[row] * yy).sum();
        }
        for p in 0..3 {
            for q in p + 1..3 {
                let f = a[q][p] / a[p][p];
                for c in p..4 {
                    a[q][c] -= f * a[p][c];
                }
            }
        }
        let mut b = [0.0; 3];
        for p in (0..3).rev() {
            b[p] = (a[p][3] - (p + 1..3).map(|c| a[p][c] * b[c]).sum::<f64>()) / a[p][p];
        }
        for j in 0..3 {
            assert!((fit.beta[j] - b[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn indicator_reduces_rss() {
        let mut r = rng::stream(4, 0);
        let x: Vec<f64> = (0..60).map(|_| r.random_range(-1.0..1.0)).collect();
        let ind: Vec<f64> = (0..60).map(|i| if i % 4 == 0 { 1.0 } else { 0.0 }).collect();
        let y: Vec<f64> = (0..60).map(|i| x[i] + ind[i] + r.random_range(-0.5..0.5)).collect();
        let a = ols(&y, &[&x]).unwrap();
        let b = ols(&y, &[&x, &ind]).unwrap();
        assert!(b.rss <= a.rss);
    }

    #[test]
    fn forecasts_ignore_future_data() {
        let mut r = rng::stream(5, 0);
        let x: Vec<f64> = (0..90).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..90).map(|i| x[i] + r.random_range(-0.5..0.5)).collect();
        let a = rolling_ols_forecast(&y, &[x.clone()], 60).unwrap();
        let mut y2 = y.clone();
        y2[75] = 99.0;
        let b = rolling_ols_forecast(&y2, &[x], 60).unwrap();
        assert_eq!(a[..=75], b[..=75]);
    }

    fn const_panel(n: usize, c: f64) -> ReturnPanel {
        ReturnPanel::from_rows(days(n), vec!["a".into(), "b".into()], &vec![vec![c, c]; n]).unwrap()
    }

    #[test]
    fn naive_modes() {
        let p = const_panel(400, 0.001);
        let s = naive_forecasts(&p, NaiveMode::ShortTerm).unwrap();
        let l = naive_forecasts(&p, NaiveMode::LongTerm).unwrap();
        assert!(!s.look_ahead && l.look_ahead);
        let last_s = s.values.last().unwrap();
        let last_l = l.values.last().unwrap();
        assert!((last_s[0] - 0.252).abs() < 1e-12 && (last_l[0] - 0.252).abs() < 1e-12);
        assert!(matches!(
            naive_forecasts(&const_panel(100, 0.0), NaiveMode::ShortTerm),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn short_term_naive_is_causal() {
        let mut r = rng::stream(6, 0);
        let rows: Vec<Vec<f64>> = (0..600).map(|_| vec![r.random_range(-0.02..0.02)]).collect();
        let p = ReturnPanel::from_rows(days(600), vec!["a".into()], &rows).unwrap();
        let a = naive_forecasts(&p, NaiveMode::ShortTerm).unwrap();
        let mut rows2 = rows.clone();
        for row in rows2.iter_mut().skip(500) {
            row[0] = 0.5;
        }
        let b = naive_forecasts(&ReturnPanel::from_rows(days(600), vec!["a".into()], &rows2).unwrap(), NaiveMode::ShortTerm).unwrap();
        for (k, d) in a.dates.iter().enumerate() {
            if *d < days(600)[500] {
                assert_eq!(a.values[k], b.values[k]);
            }
        }
    }

    #[test]
    fn ic_cases() {
        let p = vec![vec![0.1, 0.3, -0.2, 0.05]; 3];
        let s = cross_sectional_ic(&p, &p).unwrap();
        assert!(s.ics.iter().all(|v| (v - 1.0).abs() < 1e-15));
        assert!(matches!(
            cross_sectional_ic(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]]),
            Err(Error::TooFewAssets(2))
        ));
    }

    #[test]
    fn quintile_examples() {
        let scores: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let groups = vec!["us-tech".to_string(); 10];
        let rets: Vec<f64> = (0..10).map(|i| i as f64 * 0.01).collect();
        let f = quintile_ls_portfolio(&scores, &groups, &rets).unwrap();
        assert_eq!(f.weights[8], 0.5);
        assert_eq!(f.weights[9], 0.5);
        assert_eq!(f.weights[0], -0.5);
        assert_eq!(f.weights[1], -0.5);
        assert!(f.weights[2..8].iter().all(|w| *w == 0.0));
        assert!((f.factor_return - 0.08).abs() < 1e-15);

        let mut g2 = groups.clone();
        g2.extend(vec!["eu-fin".to_string(); 4]);
        let mut s2 = scores.clone();
        s2.extend([1.0, 2.0, 3.0, 4.0]);
        let mut r2 = rets.clone();
        r2.extend([1.0; 4]);
        let f2 = quintile_ls_portfolio(&s2, &g2, &r2).unwrap();
        assert_eq!(f2.groups_used, vec!["us-tech".to_string()]);
        assert!(f2.weights[10..].iter().all(|w| *w == 0.0));

        let flat = quintile_ls_portfolio(&scores, &groups, &[0.03; 10]).unwrap();
        assert_eq!(flat.factor_return, 0.0);
        assert!(matches!(
            quintile_ls_portfolio(&scores[..4], &groups[..4], &rets[..4]),
            Err(Error::NoEligibleGroups)
        ));
    }

    proptest! {
        #[test]
        fn quintile_invariant_to_monotone_transform(s in proptest::collection::vec(-5.0..5.0f64, 12),
                                                    r in proptest::collection::vec(-0.1..0.1f64, 12)) {
            let groups: Vec<String> = (0..12).map(|i| if i % 2 == 0 { "a".into() } else { "b".into() }).collect();
            let t: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            let a = quintile_ls_portfolio(&s, &groups, &r).unwrap();
            let b = quintile_ls_portfolio(&t, &groups, &r).unwrap();
            prop_assert_eq!(a.weights, b.weights);
        }
    }
}
