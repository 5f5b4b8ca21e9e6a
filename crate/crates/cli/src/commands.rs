use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use dynalloc::alpha::{
    self, cross_sectional_ic, naive_forecasts, rolling_ols_forecast, ForecastSet, NaiveMode, VRP_WINDOW,
};
use dynalloc::backtest::{
    allocate_latest, cluster_strategies, comparison_grid, performance_metrics, regime_breakdown, walk_forward_many,
    BacktestConfig, BacktestResult, ExpectedReturns, Rebalance, RiskModel, Strategy, BENCHMARK_60_40,
};
use dynalloc::data::{load_panel, monthly_returns, ReturnPanel, SeriesKind};
use dynalloc::dependence::{dependence_report, t_tail_dependence};
use dynalloc::regime::{fit_ms, four_state, label_regimes, oos_regime_probs, MsFit, RegimeLabel};
use dynalloc::scenario::{fit_joint_with, monthly_risk_forecasts, ForecastConfig, JointModelFit};
use dynalloc::{stats, Error, Result};
use nalgebra::DMatrix;
use serde_json::json;

use crate::args::{
    echo_config, AllocateArgs, AlphaArgs, BacktestArgs, Command, Common, FitArgs, ForecastArgs, Input, Kind,
    LabelSource, RegimesArgs, ReportArgs, StrategyArgs, VrpArgs,
};
use crate::io::{fmt, fmt_opt, read_columns, read_forecast_set, read_labels, read_series, read_wealth_dir, Out};

pub fn run(cmd: &Command) -> Result<()> {
    let out = Out::new(&cmd.common().out)?;
    out.text("config.txt", &echo_config(cmd))?;
    match cmd {
        Command::Fit(a) => fit(a, &out),
        Command::Forecast(a) => forecast(a, &out),
        Command::Regimes(a) => regimes(a, &out),
        Command::Alpha(a) => alpha_cmd(a, &out),
        Command::Allocate(a) => allocate(a, &out),
        Command::Backtest(a) => backtest(a, &out),
        Command::Report(a) => report(a, &out),
    }
}

fn load(input: &Input) -> Result<ReturnPanel> {
    let kind = match input.kind {
        Kind::Returns => SeriesKind::Returns,
        Kind::Prices => SeriesKind::Prices,
    };
    load_panel(&input.input, kind)
}

fn parse_list(list: &str) -> Result<Vec<f64>> {
    list.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad weight {v:?}")))
        })
        .collect()
}

/// `a=0.5,b=0.5` or `0.5,0.5`; equal weights when absent.
pub fn parse_weights(list: Option<&str>, assets: &[String]) -> Result<Vec<f64>> {
    let n = assets.len();
    let Some(list) = list else {
        return Ok(vec![1.0 / n as f64; n]);
    };
    let w = if list.contains('=') {
        let mut w = vec![0.0; n];
        for part in list.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad weight entry {part:?}")))?;
            let j = assets
                .iter()
                .position(|a| a == k.trim())
                .ok_or_else(|| Error::UnknownAsset(k.trim().to_string()))?;
            w[j] = parse_list(v)?[0];
        }
        w
    } else {
        parse_list(list)?
    };
    if w.len() != n {
        return Err(Error::Config(format!("{} weights for {n} assets", w.len())));
    }
    Ok(w)
}

fn parse_strategies(a: &StrategyArgs, assets: &[String]) -> Result<Vec<Strategy>> {
    let bench = match &a.benchmark_weights {
        Some(s) => Some(parse_weights(Some(s), assets)?),
        None if assets.len() == BENCHMARK_60_40.len() => Some(BENCHMARK_60_40.to_vec()),
        None => None,
    };
    let names: Vec<&str> = a.strategy.split(',').map(str::trim).collect();
    let mut out = Vec::new();
    for name in names {
        if name == "all" {
            for s in Strategy::all() {
                match s {
                    Strategy::Benchmark(_) => {
                        if let Some(w) = &bench {
                            out.push(Strategy::Benchmark(w.clone()));
                        }
                    }
                    other => out.push(other),
                }
            }
            continue;
        }
        match name.parse::<Strategy>()? {
            Strategy::Benchmark(_) => {
                let w = bench
                    .clone()
                    .ok_or_else(|| Error::Config("benchmark needs --benchmark-weights for this panel".into()))?;
                out.push(Strategy::Benchmark(w));
            }
            other => out.push(other),
        }
    }
    let mut seen = std::collections::HashSet::new();
    out.retain(|s| seen.insert(s.name()));
    Ok(out)
}

fn parse_models(list: &str) -> Result<Vec<RiskModel>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim) {
        if name == "all" {
            out.extend(RiskModel::all());
        } else {
            out.push(name.parse()?);
        }
    }
    out.dedup();
    Ok(out)
}

fn backtest_config(common: &Common, a: &StrategyArgs, model: RiskModel, assets: &[String], command: &str) -> Result<BacktestConfig> {
    let expected = match &a.alpha_forecast {
        Some(p) => ExpectedReturns::Forecasts(read_forecast_set(p, assets)?),
        None => ExpectedReturns::Historical,
    };
    Ok(BacktestConfig {
        risk_model: model,
        alpha: common.alpha,
        seed: common.require_seed(command)?,
        horizon: common.horizon,
        n_paths: common.paths,
        cost_bps: 0.0,
        min_days: a.min_days,
        expected,
        resample: a.resample,
    })
}

fn fit(a: &FitArgs, out: &Out) -> Result<()> {
    let panel = load(&a.input)?;
    let (model, _) = fit_joint_with(&panel, a.model.fit_window(), a.model.options())?;
    out.json("model.json", &model)
}

fn monthly_forecasts(
    common: &Common,
    panel: &ReturnPanel,
    model: &crate::args::ModelArgs,
    weights: Option<&str>,
    command: &str,
) -> Result<Vec<dynalloc::scenario::MonthlyForecast>> {
    let w = parse_weights(weights, panel.assets())?;
    let cfg = ForecastConfig {
        window: model.fit_window(),
        horizon: common.horizon,
        n_paths: common.paths,
        alpha: common.alpha,
        seed: common.require_seed(command)?,
        options: model.options(),
    };
    monthly_risk_forecasts(panel, &w, &cfg)
}

fn forecast(a: &ForecastArgs, out: &Out) -> Result<()> {
    let panel = load(&a.input)?;
    let f = monthly_forecasts(&a.common, &panel, &a.model, a.portfolio.weights.as_deref(), "forecast")?;
    out.csv(
        "forecast.csv",
        &["date", "cvar", "vol", "wpc"],
        f.iter().map(|m| {
            vec![
                m.date.to_string(),
                fmt(m.forecast.cvar),
                fmt(m.forecast.vol),
                fmt(m.forecast.wpc),
            ]
        }),
    )?;
    let assets = panel.assets();
    let mut rows = Vec::new();
    for m in &f {
        for i in 0..assets.len() {
            for j in i + 1..assets.len() {
                rows.push(vec![
                    m.date.to_string(),
                    assets[i].clone(),
                    assets[j].clone(),
                    fmt(m.forecast.corr[(i, j)]),
                ]);
            }
        }
    }
    out.csv("correlation.csv", &["date", "asset_i", "asset_j", "corr"], rows)
}

fn prev_month(d: NaiveDate) -> (i32, u32) {
    if d.month() == 1 {
        (d.year() - 1, 12)
    } else {
        (d.year(), d.month() - 1)
    }
}

/// Monthly VRP keyed by calendar month.
fn monthly_vrp(panel: &ReturnPanel, v: &VrpArgs) -> Result<BTreeMap<(i32, u32), f64>> {
    let iv = read_series(&v.implied_vol)?;
    let j = match &v.vrp_asset {
        Some(name) => panel
            .asset_index(name)
            .ok_or_else(|| Error::UnknownAsset(name.clone()))?,
        None => 0,
    };
    let series = alpha::vrp(&iv, panel.dates(), &panel.column(j), VRP_WINDOW)?;
    Ok(series.into_iter().map(|(d, x)| ((d.year(), d.month()), x)).collect())
}

fn regimes(a: &RegimesArgs, out: &Out) -> Result<()> {
    let panel = load(&a.input)?;
    let series: Vec<(NaiveDate, f64, f64)> = match &a.forecast {
        Some(p) => read_columns(p, &["cvar", "wpc"])?
            .into_iter()
            .map(|(d, v)| match (v[0], v[1]) {
                (Some(c), Some(w)) => Ok((d, c, w)),
                _ => Err(Error::MissingValue {
                    row: 0,
                    column: format!("cvar/wpc on {d}"),
                }),
            })
            .collect::<Result<_>>()?,
        None => monthly_forecasts(&a.common, &panel, &a.model, a.portfolio.weights.as_deref(), "regimes")?
            .into_iter()
            .map(|m| (m.date, m.forecast.cvar, m.forecast.wpc))
            .collect(),
    };
    let vrp = monthly_vrp(&panel, &a.vrp)?;
    // driver for the month-end t observation is the VRP of the previous month
    let rows: Vec<(NaiveDate, f64, f64, f64)> = series
        .into_iter()
        .filter_map(|(d, c, w)| vrp.get(&prev_month(d)).map(|x| (d, c, w, *x)))
        .collect();
    let y_risk: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let y_corr: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let driver: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let risk = fit_ms(&y_risk, &driver)?;
    let corr = fit_ms(&y_corr, &driver)?;
    let oos_risk = oos_regime_probs(&y_risk, &driver, a.min_window)?;
    let oos_corr = oos_regime_probs(&y_corr, &driver, a.min_window)?;
    let source = |fit: &MsFit, oos: &[Option<f64>]| -> Vec<Option<f64>> {
        match a.label_source {
            LabelSource::Oos => oos.to_vec(),
            LabelSource::Predicted => fit.probs.predicted.iter().map(|p| Some(*p)).collect(),
            LabelSource::Filtered => fit.probs.filtered.iter().map(|p| Some(*p)).collect(),
            LabelSource::Smoothed => fit.probs.smoothed.iter().map(|p| Some(*p)).collect(),
        }
    };
    let label = |p: Option<f64>| p.map(|p| label_regimes(&[p], a.threshold)[0]);
    let risk_src = source(&risk, &oos_risk);
    let corr_src = source(&corr, &oos_corr);
    let mut out_rows = Vec::with_capacity(rows.len());
    for t in 0..rows.len() {
        let lr = label(risk_src[t]);
        let lc = label(corr_src[t]);
        let four = match (lr, lc) {
            (Some(r), Some(c)) => four_state(&[r], &[c])?[0].to_string(),
            _ => String::new(),
        };
        let show = |l: Option<RegimeLabel>| l.map(|l| l.to_string()).unwrap_or_default();
        out_rows.push(vec![
            rows[t].0.to_string(),
            fmt(risk.probs.predicted[t]),
            fmt(risk.probs.filtered[t]),
            fmt(risk.probs.smoothed[t]),
            fmt_opt(oos_risk[t]),
            show(lr),
            show(lc),
            four,
        ]);
    }
    for (name, f) in [("risk", &risk), ("correlation", &corr)] {
        if f.diagnostics.degenerate {
            eprintln!("dynalloc: warning: {name} regimes are degenerate (separation {:.3})", f.diagnostics.separation);
        }
    }
    out.csv(
        "regimes.csv",
        &[
            "date",
            "prob_predicted",
            "prob_filtered",
            "prob_smoothed",
            "prob_oos",
            "label_risk",
            "label_corr",
            "four_state",
        ],
        out_rows,
    )?;
    let summary = |f: &MsFit| json!({"params": f.params, "loglik": f.loglik, "diagnostics": f.diagnostics});
    out.json("regime_fit.json", &json!({"risk": summary(&risk), "correlation": summary(&corr)}))
}

fn forecast_rows(f: &ForecastSet) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (d, vals) in f.dates.iter().zip(&f.values) {
        for (a, v) in f.assets.iter().zip(vals) {
            rows.push(vec![d.to_string(), a.clone(), fmt(*v), f.look_ahead.to_string()]);
        }
    }
    rows
}

fn alpha_cmd(a: &AlphaArgs, out: &Out) -> Result<()> {
    let panel = load(&a.input)?;
    let monthly = monthly_returns(&panel)?;
    let vrp = monthly_vrp(&panel, &a.vrp)?;
    let labels: Option<BTreeMap<NaiveDate, f64>> = match &a.regimes {
        Some(p) => Some(
            read_labels(p, &["label_risk"])?
                .into_iter()
                .filter(|(_, v)| !v[0].is_empty())
                .map(|(d, v)| (d, if v[0] == "high" { 1.0 } else { 0.0 }))
                .collect(),
        ),
        None => None,
    };
    let md = monthly.dates();
    let k_last = md.len() - 1;
    // regressors for month k are known at the previous month-end
    let known = |k: usize| -> Option<(f64, Option<f64>)> {
        let prev = md[k - 1];
        let x = *vrp.get(&(prev.year(), prev.month()))?;
        match &labels {
            Some(l) => Some((x, Some(*l.get(&prev)?))),
            None => Some((x, None)),
        }
    };
    let ks: Vec<usize> = (1..=k_last).filter(|&k| known(k).is_some()).collect();
    let next = {
        let x = vrp.get(&(md[k_last].year(), md[k_last].month())).copied();
        let i = labels.as_ref().map(|l| l.get(&md[k_last]).copied());
        match (x, i) {
            (Some(x), None) => Some((x, None)),
            (Some(x), Some(Some(i))) => Some((x, Some(i))),
            _ => None,
        }
    };
    let mut x_ext: Vec<f64> = ks.iter().map(|&k| known(k).unwrap().0).collect();
    let mut i_ext: Vec<f64> = ks.iter().filter_map(|&k| known(k).unwrap().1).collect();
    if let Some((x, i)) = next {
        x_ext.push(x);
        if let Some(i) = i {
            i_ext.push(i);
        }
    }
    let issue: Vec<NaiveDate> = ks
        .iter()
        .map(|&k| md[k - 1])
        .chain(next.map(|_| md[k_last]))
        .collect();
    let run = |with_regime: bool| -> Result<Vec<Vec<Option<f64>>>> {
        let mut regs = vec![x_ext.clone()];
        if with_regime {
            regs.push(i_ext.clone());
        }
        (0..monthly.n_assets())
            .map(|j| {
                let y: Vec<f64> = ks.iter().map(|&k| monthly.values()[(k, j)]).collect();
                rolling_ols_forecast(&y, &regs, a.ols_window)
            })
            .collect()
    };
    let (per_asset, model) = if labels.is_some() {
        match run(true) {
            Ok(f) => (f, "vrp_regime"),
            Err(Error::CollinearRegressors) => {
                eprintln!("dynalloc: warning: regime indicator is constant in a window; using the VRP-only model");
                (run(false)?, "vrp")
            }
            Err(e) => return Err(e),
        }
    } else {
        (run(false)?, "vrp")
    };
    let mut set = ForecastSet {
        dates: Vec::new(),
        assets: monthly.assets().to_vec(),
        values: Vec::new(),
        look_ahead: false,
    };
    let mut realized = Vec::new();
    let mut predicted = Vec::new();
    for t in 0..issue.len() {
        let row: Option<Vec<f64>> = per_asset.iter().map(|f| f.get(t).copied().flatten()).collect();
        let Some(row) = row else { continue };
        if t < ks.len() {
            predicted.push(row.clone());
            realized.push(monthly.row(ks[t]));
        }
        set.dates.push(issue[t]);
        set.values.push(row);
    }
    out.csv(
        "alpha_forecast.csv",
        &["date", "asset", "prediction", "look_ahead_flag"],
        forecast_rows(&set),
    )?;
    let ic = cross_sectional_ic(&predicted, &realized)?;
    let ic_dates: Vec<NaiveDate> = set.dates.iter().take(predicted.len()).copied().collect();
    out.csv(
        "ic.csv",
        &["date", "ic"],
        ic_dates.iter().zip(&ic.ics).map(|(d, v)| vec![d.to_string(), fmt(*v)]),
    )?;
    let naive = naive_forecasts(&panel, NaiveMode::ShortTerm)?;
    let mut np = Vec::new();
    let mut nr = Vec::new();
    for (d, v) in naive.dates.iter().zip(&naive.values) {
        if let Some(k) = md.iter().position(|m| m == d) {
            if k < k_last && set.dates.contains(d) {
                np.push(v.clone());
                nr.push(monthly.row(k + 1));
            }
        }
    }
    let naive_ic = if np.is_empty() { None } else { Some(cross_sectional_ic(&np, &nr)?) };
    let summary = |s: &alpha::IcSummary| json!({"mean": s.mean, "std": s.std, "ratio": s.ratio, "dates": s.ics.len()});
    out.json(
        "ic_summary.json",
        &json!({
            "model": model,
            "ic": summary(&ic),
            "naive_short_term": naive_ic.as_ref().map(summary),
        }),
    )
}

fn weight_rows(strategy: &str, assets: &[String], rebalances: &[Rebalance]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in rebalances {
        let flags = r.flags.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("|");
        for (a, w) in assets.iter().zip(&r.weights) {
            rows.push(vec![r.date.to_string(), a.clone(), fmt(*w), strategy.to_string(), flags.clone()]);
        }
    }
    rows
}

const WEIGHTS_HEADER: [&str; 5] = ["date", "asset", "weight", "strategy", "flags"];

fn allocate(a: &AllocateArgs, out: &Out) -> Result<()> {
    let panel = load(&a.input)?;
    let strategies = parse_strategies(&a.strategies, panel.assets())?;
    let model: RiskModel = a.risk_model.parse()?;
    let cfg = backtest_config(&a.common, &a.strategies, model, panel.assets(), "allocate")?;
    let (_, rebalances) = allocate_latest(&panel, &strategies, &cfg)?;
    let rows = strategies
        .iter()
        .zip(&rebalances)
        .flat_map(|(s, r)| weight_rows(s.name(), panel.assets(), std::slice::from_ref(r)));
    out.csv("weights.csv", &WEIGHTS_HEADER, rows)
}

type LabelSeries = (Vec<String>, Vec<(NaiveDate, usize)>);

/// Risk and four-state labels from a regimes file, each moved to the
/// following month-end so it describes the month it was available for.
fn shifted_labels(path: &std::path::Path) -> Result<[LabelSeries; 2]> {
    let rows = read_labels(path, &["label_risk", "four_state"])?;
    let mut out: [LabelSeries; 2] = Default::default();
    for w in rows.windows(2) {
        for (col, (names, series)) in out.iter_mut().enumerate() {
            let l = &w[0].1[col];
            if l.is_empty() {
                continue;
            }
            let id = match names.iter().position(|n| n == l) {
                Some(i) => i,
                None => {
                    names.push(l.clone());
                    names.len() - 1
                }
            };
            series.push((w[1].0, id));
        }
    }
    Ok(out)
}

fn backtest(a: &BacktestArgs, out: &Out) -> Result<()> {
    let panel = load(&a.input)?;
    let strategies = parse_strategies(&a.strategies, panel.assets())?;
    let models = parse_models(&a.risk_model)?;
    let mut base = backtest_config(&a.common, &a.strategies, models[0], panel.assets(), "backtest")?;
    base.cost_bps = a.cost_bps;
    let results = comparison_grid(&panel, &strategies, &models, &base)?;
    let labels = match &a.regimes {
        Some(p) => Some(shifted_labels(p)?),
        None => None,
    };
    for (m, cell) in models.iter().zip(results.chunks(strategies.len())) {
        let dir = out.sub(m.name())?;
        write_backtest(&dir, cell, a.risk_free, labels.as_ref())?;
    }
    Ok(())
}

fn write_backtest(
    dir: &Out,
    results: &[BacktestResult],
    risk_free: f64,
    labels: Option<&[LabelSeries; 2]>,
) -> Result<()> {
    let mut weights = Vec::new();
    let mut summary = Vec::new();
    let mut breakdown = Vec::new();
    for r in results {
        dir.csv(
            &format!("wealth_{}.csv", r.strategy),
            &["date", "wealth"],
            r.dates.iter().zip(&r.wealth).map(|(d, w)| vec![d.to_string(), fmt(*w)]),
        )?;
        weights.extend(weight_rows(&r.strategy, &r.assets, &r.rebalances));
        let m = performance_metrics(r, risk_free)?;
        summary.push(vec![
            r.strategy.clone(),
            fmt(m.ann_return),
            fmt(m.ann_vol),
            fmt(m.sharpe),
            fmt(m.max_drawdown),
            fmt(m.cvar),
            fmt(m.diversification_ratio),
            fmt(m.wptd),
        ]);
        for (names, l) in labels.into_iter().flatten() {
            if l.is_empty() {
                continue;
            }
            for (id, ret) in regime_breakdown(r, l)? {
                breakdown.push(vec![r.strategy.clone(), names[id].clone(), fmt(ret)]);
            }
        }
    }
    dir.csv("weights.csv", &WEIGHTS_HEADER, weights)?;
    dir.csv(
        "summary.csv",
        &[
            "strategy",
            "ann_return",
            "ann_vol",
            "sharpe",
            "max_drawdown",
            "cvar",
            "diversification_ratio",
            "wptd",
        ],
        summary,
    )?;
    if labels.is_some() {
        dir.csv("breakdown.csv", &["strategy", "regime", "ann_return"], breakdown)?;
    }
    Ok(())
}

fn report(a: &ReportArgs, out: &Out) -> Result<()> {
    let panel = load(&a.input)?;
    let model: JointModelFit = match &a.model_json {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
                path: p.clone(),
                source,
            })?;
            let m: JointModelFit =
                serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?;
            m.validate()?;
            if m.assets() != panel.assets() {
                return Err(Error::InvalidModel("model assets differ from the panel".into()));
            }
            m
        }
        None => fit_joint_with(&panel, a.model.fit_window(), a.model.options())?.0,
    };
    let lambda = t_tail_dependence(&model.copula)?;
    let rho = stats::correlation_matrix(panel.values());
    let dep = dependence_report(&rho, &lambda);
    let assets = panel.assets();
    let mut header = vec!["asset"];
    header.extend(assets.iter().map(String::as_str));
    out.csv(
        "dependence.csv",
        &header,
        (0..assets.len()).map(|i| {
            std::iter::once(assets[i].clone())
                .chain((0..assets.len()).map(|j| fmt(dep[(i, j)])))
                .collect()
        }),
    )?;
    let (names, returns) = match &a.backtest {
        Some(dir) => {
            let (names, _, r) = read_wealth_dir(dir)?;
            (names, r)
        }
        None => {
            let sargs = StrategyArgs {
                strategy: "all".into(),
                benchmark_weights: None,
                min_days: a.min_days,
                alpha_forecast: None,
                resample: None,
            };
            let strategies = parse_strategies(&sargs, assets)?;
            let cfg = backtest_config(&a.common, &sargs, a.risk_model.parse()?, assets, "report")?;
            let res = walk_forward_many(&panel, &strategies, &cfg)?;
            (
                res.iter().map(|r| r.strategy.clone()).collect(),
                res.iter().map(|r| r.daily_returns()).collect(),
            )
        }
    };
    let t = returns.first().map_or(0, |r| r.len());
    let m = DMatrix::from_fn(t, returns.len(), |i, j| returns[j][i]);
    let c = cluster_strategies(&m)?;
    out.csv(
        "leaves.csv",
        &["id", "strategy"],
        names.iter().enumerate().map(|(i, n)| vec![i.to_string(), n.clone()]),
    )?;
    out.csv(
        "linkage.csv",
        &["step", "left", "right", "distance", "size"],
        c.merges.iter().enumerate().map(|(s, m)| {
            vec![
                s.to_string(),
                m.left.to_string(),
                m.right.to_string(),
                fmt(m.distance),
                m.size.to_string(),
            ]
        }),
    )?;
    out.csv(
        "eigen.csv",
        &["component", "ratio"],
        c.eigen_ratios.iter().enumerate().map(|(i, v)| vec![(i + 1).to_string(), fmt(*v)]),
    )
}
