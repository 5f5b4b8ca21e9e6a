use chrono::{Datelike, NaiveDate};
use dynalloc::backtest::{walk_forward, BacktestConfig, RiskModel, Strategy};
use dynalloc::data::ReturnPanel;
use dynalloc::{rng, stats};
use rand_distr::{Distribution, StandardNormal};

const EPISODE: (usize, usize) = (1300, 1480);

fn business_days(n: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if d.weekday().number_from_monday() <= 5 {
            out.push(d);
        }
        d = d.succ_opt().unwrap();
    }
    out
}

fn episode_panel(seed: u64) -> ReturnPanel {
    let n = 1520;
    let mut r = rng::stream(seed, 0);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            let shock = if (EPISODE.0..EPISODE.1).contains(&t) { 0.035 } else { 0.007 };
            let c: f64 = StandardNormal.sample(&mut r);
            let vols = [shock, 0.008, 0.005];
            vols.iter()
                .map(|v| {
                    let e: f64 = StandardNormal.sample(&mut r);
                    v * (0.5 * c + 0.85 * e)
                })
                .collect()
        })
        .collect();
    ReturnPanel::from_rows(business_days(n), vec!["eq".into(), "cr".into(), "bd".into()], &rows).unwrap()
}

#[test]
fn garch_model_cuts_episode_volatility() {
    let panel = episode_panel(11);
    let start = panel.dates()[EPISODE.0 + 21];
    let end = panel.dates()[EPISODE.1 - 1];
    let vol = |model| {
        let cfg = BacktestConfig {
            risk_model: model,
            min_days: Some(1260),
            n_paths: 2000,
            seed: 3,
            ..BacktestConfig::default()
        };
        let res = walk_forward(&panel, &Strategy::MinVariance, &cfg).unwrap();
        let r: Vec<f64> = res
            .daily_returns()
            .into_iter()
            .zip(&res.dates[1..])
            .filter(|(_, d)| **d >= start && **d <= end)
            .map(|(x, _)| x)
            .collect();
        stats::std_dev(&r)
    };
    let garch = vol(RiskModel::GarchDccCopula);
    let rolling = vol(RiskModel::Rolling1y);
    println!("episode vol garch {garch:.5} rolling {rolling:.5}");
    assert!(garch < rolling);
}
