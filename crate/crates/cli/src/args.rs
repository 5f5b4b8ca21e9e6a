use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use dynalloc::alpha::OLS_WINDOW;
use dynalloc::dependence::CorrelationMode;
use dynalloc::regime::DEFAULT_MIN_WINDOW;
use dynalloc::scenario::{FitWindow, JointFitOptions, DEFAULT_HORIZON, DEFAULT_MIN_DAYS, DEFAULT_PATHS};
use dynalloc::{Error, Result};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "dynalloc",
    version,
    about = "Risk forecasting, regime detection and walk-forward allocation on daily return panels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Fit the joint ARMA-GARCH / DCC / t-copula model and write it as JSON
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Monthly Monte Carlo forecasts of portfolio CVaR, vol and correlation
    #[command(args_override_self = true)]
    Forecast(ForecastArgs),
    /// Regime probabilities for the forecast risk and correlation series
    #[command(args_override_self = true)]
    Regimes(RegimesArgs),
    /// Rolling VRP return forecasts and their information coefficients
    #[command(args_override_self = true)]
    Alpha(AlphaArgs),
    /// Current weights for one or more strategies
    #[command(args_override_self = true)]
    Allocate(AllocateArgs),
    /// Walk-forward monthly backtest with metrics and regime breakdowns
    #[command(args_override_self = true)]
    Backtest(BacktestArgs),
    /// Dependence matrix and strategy clustering
    #[command(args_override_self = true)]
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Forecast(_) => "forecast",
            Command::Regimes(_) => "regimes",
            Command::Alpha(_) => "alpha",
            Command::Allocate(_) => "allocate",
            Command::Backtest(_) => "backtest",
            Command::Report(_) => "report",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Fit(a) => &a.common,
            Command::Forecast(a) => &a.common,
            Command::Regimes(a) => &a.common,
            Command::Alpha(a) => &a.common,
            Command::Allocate(a) => &a.common,
            Command::Backtest(a) => &a.common,
            Command::Report(a) => &a.common,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Plain-text key=value file; command-line flags take precedence
    #[arg(long, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Master seed for every random draw; required by stochastic commands [default: none]
    #[arg(long)]
    pub seed: Option<u64>,
    /// CVaR confidence level
    #[arg(long, default_value_t = 0.95)]
    pub alpha: f64,
    /// Forecast horizon in trading days
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    pub horizon: usize,
    /// Monte Carlo paths per simulation
    #[arg(long, default_value_t = DEFAULT_PATHS)]
    pub paths: usize,
    /// Worker thread cap; outputs do not depend on it [default: all cores]
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
}

impl Common {
    pub fn require_seed(&self, command: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config(format!("--seed is required for {command}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Returns,
    Prices,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Input {
    /// Daily panel CSV with header date,<asset>,...
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Whether the panel holds simple returns or prices
    #[arg(long, value_enum, default_value_t = Kind::Returns)]
    pub kind: Kind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Correlation {
    Dcc,
    Ccc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    Expanding,
    Rolling,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    /// GJR leverage term in the marginal variance equations
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    pub gjr: bool,
    /// Correlation dynamics
    #[arg(long, value_enum, default_value_t = Correlation::Dcc)]
    pub correlation: Correlation,
    /// Estimation window scheme
    #[arg(long, value_enum, default_value_t = WindowKind::Expanding)]
    pub window: WindowKind,
    /// Minimum (expanding) or fixed (rolling) window in trading days
    #[arg(long, default_value_t = DEFAULT_MIN_DAYS)]
    pub window_days: usize,
}

impl ModelArgs {
    pub fn fit_window(&self) -> FitWindow {
        match self.window {
            WindowKind::Expanding => FitWindow::Expanding(self.window_days),
            WindowKind::Rolling => FitWindow::Rolling(self.window_days),
        }
    }

    pub fn options(&self) -> JointFitOptions {
        JointFitOptions {
            correlation: match self.correlation {
                Correlation::Dcc => CorrelationMode::Dcc,
                Correlation::Ccc => CorrelationMode::Ccc,
            },
            gjr: self.gjr,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PortfolioArgs {
    /// Portfolio weights, either asset=weight pairs or a list in column order [default: equal weights]
    #[arg(long, value_name = "LIST")]
    pub weights: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: Input,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ForecastArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: Input,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub portfolio: PortfolioArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    Oos,
    Predicted,
    Filtered,
    Smoothed,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct VrpArgs {
    /// Implied volatility CSV with header date,<value> in annualized vol points
    #[arg(long, value_name = "PATH")]
    pub implied_vol: PathBuf,
    /// Asset whose daily returns give the realized leg of the VRP [default: first column]
    #[arg(long, value_name = "NAME")]
    pub vrp_asset: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct RegimesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: Input,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub portfolio: PortfolioArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub vrp: VrpArgs,
    /// Forecast CSV from a previous `forecast` run; computed when absent
    #[arg(long, value_name = "PATH")]
    pub forecast: Option<PathBuf>,
    /// Months of history before the first out-of-sample probability
    #[arg(long, default_value_t = DEFAULT_MIN_WINDOW)]
    pub min_window: usize,
    /// Probability at or above which a month is labeled high
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Probability kind the labels are derived from
    #[arg(long, value_enum, default_value_t = LabelSource::Oos)]
    pub label_source: LabelSource,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AlphaArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: Input,
    #[command(flatten)]
    #[serde(flatten)]
    pub vrp: VrpArgs,
    /// Regimes CSV; adds the high-risk indicator as a regressor
    #[arg(long, value_name = "PATH")]
    pub regimes: Option<PathBuf>,
    /// Rolling regression window in months
    #[arg(long, default_value_t = OLS_WINDOW)]
    pub ols_window: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct StrategyArgs {
    /// Comma-separated strategy names or "all"
    #[arg(long, default_value = "all")]
    pub strategy: String,
    /// Fixed weights of the benchmark strategy in column order; "all" includes the benchmark only when these are given or the panel has four assets [default: 0.3,0.3,0.2,0.2]
    #[arg(long, value_name = "LIST")]
    pub benchmark_weights: Option<String>,
    /// Minimum history before the first allocation in trading days [default: 252 for rolling_1y, 1260 otherwise]
    #[arg(long)]
    pub min_days: Option<usize>,
    /// Alpha forecast CSV (date,asset,prediction,look_ahead_flag) used as expected returns [default: scenario means]
    #[arg(long, value_name = "PATH")]
    pub alpha_forecast: Option<PathBuf>,
    /// Average scenario-based allocations over this many simulations (garch_dcc_copula only) [default: off]
    #[arg(long)]
    pub resample: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AllocateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: Input,
    #[command(flatten)]
    #[serde(flatten)]
    pub strategies: StrategyArgs,
    /// Risk model: rolling_1y, expanding_5y or garch_dcc_copula
    #[arg(long, default_value = "rolling_1y")]
    pub risk_model: String,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct BacktestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: Input,
    #[command(flatten)]
    #[serde(flatten)]
    pub strategies: StrategyArgs,
    /// Comma-separated risk models or "all"
    #[arg(long, default_value = "rolling_1y")]
    pub risk_model: String,
    /// Flat transaction cost in basis points of turnover
    #[arg(long, default_value_t = 0.0)]
    pub cost_bps: f64,
    /// Annual risk-free rate for Sharpe ratios
    #[arg(long, default_value_t = 0.0)]
    pub risk_free: f64,
    /// Regimes CSV for the per-regime breakdown
    #[arg(long, value_name = "PATH")]
    pub regimes: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: Input,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Joint model JSON from `fit`; fitted when absent
    #[arg(long = "model", value_name = "PATH")]
    #[serde(rename = "model")]
    pub model_json: Option<PathBuf>,
    /// Directory of wealth_<strategy>.csv files from `backtest`; strategies are run when absent
    #[arg(long, value_name = "DIR")]
    pub backtest: Option<PathBuf>,
    /// Risk model for strategies run by the report
    #[arg(long, default_value = "rolling_1y")]
    pub risk_model: String,
    /// Minimum history for strategies run by the report [default: the risk model's]
    #[arg(long)]
    pub min_days: Option<usize>,
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// `key=value` lines; blank lines and `#` comments are skipped. Keys may use
/// underscores or dashes.
pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
        let key = k.trim().replace('_', "-");
        if matches!(key.as_str(), "config" | "command") {
            continue;
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

/// Config values become flags placed before the user's own, so later
/// (command-line) occurrences win.
pub fn expand_args(argv: Vec<String>) -> Result<Vec<String>> {
    if argv.len() < 2 || argv[1].starts_with('-') {
        return Ok(argv);
    }
    let Some(path) = config_path(&argv[2..]) else {
        return Ok(argv);
    };
    let cfg = read_config(Path::new(&path))?;
    let mut out = argv[..2].to_vec();
    for (k, v) in cfg {
        out.push(format!("--{k}"));
        out.push(v);
    }
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

/// Resolved settings as `key=value` lines, excluding those that cannot
/// affect outputs (thread cap, output directory).
pub fn echo_config(command: &Command) -> String {
    let value = serde_json::to_value(command).expect("arguments serialize");
    let mut lines = vec![format!("command={}", command.name())];
    if let Some(serde_json::Value::Object(map)) = value.as_object().and_then(|m| m.values().next()) {
        let sorted: BTreeMap<_, _> = map.iter().collect();
        for (k, v) in sorted {
            let text = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            lines.push(format!("{}={}", k.replace('_', "-"), text));
        }
    }
    lines.join("\n") + "\n"
}
