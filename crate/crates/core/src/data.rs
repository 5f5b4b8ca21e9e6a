//! Daily return panels: CSV ingestion, validation, composites and the
//! month-end calendar.

use std::collections::HashSet;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Date-indexed matrix of daily simple returns (rows = dates, columns = assets).
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    values: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Prices,
    Returns,
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != dates.len() || values.ncols() != assets.len() {
            return Err(Error::LengthMismatch(format!(
                "{}x{} values for {} dates and {} assets",
                values.nrows(),
                values.ncols(),
                dates.len(),
                assets.len()
            )));
        }
        let mut seen = HashSet::new();
        for a in &assets {
            if !seen.insert(a.as_str()) {
                return Err(Error::DuplicateAsset(a.clone()));
            }
        }
        for (row, w) in dates.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::NonMonotonicDates { row: row + 1 });
            }
        }
        for r in 0..values.nrows() {
            for c in 0..values.ncols() {
                let v = values[(r, c)];
                if !v.is_finite() {
                    return Err(Error::MissingValue {
                        row: r,
                        column: assets[c].clone(),
                    });
                }
                if v.abs() >= 1.0 {
                    return Err(Error::ReturnOutOfBounds {
                        row: r,
                        column: assets[c].clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            dates,
            assets,
            values,
        })
    }

    /// Build from a row-major list of return vectors.
    pub fn from_rows(dates: Vec<NaiveDate>, assets: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = assets.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::LengthMismatch("ragged rows".into()));
        }
        let values = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        Self::new(dates, assets, values)
    }

    /// Convert a price panel to simple returns `p_t / p_{t-1} - 1`; the first date is dropped.
    pub fn from_prices(dates: Vec<NaiveDate>, assets: Vec<String>, prices: &DMatrix<f64>) -> Result<Self> {
        for r in 0..prices.nrows() {
            for c in 0..prices.ncols() {
                let p = prices[(r, c)];
                if !p.is_finite() {
                    return Err(Error::MissingValue {
                        row: r,
                        column: assets[c].clone(),
                    });
                }
                if p <= 0.0 {
                    return Err(Error::NonPositivePrice {
                        row: r,
                        column: assets[c].clone(),
                        value: p,
                    });
                }
            }
        }
        if prices.nrows() < 2 {
            return Err(Error::EmptyPanel);
        }
        let t = prices.nrows() - 1;
        let values = DMatrix::from_fn(t, prices.ncols(), |i, j| prices[(i + 1, j)] / prices[(i, j)] - 1.0);
        Self::new(dates[1..].to_vec(), assets, values)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().cloned().collect()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().cloned().collect()
    }

    pub fn asset_index(&self, name: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == name)
    }

    /// Rows `start..end` as a new panel.
    pub fn slice(&self, start: usize, end: usize) -> ReturnPanel {
        ReturnPanel {
            dates: self.dates[start..end].to_vec(),
            assets: self.assets.clone(),
            values: self.values.rows(start, end - start).into_owned(),
        }
    }

    /// Every panel value multiplied by `factor`. Only valid while the
    /// scaled values stay inside the daily sanity bound.
    pub fn scaled(&self, factor: f64) -> Result<ReturnPanel> {
        ReturnPanel::new(self.dates.clone(), self.assets.clone(), &self.values * factor)
    }

    /// Keep only the dates present in both panels and concatenate the columns.
    pub fn inner_join(&self, other: &ReturnPanel) -> Result<ReturnPanel> {
        let mut dates = Vec::new();
        let mut rows = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.len() && j < other.len() {
            match self.dates[i].cmp(&other.dates[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    dates.push(self.dates[i]);
                    let mut r = self.row(i);
                    r.extend(other.row(j));
                    rows.push(r);
                    i += 1;
                    j += 1;
                }
            }
        }
        let mut assets = self.assets.clone();
        assets.extend(other.assets.iter().cloned());
        ReturnPanel::from_rows(dates, assets, &rows)
    }

    /// Cumulative wealth per asset starting from 1.0 before the first return.
    pub fn cumulative_wealth(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.len(), self.n_assets());
        for j in 0..self.n_assets() {
            let mut w = 1.0;
            for i in 0..self.len() {
                w *= 1.0 + self.values[(i, j)];
                out[(i, j)] = w;
            }
        }
        out
    }
}

/// Fixed-weight composite rebalanced daily.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeSpec {
    pub name: String,
    pub weights: Vec<(String, f64)>,
}

impl CompositeSpec {
    pub fn new(name: impl Into<String>, weights: Vec<(String, f64)>) -> Result<Self> {
        let sum: f64 = weights.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::WeightSumError(sum));
        }
        if let Some((asset, w)) = weights.iter().find(|(_, w)| *w < 0.0) {
            return Err(Error::NegativeWeight {
                asset: asset.clone(),
                weight: *w,
            });
        }
        Ok(Self {
            name: name.into(),
            weights,
        })
    }
}

/// Month-end markers over a set of trading dates.
#[derive(Debug, Clone, PartialEq)]
pub struct Calendar {
    pub dates: Vec<NaiveDate>,
    /// Indices into `dates` of the last trading date of each month.
    pub month_end_idx: Vec<usize>,
}

impl Calendar {
    pub fn new(dates: &[NaiveDate]) -> Self {
        let mut idx = Vec::new();
        for i in 0..dates.len() {
            let last = i + 1 == dates.len()
                || (dates[i + 1].year(), dates[i + 1].month()) != (dates[i].year(), dates[i].month());
            if last {
                idx.push(i);
            }
        }
        Self {
            dates: dates.to_vec(),
            month_end_idx: idx,
        }
    }

    pub fn month_ends(&self) -> Vec<NaiveDate> {
        self.month_end_idx.iter().map(|&i| self.dates[i]).collect()
    }
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    let s = cell.trim();
    let missing = || Error::MissingValue {
        row,
        column: column.to_string(),
    };
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        return Err(missing());
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Parse(format!("row {row}, column {column}: {s:?} is not a number")))?;
    if !v.is_finite() {
        return Err(missing());
    }
    Ok(v)
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::Parse(format!("bad date {s:?}: {e}")))
}

/// Read a `date,<asset1>,<asset2>,...` CSV from any reader.
pub fn read_panel<R: std::io::Read>(reader: R, kind: SeriesKind) -> Result<ReturnPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(Error::Parse("expected a date column and at least one asset".into()));
    }
    let assets: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    let mut dates = Vec::new();
    let mut cells = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(Error::Parse(format!("row {row} has {} fields", rec.len())));
        }
        dates.push(parse_date(&rec[0])?);
        for (j, asset) in assets.iter().enumerate() {
            cells.push(parse_cell(&rec[j + 1], row, asset)?);
        }
    }
    if dates.is_empty() {
        return Err(Error::EmptyPanel);
    }
    for (row, w) in dates.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::NonMonotonicDates { row: row + 1 });
        }
    }
    let values = DMatrix::from_row_slice(dates.len(), assets.len(), &cells);
    match kind {
        SeriesKind::Returns => ReturnPanel::new(dates, assets, values),
        SeriesKind::Prices => ReturnPanel::from_prices(dates, assets, &values),
    }
}

pub fn load_panel(path: &Path, kind: SeriesKind) -> Result<ReturnPanel> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_panel(std::io::BufReader::new(file), kind)
}

pub fn write_panel<W: std::io::Write>(panel: &ReturnPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(panel.assets.iter().cloned());
    w.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    for i in 0..panel.len() {
        let mut rec = vec![panel.dates[i].to_string()];
        rec.extend(panel.values.row(i).iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

/// Daily-rebalanced fixed-weight composite: `sum_i w_i r_{i,t}` each day.
pub fn composite_index(panel: &ReturnPanel, spec: &CompositeSpec) -> Result<ReturnPanel> {
    let sum: f64 = spec.weights.iter().map(|(_, w)| w).sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::WeightSumError(sum));
    }
    let mut cols = Vec::with_capacity(spec.weights.len());
    for (asset, w) in &spec.weights {
        let j = panel
            .asset_index(asset)
            .ok_or_else(|| Error::UnknownAsset(asset.clone()))?;
        cols.push((j, *w));
    }
    let values = DMatrix::from_fn(panel.len(), 1, |i, _| {
        cols.iter().map(|&(j, w)| w * panel.values[(i, j)]).sum()
    });
    ReturnPanel::new(panel.dates.clone(), vec![spec.name.clone()], values)
}

pub fn month_ends(panel: &ReturnPanel) -> Result<Vec<NaiveDate>> {
    if panel.is_empty() {
        return Err(Error::EmptyPanel);
    }
    Ok(Calendar::new(&panel.dates).month_ends())
}

/// Compounded calendar-month returns, dated at each month's last trading day.
pub fn monthly_returns(panel: &ReturnPanel) -> Result<ReturnPanel> {
    if panel.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let cal = Calendar::new(&panel.dates);
    let n = panel.n_assets();
    let mut values = DMatrix::zeros(cal.month_end_idx.len(), n);
    let mut start = 0;
    for (k, &end) in cal.month_end_idx.iter().enumerate() {
        for j in 0..n {
            let g: f64 = (start..=end).map(|i| 1.0 + panel.values[(i, j)]).product();
            values[(k, j)] = g - 1.0;
        }
        start = end + 1;
    }
    ReturnPanel::new(cal.month_ends(), panel.assets.clone(), values)
}
