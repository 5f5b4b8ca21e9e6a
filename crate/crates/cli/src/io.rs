use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use dynalloc::alpha::ForecastSet;
use dynalloc::data::parse_date;
use dynalloc::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse(format!("{}: {e}", path.display()))
}

pub struct Out {
    dir: PathBuf,
}

impl Out {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn sub(&self, name: &str) -> Result<Out> {
        Out::new(&self.dir.join(name))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn text(&self, name: &str, content: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, content).map_err(io_err(&p))
    }

    pub fn json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
        self.text(name, &(s + "\n"))
    }

    pub fn csv<I>(&self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let p = self.path(name);
        let file = File::create(&p).map_err(io_err(&p))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header).map_err(csv_err(&p))?;
        for row in rows {
            w.write_record(&row).map_err(csv_err(&p))?;
        }
        w.flush().map_err(io_err(&p))
    }
}

pub fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Header and string rows of a CSV file.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(csv_err(path))?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(csv_err(path))?.iter().map(|c| c.trim().to_string()).collect());
    }
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse(format!("{}: missing column {name}", path.display())))
}

fn number(s: &str, path: &Path) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("{}: bad number {s:?}", path.display())))
}

/// First value column of a `date,<value>` file.
pub fn read_series(path: &Path) -> Result<Vec<(NaiveDate, f64)>> {
    let (header, rows) = read_table(path)?;
    if header.len() < 2 {
        return Err(Error::Parse(format!("{}: expected date,value", path.display())));
    }
    rows.iter()
        .map(|r| Ok((parse_date(&r[0])?, number(&r[1], path)?)))
        .collect()
}

/// Named numeric columns keyed by date; empty cells become `None`.
pub fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<(NaiveDate, Vec<Option<f64>>)>> {
    let (header, rows) = read_table(path)?;
    let date = column(&header, "date", path)?;
    let idx: Vec<usize> = names.iter().map(|n| column(&header, n, path)).collect::<Result<_>>()?;
    rows.iter()
        .map(|r| {
            let vals = idx
                .iter()
                .map(|&j| if r[j].is_empty() { Ok(None) } else { number(&r[j], path).map(Some) })
                .collect::<Result<_>>()?;
            Ok((parse_date(&r[date])?, vals))
        })
        .collect()
}

/// Named string columns keyed by date.
pub fn read_labels(path: &Path, names: &[&str]) -> Result<Vec<(NaiveDate, Vec<String>)>> {
    let (header, rows) = read_table(path)?;
    let date = column(&header, "date", path)?;
    let idx: Vec<usize> = names.iter().map(|n| column(&header, n, path)).collect::<Result<_>>()?;
    rows.iter()
        .map(|r| Ok((parse_date(&r[date])?, idx.iter().map(|&j| r[j].clone()).collect())))
        .collect()
}

/// Long-format `date,asset,prediction,look_ahead_flag` file.
pub fn read_forecast_set(path: &Path, assets: &[String]) -> Result<ForecastSet> {
    let (header, rows) = read_table(path)?;
    let (d, a, p, f) = (
        column(&header, "date", path)?,
        column(&header, "asset", path)?,
        column(&header, "prediction", path)?,
        column(&header, "look_ahead_flag", path)?,
    );
    let mut by_date: Vec<(NaiveDate, HashMap<String, f64>)> = Vec::new();
    let mut look_ahead = false;
    for r in &rows {
        let date = parse_date(&r[d])?;
        look_ahead |= r[f] == "true" || r[f] == "1";
        if by_date.last().map(|(x, _)| *x) != Some(date) {
            if by_date.last().is_some_and(|(x, _)| *x > date) {
                return Err(Error::NonMonotonicDates { row: by_date.len() });
            }
            by_date.push((date, HashMap::new()));
        }
        by_date.last_mut().unwrap().1.insert(r[a].clone(), number(&r[p], path)?);
    }
    let mut values = Vec::with_capacity(by_date.len());
    for (date, m) in &by_date {
        values.push(
            assets
                .iter()
                .map(|x| {
                    m.get(x)
                        .copied()
                        .ok_or_else(|| Error::Parse(format!("{}: no prediction for {x} on {date}", path.display())))
                })
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(ForecastSet {
        dates: by_date.into_iter().map(|(d, _)| d).collect(),
        assets: assets.to_vec(),
        values,
        look_ahead,
    })
}

/// Daily returns from every `wealth_<name>.csv` in a directory, sorted by
/// name and restricted to common dates.
pub fn read_wealth_dir(dir: &Path) -> Result<(Vec<String>, Vec<NaiveDate>, Vec<Vec<f64>>)> {
    let mut files: Vec<(String, PathBuf)> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            let stem = name.strip_prefix("wealth_")?.strip_suffix(".csv")?.to_string();
            Some((stem, e.path()))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Parse(format!("{}: no wealth_*.csv files", dir.display())));
    }
    let mut series = Vec::new();
    for (_, p) in &files {
        series.push(read_series(p)?);
    }
    let dates: Vec<NaiveDate> = series[0]
        .iter()
        .map(|(d, _)| *d)
        .filter(|d| series.iter().all(|s| s.binary_search_by(|x| x.0.cmp(d)).is_ok()))
        .collect();
    let returns = series
        .iter()
        .map(|s| {
            let w: Vec<f64> = dates
                .iter()
                .map(|d| s[s.binary_search_by(|x| x.0.cmp(d)).unwrap()].1)
                .collect();
            w.windows(2).map(|p| p[1] / p[0] - 1.0).collect()
        })
        .collect();
    Ok((files.into_iter().map(|(n, _)| n).collect(), dates, returns))
}
