use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Daily closing prices of one symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceSeries {
    symbol: String,
    dates: Vec<NaiveDate>,
    closes: Vec<f64>,
}

impl PriceSeries {
    pub fn new(symbol: impl Into<String>, dates: Vec<NaiveDate>, closes: Vec<f64>) -> Result<Self> {
        let symbol = symbol.into();
        if dates.len() != closes.len() {
            return Err(Error::Data(format!(
                "{symbol}: {} dates but {} closes",
                dates.len(),
                closes.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!(
                "{symbol}: dates not strictly increasing at {}",
                w[1]
            )));
        }
        if let Some(p) = closes.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Data(format!("{symbol}: non-positive price {p}")));
        }
        Ok(Self {
            symbol,
            dates,
            closes,
        })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn closes(&self) -> &[f64] {
        &self.closes
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }

    /// Multiplies every close by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.symbol.clone(),
            self.dates.clone(),
            self.closes.iter().map(|p| p * factor).collect(),
        )
    }

    fn restrict_to(&self, calendar: &BTreeSet<NaiveDate>) -> Self {
        let (dates, closes) = self
            .dates
            .iter()
            .zip(&self.closes)
            .filter(|(d, _)| calendar.contains(d))
            .map(|(d, c)| (*d, *c))
            .unzip();
        Self {
            symbol: self.symbol.clone(),
            dates,
            closes,
        }
    }
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, DATE_FORMAT).ok()
}

/// Parses one `date,close` CSV document.
pub fn parse_price_csv(symbol: &str, text: &str, path: &Path) -> Result<PriceSeries> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim().eq_ignore_ascii_case("date,close") => {}
        Some((_, h)) => return Err(err(1, format!("expected header `date,close`, found `{}`", h.trim()))),
        None => return Err(err(1, "empty file".into())),
    }

    let mut rows: Vec<(NaiveDate, f64, usize)> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(d), Some(c), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(err(line_no, format!("malformed row `{line}`")));
        };
        let date = parse_date(d.trim()).ok_or_else(|| err(line_no, format!("bad date `{d}`")))?;
        let close: f64 = c
            .trim()
            .parse()
            .map_err(|_| err(line_no, format!("bad close `{c}`")))?;
        if !close.is_finite() || close <= 0.0 {
            return Err(err(line_no, format!("non-positive price {close}")));
        }
        rows.push((date, close, line_no));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(err(w[1].2, format!("duplicate date {}", w[1].0)));
    }
    let (dates, closes) = rows.into_iter().map(|(d, c, _)| (d, c)).unzip();
    PriceSeries::new(symbol, dates, closes)
}

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every `<SYMBOL>.csv` in `dir`, ordered by symbol.
pub fn load_prices(dir: &Path) -> Result<Vec<PriceSeries>> {
    let files = csv_files(dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("no price CSV files in {}", dir.display())));
    }
    files
        .par_iter()
        .map(|path| {
            let symbol = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Data(format!("bad file name {}", path.display())))?;
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_price_csv(symbol, &text, path)
        })
        .collect()
}

pub fn price_csv(series: &PriceSeries) -> String {
    let mut out = String::from("date,close\n");
    for (d, c) in series.dates.iter().zip(&series.closes) {
        out.push_str(&format!("{},{}\n", d.format(DATE_FORMAT), c));
    }
    out
}

pub fn write_prices(dir: &Path, prices: &[PriceSeries]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in prices {
        let path = dir.join(format!("{}.csv", s.symbol));
        fs::write(&path, price_csv(s)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Restricts every series to the dates all of them share.
pub fn align_calendar(prices: &[PriceSeries]) -> Result<(Vec<PriceSeries>, Vec<NaiveDate>)> {
    let Some(first) = prices.first() else {
        return Err(Error::Data("no price series to align".into()));
    };
    let mut common: BTreeSet<NaiveDate> = first.dates.iter().copied().collect();
    for s in &prices[1..] {
        let dates: BTreeSet<NaiveDate> = s.dates.iter().copied().collect();
        common = common.intersection(&dates).copied().collect();
    }
    if common.is_empty() {
        return Err(Error::Data("price series share no trading days".into()));
    }
    let aligned = prices.iter().map(|s| s.restrict_to(&common)).collect();
    Ok((aligned, common.into_iter().collect()))
}
