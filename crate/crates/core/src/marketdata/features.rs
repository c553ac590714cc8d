use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::marketdata::prices::PriceSeries;

/// Moving-average windows, in feature order after the normalized close.
pub const MA_WINDOWS: [usize; 4] = [5, 10, 20, 30];
/// Number of features per (stock, day).
pub const N_FEATURES: usize = 1 + MA_WINDOWS.len();
/// Leading days without a full 30-day moving-average history.
pub const WARMUP_DAYS: usize = 29;
pub const MIN_SERIES_LEN: usize = WARMUP_DAYS + 2;

/// Per-stock, per-day feature values
/// `[normalized close, MA5, MA10, MA20, MA30]`, warm-up days removed.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTensor {
    values: Vec<f64>,
    symbols: Vec<String>,
    dates: Vec<NaiveDate>,
    stock_index: BTreeMap<String, usize>,
    day_index: BTreeMap<NaiveDate, usize>,
}

impl FeatureTensor {
    pub fn n_stocks(&self) -> usize {
        self.symbols.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn stock_index(&self, symbol: &str) -> Option<usize> {
        self.stock_index.get(symbol).copied()
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.day_index.get(&date).copied()
    }

    pub fn get(&self, stock: usize, day: usize, feature: usize) -> f64 {
        self.values[(stock * self.dates.len() + day) * N_FEATURES + feature]
    }

    /// All features of one stock on one day.
    pub fn features(&self, stock: usize, day: usize) -> &[f64] {
        let at = (stock * self.dates.len() + day) * N_FEATURES;
        &self.values[at..at + N_FEATURES]
    }
}

fn check_calendar(prices: &[PriceSeries]) -> Result<&[NaiveDate]> {
    let first = prices
        .first()
        .ok_or_else(|| Error::Data("no price series".into()))?;
    if let Some(s) = prices.iter().find(|s| s.dates() != first.dates()) {
        return Err(Error::Data(format!(
            "{} does not share the calendar of {}; align calendars first",
            s.symbol(),
            first.symbol()
        )));
    }
    Ok(first.dates())
}

/// Normalized close and trailing moving averages over normalized closes.
pub fn build_features(prices: &[PriceSeries]) -> Result<FeatureTensor> {
    let calendar = check_calendar(prices)?;
    let total = calendar.len();
    if total < MIN_SERIES_LEN {
        return Err(Error::Data(format!(
            "series have {total} days; at least {MIN_SERIES_LEN} are needed"
        )));
    }
    let usable = total - WARMUP_DAYS;
    let mut values = Vec::with_capacity(prices.len() * usable * N_FEATURES);

    for s in prices {
        let max = s.closes().iter().copied().fold(f64::MIN, f64::max);
        let norm: Vec<f64> = s.closes().iter().map(|p| p / max).collect();
        let mut sums = [0.0f64; MA_WINDOWS.len()];
        for (t, &x) in norm.iter().enumerate() {
            for (sum, &w) in sums.iter_mut().zip(&MA_WINDOWS) {
                *sum += x;
                if t >= w {
                    *sum -= norm[t - w];
                }
            }
            if t >= WARMUP_DAYS {
                values.push(x);
                values.extend(sums.iter().zip(&MA_WINDOWS).map(|(s, &w)| s / w as f64));
            }
        }
    }

    let dates = calendar[WARMUP_DAYS..].to_vec();
    let symbols: Vec<String> = prices.iter().map(|s| s.symbol().to_owned()).collect();
    Ok(FeatureTensor {
        values,
        stock_index: symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect(),
        day_index: dates.iter().enumerate().map(|(i, d)| (*d, i)).collect(),
        symbols,
        dates,
    })
}

/// 1-day return ratios `(p[t+1] − p[t]) / p[t]`, indexed by stock and the
/// day `t` on which the position is opened.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnMatrix {
    values: Vec<f64>,
    n_stocks: usize,
    dates: Vec<NaiveDate>,
}

impl ReturnMatrix {
    pub fn n_stocks(&self) -> usize {
        self.n_stocks
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    /// Day `t` of each column; the label realizes on the next trading day.
    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn get(&self, stock: usize, day: usize) -> f64 {
        self.values[stock * self.dates.len() + day]
    }

    pub fn stock(&self, stock: usize) -> &[f64] {
        let n = self.dates.len();
        &self.values[stock * n..(stock + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn build_labels(prices: &[PriceSeries]) -> Result<ReturnMatrix> {
    let calendar = check_calendar(prices)?;
    if calendar.len() < 2 {
        return Err(Error::Data("need at least two days for a return".into()));
    }
    let values: Vec<f64> = prices
        .iter()
        .flat_map(|s| s.closes().windows(2).map(|w| (w[1] - w[0]) / w[0]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "build_labels" });
    }
    Ok(ReturnMatrix {
        values,
        n_stocks: prices.len(),
        dates: calendar[..calendar.len() - 1].to_vec(),
    })
}
