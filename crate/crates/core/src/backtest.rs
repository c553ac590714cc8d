//! Daily buy-hold-sell simulation and ranking metrics.
//!
//! Every test day the strategy buys the top-k stocks by predicted score at
//! the close, splits a fixed budget equally among them and sells at the
//! next close. Day returns are summed without compounding.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::marketdata::Dataset;
use crate::ranker::RankModel;

/// Stock indices by descending score, ties by ascending index.
pub fn rank_day(scores: &[f64]) -> Result<Vec<usize>> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op: "rank_day" });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    Ok(order)
}

/// 1-based position of `stock` in the descending ordering of `truth`.
pub fn true_rank(stock: usize, truth: &[f64]) -> usize {
    let r = truth[stock];
    1 + truth
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > r || (v == r && j < stock))
        .count()
}

fn check_grid(op: &'static str, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(op, &[a.len()], &[b.len()]));
    }
    for (x, y) in a.iter().zip(b) {
        if x.len() != y.len() {
            return Err(Error::shape(op, &[a.len(), x.len()], &[b.len(), y.len()]));
        }
    }
    if a.iter().all(Vec::is_empty) {
        return Err(Error::InvalidArgument(format!("{op}: no observations")));
    }
    Ok(())
}

/// Mean squared error over the full day × stock grid.
pub fn metric_mse(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64> {
    check_grid("metric_mse", predictions, truths)?;
    let (mut total, mut count) = (0.0, 0usize);
    for (p, t) in predictions.iter().zip(truths) {
        for (a, b) in p.iter().zip(t) {
            total += (a - b) * (a - b);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean over days of `1 / true_rank(selected)`.
pub fn metric_mrr(selected: &[usize], truths: &[Vec<f64>]) -> Result<f64> {
    if selected.len() != truths.len() {
        return Err(Error::shape("metric_mrr", &[selected.len()], &[truths.len()]));
    }
    if selected.is_empty() {
        return Err(Error::InvalidArgument("metric_mrr: no days".into()));
    }
    let mut total = 0.0;
    for (&s, t) in selected.iter().zip(truths) {
        if s >= t.len() {
            return Err(Error::InvalidArgument(format!("selected stock {s} outside {} stocks", t.len())));
        }
        total += 1.0 / true_rank(s, t) as f64;
    }
    Ok(total / selected.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TradeDay {
    /// Dataset day index on which positions are opened.
    pub day: usize,
    pub date: Option<NaiveDate>,
    /// All stocks by descending predicted score.
    pub ranking: Vec<usize>,
    /// The first `min(k, N)` entries of `ranking`.
    pub selected: Vec<usize>,
    /// Realized next-day return of every stock.
    pub returns: Vec<f64>,
    /// Mean realized return of the selected stocks.
    pub day_return: f64,
    pub cumulative_irr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TradeLedger {
    pub k: usize,
    pub days: Vec<TradeDay>,
}

impl TradeLedger {
    pub fn irr(&self) -> f64 {
        self.days.last().map_or(0.0, |d| d.cumulative_irr)
    }

    fn day_label(d: &TradeDay) -> String {
        d.date.map_or_else(|| d.day.to_string(), |date| date.format("%Y-%m-%d").to_string())
    }

    /// `day,selected_symbols,day_return,cumulative_irr`, symbols joined by `;`.
    pub fn to_csv(&self, symbols: &[String]) -> String {
        let mut out = String::from("day,selected_symbols,day_return,cumulative_irr\n");
        for d in &self.days {
            let names: Vec<&str> = d.selected.iter().map(|&i| symbols[i].as_str()).collect();
            let _ = writeln!(out, "{},{},{},{}", Self::day_label(d), names.join(";"), d.day_return, d.cumulative_irr);
        }
        out
    }

    /// `day,cumulative_irr`, one row per day, for plotting.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("day,cumulative_irr\n");
        for d in &self.days {
            let _ = writeln!(out, "{},{}", Self::day_label(d), d.cumulative_irr);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub mse: f64,
    pub mrr: f64,
    pub irr: f64,
}

/// Replays a score matrix against realized returns (both `days × N`).
/// MRR always scores the top-1 pick; IRR follows the top-`k` strategy.
pub fn simulate(scores: &[Vec<f64>], truths: &[Vec<f64>], k: usize) -> Result<(TradeLedger, MetricsReport)> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    check_grid("simulate", scores, truths)?;
    let mut days = Vec::with_capacity(scores.len());
    let mut top1 = Vec::with_capacity(scores.len());
    let mut irr = 0.0;
    for (t, (s, r)) in scores.iter().zip(truths).enumerate() {
        let ranking = rank_day(s)?;
        let selected = ranking[..k.min(ranking.len())].to_vec();
        let day_return = selected.iter().map(|&i| r[i]).sum::<f64>() / selected.len() as f64;
        irr += day_return;
        top1.push(ranking[0]);
        days.push(TradeDay {
            day: t,
            date: None,
            ranking,
            selected,
            returns: r.clone(),
            day_return,
            cumulative_irr: irr,
        });
    }
    let report = MetricsReport {
        mse: metric_mse(scores, truths)?,
        mrr: metric_mrr(&top1, truths)?,
        irr,
    };
    if !(report.mse.is_finite() && report.mrr.is_finite() && report.irr.is_finite()) {
        return Err(Error::NonFinite { op: "simulate" });
    }
    Ok((TradeLedger { k, days }, report))
}

fn check_days(dataset: &Dataset, days: &Range<usize>, window: usize) -> Result<()> {
    if days.is_empty() {
        return Err(Error::Data("back-test range is empty".into()));
    }
    if days.end > dataset.n_days() {
        return Err(Error::Data(format!(
            "back-test range ends at day {} but only {} labeled days exist",
            days.end,
            dataset.n_days()
        )));
    }
    if days.start + 1 < window {
        return Err(Error::Data(format!(
            "back-test day {} has fewer than {window} days of history",
            days.start
        )));
    }
    Ok(())
}

/// Model scores for each day in `days`.
pub fn score_matrix(model: &RankModel<f64>, dataset: &Dataset, days: Range<usize>) -> Result<Vec<Vec<f64>>> {
    let s = model.config().window;
    check_days(dataset, &days, s)?;
    let daily: Vec<Tensor<f64>> = (days.start + 1 - s..days.end)
        .map(|d| dataset.window(d, 1).expect("day in range").remove(0))
        .collect();
    days.clone()
        .map(|t| {
            let at = t + 1 - s - (days.start + 1 - s);
            model.predict(&daily[at..at + s])
        })
        .collect()
}

/// Perfect-foresight scores: the realized returns themselves.
pub fn oracle_scores(dataset: &Dataset, days: Range<usize>) -> Result<Vec<Vec<f64>>> {
    check_days(dataset, &days, 1)?;
    Ok(days.map(|t| dataset.labels(t).to_vec()).collect())
}

/// Simulates `scores` (one row per day of `days`) on the dataset's returns.
pub fn backtest_scores(
    dataset: &Dataset,
    days: Range<usize>,
    scores: &[Vec<f64>],
    k: usize,
) -> Result<(TradeLedger, MetricsReport)> {
    check_days(dataset, &days, 1)?;
    let truths: Vec<Vec<f64>> = days.clone().map(|t| dataset.labels(t).to_vec()).collect();
    let (mut ledger, report) = simulate(scores, &truths, k)?;
    for (d, t) in ledger.days.iter_mut().zip(days) {
        d.day = t;
        d.date = Some(dataset.date(t));
    }
    Ok((ledger, report))
}

pub fn run_backtest(
    model: &RankModel<f64>,
    dataset: &Dataset,
    days: Range<usize>,
    k: usize,
) -> Result<(TradeLedger, MetricsReport)> {
    let scores = score_matrix(model, dataset, days.clone())?;
    backtest_scores(dataset, days, &scores, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_day(&[3.0, 1.0, 2.0]).unwrap(), vec![0, 2, 1]);
        assert_eq!(rank_day(&[0.5; 4]).unwrap(), vec![0, 1, 2, 3]);
        assert!(rank_day(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn toy_example_mse() {
        let truth = vec![vec![30.0, 10.0, -50.0]];
        let a = metric_mse(&[vec![50.0, -10.0, -50.0]], &truth).unwrap();
        let b = metric_mse(&[vec![20.0, 30.0, -40.0]], &truth).unwrap();
        assert!((a - 800.0 / 3.0).abs() < 1e-9);
        assert!((b - 200.0).abs() < 1e-9);
        assert_eq!(metric_mse(&truth, &truth).unwrap(), 0.0);
    }

    #[test]
    fn mrr_examples() {
        let truths = vec![vec![0.4, 0.3, 0.2, 0.1], vec![0.4, 0.3, 0.2, 0.1]];
        assert_eq!(metric_mrr(&[0, 3], &truths).unwrap(), 0.625);
        assert_eq!(metric_mrr(&[0, 0], &truths).unwrap(), 1.0);
        assert_eq!(metric_mrr(&[3, 3], &truths).unwrap(), 0.25);
    }

    #[test]
    fn top_k_clamps_to_universe() {
        let (ledger, report) = simulate(&[vec![0.1, 0.2]], &[vec![0.05, -0.01]], 10).unwrap();
        assert_eq!(ledger.days[0].selected, vec![1, 0]);
        assert!((report.irr - 0.02).abs() < 1e-15);
    }

    #[test]
    fn k_zero_is_rejected() {
        assert!(simulate(&[vec![0.1]], &[vec![0.1]], 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let (ledger, _) = simulate(&[vec![0.1, 0.2], vec![0.3, 0.2]], &[vec![0.5, 0.25], vec![0.125, 0.0]], 1).unwrap();
        let symbols = vec!["AAA".to_string(), "BBB".to_string()];
        assert_eq!(
            ledger.to_csv(&symbols),
            "day,selected_symbols,day_return,cumulative_irr\n0,BBB,0.25,0.25\n1,AAA,0.125,0.375\n"
        );
        assert_eq!(ledger.curve_csv(), "day,cumulative_irr\n0,0.25\n1,0.375\n");
    }

    #[test]
    fn report_keys() {
        let v = serde_json::to_value(MetricsReport { mse: 1.0, mrr: 0.5, irr: 0.1 }).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["irr", "mrr", "mse"]);
    }
}
