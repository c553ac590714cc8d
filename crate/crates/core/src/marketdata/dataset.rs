use std::path::Path;

use chrono::NaiveDate;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::marketdata::features::{build_features, build_labels, FeatureTensor, ReturnMatrix, N_FEATURES, WARMUP_DAYS};
use crate::marketdata::prices::{align_calendar, load_prices, PriceSeries};
use crate::marketdata::relations::{load_relations, RelationLoadReport, RelationTensor};

/// Features and next-day labels on a shared calendar, plus optional relations.
///
/// Day indices run over the labeled feature days: day `t` has a full
/// feature vector and a return realized on the following trading day.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: FeatureTensor,
    labels: ReturnMatrix,
    by_day: Vec<Vec<f64>>,
    relations: Option<RelationTensor>,
}

impl Dataset {
    pub fn from_prices(prices: &[PriceSeries]) -> Result<Self> {
        let (aligned, _) = align_calendar(prices)?;
        let features = build_features(&aligned)?;
        let labels = build_labels(&aligned)?;
        let n_labeled = features.n_days() - 1;
        let mut by_day = vec![vec![0.0; features.n_stocks()]; n_labeled];
        for (t, row) in by_day.iter_mut().enumerate() {
            debug_assert_eq!(features.dates()[t], labels.dates()[t + WARMUP_DAYS]);
            for (i, r) in row.iter_mut().enumerate() {
                *r = labels.get(i, t + WARMUP_DAYS);
            }
        }
        Ok(Self {
            features,
            labels,
            by_day,
            relations: None,
        })
    }

    /// Loads a price directory and, optionally, a relation file restricted
    /// to the loaded symbols.
    pub fn load(prices: &Path, relations: Option<&Path>) -> Result<(Self, RelationLoadReport)> {
        let series = load_prices(prices)?;
        let mut ds = Self::from_prices(&series)?;
        let mut report = RelationLoadReport::default();
        if let Some(path) = relations {
            let (rel, r) = load_relations(path, ds.symbols())?;
            report = r;
            ds = ds.with_relations(rel)?;
        }
        Ok((ds, report))
    }

    pub fn with_relations(mut self, relations: RelationTensor) -> Result<Self> {
        if relations.n_stocks() != self.n_stocks() {
            return Err(Error::Data(format!(
                "relation tensor covers {} stocks, dataset has {}",
                relations.n_stocks(),
                self.n_stocks()
            )));
        }
        self.relations = Some(relations);
        Ok(self)
    }

    pub fn relations(&self) -> Option<&RelationTensor> {
        self.relations.as_ref()
    }

    pub fn features(&self) -> &FeatureTensor {
        &self.features
    }

    pub fn returns(&self) -> &ReturnMatrix {
        &self.labels
    }

    pub fn n_stocks(&self) -> usize {
        self.features.n_stocks()
    }

    /// Labeled days.
    pub fn n_days(&self) -> usize {
        self.by_day.len()
    }

    pub fn symbols(&self) -> &[String] {
        self.features.symbols()
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.features.dates()[day]
    }

    /// Returns realized from day `t` to day `t + 1`, one per stock.
    pub fn labels(&self, day: usize) -> &[f64] {
        &self.by_day[day]
    }

    /// Feature window of `len` days ending at `end`, as `len` matrices of
    /// shape `N × D` in chronological order; `None` if it starts before day 0.
    pub fn window(&self, end: usize, len: usize) -> Option<Vec<Tensor<f64>>> {
        if len == 0 || end + 1 < len || end >= self.features.n_days() {
            return None;
        }
        let n = self.n_stocks();
        let steps = (end + 1 - len..=end)
            .map(|day| {
                let mut data = Vec::with_capacity(n * N_FEATURES);
                for i in 0..n {
                    data.extend_from_slice(self.features.features(i, day));
                }
                Tensor::matrix(n, N_FEATURES, data).expect("window shape")
            })
            .collect();
        Some(steps)
    }
}
