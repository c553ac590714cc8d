use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contiguous chronological train / validation / test day ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl DatasetSplit {
    pub fn n_days(&self) -> usize {
        self.test.end
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Train `[0, b1)`, validation `[b1, b2)`, test `[b2, n_days)`.
pub fn chronological_split(n_days: usize, b1: usize, b2: usize) -> Result<DatasetSplit> {
    if !(0 < b1 && b1 < b2 && b2 < n_days) {
        return Err(Error::InvalidArgument(format!(
            "split boundaries must satisfy 0 < {b1} < {b2} < {n_days}"
        )));
    }
    Ok(DatasetSplit {
        train: 0..b1,
        val: b1..b2,
        test: b2..n_days,
    })
}

/// Split by fractions of `n_days`; the test range takes the remainder.
pub fn fractional_split(n_days: usize, train: f64, val: f64) -> Result<DatasetSplit> {
    let b1 = (n_days as f64 * train).round() as usize;
    let b2 = (n_days as f64 * (train + val)).round() as usize;
    chronological_split(n_days, b1, b2)
}
