//! Planted-factor synthetic markets.
//!
//! Each stock belongs to one latent factor. Factor log-returns follow an
//! AR(1) process, so a factor's recent moves carry information about its
//! next move; each stock adds independent noise on top. Stocks of the
//! same factor are linked by a `same_factor` relation, and random
//! `noise` relations are sprinkled at the requested density.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::prices::PriceSeries;
use crate::marketdata::relations::{RelationTensor, RelationType};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_stocks: usize,
    pub n_days: usize,
    pub n_factors: usize,
    /// Probability that an unordered stock pair gets a `noise` relation.
    pub relation_density: f64,
    /// Standard deviation of idiosyncratic daily log-returns.
    pub noise_scale: f64,
    pub seed: u64,
    /// AR(1) coefficient of factor log-returns.
    pub persistence: f64,
    /// Standard deviation of factor innovations.
    pub factor_vol: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stocks: 20,
            n_days: 120,
            n_factors: 3,
            relation_density: 0.02,
            noise_scale: 0.02,
            seed: 0,
            persistence: 0.8,
            factor_vol: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorAssignment {
    pub symbol: String,
    pub factor: usize,
}

/// Ground truth written as `factors.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorMap {
    pub n_factors: usize,
    pub assignment: Vec<FactorAssignment>,
}

impl FactorMap {
    pub fn factor_of(&self, stock: usize) -> usize {
        self.assignment[stock].factor
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthMarket {
    pub prices: Vec<PriceSeries>,
    pub relations: RelationTensor,
    pub factors: FactorMap,
}

impl SynthMarket {
    pub fn symbols(&self) -> Vec<String> {
        self.prices.iter().map(|p| p.symbol().to_owned()).collect()
    }
}

/// `n` consecutive weekdays starting at `start` (or the next weekday).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    start
        .iter_days()
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .take(n)
        .collect()
}

pub const SAME_FACTOR: usize = 0;
pub const NOISE: usize = 1;

pub fn synth_market(cfg: &SynthConfig) -> Result<SynthMarket> {
    if cfg.n_stocks == 0 || cfg.n_days == 0 || cfg.n_factors == 0 {
        return Err(Error::InvalidArgument(
            "stocks, days and factors must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.relation_density) {
        return Err(Error::InvalidArgument("relation density must lie in [0, 1]".into()));
    }
    if cfg.noise_scale < 0.0 || cfg.factor_vol < 0.0 {
        return Err(Error::InvalidArgument("volatilities must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_stocks;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut factor = vec![0; n];
    for (pos, &stock) in order.iter().enumerate() {
        factor[stock] = pos % cfg.n_factors;
    }

    let symbols: Vec<String> = (0..n).map(|i| format!("S{i:03}")).collect();
    let dates = business_days(NaiveDate::from_ymd_opt(2013, 1, 2).expect("valid date"), cfg.n_days);
    let mut closes: Vec<Vec<f64>> = (0..n)
        .map(|_| vec![rng.random_range(20.0..120.0)])
        .collect();
    let mut factor_ret = vec![0.0f64; cfg.n_factors];
    for _ in 1..cfg.n_days {
        for m in factor_ret.iter_mut() {
            let shock: f64 = rng.sample(StandardNormal);
            *m = cfg.persistence * *m + cfg.factor_vol * shock;
        }
        for (i, series) in closes.iter_mut().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            let log_ret = factor_ret[factor[i]] + cfg.noise_scale * eps;
            let last = *series.last().expect("seeded with a first close");
            series.push(last * log_ret.exp());
        }
    }
    let prices = symbols
        .iter()
        .zip(closes)
        .map(|(s, c)| PriceSeries::new(s.clone(), dates.clone(), c))
        .collect::<Result<Vec<_>>>()?;

    let mut relations = RelationTensor::new(
        n,
        vec![
            RelationType {
                name: "same_factor".into(),
                symmetric: true,
            },
            RelationType {
                name: "noise".into(),
                symmetric: true,
            },
        ],
    );
    for i in 0..n {
        for j in i + 1..n {
            if factor[i] == factor[j] {
                relations.add_edge(i, j, &[SAME_FACTOR])?;
            }
            if rng.random::<f64>() < cfg.relation_density {
                relations.add_edge(i, j, &[NOISE])?;
            }
        }
    }

    let factors = FactorMap {
        n_factors: cfg.n_factors,
        assignment: symbols
            .iter()
            .zip(&factor)
            .map(|(s, &f)| FactorAssignment {
                symbol: s.clone(),
                factor: f,
            })
            .collect(),
    };
    Ok(SynthMarket {
        prices,
        relations,
        factors,
    })
}
