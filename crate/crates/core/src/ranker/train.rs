use std::cmp::Ordering;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtest::{simulate, MetricsReport};
use crate::diffcore::{AdamConfig, AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::marketdata::{Dataset, DatasetSplit};
use crate::ranker::model::{RankModel, RankModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean daily objective over the epoch's training steps.
    pub train_loss: f64,
    pub validation: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept: best validation IRR, earliest on ties.
    pub selected_epoch: usize,
}

impl TrainHistory {
    pub fn selected(&self) -> &EpochRecord {
        &self.epochs[self.selected_epoch - 1]
    }
}

/// Daily `N × D` feature matrices, computed once.
struct DailyFeatures {
    days: Vec<Tensor<f64>>,
}

impl DailyFeatures {
    fn new(dataset: &Dataset) -> Self {
        Self {
            days: (0..dataset.n_days())
                .map(|d| dataset.window(d, 1).expect("labeled day").remove(0))
                .collect(),
        }
    }

    fn window(&self, end: usize, len: usize) -> &[Tensor<f64>] {
        &self.days[end + 1 - len..=end]
    }
}

/// Days of `range` with a full window of history.
fn usable_days(range: &Range<usize>, window: usize) -> Vec<usize> {
    range.clone().filter(|&t| t + 1 >= window).collect()
}

fn evaluate(model: &RankModel<f64>, dataset: &Dataset, features: &DailyFeatures, days: &[usize]) -> Result<MetricsReport> {
    let s = model.config().window;
    let mut scores = Vec::with_capacity(days.len());
    let mut truths = Vec::with_capacity(days.len());
    for &t in days {
        scores.push(model.predict(features.window(t, s))?);
        truths.push(dataset.labels(t).to_vec());
    }
    Ok(simulate(&scores, &truths, 1)?.1)
}

/// Validation metrics of `model` on the split's validation days.
pub fn validate(model: &RankModel<f64>, dataset: &Dataset, split: &DatasetSplit) -> Result<MetricsReport> {
    let days = usable_days(&split.val, model.config().window);
    evaluate(model, dataset, &DailyFeatures::new(dataset), &days)
}

/// Trains one configuration: per epoch, one Adam step per training day in a
/// seed-shuffled order, then a validation pass. Returns the model at the
/// epoch with the best validation IRR.
pub fn train(
    dataset: &Dataset,
    split: &DatasetSplit,
    config: &RankModelConfig,
) -> Result<(RankModel<f64>, TrainHistory)> {
    config.validate()?;
    if split.n_days() > dataset.n_days() {
        return Err(Error::Data(format!(
            "split covers {} days, dataset has {}",
            split.n_days(),
            dataset.n_days()
        )));
    }
    let s = config.window;
    let train_days = usable_days(&split.train, s);
    let val_days = usable_days(&split.val, s);
    if train_days.is_empty() {
        return Err(Error::Data(format!("no training day has {s} days of history")));
    }
    if val_days.is_empty() {
        return Err(Error::Data("validation range is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let input_dim = crate::marketdata::N_FEATURES;
    let mut model = RankModel::init_with_rng(config, input_dim, dataset.relations(), &mut rng)?;
    let features = DailyFeatures::new(dataset);
    let mut adam = AdamState::new(model.params(), AdamConfig::with_lr(config.lr));

    let mut order = train_days;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore<f64>)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &t in &order {
            let (loss, grads) = model.loss_and_gradients(features.window(t, s), dataset.labels(t))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite { op: "training loss" });
            }
            total += loss;
            adam.step(model.params_mut(), &grads)?;
        }
        let validation = evaluate(&model, dataset, &features, &val_days)?;
        if best.as_ref().is_none_or(|(irr, _, _)| validation.irr > *irr) {
            best = Some((validation.irr, epoch, model.params().clone()));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: total / order.len() as f64,
            validation,
        });
    }
    let (_, selected_epoch, params) = best.expect("at least one epoch");
    *model.params_mut() = params;
    Ok((model, TrainHistory { epochs, selected_epoch }))
}

/// Values tried for each tunable field; every combination is trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub window: Vec<usize>,
    pub hidden: Vec<usize>,
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub lambda: Vec<f64>,
}

impl GridSpec {
    /// Window and hidden-size ranges, and the shared α/λ range.
    pub fn standard_ranges() -> Self {
        Self {
            window: vec![2, 4, 8, 16],
            hidden: vec![16, 32, 64, 128],
            alpha: vec![0.1, 1.0, 10.0],
            lambda: vec![0.1, 1.0, 10.0],
        }
    }

    /// All configurations, `base` supplying the fields not on the grid.
    /// An empty `lambda` list keeps `base.lambda`; λ is only varied for `gbr`.
    pub fn configs(&self, base: &RankModelConfig) -> Result<Vec<RankModelConfig>> {
        if self.window.is_empty() || self.hidden.is_empty() || self.alpha.is_empty() {
            return Err(Error::Config("grid lists must be nonempty".into()));
        }
        let lambdas = if self.lambda.is_empty() || base.mode != crate::ranker::ModelMode::Gbr {
            vec![base.lambda]
        } else {
            self.lambda.clone()
        };
        let mut out = Vec::new();
        for &window in &self.window {
            for &hidden in &self.hidden {
                for &alpha in &self.alpha {
                    for &lambda in &lambdas {
                        let cfg = RankModelConfig {
                            window,
                            hidden,
                            alpha,
                            lambda,
                            ..base.clone()
                        };
                        cfg.validate()?;
                        out.push(cfg);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub config: RankModelConfig,
    pub history: TrainHistory,
}

impl GridCell {
    pub fn validation(&self) -> &MetricsReport {
        &self.history.selected().validation
    }
}

pub struct GridOutcome {
    pub best: usize,
    pub cells: Vec<GridCell>,
    pub model: RankModel<f64>,
}

fn config_key(c: &RankModelConfig) -> (usize, usize, f64, f64) {
    (c.window, c.hidden, c.alpha, c.lambda)
}

fn lexicographic(a: &RankModelConfig, b: &RankModelConfig) -> Ordering {
    let (ka, kb) = (config_key(a), config_key(b));
    ka.0.cmp(&kb.0)
        .then(ka.1.cmp(&kb.1))
        .then(ka.2.total_cmp(&kb.2))
        .then(ka.3.total_cmp(&kb.3))
}

/// Index of the highest validation IRR; ties go to the lexicographically
/// smallest `(window, hidden, alpha, lambda)`.
pub fn select_best(cells: &[GridCell]) -> Option<usize> {
    (0..cells.len()).min_by(|&a, &b| {
        let (ia, ib) = (cells[a].validation().irr, cells[b].validation().irr);
        ib.total_cmp(&ia).then(lexicographic(&cells[a].config, &cells[b].config))
    })
}

/// Trains every grid configuration, at most `jobs` at a time.
pub fn grid_search(
    dataset: &Dataset,
    split: &DatasetSplit,
    base: &RankModelConfig,
    grid: &GridSpec,
    jobs: usize,
) -> Result<GridOutcome> {
    let configs = grid.configs(base)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let trained: Vec<(GridCell, ParamStore<f64>)> = pool.install(|| {
        configs
            .par_iter()
            .map(|config| {
                let (model, history) = train(dataset, split, config)?;
                Ok((
                    GridCell {
                        config: config.clone(),
                        history,
                    },
                    model.params().clone(),
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (cells, mut params): (Vec<GridCell>, Vec<ParamStore<f64>>) = trained.into_iter().unzip();
    let best = select_best(&cells).expect("grid is nonempty");
    let model = RankModel::from_params(
        &cells[best].config,
        crate::marketdata::N_FEATURES,
        dataset.relations(),
        params.swap_remove(best),
    )?;
    Ok(GridOutcome { best, cells, model })
}
