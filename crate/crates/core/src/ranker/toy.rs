//! Small random instances for full-model gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::gradcheck::{analytic_gradients, compare_gradients, numeric_gradients};
use crate::diffcore::{GradCheckReport, Tensor};
use crate::error::{Error, Result};
use crate::marketdata::{RelationTensor, RelationType};
use crate::ranker::model::{ModelMode, RankModel, RankModelConfig};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyScale {
    pub stocks: usize,
    pub window: usize,
    pub hidden: usize,
    pub types: usize,
    pub features: usize,
}

impl Default for ToyScale {
    fn default() -> Self {
        Self {
            stocks: 4,
            window: 2,
            hidden: 3,
            types: 2,
            features: 5,
        }
    }
}

pub struct ToyInstance {
    pub model: RankModel<f64>,
    pub window: Vec<Tensor<f64>>,
    pub truth: Vec<f64>,
    pub relations: RelationTensor,
}

/// Random directed relations in which every stock has at least one
/// in-neighbor (when `n > 1`).
pub fn random_relations(n: usize, k: usize, rng: &mut impl Rng) -> RelationTensor {
    let types = (0..k)
        .map(|t| RelationType {
            name: format!("type_{t}"),
            symmetric: false,
        })
        .collect();
    let mut rel = RelationTensor::new(n, types);
    if k == 0 {
        return rel;
    }
    for dst in 0..n {
        for src in 0..n {
            if src == dst {
                continue;
            }
            let forced = n > 1 && src == (dst + 1) % n;
            if forced || rng.random::<f64>() < 0.5 {
                let mut set: Vec<usize> = (0..k).filter(|_| rng.random::<f64>() < 0.5).collect();
                if set.is_empty() {
                    set.push(rng.random_range(0..k));
                }
                rel.add_edge(src, dst, &set).expect("valid toy edge");
            }
        }
    }
    rel
}

/// Model with parameters drawn uniformly from `[−1, 1]`, standard-normal
/// features and targets.
pub fn toy_instance(mode: ModelMode, scale: ToyScale, seed: u64) -> Result<ToyInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let relations = random_relations(scale.stocks, scale.types, &mut rng);
    let config = RankModelConfig {
        mode,
        window: scale.window,
        hidden: scale.hidden,
        alpha: 1.0,
        lambda: 1.0,
        seed,
        ..Default::default()
    };
    let mut model = RankModel::init_with_rng(&config, scale.features, Some(&relations), &mut rng)?;
    for (_, t) in model.params_mut().iter_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-1.0..=1.0);
        }
    }
    let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let window = (0..scale.window)
        .map(|_| Tensor::matrix(scale.stocks, scale.features, normal(scale.stocks * scale.features)))
        .collect::<Result<Vec<_>>>()?;
    let truth = normal(scale.stocks);
    Ok(ToyInstance {
        model,
        window,
        truth,
        relations,
    })
}

/// Step used by the full-model check. Large enough that a one-ulp change of
/// an `O(1)` loss stays below the `1e-8` relative-error floor when the true
/// derivative is exactly zero (softmax shift invariance), small enough to
/// keep truncation error near `1e-5`.
pub const GRADCHECK_EPS: f64 = 2e-4;

/// Finite-difference check of the full training objective. With `corrupt`,
/// one analytic gradient entry is perturbed before comparison.
pub fn check_model_gradients(
    mode: ModelMode,
    scale: ToyScale,
    seed: u64,
    eps: f64,
    corrupt: bool,
) -> Result<GradCheckReport> {
    if scale.stocks == 0 || scale.window == 0 || scale.hidden == 0 || scale.features == 0 {
        return Err(Error::InvalidArgument("toy dimensions must be positive".into()));
    }
    let toy = toy_instance(mode, scale, seed)?;
    let f = |tape: &mut crate::diffcore::Tape<f64>, bound: &crate::diffcore::BoundParams| {
        toy.model.objective(tape, bound, &toy.window, &toy.truth)
    };
    let (_, mut analytic) = analytic_gradients(toy.model.params(), &f)?;
    if corrupt {
        let g = analytic.get_mut("fc.b").expect("every mode has fc.b");
        g.data_mut()[0] += 1.0;
    }
    let numeric = numeric_gradients(toy.model.params(), eps, &f)?;
    compare_gradients(&analytic, &numeric)
}
