//! Prediction layer, ranking objective, training loop and grid search.

mod model;
mod toy;
mod train;

pub use model::{
    init_params, predict_scores, ranking_loss, ranking_loss_on_tape, score_layer, ModelContext, ModelMode, RankModel,
    RankModelConfig,
};
pub use train::{grid_search, select_best, train, validate, EpochRecord, GridCell, GridOutcome, GridSpec, TrainHistory};
pub use toy::{check_model_gradients, random_relations, toy_instance, ToyInstance, ToyScale, GRADCHECK_EPS};
