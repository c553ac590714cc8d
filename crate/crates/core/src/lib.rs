//! Stock ranking with sequential and relational embeddings.
//!
//! Daily price features run through an LSTM to get one embedding per stock;
//! a temporal graph convolution mixes in the embeddings of related stocks;
//! a linear layer scores every stock and a combined squared-error and
//! pairwise ranking loss trains the whole stack. A back-tester turns the
//! scores into a daily top-k trading strategy.

pub mod backtest;
pub mod cli;
pub mod diffcore;
pub mod error;
pub mod marketdata;
pub mod ranker;
pub mod relembed;
pub mod scalar;
pub mod seqembed;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = diffcore::Tensor<f64>;
pub type Tensor32 = diffcore::Tensor<f32>;
pub type Tape64 = diffcore::Tape<f64>;
pub type Tape32 = diffcore::Tape<f32>;
pub type ParamStore64 = diffcore::ParamStore<f64>;
pub type ParamStore32 = diffcore::ParamStore<f32>;
pub type RankModel64 = ranker::RankModel<f64>;
pub type RankModel32 = ranker::RankModel<f32>;
