use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{BoundParams, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::marketdata::RelationTensor;
use crate::relembed::{
    binary_adjacency, gcn_layer, graph_laplacian, graph_regularizer, tgc_propagate, LaplacianMatrix,
    NormalizedAdjacency, Normalization, RelationalGraph, TgcMode, TgcOptions, TgcParams,
};
use crate::scalar::Scalar;
use crate::seqembed::{sequential_embedding, LstmVars, LstmWeights};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// LSTM embeddings straight into the prediction layer.
    RankLstm,
    /// `RankLstm` plus a Laplacian smoothness penalty on the scores.
    Gbr,
    /// LSTM embeddings propagated by one graph convolution layer.
    Gcn,
    /// Temporal graph convolution with explicit relation strength.
    RsrE,
    /// Temporal graph convolution with implicit relation strength.
    RsrI,
}

impl ModelMode {
    pub const ALL: [ModelMode; 5] = [Self::RankLstm, Self::Gbr, Self::Gcn, Self::RsrE, Self::RsrI];

    pub fn name(self) -> &'static str {
        match self {
            Self::RankLstm => "rank_lstm",
            Self::Gbr => "gbr",
            Self::Gcn => "gcn",
            Self::RsrE => "rsr_e",
            Self::RsrI => "rsr_i",
        }
    }

    pub fn needs_relations(self) -> bool {
        self != Self::RankLstm
    }

    /// Whether a relational embedding is concatenated before the prediction layer.
    pub fn has_relational_embedding(self) -> bool {
        matches!(self, Self::Gcn | Self::RsrE | Self::RsrI)
    }

    fn tgc_mode(self) -> Option<TgcMode> {
        match self {
            Self::RsrE => Some(TgcMode::Explicit),
            Self::RsrI => Some(TgcMode::Implicit),
            _ => None,
        }
    }
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

fn default_epochs() -> usize {
    50
}

fn default_lr() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankModelConfig {
    pub mode: ModelMode,
    /// Days of history fed to the LSTM.
    pub window: usize,
    /// LSTM hidden units.
    pub hidden: usize,
    /// Weight of the pairwise ranking term.
    pub alpha: f64,
    /// Weight of the Laplacian penalty (`gbr` only).
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Use the plain sums instead of dividing the loss terms by `N` and `N²`.
    #[serde(default)]
    pub unnormalized_loss: bool,
    #[serde(default)]
    pub implicit_divide_by_degree: bool,
    #[serde(default)]
    pub gcn_self_loops: bool,
}

impl Default for RankModelConfig {
    fn default() -> Self {
        Self {
            mode: ModelMode::RankLstm,
            window: 4,
            hidden: 32,
            alpha: 1.0,
            lambda: 0.0,
            epochs: default_epochs(),
            seed: 0,
            lr: default_lr(),
            unnormalized_loss: false,
            implicit_divide_by_degree: false,
            gcn_self_loops: false,
        }
    }
}

impl RankModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.window == 0 {
            return fail("window must be at least 1".into());
        }
        if self.hidden == 0 {
            return fail("hidden must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be a non-negative number, got {}", self.alpha));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be a non-negative number, got {}", self.lambda));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be a non-negative number, got {}", self.lr));
        }
        Ok(())
    }

    pub fn tgc_options(&self) -> TgcOptions {
        TgcOptions {
            implicit_divide_by_degree: self.implicit_divide_by_degree,
            unit_strength: false,
        }
    }
}

/// `r̂ᵢ = wᵀ[eᵢ; ēᵢ] + b` on plain tensors.
pub fn predict_scores<T: Scalar>(e: &Tensor<T>, e_bar: Option<&Tensor<T>>, w: &[T], b: T) -> Result<Vec<T>> {
    if e.shape().len() != 2 {
        return Err(Error::shape("predict_scores", e.shape(), &[0, w.len()]));
    }
    let (n, u) = (e.rows(), e.cols());
    let width = u + e_bar.map_or(0, |m| m.cols());
    if let Some(m) = e_bar {
        if m.shape() != [n, u] {
            return Err(Error::shape("predict_scores", e.shape(), m.shape()));
        }
    }
    if w.len() != width {
        return Err(Error::shape("predict_scores", &[n, width], &[w.len()]));
    }
    Ok((0..n)
        .map(|i| {
            let own: T = e.row(i).iter().zip(&w[..u]).map(|(&x, &y)| x * y).sum();
            let rel: T = e_bar.map_or(T::zero(), |m| m.row(i).iter().zip(&w[u..]).map(|(&x, &y)| x * y).sum());
            own + rel + b
        })
        .collect())
}

/// Prediction layer on a tape; `w` is a vector of length `U` or `2U`, `b` a
/// one-element tensor.
pub fn score_layer<T: Scalar>(tape: &mut Tape<T>, e: Var, e_bar: Option<Var>, w: Var, b: Var) -> Result<Var> {
    let x = match e_bar {
        Some(r) => tape.concat_cols(e, r)?,
        None => e,
    };
    let (n, width) = (tape.shape(x)[0], tape.shape(x)[1]);
    if tape.shape(w) != [width] {
        return Err(Error::shape("score_layer", &[n, width], tape.shape(w)));
    }
    let w_col = tape.reshape(w, &[width, 1])?;
    let s = tape.matmul(x, w_col)?;
    let s = tape.add_scalar(s, b)?;
    tape.reshape(s, &[n])
}

fn check_lengths(pred: usize, truth: usize) -> Result<()> {
    if pred != truth {
        return Err(Error::shape("ranking_loss", &[pred], &[truth]));
    }
    if pred == 0 {
        return Err(Error::InvalidArgument("ranking loss over zero stocks".into()));
    }
    Ok(())
}

/// `(1/N)‖r̂ − r‖² + α (1/N²) Σᵢⱼ max(0, −(r̂ᵢ − r̂ⱼ)(rᵢ − rⱼ))`, or the plain
/// sums when `normalized` is false.
pub fn ranking_loss<T: Scalar>(pred: &[T], truth: &[T], alpha: T, normalized: bool) -> Result<T> {
    check_lengths(pred.len(), truth.len())?;
    if alpha < T::zero() {
        return Err(Error::InvalidArgument("alpha must be non-negative".into()));
    }
    let n = T::lit(pred.len() as f64);
    let sq: T = pred.iter().zip(truth).map(|(&p, &r)| (p - r) * (p - r)).sum();
    let mut hinge = T::zero();
    for i in 0..pred.len() {
        for j in 0..pred.len() {
            let v = -(pred[i] - pred[j]) * (truth[i] - truth[j]);
            if v > T::zero() {
                hinge = hinge + v;
            }
        }
    }
    Ok(if normalized {
        sq / n + alpha * hinge / (n * n)
    } else {
        sq + alpha * hinge
    })
}

/// [`ranking_loss`] on a tape.
pub fn ranking_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    scores: Var,
    truth: &[T],
    alpha: T,
    normalized: bool,
) -> Result<Var> {
    check_lengths(tape.value(scores).numel(), truth.len())?;
    let n = T::lit(truth.len() as f64);
    let target = tape.constant(Tensor::vector(truth.to_vec()))?;
    let diff = tape.sub(scores, target)?;
    let sq = tape.mul(diff, diff)?;
    let sq = tape.sum(sq)?;
    let hinge = tape.pairwise_hinge(scores, Rc::new(truth.to_vec()))?;
    let (sq_scale, hinge_scale) = if normalized {
        (T::one() / n, alpha / (n * n))
    } else {
        (T::one(), alpha)
    };
    let sq = tape.scale(sq, sq_scale)?;
    let hinge = tape.scale(hinge, hinge_scale)?;
    tape.add(sq, hinge)
}

/// Graph structures a mode needs, built once per relation tensor.
#[derive(Clone, Debug, Default)]
pub struct ModelContext<T: Scalar = f64> {
    pub graph: Option<RelationalGraph<T>>,
    pub adjacency: Option<NormalizedAdjacency<T>>,
    pub laplacian: Option<LaplacianMatrix<T>>,
}

impl<T: Scalar> ModelContext<T> {
    pub fn new(config: &RankModelConfig, relations: Option<&RelationTensor>) -> Result<Self> {
        let mode = config.mode;
        if !mode.needs_relations() {
            return Ok(Self::default());
        }
        let rel = relations.ok_or_else(|| Error::Config(format!("mode {mode} requires a relation file")))?;
        let mut ctx = Self::default();
        match mode {
            ModelMode::Gbr => ctx.laplacian = Some(graph_laplacian(rel)),
            ModelMode::Gcn => {
                let a = binary_adjacency(rel, true);
                ctx.adjacency = Some(NormalizedAdjacency::new(&a, Normalization::Column, config.gcn_self_loops));
            }
            ModelMode::RsrE | ModelMode::RsrI => ctx.graph = Some(RelationalGraph::new(rel)),
            ModelMode::RankLstm => {}
        }
        Ok(ctx)
    }
}

/// A ranking model: configuration, parameters and relation context.
#[derive(Clone, Debug)]
pub struct RankModel<T: Scalar = f64> {
    config: RankModelConfig,
    input_dim: usize,
    n_types: usize,
    params: ParamStore<T>,
    ctx: ModelContext<T>,
}

fn uniform_tensor<T: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Fresh parameters for `config`, drawn from `rng`.
pub fn init_params<T: Scalar>(
    config: &RankModelConfig,
    input_dim: usize,
    n_types: usize,
    rng: &mut impl Rng,
) -> ParamStore<T> {
    let u = config.hidden;
    let mut params = ParamStore::new();
    LstmWeights::<T>::init(u, input_dim, rng).insert_into(&mut params, "lstm");
    if let Some(mode) = config.mode.tgc_mode() {
        TgcParams::<T>::init(mode, u, n_types, rng).insert_into(&mut params, "tgc");
    }
    if config.mode == ModelMode::Gcn {
        params.insert("gcn.w", uniform_tensor(&[u, u], 1.0 / (u as f64).sqrt(), rng));
        params.insert("gcn.b", Tensor::zeros(&[u]));
    }
    let width = if config.mode.has_relational_embedding() { 2 * u } else { u };
    params.insert("fc.w", uniform_tensor(&[width], 1.0 / (width as f64).sqrt(), rng));
    params.insert("fc.b", Tensor::scalar(T::zero()));
    params
}

impl<T: Scalar> RankModel<T> {
    /// Initializes parameters from `config.seed`.
    pub fn init(config: &RankModelConfig, input_dim: usize, relations: Option<&RelationTensor>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::init_with_rng(config, input_dim, relations, &mut rng)
    }

    pub fn init_with_rng(
        config: &RankModelConfig,
        input_dim: usize,
        relations: Option<&RelationTensor>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let ctx = ModelContext::new(config, relations)?;
        let n_types = relations.map_or(0, RelationTensor::n_types);
        Ok(Self {
            params: init_params(config, input_dim, n_types, rng),
            config: config.clone(),
            input_dim,
            n_types,
            ctx,
        })
    }

    /// Wraps loaded parameters after checking their layout against `config`.
    pub fn from_params(
        config: &RankModelConfig,
        input_dim: usize,
        relations: Option<&RelationTensor>,
        params: ParamStore<T>,
    ) -> Result<Self> {
        let mut model = Self::init(config, input_dim, relations)?;
        model
            .params
            .check_layout(&params)
            .map_err(|e| Error::Checkpoint(format!("parameters do not fit a {} model: {e}", config.mode)))?;
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &RankModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn context(&self) -> &ModelContext<T> {
        &self.ctx
    }

    /// Score vector for one window of `S` daily `N × D` feature matrices,
    /// built on `tape` from already bound parameters.
    pub fn forward(&self, tape: &mut Tape<T>, bound: &BoundParams, window: &[Tensor<T>]) -> Result<Var> {
        if window.len() != self.config.window {
            return Err(Error::InvalidArgument(format!(
                "window has {} days, model expects {}",
                window.len(),
                self.config.window
            )));
        }
        let steps = window
            .iter()
            .map(|x| tape.constant(x.clone()))
            .collect::<Result<Vec<_>>>()?;
        let lstm = LstmVars::bind(tape, bound, "lstm")?;
        let e = sequential_embedding(tape, &steps, &lstm)?;
        let e_bar = match self.config.mode {
            ModelMode::RsrE | ModelMode::RsrI => {
                let graph = self.ctx.graph.as_ref().expect("context built for mode");
                let mode = self.config.mode.tgc_mode().expect("relational mode");
                let (w, b) = (bound.try_get("tgc.w"), bound.try_get("tgc.b"));
                Some(tgc_propagate(tape, e, graph, mode, w, b, self.config.tgc_options())?)
            }
            ModelMode::Gcn => {
                let adj = self.ctx.adjacency.as_ref().expect("context built for mode");
                Some(gcn_layer(tape, e, adj, bound.get("gcn.w")?, bound.get("gcn.b")?)?)
            }
            ModelMode::RankLstm | ModelMode::Gbr => None,
        };
        score_layer(tape, e, e_bar, bound.get("fc.w")?, bound.get("fc.b")?)
    }

    /// Training objective for one day: ranking loss against `truth`, plus
    /// `λ · r̂ᵀ L r̂` in `gbr` mode.
    pub fn objective(&self, tape: &mut Tape<T>, bound: &BoundParams, window: &[Tensor<T>], truth: &[T]) -> Result<Var> {
        let scores = self.forward(tape, bound, window)?;
        let loss = ranking_loss_on_tape(
            tape,
            scores,
            truth,
            T::lit(self.config.alpha),
            !self.config.unnormalized_loss,
        )?;
        match (&self.ctx.laplacian, self.config.mode) {
            (Some(l), ModelMode::Gbr) => {
                let reg = graph_regularizer(tape, scores, l)?;
                let reg = tape.scale(reg, T::lit(self.config.lambda))?;
                tape.add(loss, reg)
            }
            _ => Ok(loss),
        }
    }

    pub fn predict(&self, window: &[Tensor<T>]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let scores = self.forward(&mut tape, &bound, window)?;
        Ok(tape.value(scores).data().to_vec())
    }

    /// Loss value and parameter gradients for one day.
    pub fn loss_and_gradients(&self, window: &[Tensor<T>], truth: &[T]) -> Result<(T, ParamStore<T>)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape)?;
        let loss = self.objective(&mut tape, &bound, window, truth)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], self.params.gradients(&bound, &grads)))
    }
}
