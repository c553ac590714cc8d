use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, MultiHotPattern, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::marketdata::RelationTensor;
use crate::relembed::graph::{build_neighbor_index, LaplacianMatrix, NeighborIndex, NormalizedAdjacency};
use crate::scalar::Scalar;

/// How relation strength enters the temporal graph convolution.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TgcMode {
    /// Plain neighbor average.
    Uniform,
    /// `(eᵢ·eⱼ) · φ(wᵀa_ji + b)`, scaled by `1/dᵢ`.
    Explicit,
    /// `φ(wᵀ[eᵢ; eⱼ; a_ji] + b)`, softmax-normalized over neighbors.
    Implicit,
}

/// Relation-strength parameters: `w` has length `K` (explicit) or
/// `2U + K` (implicit); uniform mode has none.
#[derive(Clone, Debug, PartialEq)]
pub struct TgcParams<T: Scalar = f64> {
    pub mode: TgcMode,
    pub w: Tensor<T>,
    pub b: T,
}

impl<T: Scalar> TgcParams<T> {
    pub fn weight_len(mode: TgcMode, hidden: usize, n_types: usize) -> usize {
        match mode {
            TgcMode::Uniform => 0,
            TgcMode::Explicit => n_types,
            TgcMode::Implicit => 2 * hidden + n_types,
        }
    }

    /// `w` uniform in `[−1/√len, 1/√len]`, `b = 0`.
    pub fn init(mode: TgcMode, hidden: usize, n_types: usize, rng: &mut impl Rng) -> Self {
        let len = Self::weight_len(mode, hidden, n_types);
        let bound = 1.0 / (len.max(1) as f64).sqrt();
        let w = (0..len).map(|_| T::lit(rng.random_range(-bound..=bound))).collect();
        Self {
            mode,
            w: Tensor::vector(w),
            b: T::zero(),
        }
    }

    pub fn insert_into(&self, params: &mut ParamStore<T>, prefix: &str) {
        if self.mode != TgcMode::Uniform {
            params.insert(format!("{prefix}.w"), self.w.clone());
            params.insert(format!("{prefix}.b"), Tensor::scalar(self.b));
        }
    }
}

/// Variations on the propagation rule.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TgcOptions {
    /// Implicit mode: also scale softmax weights by `1/dᵢ`.
    #[serde(default)]
    pub implicit_divide_by_degree: bool,
    /// Test hook: force every relation strength to 1.
    #[serde(skip)]
    pub unit_strength: bool,
}

/// Relation structure prepared once for repeated propagation.
#[derive(Clone, Debug)]
pub struct RelationalGraph<T: Scalar = f64> {
    pub index: NeighborIndex,
    pub mean_operator: Rc<Tensor<T>>,
    pub mask: Rc<Vec<bool>>,
    pub pattern: Rc<MultiHotPattern>,
}

impl<T: Scalar> RelationalGraph<T> {
    pub fn new(rel: &RelationTensor) -> Self {
        let index = build_neighbor_index(rel);
        Self {
            mean_operator: Rc::new(index.mean_operator()),
            mask: Rc::new(index.mask()),
            pattern: Rc::new(index.pattern()),
            index,
        }
    }

    pub fn n_stocks(&self) -> usize {
        self.index.n_stocks()
    }

    pub fn n_types(&self) -> usize {
        self.index.n_types()
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Pre-normalization relation strength for one pair `j → i`.
pub fn relation_strength<T: Scalar>(
    mode: TgcMode,
    a_ji: &[T],
    e_i: &[T],
    e_j: &[T],
    params: &TgcParams<T>,
) -> Result<T> {
    let w = params.w.data();
    let phi = |x: T| Activation::LEAKY.apply(x);
    if e_i.len() != e_j.len() {
        return Err(Error::shape("relation_strength", &[e_i.len()], &[e_j.len()]));
    }
    match mode {
        TgcMode::Explicit => {
            if w.len() != a_ji.len() {
                return Err(Error::shape("relation_strength", &[w.len()], &[a_ji.len()]));
            }
            Ok(dot(e_i, e_j) * phi(dot(w, a_ji) + params.b))
        }
        TgcMode::Implicit => {
            let u = e_i.len();
            if w.len() != 2 * u + a_ji.len() {
                return Err(Error::shape("relation_strength", &[w.len()], &[2 * u + a_ji.len()]));
            }
            let s = dot(&w[..u], e_i) + dot(&w[u..2 * u], e_j) + dot(&w[2 * u..], a_ji);
            Ok(phi(s + params.b))
        }
        TgcMode::Uniform => Err(Error::InvalidArgument(
            "uniform propagation has no relation strength".into(),
        )),
    }
}

fn check_embeddings<T: Scalar>(tape: &Tape<T>, e: Var, n: usize) -> Result<()> {
    let s = tape.shape(e);
    if s.len() != 2 || s[0] != n {
        return Err(Error::shape("propagate", s, &[n, 0]));
    }
    Ok(())
}

/// `ēᵢ = (1/dᵢ) Σ_{j ∈ nbr(i)} eⱼ`; isolated stocks get zero.
pub fn uniform_propagate<T: Scalar>(tape: &mut Tape<T>, e: Var, graph: &RelationalGraph<T>) -> Result<Var> {
    check_embeddings(tape, e, graph.n_stocks())?;
    tape.const_matmul(graph.mean_operator.clone(), e)
}

/// Time-aware propagation. `w` and `b` are the bound relation-strength
/// parameters (ignored in uniform mode).
pub fn tgc_propagate<T: Scalar>(
    tape: &mut Tape<T>,
    e: Var,
    graph: &RelationalGraph<T>,
    mode: TgcMode,
    w: Option<Var>,
    b: Option<Var>,
    options: TgcOptions,
) -> Result<Var> {
    check_embeddings(tape, e, graph.n_stocks())?;
    if mode == TgcMode::Uniform {
        return uniform_propagate(tape, e, graph);
    }
    let n = graph.n_stocks();

    match mode {
        TgcMode::Explicit => {
            let strength = if options.unit_strength {
                tape.constant(tape_ones(n))?
            } else {
                let (w, b) = strength_params(tape, w, b, mode, e, graph)?;
                let e_t = tape.transpose(e)?;
                let similarity = tape.matmul(e, e_t)?;
                let mix = tape.multi_hot_mix(w, graph.pattern.clone())?;
                let pre = tape.add_scalar(mix, b)?;
                let importance = tape.leaky_relu(pre)?;
                tape.mul(similarity, importance)?
            };
            let weights = tape.const_mul(strength, graph.mean_operator.clone())?;
            tape.matmul(weights, e)
        }
        TgcMode::Implicit => {
            let strength = if options.unit_strength {
                tape.constant(tape_ones(n))?
            } else {
                let (w, b) = strength_params(tape, w, b, mode, e, graph)?;
                let u = tape.shape(e)[1];
                let k = graph.n_types();
                let w_self = tape.slice(w, 0, u)?;
                let w_self = tape.reshape(w_self, &[u, 1])?;
                let w_nbr = tape.slice(w, u, u)?;
                let w_nbr = tape.reshape(w_nbr, &[u, 1])?;
                let w_rel = tape.slice(w, 2 * u, k)?;
                let s = tape.matmul(e, w_self)?;
                let s = tape.reshape(s, &[n])?;
                let t = tape.matmul(e, w_nbr)?;
                let t = tape.reshape(t, &[n])?;
                let pair = tape.outer_sum(s, t)?;
                let rel = tape.multi_hot_mix(w_rel, graph.pattern.clone())?;
                let logits = tape.add(pair, rel)?;
                let logits = tape.add_scalar(logits, b)?;
                tape.leaky_relu(logits)?
            };
            let mut weights = tape.masked_softmax_rows(strength, graph.mask.clone())?;
            if options.implicit_divide_by_degree {
                weights = tape.const_mul(weights, graph.mean_operator.clone())?;
            }
            tape.matmul(weights, e)
        }
        TgcMode::Uniform => unreachable!("handled above"),
    }
}

fn tape_ones<T: Scalar>(n: usize) -> Tensor<T> {
    Tensor::full(&[n, n], T::one())
}

fn strength_params<T: Scalar>(
    tape: &Tape<T>,
    w: Option<Var>,
    b: Option<Var>,
    mode: TgcMode,
    e: Var,
    graph: &RelationalGraph<T>,
) -> Result<(Var, Var)> {
    let missing = || Error::InvalidArgument("relation-strength parameters missing".into());
    let (w, b) = (w.ok_or_else(missing)?, b.ok_or_else(missing)?);
    let expected = TgcParams::<T>::weight_len(mode, tape.shape(e)[1], graph.n_types());
    if tape.shape(w) != [expected] {
        return Err(Error::shape("tgc_propagate", tape.shape(w), &[expected]));
    }
    Ok((w, b))
}

/// `Ē = A_norm (E W + 1 bᵀ)`.
pub fn gcn_layer<T: Scalar>(
    tape: &mut Tape<T>,
    e: Var,
    adjacency: &NormalizedAdjacency<T>,
    w: Var,
    b: Var,
) -> Result<Var> {
    check_embeddings(tape, e, adjacency.operator.rows())?;
    let ew = tape.matmul(e, w)?;
    let affine = tape.add_row(ew, b)?;
    tape.const_matmul(adjacency.operator.clone(), affine)
}

/// `r̂ᵀ L r̂` for a score vector of length `N`.
pub fn graph_regularizer<T: Scalar>(tape: &mut Tape<T>, scores: Var, laplacian: &LaplacianMatrix<T>) -> Result<Var> {
    let n = laplacian.matrix.rows();
    if tape.shape(scores) != [n] {
        return Err(Error::shape("graph_regularizer", tape.shape(scores), &[n]));
    }
    let col = tape.reshape(scores, &[n, 1])?;
    let lr = tape.const_matmul(laplacian.matrix.clone(), col)?;
    let prod = tape.mul(col, lr)?;
    tape.sum(prod)
}
