use std::rc::Rc;

use crate::diffcore::{MultiHotPattern, Tensor};
use crate::marketdata::RelationTensor;
use crate::scalar::Scalar;

/// In-neighbors of every stock with their multi-hot relation vectors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborIndex {
    n_types: usize,
    incoming: Vec<Vec<(usize, Vec<usize>)>>,
}

impl NeighborIndex {
    pub fn n_stocks(&self) -> usize {
        self.incoming.len()
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    /// Stocks `j` with at least one relation `j → i`, ascending, each with
    /// the relation types it carries.
    pub fn neighbors(&self, i: usize) -> &[(usize, Vec<usize>)] {
        &self.incoming[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.incoming[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.incoming.iter().map(Vec::len).collect()
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        self.incoming[i].is_empty()
    }

    /// `op[i][j] = 1/dᵢ` for every in-neighbor `j` of `i`, zero elsewhere.
    pub fn mean_operator<T: Scalar>(&self) -> Tensor<T> {
        let n = self.n_stocks();
        let mut op = Tensor::zeros(&[n, n]);
        for (i, nbrs) in self.incoming.iter().enumerate() {
            let inv = T::one() / T::lit(nbrs.len() as f64);
            for (j, _) in nbrs {
                op.set2(i, *j, inv);
            }
        }
        op
    }

    /// Row-major `N × N` mask, true where `j` is an in-neighbor of `i`.
    pub fn mask(&self) -> Vec<bool> {
        let n = self.n_stocks();
        let mut mask = vec![false; n * n];
        for (i, nbrs) in self.incoming.iter().enumerate() {
            for (j, _) in nbrs {
                mask[i * n + j] = true;
            }
        }
        mask
    }

    /// Relation types of `a_ji` placed at `(i, j)`.
    pub fn pattern(&self) -> MultiHotPattern {
        let n = self.n_stocks();
        MultiHotPattern {
            rows: n,
            cols: n,
            n_types: self.n_types,
            entries: self
                .incoming
                .iter()
                .enumerate()
                .flat_map(|(i, nbrs)| nbrs.iter().map(move |(j, t)| (i, *j, t.clone())))
                .collect(),
        }
    }
}

pub fn build_neighbor_index(rel: &RelationTensor) -> NeighborIndex {
    let mut incoming: Vec<Vec<(usize, Vec<usize>)>> = vec![Vec::new(); rel.n_stocks()];
    for (src, dst, types) in rel.edges() {
        if !types.is_empty() {
            incoming[dst].push((src, types.iter().copied().collect()));
        }
    }
    for nbrs in &mut incoming {
        nbrs.sort_by_key(|(j, _)| *j);
    }
    NeighborIndex {
        n_types: rel.n_types(),
        incoming,
    }
}

/// Binary adjacency indexed `[src][dst]`; with `symmetrize`, a pair is
/// linked when either direction carries a relation.
pub fn binary_adjacency<T: Scalar>(rel: &RelationTensor, symmetrize: bool) -> Tensor<T> {
    let n = rel.n_stocks();
    let mut a = Tensor::zeros(&[n, n]);
    for (s, d, types) in rel.edges() {
        if types.is_empty() {
            continue;
        }
        a.set2(s, d, T::one());
        if symmetrize {
            a.set2(d, s, T::one());
        }
    }
    a
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Normalization {
    /// Divide each column of `A[src][dst]` by its sum (the in-degree of `dst`).
    Column,
    /// Divide each row of `A[src][dst]` by its sum (the out-degree of `src`).
    Row,
}

/// Normalized adjacency stored as an aggregation operator indexed
/// `[dst][src]`, so that `Ē = op · E`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency<T: Scalar = f64> {
    pub operator: Rc<Tensor<T>>,
    pub normalization: Normalization,
    pub self_loops: bool,
}

impl<T: Scalar> NormalizedAdjacency<T> {
    /// Normalizes a `[src][dst]` binary adjacency. Empty columns (or rows)
    /// stay zero.
    pub fn new(adjacency: &Tensor<T>, normalization: Normalization, self_loops: bool) -> Self {
        let n = adjacency.rows();
        let mut a = adjacency.clone();
        if self_loops {
            for i in 0..n {
                a.set2(i, i, T::one());
            }
        }
        let mut op = Tensor::zeros(&[n, n]);
        match normalization {
            Normalization::Column => {
                for dst in 0..n {
                    let total: T = (0..n).map(|src| a.get2(src, dst)).sum();
                    if total > T::zero() {
                        for src in 0..n {
                            op.set2(dst, src, a.get2(src, dst) / total);
                        }
                    }
                }
            }
            Normalization::Row => {
                for src in 0..n {
                    let total: T = a.row(src).iter().copied().sum();
                    if total > T::zero() {
                        for dst in 0..n {
                            op.set2(dst, src, a.get2(src, dst) / total);
                        }
                    }
                }
            }
        }
        Self {
            operator: Rc::new(op),
            normalization,
            self_loops,
        }
    }
}

/// `L = D^{-1/2} (D − A) D^{-1/2}` over the symmetrized binary graph.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianMatrix<T: Scalar = f64> {
    pub matrix: Rc<Tensor<T>>,
}

pub fn graph_laplacian<T: Scalar>(rel: &RelationTensor) -> LaplacianMatrix<T> {
    let a: Tensor<T> = binary_adjacency(rel, true);
    let n = a.rows();
    let deg: Vec<T> = (0..n).map(|i| a.row(i).iter().copied().sum()).collect();
    let inv_sqrt: Vec<T> = deg
        .iter()
        .map(|&d| if d > T::zero() { T::one() / d.sqrt() } else { T::zero() })
        .collect();
    let mut l = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let d_minus_a = if i == j { deg[i] } else { T::zero() } - a.get2(i, j);
            l.set2(i, j, inv_sqrt[i] * d_minus_a * inv_sqrt[j]);
        }
    }
    LaplacianMatrix { matrix: Rc::new(l) }
}
