//! Relational embeddings: neighbor aggregation over the relation graph.

mod graph;
mod propagate;

pub use graph::{
    binary_adjacency, build_neighbor_index, graph_laplacian, LaplacianMatrix, NeighborIndex, NormalizedAdjacency,
    Normalization,
};
pub use propagate::{
    gcn_layer, graph_regularizer, relation_strength, tgc_propagate, uniform_propagate, RelationalGraph, TgcMode,
    TgcOptions, TgcParams,
};
