use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationType {
    pub name: String,
    pub symmetric: bool,
}

/// Sparse multi-hot relation encodings between stocks.
///
/// An edge `(src, dst)` carries the set of relation types that hold from
/// `src` to `dst`; `dst` aggregates from `src` during propagation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationTensor {
    n_stocks: usize,
    types: Vec<RelationType>,
    edges: BTreeMap<(usize, usize), BTreeSet<usize>>,
}

impl RelationTensor {
    pub fn new(n_stocks: usize, types: Vec<RelationType>) -> Self {
        Self {
            n_stocks,
            types,
            edges: BTreeMap::new(),
        }
    }

    pub fn n_stocks(&self) -> usize {
        self.n_stocks
    }

    pub fn n_types(&self) -> usize {
        self.types.len()
    }

    pub fn types(&self) -> &[RelationType] {
        &self.types
    }

    pub fn type_names(&self) -> Vec<&str> {
        self.types.iter().map(|t| t.name.as_str()).collect()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Relation types from `src` to `dst`, if any.
    pub fn edge(&self, src: usize, dst: usize) -> Option<&BTreeSet<usize>> {
        self.edges.get(&(src, dst))
    }

    /// Edges in `(src, dst)` order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, &BTreeSet<usize>)> {
        self.edges.iter().map(|(&(s, d), t)| (s, d, t))
    }

    /// Multi-hot vector `a_{src,dst}`.
    pub fn multi_hot(&self, src: usize, dst: usize) -> Vec<f64> {
        let mut a = vec![0.0; self.types.len()];
        if let Some(set) = self.edge(src, dst) {
            for &k in set {
                a[k] = 1.0;
            }
        }
        a
    }

    /// Adds relation types to the directed edge `src → dst`; symmetric
    /// types are mirrored onto `dst → src`.
    pub fn add_edge(&mut self, src: usize, dst: usize, types: &[usize]) -> Result<()> {
        if src == dst {
            return Err(Error::Data(format!("self-edge on stock {src}")));
        }
        if src >= self.n_stocks || dst >= self.n_stocks {
            return Err(Error::Data(format!(
                "edge ({src}, {dst}) outside {} stocks",
                self.n_stocks
            )));
        }
        if types.is_empty() {
            return Err(Error::Data(format!("edge ({src}, {dst}) has no relation types")));
        }
        if let Some(&k) = types.iter().find(|&&k| k >= self.types.len()) {
            return Err(Error::Data(format!(
                "relation type index {k} out of range (K = {})",
                self.types.len()
            )));
        }
        for &k in types {
            self.edges.entry((src, dst)).or_default().insert(k);
            if self.types[k].symmetric {
                self.edges.entry((dst, src)).or_default().insert(k);
            }
        }
        Ok(())
    }

    /// Keeps only the given stocks, renumbered in the given order.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let remap: HashMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|(&(s, d), t)| Some(((*remap.get(&s)?, *remap.get(&d)?), t.clone())))
            .collect();
        Self {
            n_stocks: keep.len(),
            types: self.types.clone(),
            edges,
        }
    }

    /// Keeps only the given relation types, renumbered in the given order.
    pub fn select_types(&self, keep: &[usize]) -> Self {
        let remap: HashMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let edges = self
            .edges
            .iter()
            .filter_map(|(&key, t)| {
                let set: BTreeSet<usize> = t.iter().filter_map(|k| remap.get(k).copied()).collect();
                (!set.is_empty()).then_some((key, set))
            })
            .collect();
        Self {
            n_stocks: self.n_stocks,
            types: keep.iter().map(|&k| self.types[k].clone()).collect(),
            edges,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationFile {
    types: Vec<RelationType>,
    edges: Vec<EdgeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeRecord {
    src: String,
    dst: String,
    types: Vec<usize>,
}

/// Counts from [`load_relations`] worth surfacing to the user.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RelationLoadReport {
    /// Edges dropped because an endpoint is not in the universe.
    pub skipped_unknown: usize,
}

pub fn parse_relations(text: &str, universe: &[String]) -> Result<(RelationTensor, RelationLoadReport)> {
    let file: RelationFile = serde_json::from_str(text)?;
    let index: HashMap<&str, usize> = universe.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut rel = RelationTensor::new(universe.len(), file.types);
    let mut report = RelationLoadReport::default();
    for e in &file.edges {
        if e.src == e.dst {
            return Err(Error::Data(format!("self-edge on {}", e.src)));
        }
        if let Some(&k) = e.types.iter().find(|&&k| k >= rel.n_types()) {
            return Err(Error::Data(format!(
                "edge {}→{}: relation type index {k} out of range (K = {})",
                e.src,
                e.dst,
                rel.n_types()
            )));
        }
        match (index.get(e.src.as_str()), index.get(e.dst.as_str())) {
            (Some(&s), Some(&d)) => rel.add_edge(s, d, &e.types)?,
            _ => report.skipped_unknown += 1,
        }
    }
    Ok((rel, report))
}

pub fn load_relations(path: &Path, universe: &[String]) -> Result<(RelationTensor, RelationLoadReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_relations(&text, universe)
}

/// Serializes `rel` in the relation-file format. Symmetric types are
/// written once per unordered pair.
pub fn relations_json(rel: &RelationTensor, symbols: &[String]) -> Result<String> {
    let edges = rel
        .edges()
        .filter_map(|(s, d, set)| {
            let types: Vec<usize> = set
                .iter()
                .copied()
                .filter(|&k| !rel.types[k].symmetric || s < d)
                .collect();
            (!types.is_empty()).then(|| EdgeRecord {
                src: symbols[s].clone(),
                dst: symbols[d].clone(),
                types,
            })
        })
        .collect();
    let file = RelationFile {
        types: rel.types.clone(),
        edges,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}
