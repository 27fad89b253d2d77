//! Graph data model, dataset ingestion and splits.

mod citation;
mod split;
pub mod synthetic;
mod tu;

use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use flate2::read::GzDecoder;

use serde::{Deserialize, Serialize};

use crate::error::{EggError, Result};
use crate::tensor::{CsrMatrix, Matrix};

pub use citation::{load_citation, CitationDataset, CitationOptions, CitationStats};
pub(crate) use split::resample_train_negatives;
pub use split::{split_edges, split_graphs, EdgeSplit};
pub use tu::{load_tu_dataset, TuOptions};

/// Undirected graph with node features.
///
/// Edges are stored once as `(u, v)` with `u < v`; the adjacency they
/// describe is symmetric by construction and carries no self-loops.
#[derive(Debug, Clone)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    features: Arc<Matrix>,
    label: Option<usize>,
    node_labels: Option<Vec<usize>>,
    duplicate_edges: usize,
    norm_adj: OnceLock<Arc<CsrMatrix>>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.node_count == other.node_count
            && self.edges == other.edges
            && self.features == other.features
            && self.label == other.label
            && self.node_labels == other.node_labels
    }
}

impl Graph {
    /// Builds a graph from possibly duplicated, possibly reversed edges.
    /// Self-loops are dropped; duplicates are merged and counted.
    pub fn new(node_count: usize, edges: &[(usize, usize)], features: Matrix, label: Option<usize>) -> Result<Self> {
        if features.rows() != node_count {
            return Err(EggError::Data(format!(
                "feature matrix has {} rows for {node_count} nodes",
                features.rows()
            )));
        }
        let mut set = BTreeSet::new();
        let mut duplicates = 0;
        for &(u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(EggError::Data(format!(
                    "edge ({u}, {v}) outside 0..{node_count}"
                )));
            }
            if u == v {
                continue;
            }
            if !set.insert((u.min(v), u.max(v))) {
                duplicates += 1;
            }
        }
        Ok(Self {
            node_count,
            edges: set.into_iter().collect(),
            features: Arc::new(features),
            label,
            node_labels: None,
            duplicate_edges: duplicates,
            norm_adj: OnceLock::new(),
        })
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.node_count {
            return Err(EggError::Data(format!(
                "{} node labels for {} nodes",
                labels.len(),
                self.node_count
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Undirected edges, each once with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Reversed or repeated edges merged at construction.
    pub fn duplicate_edges(&self) -> usize {
        self.duplicate_edges
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    pub fn features(&self) -> &Arc<Matrix> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn set_features(&mut self, features: Matrix) -> Result<()> {
        if features.rows() != self.node_count {
            return Err(EggError::Data("feature rows do not match node count".into()));
        }
        self.features = Arc::new(features);
        Ok(())
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.node_count];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    /// Neighbour lists in ascending order.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        adj.iter_mut().for_each(|l| l.sort_unstable());
        adj
    }

    /// `D̃^{-1/2}(A+I)D̃^{-1/2}`, computed once and cached.
    pub fn normalized_adjacency(&self) -> Arc<CsrMatrix> {
        self.norm_adj
            .get_or_init(|| Arc::new(normalize_adjacency(self)))
            .clone()
    }

    /// `A + (1+ε)I`: the sum aggregator used by GIN.
    pub fn sum_aggregator(&self, eps: f64) -> CsrMatrix {
        let mut trip = Vec::with_capacity(2 * self.edges.len() + self.node_count);
        for i in 0..self.node_count {
            trip.push((i, i, 1.0 + eps));
        }
        for &(u, v) in &self.edges {
            trip.push((u, v, 1.0));
            trip.push((v, u, 1.0));
        }
        CsrMatrix::from_triplets(self.node_count, self.node_count, &trip).expect("indices validated at construction")
    }

    /// Same node set and features with a different edge list.
    pub fn with_edges(&self, edges: &[(usize, usize)]) -> Result<Graph> {
        let mut g = Graph::new(self.node_count, edges, Matrix::zeros(self.node_count, 0), self.label)?;
        g.features = self.features.clone();
        g.node_labels = self.node_labels.clone();
        Ok(g)
    }
}

/// Renormalised adjacency with self-loops.
pub fn normalize_adjacency(g: &Graph) -> CsrMatrix {
    let deg: Vec<f64> = g.degrees().iter().map(|&d| d as f64 + 1.0).collect();
    let mut trip = Vec::with_capacity(2 * g.edges.len() + g.node_count);
    for (i, d) in deg.iter().enumerate() {
        trip.push((i, i, 1.0 / d));
    }
    for &(u, v) in &g.edges {
        let w = 1.0 / (deg[u] * deg[v]).sqrt();
        trip.push((u, v, w));
        trip.push((v, u, w));
    }
    CsrMatrix::from_triplets(g.node_count, g.node_count, &trip).expect("indices validated at construction")
}

/// Train/validation/test membership of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

/// A labelled collection of graphs for graph classification.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSet {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub class_count: usize,
    /// Per-graph split; empty until [`split_graphs`] runs.
    pub splits: Vec<Split>,
}

impl GraphSet {
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, class_count: usize) -> Result<Self> {
        let dims: BTreeSet<usize> = graphs.iter().map(|g| g.feature_dim()).collect();
        if dims.len() > 1 {
            return Err(EggError::Data(format!("graphs disagree on feature width: {dims:?}")));
        }
        for g in &graphs {
            match g.label() {
                Some(l) if l < class_count => {}
                other => {
                    return Err(EggError::Data(format!(
                        "graph label {other:?} outside 0..{class_count}"
                    )))
                }
            }
        }
        Ok(Self {
            name: name.into(),
            graphs,
            class_count,
            splits: Vec::new(),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, |g| g.feature_dim())
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label().unwrap_or(0)).collect()
    }

    /// Indices of the graphs assigned to `split`.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn max_degree(&self) -> usize {
        self.graphs
            .iter()
            .flat_map(|g| g.degrees())
            .max()
            .unwrap_or(0)
    }
}

/// One-hot degree features: width `cap + 1`, node of degree `d` hot at
/// `min(d, cap)`.
pub fn degree_onehot(gs: &GraphSet, cap: usize) -> Result<GraphSet> {
    if cap == 0 {
        return Err(EggError::InvalidArgument("degree cap must be at least 1".into()));
    }
    let mut out = gs.clone();
    for g in &mut out.graphs {
        let deg = g.degrees();
        let mut x = Matrix::zeros(g.node_count(), cap + 1);
        for (i, d) in deg.into_iter().enumerate() {
            x[(i, d.min(cap))] = 1.0;
        }
        g.set_features(x)?;
    }
    Ok(out)
}

/// Reads a text file, transparently decompressing gzip. When `path` is
/// missing, `path.gz` is tried.
pub fn read_text(path: &Path) -> Result<String> {
    let resolved = if path.exists() {
        path.to_path_buf()
    } else {
        let mut gz = path.as_os_str().to_owned();
        gz.push(".gz");
        let gz = PathBuf::from(gz);
        if gz.exists() {
            gz
        } else {
            return Err(EggError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
            });
        }
    };
    let bytes = std::fs::read(&resolved).map_err(|source| EggError::Io {
        path: resolved.clone(),
        source,
    })?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut text = String::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_string(&mut text)
            .map_err(|source| EggError::Io { path: resolved, source })?;
        Ok(text)
    } else {
        String::from_utf8(bytes).map_err(|e| EggError::Parse {
            path: resolved,
            line: 0,
            msg: format!("invalid utf-8: {e}"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn featureless(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(n, edges, Matrix::zeros(n, 1), Some(0)).unwrap()
    }

    #[test]
    fn construction_normalises_edges() {
        let g = featureless(3, &[(1, 0), (0, 1), (2, 2), (1, 2)]);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.duplicate_edges(), 1);
        assert!(g.has_edge(1, 0) && g.has_edge(2, 1) && !g.has_edge(0, 2));
        assert!(Graph::new(2, &[(0, 2)], Matrix::zeros(2, 1), None).is_err());
    }

    #[test]
    fn normalized_adjacency_examples() {
        let single = featureless(1, &[]);
        assert_eq!(single.normalized_adjacency().to_dense(), Matrix::scalar(1.0));

        let pair = featureless(2, &[(0, 1)]);
        assert_eq!(pair.normalized_adjacency().to_dense(), Matrix::filled(2, 2, 0.5));

        // P3: degrees with self-loops (2, 3, 2)
        let p3 = featureless(3, &[(0, 1), (1, 2)]);
        let a = p3.normalized_adjacency().to_dense();
        let (s2, s6) = (0.5, 1.0 / 6f64.sqrt());
        let expect = Matrix::from_rows(&[[s2, s6, 0.0], [s6, 1.0 / 3.0, s6], [0.0, s6, s2]]);
        assert!(a.sub(&expect).unwrap().max_abs() < 1e-12);
        assert!(a.is_symmetric(0.0));
    }

    #[test]
    fn degree_features() {
        let iso = featureless(1, &[]);
        let tri = featureless(3, &[(0, 1), (1, 2), (0, 2)]);
        let gs = GraphSet::new("t", vec![iso, tri], 1).unwrap();
        let out = degree_onehot(&gs, gs.max_degree()).unwrap();
        assert_eq!(out.feature_dim(), 3);
        assert_eq!(out.graphs[0].features().row(0), &[1.0, 0.0, 0.0]);
        for i in 0..3 {
            assert_eq!(out.graphs[1].features().row(i), &[0.0, 0.0, 1.0]);
        }
        assert!(degree_onehot(&gs, 0).is_err());
    }

    #[test]
    fn gin_aggregator_adds_weighted_self() {
        let g = featureless(2, &[(0, 1)]);
        let a = g.sum_aggregator(0.0).to_dense();
        assert_eq!(a, Matrix::ones(2, 2));
    }
}
