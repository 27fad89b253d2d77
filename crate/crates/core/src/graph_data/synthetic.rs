//! Seeded synthetic datasets and writers for the on-disk formats.
//!
//! These stand in for benchmark data in tests, benches and examples.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{CitationDataset, CitationStats, Graph, GraphSet};
use crate::error::{EggError, Result};
use crate::rng::RngService;
use crate::tensor::Matrix;

/// Shape of a synthetic graph-classification set.
#[derive(Debug, Clone, Copy)]
pub struct GraphSetSpec {
    pub graphs: usize,
    pub classes: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub feature_dim: usize,
}

impl Default for GraphSetSpec {
    fn default() -> Self {
        Self {
            graphs: 60,
            classes: 2,
            min_nodes: 6,
            max_nodes: 16,
            feature_dim: 4,
        }
    }
}

/// Labelled graphs whose class shows in both density and node types.
///
/// Every graph contains a Hamiltonian path, so none is disconnected. Node
/// features are one-hot types; class `c` favours type `c mod d`.
pub fn graph_set(spec: GraphSetSpec, seed: u64) -> Result<GraphSet> {
    if spec.classes == 0 || spec.feature_dim == 0 || spec.min_nodes == 0 || spec.min_nodes > spec.max_nodes {
        return Err(EggError::InvalidArgument(format!("bad synthetic spec {spec:?}")));
    }
    let mut rng = RngService::new(seed).stream(0);
    let mut graphs = Vec::with_capacity(spec.graphs);
    for i in 0..spec.graphs {
        let class = i % spec.classes;
        let n = rng.random_range(spec.min_nodes..=spec.max_nodes);
        let p = 0.1 + 0.3 * class as f64 / spec.classes as f64;
        let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (v - 1, v)).collect();
        for u in 0..n {
            for v in u + 2..n {
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        let mut x = Matrix::zeros(n, spec.feature_dim);
        for r in 0..n {
            let t = if rng.random::<f64>() < 0.6 {
                class % spec.feature_dim
            } else {
                rng.random_range(0..spec.feature_dim)
            };
            x[(r, t)] = 1.0;
        }
        graphs.push(Graph::new(n, &edges, x, Some(class))?);
    }
    graphs.shuffle(&mut rng);
    GraphSet::new("synthetic", graphs, spec.classes)
}

/// Shape of a planted-partition citation network.
#[derive(Debug, Clone, Copy)]
pub struct PartitionSpec {
    pub nodes: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            nodes: 120,
            communities: 3,
            p_in: 0.12,
            p_out: 0.005,
            feature_dim: 30,
        }
    }
}

/// Stochastic block model with bag-of-words features.
///
/// Community `c` owns a contiguous block of the vocabulary; members switch
/// on words from their block far more often than other words.
pub fn planted_partition(spec: PartitionSpec, seed: u64) -> Result<CitationDataset> {
    if spec.communities == 0 || spec.nodes < spec.communities || spec.feature_dim < spec.communities {
        return Err(EggError::InvalidArgument(format!("bad synthetic spec {spec:?}")));
    }
    let mut rng = RngService::new(seed).stream(0);
    let mut labels: Vec<usize> = (0..spec.nodes).map(|i| i % spec.communities).collect();
    labels.shuffle(&mut rng);
    let mut edges = Vec::new();
    for u in 0..spec.nodes {
        for v in u + 1..spec.nodes {
            let p = if labels[u] == labels[v] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let block = spec.feature_dim / spec.communities;
    let mut x = Matrix::zeros(spec.nodes, spec.feature_dim);
    for (r, &c) in labels.iter().enumerate() {
        let own = c * block..(c + 1) * block;
        for w in 0..spec.feature_dim {
            let p = if own.contains(&w) { 0.4 } else { 0.03 };
            if rng.random::<f64>() < p {
                x[(r, w)] = 1.0;
            }
        }
        if x.row(r).iter().all(|&v| v == 0.0) {
            x[(r, own.start)] = 1.0;
        }
    }
    let graph = Graph::new(spec.nodes, &edges, x, None)?.with_node_labels(labels)?;
    Ok(CitationDataset {
        node_ids: (0..spec.nodes).map(|i| format!("n{i}")).collect(),
        class_names: (0..spec.communities).map(|c| format!("c{c}")).collect(),
        stats: CitationStats {
            citation_lines: graph.edge_count(),
            ..CitationStats::default()
        },
        graph,
    })
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|source| EggError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `gs` in the TU layout, with features as node attributes.
pub fn write_tu(dir: &Path, name: &str, gs: &GraphSet) -> Result<()> {
    let (mut a, mut ind, mut lab, mut attr) = (String::new(), String::new(), String::new(), String::new());
    let mut offset = 0;
    for (gi, g) in gs.graphs.iter().enumerate() {
        for &(u, v) in g.edges() {
            let _ = writeln!(a, "{}, {}", u + offset + 1, v + offset + 1);
            let _ = writeln!(a, "{}, {}", v + offset + 1, u + offset + 1);
        }
        for r in 0..g.node_count() {
            let _ = writeln!(ind, "{}", gi + 1);
            let row: Vec<String> = g.features().row(r).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(attr, "{}", row.join(", "));
        }
        let _ = writeln!(lab, "{}", g.label().unwrap_or(0));
        offset += g.node_count();
    }
    write_file(&dir.join(format!("{name}_A.txt")), &a)?;
    write_file(&dir.join(format!("{name}_graph_indicator.txt")), &ind)?;
    write_file(&dir.join(format!("{name}_graph_labels.txt")), &lab)?;
    write_file(&dir.join(format!("{name}_node_attributes.txt")), &attr)
}

/// Writes `<dir>/<name>.content` and `<dir>/<name>.cites`.
pub fn write_citation(dir: &Path, name: &str, ds: &CitationDataset) -> Result<()> {
    let mut content = String::new();
    let x = ds.graph.features();
    for (i, id) in ds.node_ids.iter().enumerate() {
        content.push_str(id);
        for v in x.row(i) {
            let _ = write!(content, "\t{v}");
        }
        let _ = writeln!(content, "\t{}", ds.class_names[ds.labels()[i]]);
    }
    let mut cites = String::new();
    for &(u, v) in ds.graph.edges() {
        let _ = writeln!(cites, "{}\t{}", ds.node_ids[u], ds.node_ids[v]);
    }
    write_file(&dir.join(format!("{name}.content")), &content)?;
    write_file(&dir.join(format!("{name}.cites")), &cites)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_data::{load_citation, load_tu_dataset, CitationOptions, TuOptions};

    #[test]
    fn tu_round_trip() {
        let gs = graph_set(GraphSetSpec::default(), 5).unwrap();
        assert_eq!(gs, graph_set(GraphSetSpec::default(), 5).unwrap());
        let dir = tempfile::tempdir().unwrap();
        write_tu(dir.path(), "S", &gs).unwrap();
        let back = load_tu_dataset(dir.path(), "S", TuOptions::default()).unwrap();
        assert_eq!(back.graphs, gs.graphs);
        assert_eq!(back.class_count, 2);
    }

    #[test]
    fn citation_round_trip() {
        let ds = planted_partition(PartitionSpec::default(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_citation(dir.path(), "p", &ds).unwrap();
        let back = load_citation(
            &dir.path().join("p.content"),
            &dir.path().join("p.cites"),
            CitationOptions::default(),
        )
        .unwrap();
        assert_eq!(back.graph, ds.graph);
        assert_eq!(back.class_names, ds.class_names);
        assert_eq!(back.stats.unknown_ids, 0);
    }
}
