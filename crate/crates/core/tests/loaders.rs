use std::path::PathBuf;

use egg_core::graph_data::synthetic::{graph_set, planted_partition, write_citation, write_tu, GraphSetSpec, PartitionSpec};
use egg_core::graph_data::{load_citation, load_tu_dataset, CitationOptions, TuOptions};

const WITH_ATTRIBUTES: TuOptions = TuOptions {
    node_attributes: true,
    node_labels: true,
};

#[test]
fn tu_files_reload_to_the_same_set() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..3 {
        let gs = graph_set(GraphSetSpec { graphs: 25, classes: 3, ..GraphSetSpec::default() }, seed).unwrap();
        write_tu(dir.path(), "R", &gs).unwrap();
        let back = load_tu_dataset(dir.path(), "R", WITH_ATTRIBUTES).unwrap();
        assert_eq!(back.graphs, gs.graphs);
        assert_eq!(back.class_count, 3);

        let indicator = std::fs::read_to_string(dir.path().join("R_graph_indicator.txt")).unwrap();
        let nodes: usize = back.graphs.iter().map(|g| g.node_count()).sum();
        assert_eq!(nodes, indicator.lines().count());
        let a = std::fs::read_to_string(dir.path().join("R_A.txt")).unwrap();
        let edges: usize = back.graphs.iter().map(|g| g.edge_count()).sum();
        assert_eq!(2 * edges, a.lines().count());
    }
}

#[test]
fn citation_files_reload_to_the_same_network() {
    let dir = tempfile::tempdir().unwrap();
    let ds = planted_partition(PartitionSpec::default(), 4).unwrap();
    write_citation(dir.path(), "net", &ds).unwrap();
    let back = load_citation(
        &dir.path().join("net.content"),
        &dir.path().join("net.cites"),
        CitationOptions::default(),
    )
    .unwrap();
    assert_eq!(back.graph.edges(), ds.graph.edges());
    assert_eq!(back.labels(), ds.labels());
    assert_eq!(back.node_ids, ds.node_ids);
    assert_eq!(back.stats.citation_lines, ds.graph.edge_count());
    assert_eq!(back.stats.unknown_ids, 0);
}

fn data_dir() -> PathBuf {
    PathBuf::from(std::env::var_os("EGG_DATA_DIR").expect("EGG_DATA_DIR must point at the benchmark data"))
}

#[test]
#[ignore = "needs the PROTEINS files under EGG_DATA_DIR"]
fn proteins_counts() {
    let gs = load_tu_dataset(&data_dir().join("PROTEINS"), "PROTEINS", TuOptions::default()).unwrap();
    assert_eq!(gs.len(), 1113);
    assert_eq!(gs.class_count, 2);
    assert_eq!(gs.feature_dim(), 3);
    let sizes: Vec<usize> = gs.graphs.iter().map(|g| g.node_count()).collect();
    assert_eq!(sizes.iter().min(), Some(&4));
    assert_eq!(sizes.iter().max(), Some(&620));
}

#[test]
#[ignore = "needs the Cora files under EGG_DATA_DIR"]
fn cora_counts() {
    let dir = data_dir().join("cora");
    let ds = load_citation(&dir.join("cora.content"), &dir.join("cora.cites"), CitationOptions::default()).unwrap();
    assert_eq!(ds.graph.node_count(), 2708);
    assert_eq!(ds.graph.feature_dim(), 1433);
    assert_eq!(ds.class_count(), 7);
    assert_eq!(ds.stats.citation_lines, 5429);
}
