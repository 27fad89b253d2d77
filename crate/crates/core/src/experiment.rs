//! Repetition protocols shared by the command-line tool and the
//! acceptance suite.
//!
//! Every repetition draws its own seed from the master seed, so a
//! repetition can run in any process and still produce the same numbers.

use serde::Serialize;

use crate::clustering::{egg_cluster, kmeans_cluster, train_vgae, ClusterResult, EggFeatures, KMeansConfig, VgaeConfig, VgaeState};
use crate::error::{EggError, Result};
use crate::gnn::ModelConfig;
use crate::graph_data::{split_edges, split_graphs, CitationDataset, GraphSet};
use crate::grassmann::RankPolicy;
use crate::rng::RngService;
use crate::training::{train_classifier, RunRecord, TrainConfig, TrainedClassifier};

/// Graph split used for classification.
pub const GRAPH_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];
/// Edge split used to train the autoencoder.
pub const EDGE_FRACTIONS: [f64; 3] = [0.85, 0.05, 0.1];

/// Seed owned by repetition `rep` under `master`.
pub fn repetition_seed(master: u64, rep: usize) -> u64 {
    RngService::new(master).derive(rep as u64).seed()
}

/// One classification repetition: a fresh stratified split and a fresh
/// initialisation, both from the repetition seed.
pub fn classify_repetition(
    gs: &GraphSet,
    model: &ModelConfig,
    train: &TrainConfig,
    fractions: [f64; 3],
    rep: usize,
) -> Result<RunRecord> {
    Ok(train_repetition(gs, model, train, fractions, rep)?.record)
}

/// Like [`classify_repetition`], keeping the trained model.
pub fn train_repetition(
    gs: &GraphSet,
    model: &ModelConfig,
    train: &TrainConfig,
    fractions: [f64; 3],
    rep: usize,
) -> Result<TrainedClassifier> {
    let seed = repetition_seed(train.seed, rep);
    let split = split_graphs(gs, fractions, seed)?;
    let cfg = TrainConfig { seed, ..train.clone() };
    train_classifier(&split, model, &cfg)
}

/// Clustering scores of one policy; `None` is plain k-means on the latents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyResult {
    pub policy: Option<RankPolicy>,
    pub result: ClusterResult,
}

/// Autoencoder of repetition `rep`, trained on a fresh edge split.
pub fn vgae_repetition(ds: &CitationDataset, vgae: &VgaeConfig, fractions: [f64; 3], rep: usize) -> Result<VgaeState> {
    let seed = repetition_seed(vgae.seed, rep);
    let split = split_edges(&ds.graph, fractions, seed)?;
    train_vgae(&split, &VgaeConfig { seed, ..vgae.clone() })
}

/// Outcome of one clustering repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRepetition {
    /// Autoencoder loss per epoch.
    pub losses: Vec<f64>,
    /// One entry per requested policy, in request order.
    pub results: Vec<PolicyResult>,
}

/// One clustering repetition: a fresh edge split and autoencoder, then
/// every policy on the same latent means.
pub fn cluster_repetition(
    ds: &CitationDataset,
    vgae: &VgaeConfig,
    policies: &[Option<RankPolicy>],
    fractions: [f64; 3],
    rep: usize,
) -> Result<ClusterRepetition> {
    let state = vgae_repetition(ds, vgae, fractions, rep)?;
    let truth = ds.labels();
    let kcfg = KMeansConfig::new(ds.class_count(), repetition_seed(vgae.seed, rep));
    let results = policies
        .iter()
        .map(|&policy| {
            let result = match policy {
                None => kmeans_cluster(&state.mu, kcfg, Some(truth))?,
                Some(p) => egg_cluster(&state.mu, p, kcfg, EggFeatures::Basis, Some(truth))?,
            };
            Ok(PolicyResult { policy, result })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterRepetition { losses: state.losses, results })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    if values.is_empty() {
        return Err(EggError::InvalidArgument("mean of no values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(MeanStd { mean, std: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_data::synthetic::{graph_set, planted_partition, GraphSetSpec, PartitionSpec};

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[2.0, 4.0]).unwrap(), MeanStd { mean: 3.0, std: 1.0 });
        assert_eq!(mean_std(&[5.0]).unwrap().std, 0.0);
        assert!(mean_std(&[]).is_err());
    }

    #[test]
    fn repetitions_have_distinct_seeds() {
        let seeds: std::collections::BTreeSet<u64> = (0..10).map(|r| repetition_seed(0, r)).collect();
        assert_eq!(seeds.len(), 10);
        assert_eq!(repetition_seed(3, 4), repetition_seed(3, 4));
    }

    #[test]
    fn classification_repetition_is_reproducible() {
        let gs = graph_set(GraphSetSpec { graphs: 30, ..GraphSetSpec::default() }, 1).unwrap();
        let model = ModelConfig { hidden: 8, head_widths: vec![8], ..ModelConfig::default() };
        let train = TrainConfig { max_epochs: 3, ..TrainConfig::default() };
        let a = classify_repetition(&gs, &model, &train, GRAPH_FRACTIONS, 2).unwrap();
        let b = classify_repetition(&gs, &model, &train, GRAPH_FRACTIONS, 2).unwrap();
        assert_eq!(a.epochs, b.epochs);
        assert_eq!(a.test_acc, b.test_acc);
    }

    #[test]
    fn clustering_repetition_scores_every_policy() {
        let ds = planted_partition(PartitionSpec { nodes: 60, ..PartitionSpec::default() }, 2).unwrap();
        let vgae = VgaeConfig { epochs: 5, ..VgaeConfig::default() };
        let policies = [None, Some(RankPolicy::FixedRatio(0.5))];
        let out = cluster_repetition(&ds, &vgae, &policies, EDGE_FRACTIONS, 0).unwrap();
        assert_eq!(out.losses.len(), 5);
        assert_eq!(out.results.len(), 2);
        assert_eq!(out.results[0].result.rank, None);
        assert_eq!(out.results[1].result.rank, Some(8));
        assert!(out.results.iter().all(|p| p.result.metrics.is_some()));
    }
}
