mod common;

use common::*;
use egg_core::graph_data::synthetic::{graph_set, GraphSetSpec};
use egg_core::graph_data::split_graphs;
use egg_core::training::{adam_step, evaluate, train_classifier, Adam};
use egg_core::{Backbone, GraphClassifier, GraphSet, Matrix, ModelConfig, ParamStore, PoolKind, RankPolicy, Tape, TrainConfig};

fn small_model(backbone: Backbone) -> ModelConfig {
    ModelConfig {
        backbone,
        layers: 2,
        hidden: 8,
        pool: PoolKind::Egg { policy: RankPolicy::EnergyThreshold(0.8) },
        head_widths: vec![16],
        dropout: 0.0,
    }
}

fn fixture(graphs: usize, seed: u64) -> GraphSet {
    let spec = GraphSetSpec { graphs, ..GraphSetSpec::default() };
    graph_set(spec, seed).unwrap()
}

/// Full-batch Adam over every graph; returns the per-epoch mean loss.
fn overfit(gs: &GraphSet, backbone: Backbone, epochs: usize) -> (GraphClassifier, ParamStore, Vec<f64>) {
    let mut init = rng(81);
    let mut store = ParamStore::new();
    let model = GraphClassifier::new(small_model(backbone), gs.feature_dim(), gs.class_count, &mut store, &mut init).unwrap();
    let labels = gs.labels();
    let mut losses = Vec::new();
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let rows: Vec<_> = gs.graphs.iter().map(|g| model.forward(&mut tape, &store, g, None).unwrap()).collect();
        let logits = tape.concat_rows(&rows).unwrap();
        let loss = tape.softmax_cross_entropy(logits, &labels).unwrap();
        losses.push(tape.scalar(loss));
        let grads = tape.backward(loss).unwrap();
        adam_step(&mut store, &tape.param_grads(&grads), Adam::new(0.01)).unwrap();
    }
    (model, store, losses)
}

#[test]
fn ten_graphs_are_memorised() {
    let gs = fixture(10, 3);
    for backbone in [Backbone::Gcn, Backbone::Gin] {
        let (model, store, losses) = overfit(&gs, backbone, 200);
        let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(best < 0.01, "{backbone:?}: final {} best {best}", losses.last().unwrap());
        let all: Vec<usize> = (0..gs.len()).collect();
        let (_, acc) = evaluate(&model, &store, &gs, &all).unwrap();
        assert_eq!(acc, 1.0);
    }
}

#[test]
fn evaluation_ignores_graph_order() {
    let gs = fixture(20, 4);
    let (model, store, _) = overfit(&gs, Backbone::Gcn, 5);
    let order: Vec<usize> = (0..gs.len()).collect();
    let a = evaluate(&model, &store, &gs, &order).unwrap();
    let b = evaluate(&model, &store, &gs, &permutation(order.len(), &mut rng(5))).unwrap();
    assert!((a.0 - b.0).abs() < 1e-12);
    assert_eq!(a.1, b.1);
}

#[test]
fn constant_predictor_scores_the_majority_share() {
    let gs = fixture(20, 5);
    let mut store = ParamStore::new();
    let model = GraphClassifier::new(small_model(Backbone::Gcn), gs.feature_dim(), 2, &mut store, &mut rng(6)).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        let (r, c) = store.value(id).shape();
        *store.value_mut(id) = Matrix::zeros(r, c);
    }
    let all: Vec<usize> = (0..gs.len()).collect();
    let (loss, acc) = evaluate(&model, &store, &gs, &all).unwrap();
    assert_eq!(acc, 0.5);
    assert!((loss - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn training_learns_synthetic_classes_and_is_reproducible() {
    let gs = split_graphs(&fixture(80, 7), [0.8, 0.1, 0.1], 7).unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 16,
        max_epochs: 60,
        patience: 20,
        seed: 7,
        ..TrainConfig::default()
    };
    let a = train_classifier(&gs, &small_model(Backbone::Gcn), &cfg).unwrap();
    let b = train_classifier(&gs, &small_model(Backbone::Gcn), &cfg).unwrap();
    assert_eq!(a.record.epochs, b.record.epochs);
    assert_eq!((a.record.best_epoch, a.record.test_loss), (b.record.best_epoch, b.record.test_loss));
    let first = a.record.epochs[0].train_loss;
    let best = a.record.epochs.iter().map(|e| e.train_loss).fold(f64::INFINITY, f64::min);
    assert!(best < first);
    assert!(a.record.test_acc >= 0.75, "test accuracy {}", a.record.test_acc);
}
