use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Graph, GraphSet, Split};
use crate::error::{EggError, Result};
use crate::rng::{streams, RngService};

fn check_fractions(fractions: [f64; 3]) -> Result<()> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(EggError::InvalidArgument(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    Ok(())
}

/// Largest-remainder apportionment of `total` items.
fn apportion(total: usize, fractions: [f64; 3]) -> [usize; 3] {
    let raw = fractions.map(|f| f * total as f64);
    let mut out = raw.map(|r| (r + 1e-9).floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = raw[a] - out[a] as f64;
        let fb = raw[b] - out[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(out.iter().sum());
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[s] += 1;
        left -= 1;
    }
    out
}

/// Stratified random assignment of graphs to train/validation/test.
///
/// Split sizes follow the largest-remainder rounding of the fractions over
/// the whole set; each class contributes to each split in proportion to
/// its size, within one graph.
pub fn split_graphs(gs: &GraphSet, fractions: [f64; 3], seed: u64) -> Result<GraphSet> {
    check_fractions(fractions)?;
    let mut rng = RngService::new(seed).stream(streams::SPLIT);
    let labels = gs.labels();
    let mut members = vec![Vec::new(); gs.class_count.max(1)];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }

    let targets = apportion(gs.len(), fractions);
    let mut quota: Vec<[usize; 3]> = Vec::with_capacity(members.len());
    let mut remainders = Vec::new();
    for (c, m) in members.iter().enumerate() {
        if !m.is_empty() && m.len() < 3 {
            log::warn!("class {c} has {} graphs, fewer than the number of splits", m.len());
        }
        let raw = fractions.map(|f| f * m.len() as f64);
        let q = raw.map(|r| (r + 1e-9).floor() as usize);
        for s in 0..3 {
            remainders.push((raw[s] - q[s] as f64, c, s));
        }
        quota.push(q);
    }
    let mut class_left: Vec<usize> = members
        .iter()
        .zip(&quota)
        .map(|(m, q)| m.len() - q.iter().sum::<usize>())
        .collect();
    let mut split_left: [usize; 3] = std::array::from_fn(|s| targets[s] - quota.iter().map(|q| q[s]).sum::<usize>().min(targets[s]));
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for &(_, c, s) in &remainders {
        if class_left[c] > 0 && split_left[s] > 0 {
            quota[c][s] += 1;
            class_left[c] -= 1;
            split_left[s] -= 1;
        }
    }
    for c in 0..members.len() {
        while class_left[c] > 0 {
            let s = (0..3).find(|&s| split_left[s] > 0).unwrap_or(0);
            quota[c][s] += 1;
            class_left[c] -= 1;
            split_left[s] = split_left[s].saturating_sub(1);
        }
    }

    let mut splits = vec![Split::Train; gs.len()];
    for (m, q) in members.iter_mut().zip(&quota) {
        m.shuffle(&mut rng);
        let mut it = m.iter();
        for (s, &count) in Split::ALL.iter().zip(q) {
            for &i in it.by_ref().take(count) {
                splits[i] = *s;
            }
        }
    }
    let mut out = gs.clone();
    out.splits = splits;
    Ok(out)
}

/// Positive and negative node pairs for link-prediction training.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSplit {
    pub train_pos: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub train_neg: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
    /// The input graph restricted to training positives.
    pub train_graph: Graph,
}

fn sample_non_edges(
    n: usize,
    forbidden: &HashSet<(usize, usize)>,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, usize)>> {
    let pairs = n * n.saturating_sub(1) / 2;
    let available = pairs.saturating_sub(forbidden.len());
    if available < count {
        return Err(EggError::Data(format!(
            "graph too dense: {count} non-edges requested, {available} exist"
        )));
    }
    if 2 * count >= available {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|p| !forbidden.contains(p))
            .collect();
        let (head, _) = all.partial_shuffle(rng, count);
        return Ok(head.to_vec());
    }
    let mut taken = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u == v {
            continue;
        }
        let p = (u.min(v), u.max(v));
        if !forbidden.contains(&p) && taken.insert(p) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Partitions the undirected edges of `g` by `fractions` (train, val,
/// test) and draws as many non-edges as positives for each part.
pub fn split_edges(g: &Graph, fractions: [f64; 3], seed: u64) -> Result<EdgeSplit> {
    check_fractions(fractions)?;
    let e = g.edge_count();
    if e < 10 {
        return Err(EggError::InvalidArgument(format!("edge split needs at least 10 edges, graph has {e}")));
    }
    let mut rng = RngService::new(seed).stream(streams::EDGE_SPLIT);
    let mut edges = g.edges().to_vec();
    edges.shuffle(&mut rng);
    let n_val = (fractions[1] * e as f64 + 1e-9).floor() as usize;
    let n_test = (fractions[2] * e as f64 + 1e-9).floor() as usize;
    let n_train = e - n_val - n_test;
    let test_pos = edges.split_off(n_train + n_val);
    let val_pos = edges.split_off(n_train);
    let mut train_pos = edges;

    let forbidden: HashSet<(usize, usize)> = g.edges().iter().copied().collect();
    let mut neg = sample_non_edges(g.node_count(), &forbidden, e, &mut rng)?;
    let test_neg = neg.split_off(n_train + n_val);
    let val_neg = neg.split_off(n_train);
    let train_neg = neg;

    train_pos.sort_unstable();
    let train_graph = g.with_edges(&train_pos)?;
    Ok(EdgeSplit {
        train_pos,
        val_pos,
        test_pos,
        train_neg,
        val_neg,
        test_neg,
        train_graph,
    })
}

/// Fresh non-edges, one per training positive. Held-out positives are
/// excluded too so they never enter training as negatives.
pub(crate) fn resample_train_negatives(split: &EdgeSplit, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
    let forbidden: HashSet<(usize, usize)> = split
        .train_pos
        .iter()
        .chain(&split.val_pos)
        .chain(&split.test_pos)
        .copied()
        .collect();
    sample_non_edges(split.train_graph.node_count(), &forbidden, split.train_pos.len(), rng)
}
