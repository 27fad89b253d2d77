use serde::{Deserialize, Serialize};

use crate::error::{EggError, Result};

/// External clustering scores against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    /// Best one-to-one relabelling accuracy.
    pub accuracy: f64,
    /// Mutual information over the arithmetic mean of the entropies.
    pub nmi: f64,
    pub ari: f64,
    pub completeness: f64,
}

fn dense(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    (labels.iter().map(|l| ids.binary_search(l).expect("present")).collect(), ids.len())
}

/// Rows: predicted cluster; columns: true class.
fn contingency(pred: &[usize], truth: &[usize]) -> Vec<Vec<usize>> {
    let (p, kp) = dense(pred);
    let (t, kt) = dense(truth);
    let mut table = vec![vec![0usize; kt]; kp];
    for (a, b) in p.into_iter().zip(t) {
        table[a][b] += 1;
    }
    table
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Minimum-cost perfect matching on a square cost matrix; returns the
/// column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // potentials formulation with 1-based sentinel row/column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut owner = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let i0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = col0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        col1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assign[owner[j] - 1] = j - 1;
        }
    }
    assign
}

/// Accuracy, NMI, ARI and completeness of `pred` against `truth`.
///
/// Label values are arbitrary ids; only the partitions they induce
/// matter. Degenerate partitions follow the usual conventions: two
/// single-cluster labelings score NMI 1, and ARI is 1 when the expected
/// and maximal index coincide.
pub fn cluster_metrics(pred: &[usize], truth: &[usize]) -> Result<ClusterMetrics> {
    if pred.len() != truth.len() {
        return Err(EggError::InvalidArgument(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(EggError::InvalidArgument("metrics of an empty labeling".into()));
    }
    let n = pred.len() as f64;
    let table = contingency(pred, truth);
    let (kp, kt) = (table.len(), table[0].len());
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..kt).map(|j| table.iter().map(|r| r[j]).sum()).collect();

    let size = kp.max(kt);
    let max = table.iter().flatten().copied().max().unwrap_or(0) as f64;
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| max - table.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0) as f64)
                .collect()
        })
        .collect();
    let matched: usize = hungarian(&cost)
        .into_iter()
        .enumerate()
        .map(|(i, j)| table.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0))
        .sum();
    let accuracy = matched as f64 / n;

    let h_pred = entropy(row_sums.iter().copied(), n);
    let h_truth = entropy(col_sums.iter().copied(), n);
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (row_sums[i] as f64 * col_sums[j] as f64)).ln();
            }
        }
    }
    let mi = mi.max(0.0);
    let nmi = if h_pred == 0.0 && h_truth == 0.0 {
        1.0
    } else {
        mi / (0.5 * (h_pred + h_truth))
    };
    // completeness: 1 − H(pred | truth) / H(pred)
    let completeness = if h_pred == 0.0 { 1.0 } else { mi / h_pred };

    let pairs = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let a: f64 = row_sums.iter().map(|&c| pairs(c)).sum();
    let b: f64 = col_sums.iter().map(|&c| pairs(c)).sum();
    let expected = a * b / pairs(pred.len()).max(1.0);
    let maximum = 0.5 * (a + b);
    let ari = if maximum == expected {
        1.0
    } else {
        (index - expected) / (maximum - expected)
    };

    Ok(ClusterMetrics {
        accuracy,
        nmi: nmi.min(1.0),
        ari,
        completeness: completeness.min(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_relabelled() {
        let truth = [0, 0, 1, 1, 2, 2, 2];
        let m = cluster_metrics(&truth, &truth).unwrap();
        assert_eq!((m.accuracy, m.ari), (1.0, 1.0));
        assert!((m.nmi - 1.0).abs() < 1e-15 && (m.completeness - 1.0).abs() < 1e-15);
        let swapped = [5, 5, 0, 0, 9, 9, 9];
        assert_eq!(cluster_metrics(&swapped, &truth).unwrap(), m);
    }

    #[test]
    fn hand_example() {
        // pred {0,0,1,1}, truth {0,1,1,1}
        let m = cluster_metrics(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert_eq!(m.accuracy, 0.75);
        // pair counts: index 1, a 2, b 3, total 6
        let expected = 2.0 * 3.0 / 6.0;
        assert!((m.ari - (1.0 - expected) / (2.5 - expected)).abs() < 1e-15);
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn errors() {
        assert!(cluster_metrics(&[], &[]).is_err());
        assert!(cluster_metrics(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn single_cluster_conventions() {
        let m = cluster_metrics(&[0, 0, 0], &[1, 1, 1]).unwrap();
        assert_eq!((m.accuracy, m.nmi, m.ari, m.completeness), (1.0, 1.0, 1.0, 1.0));
        let m = cluster_metrics(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap();
        assert_eq!((m.nmi, m.completeness), (0.0, 1.0));
    }
}
