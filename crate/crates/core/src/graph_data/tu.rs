use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_text, Graph, GraphSet};
use crate::error::{EggError, Result};
use crate::tensor::Matrix;

/// Feature assembly switches for TU datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuOptions {
    /// Append continuous node attributes after the one-hot node labels.
    /// Attributes are always used when a dataset has no node labels.
    pub node_attributes: bool,
    /// One-hot encode discrete node labels.
    pub node_labels: bool,
}

impl Default for TuOptions {
    fn default() -> Self {
        Self {
            node_attributes: false,
            node_labels: true,
        }
    }
}

struct TextFile {
    path: PathBuf,
    body: String,
}

impl TextFile {
    fn open(path: PathBuf) -> Result<Self> {
        let body = read_text(&path)?;
        Ok(Self { path, body })
    }

    fn open_optional(path: PathBuf) -> Result<Option<Self>> {
        match Self::open(path) {
            Ok(f) => Ok(Some(f)),
            Err(EggError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> EggError {
        EggError::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }

    /// Non-empty lines with 1-based line numbers; trailing blank lines are
    /// tolerated, interior ones are not.
    fn records(&self) -> Result<Vec<(usize, &str)>> {
        let trimmed = self.body.trim_end();
        if trimmed.is_empty() {
            return Ok(Vec::new());
        }
        trimmed
            .lines()
            .enumerate()
            .map(|(i, l)| {
                let l = l.trim();
                if l.is_empty() {
                    Err(self.err(i + 1, "blank line"))
                } else {
                    Ok((i + 1, l))
                }
            })
            .collect()
    }

    fn integers(&self) -> Result<Vec<i64>> {
        self.records()?
            .into_iter()
            .map(|(n, l)| {
                l.parse::<i64>()
                    .map_err(|e| self.err(n, format!("expected integer, got {l:?}: {e}")))
            })
            .collect()
    }

    fn float_rows(&self) -> Result<Vec<Vec<f64>>> {
        let mut width = None;
        let mut out = Vec::new();
        for (n, l) in self.records()? {
            let row = l
                .split(',')
                .map(|t| {
                    let t = t.trim();
                    t.parse::<f64>()
                        .map_err(|e| self.err(n, format!("expected real, got {t:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(self.err(n, format!("ragged row: {} values, expected {w}", row.len())))
                }
                _ => {}
            }
            out.push(row);
        }
        Ok(out)
    }
}

fn dense_ids(values: &[i64]) -> (Vec<usize>, usize) {
    let ids: BTreeMap<i64, usize> = values
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    (values.iter().map(|v| ids[v]).collect(), ids.len())
}

/// Loads `<dir>/<name>_*.txt` in the TU benchmark layout.
///
/// Features are one-hot node labels, then node attributes if requested
/// (or if there are no node labels), otherwise one-hot degrees capped at
/// the dataset's maximum degree.
pub fn load_tu_dataset(dir: &Path, name: &str, opts: TuOptions) -> Result<GraphSet> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));
    let indicator_file = TextFile::open(file("graph_indicator"))?;
    let labels_file = TextFile::open(file("graph_labels"))?;
    let edges_file = TextFile::open(file("A"))?;

    let indicator = indicator_file.integers()?;
    let graph_labels = labels_file.integers()?;
    let graph_count = graph_labels.len();
    if graph_count == 0 {
        return Err(labels_file.err(1, "no graphs"));
    }

    let total = indicator.len();
    let mut graph_of = Vec::with_capacity(total);
    let mut local = Vec::with_capacity(total);
    let mut sizes = vec![0usize; graph_count];
    for (i, &g) in indicator.iter().enumerate() {
        if g < 1 || g as usize > graph_count {
            return Err(indicator_file.err(i + 1, format!("graph id {g} outside 1..={graph_count}")));
        }
        let g = g as usize - 1;
        graph_of.push(g);
        local.push(sizes[g]);
        sizes[g] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(EggError::Data(format!("graph {} has no nodes", empty + 1)));
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); graph_count];
    for (n, l) in edges_file.records()? {
        let mut parts = l.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(edges_file.err(n, format!("expected \"row, col\", got {l:?}")));
        };
        let parse = |t: &str| -> Result<usize> {
            let v: usize = t
                .parse()
                .map_err(|e| edges_file.err(n, format!("bad node id {t:?}: {e}")))?;
            if v == 0 || v > total {
                return Err(edges_file.err(n, format!("node id {v} outside 1..={total}")));
            }
            Ok(v - 1)
        };
        let (u, v) = (parse(a)?, parse(b)?);
        if graph_of[u] != graph_of[v] {
            return Err(edges_file.err(
                n,
                format!(
                    "edge joins node {} of graph {} and node {} of graph {}",
                    u + 1,
                    graph_of[u] + 1,
                    v + 1,
                    graph_of[v] + 1
                ),
            ));
        }
        edges[graph_of[u]].push((local[u], local[v]));
    }

    let mut columns: Vec<Vec<Vec<f64>>> = Vec::new();
    if opts.node_labels {
        if let Some(f) = TextFile::open_optional(file("node_labels"))? {
            let raw = f.integers()?;
            if raw.len() != total {
                return Err(f.err(raw.len() + 1, format!("{} node labels for {total} nodes", raw.len())));
            }
            let (ids, width) = dense_ids(&raw);
            columns.push(
                ids.into_iter()
                    .map(|i| {
                        let mut row = vec![0.0; width];
                        row[i] = 1.0;
                        row
                    })
                    .collect(),
            );
        }
    }
    if opts.node_attributes || columns.is_empty() {
        if let Some(f) = TextFile::open_optional(file("node_attributes"))? {
            let rows = f.float_rows()?;
            if rows.len() != total {
                return Err(f.err(rows.len() + 1, format!("{} attribute rows for {total} nodes", rows.len())));
            }
            columns.push(rows);
        }
    }
    let width: usize = columns.iter().map(|c| c[0].len()).sum();

    let (labels, class_count) = dense_ids(&graph_labels);
    let mut feats: Vec<Matrix> = sizes.iter().map(|&s| Matrix::zeros(s, width)).collect();
    for node in 0..total {
        let row = feats[graph_of[node]].row_mut(local[node]);
        let mut offset = 0;
        for block in &columns {
            let src = &block[node];
            row[offset..offset + src.len()].copy_from_slice(src);
            offset += src.len();
        }
    }

    let graphs = feats
        .into_iter()
        .zip(edges)
        .zip(&labels)
        .zip(&sizes)
        .map(|(((x, e), &y), &n)| Graph::new(n, &e, x, Some(y)))
        .collect::<Result<Vec<_>>>()?;
    let duplicates: usize = graphs.iter().map(|g| g.duplicate_edges()).sum();
    if duplicates > 0 {
        log::debug!("{name}: merged {duplicates} duplicate or reversed edges");
    }

    let gs = GraphSet::new(name, graphs, class_count)?;
    if width == 0 {
        let cap = gs.max_degree().max(1);
        return super::degree_onehot(&gs, cap);
    }
    Ok(gs)
}
