use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_text, Graph};
use crate::error::{EggError, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CitationOptions {
    /// Scale each feature row to sum to one.
    pub row_normalize: bool,
}

/// Bookkeeping from parsing the citation list.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CitationStats {
    pub citation_lines: usize,
    pub unknown_ids: usize,
    pub self_citations: usize,
    pub duplicate_edges: usize,
}

/// A citation network with per-node class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CitationDataset {
    pub graph: Graph,
    pub node_ids: Vec<String>,
    pub class_names: Vec<String>,
    pub stats: CitationStats,
}

impl CitationDataset {
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> &[usize] {
        self.graph.node_labels().expect("citation graphs carry node labels")
    }
}

/// Loads a `.content` / `.cites` pair.
pub fn load_citation(content: &Path, cites: &Path, opts: CitationOptions) -> Result<CitationDataset> {
    let c = read_text(content)?;
    let e = read_text(cites)?;
    parse_citation(&c, content, &e, cites, opts)
}

pub(crate) fn parse_citation(
    content: &str,
    content_path: &Path,
    cites: &str,
    cites_path: &Path,
    opts: CitationOptions,
) -> Result<CitationDataset> {
    let perr = |path: &Path, line: usize, msg: String| EggError::Parse {
        path: PathBuf::from(path),
        line,
        msg,
    };

    let mut ids = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut raw_labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(perr(content_path, n, "empty feature row".into()));
        }
        let id = fields[0].to_string();
        if index.insert(id.clone(), ids.len()).is_some() {
            return Err(perr(content_path, n, format!("duplicate node id {id:?}")));
        }
        let feats = fields[1..fields.len() - 1]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| perr(content_path, n, format!("bad feature {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != feats.len() {
                return Err(perr(
                    content_path,
                    n,
                    format!("{} features, expected {}", feats.len(), first.len()),
                ));
            }
        }
        ids.push(id);
        raw_labels.push(fields[fields.len() - 1].to_string());
        rows.push(feats);
    }
    if ids.is_empty() {
        return Err(EggError::Data(format!("{}: no nodes", content_path.display())));
    }

    let class_names: Vec<String> = raw_labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| class_names.binary_search(l).expect("label collected above"))
        .collect();

    let mut stats = CitationStats::default();
    let mut edges = Vec::new();
    for (i, line) in cites.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        stats.citation_lines += 1;
        let mut parts = line.split('\t').map(str::trim);
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(perr(cites_path, i + 1, format!("expected two tab-separated ids, got {line:?}")));
        };
        match (index.get(a), index.get(b)) {
            (Some(&u), Some(&v)) if u == v => stats.self_citations += 1,
            (Some(&u), Some(&v)) => edges.push((u, v)),
            _ => stats.unknown_ids += 1,
        }
    }
    if stats.unknown_ids > 0 {
        log::warn!(
            "{}: skipped {} citations naming unknown ids",
            cites_path.display(),
            stats.unknown_ids
        );
    }

    let n = ids.len();
    let d = rows[0].len();
    let mut x = Matrix::zeros(n, d);
    for (i, r) in rows.iter().enumerate() {
        let total: f64 = r.iter().sum();
        let scale = if opts.row_normalize && total != 0.0 { 1.0 / total } else { 1.0 };
        for (dst, &v) in x.row_mut(i).iter_mut().zip(r) {
            *dst = v * scale;
        }
    }
    let graph = Graph::new(n, &edges, x, None)?.with_node_labels(labels)?;
    stats.duplicate_edges = graph.duplicate_edges();
    Ok(CitationDataset {
        graph,
        node_ids: ids,
        class_names,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(content: &str, cites: &str, opts: CitationOptions) -> Result<CitationDataset> {
        parse_citation(content, Path::new("t.content"), cites, Path::new("t.cites"), opts)
    }

    #[test]
    fn toy_network() {
        let content = "a\t1\t0\tX\nb\t0\t1\tY\nc\t1\t1\tX\n";
        let cites = "a\tb\nb\ta\nc\tb\nq\ta\nc\tc\n";
        let ds = parse(content, cites, CitationOptions::default()).unwrap();
        assert_eq!(ds.graph.node_count(), 3);
        assert_eq!(ds.graph.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.class_names, vec!["X", "Y"]);
        assert_eq!(
            ds.stats,
            CitationStats {
                citation_lines: 5,
                unknown_ids: 1,
                self_citations: 1,
                duplicate_edges: 1
            }
        );
        let adj = ds.graph.sum_aggregator(-1.0).to_dense();
        assert_eq!(adj, Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]));

        let norm = parse(content, cites, CitationOptions { row_normalize: true }).unwrap();
        assert_eq!(norm.graph.features().row(2), &[0.5, 0.5]);
    }

    #[test]
    fn malformed_content() {
        assert!(matches!(
            parse("a\t1\tX\na\t0\tY\n", "", CitationOptions::default()),
            Err(EggError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse("a\tX\n", "", CitationOptions::default()),
            Err(EggError::Parse { line: 1, .. })
        ));
    }
}
