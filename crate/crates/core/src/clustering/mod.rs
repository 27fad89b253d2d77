//! Variational graph autoencoder, k-means and the Grassmann clustering
//! step, with external clustering metrics.

mod kmeans;
mod metrics;
pub mod vgae;

use serde::Serialize;

use crate::error::{EggError, Result};
use crate::grassmann::{rectify, RankPolicy, RectifyMode};
use crate::tensor::Matrix;

pub use kmeans::{kmeans, KMeansConfig, KMeansResult};
pub use metrics::{cluster_metrics, hungarian, ClusterMetrics};
pub use vgae::{decode_edge, reparameterize, train_vgae, Vgae, VgaeConfig, VgaeState};

/// Assignments and scores of one clustering.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterResult {
    pub assignment: Vec<usize>,
    #[serde(skip)]
    pub centers: Matrix,
    pub inertia: f64,
    pub metrics: Option<ClusterMetrics>,
    /// Subspace dimension kept; `None` for plain k-means.
    pub rank: Option<usize>,
    /// Share of singular-value mass in the kept directions.
    pub captured_energy: Option<f64>,
}

fn scored(run: KMeansResult, truth: Option<&[usize]>) -> Result<ClusterResult> {
    let metrics = truth.map(|t| cluster_metrics(&run.assignment, t)).transpose()?;
    Ok(ClusterResult {
        assignment: run.assignment,
        centers: run.centers,
        inertia: run.inertia,
        metrics,
        rank: None,
        captured_energy: None,
    })
}

/// k-means directly on the rows of `h`.
pub fn kmeans_cluster(h: &Matrix, cfg: KMeansConfig, truth: Option<&[usize]>) -> Result<ClusterResult> {
    scored(kmeans(h, cfg)?, truth)
}

/// How rows are presented to k-means after rectification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EggFeatures {
    /// Rows of the `n×p` basis `U_p`.
    #[default]
    Basis,
    /// Rows of the `n×n` projector `U_p U_pᵀ`. Pairwise distances match
    /// [`EggFeatures::Basis`] exactly in exact arithmetic.
    Projector,
}

/// Node-level rectification of `h` followed by k-means on the basis rows.
pub fn egg_cluster(
    h: &Matrix,
    policy: RankPolicy,
    cfg: KMeansConfig,
    features: EggFeatures,
    truth: Option<&[usize]>,
) -> Result<ClusterResult> {
    if let Some(t) = truth {
        if t.len() != h.rows() {
            return Err(EggError::InvalidArgument(format!("{} labels for {} nodes", t.len(), h.rows())));
        }
    }
    let point = rectify(h, RectifyMode::NodeLevel, policy)?;
    let rows = match features {
        EggFeatures::Basis => point.basis().clone(),
        EggFeatures::Projector => point.basis().matmul_nt(point.basis())?,
    };
    let mut out = scored(kmeans(&rows, cfg)?, truth)?;
    out.rank = Some(point.rank());
    out.captured_energy = Some(point.captured_energy()?);
    Ok(out)
}
