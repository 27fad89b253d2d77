//! Grassmann graph embedding.
//!
//! Hidden node representations produced by message-passing layers are
//! rectified to Grassmann points with a truncated SVD, embedded as
//! orthogonal projectors and consumed by graph classification and node
//! clustering pipelines. The SVD is differentiable through a stabilised
//! backward rule, so the embedding can sit inside an end-to-end model.
//!
//! Modules, bottom-up:
//!
//! - [`tensor`]: dense matrices, sparse propagation and the reverse-mode tape
//! - [`svd`]: Jacobi SVD and its clamped backward pass
//! - [`grassmann`]: rectification, projection, rank policies, geometry
//! - [`graph_data`]: graphs, dataset loaders, normalisation and splits
//! - [`gnn`]: GCN/GIN layers, pooling (including EGG), MLP heads
//! - [`training`]: Adam, losses, the early-stopping loop
//! - [`clustering`]: VGAE, k-means and clustering metrics
//! - [`experiment`]: seeded repetition protocols
//! - [`checks`]: finite-difference suites for the SVD rule and models

pub mod checks;
pub mod clustering;
pub mod error;
pub mod experiment;
pub mod gnn;
pub mod graph_data;
pub mod grassmann;
pub mod rng;
pub mod svd;
pub mod tensor;
pub mod training;

pub use error::{EggError, Result};
pub use grassmann::{GrassmannPoint, RankPolicy, RectifyMode};
pub use rng::RngService;
pub use svd::SvdFactors;
pub use tensor::{Matrix, ParamStore, Tape, Var};
pub use gnn::{Backbone, GraphClassifier, ModelConfig, PoolKind};
pub use graph_data::{Graph, GraphSet, Split};
pub use training::{RunRecord, TrainConfig};
pub use clustering::{ClusterMetrics, ClusterResult};
