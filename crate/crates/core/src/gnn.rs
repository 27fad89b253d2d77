//! Message-passing layers, pooling and graph classifiers.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EggError, Result};
use crate::graph_data::Graph;
use crate::grassmann::{rectify_on_tape, select_rank, RankPolicy, RectifyMode};
use crate::tensor::{CsrMatrix, Matrix, ParamId, ParamStore, Tape, Var};

/// `act(Â·H·W + b)`.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub relu: bool,
}

impl GcnLayer {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, relu: bool, rng: &mut impl Rng) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), d_in, d_out, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Matrix::zeros(1, d_out)));
        Self { weight, bias, relu }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, adj: &Arc<CsrMatrix>, h: Var) -> Result<Var> {
        let w = tape.param(store, self.weight)?;
        let hw = tape.matmul(h, w)?;
        let mut out = tape.propagate(adj.clone(), hw)?;
        if let Some(b) = self.bias {
            let b = tape.param(store, b)?;
            out = tape.add_row(out, b)?;
        }
        if self.relu {
            out = tape.relu(out)?;
        }
        Ok(out)
    }
}

/// `MLP((1+ε)h_v + Σ_{u∈N(v)} h_u)` with a two-layer MLP.
#[derive(Debug, Clone)]
pub struct GinLayer {
    pub eps: f64,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    /// ReLU after the MLP.
    pub relu: bool,
}

impl GinLayer {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, eps: f64, relu: bool, rng: &mut impl Rng) -> Self {
        Self {
            eps,
            w1: store.add_glorot(format!("{name}.w1"), d_in, d_out, rng),
            b1: store.add(format!("{name}.b1"), Matrix::zeros(1, d_out)),
            w2: store.add_glorot(format!("{name}.w2"), d_out, d_out, rng),
            b2: store.add(format!("{name}.b2"), Matrix::zeros(1, d_out)),
            relu,
        }
    }

    /// `agg` must be `A + (1+ε)I` for this layer's `ε`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, agg: &Arc<CsrMatrix>, h: Var) -> Result<Var> {
        let s = tape.propagate(agg.clone(), h)?;
        let w1 = tape.param(store, self.w1)?;
        let b1 = tape.param(store, self.b1)?;
        let w2 = tape.param(store, self.w2)?;
        let b2 = tape.param(store, self.b2)?;
        let z = tape.matmul(s, w1)?;
        let z = tape.add_row(z, b1)?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, w2)?;
        let mut out = tape.add_row(z, b2)?;
        if self.relu {
            out = tape.relu(out)?;
        }
        Ok(out)
    }
}

/// Readout from node representations to one graph vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolKind {
    Sum,
    Avg,
    Max,
    Egg { policy: RankPolicy },
}

impl PoolKind {
    /// Output length for node representations of width `m`.
    pub fn output_dim(&self, m: usize) -> usize {
        match self {
            PoolKind::Egg { .. } => m * (m + 1) / 2,
            _ => m,
        }
    }
}

/// Pools `h` (n×m) to a `1×output_dim(m)` row.
///
/// For EGG the row is the upper triangle of `UUᵀ`, where `U` spans the
/// dominant column space of `Hᵀ`. A representation with no singular mass
/// at all (every entry zero) has no such subspace; it pools to zeros.
pub fn global_pool(tape: &mut Tape, kind: PoolKind, h: Var) -> Result<Var> {
    let (n, m) = tape.value(h).shape();
    if n == 0 {
        return Err(EggError::InvalidArgument("pooling an empty graph".into()));
    }
    match kind {
        PoolKind::Sum => tape.col_sum(h),
        PoolKind::Avg => tape.col_mean(h),
        PoolKind::Max => tape.col_max(h),
        PoolKind::Egg { policy } => {
            if tape.value(h).max_abs() == 0.0 {
                return tape.constant(Matrix::zeros(1, kind.output_dim(m)));
            }
            let svd = rectify_on_tape(tape, h, RectifyMode::GraphLevel, policy)?;
            let ut = tape.transpose(svd.u)?;
            let proj = tape.matmul(svd.u, ut)?;
            tape.flatten_sym(proj)
        }
    }
}

/// Layer outputs concatenated in order.
pub fn jk_aggregate(tape: &mut Tape, per_layer: &[Var]) -> Result<Var> {
    match per_layer {
        [] => Err(EggError::InvalidArgument("jk_aggregate needs at least one layer".into())),
        [one] => Ok(*one),
        many => tape.concat_cols(many),
    }
}

/// Affine layers with ReLU and inverted dropout between them.
#[derive(Debug, Clone)]
pub struct MlpHead {
    pub layers: Vec<(ParamId, ParamId)>,
    pub dropout: f64,
}

impl MlpHead {
    /// Widths `d_in → hidden… → classes`.
    pub fn new(store: &mut ParamStore, d_in: usize, hidden: &[usize], classes: usize, dropout: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(EggError::InvalidArgument(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut widths = vec![d_in];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                (
                    store.add_glorot(format!("head{i}.weight"), w[0], w[1], rng),
                    store.add(format!("head{i}.bias"), Matrix::zeros(1, w[1])),
                )
            })
            .collect();
        Ok(Self { layers, dropout })
    }

    /// Logits for each row of `x`. Dropout is applied only when `rng` is
    /// given.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, mut rng: Option<&mut dyn rand::RngCore>) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w)?;
            let bv = tape.param(store, b)?;
            h = tape.matmul(h, wv)?;
            h = tape.add_row(h, bv)?;
            if i < last {
                h = tape.relu(h)?;
                if let Some(r) = rng.as_deref_mut() {
                    h = dropout(tape, h, self.dropout, r)?;
                }
            }
        }
        Ok(h)
    }
}

/// Inverted dropout: surviving entries are scaled by `1/(1−p)`.
pub fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut dyn rand::RngCore) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.value(x).shape();
    let keep = 1.0 / (1.0 - p);
    let mask = Matrix::from_fn(r, c, |_, _| if rng.random::<f64>() < p { 0.0 } else { keep });
    let mask = tape.constant(mask)?;
    tape.hadamard(x, mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Gcn,
    Gin,
}

/// Architecture of a [`GraphClassifier`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub layers: usize,
    pub hidden: usize,
    pub pool: PoolKind,
    pub head_widths: Vec<usize>,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Gcn,
            layers: 2,
            hidden: 64,
            pool: PoolKind::Egg {
                policy: RankPolicy::EnergyThreshold(0.8),
            },
            head_widths: vec![64, 16],
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 {
            return Err(EggError::InvalidArgument("model needs at least one layer of positive width".into()));
        }
        if let PoolKind::Egg { policy } = self.pool {
            policy.validate()?;
        }
        Ok(())
    }

    /// Width of the graph representation fed to the head.
    pub fn readout_dim(&self) -> usize {
        let per_layer = self.pool.output_dim(self.hidden);
        match self.backbone {
            Backbone::Gcn => per_layer,
            Backbone::Gin => per_layer * self.layers,
        }
    }
}

#[derive(Debug, Clone)]
enum Conv {
    Gcn(GcnLayer),
    Gin(GinLayer),
}

/// Message passing, readout and MLP head.
///
/// With the GCN backbone the readout pools the last layer; with GIN every
/// layer is pooled and the results concatenated.
#[derive(Debug, Clone)]
pub struct GraphClassifier {
    config: ModelConfig,
    convs: Vec<Conv>,
    head: MlpHead,
}

impl GraphClassifier {
    pub fn new(config: ModelConfig, in_dim: usize, classes: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 || classes == 0 {
            return Err(EggError::InvalidArgument("classifier needs features and classes".into()));
        }
        let convs = (0..config.layers)
            .map(|i| {
                let d_in = if i == 0 { in_dim } else { config.hidden };
                let name = format!("conv{i}");
                match config.backbone {
                    Backbone::Gcn => Conv::Gcn(GcnLayer::new(store, &name, d_in, config.hidden, true, true, rng)),
                    Backbone::Gin => Conv::Gin(GinLayer::new(store, &name, d_in, config.hidden, 0.0, true, rng)),
                }
            })
            .collect();
        let head = MlpHead::new(store, config.readout_dim(), &config.head_widths, classes, config.dropout, rng)?;
        Ok(Self { config, convs, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Graph representation before the head, as a `1×readout_dim` row.
    pub fn readout(&self, tape: &mut Tape, store: &ParamStore, graph: &Graph) -> Result<Var> {
        let mut h = tape.constant_shared(graph.features().clone())?;
        match self.config.backbone {
            Backbone::Gcn => {
                let adj = graph.normalized_adjacency();
                for conv in &self.convs {
                    if let Conv::Gcn(l) = conv {
                        h = l.forward(tape, store, &adj, h)?;
                    }
                }
                global_pool(tape, self.config.pool, h)
            }
            Backbone::Gin => {
                let agg = Arc::new(graph.sum_aggregator(0.0));
                let mut pools = Vec::with_capacity(self.convs.len());
                for conv in &self.convs {
                    if let Conv::Gin(l) = conv {
                        h = l.forward(tape, store, &agg, h)?;
                        pools.push(global_pool(tape, self.config.pool, h)?);
                    }
                }
                jk_aggregate(tape, &pools)
            }
        }
    }

    /// `1×classes` logits. Passing `rng` switches on dropout.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, graph: &Graph, rng: Option<&mut dyn rand::RngCore>) -> Result<Var> {
        let r = self.readout(tape, store, graph)?;
        self.head.forward(tape, store, r, rng)
    }

    /// Evaluation-mode logits.
    pub fn predict(&self, store: &ParamStore, graph: &Graph) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let y = self.forward(&mut tape, store, graph, None)?;
        Ok(tape.value(y).as_slice().to_vec())
    }

    /// Evaluation-mode graph representation.
    pub fn embed(&self, store: &ParamStore, graph: &Graph) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let r = self.readout(&mut tape, store, graph)?;
        Ok(tape.value(r).as_slice().to_vec())
    }
}

/// Pooled row for a plain matrix, outside any model.
pub fn pool_matrix(kind: PoolKind, h: &Matrix) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(h.clone())?;
    let y = global_pool(&mut tape, kind, x)?;
    Ok(tape.value(y).as_slice().to_vec())
}

/// Rank the EGG readout of `h` would keep.
pub fn egg_rank(h: &Matrix, policy: RankPolicy) -> Result<usize> {
    let f = crate::svd::svd_full(&h.transpose())?;
    select_rank(&f.s, policy, h.cols())
}
