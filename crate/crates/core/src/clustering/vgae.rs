use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{EggError, Result};
use crate::gnn::GcnLayer;
use crate::graph_data::{resample_train_negatives, EdgeSplit};
use crate::rng::{streams, RngService};
use crate::tensor::{CsrMatrix, Matrix, ParamStore, Tape, Var};
use crate::training::{adam_step, Adam};

/// Bounds applied to `log σ` before exponentiation.
pub const LOG_STD_CLAMP: (f64, f64) = (-20.0, 20.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VgaeConfig {
    pub hidden: usize,
    pub latent: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Reconstruct every entry of `A + I` with class-balanced weights
    /// instead of sampled pairs. Memory grows as n².
    pub full_matrix: bool,
    pub seed: u64,
}

impl Default for VgaeConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            latent: 16,
            epochs: 200,
            learning_rate: 0.01,
            full_matrix: false,
            seed: 0,
        }
    }
}

/// Largest graph accepted with [`VgaeConfig::full_matrix`].
pub const FULL_MATRIX_MAX_NODES: usize = 5000;

/// Shared ReLU GCN layer followed by linear GCN heads for `μ` and `log σ`.
#[derive(Debug, Clone)]
pub struct Vgae {
    pub shared: GcnLayer,
    pub mu: GcnLayer,
    pub log_std: GcnLayer,
}

impl Vgae {
    pub fn new(store: &mut ParamStore, in_dim: usize, hidden: usize, latent: usize, rng: &mut impl Rng) -> Self {
        Self {
            shared: GcnLayer::new(store, "enc.shared", in_dim, hidden, true, true, rng),
            mu: GcnLayer::new(store, "enc.mu", hidden, latent, true, false, rng),
            log_std: GcnLayer::new(store, "enc.log_std", hidden, latent, true, false, rng),
        }
    }
}

/// `(μ, log σ)` nodes; `log σ` is clamped to [`LOG_STD_CLAMP`].
pub fn vgae_encode(tape: &mut Tape, model: &Vgae, store: &ParamStore, adj: &Arc<CsrMatrix>, x: Var) -> Result<(Var, Var)> {
    let h = model.shared.forward(tape, store, adj, x)?;
    let mu = model.mu.forward(tape, store, adj, h)?;
    let ls = model.log_std.forward(tape, store, adj, h)?;
    let ls = tape.clamp(ls, LOG_STD_CLAMP.0, LOG_STD_CLAMP.1)?;
    Ok((mu, ls))
}

/// `Z = μ + exp(log σ) ⊙ η` with standard normal `η`.
pub fn reparameterize(mu: &Matrix, log_std: &Matrix, rng: &mut impl Rng) -> Result<Matrix> {
    if mu.shape() != log_std.shape() {
        return Err(EggError::shape("reparameterize", mu.shape(), log_std.shape()));
    }
    let mut z = mu.clone();
    for (z, &ls) in z.as_mut_slice().iter_mut().zip(log_std.as_slice()) {
        let eta: f64 = rng.sample(StandardNormal);
        *z += ls.clamp(LOG_STD_CLAMP.0, LOG_STD_CLAMP.1).exp() * eta;
    }
    Ok(z)
}

/// `σ(z_i·z_j)`.
pub fn decode_edge(z: &Matrix, i: usize, j: usize) -> f64 {
    let d: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum();
    crate::tensor::tape::sigmoid(d)
}

/// The two halves of the negative evidence lower bound.
#[derive(Debug, Clone, Copy)]
pub struct ElboTerms {
    pub loss: Var,
    pub reconstruction: Var,
    pub kl: Var,
}

/// `KL(q ‖ N(0, I)) / n` for diagonal Gaussians.
pub fn kl_term(tape: &mut Tape, mu: Var, log_std: Var) -> Result<Var> {
    let (n, d) = tape.value(mu).shape();
    let two_ls = tape.scale(log_std, 2.0)?;
    let var = tape.exp(two_ls)?;
    let mu2 = tape.hadamard(mu, mu)?;
    let s_ls = tape.sum(two_ls)?;
    let s_mu = tape.sum(mu2)?;
    let s_var = tape.sum(var)?;
    let t = tape.sub(s_ls, s_mu)?;
    let t = tape.sub(t, s_var)?;
    let t = tape.scale(t, -0.5 / n as f64)?;
    let c = tape.constant(Matrix::scalar(-0.5 * d as f64))?;
    tape.add(t, c)
}

/// Negative ELBO with a reconstruction term over `positives` (target 1)
/// and `negatives` (target 0).
#[allow(clippy::too_many_arguments)]
pub fn elbo_loss(
    tape: &mut Tape,
    model: &Vgae,
    store: &ParamStore,
    adj: &Arc<CsrMatrix>,
    x: Var,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
    rng: &mut impl Rng,
) -> Result<ElboTerms> {
    let (mu, ls) = vgae_encode(tape, model, store, adj, x)?;
    let z = sample_latent(tape, mu, ls, rng)?;
    let pairs: Arc<[(usize, usize)]> = positives.iter().chain(negatives).copied().collect();
    let logits = tape.pair_dot(z, pairs)?;
    let targets: Vec<f64> = std::iter::repeat_n(1.0, positives.len())
        .chain(std::iter::repeat_n(0.0, negatives.len()))
        .collect();
    let reconstruction = tape.bce_with_logits(logits, &targets)?;
    finish(tape, reconstruction, mu, ls)
}

fn sample_latent(tape: &mut Tape, mu: Var, ls: Var, rng: &mut impl Rng) -> Result<Var> {
    let (n, d) = tape.value(mu).shape();
    let eta = Matrix::from_fn(n, d, |_, _| rng.sample(StandardNormal));
    let eta = tape.constant(eta)?;
    let sigma = tape.exp(ls)?;
    let noise = tape.hadamard(sigma, eta)?;
    tape.add(mu, noise)
}

fn finish(tape: &mut Tape, reconstruction: Var, mu: Var, ls: Var) -> Result<ElboTerms> {
    let kl = kl_term(tape, mu, ls)?;
    let loss = tape.add(reconstruction, kl)?;
    let v = tape.scalar(loss);
    if !v.is_finite() {
        return Err(EggError::Diverged(format!("ELBO is {v}")));
    }
    Ok(ElboTerms { loss, reconstruction, kl })
}

/// Negative ELBO reconstructing every entry of `A + I`, positives weighted
/// by the non-edge/edge ratio and the mean rescaled as in the reference
/// autoencoder.
pub fn elbo_loss_full(
    tape: &mut Tape,
    model: &Vgae,
    store: &ParamStore,
    adj: &Arc<CsrMatrix>,
    x: Var,
    edges: &[(usize, usize)],
    rng: &mut impl Rng,
) -> Result<ElboTerms> {
    let (mu, ls) = vgae_encode(tape, model, store, adj, x)?;
    let n = tape.value(mu).rows();
    if n > FULL_MATRIX_MAX_NODES {
        return Err(EggError::InvalidArgument(format!(
            "full-matrix reconstruction is limited to {FULL_MATRIX_MAX_NODES} nodes, graph has {n}"
        )));
    }
    let z = sample_latent(tape, mu, ls, rng)?;
    let zt = tape.transpose(z)?;
    let logits = tape.matmul(z, zt)?;
    let mut targets = vec![0.0; n * n];
    for i in 0..n {
        targets[i * n + i] = 1.0;
    }
    for &(u, v) in edges {
        targets[u * n + v] = 1.0;
        targets[v * n + u] = 1.0;
    }
    let ones: f64 = targets.iter().sum();
    let total = (n * n) as f64;
    let pos_weight = (total - ones) / ones;
    let norm = total / (2.0 * (total - ones)).max(1.0);
    let bce = tape.weighted_bce_with_logits(logits, &targets, pos_weight.max(f64::MIN_POSITIVE))?;
    let reconstruction = tape.scale(bce, norm)?;
    finish(tape, reconstruction, mu, ls)
}

/// A trained autoencoder and its latent means.
#[derive(Debug, Clone)]
pub struct VgaeState {
    pub model: Vgae,
    pub store: ParamStore,
    /// `μ` on the training adjacency; the node representation `H`.
    pub mu: Matrix,
    pub log_std: Matrix,
    pub losses: Vec<f64>,
}

impl VgaeState {
    /// Mean decoded probability over `pairs`, using `μ` as the latent.
    pub fn mean_score(&self, pairs: &[(usize, usize)]) -> f64 {
        if pairs.is_empty() {
            return f64::NAN;
        }
        pairs.iter().map(|&(i, j)| decode_edge(&self.mu, i, j)).sum::<f64>() / pairs.len() as f64
    }
}

/// Full-batch Adam on the negative ELBO, fresh negatives every epoch.
pub fn train_vgae(split: &EdgeSplit, cfg: &VgaeConfig) -> Result<VgaeState> {
    if cfg.hidden == 0 || cfg.latent == 0 || cfg.epochs == 0 || !(cfg.learning_rate > 0.0) {
        return Err(EggError::InvalidArgument(format!("invalid autoencoder config {cfg:?}")));
    }
    let g = &split.train_graph;
    let rngs = RngService::new(cfg.seed);
    let mut init = rngs.stream(streams::INIT);
    let mut neg_rng = rngs.stream(streams::NEGATIVES);
    let mut noise = rngs.stream(streams::REPARAM);

    let mut store = ParamStore::new();
    let model = Vgae::new(&mut store, g.feature_dim(), cfg.hidden, cfg.latent, &mut init);
    let adj = g.normalized_adjacency();
    let opt = Adam::new(cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let x = tape.constant_shared(g.features().clone())?;
        let terms = if cfg.full_matrix {
            elbo_loss_full(&mut tape, &model, &store, &adj, x, g.edges(), &mut noise)
        } else {
            let negatives = if epoch == 0 {
                split.train_neg.clone()
            } else {
                resample_train_negatives(split, &mut neg_rng)?
            };
            elbo_loss(&mut tape, &model, &store, &adj, x, &split.train_pos, &negatives, &mut noise)
        }
        .map_err(|e| match e {
            EggError::NonFinite(op) => EggError::Diverged(format!("non-finite {op} at epoch {}", epoch + 1)),
            EggError::Diverged(m) => EggError::Diverged(format!("{m} at epoch {}", epoch + 1)),
            other => other,
        })?;
        losses.push(tape.scalar(terms.loss));
        let grads = tape.backward(terms.loss)?;
        adam_step(&mut store, &tape.param_grads(&grads), opt)?;
    }

    let mut tape = Tape::new();
    let x = tape.constant_shared(g.features().clone())?;
    let (mu, ls) = vgae_encode(&mut tape, &model, &store, &adj, x)?;
    Ok(VgaeState {
        mu: tape.value(mu).clone(),
        log_std: tape.value(ls).clone(),
        model,
        store,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_data::{split_edges, synthetic, Graph};
    use crate::tensor::finite_diff_params;

    #[test]
    fn zero_weights_give_zero_latents() {
        let g = Graph::new(3, &[(0, 1)], Matrix::ones(3, 2), None).unwrap();
        let mut store = ParamStore::new();
        let mut rng = RngService::new(0).stream(0);
        let model = Vgae::new(&mut store, 2, 4, 2, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            let (r, c) = store.value(id).shape();
            *store.value_mut(id) = Matrix::zeros(r, c);
        }
        let mut t = Tape::new();
        let x = t.constant_shared(g.features().clone()).unwrap();
        let (mu, ls) = vgae_encode(&mut t, &model, &store, &g.normalized_adjacency(), x).unwrap();
        assert_eq!(t.value(mu), &Matrix::zeros(3, 2));
        assert_eq!(t.value(ls), &Matrix::zeros(3, 2));
        let kl = kl_term(&mut t, mu, ls).unwrap();
        assert_eq!(t.scalar(kl), 0.0);
    }

    #[test]
    fn reparameterisation() {
        let mu = Matrix::from_rows(&[[1.0, -2.0]]);
        let tiny = Matrix::filled(1, 2, -1e3);
        let mut rng = RngService::new(1).stream(streams::REPARAM);
        let z = reparameterize(&mu, &tiny, &mut rng).unwrap();
        assert!(z.sub(&mu).unwrap().max_abs() < 1e-8);
        let a = reparameterize(&mu, &Matrix::zeros(1, 2), &mut RngService::new(2).stream(6)).unwrap();
        let b = reparameterize(&mu, &Matrix::zeros(1, 2), &mut RngService::new(2).stream(6)).unwrap();
        assert_eq!(a, b);
        assert!(reparameterize(&mu, &Matrix::zeros(2, 2), &mut rng).is_err());
    }

    #[test]
    fn monte_carlo_mean() {
        let mu = Matrix::from_rows(&[[0.7, -1.3]]);
        let ls = Matrix::from_rows(&[[0.0, 0.5f64.ln()]]);
        let mut rng = RngService::new(3).stream(0);
        let draws = 100_000;
        let mut acc = [0.0; 2];
        for _ in 0..draws {
            let z = reparameterize(&mu, &ls, &mut rng).unwrap();
            acc[0] += z[(0, 0)];
            acc[1] += z[(0, 1)];
        }
        for (j, sd) in [(0, 1.0), (1, 0.5)] {
            let se = sd / (draws as f64).sqrt();
            assert!((acc[j] / draws as f64 - mu[(0, j)]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn decoder_values() {
        let z = Matrix::from_rows(&[[1.0, 0.0], [0.0, 2.0], [3.0f64.sqrt(), 1.0]]);
        assert_eq!(decode_edge(&z, 0, 1), 0.5);
        let same = Matrix::from_rows(&[[3.0, 1.0], [3.0, 1.0]]);
        assert!((decode_edge(&same, 0, 1) - 1.0 / (1.0 + (-10f64).exp())).abs() < 1e-15);
        assert_eq!(decode_edge(&z, 1, 2), decode_edge(&z, 2, 1));
    }

    fn toy() -> (Graph, ParamStore, Vgae) {
        let x = Matrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64 * 0.61).sin());
        let g = Graph::new(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)], x, None).unwrap();
        let mut store = ParamStore::new();
        let mut rng = RngService::new(9).stream(0);
        let model = Vgae::new(&mut store, 3, 4, 2, &mut rng);
        (g, store, model)
    }

    #[test]
    fn elbo_gradient() {
        let (g, store, model) = toy();
        let adj = g.normalized_adjacency();
        for full in [false, true] {
            let report = finite_diff_params(
                &store,
                |t, s| {
                    let x = t.constant_shared(g.features().clone())?;
                    let mut rng = RngService::new(4).stream(streams::REPARAM);
                    let terms = if full {
                        elbo_loss_full(t, &model, s, &adj, x, g.edges(), &mut rng)?
                    } else {
                        elbo_loss(t, &model, s, &adj, x, &[(0, 1), (2, 3)], &[(0, 2), (1, 4)], &mut rng)?
                    };
                    Ok(terms.loss)
                },
                1e-4,
            )
            .unwrap();
            assert!(report.max_relative_error < 1e-4, "full={full}: {}", report.max_relative_error);
        }
    }

    #[test]
    fn training_separates_held_out_edges() {
        let ds = synthetic::planted_partition(synthetic::PartitionSpec::default(), 3).unwrap();
        let split = split_edges(&ds.graph, [0.85, 0.05, 0.10], 3).unwrap();
        let cfg = VgaeConfig {
            epochs: 60,
            ..VgaeConfig::default()
        };
        let state = train_vgae(&split, &cfg).unwrap();
        assert!(state.losses[9] < state.losses[0]);
        assert!(state.mean_score(&split.test_pos) > state.mean_score(&split.test_neg));
        let again = train_vgae(&split, &cfg).unwrap();
        assert_eq!(again.mu, state.mu);
    }
}
