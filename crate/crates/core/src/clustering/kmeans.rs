use rand::Rng;

use crate::error::{EggError, Result};
use crate::rng::{streams, RngService};
use crate::tensor::Matrix;

/// Lloyd iteration settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            restarts: 10,
            max_iter: 300,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centers: Matrix,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub trace: Vec<f64>,
    pub restart: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = sq_dist(p, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: &Matrix, k: usize, rng: &mut impl Rng) -> Matrix {
    let n = points.rows();
    let mut centers = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centers.row(c)));
        }
    }
    centers
}

fn lloyd(points: &Matrix, mut centers: Matrix, max_iter: usize) -> KMeansResult {
    let (n, d) = points.shape();
    let k = centers.rows();
    let mut assignment = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (c, dd) = nearest(points.row(i), &centers);
            dist[i] = dd;
            inertia += dd;
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        trace.push(inertia);
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, &x) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            } else {
                // reseed at the point worst served by its current center
                let far = (0..n).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
                centers.row_mut(c).copy_from_slice(points.row(far));
                dist[far] = 0.0;
            }
        }
    }
    let inertia = *trace.last().expect("at least one iteration");
    KMeansResult {
        assignment,
        centers,
        inertia,
        trace,
        restart: 0,
    }
}

/// k-means++ seeding followed by Lloyd iterations; the lowest-inertia
/// restart wins, earlier restarts winning ties.
pub fn kmeans(points: &Matrix, cfg: KMeansConfig) -> Result<KMeansResult> {
    let n = points.rows();
    if cfg.k == 0 || cfg.k > n {
        return Err(EggError::InvalidArgument(format!("k = {} for {n} points", cfg.k)));
    }
    if cfg.restarts == 0 {
        return Err(EggError::InvalidArgument("k-means needs at least one restart".into()));
    }
    points.ensure_finite("kmeans")?;
    let master = RngService::new(cfg.seed);
    let mut best: Option<KMeansResult> = None;
    for r in 0..cfg.restarts {
        let mut rng = master.derive(r as u64).stream(streams::KMEANS);
        let seeds = plus_plus(points, cfg.k, &mut rng);
        let mut run = lloyd(points, seeds, cfg.max_iter);
        run.restart = r;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}
