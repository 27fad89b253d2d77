#![allow(dead_code)]

use egg_core::Matrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// `n×k` matrix with orthonormal columns from the QR of a Gaussian.
pub fn orthonormal(n: usize, k: usize, rng: &mut impl Rng) -> Matrix {
    let g = to_na(&gaussian(n, k, rng));
    from_na(&g.qr().q())
}

/// `U diag(s) Vᵀ` with random orthonormal factors.
pub fn with_singular_values(rows: usize, cols: usize, s: &[f64], rng: &mut impl Rng) -> Matrix {
    let k = s.len();
    let u = to_na(&orthonormal(rows, k, rng));
    let v = to_na(&orthonormal(cols, k, rng));
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(s));
    from_na(&(u * d * v.transpose()))
}

/// Descending singular values, consecutive gaps at least `gap`, smallest
/// at least `floor`.
pub fn gapped_spectrum(k: usize, gap: f64, floor: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut s: Vec<f64> = Vec::with_capacity(k);
    let mut cur = floor + rng.random_range(0.0..0.5);
    for _ in 0..k {
        s.push(cur);
        cur += gap + rng.random_range(0.0..0.5);
    }
    s.reverse();
    s
}

/// Symmetric eigen-decomposition oracle: singular values of `m` as the
/// square roots of the eigenvalues of `mᵀm`, descending.
pub fn oracle_singular_values(m: &Matrix) -> Vec<f64> {
    let a = to_na(m);
    let gram = if a.nrows() >= a.ncols() { a.transpose() * &a } else { &a * a.transpose() };
    let mut ev: Vec<f64> = gram.symmetric_eigen().eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

pub fn permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
