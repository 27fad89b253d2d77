//! Thin singular value decomposition and its reverse-mode rule.
//!
//! The forward pass is a one-sided (Hestenes) Jacobi iteration on the
//! taller orientation of the input. The backward pass implements the
//! three-term adjoint formula for `M = U·diag(S)·Vᵀ`:
//!
//! ```text
//! ∇M = U [ (F∘(UᵀŪ − ŪᵀU))·S + S·(F∘(VᵀV̄ − V̄ᵀV)) + diag(S̄) ] Vᵀ
//!    + (I − UUᵀ) Ū S⁻¹ Vᵀ + U S⁻¹ V̄ᵀ (I − VVᵀ)
//! ```
//!
//! with `F_ij = 1/(s_j² − s_i²)` off the diagonal. Singular values are
//! clamped from below by `ε` wherever they are inverted, so inputs with
//! vanishing singular values still produce finite gradients.

use crate::error::{EggError, Result};
use crate::tensor::matrix::dot;
use crate::tensor::Matrix;

/// Default lower clamp applied to singular values in the backward pass.
pub const DEFAULT_EPSILON: f64 = 1e-12;
/// Smallest magnitude allowed for `s_j² − s_i²` when forming `F`.
pub const F_DENOMINATOR_FLOOR: f64 = 1e-9;

const MAX_SWEEPS: usize = 100;
const CONVERGENCE_TOL: f64 = 1e-12;
const ROTATION_TOL: f64 = 1e-15;

/// Thin factors `M = U·diag(S)·Vᵀ`, singular values descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Keeps the leading `p` singular triples.
    pub fn truncate(&self, p: usize) -> Result<SvdFactors> {
        if p == 0 || p > self.rank() {
            return Err(EggError::InvalidArgument(format!(
                "truncation rank {p} outside 1..={}",
                self.rank()
            )));
        }
        Ok(SvdFactors {
            u: self.u.leading_columns(p),
            s: self.s[..p].to_vec(),
            v: self.v.leading_columns(p),
        })
    }

    /// `U·diag(S)·Vᵀ`
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.s.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul_nt(&self.v).expect("factor shapes agree")
    }
}

/// Thin SVD with `k = min(m, n)`.
///
/// Sign convention: the largest-magnitude entry of every column of `U` is
/// positive (lowest row index wins ties); `V` is flipped alongside.
pub fn svd_full(m: &Matrix) -> Result<SvdFactors> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(EggError::InvalidArgument("svd of an empty matrix".into()));
    }
    m.ensure_finite("svd")?;
    let mut factors = if rows >= cols {
        jacobi_tall(m)?
    } else {
        let t = jacobi_tall(&m.transpose())?;
        SvdFactors {
            u: t.v,
            s: t.s,
            v: t.u,
        }
    };
    apply_sign_convention(&mut factors);
    Ok(factors)
}

/// One-sided Jacobi on a matrix with at least as many rows as columns.
///
/// Clearly tall inputs are first reduced to their square triangular
/// factor, so the rotations act on vectors of length `cols`.
fn jacobi_tall(a: &Matrix) -> Result<SvdFactors> {
    let (rows, cols) = a.shape();
    if rows > cols + cols / 4 {
        let (q, r) = householder_qr(a);
        let inner = jacobi_square(&r, rows)?;
        return Ok(SvdFactors {
            u: q.matmul(&inner.u)?,
            s: inner.s,
            v: inner.v,
        });
    }
    jacobi_square(a, rows)
}

/// Thin Householder QR of a tall matrix: `Q` is `rows×cols` with
/// orthonormal columns and `R` is `cols×cols` upper triangular.
fn householder_qr(a: &Matrix) -> (Matrix, Matrix) {
    let (rows, cols) = a.shape();
    let mut work: Vec<Vec<f64>> = (0..cols).map(|j| a.column(j)).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for k in 0..cols {
        let x = &work[k][k..];
        let scale = x.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
        if scale == 0.0 {
            reflectors.push(vec![0.0; rows - k]);
            continue;
        }
        // scaled so tiny columns do not underflow when squared
        let mut v: Vec<f64> = x.iter().map(|e| e / scale).collect();
        let norm = dot(&v, &v).sqrt();
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vn = dot(&v, &v).sqrt();
        if vn > 0.0 {
            v.iter_mut().for_each(|e| *e /= vn);
            for col in work.iter_mut().skip(k) {
                let tail = &mut col[k..];
                let proj = 2.0 * dot(&v, tail);
                for (t, e) in tail.iter_mut().zip(&v) {
                    *t -= proj * e;
                }
            }
        }
        reflectors.push(v);
    }
    let r = Matrix::from_fn(cols, cols, |i, j| if i <= j { work[j][i] } else { 0.0 });
    let mut q_cols: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; rows];
            e[j] = 1.0;
            e
        })
        .collect();
    for (k, v) in reflectors.iter().enumerate().rev() {
        for col in q_cols.iter_mut().skip(k) {
            let tail = &mut col[k..];
            let proj = 2.0 * dot(v, tail);
            for (t, e) in tail.iter_mut().zip(v) {
                *t -= proj * e;
            }
        }
    }
    let q = Matrix::from_fn(rows, cols, |i, j| q_cols[j][i]);
    (q, r)
}

/// Hestenes iteration proper. `reported_rows` only labels errors.
fn jacobi_square(a: &Matrix, reported_rows: usize) -> Result<SvdFactors> {
    let (rows, cols) = a.shape();
    let mut work: Vec<Vec<f64>> = (0..cols).map(|j| a.column(j)).collect();
    let mut rot: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    // columns below this squared norm are rounding residue of a rank
    // deficiency; rotating against them never settles
    let negligible = (cols as f64 * f64::EPSILON * a.frobenius_norm()).powi(2);
    let mut converged = cols == 1;
    let mut off = 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        off = 0.0_f64;
        // squared norms, refreshed each sweep and updated per rotation
        let mut norms: Vec<f64> = work.iter().map(|c| dot(c, c)).collect();
        for i in 0..cols - 1 {
            for j in i + 1..cols {
                let (alpha, beta) = (norms[i], norms[j]);
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&work[i], &work[j]);
                if gamma == 0.0 {
                    continue;
                }
                let ratio = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                off = off.max(ratio);
                if ratio <= ROTATION_TOL {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut work, i, j, c, s);
                rotate(&mut rot, i, j, c, s);
                norms[i] = alpha - t * gamma;
                norms[j] = beta + t * gamma;
            }
        }
        converged = off < CONVERGENCE_TOL;
    }
    if !converged {
        let norms: Vec<f64> = work.iter().map(|c| dot(c, c).sqrt()).collect();
        let max = norms.iter().cloned().fold(0.0, f64::max);
        let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(EggError::Decomposition {
            sweeps,
            rows: reported_rows,
            cols,
            off_diagonal: off,
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        });
    }

    let mut order: Vec<(usize, f64)> = work
        .iter()
        .enumerate()
        .map(|(j, c)| (j, dot(c, c).sqrt()))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut u = Matrix::zeros(rows, cols);
    let mut v = Matrix::zeros(cols, cols);
    let mut s = Vec::with_capacity(cols);
    for (dst, &(src, sigma)) in order.iter().enumerate() {
        s.push(sigma);
        if sigma > 0.0 {
            let col: Vec<f64> = work[src].iter().map(|x| x / sigma).collect();
            u.set_column(dst, &col);
        }
        v.set_column(dst, &rot[src]);
    }
    orthonormalize_columns(&mut u);
    Ok(SvdFactors { u, s, v })
}

fn rotate(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(j);
    let (ci, cj) = (&mut left[i], &mut right[0]);
    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Modified Gram–Schmidt with one re-orthogonalisation pass, in column
/// order. Columns that collapse (zero singular values) are replaced by the
/// standard basis vector with the largest component outside the span of
/// the columns before it.
fn orthonormalize_columns(u: &mut Matrix) {
    let (rows, cols) = u.shape();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for j in 0..cols {
        let original = u.column(j);
        let norm0 = dot(&original, &original).sqrt();
        let mut col = original;
        for _ in 0..2 {
            for b in &basis {
                let proj = dot(b, &col);
                for (x, y) in col.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let norm = dot(&col, &col).sqrt();
        if norm0 > 0.0 && norm > 0.5 * norm0 {
            col.iter_mut().for_each(|x| *x /= norm);
        } else {
            let mut best: Option<(f64, Vec<f64>)> = None;
            for e in 0..rows {
                let mut cand = vec![0.0; rows];
                cand[e] = 1.0;
                for _ in 0..2 {
                    for b in &basis {
                        let proj = dot(b, &cand);
                        for (x, y) in cand.iter_mut().zip(b) {
                            *x -= proj * y;
                        }
                    }
                }
                let n = dot(&cand, &cand).sqrt();
                if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
                    best = Some((n, cand));
                }
            }
            let (n, cand) = best.expect("at least one row");
            col = cand.into_iter().map(|x| x / n).collect();
        }
        u.set_column(j, &col);
        basis.push(col);
    }
}

fn apply_sign_convention(f: &mut SvdFactors) {
    for j in 0..f.rank() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..f.u.rows() {
            let a = f.u[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if f.u[(best, j)] < 0.0 {
            for i in 0..f.u.rows() {
                f.u[(i, j)] = -f.u[(i, j)];
            }
            for i in 0..f.v.rows() {
                f.v[(i, j)] = -f.v[(i, j)];
            }
        }
    }
}

/// `S_new = S` where `S > ε`, else `ε`.
pub fn clamp_singular(s: &[f64], eps: f64) -> Vec<f64> {
    s.iter().map(|&v| if v > eps { v } else { eps }).collect()
}

/// Intermediate quantities of the backward pass.
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    /// `F_ij = 1/(s_j² − s_i²)`, zero diagonal, antisymmetric.
    pub f: Matrix,
    /// Reciprocals of the clamped singular values.
    pub s_inv: Vec<f64>,
    /// Unordered pairs whose `F` denominator hit [`F_DENOMINATOR_FLOOR`].
    pub degenerate_pairs: usize,
}

impl GradientWorkspace {
    pub fn new(s: &[f64], eps: f64) -> Self {
        let clamped = clamp_singular(s, eps);
        let k = clamped.len();
        let mut f = Matrix::zeros(k, k);
        let mut degenerate_pairs = 0;
        for i in 0..k {
            for j in i + 1..k {
                let mut d = clamped[j] * clamped[j] - clamped[i] * clamped[i];
                if d.abs() < F_DENOMINATOR_FLOOR {
                    degenerate_pairs += 1;
                    // ties keep the orientation of the ordered pair so that F stays antisymmetric
                    d = if d > 0.0 { F_DENOMINATOR_FLOOR } else { -F_DENOMINATOR_FLOOR };
                }
                f[(i, j)] = 1.0 / d;
                f[(j, i)] = -1.0 / d;
            }
        }
        Self {
            f,
            s_inv: clamped.iter().map(|v| 1.0 / v).collect(),
            degenerate_pairs,
        }
    }
}

/// Adjoints of the (possibly truncated) factors. Missing entries are zero;
/// adjoints with fewer than `k` columns are zero-padded.
#[derive(Debug, Clone, Default)]
pub struct SvdAdjoints {
    pub u: Option<Matrix>,
    pub s: Option<Vec<f64>>,
    pub v: Option<Matrix>,
}

#[derive(Debug, Clone)]
pub struct SvdGradient {
    pub grad: Matrix,
    pub degenerate_pairs: usize,
}

fn pad_columns(adj: &Matrix, rows: usize, k: usize, what: &'static str) -> Result<Matrix> {
    if adj.rows() != rows || adj.cols() > k {
        return Err(EggError::shape(what, adj.shape(), (rows, k)));
    }
    adj.ensure_finite(what)?;
    if adj.cols() == k {
        return Ok(adj.clone());
    }
    Ok(Matrix::from_fn(rows, k, |i, j| if j < adj.cols() { adj[(i, j)] } else { 0.0 }))
}

/// Gradient of a scalar loss with respect to the decomposed matrix.
pub fn svd_backward(f: &SvdFactors, adjoints: &SvdAdjoints, eps: f64) -> Result<SvdGradient> {
    let m = f.u.rows();
    let n = f.v.rows();
    let k = f.rank();
    let ws = GradientWorkspace::new(&f.s, eps);

    // core = J·S + S·K + diag(S̄), assembled in k×k
    let mut core = Matrix::zeros(k, k);
    let mut extra = Matrix::zeros(m, n);

    if let Some(u_bar) = &adjoints.u {
        let u_bar = pad_columns(u_bar, m, k, "svd_backward(U)")?;
        let utu = f.u.matmul_tn(&u_bar)?;
        for i in 0..k {
            for j in 0..k {
                core[(i, j)] += ws.f[(i, j)] * (utu[(i, j)] - utu[(j, i)]) * f.s[j];
            }
        }
        // (I − UUᵀ) Ū S⁻¹ Vᵀ
        let mut resid = u_bar.sub(&f.u.matmul(&utu)?)?;
        for i in 0..m {
            for j in 0..k {
                resid[(i, j)] *= ws.s_inv[j];
            }
        }
        extra.add_assign(&resid.matmul_nt(&f.v)?)?;
    }
    if let Some(v_bar) = &adjoints.v {
        let v_bar = pad_columns(v_bar, n, k, "svd_backward(V)")?;
        let vtv = f.v.matmul_tn(&v_bar)?;
        for i in 0..k {
            for j in 0..k {
                core[(i, j)] += f.s[i] * ws.f[(i, j)] * (vtv[(i, j)] - vtv[(j, i)]);
            }
        }
        // U S⁻¹ V̄ᵀ (I − VVᵀ)
        let resid = v_bar.sub(&f.v.matmul(&vtv)?)?;
        let mut us_inv = f.u.clone();
        for i in 0..m {
            for j in 0..k {
                us_inv[(i, j)] *= ws.s_inv[j];
            }
        }
        extra.add_assign(&us_inv.matmul_nt(&resid)?)?;
    }
    if let Some(s_bar) = &adjoints.s {
        if s_bar.len() > k {
            return Err(EggError::shape("svd_backward(S)", (s_bar.len(), 1), (k, 1)));
        }
        if s_bar.iter().any(|v| !v.is_finite()) {
            return Err(EggError::NonFinite("svd_backward(S)"));
        }
        for (i, &g) in s_bar.iter().enumerate() {
            core[(i, i)] += g;
        }
    }

    let mut grad = f.u.matmul(&core)?.matmul_nt(&f.v)?;
    grad.add_assign(&extra)?;
    grad.ensure_finite("svd_backward")?;
    Ok(SvdGradient {
        grad,
        degenerate_pairs: ws.degenerate_pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        let d = a.sub(b).unwrap().max_abs();
        assert!(d < tol, "max diff {d}");
    }

    #[test]
    fn identity_and_diagonal() {
        let f = svd_full(&Matrix::identity(3)).unwrap();
        assert_eq!(f.s, vec![1.0, 1.0, 1.0]);
        assert_close(&f.u, &Matrix::identity(3), 1e-15);
        assert_close(&f.v, &Matrix::identity(3), 1e-15);

        let d = svd_full(&Matrix::diag(&[3.0, 2.0, 1.0])).unwrap();
        assert_eq!(d.s, vec![3.0, 2.0, 1.0]);
        assert_close(&d.u, &Matrix::identity(3), 1e-15);
        assert_close(&d.v, &Matrix::identity(3), 1e-15);
    }

    #[test]
    fn truncate_bounds() {
        let d = svd_full(&Matrix::diag(&[3.0, 2.0, 1.0])).unwrap();
        assert_eq!(d.truncate(3).unwrap(), d);
        assert_eq!(d.truncate(2).unwrap().s, vec![3.0, 2.0]);
        assert!(d.truncate(0).is_err());
        assert!(d.truncate(4).is_err());
    }

    #[test]
    fn wide_and_rank_deficient_inputs() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0]]);
        let f = svd_full(&m).unwrap();
        assert_eq!(f.u.shape(), (2, 2));
        assert_eq!(f.v.shape(), (4, 2));
        assert!(f.s[1] < 1e-12);
        let gram = f.u.matmul_tn(&f.u).unwrap();
        assert_close(&gram, &Matrix::identity(2), 1e-12);
        assert_close(&f.reconstruct(), &m, 1e-12);

        let z = svd_full(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(z.s, vec![0.0, 0.0]);
        assert_close(&z.u.matmul_tn(&z.u).unwrap(), &Matrix::identity(2), 1e-15);
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let m = Matrix::from_rows(&[[-3.0, 0.0], [0.0, -1.0]]);
        let f = svd_full(&m).unwrap();
        for j in 0..2 {
            let col = f.u.column(j);
            let best = col.iter().cloned().fold(0.0_f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(best > 0.0);
        }
        assert_close(&f.reconstruct(), &m, 1e-15);
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_singular(&[3.0, 2.0, 0.0], 1e-12), vec![3.0, 2.0, 1e-12]);
        assert_eq!(clamp_singular(&[3.0, 2.0], 1e-12), vec![3.0, 2.0]);
        assert_eq!(clamp_singular(&[0.0, 0.0], 1e-12), vec![1e-12, 1e-12]);
    }

    #[test]
    fn workspace_is_antisymmetric_with_zero_diagonal() {
        let ws = GradientWorkspace::new(&[3.0, 2.0, 2.0, 0.0, 0.0], DEFAULT_EPSILON);
        assert_eq!(ws.f, ws.f.transpose().scale(-1.0));
        for i in 0..5 {
            assert_eq!(ws.f[(i, i)], 0.0);
        }
        assert_eq!(ws.degenerate_pairs, 2);
        assert!(ws.s_inv.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn singular_value_adjoint_gives_uvt() {
        let m = Matrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64 * 0.7).sin());
        let f = svd_full(&m).unwrap();
        let g = svd_backward(
            &f,
            &SvdAdjoints {
                s: Some(vec![1.0; 3]),
                ..Default::default()
            },
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert_close(&g.grad, &f.u.matmul_nt(&f.v).unwrap(), 1e-14);
    }

    #[test]
    fn backward_rejects_bad_adjoints() {
        let f = svd_full(&Matrix::identity(3)).unwrap();
        let bad = SvdAdjoints {
            u: Some(Matrix::zeros(2, 3)),
            ..Default::default()
        };
        assert!(svd_backward(&f, &bad, DEFAULT_EPSILON).is_err());
        let nan = SvdAdjoints {
            s: Some(vec![f64::NAN, 0.0, 0.0]),
            ..Default::default()
        };
        assert!(svd_backward(&f, &nan, DEFAULT_EPSILON).is_err());
    }

    #[test]
    fn collinear_and_tiny_columns_converge() {
        let m = Matrix::from_fn(8, 3, |i, j| {
            let base = ((i + 1) as f64 * 0.37).cos();
            match j {
                0 => base,
                1 => 3.0 * base,
                _ => 1e-160 * (i as f64 - 3.5),
            }
        });
        let f = svd_full(&m).unwrap();
        assert!(f.s[1] < 1e-14 && f.s[2] < 1e-14);
        assert!(f.reconstruct().sub(&m).unwrap().max_abs() < 1e-13);
        let utu = f.u.matmul_tn(&f.u).unwrap();
        assert!(utu.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-12);
    }
}
