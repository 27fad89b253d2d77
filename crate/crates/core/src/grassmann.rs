//! Grassmann points from hidden representations.
//!
//! A hidden representation `H` (n nodes × m features) is rectified to an
//! orthonormal basis of its dominant subspace with a truncated SVD, and the
//! subspace is embedded in `Sym(m)` through the projector `Π(U) = UUᵀ`.
//! Geometry (principal angles, geodesic distance) works on the bases.

use serde::{Deserialize, Serialize};

use crate::error::{EggError, Result};
use crate::svd;
use crate::tensor::{Matrix, SvdVars, Tape, Var};

/// How many singular directions a Grassmann point keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RankPolicy {
    /// Smallest `p` whose share of the singular-value mass reaches `r`.
    EnergyThreshold(f64),
    /// `p = ⌈x·m⌉` for feature width `m`.
    FixedRatio(f64),
    FixedCount(usize),
    /// Number of singular values strictly above `r` (kept for comparison).
    PerValueThreshold(f64),
}

impl RankPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RankPolicy::EnergyThreshold(r) => r > 0.0 && r < 1.0,
            RankPolicy::FixedRatio(x) => x > 0.0 && x <= 1.0,
            RankPolicy::FixedCount(p) => p >= 1,
            RankPolicy::PerValueThreshold(r) => r.is_finite() && r >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(EggError::InvalidArgument(format!("invalid rank policy {self:?}")))
        }
    }
}

/// Chooses `p` from descending singular values. `feature_dim` is the width
/// `m` used by [`RankPolicy::FixedRatio`]. The result is always in `1..=k`.
pub fn select_rank(singular_values: &[f64], policy: RankPolicy, feature_dim: usize) -> Result<usize> {
    policy.validate()?;
    let k = singular_values.len();
    let total: f64 = singular_values.iter().sum();
    if k == 0 || total <= 0.0 || !total.is_finite() {
        return Err(EggError::Degenerate("no positive singular value".into()));
    }
    let p = match policy {
        RankPolicy::EnergyThreshold(r) => {
            let mut acc = 0.0;
            let mut p = k;
            for (i, s) in singular_values.iter().enumerate() {
                acc += s;
                if acc / total >= r - 1e-12 {
                    p = i + 1;
                    break;
                }
            }
            p
        }
        RankPolicy::FixedRatio(x) => (x * feature_dim as f64 - 1e-12).ceil() as usize,
        RankPolicy::FixedCount(p) => p,
        RankPolicy::PerValueThreshold(r) => singular_values.iter().filter(|&&s| s > r).count(),
    };
    Ok(p.clamp(1, k))
}

/// Share of the singular-value mass held by the leading `p` values.
pub fn captured_energy(singular_values: &[f64], p: usize) -> Result<f64> {
    if p == 0 || p > singular_values.len() {
        return Err(EggError::InvalidArgument(format!(
            "rank {p} outside 1..={}",
            singular_values.len()
        )));
    }
    let total: f64 = singular_values.iter().sum();
    if total <= 0.0 {
        return Err(EggError::Degenerate("no positive singular value".into()));
    }
    Ok(singular_values[..p].iter().sum::<f64>() / total)
}

/// Which side of `H` spans the subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RectifyMode {
    /// Decompose `Hᵀ`; the basis lives in feature space (`m×p`).
    GraphLevel,
    /// Decompose `H`; the basis lives in node space (`n×p`).
    NodeLevel,
}

/// Orthonormal basis of a subspace plus the spectrum it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct GrassmannPoint {
    basis: Matrix,
    singular_values: Vec<f64>,
}

impl GrassmannPoint {
    /// Wraps a basis; columns must be orthonormal within `1e-10`.
    pub fn from_basis(basis: Matrix, singular_values: Vec<f64>) -> Result<Self> {
        if basis.cols() == 0 || basis.cols() > basis.rows() {
            return Err(EggError::InvalidArgument(format!(
                "basis of shape {:?} is not a valid Grassmann representative",
                basis.shape()
            )));
        }
        let gram = basis.matmul_tn(&basis)?;
        if gram.sub(&Matrix::identity(basis.cols()))?.max_abs() >= 1e-10 {
            return Err(EggError::InvalidArgument("basis columns are not orthonormal".into()));
        }
        Ok(Self {
            basis,
            singular_values,
        })
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    /// Share of the spectrum captured by this point's rank.
    pub fn captured_energy(&self) -> Result<f64> {
        captured_energy(&self.singular_values, self.rank())
    }
}

/// Manifold rectification of `H` (n×m).
pub fn rectify(h: &Matrix, mode: RectifyMode, policy: RankPolicy) -> Result<GrassmannPoint> {
    if h.rows() == 0 || h.cols() == 0 {
        return Err(EggError::InvalidArgument("rectify of an empty representation".into()));
    }
    let factors = match mode {
        RectifyMode::GraphLevel => svd::svd_full(&h.transpose())?,
        RectifyMode::NodeLevel => svd::svd_full(h)?,
    };
    let p = select_rank(&factors.s, policy, h.cols())?;
    Ok(GrassmannPoint {
        basis: factors.u.leading_columns(p),
        singular_values: factors.s,
    })
}

/// Differentiable rectification: returns the SVD nodes whose `u` is the
/// truncated basis.
pub fn rectify_on_tape(tape: &mut Tape, h: Var, mode: RectifyMode, policy: RankPolicy) -> Result<SvdVars> {
    let m = tape.value(h).cols();
    let target = match mode {
        RectifyMode::GraphLevel => tape.transpose(h)?,
        RectifyMode::NodeLevel => h,
    };
    tape.svd(target, |s| select_rank(s, policy, m))
}

/// `Π(U) = UUᵀ`.
pub fn project(point: &GrassmannPoint) -> Matrix {
    point.basis.matmul_nt(&point.basis).expect("basis is conformable with itself")
}

/// Row-major upper triangle including the diagonal.
pub fn flatten_sym(sym: &Matrix) -> Result<Vec<f64>> {
    if !sym.is_symmetric(1e-8) {
        return Err(EggError::InvalidArgument(format!(
            "flatten_sym needs a symmetric matrix, got {:?}",
            sym.shape()
        )));
    }
    let m = sym.rows();
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        out.extend_from_slice(&sym.row(i)[i..]);
    }
    Ok(out)
}

/// Inverse of [`flatten_sym`].
pub fn unflatten_sym(flat: &[f64]) -> Result<Matrix> {
    // m(m+1)/2 = len
    let m = (((8 * flat.len() + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    if m * (m + 1) / 2 != flat.len() {
        return Err(EggError::InvalidArgument(format!(
            "{} is not a triangular number",
            flat.len()
        )));
    }
    let mut out = Matrix::zeros(m, m);
    let mut k = 0;
    for i in 0..m {
        for j in i..m {
            out[(i, j)] = flat[k];
            out[(j, i)] = flat[k];
            k += 1;
        }
    }
    Ok(out)
}

/// Principal angles `0 ≤ θ₁ ≤ … ≤ θ_q ≤ π/2`, `q = min(p_a, p_b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrincipalAngles {
    pub angles: Vec<f64>,
}

/// Angles between two subspaces of the same ambient space.
///
/// Cosines are the singular values of `AᵀB`. Small angles are taken from
/// the sines (singular values of `(I − AAᵀ)B`) because `acos` loses all
/// precision near 1.
pub fn principal_angles(a: &GrassmannPoint, b: &GrassmannPoint) -> Result<PrincipalAngles> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(EggError::shape(
            "principal_angles",
            a.basis.shape(),
            b.basis.shape(),
        ));
    }
    // the smaller-rank basis plays B
    let (big, small) = if a.rank() >= b.rank() { (a, b) } else { (b, a) };
    let q = small.rank();
    let cross = big.basis.matmul_tn(&small.basis)?;
    let cosines = svd::svd_full(&cross)?.s;
    let residual = small.basis.sub(&big.basis.matmul(&cross)?)?;
    let mut sines = svd::svd_full(&residual)?.s;
    sines.reverse();

    let angles = (0..q)
        .map(|i| {
            let c = cosines[i].clamp(0.0, 1.0);
            let s = sines[i].clamp(0.0, 1.0);
            if c * c >= 0.5 {
                s.asin()
            } else {
                c.acos()
            }
        })
        .collect();
    Ok(PrincipalAngles { angles })
}

/// `‖Θ‖₂`.
pub fn geodesic_distance(a: &GrassmannPoint, b: &GrassmannPoint) -> Result<f64> {
    Ok(principal_angles(a, b)?
        .angles
        .iter()
        .map(|t| t * t)
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn rank_selection_examples() {
        let s = [3.0, 2.0, 1.0];
        assert_eq!(select_rank(&s, RankPolicy::EnergyThreshold(0.5), 3).unwrap(), 1);
        assert_eq!(select_rank(&s, RankPolicy::EnergyThreshold(0.8), 3).unwrap(), 2);
        let flat = [1.0; 16];
        assert_eq!(select_rank(&flat, RankPolicy::FixedRatio(0.8), 16).unwrap(), 13);
        assert_eq!(select_rank(&s, RankPolicy::FixedCount(7), 3).unwrap(), 3);
        assert_eq!(select_rank(&s, RankPolicy::PerValueThreshold(0.8), 3).unwrap(), 3);
        assert_eq!(select_rank(&s, RankPolicy::PerValueThreshold(5.0), 3).unwrap(), 1);
        assert!(matches!(
            select_rank(&[0.0, 0.0], RankPolicy::EnergyThreshold(0.5), 2),
            Err(EggError::Degenerate(_))
        ));
        assert!(select_rank(&s, RankPolicy::EnergyThreshold(1.0), 3).is_err());
        assert!(select_rank(&s, RankPolicy::FixedCount(0), 3).is_err());
    }

    #[test]
    fn energy_examples() {
        assert_eq!(captured_energy(&[3.0, 2.0, 1.0], 3).unwrap(), 1.0);
        assert_eq!(captured_energy(&[3.0, 2.0, 1.0], 1).unwrap(), 0.5);
        assert!(captured_energy(&[3.0], 2).is_err());
    }

    #[test]
    fn rectify_identity_and_single_direction() {
        for mode in [RectifyMode::GraphLevel, RectifyMode::NodeLevel] {
            let pt = rectify(&Matrix::identity(4), mode, RankPolicy::FixedCount(4)).unwrap();
            assert_eq!(pt.basis(), &Matrix::identity(4));
        }
        let h = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        let pt = rectify(&h, RectifyMode::GraphLevel, RankPolicy::FixedCount(1)).unwrap();
        assert_eq!(pt.ambient_dim(), 2);
        assert!((pt.basis()[(0, 0)].abs() - 1.0).abs() < 1e-15);
        assert_eq!(pt.basis()[(1, 0)], 0.0);
        assert!(rectify(&Matrix::zeros(3, 2), RectifyMode::GraphLevel, RankPolicy::FixedCount(1)).is_err());
    }

    #[test]
    fn projection_examples() {
        let e1 = GrassmannPoint::from_basis(Matrix::from_rows(&[[1.0], [0.0]]), vec![1.0]).unwrap();
        assert_eq!(project(&e1), Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]));
        let full = GrassmannPoint::from_basis(Matrix::identity(3), vec![1.0; 3]).unwrap();
        assert_eq!(project(&full), Matrix::identity(3));
    }

    #[test]
    fn flatten_examples() {
        let s = Matrix::from_rows(&[[1.0, 2.0], [2.0, 3.0]]);
        assert_eq!(flatten_sym(&s).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(flatten_sym(&Matrix::identity(3)).unwrap().len(), 6);
        assert_eq!(unflatten_sym(&flatten_sym(&s).unwrap()).unwrap(), s);
        assert!(flatten_sym(&Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]])).is_err());
        assert!(unflatten_sym(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn angle_examples() {
        let e1 = GrassmannPoint::from_basis(Matrix::from_rows(&[[1.0], [0.0]]), vec![]).unwrap();
        let e2 = GrassmannPoint::from_basis(Matrix::from_rows(&[[0.0], [1.0]]), vec![]).unwrap();
        assert_eq!(principal_angles(&e1, &e1).unwrap().angles, vec![0.0]);
        assert!((principal_angles(&e1, &e2).unwrap().angles[0] - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(geodesic_distance(&e1, &e1).unwrap(), 0.0);
        let e3 = GrassmannPoint::from_basis(Matrix::identity(3).leading_columns(1), vec![]).unwrap();
        assert!(principal_angles(&e1, &e3).is_err());
    }
}
