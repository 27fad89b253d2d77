mod common;

use common::*;
use egg_core::svd::{svd_backward, svd_full, SvdAdjoints, DEFAULT_EPSILON};
use egg_core::tensor::finite_diff_check;
use egg_core::{Matrix, Tape};
use proptest::prelude::*;
use rand::Rng;

/// `Σ C_u∘U_p + c_s·S_p + Σ C_v∘V_p` for fixed random weights.
struct Probe {
    p: usize,
    cu: Matrix,
    cs: Matrix,
    cv: Matrix,
}

impl Probe {
    fn new(rows: usize, cols: usize, p: usize, rng: &mut impl Rng) -> Self {
        Self {
            p,
            cu: gaussian(rows, p, rng),
            cs: gaussian(1, p, rng),
            cv: gaussian(cols, p, rng),
        }
    }

    fn loss(&self, t: &mut Tape, x: egg_core::Var) -> egg_core::Result<egg_core::Var> {
        let p = self.p;
        let svd = t.svd(x, |_| Ok(p))?;
        let cu = t.constant(self.cu.clone())?;
        let cs = t.constant(self.cs.clone())?;
        let cv = t.constant(self.cv.clone())?;
        let a = t.hadamard(svd.u, cu)?;
        let b = t.hadamard(svd.s, cs)?;
        let c = t.hadamard(svd.v, cv)?;
        let (a, b, c) = (t.sum(a)?, t.sum(b)?, t.sum(c)?);
        let ab = t.add(a, b)?;
        t.add(ab, c)
    }
}

#[test]
fn backward_matches_finite_differences_on_gapped_spectra() {
    let mut rng = rng(11);
    let mut worst = 0.0_f64;
    for trial in 0..100 {
        let rows = rng.random_range(4..=12);
        let cols = rng.random_range(3..=rows.min(8));
        let (rows, cols) = if trial % 3 == 0 { (cols, rows) } else { (rows, cols) };
        let k = rows.min(cols);
        let m = with_singular_values(rows, cols, &gapped_spectrum(k, 0.1, 0.2, &mut rng), &mut rng);
        let probe = Probe::new(rows, cols, rng.random_range(1..=k), &mut rng);
        let r = finite_diff_check(|t, x| probe.loss(t, x), &m, 1e-5).unwrap();
        worst = worst.max(r.max_relative_error);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn near_zero_singular_values_give_finite_gradients() {
    let mut rng = rng(12);
    for _ in 0..20 {
        let mut s = gapped_spectrum(5, 0.1, 0.5, &mut rng);
        s[3] = 1e-14;
        s[4] = 0.0;
        let m = with_singular_values(9, 6, &s, &mut rng);
        let f = svd_full(&m).unwrap();
        assert!(f.s[5] <= 1e-13);
        let adj = SvdAdjoints {
            u: Some(gaussian(9, 6, &mut rng)),
            s: Some(vec![1.0; 6]),
            v: Some(gaussian(6, 6, &mut rng)),
        };
        let g = svd_backward(&f, &adj, DEFAULT_EPSILON).unwrap();
        assert!(g.grad.is_finite());
    }
}

#[test]
fn singular_values_match_eigen_oracle() {
    let mut rng = rng(13);
    for _ in 0..100 {
        let rows = rng.random_range(1..=10);
        let cols = rng.random_range(1..=10);
        let m = gaussian(rows, cols, &mut rng);
        let f = svd_full(&m).unwrap();
        let oracle = oracle_singular_values(&m);
        for (a, b) in f.s.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10 * oracle[0].max(1.0), "{:?} vs {:?}", f.s, oracle);
        }
    }
}

#[test]
fn eckart_young_residual() {
    let mut rng = rng(14);
    for _ in 0..50 {
        let rows = rng.random_range(2..=12);
        let cols = rng.random_range(2..=12);
        let m = gaussian(rows, cols, &mut rng);
        let f = svd_full(&m).unwrap();
        let p = rng.random_range(1..=f.rank());
        let approx = f.truncate(p).unwrap().reconstruct();
        let residual = m.sub(&approx).unwrap().frobenius_norm();
        let tail: f64 = f.s[p..].iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!((residual - tail).abs() < 1e-9, "{residual} vs {tail}");
    }
}

fn matrix_strategy() -> impl Strategy<Value = Matrix> {
    (1usize..9, 1usize..9).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    })
}

proptest! {
    #[test]
    fn factors_are_orthonormal_and_reconstruct(m in matrix_strategy()) {
        let f = svd_full(&m).unwrap();
        let k = f.rank();
        let eye = Matrix::identity(k);
        prop_assert!(f.u.matmul_tn(&f.u).unwrap().sub(&eye).unwrap().max_abs() < 1e-10);
        prop_assert!(f.v.matmul_tn(&f.v).unwrap().sub(&eye).unwrap().max_abs() < 1e-10);
        prop_assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(f.s.iter().all(|&s| s >= 0.0));
        let scale = m.max_abs().max(1.0);
        prop_assert!(f.reconstruct().sub(&m).unwrap().max_abs() < 1e-10 * scale);
        for j in 0..k {
            let col = f.u.column(j);
            let (mut best, mut at) = (0.0, 0);
            for (i, v) in col.iter().enumerate() {
                if v.abs() > best {
                    best = v.abs();
                    at = i;
                }
            }
            prop_assert!(col[at] >= 0.0);
        }
    }

    #[test]
    fn decomposition_is_deterministic(m in matrix_strategy()) {
        prop_assert_eq!(svd_full(&m).unwrap(), svd_full(&m).unwrap());
    }
}
