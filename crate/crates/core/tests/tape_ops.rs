mod common;

use std::sync::Arc;

use common::*;
use egg_core::tensor::{finite_diff_check, CsrMatrix};
use egg_core::{Matrix, Result, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const TRIALS: usize = 20;
const STEP: f64 = 1e-4;
const TOL: f64 = 1e-5;

/// Moves entries at least `margin` away from each kink.
fn away_from(m: &Matrix, kinks: &[f64], margin: f64) -> Matrix {
    m.map(|mut v| {
        for &k in kinks {
            if (v - k).abs() < margin {
                v = k + if v >= k { margin } else { -margin };
            }
        }
        v
    })
}

/// Runs `op` on random inputs and checks `Σ C∘op(x)` for a random `C`.
fn check(
    name: &str,
    seed: u64,
    input: impl Fn(&mut ChaCha8Rng) -> Matrix,
    op: impl Fn(&mut Tape, Var, &Matrix) -> Result<Var>,
    side: impl Fn(&mut ChaCha8Rng, &Matrix) -> Matrix,
) {
    let mut rng = rng(seed);
    for trial in 0..TRIALS {
        let x = input(&mut rng);
        let other = side(&mut rng, &x);
        let shape = {
            let mut t = Tape::new();
            let v = t.input(x.clone()).unwrap();
            let y = op(&mut t, v, &other).unwrap();
            t.value(y).shape()
        };
        let weights = gaussian(shape.0, shape.1, &mut rng);
        let report = finite_diff_check(
            |t, v| {
                let y = op(t, v, &other)?;
                let c = t.constant(weights.clone())?;
                let prod = t.hadamard(y, c)?;
                t.sum(prod)
            },
            &x,
            STEP,
        )
        .unwrap();
        assert!(
            report.max_relative_error < TOL,
            "{name} trial {trial}: {} (analytic {:?}, numeric {:?})",
            report.max_relative_error,
            report.analytic,
            report.numeric
        );
    }
}

fn sized(rng: &mut ChaCha8Rng) -> Matrix {
    let r = rng.random_range(1..=6);
    let c = rng.random_range(1..=6);
    gaussian(r, c, rng)
}

fn none(_: &mut ChaCha8Rng, _: &Matrix) -> Matrix {
    Matrix::zeros(0, 0)
}

fn same_shape(rng: &mut ChaCha8Rng, x: &Matrix) -> Matrix {
    gaussian(x.rows(), x.cols(), rng)
}

#[test]
fn elementwise_ops() {
    check("add", 1, sized, |t, x, o| { let c = t.constant(o.clone())?; t.add(x, c) }, same_shape);
    check("sub", 2, sized, |t, x, o| { let c = t.constant(o.clone())?; t.sub(c, x) }, same_shape);
    check("hadamard", 3, sized, |t, x, o| { let c = t.constant(o.clone())?; t.hadamard(x, c) }, same_shape);
    check("hadamard_self", 4, sized, |t, x, _| t.hadamard(x, x), none);
    check("relu", 5, |r| away_from(&sized(r), &[0.0], 1e-2), |t, x, _| t.relu(x), none);
    check("sigmoid", 6, sized, |t, x, _| t.sigmoid(x), none);
    check("exp", 7, sized, |t, x, _| t.exp(x), none);
    check("log", 8, |r| sized(r).map(|v| v.abs() + 0.1), |t, x, _| t.log(x), none);
    check("scale", 9, sized, |t, x, _| t.scale(x, -1.7), none);
    check("clamp", 10, |r| away_from(&sized(r), &[-0.5, 0.5], 1e-2), |t, x, _| t.clamp(x, -0.5, 0.5), none);
}

#[test]
fn shape_ops() {
    check("transpose", 11, sized, |t, x, _| t.transpose(x), none);
    check("sum", 12, sized, |t, x, _| t.sum(x), none);
    check("mean", 13, sized, |t, x, _| t.mean(x), none);
    check("col_sum", 14, sized, |t, x, _| t.col_sum(x), none);
    check("col_mean", 15, sized, |t, x, _| t.col_mean(x), none);
    check("col_max", 16, sized, |t, x, _| t.col_max(x), none);
    check(
        "add_row",
        17,
        sized,
        |t, x, o| { let b = t.constant(o.clone())?; t.add_row(x, b) },
        |r, x| gaussian(1, x.cols(), r),
    );
    check(
        "add_row_bias",
        18,
        |r| { let c = r.random_range(1..=6); gaussian(1, c, r) },
        |t, b, o| { let x = t.constant(o.clone())?; t.add_row(x, b) },
        |r, b| { let n = r.random_range(1..=5); gaussian(n, b.cols(), r) },
    );
    check(
        "concat_rows",
        19,
        sized,
        |t, x, o| { let c = t.constant(o.clone())?; t.concat_rows(&[c, x, x]) },
        |r, x| gaussian(2, x.cols(), r),
    );
    check(
        "concat_cols",
        20,
        sized,
        |t, x, o| { let c = t.constant(o.clone())?; t.concat_cols(&[x, c, x]) },
        |r, x| gaussian(x.rows(), 3, r),
    );
    check("flatten_sym", 21, |r| { let n = r.random_range(1..=6); gaussian(n, n, r) }, |t, x, _| {
        let xt = t.transpose(x)?;
        let s = t.add(x, xt)?;
        t.flatten_sym(s)
    }, none);
}

#[test]
fn products() {
    check(
        "matmul_left",
        22,
        sized,
        |t, x, o| { let c = t.constant(o.clone())?; t.matmul(x, c) },
        |r, x| { let c = r.random_range(1..=5); gaussian(x.cols(), c, r) },
    );
    check(
        "matmul_right",
        23,
        sized,
        |t, x, o| { let c = t.constant(o.clone())?; t.matmul(c, x) },
        |r, x| { let c = r.random_range(1..=5); gaussian(c, x.rows(), r) },
    );
    check("gram", 24, sized, |t, x, _| { let xt = t.transpose(x)?; t.matmul(xt, x) }, none);
    check(
        "propagate",
        25,
        sized,
        |t, x, o| {
            let n = o.rows();
            // keep roughly half the entries
            let triplets: Vec<(usize, usize, f64)> = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| o[(i, j)] > 0.0)
                .map(|(i, j)| (i, j, o[(i, j)]))
                .collect();
            let a = Arc::new(CsrMatrix::from_triplets(n, n, &triplets)?);
            t.propagate(a, x)
        },
        |r, x| gaussian(x.rows(), x.rows(), r),
    );
    check(
        "pair_dot",
        26,
        |r| { let n = r.random_range(2..=6); gaussian(n, 3, r) },
        |t, z, o| {
            let pairs: Arc<[(usize, usize)]> = o.as_slice().chunks(2).map(|p| (p[0] as usize, p[1] as usize)).collect();
            t.pair_dot(z, pairs)
        },
        |r, z| {
            let n = z.rows();
            let idx: Vec<f64> = (0..8).map(|_| r.random_range(0..n) as f64).collect();
            Matrix::new(4, 2, idx).unwrap()
        },
    );
}

#[test]
fn losses() {
    check(
        "softmax_cross_entropy",
        27,
        |r| { let n = r.random_range(1..=6); let c = r.random_range(2..=5); gaussian(n, c, r) },
        |t, x, o| {
            let labels: Vec<usize> = o.as_slice().iter().map(|&v| v as usize).collect();
            t.softmax_cross_entropy(x, &labels)
        },
        |r, x| Matrix::from_fn(x.rows(), 1, |_, _| r.random_range(0..x.cols()) as f64),
    );
    check(
        "bce_with_logits",
        28,
        |r| { let n = r.random_range(1..=8); gaussian(n, 1, r).scale(3.0) },
        |t, x, o| t.bce_with_logits(x, o.as_slice()),
        |r, x| Matrix::from_fn(x.rows(), 1, |_, _| r.random_range(0..2) as f64),
    );
    check(
        "weighted_bce_with_logits",
        29,
        |r| { let n = r.random_range(1..=8); gaussian(n, 1, r).scale(3.0) },
        |t, x, o| t.weighted_bce_with_logits(x, o.as_slice(), 4.5),
        |r, x| Matrix::from_fn(x.rows(), 1, |_, _| r.random_range(0..2) as f64),
    );
}

#[test]
fn svd_outputs_one_at_a_time() {
    for (which, seed) in [(0, 30), (1, 31), (2, 32)] {
        check(
            ["svd_u", "svd_s", "svd_v"][which],
            seed,
            |r| {
                let rows = r.random_range(2..=7);
                let cols = r.random_range(2..=7);
                let k = rows.min(cols);
                with_singular_values(rows, cols, &gapped_spectrum(k, 0.2, 0.3, r), r)
            },
            move |t, x, _| {
                let svd = t.svd(x, |s| Ok(s.len().min(2)))?;
                Ok([svd.u, svd.s, svd.v][which])
            },
            none,
        );
    }
}
