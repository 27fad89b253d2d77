//! Inputs shared by the kernel benchmarks.

use egg_core::Matrix;

/// Dense matrix with entries spread over `[-1, 1)`, fixed by `seed`.
pub fn filled(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    Matrix::from_fn(rows, cols, |_, _| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    })
}

/// Points around `k` separated centres, for clustering.
pub fn blobs(n: usize, dim: usize, k: usize, seed: u64) -> Matrix {
    let noise = filled(n, dim, seed);
    Matrix::from_fn(n, dim, |r, c| noise[(r, c)] * 0.3 + if c % k == r % k { 4.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fills_are_bounded_and_repeatable() {
        let a = filled(20, 7, 5);
        assert!(a.as_slice().iter().all(|v| (-1.0..1.0).contains(v)));
        assert_eq!(a, filled(20, 7, 5));
        assert_ne!(a, filled(20, 7, 6));
    }
}
