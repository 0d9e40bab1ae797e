//! Deterministic random operands and naive products for tests. Nothing here
//! touches the kernel code paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::matrix::{ComplexMatrix, C64, ZERO};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> ComplexMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ComplexMatrix::from_fn(rows, cols, |_, _| C64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)))
}

/// Random full Hermitian matrix.
pub fn random_hermitian(n: usize, seed: u64) -> ComplexMatrix {
    let m = random_matrix(n, n, seed);
    ComplexMatrix::from_fn(n, n, |i, j| {
        if i == j {
            C64::new(m[(i, i)].re, 0.0)
        } else {
            (m[(i, j)] + m[(j, i)].conj()) * 0.5
        }
    })
}

/// Triple-loop product.
pub fn naive_mul(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    assert_eq!(a.cols(), b.rows());
    ComplexMatrix::from_fn(a.rows(), b.cols(), |i, j| {
        let mut s = ZERO;
        for p in 0..a.cols() {
            s += a[(i, p)] * b[(p, j)];
        }
        s
    })
}
