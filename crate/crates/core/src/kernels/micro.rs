//! Tile-level routines shared by the blocked CPU kernels and the device
//! executors.
//!
//! Everything here works on views and assumes the caller validated shapes.
//! The hot path is `c += α·aᴴ·b` with `a` (k×m) and `b` (k×n) read column by
//! column, computed in 2×2 register blocks over 4-complex chunks.

use crate::matrix::{MatMut, MatRef, C64, ZERO};

/// Inner-dimension chunk kept hot in cache.
pub(crate) const KC: usize = 256;

const LANES: usize = 8;

/// Which part of a square output tile is written.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Full,
    /// Elements with `row >= col` only.
    Lower,
}

impl Region {
    #[inline(always)]
    fn keeps(self, i: usize, j: usize) -> bool {
        match self {
            Region::Full => true,
            Region::Lower => i >= j,
        }
    }
}

#[inline(always)]
fn as_f64(s: &[C64]) -> &[f64] {
    // SAFETY: Complex<f64> is repr(C) { re, im }.
    unsafe { std::slice::from_raw_parts(s.as_ptr() as *const f64, s.len() * 2) }
}

#[inline(always)]
fn madd(a: f64, b: f64, c: f64) -> f64 {
    if cfg!(target_feature = "fma") {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

#[inline(always)]
fn swap_pairs(y: &[f64]) -> [f64; LANES] {
    let mut s = [0.0; LANES];
    for l in (0..LANES).step_by(2) {
        s[l] = y[l + 1];
        s[l + 1] = y[l];
    }
    s
}

#[inline(always)]
fn reduce(p: &[f64; LANES], q: &[f64; LANES]) -> C64 {
    let re: f64 = p.iter().sum();
    let mut im = 0.0;
    for l in (0..LANES).step_by(2) {
        im += q[l] - q[l + 1];
    }
    C64::new(re, im)
}

/// `[Σ conj(a0)·b0, Σ conj(a1)·b0, Σ conj(a0)·b1, Σ conj(a1)·b1]`.
#[inline(always)]
fn dot_conj_2x2(a0: &[C64], a1: &[C64], b0: &[C64], b1: &[C64]) -> [C64; 4] {
    let (a0, a1, b0, b1) = (as_f64(a0), as_f64(a1), as_f64(b0), as_f64(b1));
    let mut p = [[0.0f64; LANES]; 4];
    let mut q = [[0.0f64; LANES]; 4];
    let body = a0.len() / LANES * LANES;
    for (((x0, x1), y0), y1) in a0[..body]
        .chunks_exact(LANES)
        .zip(a1[..body].chunks_exact(LANES))
        .zip(b0[..body].chunks_exact(LANES))
        .zip(b1[..body].chunks_exact(LANES))
    {
        let s0 = swap_pairs(y0);
        let s1 = swap_pairs(y1);
        for l in 0..LANES {
            p[0][l] = madd(x0[l], y0[l], p[0][l]);
            q[0][l] = madd(x0[l], s0[l], q[0][l]);
            p[1][l] = madd(x1[l], y0[l], p[1][l]);
            q[1][l] = madd(x1[l], s0[l], q[1][l]);
            p[2][l] = madd(x0[l], y1[l], p[2][l]);
            q[2][l] = madd(x0[l], s1[l], q[2][l]);
            p[3][l] = madd(x1[l], y1[l], p[3][l]);
            q[3][l] = madd(x1[l], s1[l], q[3][l]);
        }
    }
    let mut out = [reduce(&p[0], &q[0]), reduce(&p[1], &q[1]), reduce(&p[2], &q[2]), reduce(&p[3], &q[3])];
    let (h0, h1) = (body / 2, a0.len() / 2);
    let (ca0, ca1, cb0, cb1) = (&as_c64(a0)[h0..h1], &as_c64(a1)[h0..h1], &as_c64(b0)[h0..h1], &as_c64(b1)[h0..h1]);
    for t in 0..ca0.len() {
        let (x0, x1) = (ca0[t].conj(), ca1[t].conj());
        out[0] += x0 * cb0[t];
        out[1] += x1 * cb0[t];
        out[2] += x0 * cb1[t];
        out[3] += x1 * cb1[t];
    }
    out
}

#[inline(always)]
fn as_c64(s: &[f64]) -> &[C64] {
    // SAFETY: inverse of `as_f64`; lengths are always even here.
    unsafe { std::slice::from_raw_parts(s.as_ptr() as *const C64, s.len() / 2) }
}

/// `c := β·c` over `region`; `β = 0` overwrites (NaN-safe), `β = 1` is a no-op.
pub(crate) fn scale_region(c: &mut MatMut<'_>, beta: C64, region: Region) {
    if beta == C64::new(1.0, 0.0) {
        return;
    }
    for j in 0..c.cols() {
        let start = match region {
            Region::Full => 0,
            Region::Lower => j.min(c.rows()),
        };
        let col = &mut c.col_mut(j)[start..];
        if beta == ZERO {
            col.fill(ZERO);
        } else {
            col.iter_mut().for_each(|v| *v *= beta);
        }
    }
}

/// `c += α·aᴴ·b` over `region`; `a` is k×m, `b` is k×n, `c` is m×n.
pub(crate) fn acc_conj_product(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, c: &mut MatMut<'_>, region: Region) {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    debug_assert_eq!(b.rows(), k);
    debug_assert_eq!((c.rows(), c.cols()), (m, n));
    if k == 0 || m == 0 || n == 0 || alpha == ZERO {
        return;
    }
    let mut p0 = 0;
    while p0 < k {
        let kc = KC.min(k - p0);
        let mut j = 0;
        while j < n {
            let j1 = (j + 1).min(n - 1);
            let bj0 = &b.col(j)[p0..p0 + kc];
            let bj1 = &b.col(j1)[p0..p0 + kc];
            let mut i = match region {
                Region::Full => 0,
                Region::Lower => j,
            };
            while i < m {
                let i1 = (i + 1).min(m - 1);
                let ai0 = &a.col(i)[p0..p0 + kc];
                let ai1 = &a.col(i1)[p0..p0 + kc];
                let d = dot_conj_2x2(ai0, ai1, bj0, bj1);
                let cells = [(i, j, d[0]), (i1, j, d[1]), (i, j1, d[2]), (i1, j1, d[3])];
                for (slot, &(ii, jj, v)) in cells.iter().enumerate() {
                    // duplicated edge rows/columns are computed but written once
                    let dup = (slot & 1 == 1 && i1 == i) || (slot >= 2 && j1 == j);
                    if !dup && region.keeps(ii, jj) {
                        // SAFETY: ii < m, jj < n.
                        unsafe { *c.ptr_at(ii, jj) += alpha * v };
                    }
                }
                i += 2;
            }
            j += 2;
        }
        p0 += kc;
    }
}

/// `c += α·a·b` with `a` (m×k) and `b` (k×n), no transposition.
pub(crate) fn acc_plain_product(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, c: &mut MatMut<'_>) {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    if m == 0 || k == 0 || n == 0 || alpha == ZERO {
        return;
    }
    for j in 0..n {
        let bj = b.col(j);
        let cj = c.col_mut(j);
        for (p, &bp) in bj.iter().enumerate().take(k) {
            let s = alpha * bp;
            for (cv, av) in cj.iter_mut().zip(a.col(p)) {
                *cv += s * av;
            }
        }
    }
}

pub(crate) fn zero_diag_imag(c: &mut MatMut<'_>) {
    for d in 0..c.rows().min(c.cols()) {
        let v = c.get(d, d);
        c.set(d, d, C64::new(v.re, 0.0));
    }
}

/// Diagonal tile of `C := α·aᴴ·a + β·C` (lower part only).
pub fn tile_herk(alpha: f64, a: MatRef<'_>, beta: f64, c: &mut MatMut<'_>) {
    scale_region(c, C64::new(beta, 0.0), Region::Lower);
    acc_conj_product(C64::new(alpha, 0.0), a, a, c, Region::Lower);
    zero_diag_imag(c);
}

/// Diagonal tile of `C := α·aᴴ·b + ᾱ·bᴴ·a + β·C` (lower part only).
pub fn tile_her2k(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut MatMut<'_>) {
    scale_region(c, C64::new(beta, 0.0), Region::Lower);
    acc_conj_product(alpha, a, b, c, Region::Lower);
    acc_conj_product(alpha.conj(), b, a, c, Region::Lower);
    zero_diag_imag(c);
}

/// Diagonal tile of `C := α·aᴴ·b + β·C` (lower part only).
pub fn tile_herkx(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut MatMut<'_>) {
    scale_region(c, C64::new(beta, 0.0), Region::Lower);
    acc_conj_product(alpha, a, b, c, Region::Lower);
}

/// Full tile of `C := α·aᴴ·b + β·C`.
pub fn tile_gemm(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: C64, c: &mut MatMut<'_>) {
    scale_region(c, beta, Region::Full);
    acc_conj_product(alpha, a, b, c, Region::Full);
}

/// Off-diagonal tile of a rank-2k update: `C := α·a_rᴴ·b_c + ᾱ·b_rᴴ·a_c + β·C`.
pub fn tile_gemm2(
    alpha: C64,
    a_rows: MatRef<'_>,
    b_cols: MatRef<'_>,
    b_rows: MatRef<'_>,
    a_cols: MatRef<'_>,
    beta: C64,
    c: &mut MatMut<'_>,
) {
    scale_region(c, beta, Region::Full);
    acc_conj_product(alpha, a_rows, b_cols, c, Region::Full);
    acc_conj_product(alpha.conj(), b_rows, a_cols, c, Region::Full);
}
