//! Single-threaded loop implementations. Straightforward by intent: these
//! are the baseline the blocked kernels are compared against.

use super::Trans;
use crate::matrix::{MatMut, MatRef, C64, ZERO};

#[inline]
fn op_get(m: MatRef<'_>, t: Trans, i: usize, j: usize) -> C64 {
    match t {
        Trans::No => m.get(i, j),
        Trans::ConjTrans => m.get(j, i).conj(),
    }
}

#[inline]
fn update(c: &mut MatMut<'_>, i: usize, j: usize, alpha: C64, s: C64, beta: C64) {
    let old = if beta == ZERO { ZERO } else { beta * c.get(i, j) };
    c.set(i, j, alpha * s + old);
}

/// Hermitian element read from the lower triangle.
#[inline]
pub(crate) fn herm_get(a: MatRef<'_>, i: usize, j: usize) -> C64 {
    if i > j {
        a.get(i, j)
    } else if i < j {
        a.get(j, i).conj()
    } else {
        C64::new(a.get(i, i).re, 0.0)
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(alpha: C64, a: MatRef<'_>, ta: Trans, b: MatRef<'_>, tb: Trans, beta: C64, c: &mut MatMut<'_>, k: usize) {
    for j in 0..c.cols() {
        for i in 0..c.rows() {
            let mut s = ZERO;
            for p in 0..k {
                s += op_get(a, ta, i, p) * op_get(b, tb, p, j);
            }
            update(c, i, j, alpha, s, beta);
        }
    }
}

pub(crate) fn hemm_left(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: C64, c: &mut MatMut<'_>) {
    let n = a.rows();
    for j in 0..c.cols() {
        for i in 0..c.rows() {
            let mut s = ZERO;
            for p in 0..n {
                s += herm_get(a, i, p) * b.get(p, j);
            }
            update(c, i, j, alpha, s, beta);
        }
    }
}

pub(crate) fn hemm_right(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: C64, c: &mut MatMut<'_>) {
    let n = a.rows();
    for j in 0..c.cols() {
        for i in 0..c.rows() {
            let mut s = ZERO;
            for p in 0..n {
                s += b.get(i, p) * herm_get(a, p, j);
            }
            update(c, i, j, alpha, s, beta);
        }
    }
}

/// Lower triangle of `α·aᴴ·b + β·C`, plus `ᾱ·bᴴ·a` when `second` is set.
/// `a` and `b` are k×n.
fn lower_update(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, second: bool, beta: f64, c: &mut MatMut<'_>, real_diag: bool) {
    let (k, n) = (a.rows(), a.cols());
    for j in 0..n {
        for i in j..n {
            let mut s = ZERO;
            let mut t = ZERO;
            for p in 0..k {
                s += a.get(p, i).conj() * b.get(p, j);
                if second {
                    t += b.get(p, i).conj() * a.get(p, j);
                }
            }
            let old = if beta == 0.0 { ZERO } else { beta * c.get(i, j) };
            let mut v = alpha * s + old;
            if second {
                v += alpha.conj() * t;
            }
            if real_diag && i == j {
                v.im = 0.0;
            }
            c.set(i, j, v);
        }
    }
}

pub(crate) fn herk(alpha: f64, a: MatRef<'_>, beta: f64, c: &mut MatMut<'_>) {
    lower_update(C64::new(alpha, 0.0), a, a, false, beta, c, true);
}

pub(crate) fn her2k(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut MatMut<'_>) {
    lower_update(alpha, a, b, true, beta, c, true);
}

pub(crate) fn herkx(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut MatMut<'_>) {
    lower_update(alpha, a, b, false, beta, c, false);
}
