//! BLAS-3 style kernels on complex double-precision matrices.
//!
//! Two interchangeable implementations sit behind [`Kernels`]:
//! [`KernelVariant::Reference`] (plain loops, single thread) and
//! [`KernelVariant::BlockedParallel`] (tiled, register-blocked, rayon).
//! Every call charges its real-flop count to the attached [`FlopLedger`].
//!
//! Hermitian inputs are read from their lower triangle only, and Hermitian
//! outputs (`herk`, `her2k`, `herkx`) write their lower triangle only.
//! Rank-k style updates take their operands in conjugate-transpose form
//! (`k × n`), matching how stacked per-atom coefficients are laid out.

mod blocked;
pub mod micro;
mod reference;

use rayon::prelude::*;

use crate::error::KernelError;
use crate::ledger::{self, FlopLedger};
use crate::matrix::{ComplexMatrix, MatMut, MatRef, C64, ZERO};

pub use micro::Region;

pub const DEFAULT_BLOCK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trans {
    No,
    ConjTrans,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Uplo {
    Lower,
    Upper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    Reference,
    BlockedParallel { block: usize },
}

impl Default for KernelVariant {
    fn default() -> Self {
        KernelVariant::BlockedParallel { block: DEFAULT_BLOCK }
    }
}

/// Kernel entry points bound to a variant and a flop ledger.
#[derive(Clone, Copy)]
pub struct Kernels<'l> {
    variant: KernelVariant,
    ledger: &'l FlopLedger,
}

fn op_shape(m: MatRef<'_>, t: Trans) -> (usize, usize) {
    match t {
        Trans::No => (m.rows(), m.cols()),
        Trans::ConjTrans => (m.cols(), m.rows()),
    }
}

/// `m` in conjugate-transpose layout: `m` itself for `ConjTrans`, else `mᴴ`.
fn ch_layout(m: MatRef<'_>, t: Trans) -> Option<ComplexMatrix> {
    match t {
        Trans::ConjTrans => None,
        Trans::No => Some(m.to_owned().conj_transpose()),
    }
}

/// Full Hermitian copy of the lower triangle of `a`.
fn hermitian_full(a: MatRef<'_>) -> ComplexMatrix {
    ComplexMatrix::from_fn(a.rows(), a.cols(), |i, j| reference::herm_get(a, i, j))
}

impl<'l> Kernels<'l> {
    pub fn new(variant: KernelVariant, ledger: &'l FlopLedger) -> Self {
        if let KernelVariant::BlockedParallel { block } = variant {
            assert!(block > 0, "block size must be positive");
        }
        Self { variant, ledger }
    }

    pub fn variant(&self) -> KernelVariant {
        self.variant
    }

    pub fn ledger(&self) -> &'l FlopLedger {
        self.ledger
    }

    /// `C := α·op(A)·op(B) + β·C`.
    #[allow(clippy::too_many_arguments)]
    pub fn gemm(
        &self,
        alpha: C64,
        a: MatRef<'_>,
        ta: Trans,
        b: MatRef<'_>,
        tb: Trans,
        beta: C64,
        mut c: MatMut<'_>,
    ) -> Result<(), KernelError> {
        let (m, k) = op_shape(a, ta);
        let (k2, n) = op_shape(b, tb);
        if k != k2 || c.rows() != m || c.cols() != n {
            return Err(KernelError::dim(
                "zgemm",
                format!("op(A) {m}x{k}, op(B) {k2}x{n}, C {}x{}", c.rows(), c.cols()),
            ));
        }
        self.ledger.charge("zgemm", ledger::gemm_flops(m, n, k));
        if alpha == ZERO && beta == C64::new(1.0, 0.0) {
            return Ok(());
        }
        match self.variant {
            KernelVariant::Reference => reference::gemm(alpha, a, ta, b, tb, beta, &mut c, k),
            KernelVariant::BlockedParallel { block } => match (ta, tb) {
                (Trans::ConjTrans, Trans::No) => blocked::gemm_ch(alpha, a, b, beta, c, block),
                (Trans::No, Trans::No) => blocked::gemm_nn(alpha, a, b, beta, c, block),
                (Trans::ConjTrans, Trans::ConjTrans) => {
                    let bh = b.to_owned().conj_transpose();
                    blocked::gemm_ch(alpha, a, bh.as_ref(), beta, c, block)
                }
                (Trans::No, Trans::ConjTrans) => {
                    let ah = a.to_owned().conj_transpose();
                    let bh = b.to_owned().conj_transpose();
                    blocked::gemm_ch(alpha, ah.as_ref(), bh.as_ref(), beta, c, block)
                }
            },
        }
        Ok(())
    }

    /// `C := α·A·B + β·C` (left) or `C := α·B·A + β·C` (right), `A`
    /// Hermitian with its lower triangle authoritative.
    pub fn hemm(&self, side: Side, alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: C64, mut c: MatMut<'_>) -> Result<(), KernelError> {
        let n = a.rows();
        if a.cols() != n {
            return Err(KernelError::dim("zhemm", format!("A is {}x{}", a.rows(), a.cols())));
        }
        let ok = match side {
            Side::Left => b.rows() == n,
            Side::Right => b.cols() == n,
        };
        if !ok || c.rows() != b.rows() || c.cols() != b.cols() {
            return Err(KernelError::dim(
                "zhemm",
                format!("A {n}x{n}, B {}x{}, C {}x{}", b.rows(), b.cols(), c.rows(), c.cols()),
            ));
        }
        let other = match side {
            Side::Left => b.cols(),
            Side::Right => b.rows(),
        };
        self.ledger.charge("zhemm", ledger::hemm_flops(n, other));
        if alpha == ZERO && beta == C64::new(1.0, 0.0) {
            return Ok(());
        }
        match (self.variant, side) {
            (KernelVariant::Reference, Side::Left) => reference::hemm_left(alpha, a, b, beta, &mut c),
            (KernelVariant::Reference, Side::Right) => reference::hemm_right(alpha, a, b, beta, &mut c),
            (KernelVariant::BlockedParallel { block }, Side::Left) => {
                // A = Aᴴ, so A·B is the conjugate-transpose product of the full copy.
                let full = hermitian_full(a);
                blocked::gemm_ch(alpha, full.as_ref(), b, beta, c, block)
            }
            (KernelVariant::BlockedParallel { block }, Side::Right) => {
                let full = hermitian_full(a);
                blocked::gemm_nn(alpha, b, full.as_ref(), beta, c, block)
            }
        }
        Ok(())
    }

    fn check_rank_update(kernel: &'static str, a: MatRef<'_>, b: MatRef<'_>, trans: Trans, c: &MatMut<'_>) -> Result<(usize, usize), KernelError> {
        let (n, k) = op_shape(a, trans);
        let (n2, k2) = op_shape(b, trans);
        if n != n2 || k != k2 || c.rows() != n || c.cols() != n {
            return Err(KernelError::dim(
                kernel,
                format!("A {}x{}, B {}x{}, C {}x{}", a.rows(), a.cols(), b.rows(), b.cols(), c.rows(), c.cols()),
            ));
        }
        Ok((n, k))
    }

    /// `C := α·Aᴴ·A + β·C` (`ConjTrans`, A is k×n) or `C := α·A·Aᴴ + β·C`
    /// (`No`, A is n×k). Lower triangle only.
    pub fn herk(&self, alpha: f64, a: MatRef<'_>, trans: Trans, beta: f64, c: MatMut<'_>) -> Result<(), KernelError> {
        let (n, k) = Self::check_rank_update("zherk", a, a, trans, &c)?;
        self.ledger.charge("zherk", ledger::herk_flops(n, k));
        if alpha == 0.0 && beta == 1.0 {
            return Ok(());
        }
        let owned = ch_layout(a, trans);
        let a = owned.as_ref().map_or(a, ComplexMatrix::as_ref);
        self.run_herk(alpha, a, beta, c);
        Ok(())
    }

    /// `C := α·Aᴴ·B + ᾱ·Bᴴ·A + β·C` (`ConjTrans`, A and B k×n) or the
    /// `A·Bᴴ` form for `No`. Lower triangle only.
    #[allow(clippy::too_many_arguments)]
    pub fn her2k(&self, alpha: C64, a: MatRef<'_>, b: MatRef<'_>, trans: Trans, beta: f64, c: MatMut<'_>) -> Result<(), KernelError> {
        let (n, k) = Self::check_rank_update("zher2k", a, b, trans, &c)?;
        self.ledger.charge("zher2k", ledger::her2k_flops(n, k));
        if alpha == ZERO && beta == 1.0 {
            return Ok(());
        }
        let (oa, ob) = (ch_layout(a, trans), ch_layout(b, trans));
        let a = oa.as_ref().map_or(a, ComplexMatrix::as_ref);
        let b = ob.as_ref().map_or(b, ComplexMatrix::as_ref);
        self.run_her2k(alpha, a, b, beta, c);
        Ok(())
    }

    /// `C := α·Aᴴ·B + β·C`, lower triangle only. The caller guarantees the
    /// product is Hermitian; charged at half the general product.
    #[allow(clippy::too_many_arguments)]
    pub fn herkx(&self, alpha: C64, a: MatRef<'_>, b: MatRef<'_>, trans: Trans, beta: f64, c: MatMut<'_>) -> Result<(), KernelError> {
        let (n, k) = Self::check_rank_update("zherkx", a, b, trans, &c)?;
        self.ledger.charge("zherkx", ledger::herk_flops(n, k));
        if alpha == ZERO && beta == 1.0 {
            return Ok(());
        }
        let (oa, ob) = (ch_layout(a, trans), ch_layout(b, trans));
        let a = oa.as_ref().map_or(a, ComplexMatrix::as_ref);
        let b = ob.as_ref().map_or(b, ComplexMatrix::as_ref);
        self.run_herkx(alpha, a, b, beta, c);
        Ok(())
    }

    // Unchecked, uncharged bodies in conjugate-transpose layout. The hybrid
    // strategies call these for their CPU pieces.

    pub(crate) fn run_herk(&self, alpha: f64, a: MatRef<'_>, beta: f64, mut c: MatMut<'_>) {
        match self.variant {
            KernelVariant::Reference => reference::herk(alpha, a, beta, &mut c),
            KernelVariant::BlockedParallel { block } => blocked::herk(alpha, a, beta, c, block),
        }
    }

    pub(crate) fn run_her2k(&self, alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, mut c: MatMut<'_>) {
        match self.variant {
            KernelVariant::Reference => reference::her2k(alpha, a, b, beta, &mut c),
            KernelVariant::BlockedParallel { block } => blocked::her2k(alpha, a, b, beta, c, block),
        }
    }

    pub(crate) fn run_herkx(&self, alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, mut c: MatMut<'_>) {
        match self.variant {
            KernelVariant::Reference => reference::herkx(alpha, a, b, beta, &mut c),
            KernelVariant::BlockedParallel { block } => blocked::herkx(alpha, a, b, beta, c, block),
        }
    }

    /// `C := α·aᴴ·b + β·C`, full output.
    pub(crate) fn run_gemm_ch(&self, alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: C64, mut c: MatMut<'_>) {
        match self.variant {
            KernelVariant::Reference => {
                let k = a.rows();
                reference::gemm(alpha, a, Trans::ConjTrans, b, Trans::No, beta, &mut c, k)
            }
            KernelVariant::BlockedParallel { block } => blocked::gemm_ch(alpha, a, b, beta, c, block),
        }
    }

    /// `B := α·op(T)·B` (left) or `B := α·B·op(T)` (right), `T` triangular.
    pub fn trmm(&self, side: Side, uplo: Uplo, trans: Trans, alpha: C64, t: MatRef<'_>, mut b: MatMut<'_>) -> Result<(), KernelError> {
        let n = t.rows();
        let fits = match side {
            Side::Left => b.rows() == n,
            Side::Right => b.cols() == n,
        };
        if t.cols() != n || !fits {
            return Err(KernelError::dim(
                "ztrmm",
                format!("T {}x{}, B {}x{}", t.rows(), t.cols(), b.rows(), b.cols()),
            ));
        }
        let other = match side {
            Side::Left => b.cols(),
            Side::Right => b.rows(),
        };
        self.ledger.charge("ztrmm", ledger::trmm_flops(n, other));
        // op(T) is lower triangular exactly when (Lower, No) or (Upper, ConjTrans).
        let eff_lower = matches!((uplo, trans), (Uplo::Lower, Trans::No) | (Uplo::Upper, Trans::ConjTrans));
        let op_t = |i: usize, j: usize| -> C64 {
            match trans {
                Trans::No => t.get(i, j),
                Trans::ConjTrans => t.get(j, i).conj(),
            }
        };
        let range = |i: usize| if eff_lower { 0..i + 1 } else { i..n };
        match side {
            Side::Left => {
                let apply_col = |mut v: MatMut<'_>| {
                    let col = v.col_mut(0);
                    let x = col.to_vec();
                    for (i, out) in col.iter_mut().enumerate() {
                        let s: C64 = range(i).map(|p| op_t(i, p) * x[p]).sum();
                        *out = alpha * s;
                    }
                };
                let mut columns = Vec::with_capacity(b.cols());
                let mut rest = b;
                while rest.cols() > 0 {
                    let (first, tail) = rest.split_at_col(1);
                    columns.push(first);
                    rest = tail;
                }
                match self.variant {
                    KernelVariant::Reference => columns.into_iter().for_each(apply_col),
                    KernelVariant::BlockedParallel { .. } => columns.into_par_iter().for_each(apply_col),
                }
            }
            Side::Right => {
                // op(T)[p][j] is nonzero for p in range(j) transposed: lower ⇒ p ≥ j.
                let range_t = |j: usize| if eff_lower { j..n } else { 0..j + 1 };
                for i in 0..b.rows() {
                    let x: Vec<C64> = (0..n).map(|p| b.get(i, p)).collect();
                    for j in 0..n {
                        let s: C64 = range_t(j).map(|p| x[p] * op_t(p, j)).sum();
                        b.set(i, j, alpha * s);
                    }
                }
            }
        }
        Ok(())
    }

    /// Lower Cholesky factor `L` with `L·Lᴴ = A`, reading only the lower
    /// triangle of `A`. The flop count is charged per attempt, whether or
    /// not the factorization succeeds.
    pub fn potrf(&self, a: MatRef<'_>) -> Result<ComplexMatrix, KernelError> {
        let n = a.rows();
        if a.cols() != n {
            return Err(KernelError::dim("zpotrf", format!("A is {}x{}", a.rows(), a.cols())));
        }
        self.ledger.charge("zpotrf", ledger::potrf_flops(n));
        let mut l = ComplexMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a.get(j, j).re;
            for p in 0..j {
                d -= l[(j, p)].norm_sqr();
            }
            if !d.is_finite() || d <= 0.0 {
                return Err(KernelError::NotPositiveDefinite { pivot: j });
            }
            let djj = d.sqrt();
            l[(j, j)] = C64::new(djj, 0.0);
            for i in j + 1..n {
                let mut s = a.get(i, j);
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(l)
    }

    /// `X[r][c] = u[r]·B[r][c]`.
    pub fn diag_scale(&self, u: &[f64], b: MatRef<'_>, mut x: MatMut<'_>) -> Result<(), KernelError> {
        if u.len() != b.rows() || (x.rows(), x.cols()) != (b.rows(), b.cols()) {
            return Err(KernelError::dim(
                "scaling",
                format!("U has {} entries, B {}x{}, X {}x{}", u.len(), b.rows(), b.cols(), x.rows(), x.cols()),
            ));
        }
        self.ledger.charge("scaling", ledger::scaling_flops(b.rows(), b.cols()));
        for j in 0..b.cols() {
            for ((out, v), s) in x.col_mut(j).iter_mut().zip(b.col(j)).zip(u) {
                *out = v * *s;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
