use super::*;
use crate::matrix::{rel_frobenius_error, HermitianView, ONE};
use crate::testutil::{naive_mul, random_hermitian, random_matrix};

const VARIANTS: [KernelVariant; 3] = [
    KernelVariant::Reference,
    KernelVariant::BlockedParallel { block: 128 },
    KernelVariant::BlockedParallel { block: 3 },
];

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn poisoned(n: usize) -> HermitianView {
    let mut h = HermitianView::zeros(n);
    h.poison_upper(c(f64::NAN, f64::NAN));
    h
}

/// Lower triangle of `m`, mirrored.
fn mirrored(m: &ComplexMatrix) -> ComplexMatrix {
    HermitianView::new(m.clone()).unwrap().to_full()
}

#[test]
fn gemm_scalar_hand_value() {
    for v in VARIANTS {
        let ledger = FlopLedger::new();
        let k = Kernels::new(v, &ledger);
        let a = ComplexMatrix::from_rows(&[vec![c(1.0, 1.0)]]);
        let b = ComplexMatrix::from_rows(&[vec![c(2.0, 0.0)]]);
        let mut out = ComplexMatrix::zeros(1, 1);
        k.gemm(ONE, a.as_ref(), Trans::No, b.as_ref(), Trans::No, ZERO, out.as_mut()).unwrap();
        assert_eq!(out[(0, 0)], c(2.0, 2.0));
        assert_eq!(ledger.get("zgemm"), 8);
    }
}

#[test]
fn gemm_alpha_zero_beta_one_is_bit_exact_noop() {
    let a = random_matrix(4, 3, 1);
    let b = random_matrix(3, 5, 2);
    let orig = random_matrix(4, 5, 3);
    for v in VARIANTS {
        let ledger = FlopLedger::new();
        let mut out = orig.clone();
        Kernels::new(v, &ledger)
            .gemm(ZERO, a.as_ref(), Trans::No, b.as_ref(), Trans::No, ONE, out.as_mut())
            .unwrap();
        assert_eq!(out, orig);
    }
}

#[test]
fn gemm_all_transpose_combinations_match_naive() {
    let alpha = c(0.7, -0.2);
    let beta = c(-0.3, 0.5);
    for (ta, tb) in [(Trans::No, Trans::No), (Trans::ConjTrans, Trans::No), (Trans::No, Trans::ConjTrans), (Trans::ConjTrans, Trans::ConjTrans)] {
        let a = match ta {
            Trans::No => random_matrix(5, 4, 11),
            Trans::ConjTrans => random_matrix(4, 5, 11),
        };
        let b = match tb {
            Trans::No => random_matrix(4, 3, 12),
            Trans::ConjTrans => random_matrix(3, 4, 12),
        };
        let c0 = random_matrix(5, 3, 13);
        let opa = if ta == Trans::No { a.clone() } else { a.conj_transpose() };
        let opb = if tb == Trans::No { b.clone() } else { b.conj_transpose() };
        let mut expect = naive_mul(&opa, &opb);
        for (e, c0v) in expect.data_mut().iter_mut().zip(c0.data()) {
            *e = alpha * *e + beta * c0v;
        }
        for v in VARIANTS {
            let ledger = FlopLedger::new();
            let mut out = c0.clone();
            Kernels::new(v, &ledger).gemm(alpha, a.as_ref(), ta, b.as_ref(), tb, beta, out.as_mut()).unwrap();
            assert!(rel_frobenius_error(&out, &expect).unwrap() <= 1e-14, "{ta:?} {tb:?} {v:?}");
            assert_eq!(ledger.get("zgemm"), 8 * 5 * 3 * 4);
        }
    }
}

#[test]
fn gemm_rejects_bad_dims() {
    let ledger = FlopLedger::new();
    let k = Kernels::new(KernelVariant::default(), &ledger);
    let a = random_matrix(2, 3, 1);
    let mut out = ComplexMatrix::zeros(2, 2);
    let err = k.gemm(ONE, a.as_ref(), Trans::No, a.as_ref(), Trans::No, ZERO, out.as_mut()).unwrap_err();
    assert!(matches!(err, KernelError::Dimension { kernel: "zgemm", .. }));
    assert_eq!(ledger.total(), 0);
}

#[test]
fn hemm_cases() {
    for v in VARIANTS {
        let ledger = FlopLedger::new();
        let k = Kernels::new(v, &ledger);
        let a = ComplexMatrix::from_rows(&[vec![c(2.0, 0.0)]]);
        let b = ComplexMatrix::from_rows(&[vec![c(1.0, 1.0)]]);
        let mut out = ComplexMatrix::zeros(1, 1);
        k.hemm(Side::Left, ONE, a.as_ref(), b.as_ref(), ZERO, out.as_mut()).unwrap();
        assert_eq!(out[(0, 0)], c(2.0, 2.0));

        let b = random_matrix(2, 4, 5);
        let alpha = c(0.5, 0.25);
        let mut out = ComplexMatrix::zeros(2, 4);
        k.hemm(Side::Left, alpha, ComplexMatrix::identity(2).as_ref(), b.as_ref(), ZERO, out.as_mut()).unwrap();
        let mut expect = b.clone();
        expect.scale(alpha);
        assert!(rel_frobenius_error(&out, &expect).unwrap() < 1e-15);
    }
}

#[test]
fn hemm_reads_only_lower_triangle() {
    let t = random_hermitian(5, 21);
    let mut poisoned_t = t.clone();
    for j in 0..5 {
        for i in 0..j {
            poisoned_t[(i, j)] = c(f64::NAN, f64::NAN);
        }
    }
    let b = random_matrix(5, 7, 22);
    let br = random_matrix(7, 5, 23);
    for v in VARIANTS {
        let ledger = FlopLedger::new();
        let k = Kernels::new(v, &ledger);
        let mut x = ComplexMatrix::zeros(5, 7);
        let mut y = ComplexMatrix::zeros(5, 7);
        k.hemm(Side::Left, ONE, t.as_ref(), b.as_ref(), ZERO, x.as_mut()).unwrap();
        k.hemm(Side::Left, ONE, poisoned_t.as_ref(), b.as_ref(), ZERO, y.as_mut()).unwrap();
        assert_eq!(x, y);
        assert!(rel_frobenius_error(&x, &naive_mul(&t, &b)).unwrap() < 1e-14);

        let mut x = ComplexMatrix::zeros(7, 5);
        let mut y = ComplexMatrix::zeros(7, 5);
        k.hemm(Side::Right, ONE, t.as_ref(), br.as_ref(), ZERO, x.as_mut()).unwrap();
        k.hemm(Side::Right, ONE, poisoned_t.as_ref(), br.as_ref(), ZERO, y.as_mut()).unwrap();
        assert_eq!(x, y);
        assert!(rel_frobenius_error(&x, &naive_mul(&br, &t)).unwrap() < 1e-14);
        assert_eq!(ledger.get("zhemm"), 4 * 8 * 25 * 7);
    }
}

#[test]
fn herk_hand_value_and_noop() {
    for v in VARIANTS {
        let ledger = FlopLedger::new();
        let k = Kernels::new(v, &ledger);
        let a = ComplexMatrix::from_rows(&[vec![c(1.0, 1.0)]]);
        let mut out = HermitianView::zeros(1);
        k.herk(1.0, a.as_ref(), Trans::ConjTrans, 0.0, out.as_mut()).unwrap();
        assert_eq!(out.matrix()[(0, 0)], c(2.0, 0.0));

        let a = random_matrix(4, 3, 9);
        let orig = random_matrix(3, 3, 10);
        let mut out = orig.clone();
        k.herk(0.0, a.as_ref(), Trans::ConjTrans, 1.0, out.as_mut()).unwrap();
        assert_eq!(out, orig);
    }
}

#[test]
fn herk_matches_naive_and_keeps_upper_poison() {
    let a = random_matrix(6, 4, 31);
    let expect = naive_mul(&a.conj_transpose(), &a);
    for v in VARIANTS {
        let ledger = FlopLedger::new();
        let mut out = poisoned(4);
        let before = out.upper_bits();
        Kernels::new(v, &ledger).herk(1.0, a.as_ref(), Trans::ConjTrans, 0.0, out.as_mut()).unwrap();
        assert_eq!(out.upper_bits(), before);
        assert!(rel_frobenius_error(&out.to_full(), &expect).unwrap() <= 1e-14);
        assert_eq!(ledger.get("zherk"), 4 * 6 * 16);
    }
}

#[test]
fn herk_no_trans_form() {
    let a = random_matrix(4, 6, 32);
    let expect = naive_mul(&a, &a.conj_transpose());
    let ledger = FlopLedger::new();
    let mut out = HermitianView::zeros(4);
    Kernels::new(KernelVariant::default(), &ledger)
        .herk(1.0, a.as_ref(), Trans::No, 0.0, out.as_mut())
        .unwrap();
    assert!(rel_frobenius_error(&out.to_full(), &expect).unwrap() <= 1e-14);
}

#[test]
fn her2k_hand_value_and_noop() {
    for v in VARIANTS {
        let ledger = FlopLedger::new();
        let k = Kernels::new(v, &ledger);
        // (1)(i) + (−i)(1) = 0
        let a = ComplexMatrix::from_rows(&[vec![ONE]]);
        let b = ComplexMatrix::from_rows(&[vec![c(0.0, 1.0)]]);
        let mut out = HermitianView::zeros(1);
        k.her2k(ONE, a.as_ref(), b.as_ref(), Trans::ConjTrans, 0.0, out.as_mut()).unwrap();
        assert_eq!(out.matrix()[(0, 0)], ZERO);

        let a = random_matrix(4, 3, 1);
        let orig = random_matrix(3, 3, 2);
        let mut out = orig.clone();
        k.her2k(ZERO, a.as_ref(), a.as_ref(), Trans::ConjTrans, 1.0, out.as_mut()).unwrap();
        assert_eq!(out, orig);
    }
}

#[test]
fn her2k_matches_naive() {
    let a = random_matrix(5, 3, 41);
    let b = random_matrix(5, 3, 42);
    let alpha = c(0.8, 0.3);
    let mut expect = naive_mul(&a.conj_transpose(), &b);
    let second = naive_mul(&b.conj_transpose(), &a);
    for (e, s) in expect.data_mut().iter_mut().zip(second.data()) {
        *e = alpha * *e + alpha.conj() * s;
    }
    for v in VARIANTS {
        let ledger = FlopLedger::new();
        let mut out = poisoned(3);
        let before = out.upper_bits();
        Kernels::new(v, &ledger)
            .her2k(alpha, a.as_ref(), b.as_ref(), Trans::ConjTrans, 0.0, out.as_mut())
            .unwrap();
        assert_eq!(out.upper_bits(), before);
        assert!(rel_frobenius_error(&out.to_full(), &expect).unwrap() <= 1e-14);
        assert_eq!(ledger.get("zher2k"), 8 * 5 * 9);
    }
}

#[test]
fn herkx_hand_value_and_hermitian_product() {
    let t = random_hermitian(6, 51);
    let a = random_matrix(6, 4, 52);
    let b = naive_mul(&t, &a);
    let expect = naive_mul(&a.conj_transpose(), &b);
    for v in VARIANTS {
        let ledger = FlopLedger::new();
        let k = Kernels::new(v, &ledger);
        let one = ComplexMatrix::from_rows(&[vec![c(1.0, 1.0)]]);
        let mut out = HermitianView::zeros(1);
        k.herkx(ONE, one.as_ref(), one.as_ref(), Trans::ConjTrans, 0.0, out.as_mut()).unwrap();
        assert_eq!(out.matrix()[(0, 0)], c(2.0, 0.0));

        let mut out = poisoned(4);
        let before = out.upper_bits();
        k.herkx(ONE, a.as_ref(), b.as_ref(), Trans::ConjTrans, 0.0, out.as_mut()).unwrap();
        assert_eq!(out.upper_bits(), before);
        assert!(rel_frobenius_error(&out.to_full(), &expect).unwrap() <= 1e-13);
        assert_eq!(ledger.get("zherkx"), 4 + 4 * 6 * 16);

        let orig = random_matrix(4, 4, 53);
        let mut out = orig.clone();
        k.herkx(ZERO, a.as_ref(), b.as_ref(), Trans::ConjTrans, 1.0, out.as_mut()).unwrap();
        assert_eq!(out, orig);
    }
}

#[test]
fn rank_updates_reject_bad_dims() {
    let ledger = FlopLedger::new();
    let k = Kernels::new(KernelVariant::default(), &ledger);
    let a = random_matrix(3, 4, 1);
    let b = random_matrix(3, 5, 2);
    let mut out = ComplexMatrix::zeros(4, 4);
    assert!(k.her2k(ONE, a.as_ref(), b.as_ref(), Trans::ConjTrans, 0.0, out.as_mut()).is_err());
    assert!(k.herkx(ONE, a.as_ref(), b.as_ref(), Trans::ConjTrans, 0.0, out.as_mut()).is_err());
    let mut wrong = ComplexMatrix::zeros(3, 3);
    assert!(k.herk(1.0, a.as_ref(), Trans::ConjTrans, 0.0, wrong.as_mut()).is_err());
}

#[test]
fn trmm_cases() {
    for v in VARIANTS {
        let ledger = FlopLedger::new();
        let k = Kernels::new(v, &ledger);
        let t = ComplexMatrix::from_rows(&[vec![c(3.0, 0.0)]]);
        let mut b = ComplexMatrix::from_rows(&[vec![c(1.0, 1.0)]]);
        k.trmm(Side::Left, Uplo::Lower, Trans::No, ONE, t.as_ref(), b.as_mut()).unwrap();
        assert_eq!(b[(0, 0)], c(3.0, 3.0));

        let orig = random_matrix(3, 4, 7);
        let mut b = orig.clone();
        k.trmm(Side::Left, Uplo::Lower, Trans::ConjTrans, ONE, ComplexMatrix::identity(3).as_ref(), b.as_mut())
            .unwrap();
        assert_eq!(b, orig);
    }
}

#[test]
fn trmm_matches_dense_product_with_zero_filled_triangle() {
    let raw = random_matrix(4, 4, 61);
    let bl = random_matrix(4, 3, 62);
    let br = random_matrix(3, 4, 63);
    let alpha = c(1.5, -0.5);
    for uplo in [Uplo::Lower, Uplo::Upper] {
        // T with the unused triangle zero-filled and the stored one poisoned-free
        let dense = ComplexMatrix::from_fn(4, 4, |i, j| {
            let inside = match uplo {
                Uplo::Lower => i >= j,
                Uplo::Upper => i <= j,
            };
            if inside { raw[(i, j)] } else { ZERO }
        });
        for trans in [Trans::No, Trans::ConjTrans] {
            let opt = if trans == Trans::No { dense.clone() } else { dense.conj_transpose() };
            for v in VARIANTS {
                let ledger = FlopLedger::new();
                let k = Kernels::new(v, &ledger);
                let mut left = bl.clone();
                k.trmm(Side::Left, uplo, trans, alpha, raw.as_ref(), left.as_mut()).unwrap();
                let mut expect = naive_mul(&opt, &bl);
                expect.scale(alpha);
                assert!(rel_frobenius_error(&left, &expect).unwrap() <= 1e-14, "{uplo:?} {trans:?}");

                let mut right = br.clone();
                k.trmm(Side::Right, uplo, trans, alpha, raw.as_ref(), right.as_mut()).unwrap();
                let mut expect = naive_mul(&br, &opt);
                expect.scale(alpha);
                assert!(rel_frobenius_error(&right, &expect).unwrap() <= 1e-14, "{uplo:?} {trans:?}");
                assert_eq!(ledger.get("ztrmm"), 2 * 4 * 16 * 3);
            }
        }
    }
}

#[test]
fn potrf_cases() {
    let ledger = FlopLedger::new();
    let k = Kernels::new(KernelVariant::default(), &ledger);
    let l = k.potrf(ComplexMatrix::from_rows(&[vec![c(4.0, 0.0)]]).as_ref()).unwrap();
    assert_eq!(l[(0, 0)], c(2.0, 0.0));
    let err = k.potrf(ComplexMatrix::from_rows(&[vec![c(-1.0, 0.0)]]).as_ref()).unwrap_err();
    assert_eq!(err, KernelError::NotPositiveDefinite { pivot: 0 });
    assert_eq!(ledger.get("zpotrf"), 2);

    let m = random_matrix(5, 5, 71);
    let mut a = naive_mul(&m.conj_transpose(), &m);
    for i in 0..5 {
        a[(i, i)] += ONE;
    }
    let mut lower_only = a.clone();
    for j in 0..5 {
        for i in 0..j {
            lower_only[(i, j)] = c(f64::NAN, 0.0);
        }
    }
    let l = k.potrf(lower_only.as_ref()).unwrap();
    for j in 0..5 {
        assert!(l[(j, j)].re > 0.0 && l[(j, j)].im == 0.0);
        for i in 0..j {
            assert_eq!(l[(i, j)], ZERO);
        }
    }
    let rebuilt = naive_mul(&l, &l.conj_transpose());
    assert!(rel_frobenius_error(&rebuilt, &a).unwrap() <= 1e-13);
}

#[test]
fn potrf_reports_failing_pivot() {
    let ledger = FlopLedger::new();
    let k = Kernels::new(KernelVariant::default(), &ledger);
    // [[1, 2], [2, 1]] has eigenvalues 3 and −1; the second pivot is 1 − 4 < 0
    let a = ComplexMatrix::from_rows(&[vec![ONE, c(2.0, 0.0)], vec![c(2.0, 0.0), ONE]]);
    assert_eq!(k.potrf(a.as_ref()).unwrap_err(), KernelError::NotPositiveDefinite { pivot: 1 });
}

#[test]
fn diag_scale_cases() {
    let ledger = FlopLedger::new();
    let k = Kernels::new(KernelVariant::default(), &ledger);
    let b = random_matrix(4, 3, 81);
    let mut x = ComplexMatrix::zeros(4, 3);
    k.diag_scale(&[1.0; 4], b.as_ref(), x.as_mut()).unwrap();
    assert_eq!(x, b);

    let b1 = ComplexMatrix::from_rows(&[vec![c(3.0, 1.0)]]);
    let mut x1 = ComplexMatrix::zeros(1, 1);
    k.diag_scale(&[2.0], b1.as_ref(), x1.as_mut()).unwrap();
    assert_eq!(x1[(0, 0)], c(6.0, 2.0));

    let u = [0.5, 1.25, 0.75, 1.4];
    k.diag_scale(&u, b.as_ref(), x.as_mut()).unwrap();
    let xhx = naive_mul(&x.conj_transpose(), &x);
    let u2b = ComplexMatrix::from_fn(4, 3, |i, j| b[(i, j)] * (u[i] * u[i]));
    let expect = naive_mul(&b.conj_transpose(), &u2b);
    assert!(rel_frobenius_error(&xhx, &expect).unwrap() <= 1e-14);
    assert!(k.diag_scale(&u[..3], b.as_ref(), x.as_mut()).is_err());
    assert_eq!(ledger.get("scaling"), 2 * 2 * 12 + 2);
}

#[test]
fn strided_views_of_stacked_operands() {
    // row block of a stacked matrix used directly as a kernel operand
    let stacked = random_matrix(9, 5, 91);
    let block = stacked.submatrix(3, 0, 3, 5);
    let t = random_matrix(3, 3, 92);
    let ledger = FlopLedger::new();
    let k = Kernels::new(KernelVariant::default(), &ledger);
    let mut via_view = ComplexMatrix::zeros(3, 5);
    let mut via_copy = ComplexMatrix::zeros(3, 5);
    k.gemm(ONE, t.as_ref(), Trans::ConjTrans, stacked.as_ref().submatrix(3, 0, 3, 5), Trans::No, ZERO, via_view.as_mut())
        .unwrap();
    k.gemm(ONE, t.as_ref(), Trans::ConjTrans, block.as_ref(), Trans::No, ZERO, via_copy.as_mut()).unwrap();
    assert_eq!(via_view, via_copy);
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn check_variants(n: usize, k: usize, seed: u64) {
        let a = random_matrix(k, n, seed);
        let b = random_matrix(k, n, seed + 1);
        let alpha = c(0.6, -0.4);
        let refl = FlopLedger::new();
        let blkl = FlopLedger::new();
        let r = Kernels::new(KernelVariant::Reference, &refl);
        let p = Kernels::new(KernelVariant::BlockedParallel { block: 16 }, &blkl);
        let c0 = random_matrix(n, n, seed + 2);

        let (mut x, mut y) = (c0.clone(), c0.clone());
        r.herk(0.9, a.as_ref(), Trans::ConjTrans, 0.5, x.as_mut()).unwrap();
        p.herk(0.9, a.as_ref(), Trans::ConjTrans, 0.5, y.as_mut()).unwrap();
        assert!(rel_frobenius_error(&mirrored(&y), &mirrored(&x)).unwrap() <= 1e-12);

        let (mut x, mut y) = (c0.clone(), c0.clone());
        r.her2k(alpha, a.as_ref(), b.as_ref(), Trans::ConjTrans, 0.5, x.as_mut()).unwrap();
        p.her2k(alpha, a.as_ref(), b.as_ref(), Trans::ConjTrans, 0.5, y.as_mut()).unwrap();
        assert!(rel_frobenius_error(&mirrored(&y), &mirrored(&x)).unwrap() <= 1e-12);

        let (mut x, mut y) = (c0.clone(), c0.clone());
        r.herkx(alpha, a.as_ref(), b.as_ref(), Trans::ConjTrans, 0.5, x.as_mut()).unwrap();
        p.herkx(alpha, a.as_ref(), b.as_ref(), Trans::ConjTrans, 0.5, y.as_mut()).unwrap();
        assert!(rel_frobenius_error(&mirrored(&y), &mirrored(&x)).unwrap() <= 1e-12);

        let (mut x, mut y) = (c0.clone(), c0.clone());
        r.gemm(alpha, a.as_ref(), Trans::ConjTrans, b.as_ref(), Trans::No, ONE, x.as_mut()).unwrap();
        p.gemm(alpha, a.as_ref(), Trans::ConjTrans, b.as_ref(), Trans::No, ONE, y.as_mut()).unwrap();
        assert!(rel_frobenius_error(&y, &x).unwrap() <= 1e-12);

        assert_eq!(refl.snapshot(), blkl.snapshot());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn reference_and_blocked_agree(n in 1usize..=64, k in 1usize..=64, seed in 0u64..1000) {
            check_variants(n, k, seed);
        }

        #[test]
        fn triangle_contract_under_poison(n in 1usize..=40, k in 1usize..=40, block in 1usize..=20, seed in 0u64..1000) {
            let a = random_matrix(k, n, seed);
            let b = random_matrix(k, n, seed + 7);
            let ledger = FlopLedger::new();
            let kern = Kernels::new(KernelVariant::BlockedParallel { block }, &ledger);
            let mut h = poisoned(n);
            let before = h.upper_bits();
            kern.herk(1.0, a.as_ref(), Trans::ConjTrans, 1.0, h.as_mut()).unwrap();
            kern.her2k(ONE, a.as_ref(), b.as_ref(), Trans::ConjTrans, 1.0, h.as_mut()).unwrap();
            kern.herkx(ONE, a.as_ref(), b.as_ref(), Trans::ConjTrans, 1.0, h.as_mut()).unwrap();
            prop_assert_eq!(h.upper_bits(), before);
            prop_assert!(h.lower_only().is_finite());
        }
    }
}
