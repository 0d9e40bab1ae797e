use hsdla::device::{DeviceDescriptor, DevicePool};
use hsdla::kernels::{Kernels, Trans};
use hsdla::matrix::{rel_lower_error, HermitianView, C64};
use hsdla::static_split::{compute_split, RankUpdate, StaticSplitter};
use hsdla::testutil::{naive_mul, random_hermitian, random_matrix};
use hsdla::{FlopLedger, KernelVariant};

fn hybrid(rate: f64, mem: u64) -> DevicePool {
    DevicePool::new(vec![DeviceDescriptor::cpu(1), DeviceDescriptor::simulated(rate, mem)]).unwrap()
}

fn splitter(pool: &DevicePool) -> StaticSplitter<'_> {
    StaticSplitter { pool, ratio: None, calibrate: false, variant: KernelVariant::default(), cpu_rate: 1e9, cap: 64 }
}

#[test]
fn closed_form_values() {
    assert_eq!(compute_split(1000, 0, 1.0), 707);
    assert_eq!(compute_split(512, 0, 1e9), 512);
    assert_eq!(compute_split(8970, 0, 2600.0 / 345.0), 8428);
    let mut prev = 0;
    for m in [0.1, 0.5, 1.0, 2.0, 4.0, 7.5, 20.0] {
        let g = compute_split(2048, 0, m);
        assert!(g >= prev);
        prev = g;
    }
}

fn reference() -> (FlopLedger, KernelVariant) {
    (FlopLedger::new(), KernelVariant::Reference)
}

#[test]
fn her2k_any_split_matches_reference() {
    let (k, n) = (64, 256);
    let a = random_matrix(k, n, 1);
    let b = random_matrix(k, n, 2);
    let (l, v) = reference();
    let mut want = HermitianView::zeros(n);
    Kernels::new(v, &l).her2k(C64::new(1.0, 0.5), a.as_ref(), b.as_ref(), Trans::ConjTrans, 0.0, want.as_mut()).unwrap();
    let pool = hybrid(1.5, 1 << 30);
    for ng in [0, 160, n] {
        let ledger = FlopLedger::new();
        let mut c = HermitianView::zeros(n);
        c.poison_upper(C64::new(f64::NAN, 1.0));
        let bits = c.upper_bits();
        let s = splitter(&pool)
            .update(&ledger, RankUpdate::Her2k(C64::new(1.0, 0.5)), Some(ng), a.as_ref(), b.as_ref(), 0.0, c.as_mut())
            .unwrap();
        assert_eq!(s.n_g, ng);
        assert_eq!(c.upper_bits(), bits);
        assert!(rel_lower_error(&c, &want).unwrap() <= 1e-12, "n_g={ng}");
        assert_eq!(ledger.snapshot().total(), 8 * (k * n * n) as u64);
    }
}

#[test]
fn herk_split_matches_reference() {
    let (k, n) = (32, 128);
    let a = random_matrix(k, n, 3);
    let (l, v) = reference();
    let mut want = HermitianView::zeros(n);
    Kernels::new(v, &l).herk(1.0, a.as_ref(), Trans::ConjTrans, 0.0, want.as_mut()).unwrap();
    let pool = hybrid(1.0, 1 << 30);
    for ng in [0, 64] {
        let mut c = HermitianView::zeros(n);
        c.poison_upper(C64::new(f64::NAN, 0.0));
        let bits = c.upper_bits();
        splitter(&pool)
            .update(&FlopLedger::new(), RankUpdate::Herk(1.0), Some(ng), a.as_ref(), a.as_ref(), 0.0, c.as_mut())
            .unwrap();
        assert_eq!(c.upper_bits(), bits);
        assert!(rel_lower_error(&c, &want).unwrap() <= 1e-12);
    }
}

#[test]
fn herkx_split_is_hermitian_product() {
    let (k, n) = (24, 96);
    let a = random_matrix(k, n, 4);
    let t = random_hermitian(k, 5);
    let b = naive_mul(&t, &a);
    let want = naive_mul(&a.conj_transpose(), &b);
    let pool = hybrid(2.0, 1 << 30);
    for ng in [32, n] {
        let ledger = FlopLedger::new();
        let mut c = HermitianView::zeros(n);
        splitter(&pool)
            .update(&ledger, RankUpdate::Herkx(C64::new(1.0, 0.0)), Some(ng), a.as_ref(), b.as_ref(), 0.0, c.as_mut())
            .unwrap();
        assert_eq!(ledger.snapshot().total(), 4 * (k * n * n) as u64);
        let full = c.to_full();
        assert!(hsdla::rel_frobenius_error(&full, &want).unwrap() <= 1e-12);
    }
}

#[test]
fn pool_shape_fixes_degenerate_splits() {
    let a = random_matrix(8, 40, 6);
    let ledger = FlopLedger::new();
    let mut c = HermitianView::zeros(40);
    let cpu = DevicePool::cpu_only(1);
    assert_eq!(splitter(&cpu).herk(&ledger, 1.0, a.as_ref(), 0.0, c.as_mut()).unwrap().n_g, 0);
    let acc = DevicePool::new(vec![DeviceDescriptor::simulated(1.0, 1 << 30)]).unwrap();
    assert_eq!(splitter(&acc).herk(&ledger, 1.0, a.as_ref(), 0.0, c.as_mut()).unwrap().n_g, 40);
}

#[test]
fn memory_shrinks_the_offload() {
    let (k, n) = (16, 200);
    let a = random_matrix(k, n, 7);
    let pool = hybrid(1e6, 16 * (100 * 100 + 100 * k as u64));
    let mut c = HermitianView::zeros(n);
    let s = splitter(&pool).herk(&FlopLedger::new(), 1.0, a.as_ref(), 0.0, c.as_mut()).unwrap();
    assert!(s.n_g <= 100, "{}", s.n_g);
    assert!(!s.warnings.is_empty());
    let mut want = HermitianView::zeros(n);
    let l = FlopLedger::new();
    Kernels::new(KernelVariant::Reference, &l).herk(1.0, a.as_ref(), Trans::ConjTrans, 0.0, want.as_mut()).unwrap();
    assert!(rel_lower_error(&c, &want).unwrap() <= 1e-12);
}
