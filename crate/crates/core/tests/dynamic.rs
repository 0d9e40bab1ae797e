use std::collections::BTreeMap;

use hsdla::device::{BlockConstraint, DeviceDescriptor, DevicePool, OpKind};
use hsdla::dynamic::{choose_block_size, dispatch, plan_gemm, plan_her2k, plan_herk, plan_herkx, DynamicScheduler, LogEntry, TilePlan};
use hsdla::kernels::{Kernels, Trans};
use hsdla::matrix::{rel_lower_error, ComplexMatrix, HermitianView, C64};
use hsdla::testutil::random_matrix;
use hsdla::{FlopLedger, KernelVariant};

const CPU_RATE: f64 = 1e9;

fn tiles(plan: &TilePlan) -> BTreeMap<(OpKind, (usize, usize)), usize> {
    let mut m = BTreeMap::new();
    for o in &plan.ops {
        *m.entry((o.kind, o.tile)).or_default() += 1;
    }
    m
}

fn logged(log: &[LogEntry]) -> BTreeMap<(OpKind, (usize, usize)), usize> {
    let mut m = BTreeMap::new();
    for e in log {
        *m.entry((e.op_kind, e.dest_tile)).or_default() += 1;
    }
    m
}

fn pool(accels: usize, cpu: bool, queue: usize, rate: f64) -> DevicePool {
    let mut d = Vec::new();
    if cpu {
        d.push(DeviceDescriptor::cpu(1));
    }
    d.extend((0..accels).map(|_| DeviceDescriptor::simulated(rate, 1 << 30).with_queue_depth(queue)));
    DevicePool::new(d).unwrap()
}

#[test]
fn tile_counts() {
    assert_eq!(plan_herk(256, 8, 64, 1.0, 0.0).ops.len(), 10);
    let one = plan_herk(64, 8, 64, 1.0, 0.0);
    assert_eq!(one.ops.len(), 1);
    assert_eq!(one.ops[0].kind, OpKind::HerkTile);
    let rem = plan_her2k(100, 8, 64, C64::new(1.0, 0.0), 0.0);
    assert_eq!(rem.ops.len(), 3);
    let diag: Vec<usize> = rem.ops.iter().filter(|o| o.tile.0 == o.tile.1).map(|o| o.rows).collect();
    assert_eq!(diag, vec![64, 36]);
    assert_eq!(plan_gemm(100, 70, 8, 32, C64::new(1.0, 0.0), C64::new(0.0, 0.0)).ops.len(), 4 * 3);
}

#[test]
fn tiles_cover_lower_triangle_once() {
    let plan = plan_herkx(150, 4, 32, C64::new(1.0, 0.0), 0.0);
    let mut hits = vec![0u8; 150 * 150];
    for o in &plan.ops {
        for j in o.col0..o.col0 + o.cols {
            for i in o.row0..o.row0 + o.rows {
                if o.tile.0 != o.tile.1 || i >= j {
                    hits[j * 150 + i] += 1;
                }
            }
        }
    }
    for j in 0..150 {
        for i in 0..150 {
            assert_eq!(hits[j * 150 + i], u8::from(i >= j), "({i},{j})");
        }
    }
}

#[test]
fn block_size_rules() {
    let c = BlockConstraint::DivisibleBy { d: 64, not: Some(256) };
    let p = DevicePool::new(vec![DeviceDescriptor::cpu(1), DeviceDescriptor::simulated(1.0, 1 << 30).with_constraint(c)]).unwrap();
    assert_eq!(choose_block_size(&p, 1000, 64, 256).unwrap(), 192);
    assert_eq!(choose_block_size(&DevicePool::cpu_only(1), 100, 8, 128).unwrap(), 100);
    let small = DevicePool::new(vec![DeviceDescriptor::simulated(1.0, 4 * 16 * 64 * 64)]).unwrap();
    assert_eq!(choose_block_size(&small, 1000, 64, 128).unwrap(), 64);
    // n below every allowed size: one remainder tile of the smallest allowed size.
    assert_eq!(choose_block_size(&p, 40, 8, 128).unwrap(), 64);
}

#[test]
fn log_lines_round_trip() {
    let e = LogEntry { op_kind: OpKind::Gemm2, dest_tile: (3, 1), device_id: 2, t_start: 0.5, t_end: 1.25 };
    assert_eq!(LogEntry::parse_line(&e.to_line()).unwrap(), e);
    assert!(LogEntry::parse_line("# h_ab/zher2k").is_none());
}

fn reference_her2k(a: &ComplexMatrix, b: &ComplexMatrix) -> HermitianView {
    let ledger = FlopLedger::new();
    let k = Kernels::new(KernelVariant::Reference, &ledger);
    let mut c = HermitianView::zeros(a.cols());
    k.her2k(C64::new(1.0, 0.0), a.as_ref(), b.as_ref(), Trans::ConjTrans, 0.0, c.as_mut()).unwrap();
    c
}

#[test]
fn exactly_once_across_pools() {
    for n in [63, 64, 100, 256] {
        let k = 24;
        let a = random_matrix(k, n, n as u64);
        let b = random_matrix(k, n, n as u64 + 1);
        let want = reference_her2k(&a, &b);
        for accels in 1..=4 {
            for (cpu, queue) in [(true, 4), (true, 1), (false, 1)] {
                let pool = pool(accels, cpu, queue, 1.5);
                let plan = plan_her2k(n, k, 32, C64::new(1.0, 0.0), 0.0);
                let mut c = HermitianView::zeros(n);
                c.poison_upper(C64::new(f64::NAN, 0.0));
                let bits = c.upper_bits();
                let r = dispatch(&plan, a.as_ref(), b.as_ref(), c.as_mut(), &pool, CPU_RATE).unwrap();
                assert_eq!(logged(&r.log), tiles(&plan), "n={n} accels={accels} cpu={cpu} q={queue}");
                assert_eq!(c.upper_bits(), bits);
                let err = rel_lower_error(&c, &want).unwrap();
                assert!(err <= 1e-12, "n={n} accels={accels}: {err}");
            }
        }
    }
}

#[test]
fn cpu_only_pool_runs_serially() {
    let a = random_matrix(16, 70, 1);
    let plan = plan_herk(70, 16, 16, 1.0, 0.0);
    let mut c = HermitianView::zeros(70);
    let r = dispatch(&plan, a.as_ref(), a.as_ref(), c.as_mut(), &DevicePool::cpu_only(1), CPU_RATE).unwrap();
    assert!(r.log.iter().all(|e| e.device_id == 0));
    assert!(r.log.windows(2).all(|w| w[0].t_end <= w[1].t_start + 1e-15));
}

#[test]
fn equal_devices_share_tiles() {
    let a = random_matrix(32, 256, 2);
    let plan = plan_herk(256, 32, 64, 1.0, 0.0);
    let mut c = HermitianView::zeros(256);
    let r = dispatch(&plan, a.as_ref(), a.as_ref(), c.as_mut(), &pool(2, false, 4, 1.0), CPU_RATE).unwrap();
    assert_eq!(r.log.len(), 10);
    for d in 0..2 {
        let n = r.usage_of(d).unwrap().ops;
        assert!((3..=7).contains(&n), "device {d} got {n}");
    }
}

#[test]
fn slow_shallow_accelerator_leaves_work_to_cpu() {
    let a = random_matrix(32, 256, 3);
    let plan = plan_herk(256, 32, 32, 1.0, 0.0);
    let mut c = HermitianView::zeros(256);
    let r = dispatch(&plan, a.as_ref(), a.as_ref(), c.as_mut(), &pool(1, true, 1, 0.1), CPU_RATE).unwrap();
    let cpu = r.usage_of(0).unwrap().ops;
    assert!(2 * cpu > r.log.len(), "cpu ran {cpu} of {}", r.log.len());
}

#[test]
fn scheduler_charges_ledger_once() {
    let a = random_matrix(20, 90, 4);
    let pool = pool(2, true, 4, 1.5);
    let sched = DynamicScheduler { pool: &pool, block: Some(32), cap: 128, cpu_rate: CPU_RATE };
    let ledger = FlopLedger::new();
    let mut c = HermitianView::zeros(90);
    sched.herk(&ledger, 1.0, a.as_ref(), 0.0, c.as_mut()).unwrap();
    assert_eq!(ledger.snapshot().total(), 4 * 20 * 90 * 90);

    let b = random_matrix(20, 40, 5);
    let mut g = ComplexMatrix::zeros(90, 40);
    sched.gemm(&ledger, C64::new(1.0, 0.0), a.as_ref(), b.as_ref(), C64::new(0.0, 0.0), g.as_mut()).unwrap();
    let want = hsdla::testutil::naive_mul(&a.conj_transpose(), &b);
    assert!(hsdla::rel_frobenius_error(&g, &want).unwrap() <= 1e-12);
}
