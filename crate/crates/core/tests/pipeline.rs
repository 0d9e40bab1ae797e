use hsdla::device::{DeviceDescriptor, DevicePool};
use hsdla::matrix::{ComplexMatrix, HermitianView, C64};
use hsdla::oracle;
use hsdla::pipeline::{build_hs_original_into, build_hs_refined_into, flop_model, flop_model_for};
use hsdla::problem::ProblemDims;
use hsdla::{build_hs, generate_problem, PipelineConfig, ProblemInstance, Strategy, Variant};

fn hybrid_pool(accels: usize) -> DevicePool {
    let mut devs = vec![DeviceDescriptor::cpu(1)];
    devs.extend((0..accels).map(|_| DeviceDescriptor::simulated(1.5, 1 << 30)));
    DevicePool::new(devs).unwrap()
}

fn configs(variant: Variant) -> Vec<PipelineConfig> {
    let mut out = vec![PipelineConfig::cpu(variant)];
    out.push(PipelineConfig::new(variant, Strategy::Static { ratio: None, calibrate: false }, hybrid_pool(2)));
    out.push(PipelineConfig::new(variant, Strategy::Dynamic { block: Some(16) }, hybrid_pool(3)));
    for c in &mut out {
        c.cpu_rate = Some(1e9);
    }
    out
}

#[test]
fn both_variants_match_oracle_under_every_strategy() {
    for &(na, nl, ng) in &[(2, 3, 16), (4, 7, 64)] {
        for n_not in [0, na / 2, na] {
            let p = generate_problem(na, nl, ng, 3 + n_not as u64, n_not).unwrap();
            let tol = 1e-10 * (ng as f64).sqrt();
            for variant in [Variant::Original, Variant::Refined] {
                for cfg in configs(variant) {
                    let r = build_hs(&p, &cfg).unwrap();
                    let (eh, es) = oracle::compare(&p, &r.h, &r.s).unwrap();
                    assert!(eh <= tol && es <= tol, "{variant:?} {:?} dims ({na},{nl},{ng}): {eh} {es}", cfg.strategy);
                    assert_eq!(r.stats.ledger, flop_model_for(&p, variant), "{variant:?} {:?}", cfg.strategy);
                }
            }
        }
    }
}

#[test]
fn unit_dims_model_total() {
    let d = ProblemDims::new(1, 1, 1).unwrap();
    assert_eq!(flop_model(d, &[true], Variant::Refined).total(), 46);
}

#[test]
fn refined_keeps_one_buffer_original_two_backups() {
    let p = generate_problem(4, 5, 32, 1, 0).unwrap();
    let x = 16 * p.dims.stacked_rows() as u64 * p.dims.n_g as u64;
    let cfg = PipelineConfig { cpu_rate: Some(1e9), ..PipelineConfig::cpu(Variant::Refined) };
    let refined = build_hs(&p, &cfg).unwrap();
    assert_eq!(refined.stats.peak_temp_bytes, x);
    let cfg = PipelineConfig { variant: Variant::Original, ..cfg };
    let original = build_hs(&p, &cfg).unwrap();
    assert!(original.stats.peak_temp_bytes >= 2 * x);
}

#[test]
fn upper_triangle_is_never_written() {
    let p = generate_problem(3, 4, 40, 9, 1).unwrap();
    for variant in [Variant::Original, Variant::Refined] {
        for cfg in configs(variant) {
            let mut h = HermitianView::zeros(40);
            let mut s = HermitianView::zeros(40);
            h.poison_upper(C64::new(f64::NAN, f64::NAN));
            s.poison_upper(C64::new(f64::NAN, f64::NAN));
            let (hb, sb) = (h.upper_bits(), s.upper_bits());
            match variant {
                Variant::Original => build_hs_original_into(&p, &cfg, &mut h, &mut s).unwrap(),
                Variant::Refined => build_hs_refined_into(&p, &cfg, &mut h, &mut s).unwrap(),
            };
            assert_eq!(h.upper_bits(), hb);
            assert_eq!(s.upper_bits(), sb);
        }
    }
}

#[test]
fn identity_operators() {
    let mut p: ProblemInstance = generate_problem(1, 3, 8, 5, 0).unwrap();
    p.t_ab[0] = ComplexMatrix::zeros(3, 3);
    p.t_bb[0] = HermitianView::zeros(3);
    p.t_aa[0] = HermitianView::new(ComplexMatrix::identity(3)).unwrap();
    p.u[0] = vec![1.0; 3];
    for variant in [Variant::Original, Variant::Refined] {
        let r = build_hs(&p, &PipelineConfig { cpu_rate: Some(1e9), ..PipelineConfig::cpu(variant) }).unwrap();
        let a = p.a.as_ref();
        for j in 0..8 {
            for i in j..8 {
                let mut aa = C64::new(0.0, 0.0);
                let mut bb = C64::new(0.0, 0.0);
                for l in 0..3 {
                    aa += a.get(l, i).conj() * a.get(l, j);
                    bb += p.b.as_ref().get(l, i).conj() * p.b.as_ref().get(l, j);
                }
                assert!((r.h.matrix()[(i, j)] - aa).norm() < 1e-13);
                assert!((r.s.matrix()[(i, j)] - aa - bb).norm() < 1e-13);
            }
        }
    }
}

#[test]
fn mismatched_outputs_rejected() {
    let p = generate_problem(1, 2, 8, 0, 0).unwrap();
    let cfg = PipelineConfig::cpu(Variant::Refined);
    let mut h = HermitianView::zeros(7);
    let mut s = HermitianView::zeros(8);
    assert!(build_hs_refined_into(&p, &cfg, &mut h, &mut s).is_err());
}
