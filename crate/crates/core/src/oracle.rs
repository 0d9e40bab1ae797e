//! Brute-force evaluation of H and S straight from the per-atom sums.
//!
//! Plain triple loops over core types only, so that a kernel or pipeline bug
//! cannot hide in shared code.

use thiserror::Error;

use crate::matrix::{ComplexMatrix, HermitianView, MatRef, C64, ZERO};
use crate::problem::ProblemInstance;

/// Largest `N_G` the oracle accepts.
pub const MAX_ORACLE_NG: usize = 512;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("oracle refuses N_G = {n_g} (limit {limit})")]
    TooLarge { n_g: usize, limit: usize },
}

fn check(p: &ProblemInstance) -> Result<(), OracleError> {
    if p.dims.n_g > MAX_ORACLE_NG {
        return Err(OracleError::TooLarge { n_g: p.dims.n_g, limit: MAX_ORACLE_NG });
    }
    Ok(())
}

fn owned(m: MatRef<'_>) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(m.rows(), m.cols());
    for j in 0..m.cols() {
        for i in 0..m.rows() {
            out[(i, j)] = m.get(i, j);
        }
    }
    out
}

/// `X·Y`.
fn mul(x: &ComplexMatrix, y: &ComplexMatrix) -> ComplexMatrix {
    assert_eq!(x.cols(), y.rows());
    let mut out = ComplexMatrix::zeros(x.rows(), y.cols());
    for i in 0..x.rows() {
        for j in 0..y.cols() {
            let mut s = ZERO;
            for l in 0..x.cols() {
                s += x[(i, l)] * y[(l, j)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// `Xᴴ·Y`.
fn mul_ch(x: &ComplexMatrix, y: &ComplexMatrix) -> ComplexMatrix {
    assert_eq!(x.rows(), y.rows());
    let mut out = ComplexMatrix::zeros(x.cols(), y.cols());
    for i in 0..x.cols() {
        for j in 0..y.cols() {
            let mut s = ZERO;
            for l in 0..x.rows() {
                s += x[(l, i)].conj() * y[(l, j)];
            }
            out[(i, j)] = s;
        }
    }
    out
}

fn conj_t(x: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(x.cols(), x.rows());
    for j in 0..x.cols() {
        for i in 0..x.rows() {
            out[(j, i)] = x[(i, j)].conj();
        }
    }
    out
}

fn add_into(acc: &mut ComplexMatrix, x: &ComplexMatrix, scale: f64) {
    for j in 0..acc.cols() {
        for i in 0..acc.rows() {
            acc[(i, j)] += x[(i, j)] * scale;
        }
    }
}

fn lower(full: ComplexMatrix) -> HermitianView {
    HermitianView::new(full).expect("square by construction")
}

/// Full (both triangles) `S = Σ A_aᴴA_a + B_aᴴU_aᴴU_aB_a`.
pub fn direct_s_full(p: &ProblemInstance) -> Result<ComplexMatrix, OracleError> {
    check(p)?;
    let ng = p.dims.n_g;
    let mut s = ComplexMatrix::zeros(ng, ng);
    for atom in 0..p.dims.n_atoms {
        let a = owned(p.a_block(atom));
        let mut ub = owned(p.b_block(atom));
        for (i, &u) in p.u[atom].iter().enumerate() {
            for j in 0..ng {
                ub[(i, j)] *= u;
            }
        }
        add_into(&mut s, &mul_ch(&a, &a), 1.0);
        add_into(&mut s, &mul_ch(&ub, &ub), 1.0);
    }
    Ok(s)
}

/// Full (both triangles) four-term
/// `H = Σ A_aᴴT^[AA]A_a + A_aᴴT^[AB]B_a + B_aᴴT^[BA]A_a + B_aᴴT^[BB]B_a`.
pub fn direct_h_full(p: &ProblemInstance) -> Result<ComplexMatrix, OracleError> {
    check(p)?;
    let ng = p.dims.n_g;
    let mut h = ComplexMatrix::zeros(ng, ng);
    for atom in 0..p.dims.n_atoms {
        let a = owned(p.a_block(atom));
        let b = owned(p.b_block(atom));
        let t_aa = p.t_aa[atom].to_full();
        let t_ab = &p.t_ab[atom];
        let t_ba = conj_t(t_ab);
        let t_bb = p.t_bb[atom].to_full();
        add_into(&mut h, &mul_ch(&a, &mul(&t_aa, &a)), 1.0);
        add_into(&mut h, &mul_ch(&a, &mul(t_ab, &b)), 1.0);
        add_into(&mut h, &mul_ch(&b, &mul(&t_ba, &a)), 1.0);
        add_into(&mut h, &mul_ch(&b, &mul(&t_bb, &b)), 1.0);
    }
    Ok(h)
}

/// Full H through the grouped form
/// `A_aᴴ(T^[AA]A_a) + B_aᴴZ_a + Z_aᴴB_a` with `Z_a = T^[BA]A_a + ½T^[BB]B_a`.
pub fn grouped_h_full(p: &ProblemInstance) -> Result<ComplexMatrix, OracleError> {
    check(p)?;
    let ng = p.dims.n_g;
    let mut h = ComplexMatrix::zeros(ng, ng);
    for atom in 0..p.dims.n_atoms {
        let a = owned(p.a_block(atom));
        let b = owned(p.b_block(atom));
        let mut z = mul(&p.t_ba(atom), &a);
        add_into(&mut z, &mul(&p.t_bb[atom].to_full(), &b), 0.5);
        add_into(&mut h, &mul_ch(&a, &mul(&p.t_aa[atom].to_full(), &a)), 1.0);
        add_into(&mut h, &mul_ch(&b, &z), 1.0);
        add_into(&mut h, &mul_ch(&z, &b), 1.0);
    }
    Ok(h)
}

pub fn direct_s(p: &ProblemInstance) -> Result<HermitianView, OracleError> {
    direct_s_full(p).map(lower)
}

pub fn direct_h(p: &ProblemInstance) -> Result<HermitianView, OracleError> {
    direct_h_full(p).map(lower)
}

/// Largest `|X - Xᴴ|` entry relative to the largest entry.
pub fn hermitian_residual(x: &ComplexMatrix) -> f64 {
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for j in 0..x.cols() {
        for i in 0..x.rows() {
            num = num.max((x[(i, j)] - x[(j, i)].conj()).norm());
            den = den.max(x[(i, j)].norm());
        }
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Relative Frobenius errors of a built pair against the oracle, compared
/// on the lower triangles: `(err_h, err_s)`.
pub fn compare(p: &ProblemInstance, h: &HermitianView, s: &HermitianView) -> Result<(f64, f64), OracleError> {
    let rel = |got: &HermitianView, want: &ComplexMatrix| {
        let n = want.rows();
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..n {
            for i in j..n {
                let g = if i == j { C64::new(got.matrix()[(i, j)].re, 0.0) } else { got.matrix()[(i, j)] };
                let w = want[(i, j)];
                let w = if i == j { C64::new(w.re, 0.0) } else { w };
                num += (g - w).norm_sqr();
                den += w.norm_sqr();
            }
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    };
    Ok((rel(h, &direct_h_full(p)?), rel(s, &direct_s_full(p)?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{generate_problem, ProblemDims};

    fn unit(a: C64, b: C64, t_aa: f64, t_ab: C64, t_bb: f64) -> ProblemInstance {
        let one = |v: C64| ComplexMatrix::from_fn(1, 1, |_, _| v);
        ProblemInstance {
            dims: ProblemDims::new(1, 1, 1).unwrap(),
            a: one(a),
            b: one(b),
            t_aa: vec![HermitianView::new(one(C64::new(t_aa, 0.0))).unwrap()],
            t_ab: vec![one(t_ab)],
            t_bb: vec![HermitianView::new(one(C64::new(t_bb, 0.0))).unwrap()],
            u: vec![vec![1.0]],
            hpd: vec![t_aa > 0.0],
        }
    }

    #[test]
    fn hand_value_of_h() {
        let p = unit(C64::new(1.0, 0.0), C64::new(0.0, 1.0), 2.0, C64::new(1.0, 0.0), 4.0);
        let h = direct_h_full(&p).unwrap();
        assert!((h[(0, 0)] - C64::new(6.0, 0.0)).norm() < 1e-15);
        let s = direct_s_full(&p).unwrap();
        assert!((s[(0, 0)] - C64::new(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn grouped_equals_four_terms() {
        let p = generate_problem(3, 4, 20, 11, 1).unwrap();
        let d = direct_h_full(&p).unwrap();
        let g = grouped_h_full(&p).unwrap();
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for j in 0..20 {
            for i in 0..20 {
                num += (d[(i, j)] - g[(i, j)]).norm_sqr();
                den += d[(i, j)].norm_sqr();
            }
        }
        assert!((num / den).sqrt() <= 1e-13);
        assert!(hermitian_residual(&d) <= 1e-12);
        assert!(hermitian_residual(&direct_s_full(&p).unwrap()) <= 1e-12);
    }

    #[test]
    fn refuses_large_ng() {
        let p = generate_problem(1, 1, MAX_ORACLE_NG + 1, 0, 0).unwrap();
        assert_eq!(direct_s(&p).unwrap_err(), OracleError::TooLarge { n_g: 513, limit: 512 });
    }
}
