//! HSDLA input data and its synthetic generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ProblemError;
use crate::matrix::{ComplexMatrix, HermitianView, MatRef, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemDims {
    pub n_atoms: usize,
    pub n_l: usize,
    pub n_g: usize,
}

impl ProblemDims {
    pub fn new(n_atoms: usize, n_l: usize, n_g: usize) -> Result<Self, ProblemError> {
        let d = Self { n_atoms, n_l, n_g };
        if n_atoms == 0 || n_l == 0 || n_g == 0 {
            return Err(ProblemError::EmptyDims { n_atoms, n_l, n_g });
        }
        d.total_bytes()?;
        Ok(d)
    }

    /// Rows of the stacked A and B, `N_A·N_L`.
    pub fn stacked_rows(&self) -> usize {
        self.n_atoms * self.n_l
    }

    pub fn a_shape(&self) -> (usize, usize) {
        (self.stacked_rows(), self.n_g)
    }

    /// Bytes of one stacked operand (A, B, or a buffer of the same shape).
    pub fn operand_bytes(&self) -> u64 {
        16 * (self.stacked_rows() as u64) * self.n_g as u64
    }

    /// Bytes needed to hold a whole instance in memory.
    pub fn total_bytes(&self) -> Result<u64, ProblemError> {
        let overflow = || ProblemError::Sizing(format!("N_A={} N_L={} N_G={}", self.n_atoms, self.n_l, self.n_g));
        let na = self.n_atoms as u64;
        let nl = self.n_l as u64;
        let ng = self.n_g as u64;
        let rows = na.checked_mul(nl).ok_or_else(overflow)?;
        let ab = rows.checked_mul(ng).and_then(|x| x.checked_mul(2)).ok_or_else(overflow)?;
        let t = rows.checked_mul(nl).and_then(|x| x.checked_mul(3)).ok_or_else(overflow)?;
        let complex = ab.checked_add(t).ok_or_else(overflow)?;
        let bytes = complex
            .checked_mul(16)
            .and_then(|x| x.checked_add(rows.checked_mul(8)?))
            .ok_or_else(overflow)?;
        if bytes > isize::MAX as u64 {
            return Err(overflow());
        }
        Ok(bytes)
    }
}

/// Everything the H/S construction reads.
///
/// `a` and `b` hold the per-atom `N_L × N_G` blocks stacked by rows; atom
/// `i` occupies rows `i·N_L .. (i+1)·N_L`. `T^[BA]` is not stored, it is
/// `t_ab[i]ᴴ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub dims: ProblemDims,
    pub a: ComplexMatrix,
    pub b: ComplexMatrix,
    pub t_aa: Vec<HermitianView>,
    pub t_ab: Vec<ComplexMatrix>,
    pub t_bb: Vec<HermitianView>,
    pub u: Vec<Vec<f64>>,
    pub hpd: Vec<bool>,
}

impl ProblemInstance {
    /// Checks shapes and positivity of `u`.
    pub fn validate(&self) -> Result<(), ProblemError> {
        let d = self.dims;
        let bad = |what: &str| Err(ProblemError::Sizing(format!("inconsistent instance: {what}")));
        if self.a.shape() != d.a_shape() || self.b.shape() != d.a_shape() {
            return bad("A/B shape");
        }
        let na = d.n_atoms;
        if self.t_aa.len() != na || self.t_ab.len() != na || self.t_bb.len() != na || self.u.len() != na || self.hpd.len() != na {
            return bad("per-atom counts");
        }
        for i in 0..na {
            if self.t_aa[i].order() != d.n_l || self.t_bb[i].order() != d.n_l || self.t_ab[i].shape() != (d.n_l, d.n_l) {
                return bad("T shape");
            }
            if self.u[i].len() != d.n_l || self.u[i].iter().any(|&x| !x.is_finite() || x <= 0.0) {
                return bad("U must be positive");
            }
        }
        Ok(())
    }

    pub fn a_block(&self, atom: usize) -> MatRef<'_> {
        let nl = self.dims.n_l;
        self.a.as_ref().submatrix(atom * nl, 0, nl, self.dims.n_g)
    }

    pub fn b_block(&self, atom: usize) -> MatRef<'_> {
        let nl = self.dims.n_l;
        self.b.as_ref().submatrix(atom * nl, 0, nl, self.dims.n_g)
    }

    pub fn t_ba(&self, atom: usize) -> ComplexMatrix {
        self.t_ab[atom].conj_transpose()
    }

    /// Diagonal of U for all atoms, in stacked row order.
    pub fn u_stacked(&self) -> Vec<f64> {
        self.u.iter().flatten().copied().collect()
    }

    pub fn n_not_hpd(&self) -> usize {
        self.hpd.iter().filter(|&&h| !h).count()
    }
}

fn uniform_complex(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))
}

fn random_block(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| uniform_complex(rng))
}

/// Uniform on the open interval (0.5, 1.5).
fn open_unit_shifted(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x: f64 = rng.gen_range(0.5..1.5);
        if x > 0.5 {
            return x;
        }
    }
}

/// `MᴴM + shift·I`.
fn gram_shifted(m: &ComplexMatrix, shift: impl FnOnce(&ComplexMatrix) -> f64) -> ComplexMatrix {
    let n = m.cols();
    let mut g = ComplexMatrix::from_fn(n, n, |i, j| (0..m.rows()).map(|p| m[(p, i)].conj() * m[(p, j)]).sum());
    for i in 0..n {
        g[(i, i)].im = 0.0;
    }
    let s = shift(&g);
    for i in 0..n {
        g[(i, i)].re += s;
    }
    g
}

/// Deterministic synthetic instance. The last `n_not_hpd` atoms get an
/// indefinite `T^[AA]` whose leading pivot is negative.
pub fn generate_problem(
    n_atoms: usize,
    n_l: usize,
    n_g: usize,
    seed: u64,
    n_not_hpd: usize,
) -> Result<ProblemInstance, ProblemError> {
    let dims = ProblemDims::new(n_atoms, n_l, n_g)?;
    if n_not_hpd > n_atoms {
        return Err(ProblemError::TooManyNonHpd { n_not_hpd, n_atoms });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = dims.stacked_rows();
    let a = random_block(&mut rng, rows, n_g);
    let b = random_block(&mut rng, rows, n_g);

    let mut t_aa = Vec::with_capacity(n_atoms);
    let mut t_ab = Vec::with_capacity(n_atoms);
    let mut t_bb = Vec::with_capacity(n_atoms);
    let mut u = Vec::with_capacity(n_atoms);
    let mut hpd = Vec::with_capacity(n_atoms);
    for atom in 0..n_atoms {
        let positive = atom < n_atoms - n_not_hpd;
        let m = random_block(&mut rng, n_l, n_l);
        let g = if positive {
            gram_shifted(&m, |_| 1.0)
        } else {
            gram_shifted(&m, |g| -((0..n_l).map(|i| g[(i, i)].re).fold(0.0, f64::max) + 1e-3))
        };
        t_aa.push(HermitianView::new(g).expect("square"));
        t_ab.push(random_block(&mut rng, n_l, n_l));
        let r = random_block(&mut rng, n_l, n_l);
        let bb = ComplexMatrix::from_fn(n_l, n_l, |i, j| {
            if i == j {
                C64::new(r[(i, i)].re, 0.0)
            } else {
                (r[(i, j)] + r[(j, i)].conj()) * 0.5
            }
        });
        t_bb.push(HermitianView::new(bb).expect("square"));
        u.push((0..n_l).map(|_| open_unit_shifted(&mut rng)).collect());
        hpd.push(positive);
    }
    Ok(ProblemInstance { dims, a, b, t_aa, t_ab, t_bb, u, hpd })
}
