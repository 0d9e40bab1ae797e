//! Multithreaded kernels: the output is cut into `block × block` tiles and
//! tiles are computed in parallel. Diagonal tiles of Hermitian outputs use
//! the lower-only tile routines, so the strict upper triangle is never
//! written.

use rayon::prelude::*;

use super::micro::{self, Region};
use crate::matrix::{tile_bounds, MatMut, MatRef, C64};

fn lower_tiles<'a>(c: MatMut<'a>, block: usize) -> (Vec<usize>, Vec<(usize, usize, MatMut<'a>)>) {
    let bounds = tile_bounds(c.rows(), block);
    let tiles = c.into_tiles(&bounds, &bounds, |i, j| i >= j);
    (bounds, tiles)
}

fn panel<'a>(m: MatRef<'a>, bounds: &[usize], t: usize) -> MatRef<'a> {
    m.submatrix(0, bounds[t], m.rows(), bounds[t + 1] - bounds[t])
}

/// `C := α·aᴴ·b + β·C` over all of C.
pub(crate) fn gemm_ch(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: C64, c: MatMut<'_>, block: usize) {
    let rb = tile_bounds(c.rows(), block);
    let cb = tile_bounds(c.cols(), block);
    let tiles = c.into_tiles(&rb, &cb, |_, _| true);
    tiles.into_par_iter().for_each(|(ti, tj, mut t)| {
        micro::tile_gemm(alpha, panel(a, &rb, ti), panel(b, &cb, tj), beta, &mut t);
    });
}

/// `C := α·a·b + β·C` with no transposition, parallel over column blocks.
pub(crate) fn gemm_nn(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: C64, c: MatMut<'_>, block: usize) {
    let rb = tile_bounds(c.rows(), c.rows().max(1));
    let cb = tile_bounds(c.cols(), block);
    let tiles = c.into_tiles(&rb, &cb, |_, _| true);
    tiles.into_par_iter().for_each(|(_, tj, mut t)| {
        micro::scale_region(&mut t, beta, Region::Full);
        micro::acc_plain_product(alpha, a, panel(b, &cb, tj), &mut t);
    });
}

pub(crate) fn herk(alpha: f64, a: MatRef<'_>, beta: f64, c: MatMut<'_>, block: usize) {
    let (bounds, tiles) = lower_tiles(c, block);
    tiles.into_par_iter().for_each(|(ti, tj, mut t)| {
        let ar = panel(a, &bounds, ti);
        if ti == tj {
            micro::tile_herk(alpha, ar, beta, &mut t);
        } else {
            let ac = panel(a, &bounds, tj);
            micro::tile_gemm(C64::new(alpha, 0.0), ar, ac, C64::new(beta, 0.0), &mut t);
        }
    });
}

pub(crate) fn her2k(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>, block: usize) {
    let (bounds, tiles) = lower_tiles(c, block);
    tiles.into_par_iter().for_each(|(ti, tj, mut t)| {
        let (ar, br) = (panel(a, &bounds, ti), panel(b, &bounds, ti));
        if ti == tj {
            micro::tile_her2k(alpha, ar, br, beta, &mut t);
        } else {
            let (ac, bc) = (panel(a, &bounds, tj), panel(b, &bounds, tj));
            micro::tile_gemm2(alpha, ar, bc, br, ac, C64::new(beta, 0.0), &mut t);
        }
    });
}

pub(crate) fn herkx(alpha: C64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: MatMut<'_>, block: usize) {
    let (bounds, tiles) = lower_tiles(c, block);
    tiles.into_par_iter().for_each(|(ti, tj, mut t)| {
        let ar = panel(a, &bounds, ti);
        let bc = panel(b, &bounds, tj);
        if ti == tj {
            micro::tile_herkx(alpha, ar, bc, beta, &mut t);
        } else {
            micro::tile_gemm(alpha, ar, bc, C64::new(beta, 0.0), &mut t);
        }
    });
}
