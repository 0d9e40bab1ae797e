//! Tile-granular operations that devices execute.

use serde::{Deserialize, Serialize};

use crate::kernels::micro::{self, Region};
use crate::matrix::{MatMut, MatRef, C64, ONE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    /// `C := α·Lᴴ·R + β·C` on a full tile.
    Gemm,
    /// Off-diagonal tile of a rank-2k update, two products.
    Gemm2,
    HerkTile,
    Her2kTile,
    HerkxTile,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Gemm => "gemm",
            OpKind::Gemm2 => "gemm2",
            OpKind::HerkTile => "herk_tile",
            OpKind::Her2kTile => "her2k_tile",
            OpKind::HerkxTile => "herkx_tile",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [OpKind::Gemm, OpKind::Gemm2, OpKind::HerkTile, OpKind::Her2kTile, OpKind::HerkxTile]
            .into_iter()
            .find(|k| k.name() == s)
    }

    fn panels(self) -> &'static [Panel] {
        use Panel::*;
        match self {
            OpKind::Gemm | OpKind::HerkxTile => &[LeftRows, RightCols],
            OpKind::Gemm2 => &[LeftRows, RightCols, RightRows, LeftCols],
            OpKind::HerkTile => &[LeftRows],
            OpKind::Her2kTile => &[LeftRows, RightRows],
        }
    }
}

/// Which operand slab a packed panel is cut from. Every operand is `k × n`
/// and a panel is a column range of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Panel {
    LeftRows,
    RightCols,
    RightRows,
    LeftCols,
}

/// One destination tile update. `row0..row0+rows` indexes columns of the
/// left operand, `col0..col0+cols` columns of the right one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockOp {
    pub kind: OpKind,
    pub tile: (usize, usize),
    pub row0: usize,
    pub rows: usize,
    pub col0: usize,
    pub cols: usize,
    pub alpha: C64,
    pub beta: C64,
}

impl BlockOp {
    pub fn flops(&self, k: usize) -> u64 {
        let (r, c, k) = (self.rows as u64, self.cols as u64, k as u64);
        match self.kind {
            OpKind::Gemm => 8 * r * c * k,
            OpKind::Gemm2 => 16 * r * c * k,
            OpKind::HerkTile | OpKind::HerkxTile => 4 * k * r * r,
            OpKind::Her2kTile => 8 * k * r * r,
        }
    }

    pub fn region(&self) -> Region {
        match self.kind {
            OpKind::Gemm | OpKind::Gemm2 => Region::Full,
            _ => Region::Lower,
        }
    }

    /// Column ranges `(panel, first, count)` this op reads.
    pub fn panels(&self) -> impl Iterator<Item = (Panel, usize, usize)> + '_ {
        self.kind.panels().iter().map(move |&p| match p {
            Panel::LeftRows | Panel::RightRows => (p, self.row0, self.rows),
            Panel::RightCols | Panel::LeftCols => (p, self.col0, self.cols),
        })
    }

    /// Device-resident bytes while the op streams `kc`-deep chunks: the
    /// output tile plus three staging panels.
    pub fn footprint(&self, kc: usize) -> u64 {
        let (r, c, kc) = (self.rows as u64, self.cols as u64, kc as u64);
        16 * (r * c + 3 * kc * r.max(c))
    }

    /// Bytes moved host→device→host.
    pub fn transfer_bytes(&self, k: usize) -> u64 {
        let panels: u64 = self.panels().map(|(_, _, w)| (k * w) as u64).sum();
        let tile = (self.rows * self.cols) as u64;
        let dest_in = if self.beta == C64::new(0.0, 0.0) { 0 } else { tile };
        16 * (panels + tile + dest_in)
    }
}

pub(crate) fn view_for<'a>(p: Panel, left: MatRef<'a>, right: MatRef<'a>, first: usize, count: usize) -> MatRef<'a> {
    let src = match p {
        Panel::LeftRows | Panel::LeftCols => left,
        Panel::RightRows | Panel::RightCols => right,
    };
    src.submatrix(0, first, src.rows(), count)
}

/// Runs `op` chunk by chunk over the inner dimension. `panels` are in
/// `op.kind` order and all have the same row count `k`; `k_bounds` are the
/// chunk boundaries (at least two entries).
pub(crate) fn execute(op: &BlockOp, k_bounds: &[usize], panels: &[MatRef<'_>], dest: &mut MatMut<'_>) {
    for (ci, w) in k_bounds.windows(2).enumerate() {
        let p: Vec<MatRef<'_>> = panels.iter().map(|m| m.submatrix(w[0], 0, w[1] - w[0], m.cols())).collect();
        let beta = if ci == 0 { op.beta } else { ONE };
        match op.kind {
            OpKind::Gemm => micro::tile_gemm(op.alpha, p[0], p[1], beta, dest),
            OpKind::Gemm2 => micro::tile_gemm2(op.alpha, p[0], p[1], p[2], p[3], beta, dest),
            OpKind::HerkTile => micro::tile_herk(op.alpha.re, p[0], beta.re, dest),
            OpKind::Her2kTile => micro::tile_her2k(op.alpha, p[0], p[1], beta.re, dest),
            OpKind::HerkxTile => micro::tile_herkx(op.alpha, p[0], p[1], beta.re, dest),
        }
    }
}
