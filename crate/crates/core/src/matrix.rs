//! Dense column-major complex matrices and borrowed views into them.
//!
//! [`MatRef`] and [`MatMut`] carry a leading dimension so that row slices of
//! a stacked operand (one atom's block inside `N_A·N_L × N_G`) and tiles of
//! an output matrix can be handed to kernels without copying. `MatMut` can
//! be split into disjoint pieces which may then be sent to other threads.

use std::fmt;
use std::marker::PhantomData;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::ShapeError;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Dense column-major complex double-precision matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError::DataLength {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row-major nested rows; convenient in tests.
    pub fn from_rows(rows: &[Vec<C64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self::from_fn(r, c, |i, j| rows[i][j])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    /// Size of the element storage in bytes.
    pub fn byte_len(&self) -> usize {
        self.data.len() * std::mem::size_of::<C64>()
    }

    pub fn col(&self, j: usize) -> &[C64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn as_ref(&self) -> MatRef<'_> {
        MatRef::from_slice(&self.data, self.rows, self.cols, self.rows.max(1))
    }

    pub fn as_mut(&mut self) -> MatMut<'_> {
        let ld = self.rows.max(1);
        MatMut::from_slice(&mut self.data, self.rows, self.cols, ld)
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn scale(&mut self, s: C64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Copies the `rows × cols` region starting at `(row0, col0)`.
    pub fn submatrix(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Self {
        self.as_ref().submatrix(row0, col0, rows, cols).to_owned()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i + j * self.rows]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i + j * self.rows]
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            write!(f, " ")?;
            for j in 0..self.cols.min(8) {
                let v = self[(i, j)];
                write!(f, " {:+.3e}{:+.3e}i", v.re, v.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

/// Immutable strided view of a column-major matrix.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    ptr: *const C64,
    rows: usize,
    cols: usize,
    ld: usize,
    _marker: PhantomData<&'a C64>,
}

// SAFETY: a MatRef is a shared borrow of `C64` values.
unsafe impl Send for MatRef<'_> {}
unsafe impl Sync for MatRef<'_> {}

impl<'a> MatRef<'a> {
    pub fn from_slice(data: &'a [C64], rows: usize, cols: usize, ld: usize) -> Self {
        assert!(ld >= rows.max(1), "leading dimension smaller than row count");
        if rows > 0 && cols > 0 {
            assert!(data.len() >= (cols - 1) * ld + rows, "slice too short for view");
        }
        Self {
            ptr: data.as_ptr(),
            rows,
            cols,
            ld,
            _marker: PhantomData,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn ld(&self) -> usize {
        self.ld
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        assert!(i < self.rows && j < self.cols);
        // SAFETY: bounds checked above; view invariant covers (i, j).
        unsafe { *self.ptr.add(i + j * self.ld) }
    }

    #[inline]
    pub(crate) unsafe fn get_unchecked(&self, i: usize, j: usize) -> C64 {
        debug_assert!(i < self.rows && j < self.cols);
        *self.ptr.add(i + j * self.ld)
    }

    /// Column `j` as a contiguous slice.
    #[inline]
    pub fn col(&self, j: usize) -> &'a [C64] {
        assert!(j < self.cols);
        // SAFETY: column j holds `rows` contiguous elements inside the view.
        unsafe { std::slice::from_raw_parts(self.ptr.add(j * self.ld), self.rows) }
    }

    pub fn submatrix(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> MatRef<'a> {
        assert!(row0 + rows <= self.rows && col0 + cols <= self.cols, "submatrix out of bounds");
        let offset = if rows == 0 || cols == 0 { 0 } else { row0 + col0 * self.ld };
        MatRef {
            // SAFETY: offset lies within the parent view (or is zero).
            ptr: unsafe { self.ptr.add(offset) },
            rows,
            cols,
            ld: self.ld,
            _marker: PhantomData,
        }
    }

    pub fn to_owned(&self) -> ComplexMatrix {
        ComplexMatrix::from_fn(self.rows, self.cols, |i, j| unsafe { self.get_unchecked(i, j) })
    }
}

/// Mutable strided view of a column-major matrix.
///
/// Splitting yields views over disjoint element sets, so the pieces may be
/// written concurrently.
pub struct MatMut<'a> {
    ptr: *mut C64,
    rows: usize,
    cols: usize,
    ld: usize,
    _marker: PhantomData<&'a mut C64>,
}

// SAFETY: a MatMut is an exclusive borrow of the elements it covers.
unsafe impl Send for MatMut<'_> {}
unsafe impl Sync for MatMut<'_> {}

impl<'a> MatMut<'a> {
    pub fn from_slice(data: &'a mut [C64], rows: usize, cols: usize, ld: usize) -> Self {
        assert!(ld >= rows.max(1), "leading dimension smaller than row count");
        if rows > 0 && cols > 0 {
            assert!(data.len() >= (cols - 1) * ld + rows, "slice too short for view");
        }
        Self {
            ptr: data.as_mut_ptr(),
            rows,
            cols,
            ld,
            _marker: PhantomData,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn ld(&self) -> usize {
        self.ld
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        assert!(i < self.rows && j < self.cols);
        // SAFETY: bounds checked above.
        unsafe { *self.ptr.add(i + j * self.ld) }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        assert!(i < self.rows && j < self.cols);
        // SAFETY: bounds checked above.
        unsafe { *self.ptr.add(i + j * self.ld) = v }
    }

    #[inline]
    pub(crate) unsafe fn ptr_at(&mut self, i: usize, j: usize) -> *mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.ptr.add(i + j * self.ld)
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [C64] {
        assert!(j < self.cols);
        // SAFETY: column j holds `rows` contiguous elements exclusively borrowed.
        unsafe { std::slice::from_raw_parts_mut(self.ptr.add(j * self.ld), self.rows) }
    }

    pub fn rb(&self) -> MatRef<'_> {
        MatRef {
            ptr: self.ptr,
            rows: self.rows,
            cols: self.cols,
            ld: self.ld,
            _marker: PhantomData,
        }
    }

    pub fn rb_mut(&mut self) -> MatMut<'_> {
        MatMut {
            ptr: self.ptr,
            rows: self.rows,
            cols: self.cols,
            ld: self.ld,
            _marker: PhantomData,
        }
    }

    pub fn submatrix_mut(self, row0: usize, col0: usize, rows: usize, cols: usize) -> MatMut<'a> {
        assert!(row0 + rows <= self.rows && col0 + cols <= self.cols, "submatrix out of bounds");
        let offset = if rows == 0 || cols == 0 { 0 } else { row0 + col0 * self.ld };
        MatMut {
            // SAFETY: offset lies within the parent view (or is zero).
            ptr: unsafe { self.ptr.add(offset) },
            rows,
            cols,
            ld: self.ld,
            _marker: PhantomData,
        }
    }

    /// Splits into rows `[0, r)` and `[r, rows)`.
    pub fn split_at_row(self, r: usize) -> (MatMut<'a>, MatMut<'a>) {
        assert!(r <= self.rows);
        let top = MatMut {
            ptr: self.ptr,
            rows: r,
            cols: self.cols,
            ld: self.ld,
            _marker: PhantomData,
        };
        let bottom = MatMut {
            // SAFETY: stays within the first column's allocation (or one past it).
            ptr: if self.rows - r == 0 { self.ptr } else { unsafe { self.ptr.add(r) } },
            rows: self.rows - r,
            cols: self.cols,
            ld: self.ld,
            _marker: PhantomData,
        };
        (top, bottom)
    }

    /// Splits into columns `[0, c)` and `[c, cols)`.
    pub fn split_at_col(self, c: usize) -> (MatMut<'a>, MatMut<'a>) {
        assert!(c <= self.cols);
        let left = MatMut {
            ptr: self.ptr,
            rows: self.rows,
            cols: c,
            ld: self.ld,
            _marker: PhantomData,
        };
        let right = MatMut {
            ptr: if self.cols - c == 0 || self.rows == 0 {
                self.ptr
            } else {
                // SAFETY: column c exists.
                unsafe { self.ptr.add(c * self.ld) }
            },
            rows: self.rows,
            cols: self.cols - c,
            ld: self.ld,
            _marker: PhantomData,
        };
        (left, right)
    }

    /// Splits the view into a grid of tiles given by row and column
    /// boundaries, keeping only those for which `keep(tile_row, tile_col)`.
    pub fn into_tiles(
        self,
        row_bounds: &[usize],
        col_bounds: &[usize],
        mut keep: impl FnMut(usize, usize) -> bool,
    ) -> Vec<(usize, usize, MatMut<'a>)> {
        let mut tiles = Vec::new();
        for tj in 0..col_bounds.len().saturating_sub(1) {
            for ti in 0..row_bounds.len().saturating_sub(1) {
                if !keep(ti, tj) {
                    continue;
                }
                let (r0, r1) = (row_bounds[ti], row_bounds[ti + 1]);
                let (c0, c1) = (col_bounds[tj], col_bounds[tj + 1]);
                assert!(r0 <= r1 && r1 <= self.rows && c0 <= c1 && c1 <= self.cols);
                let offset = if r1 == r0 || c1 == c0 { 0 } else { r0 + c0 * self.ld };
                tiles.push((
                    ti,
                    tj,
                    MatMut {
                        // SAFETY: the bounds partition the view, so tiles are disjoint.
                        ptr: unsafe { self.ptr.add(offset) },
                        rows: r1 - r0,
                        cols: c1 - c0,
                        ld: self.ld,
                        _marker: PhantomData,
                    },
                ));
            }
        }
        tiles
    }

    pub fn fill(&mut self, v: C64) {
        for j in 0..self.cols {
            self.col_mut(j).fill(v);
        }
    }

    pub fn copy_from(&mut self, src: MatRef<'_>) {
        assert_eq!((self.rows, self.cols), (src.rows(), src.cols()));
        for j in 0..self.cols {
            self.col_mut(j).copy_from_slice(src.col(j));
        }
    }
}

/// Tile boundaries `[0, b, 2b, …, n]`.
pub fn tile_bounds(n: usize, b: usize) -> Vec<usize> {
    assert!(b > 0);
    let mut bounds: Vec<usize> = (0..n).step_by(b).collect();
    bounds.push(n);
    if n == 0 {
        bounds = vec![0, 0];
    }
    bounds
}

/// A square matrix whose lower triangle is authoritative.
///
/// The strict upper triangle carries no meaning until [`HermitianView::mirror`]
/// is called; kernels writing Hermitian outputs never touch it.
#[derive(Clone, PartialEq, Debug)]
pub struct HermitianView {
    matrix: ComplexMatrix,
}

impl HermitianView {
    pub fn new(matrix: ComplexMatrix) -> Result<Self, ShapeError> {
        if matrix.rows() != matrix.cols() {
            return Err(ShapeError::NotSquare {
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        Ok(Self { matrix })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            matrix: ComplexMatrix::zeros(n, n),
        }
    }

    pub fn order(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut ComplexMatrix {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn as_ref(&self) -> MatRef<'_> {
        self.matrix.as_ref()
    }

    pub fn as_mut(&mut self) -> MatMut<'_> {
        self.matrix.as_mut()
    }

    /// Overwrites the strict upper triangle with the conjugate of the lower
    /// one and zeroes the imaginary parts of the diagonal.
    pub fn mirror(&mut self) {
        let n = self.order();
        for j in 0..n {
            let d = self.matrix[(j, j)];
            self.matrix[(j, j)] = C64::new(d.re, 0.0);
            for i in j + 1..n {
                self.matrix[(j, i)] = self.matrix[(i, j)].conj();
            }
        }
    }

    /// Returns a full Hermitian copy without touching `self`.
    pub fn to_full(&self) -> ComplexMatrix {
        let mut copy = self.clone();
        copy.mirror();
        copy.matrix
    }

    /// Copy with the strict upper triangle set to zero.
    pub fn lower_only(&self) -> ComplexMatrix {
        let mut m = self.matrix.clone();
        let n = self.order();
        for j in 0..n {
            for i in 0..j {
                m[(i, j)] = ZERO;
            }
        }
        m
    }

    /// Fills the strict upper triangle with `v` (NaN in triangle-contract tests).
    pub fn poison_upper(&mut self, v: C64) {
        let n = self.order();
        for j in 0..n {
            for i in 0..j {
                self.matrix[(i, j)] = v;
            }
        }
    }

    /// Bit patterns of the strict upper triangle, column by column.
    pub fn upper_bits(&self) -> Vec<(u64, u64)> {
        let n = self.order();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for j in 0..n {
            for i in 0..j {
                let v = self.matrix[(i, j)];
                out.push((v.re.to_bits(), v.im.to_bits()));
            }
        }
        out
    }

    /// Largest `|M[i][j] - conj(M[j][i])|` over the full stored matrix.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.order();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

/// `‖X − Y‖_F / max(‖Y‖_F, 1e-300)`.
pub fn rel_frobenius_error(x: &ComplexMatrix, y: &ComplexMatrix) -> Result<f64, ShapeError> {
    if x.shape() != y.shape() {
        return Err(ShapeError::Mismatch {
            left: x.shape(),
            right: y.shape(),
        });
    }
    let diff: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(diff / y.frobenius_norm().max(1e-300))
}

/// Relative Frobenius error between the lower triangles of two Hermitian
/// matrices (the only part either side defines).
pub fn rel_lower_error(x: &HermitianView, y: &HermitianView) -> Result<f64, ShapeError> {
    rel_frobenius_error(&x.to_full(), &y.to_full())
}

/// Stacks equally shaped blocks rowwise: block `a` occupies rows
/// `[a·r, (a+1)·r)`.
pub fn stack_blocks(blocks: &[ComplexMatrix]) -> Result<ComplexMatrix, ShapeError> {
    let Some(first) = blocks.first() else {
        return Ok(ComplexMatrix::zeros(0, 0));
    };
    let (r, c) = first.shape();
    let mut out = ComplexMatrix::zeros(r * blocks.len(), c);
    stack_blocks_into(blocks, &mut out)?;
    Ok(out)
}

/// Stacks into a preallocated `(len·r) × c` buffer.
pub fn stack_blocks_into(blocks: &[ComplexMatrix], out: &mut ComplexMatrix) -> Result<(), ShapeError> {
    let Some(first) = blocks.first() else {
        return Ok(());
    };
    let (r, c) = first.shape();
    for b in blocks {
        if b.shape() != (r, c) {
            return Err(ShapeError::Mismatch {
                left: (r, c),
                right: b.shape(),
            });
        }
    }
    if out.shape() != (r * blocks.len(), c) {
        return Err(ShapeError::Mismatch {
            left: (r * blocks.len(), c),
            right: out.shape(),
        });
    }
    for (a, b) in blocks.iter().enumerate() {
        write_row_block(out, a * r, b.as_ref());
    }
    Ok(())
}

/// Copies `src` into rows `[row0, row0 + src.rows())` of `dst`.
pub fn write_row_block(dst: &mut ComplexMatrix, row0: usize, src: MatRef<'_>) {
    let (rows, cols) = (src.rows(), src.cols());
    dst.as_mut().submatrix_mut(row0, 0, rows, cols).copy_from(src);
}

/// Inverse of [`stack_blocks`].
pub fn unstack_blocks(stacked: &ComplexMatrix, block_rows: usize) -> Result<Vec<ComplexMatrix>, ShapeError> {
    if block_rows == 0 || !stacked.rows().is_multiple_of(block_rows) {
        return Err(ShapeError::BlockRows {
            rows: stacked.rows(),
            block_rows,
        });
    }
    Ok((0..stacked.rows() / block_rows)
        .map(|a| stacked.submatrix(a * block_rows, 0, block_rows, stacked.cols()))
        .collect())
}
