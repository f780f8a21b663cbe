//! Dense row-major 2-D float arrays and the matrix kernels the tape needs.
//!
//! All kernels accumulate along the inner dimension in a fixed (sequential)
//! order, and parallelism is only ever applied across *output rows*, so
//! results are bitwise identical for any worker count.

use rayon::prelude::*;

/// Row count at which the matrix kernels switch to parallel execution.
/// Below this the rayon dispatch overhead outweighs the work.
const PAR_MIN_ROWS: usize = 64;

/// A dense, row-major matrix of `f64`. Scalars are `1×1`, row vectors `1×n`.
#[derive(Clone, PartialEq)]
pub struct Array {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl std::fmt::Debug for Array {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Array({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Array {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Array { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Array { rows: 1, cols: 1, data: vec![value] }
    }

    /// Builds an array from row-major data. Panics if the length does not
    /// match `rows * cols`; construction sizes are static in this codebase.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "Array::from_vec: {} values for a {}x{} array",
            data.len(),
            rows,
            cols
        );
        Array { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Array { rows, cols, data }
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The single value of a `1×1` array.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on a {}x{} array", self.rows, self.cols);
        self.data[0]
    }

    pub fn transpose(&self) -> Array {
        Array::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Array {
        Array { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination of two same-shape arrays.
    pub fn zip_map(&self, other: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Array {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_in_place(&mut self, other: &Array) {
        assert_eq!(self.shape(), other.shape(), "add_in_place shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add_scaled_in_place(&mut self, other: &Array, scale: f64) {
        assert_eq!(self.shape(), other.shape(), "add_scaled_in_place shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// `C = self · other` (no transposes). Inner loop is an axpy over the
    /// output row, which vectorizes without reordering the `k` accumulation.
    pub fn matmul(&self, other: &Array) -> Array {
        assert_eq!(
            self.cols, other.rows,
            "matmul inner dimension mismatch: {}x{} · {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Array::zeros(self.rows, other.cols);
        let cols = other.cols;
        let run = |(i, out_row): (usize, &mut [f64])| {
            let a_row = self.row(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * cols..(k + 1) * cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b;
                }
            }
        };
        if self.rows >= PAR_MIN_ROWS {
            out.data.par_chunks_mut(cols).enumerate().for_each(run);
        } else {
            out.data.chunks_mut(cols).enumerate().for_each(run);
        }
        out
    }

    /// `C = self · otherᵀ`. Each output element is a dot product of two rows.
    pub fn matmul_nt(&self, other: &Array) -> Array {
        assert_eq!(
            self.cols, other.cols,
            "matmul_nt inner dimension mismatch: {}x{} · ({}x{})ᵀ",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Array::zeros(self.rows, other.rows);
        let out_cols = other.rows;
        let run = |(i, out_row): (usize, &mut [f64])| {
            let a_row = self.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        };
        if self.rows >= PAR_MIN_ROWS {
            out.data.par_chunks_mut(out_cols).enumerate().for_each(run);
        } else {
            out.data.chunks_mut(out_cols).enumerate().for_each(run);
        }
        out
    }

    /// `C = selfᵀ · other`. Output row `i` gathers column `i` of `self`
    /// against the rows of `other`, keeping the `k` order sequential.
    pub fn matmul_tn(&self, other: &Array) -> Array {
        assert_eq!(
            self.rows, other.rows,
            "matmul_tn inner dimension mismatch: ({}x{})ᵀ · {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Array::zeros(self.cols, other.cols);
        let out_cols = other.cols;
        let a_cols = self.cols;
        let run = |(i, out_row): (usize, &mut [f64])| {
            for k in 0..self.rows {
                let a_ki = self.data[k * a_cols + i];
                if a_ki == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ki * b;
                }
            }
        };
        if self.cols >= PAR_MIN_ROWS {
            out.data.par_chunks_mut(out_cols).enumerate().for_each(run);
        } else {
            out.data.chunks_mut(out_cols).enumerate().for_each(run);
        }
        out
    }
}
