//! Dense row-major `f64` matrix.
//!
//! Deliberately minimal: the crate only needs contiguous storage, row slices
//! for the solver hot loops, and a stable content hash for reproducibility
//! checks. No linear algebra beyond what the estimators themselves implement.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// Matrix of zeros with the given shape.
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Mat {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    /// Matrix with every entry set to `value`.
    pub fn filled(n_rows: usize, n_cols: usize, value: f64) -> Self {
        Mat {
            n_rows,
            n_cols,
            data: vec![value; n_rows * n_cols],
        }
    }

    /// Build from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let n_cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} entries, expected {n_cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Mat {
            n_rows: rows.len(),
            n_cols,
            data,
        })
    }

    /// Build from a flat row-major buffer.
    pub fn from_vec(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch(format!(
                "buffer of length {} cannot fill a {n_rows}x{n_cols} matrix",
                data.len()
            )));
        }
        Ok(Mat {
            n_rows,
            n_cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0 || self.n_cols == 0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        self.data[row * self.n_cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        self.data[row * self.n_cols + col] = value;
    }

    /// Row `i` as a contiguous slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// Column `j` gathered into a fresh vector.
    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    /// Flat row-major view of all entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reshape without copying; the element count must be preserved.
    pub fn reshape(self, n_rows: usize, n_cols: usize) -> Result<Self> {
        Mat::from_vec(n_rows, n_cols, self.data)
    }

    /// Entry-wise map into a new matrix.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// FNV-1a hash over the shape and the exact bit patterns of the entries.
    ///
    /// Used to assert that an input matrix was not mutated by an estimator
    /// and that reruns reproduce outputs bit for bit.
    pub fn content_hash(&self) -> u64 {
        const OFFSET: u64 = 0xcbf29ce484222325;
        const PRIME: u64 = 0x100000001b3;
        let mut h = OFFSET;
        let mut absorb = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        absorb(self.n_rows as u64);
        absorb(self.n_cols as u64);
        for &x in &self.data {
            absorb(x.to_bits());
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_rows_round_trips_entries() {
        let m = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(m.col(0), vec![1.0, 3.0]);
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = Mat::from_rows(&[vec![1.0], vec![1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(Mat::from_rows(&[]), Err(Error::EmptyMatrix)));
        let empty_row: Vec<Vec<f64>> = vec![vec![]];
        assert!(matches!(
            Mat::from_rows(&empty_row),
            Err(Error::EmptyMatrix)
        ));
    }

    #[test]
    fn reshape_preserves_row_major_order() {
        let m = Mat::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let r = m.reshape(6, 1).unwrap();
        assert_eq!(r.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn content_hash_distinguishes_sign_of_zero_but_not_copies() {
        let a = Mat::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = Mat::from_rows(&[vec![-0.0, 1.0]]).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
        let d = Mat::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert_ne!(a.content_hash(), d.content_hash());
    }
}
