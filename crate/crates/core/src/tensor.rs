//! Row-major dense matrices for the forward passes.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("input width {got} does not match expected {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("sequence holds no frames")]
    EmptySequence,
    #[error("predictions and targets are misaligned: {0}")]
    AlignmentMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dot product with four independent accumulators in a fixed order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NnError::ShapeMismatch("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    /// `rows` copies of `row`.
    pub fn repeat_row(row: &[f64], rows: usize) -> Self {
        Self {
            rows,
            cols: row.len(),
            data: row.repeat(rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * weight^T + bias` with `weight` stored `out x in` row-major.
    pub fn affine(&self, weight: &[f64], bias: &[f64]) -> Self {
        let out = bias.len();
        debug_assert_eq!(weight.len(), out * self.cols);
        let mut result = Self::zeros(self.rows, out);
        for i in 0..self.rows {
            let x = self.row(i);
            let y = result.row_mut(i);
            for (o, yo) in y.iter_mut().enumerate() {
                *yo = dot(x, &weight[o * self.cols..(o + 1) * self.cols]) + bias[o];
            }
        }
        result
    }

    pub fn add(&self, other: &Self) -> Result<Self, NnError> {
        if self.shape() != other.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self { data, ..*self })
    }

    /// Channel-wise concatenation `[self | other]`.
    pub fn hcat(&self, other: &Self) -> Result<Self, NnError> {
        if self.rows != other.rows {
            return Err(NnError::ShapeMismatch(format!(
                "cannot concatenate {} rows with {} rows",
                self.rows, other.rows
            )));
        }
        let mut out = Self::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            let (left, right) = out.row_mut(i).split_at_mut(self.cols);
            left.copy_from_slice(self.row(i));
            right.copy_from_slice(other.row(i));
        }
        Ok(out)
    }

    /// Column-wise maximum.
    pub fn column_max(&self) -> Vec<f64> {
        let mut max = vec![f64::NEG_INFINITY; self.cols];
        for row in self.iter_rows() {
            for (m, &v) in max.iter_mut().zip(row) {
                if v > *m {
                    *m = v;
                }
            }
        }
        max
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// Columns `start..start + len` as a new matrix.
    pub fn columns(&self, start: usize, len: usize) -> Self {
        let mut out = Self::zeros(self.rows, len);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + len]);
        }
        out
    }

    /// Rows reordered so that output row `i` is input row `order[i]`.
    pub fn permute_rows(&self, order: &[usize]) -> Self {
        let mut out = Self::zeros(order.len(), self.cols);
        for (i, &src) in order.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Numerically stable softmax in place.
pub fn softmax_inplace(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_matches_hand_computation() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let y = x.affine(&[1.0, 0.0, 1.0, 1.0, 0.5, -1.0], &[0.0, 1.0, 2.0]);
        assert_eq!(y.to_rows(), vec![vec![1.0, 4.0, 0.5], vec![3.0, 8.0, -0.5]]);
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..11).map(f64::from).collect();
        assert_eq!(dot(&a, &a), (0..11).map(|i| f64::from(i * i)).sum::<f64>());
    }

    #[test]
    fn shape_checks() {
        let a = Matrix::zeros(2, 3);
        assert!(a.add(&Matrix::zeros(3, 2)).is_err());
        assert!(a.hcat(&Matrix::zeros(1, 3)).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert_eq!(a.hcat(&Matrix::zeros(2, 4)).unwrap().shape(), (2, 7));
    }

    #[test]
    fn column_max_and_softmax() {
        let m = Matrix::from_rows(&[vec![1.0, 4.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(m.column_max(), vec![3.0, 4.0]);
        let mut v = vec![1000.0, 1000.0];
        softmax_inplace(&mut v);
        assert_eq!(v, vec![0.5, 0.5]);
    }
}
