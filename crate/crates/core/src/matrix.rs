use std::path::Path;

use crate::error::{Error, Result};
use crate::util;

/// Dense row-major `rows x cols` matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Per-sample, per-class probabilities (N x C).
pub type PredictionMatrix = Matrix;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend(r);
        }
        Ok(Self { rows: n, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(<[f64]>::to_vec).collect()
    }

    /// Headed CSV with columns `{prefix}0 .. {prefix}{cols-1}`.
    pub fn save_csv(&self, path: &Path, prefix: &str) -> Result<()> {
        let header: Vec<String> = (0..self.cols).map(|j| format!("{prefix}{j}")).collect();
        util::write_matrix_csv(path, &header, &self.to_rows())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let (_, rows) = util::read_matrix_csv(path)?;
        Self::from_rows(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip_through_csv() {
        let m = Matrix::from_rows(vec![vec![0.1, 0.2], vec![1.0 / 3.0, 4.0]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        m.save_csv(&p, "p").unwrap();
        assert_eq!(Matrix::load_csv(&p).unwrap(), m);
        assert_eq!(m.row(1), &[1.0 / 3.0, 4.0]);
        assert_eq!(m.get(0, 1), 0.2);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(Matrix::from_rows(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
