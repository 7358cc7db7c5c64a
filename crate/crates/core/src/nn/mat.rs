//! Dense row-major matrices and rank-3 tensors used by every layer.

use crate::error::{Error, Result};

/// Row-major `rows × cols` matrix. Rows are channels, columns are time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; intended for tests and examples.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
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
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Feature tensor laid out as (channels, length, filters), row-major by (c, l, f).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    length: usize,
    filters: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, length: usize, filters: usize) -> Self {
        Self {
            channels,
            length,
            filters,
            data: vec![0.0; channels * length * filters],
        }
    }

    pub fn from_vec(channels: usize, length: usize, filters: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || length == 0 || filters == 0 {
            return Err(Error::shape(format!(
                "tensor dims must be >= 1, got ({channels}, {length}, {filters})"
            )));
        }
        if data.len() != channels * length * filters {
            return Err(Error::shape(format!(
                "tensor data length {} does not match ({channels}, {length}, {filters})",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            length,
            filters,
            data,
        })
    }

    /// Views a `C × L` matrix as a `C × L × 1` tensor.
    pub fn from_mat(m: &Mat) -> Self {
        Self {
            channels: m.rows(),
            length: m.cols(),
            filters: 1,
            data: m.as_slice().to_vec(),
        }
    }

    /// Collapses a single-filter tensor back into a `C × L` matrix.
    pub fn to_mat(&self) -> Result<Mat> {
        if self.filters != 1 {
            return Err(Error::shape(format!(
                "expected a single filter to collapse into a matrix, got F={}",
                self.filters
            )));
        }
        Mat::from_vec(self.channels, self.length, self.data.clone())
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.length, self.filters)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, c: usize, l: usize, f: usize) -> usize {
        (c * self.length + l) * self.filters + f
    }

    #[inline]
    pub fn get(&self, c: usize, l: usize, f: usize) -> f64 {
        self.data[self.idx(c, l, f)]
    }

    /// Slice holding every (l, f) value of channel `c`.
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.length * self.filters;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.length * self.filters;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
