//! Boundary-matching candidate grid and feature sampling.
//!
//! Cell `(s, d)` stands for the grid interval `[s, s + d + 1)` and is valid iff `s + d + 1 <= l_r`.
//! Dense maps are stored row-major as `[s][d]`.

use crate::error::{Error, Result};
use crate::nn::Mat;

/// The valid cells of an `l_r × l_r` map, in `(s, d)` row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BmGrid {
    len: usize,
    cells: Vec<(usize, usize)>,
    mask: Vec<bool>,
}

impl BmGrid {
    pub fn new(len: usize) -> Self {
        let mut cells = Vec::with_capacity(len * (len + 1) / 2);
        let mut mask = vec![false; len * len];
        for s in 0..len {
            for d in 0..len - s {
                cells.push((s, d));
                mask[s * len + d] = true;
            }
        }
        Self { len, cells, mask }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    /// `true` at valid positions of the dense `l_r × l_r` map.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_valid(s: usize, d: usize, len: usize) -> bool {
        s + d < len
    }

    /// Scatters one value per valid cell into a dense map with zeros elsewhere.
    pub fn scatter(&self, values: &[f64]) -> Vec<f64> {
        let mut dense = vec![0.0; self.len * self.len];
        for (&(s, d), v) in self.cells.iter().zip(values) {
            dense[s * self.len + d] = *v;
        }
        dense
    }

    /// Reads the valid cells of a dense map, in cell order.
    pub fn gather(&self, dense: &[f64]) -> Vec<f64> {
        self.cells
            .iter()
            .map(|&(s, d)| dense[s * self.len + d])
            .collect()
    }
}

/// Sampled features of every valid cell: `[cell][channel][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BmFeatureMap {
    pub channels: usize,
    pub samples: usize,
    pub grid: BmGrid,
    pub data: Vec<f64>,
}

impl BmFeatureMap {
    pub fn cell_len(&self) -> usize {
        self.channels * self.samples
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        let n = self.cell_len();
        &self.data[k * n..(k + 1) * n]
    }

    /// Dense `C × N × l_r × l_r` tensor with invalid cells zero.
    pub fn to_dense(&self) -> Vec<f64> {
        let l = self.grid.len();
        let (c_n, n) = (self.channels, self.samples);
        let mut out = vec![0.0; c_n * n * l * l];
        for (k, &(s, d)) in self.grid.cells().iter().enumerate() {
            for c in 0..c_n {
                for j in 0..n {
                    out[((c * n + j) * l + s) * l + d] = self.data[(k * c_n + c) * n + j];
                }
            }
        }
        out
    }
}

/// Interpolation taps: sample `j` of cell `(s, d)` sits at `x = s + j·d/(N−1)`.
fn taps(s: usize, d: usize, j: usize, n: usize, len: usize) -> (usize, usize, f64) {
    let x = s as f64 + j as f64 * d as f64 / (n - 1) as f64;
    let lo = (x.floor() as usize).min(len - 1);
    let hi = (lo + 1).min(len - 1);
    (lo, hi, x - lo as f64)
}

/// Samples `N` linearly interpolated features uniformly across each valid cell's span.
pub fn bm_sample(f_r: &Mat, n: usize) -> Result<BmFeatureMap> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    let (c_n, len) = f_r.shape();
    let grid = BmGrid::new(len);
    let mut data = vec![0.0; grid.num_cells() * c_n * n];
    for (k, &(s, d)) in grid.cells().iter().enumerate() {
        for j in 0..n {
            let (lo, hi, w) = taps(s, d, j, n, len);
            for c in 0..c_n {
                let row = f_r.row(c);
                data[(k * c_n + c) * n + j] = (1.0 - w) * row[lo] + w * row[hi];
            }
        }
    }
    Ok(BmFeatureMap {
        channels: c_n,
        samples: n,
        grid,
        data,
    })
}

/// Gradient of [`bm_sample`] with respect to `f_r` (`C × l_r`).
pub fn bm_sample_backward(map: &BmFeatureMap, d_map: &[f64]) -> Mat {
    let (c_n, n, len) = (map.channels, map.samples, map.grid.len());
    let mut df = Mat::zeros(c_n, len);
    for (k, &(s, d)) in map.grid.cells().iter().enumerate() {
        for j in 0..n {
            let (lo, hi, w) = taps(s, d, j, n, len);
            for c in 0..c_n {
                let g = d_map[(k * c_n + c) * n + j];
                df.add_at(c, lo, (1.0 - w) * g);
                df.add_at(c, hi, w * g);
            }
        }
    }
    df
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, projection_weights};

    #[test]
    fn valid_cell_count() {
        assert_eq!(BmGrid::new(4).num_cells(), 10);
        assert_eq!(BmGrid::new(100).num_cells(), 5050);
    }

    #[test]
    fn constant_input_constant_samples() {
        let f = Mat::filled(3, 7, 2.5);
        let m = bm_sample(&f, 5).unwrap();
        assert!(m.data.iter().all(|&v| (v - 2.5).abs() < 1e-12));
        assert!(bm_sample(&f, 1).is_err());
    }

    #[test]
    fn endpoints_hit_span_edges() {
        let f = Mat::from_rows(&[vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]]);
        let m = bm_sample(&f, 3).unwrap();
        let k = m.grid.cells().iter().position(|&c| c == (1, 4)).unwrap();
        assert_eq!(m.cell(k), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn dense_layout_zeroes_invalid() {
        let f = Mat::from_vec(2, 5, projection_weights(10, 3)).unwrap();
        let m = bm_sample(&f, 4).unwrap();
        let dense = m.to_dense();
        for c in 0..2 * 4 {
            for s in 0..5 {
                for d in 0..5 {
                    let v = dense[(c * 5 + s) * 5 + d];
                    if s + d + 1 > 5 {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = projection_weights(12, 7);
        let w = projection_weights(BmGrid::new(6).num_cells() * 2 * 3, 8);
        let err = grad_check(&x, 1e-5, |x| {
            let f = Mat::from_vec(2, 6, x.to_vec())?;
            let m = bm_sample(&f, 3)?;
            let v = m.data.iter().zip(&w).map(|(a, b)| a * b).sum();
            Ok((v, bm_sample_backward(&m, &w).into_vec()))
        })
        .unwrap();
        assert!(err < 1e-6);
    }
}
