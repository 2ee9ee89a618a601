//! Packed symmetric factorization with a jitter ladder.

use crate::{Error, Result};

/// Relative jitter ladder; each entry is multiplied by `trace/dim` before
/// being added to the diagonal.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Lower-triangular Cholesky factor stored row-major packed:
/// `l[i*(i+1)/2 + j]` holds `L[i][j]` for `j <= i`.
#[derive(Debug, Clone)]
pub struct PackedCholesky {
    pub dim: usize,
    pub l: Vec<f64>,
    /// Absolute jitter that was added to the diagonal (0 when none was needed).
    pub jitter: f64,
}

#[inline]
pub fn packed_index(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

fn try_factor(matrix: &[f64], dim: usize, jitter: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; dim * (dim + 1) / 2];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = matrix[i * dim + j];
            if i == j {
                sum += jitter;
            }
            for k in 0..j {
                sum -= l[packed_index(i, k)] * l[packed_index(j, k)];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[packed_index(i, i)] = sum.sqrt();
            } else {
                l[packed_index(i, j)] = sum / l[packed_index(j, j)];
            }
        }
    }
    Some(l)
}

impl PackedCholesky {
    /// Factor a dense symmetric matrix (row-major, `dim x dim`), climbing the
    /// jitter ladder until the pivots stay positive.
    pub fn factor(matrix: &[f64], dim: usize) -> Result<Self> {
        assert_eq!(matrix.len(), dim * dim);
        let trace: f64 = (0..dim).map(|i| matrix[i * dim + i]).sum();
        let scale = if dim > 0 { trace / dim as f64 } else { 0.0 };
        for &level in &JITTER_LADDER {
            let jitter = level * scale.abs();
            if let Some(l) = try_factor(matrix, dim, jitter) {
                return Ok(PackedCholesky { dim, l, jitter });
            }
        }
        Err(Error::Factorization(format!(
            "matrix of dim {dim} not positive definite after jitter ladder"
        )))
    }

    /// Solve `L x = b` in place.
    pub fn forward_solve(&self, b: &mut [f64]) {
        for i in 0..self.dim {
            let (done, rest) = b.split_at_mut(i);
            let row = &self.l[packed_index(i, 0)..packed_index(i, i)];
            let dot: f64 = row.iter().zip(done.iter()).map(|(a, w)| a * w).sum();
            rest[0] = (rest[0] - dot) / self.l[packed_index(i, i)];
        }
    }

    /// Solve `L^T x = b` in place.
    pub fn backward_solve(&self, b: &mut [f64]) {
        for i in (0..self.dim).rev() {
            let mut sum = b[i];
            for (j, w) in b.iter().enumerate().skip(i + 1) {
                sum -= self.l[packed_index(j, i)] * w;
            }
            b[i] = sum / self.l[packed_index(i, i)];
        }
    }

    /// Solve `L L^T x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        self.forward_solve(b);
        self.backward_solve(b);
    }

    /// `y = L z` (the sampling map).
    pub fn lower_times(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            let row = &self.l[packed_index(i, 0)..=packed_index(i, i)];
            out[i] = row.iter().zip(&z[..=i]).map(|(a, b)| a * b).sum();
        }
    }

    /// Max-abs residual of `L L^T - K`.
    pub fn residual(&self, matrix: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..=i {
                let mut v = 0.0;
                for k in 0..=j {
                    v += self.l[packed_index(i, k)] * self.l[packed_index(j, k)];
                }
                let mut target = matrix[i * self.dim + j];
                if i == j {
                    target += self.jitter;
                }
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }
}
