use crate::linalg::DenseMatrix;

/// Largest state dimension the per-node kernels support.
pub const MAX_DIM: usize = 16;

pub(crate) type Vec16 = [f64; MAX_DIM];

/// Row-major copy of a dense matrix for allocation-free products.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FlatMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FlatMat {
    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    /// `out = M x`.
    #[inline]
    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            out[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `out += s · M x`.
    #[inline]
    pub fn mul_acc(&self, s: f64, x: &[f64], out: &mut [f64]) {
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            out[r] += s * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `xᵀ M x` for square `M`.
    #[inline]
    pub fn quad(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            acc += x[r] * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}
