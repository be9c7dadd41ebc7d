//! Small dense/sparse helpers shared by the geometry, solver and integrators.

use nalgebra::{DMatrix, DVector, Vector3};

/// A block of constraint Jacobian rows that touches only a few generalized
/// velocities. Logically `rows × n_v`; only the listed columns are stored,
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    rows: usize,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn new(rows: usize, cols: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols.len(), "value count mismatch");
        debug_assert!(cols.windows(2).all(|w| w[0] < w[1]), "columns must be sorted");
        Self { rows, cols, values }
    }

    /// A single row selecting generalized velocity `col`.
    pub fn unit_row(col: usize) -> Self {
        Self::new(1, vec![col], vec![1.0])
    }

    /// Builds three rows from world-frame columns projected on `frame`.
    ///
    /// `columns` holds `(velocity index, world vector)` pairs; repeated
    /// indices are summed.
    pub fn from_world_columns(mut columns: Vec<(usize, Vector3<f64>)>, frame: &[Vector3<f64>; 3]) -> Self {
        columns.sort_by_key(|c| c.0);
        let mut merged: Vec<(usize, Vector3<f64>)> = Vec::with_capacity(columns.len());
        for (col, w) in columns {
            match merged.last_mut() {
                Some(last) if last.0 == col => last.1 += w,
                _ => merged.push((col, w)),
            }
        }
        let cols: Vec<usize> = merged.iter().map(|c| c.0).collect();
        let n = cols.len();
        let mut values = vec![0.0; 3 * n];
        for (k, (_, w)) in merged.iter().enumerate() {
            for (row, axis) in frame.iter().enumerate() {
                values[row * n + k] = axis.dot(w);
            }
        }
        Self::new(3, cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, k: usize) -> f64 {
        self.values[row * self.cols.len() + k]
    }

    /// Row `row` times `v`.
    pub fn row_dot(&self, row: usize, v: &DVector<f64>) -> f64 {
        let n = self.cols.len();
        let vals = &self.values[row * n..(row + 1) * n];
        vals.iter().zip(&self.cols).map(|(a, &c)| a * v[c]).sum()
    }

    /// `out[..rows] = J v`.
    pub fn mul_into(&self, v: &DVector<f64>, out: &mut [f64]) {
        for (row, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = self.row_dot(row, v);
        }
    }

    /// `out += scale · Jᵀ y`.
    pub fn add_transpose_mul(&self, y: &[f64], scale: f64, out: &mut DVector<f64>) {
        let n = self.cols.len();
        for row in 0..self.rows {
            let s = scale * y[row];
            if s == 0.0 {
                continue;
            }
            for (k, &c) in self.cols.iter().enumerate() {
                out[c] += s * self.values[row * n + k];
            }
        }
    }

    /// `out += scale · Jᵀ H J` for a small symmetric `H` given row-major.
    pub fn add_congruence(&self, h: &[f64], scale: f64, out: &mut DMatrix<f64>) {
        let m = self.rows;
        let n = self.cols.len();
        // HJ, m × n
        let mut hj = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..m {
                let hij = h[i * m + j];
                if hij == 0.0 {
                    continue;
                }
                for k in 0..n {
                    hj[i * n + k] += hij * self.values[j * n + k];
                }
            }
        }
        for (ka, &ca) in self.cols.iter().enumerate() {
            for (kb, &cb) in self.cols.iter().enumerate() {
                let mut acc = 0.0;
                for i in 0..m {
                    acc += self.values[i * n + ka] * hj[i * n + kb];
                }
                out[(ca, cb)] += scale * acc;
            }
        }
    }

    pub fn to_dense(&self, nv: usize) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.rows, nv);
        let n = self.cols.len();
        for row in 0..self.rows {
            for (k, &c) in self.cols.iter().enumerate() {
                d[(row, c)] += self.values[row * n + k];
            }
        }
        d
    }
}

/// `‖x‖_∞`, zero for an empty vector.
pub fn max_abs(x: impl IntoIterator<Item = f64>) -> f64 {
    x.into_iter().fold(0.0, |m, a| m.max(a.abs()))
}

pub fn is_finite(x: &DVector<f64>) -> bool {
    x.iter().all(|a| a.is_finite())
}
