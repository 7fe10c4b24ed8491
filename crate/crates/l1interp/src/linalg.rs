//! Minimal dense matrix support: row-major storage, mat-vec products, and an
//! SPD Cholesky for the n x n systems the solvers factor once and reuse.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("matrix is numerically singular at row {0}")]
    Singular(usize),
}

/// Row-major dense matrix.
#[derive(Debug, Clone)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    /// y = A^T x
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for (i, row) in self.data.chunks_exact(self.cols).enumerate() {
            let xi = x[i];
            if xi != 0.0 {
                for (yj, &a) in y.iter_mut().zip(row) {
                    *yj += xi * a;
                }
            }
        }
        y
    }

    /// A A^T (rows x rows), the Gram matrix the equality-projection step factors.
    pub fn gram_rows(&self) -> Mat {
        let n = self.rows;
        let mut g = Mat::zeros(n, n);
        for i in 0..n {
            let ri = self.row(i);
            for j in i..n {
                let v = dot(ri, self.row(j));
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        g
    }

    /// Columns of A restricted to an index set, packed as a square row-major
    /// matrix with rows = self.rows (requires idx.len() == rows).
    pub fn square_from_cols(&self, idx: &[usize]) -> Mat {
        assert_eq!(idx.len(), self.rows);
        let n = self.rows;
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            let row = self.row(i);
            for (k, &j) in idx.iter().enumerate() {
                out.set(i, k, row[j]);
            }
        }
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Mat,
}

impl Cholesky {
    pub fn new(a: &Mat) -> Result<Self, LinalgError> {
        assert_eq!(a.rows, a.cols);
        let n = a.rows;
        let mut l = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a.get(i, j);
                for k in 0..j {
                    sum -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(LinalgError::NotPositiveDefinite { row: i, pivot: sum });
                    }
                    l.set(i, j, sum.sqrt());
                } else {
                    l.set(i, j, sum / l.get(j, j));
                }
            }
        }
        Ok(Cholesky { l })
    }

    /// Solve A x = b given A = L L^T.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows;
        assert_eq!(b.len(), n);
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum -= self.l.get(i, k) * y[k];
            }
            y[i] = sum / self.l.get(i, i);
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in i + 1..n {
                sum -= self.l.get(k, i) * x[k];
            }
            x[i] = sum / self.l.get(i, i);
        }
        x
    }
}

/// LU solve with partial pivoting for a general square system (consumed by
/// the basis-pursuit vertex polish, where the restricted design is square
/// but not symmetric).
pub fn lu_solve(a: &Mat, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    assert_eq!(b.len(), n);
    let mut m = a.data.clone();
    let mut x: Vec<f64> = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        // pivot
        let mut best = col;
        let mut best_val = m[perm[col] * n + col].abs();
        for row in col + 1..n {
            let v = m[perm[row] * n + col].abs();
            if v > best_val {
                best = row;
                best_val = v;
            }
        }
        if best_val < 1e-300 {
            return Err(LinalgError::Singular(col));
        }
        perm.swap(col, best);
        let prow = perm[col];
        let pivot = m[prow * n + col];
        for row in col + 1..n {
            let r = perm[row];
            let factor = m[r * n + col] / pivot;
            if factor != 0.0 {
                m[r * n + col] = factor;
                for k in col + 1..n {
                    m[r * n + k] -= factor * m[prow * n + k];
                }
            } else {
                m[r * n + col] = 0.0;
            }
        }
    }
    // forward
    let mut y = vec![0.0; n];
    for i in 0..n {
        let r = perm[i];
        let mut sum = x[r];
        for k in 0..i {
            sum -= m[r * n + k] * y[k];
        }
        y[i] = sum;
    }
    // back
    for i in (0..n).rev() {
        let r = perm[i];
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= m[r * n + k] * x[k];
        }
        x[i] = sum / m[r * n + i];
    }
    Ok(x)
}

/// Solve A^T x = b reusing the same dense data (builds the transpose once).
pub fn lu_solve_transpose(a: &Mat, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let n = a.rows;
    let mut t = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            t.set(j, i, a.get(i, j));
        }
    }
    lu_solve(&t, b)
}
