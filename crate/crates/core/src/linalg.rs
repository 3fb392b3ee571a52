//! Small dense linear algebra: Cholesky solves, Sherman–Morrison inverse
//! maintenance and the quadratic forms every closed-form UCB is built from.
//!
//! Everything is `f64`, row-major and sized for design matrices of at most a
//! few thousand rows.

use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Pivots at or below this value are treated as a loss of definiteness.
pub const PIVOT_FLOOR: f64 = 1e-12;

/// Number of rank-one updates between full re-inversions of the tracked matrix.
pub const REFACTOR_INTERVAL: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite: pivot {pivot} at index {index}")]
    NotPsd { index: usize, pivot: f64 },
    #[error("degenerate rank-one update: 1 + u'Z^-1 u = {denominator}")]
    Degenerate { denominator: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = scale;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(LinalgError::DimensionMismatch {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if v.len() != self.cols {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// `self += scale * u u'`.
    pub fn add_outer(&mut self, u: &[f64], scale: f64) {
        debug_assert!(self.is_square() && u.len() == self.rows);
        let n = self.cols;
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            let s = scale * ui;
            for (d, &uj) in self.data[i * n..(i + 1) * n].iter_mut().zip(u) {
                *d += s * uj;
            }
        }
    }

    /// Largest absolute relative asymmetry `|a_ij - a_ji| / max(1, |a_ij|, |a_ji|)`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let (a, b) = (self[(i, j)], self[(j, i)]);
                let scale = 1.0f64.max(a.abs()).max(b.abs());
                worst = worst.max((a - b).abs() / scale);
            }
        }
        worst
    }

    pub fn frobenius_distance(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower-triangular Cholesky factor `L` with `A = L L'`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::DimensionMismatch {
                expected: a.rows(),
                got: a.cols(),
            });
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > PIVOT_FLOOR) {
                return Err(LinalgError::NotPsd {
                    index: j,
                    pivot: diag,
                });
            }
            let d = diag.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                // symmetric input: read the lower triangle only
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        Ok(y)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e).expect("dimension checked");
            for (i, v) in col.into_iter().enumerate() {
                inv[(i, j)] = v;
            }
        }
        symmetrize(&mut inv);
        inv
    }
}

fn symmetrize(m: &mut Matrix) {
    let n = m.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Solves `a x = b` for symmetric positive definite `a` through a Cholesky
/// factorization.
pub fn psd_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    if a.rows() != b.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.rows(),
            got: b.len(),
        });
    }
    Cholesky::factor(a)?.solve(b)
}

/// Running design matrix `Z` together with its inverse.
///
/// The inverse is advanced with Sherman–Morrison in `O(d^2)` per update and
/// rebuilt from the tracked `Z` every [`REFACTOR_INTERVAL`] updates.
#[derive(Debug, Clone)]
pub struct PsdInverseState {
    matrix: Matrix,
    inverse: Matrix,
    log_det: f64,
    updates: usize,
}

impl PsdInverseState {
    /// State for `Z = lambda I`.
    pub fn scaled_identity(dim: usize, lambda: f64) -> Result<Self, LinalgError> {
        if !(lambda > PIVOT_FLOOR) {
            return Err(LinalgError::NotPsd {
                index: 0,
                pivot: lambda,
            });
        }
        Ok(Self {
            matrix: Matrix::scaled_identity(dim, lambda),
            inverse: Matrix::scaled_identity(dim, 1.0 / lambda),
            log_det: dim as f64 * lambda.ln(),
            updates: 0,
        })
    }

    /// State for an arbitrary symmetric positive definite `Z`.
    pub fn from_matrix(matrix: Matrix) -> Result<Self, LinalgError> {
        let chol = Cholesky::factor(&matrix)?;
        Ok(Self {
            inverse: chol.inverse(),
            log_det: chol.log_det(),
            matrix,
            updates: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    /// The tracked `Z`.
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    /// The maintained `Z^-1`.
    pub fn inverse(&self) -> &Matrix {
        &self.inverse
    }

    /// Diagnostic only.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `Z <- Z + u u'`.
    pub fn rank1_update(&mut self, u: &[f64]) -> Result<(), LinalgError> {
        let n = self.dim();
        if u.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: u.len(),
            });
        }
        if u.iter().all(|&x| x == 0.0) {
            return Ok(());
        }
        let zu = self.inverse.mul_vec(u)?;
        let denominator = 1.0 + dot(u, &zu);
        if !(denominator > PIVOT_FLOOR) {
            return Err(LinalgError::Degenerate { denominator });
        }
        self.inverse.add_outer(&zu, -1.0 / denominator);
        self.matrix.add_outer(u, 1.0);
        self.log_det += denominator.ln();
        self.updates += 1;
        if self.updates % REFACTOR_INTERVAL == 0 {
            self.refactor()?;
        }
        Ok(())
    }

    /// Recomputes `Z^-1` and the log-determinant from `Z`.
    pub fn refactor(&mut self) -> Result<(), LinalgError> {
        let chol = Cholesky::factor(&self.matrix)?;
        self.inverse = chol.inverse();
        self.log_det = chol.log_det();
        Ok(())
    }

    /// `max(0, v' Z^-1 v)`.
    pub fn quad_form(&self, v: &[f64]) -> Result<f64, LinalgError> {
        let n = self.dim();
        if v.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
        let mut total = 0.0;
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                total += vi * dot(self.inverse.row(i), v);
            }
        }
        Ok(total.max(0.0))
    }

    /// `Z^-1 v`.
    pub fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.inverse.mul_vec(v)
    }
}
