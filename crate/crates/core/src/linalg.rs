//! Dense least squares by Householder QR.

use crate::{Error, Result};

/// Pivot magnitudes below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
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

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `A^T v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimizes `||A x - b||_2` for a full-column-rank `A` with `m >= n >= 1`.
pub fn solve_least_squares(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let (m, n) = (a.rows, a.cols);
    if n == 0 || m < n {
        return Err(Error::Shape(format!(
            "least squares needs m >= n >= 1, got {m}x{n}"
        )));
    }
    if b.len() != m {
        return Err(Error::Shape(format!("rhs has {} entries, expected {m}", b.len())));
    }

    // Column-major working copy; R overwrites the upper triangle.
    let mut r: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a[(i, j)]).collect()).collect();
    let mut qtb = b.to_vec();

    for k in 0..n {
        let alpha = norm(&r[k][k..]);
        if alpha == 0.0 {
            continue;
        }
        let alpha = if r[k][k] > 0.0 { -alpha } else { alpha };
        // v = x - alpha e_1, stored in place below the diagonal.
        let mut v: Vec<f64> = r[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for col in r.iter_mut().skip(k) {
            let dot: f64 = v.iter().zip(&col[k..]).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in col[k..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        let dot: f64 = v.iter().zip(&qtb[k..]).map(|(a, b)| a * b).sum();
        let f = 2.0 * dot / vnorm2;
        for (c, vi) in qtb[k..].iter_mut().zip(&v) {
            *c -= f * vi;
        }
    }

    let diag: Vec<f64> = (0..n).map(|k| r[k][k].abs()).collect();
    let largest = diag.iter().copied().fold(0.0, f64::max);
    let smallest = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if largest == 0.0 || smallest < RANK_TOLERANCE * largest {
        return Err(Error::Rank {
            ratio: if largest == 0.0 { 0.0 } else { smallest / largest },
        });
    }

    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = qtb[i];
        for j in i + 1..n {
            s -= r[j][i] * x[j];
        }
        x[i] = s / r[i][i];
    }
    Ok(x)
}
