//! Small dense linear algebra used across the chain code.
//!
//! Everything that touches probabilities is done with the
//! Grassmann–Taksar–Heyman style of elimination: pivots are formed from sums
//! of nonnegative quantities, never from `1 - p`, so tiny stationary masses keep
//! full relative accuracy.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
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

    /// Builds a matrix from nested rows. Returns `None` for ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Option<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return None;
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Some(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn add(&self, other: &Dense) -> Dense {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Dense::from_vec(self.rows, self.cols, data)
    }

    pub fn scale(&self, factor: f64) -> Dense {
        Dense::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn matmul(&self, other: &Dense) -> Dense {
        assert_eq!(self.cols, other.rows);
        let mut out = Dense::zeros(self.rows, other.cols);
        self.matmul_acc(other, &mut out);
        out
    }

    /// `out += self * other`.
    pub fn matmul_acc(&self, other: &Dense, out: &mut Dense) {
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = out.row_mut(i);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
    }

    /// Row vector times matrix.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Dense) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Dense {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Dense {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Dense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries((0..self.rows).map(|i| self.row(i)))
            .finish()
    }
}

/// Stationary vector of an irreducible chain given by its off-diagonal
/// weights (probabilities or rates; the diagonal is ignored).
///
/// Returns `None` when a pivot vanishes, which means the weights do not
/// describe an irreducible chain.
pub fn gth_stationary(weights: &Dense) -> Option<Vec<f64>> {
    assert!(weights.is_square());
    let n = weights.rows();
    if n == 0 {
        return Some(Vec::new());
    }
    let mut a = weights.clone();
    for k in (1..n).rev() {
        let pivot: f64 = a.row(k)[..k].iter().sum();
        if !(pivot > 0.0) {
            return None;
        }
        for i in 0..k {
            a[(i, k)] /= pivot;
        }
        let (head, tail) = a.data.split_at_mut(k * n);
        let row_k = &tail[..k];
        for i in 0..k {
            let f = head[i * n + k];
            if f == 0.0 {
                continue;
            }
            let row_i = &mut head[i * n..i * n + k];
            for (x, y) in row_i.iter_mut().zip(row_k) {
                *x += f * y;
            }
        }
    }
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    for j in 1..n {
        pi[j] = (0..j).map(|i| pi[i] * a[(i, j)]).sum();
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Some(pi)
}

/// Factorization of `I - T` for a substochastic `T`, used to solve
/// `x (I - T) = b` for row vectors.
///
/// The caller supplies each row's exit mass `1 - sum_j T[i][j]` computed
/// without cancellation; pivots are then built from nonnegative sums only.
#[derive(Debug, Clone)]
pub struct ExitFactor {
    m: usize,
    t: Vec<f64>,
    pivots: Vec<f64>,
}

impl ExitFactor {
    /// Returns the first row index whose pivot vanishes on failure.
    pub fn new(block: Dense, mut exit: Vec<f64>) -> Result<Self, usize> {
        assert!(block.is_square());
        let m = block.rows();
        assert_eq!(exit.len(), m);
        let mut t = block.data;
        let mut pivots = vec![0.0; m];
        for k in 0..m {
            let pivot = exit[k] + t[k * m + k + 1..(k + 1) * m].iter().sum::<f64>();
            if !(pivot > 0.0) {
                return Err(k);
            }
            pivots[k] = pivot;
            let (head, tail) = t.split_at_mut((k + 1) * m);
            let row_k = &head[k * m + k + 1..(k + 1) * m];
            let exit_k = exit[k];
            for (r, row_i) in tail.chunks_exact_mut(m).enumerate() {
                let tik = row_i[k];
                if tik == 0.0 {
                    continue;
                }
                let f = tik / pivot;
                exit[k + 1 + r] += f * exit_k;
                for (x, y) in row_i[k + 1..].iter_mut().zip(row_k) {
                    *x += f * y;
                }
            }
        }
        Ok(Self { m, t, pivots })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    /// Overwrites `b` with the solution `x` of `x (I - T) = b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let m = self.m;
        assert_eq!(b.len(), m);
        for k in 0..m {
            let bk = b[k];
            if bk == 0.0 {
                continue;
            }
            let f = bk / self.pivots[k];
            for (x, y) in b[k + 1..].iter_mut().zip(&self.t[k * m + k + 1..(k + 1) * m]) {
                *x += f * y;
            }
        }
        for k in (0..m).rev() {
            let mut acc = b[k];
            for i in k + 1..m {
                acc += b[i] * self.t[i * m + k];
            }
            b[k] = acc / self.pivots[k];
        }
    }
}

/// Linear convolution of two mass vectors.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(b) {
            *o += x * y;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gth_two_state_balance() {
        let p = Dense::from_rows(&[[0.9, 0.1], [0.5, 0.5]]).unwrap();
        let pi = gth_stationary(&p).unwrap();
        assert!((pi[0] - 5.0 / 6.0).abs() < 1e-15);
        assert!((pi[1] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn gth_rejects_reducible_weights() {
        let p = Dense::identity(3);
        assert!(gth_stationary(&p).is_none());
    }

    #[test]
    fn exit_factor_matches_direct_solution() {
        // T substochastic, exits 0.1, 0.3, 0.0 (third row is stochastic within
        // the block but still reaches the exit through row 0).
        let t = Dense::from_rows(&[[0.5, 0.2, 0.2], [0.1, 0.1, 0.5], [0.6, 0.2, 0.2]]).unwrap();
        let exit = vec![0.1, 0.3, 0.0];
        let f = ExitFactor::new(t.clone(), exit).unwrap();
        let b = vec![1.0, 2.0, 0.5];
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        // Check x (I - T) = b.
        let xt = t.left_mul(&x);
        for j in 0..3 {
            assert!((x[j] - xt[j] - b[j]).abs() < 1e-13, "col {j}");
        }
    }

    #[test]
    fn exit_factor_detects_closed_block() {
        let t = Dense::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap();
        assert!(ExitFactor::new(t, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn convolution_of_two_coins() {
        let c = convolve(&[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(c, vec![0.25, 0.5, 0.25]);
    }
}
