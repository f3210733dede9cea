//! Small dense matrices: the exponential kernel behind the Krylov projections
//! and the brute-force oracles used by the self-tests.

use crate::sparse::SparseOperator;
use thiserror::Error;

/// Size cap for the public oracle entry points. The oracles are meant for
/// verification at desk scale, not production operators.
pub const DENSE_ORACLE_MAX_DIM: usize = 500;

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("dense oracle dimension {n} exceeds cap {max}")]
    TooLarge { n: usize, max: usize },
    #[error("matrices have mismatched dimensions {a} vs {b}")]
    DimensionMismatch { a: usize, b: usize },
}

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = f(i, j);
            }
        }
        m
    }

    pub fn from_sparse(a: &SparseOperator) -> Self {
        let mut m = Self::zeros(a.n());
        for (r, c, v) in a.iter() {
            m.data[r * a.n() + c] += v;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.data[i * n + k];
                if aik == 0.0 {
                    continue;
                }
                let row_b = &other.data[k * n..(k + 1) * n];
                let row_o = &mut out.data[i * n..(i + 1) * n];
                for j in 0..n {
                    row_o[j] += aik * row_b[j];
                }
            }
        }
        out
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let n = self.n;
        (0..n)
            .map(|i| {
                let row = &self.data[i * n..(i + 1) * n];
                row.iter().zip(x).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        let n = self.n;
        (0..n)
            .map(|i| self.data[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// `e^{tau*A}` by scaling and squaring with a full-precision Taylor kernel.
///
/// The argument is scaled so its norm is at most 1/4; 16 Taylor terms then
/// leave a truncation error far below f64 resolution.
pub(crate) fn expm_unchecked(a: &DenseMatrix, tau: f64) -> DenseMatrix {
    let n = a.n();
    let b = a.scale(tau);
    let norm = b.inf_norm();
    let s = if norm > 0.25 { (norm / 0.25).log2().ceil() as u32 } else { 0 };
    let x = b.scale(0.5f64.powi(s as i32));
    // Horner evaluation of I + X + X^2/2! + ... + X^K/K!
    const K: usize = 16;
    let mut p = DenseMatrix::identity(n);
    for k in (1..=K).rev() {
        p = x.matmul(&p).scale(1.0 / k as f64);
        for i in 0..n {
            p.data[i * n + i] += 1.0;
        }
    }
    for _ in 0..s {
        p = p.matmul(&p);
    }
    p
}

/// Dense matrix exponential `e^{tau*M}`, capped at [`DENSE_ORACLE_MAX_DIM`].
pub fn dense_expm(m: &DenseMatrix, tau: f64) -> Result<DenseMatrix, DenseError> {
    if m.n() > DENSE_ORACLE_MAX_DIM {
        return Err(DenseError::TooLarge { n: m.n(), max: DENSE_ORACLE_MAX_DIM });
    }
    Ok(expm_unchecked(m, tau))
}

/// Dense `phi1(tau*M)` with `phi1(z) = (e^z - 1)/z`, `phi1(0) = I`.
///
/// Computed from the exponential of the 2n-dimensional block matrix
/// `[[M, I], [0, 0]]`, whose top-right block equals `tau*phi1(tau*M)`.
pub fn dense_phi1(m: &DenseMatrix, tau: f64) -> Result<DenseMatrix, DenseError> {
    let n = m.n();
    if n > DENSE_ORACLE_MAX_DIM {
        return Err(DenseError::TooLarge { n, max: DENSE_ORACLE_MAX_DIM });
    }
    if tau == 0.0 {
        return Ok(DenseMatrix::identity(n));
    }
    let mut aug = DenseMatrix::zeros(2 * n);
    for i in 0..n {
        for j in 0..n {
            aug.set(i, j, m.get(i, j));
        }
        aug.set(i, n + i, 1.0);
    }
    let e = expm_unchecked(&aug, tau);
    Ok(DenseMatrix::from_fn(n, |i, j| e.get(i, n + j) / tau))
}
