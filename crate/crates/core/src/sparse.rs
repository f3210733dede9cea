//! Compressed-row sparse matrices and diagonal operators.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("column index {col} out of range for dimension {n}")]
    ColumnOutOfRange { col: usize, n: usize },
    #[error("row count {rows} does not match dimension {n}")]
    RowCountMismatch { rows: usize, n: usize },
    #[error("vector length {got} does not match operator dimension {want}")]
    DimensionMismatch { got: usize, want: usize },
}

/// Square sparse matrix in compressed-row layout.
///
/// Column indices are strictly increasing within each row and every row
/// stores an explicit diagonal entry (inserted as 0.0 when absent), so the
/// diagonal can be addressed in O(1).
#[derive(Debug, Clone)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    diag_idx: Vec<usize>,
}

impl SparseOperator {
    /// Build from per-row `(column, value)` lists. Entries within a row are
    /// sorted and duplicates are summed.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self, SparseError> {
        if rows.len() != n {
            return Err(SparseError::RowCountMismatch { rows: rows.len(), n });
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut diag_idx = Vec::with_capacity(n);
        row_ptr.push(0);
        for (r, mut row) in rows.into_iter().enumerate() {
            for &(c, _) in &row {
                if c >= n {
                    return Err(SparseError::ColumnOutOfRange { col: c, n });
                }
            }
            row.sort_by_key(|&(c, _)| c);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len() + 1);
            for (c, v) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            if !merged.iter().any(|&(c, _)| c == r) {
                let pos = merged.partition_point(|&(c, _)| c < r);
                merged.insert(pos, (r, 0.0));
            }
            for (c, v) in merged {
                if c == r {
                    diag_idx.push(values.len());
                }
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(values.len());
        }
        Ok(Self { n, row_ptr, col_idx, values, diag_idx })
    }

    /// Diagonal matrix as CSR.
    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
            diag_idx: (0..n).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn diag(&self, r: usize) -> f64 {
        self.values[self.diag_idx[r]]
    }

    /// `y = A x`.
    ///
    /// Off-diagonal entries are accumulated in column order and the diagonal
    /// is added last. Rows assembled with `diag = -(sum of off-diagonals in
    /// column order)` then annihilate constant vectors exactly.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let lo = self.row_ptr[r];
            let hi = self.row_ptr[r + 1];
            let d = self.diag_idx[r];
            let mut acc = 0.0;
            for k in lo..hi {
                if k != d {
                    acc += self.values[k] * x[self.col_idx[k]];
                }
            }
            y[r] = acc + self.values[d] * x[r];
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply(x, &mut y);
        y
    }

    /// `A + diag(d)` as a new operator with the same sparsity pattern.
    pub fn plus_diag(&self, d: &[f64]) -> Result<Self, SparseError> {
        if d.len() != self.n {
            return Err(SparseError::DimensionMismatch { got: d.len(), want: self.n });
        }
        let mut out = self.clone();
        for (r, &dv) in d.iter().enumerate() {
            out.values[out.diag_idx[r]] += dv;
        }
        Ok(out)
    }

    /// Maximum absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n)
            .map(|r| {
                let (_, vals) = self.row(r);
                vals.iter().map(|v| v.abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Iterate `(row, col, value)` over stored entries.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }
}

/// Diagonal operator, e.g. the Jacobian of a pointwise nonlinearity under
/// mass lumping.
#[derive(Debug, Clone)]
pub struct DiagonalMatrix {
    pub diag: Vec<f64>,
}

impl DiagonalMatrix {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.diag.len());
        self.diag.iter().zip(x).map(|(d, v)| d * v).collect()
    }

    pub fn to_sparse(&self) -> SparseOperator {
        SparseOperator::from_diag(&self.diag)
    }
}
