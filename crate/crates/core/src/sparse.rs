//! Compressed row and column sparse storage.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Row-compressed sparse matrix with `u32` column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from raw parts. Column indices must be strictly increasing
    /// within each row.
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self, SparseError> {
        if row_ptr.len() != n_rows + 1 || row_ptr[0] != 0 {
            return Err(SparseError::Dimension("row pointer length".into()));
        }
        if col_idx.len() != values.len() || *row_ptr.last().unwrap() != values.len() {
            return Err(SparseError::Dimension("entry arrays disagree".into()));
        }
        for r in 0..n_rows {
            let (a, b) = (row_ptr[r], row_ptr[r + 1]);
            if a > b {
                return Err(SparseError::Dimension(format!(
                    "row {r} has negative length"
                )));
            }
            for i in a..b {
                let c = col_idx[i] as usize;
                if c >= n_cols || (i > a && col_idx[i - 1] >= col_idx[i]) {
                    return Err(SparseError::Dimension(format!(
                        "row {r} column indices unsorted or out of range"
                    )));
                }
                if !values[i].is_finite() {
                    return Err(SparseError::NonFinite { row: r, col: c });
                }
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Stores every entry of a dense row-major matrix whose magnitude exceeds `threshold`.
    pub fn from_dense(
        rows: &[Vec<f64>],
        n_cols: usize,
        threshold: f64,
    ) -> Result<Self, SparseError> {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(SparseError::Dimension(format!(
                    "row {r} has {} entries, expected {n_cols}",
                    row.len()
                )));
            }
            for (c, &v) in row.iter().enumerate() {
                if v.abs() > threshold {
                    col_idx.push(c as u32);
                    values.push(v);
                }
            }
            row_ptr.push(values.len());
        }
        Self::from_parts(rows.len(), n_cols, row_ptr, col_idx, values)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, vals) = self.row(r);
        match idx.binary_search(&(c as u32)) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.n_cols {
            return Err(SparseError::Dimension(format!(
                "vector length {} vs {} columns",
                x.len(),
                self.n_cols
            )));
        }
        Ok((0..self.n_rows)
            .map(|r| {
                let (idx, vals) = self.row(r);
                idx.iter().zip(vals).map(|(&c, v)| v * x[c as usize]).sum()
            })
            .collect())
    }

    /// Sub-matrix made of the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let total: usize = rows
            .iter()
            .map(|&r| self.row_ptr[r + 1] - self.row_ptr[r])
            .sum();
        let mut col_idx = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        for &r in rows {
            let (idx, vals) = self.row(r);
            col_idx.extend_from_slice(idx);
            values.extend_from_slice(vals);
            row_ptr.push(values.len());
        }
        CsrMatrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Approximate heap footprint in bytes.
    pub fn heap_bytes(&self) -> usize {
        self.row_ptr.len() * std::mem::size_of::<usize>()
            + self.col_idx.len() * std::mem::size_of::<u32>()
            + self.values.len() * std::mem::size_of::<f64>()
    }

    pub fn to_csc(&self) -> CscMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let mut row_idx = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.n_rows {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                let slot = next[c as usize];
                row_idx[slot] = r as u32;
                values[slot] = v;
                next[c as usize] += 1;
            }
        }
        CscMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            col_ptr,
            row_idx,
            values,
        }
    }
}

/// Column-compressed sparse matrix with `u32` row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    n_rows: usize,
    n_cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CscMatrix {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn col(&self, c: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.col_ptr[c], self.col_ptr[c + 1]);
        (&self.row_idx[a..b], &self.values[a..b])
    }

    pub fn heap_bytes(&self) -> usize {
        self.col_ptr.len() * std::mem::size_of::<usize>()
            + self.row_idx.len() * std::mem::size_of::<u32>()
            + self.values.len() * std::mem::size_of::<f64>()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.n_cols {
            return Err(SparseError::Dimension(format!(
                "vector length {} vs {} columns",
                x.len(),
                self.n_cols
            )));
        }
        let mut y = vec![0.0; self.n_rows];
        for (c, &xc) in x.iter().enumerate() {
            if xc == 0.0 {
                continue;
            }
            let (idx, vals) = self.col(c);
            for (&r, v) in idx.iter().zip(vals) {
                y[r as usize] += v * xc;
            }
        }
        Ok(y)
    }
}
