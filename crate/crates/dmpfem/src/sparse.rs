//! Minimal sparse-matrix support: a row-map accumulator for assembly and
//! compressed sparse rows for everything downstream. The matrices here are
//! symmetric positive definite by construction, but the full pattern is
//! stored; symmetry is asserted in tests rather than exploited structurally.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Square sparse matrix in CSR form with sorted column indices per row.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Assembly-time accumulator: one ordered map per row, so scatter-adds are
/// deterministic and conversion to CSR yields sorted columns for free.
#[derive(Clone, Debug)]
pub struct SparseBuilder {
    rows: Vec<BTreeMap<usize, f64>>,
}

impl SparseBuilder {
    pub fn new(n: usize) -> Self {
        SparseBuilder {
            rows: vec![BTreeMap::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Accumulates `v` into entry `(r, c)`.
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        *self.rows[r].entry(c).or_insert(0.0) += v;
    }

    pub fn into_csr(self) -> CsrMatrix {
        let n = self.rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let nnz: usize = self.rows.iter().map(|r| r.len()).sum();
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for row in self.rows {
            for (c, v) in row {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            n,
            indptr,
            indices,
            values,
        }
    }
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Column indices of row `r`.
    pub fn row_indices(&self, r: usize) -> &[usize] {
        &self.indices[self.indptr[r]..self.indptr[r + 1]]
    }

    pub fn row_values(&self, r: usize) -> &[f64] {
        &self.values[self.indptr[r]..self.indptr[r + 1]]
    }

    /// Entry `(r, c)`, zero if not stored.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let cols = self.row_indices(r);
        match cols.binary_search(&c) {
            Ok(k) => self.values[self.indptr[r] + k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let mut s = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                s += self.values[k] * x[self.indices[k]];
            }
            y[r] = s;
        }
    }

    /// Mutable access to a stored entry; `None` when `(r, c)` is outside the
    /// sparsity pattern.
    pub fn get_mut(&mut self, r: usize, c: usize) -> Option<&mut f64> {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        match self.indices[lo..hi].binary_search(&c) {
            Ok(k) => Some(&mut self.values[lo + k]),
            Err(_) => None,
        }
    }

    /// Largest absolute difference between the matrix and its transpose.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k];
                worst = worst.max((self.values[k] - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// Writes the matrix in a one-triple-per-line coordinate format: the
    /// caller's header line (prefixed with `# `), then a
    /// `# dmpfem coordinate matrix n=<n> nnz=<nnz>` line, then
    /// `row col value` with zero-based indices and full-precision values.
    pub fn write_coordinate(&self, path: &Path, header: &str) -> Result<()> {
        let ioerr = |e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(ioerr)?);
        writeln!(out, "# {header}").map_err(ioerr)?;
        writeln!(out, "# dmpfem coordinate matrix n={} nnz={}", self.n, self.nnz())
            .map_err(ioerr)?;
        for r in 0..self.n {
            for k in self.indptr[r]..self.indptr[r + 1] {
                writeln!(out, "{} {} {:.16e}", r, self.indices[k], self.values[k])
                    .map_err(ioerr)?;
            }
        }
        out.flush().map_err(ioerr)
    }
}
