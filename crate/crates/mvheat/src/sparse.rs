//! Minimal compressed-row matrix used for explicit assembly, dumps and
//! cross-checks. The solvers themselves work on the block structure.

use std::io::{self, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed;
    /// exact zeros are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trip: Vec<(usize, usize, f64)>) -> Self {
        trip.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(trip.len());
        let mut data: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(trip.len());
        for (r, c, v) in trip {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                rows.push(r);
                last = Some((r, c));
            }
        }
        // drop explicit zeros
        let mut k = 0;
        for i in 0..data.len() {
            if data[i] != 0.0 {
                data[k] = data[i];
                indices[k] = indices[i];
                rows[k] = rows[i];
                k += 1;
            }
        }
        data.truncate(k);
        indices.truncate(k);
        rows.truncate(k);
        for &r in &rows {
            indptr[r + 1] += 1;
        }
        for i in 0..nrows {
            indptr[i + 1] += indptr[i];
        }
        Self { nrows, ncols, indptr, indices, data }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (lo, hi) = (self.indptr[r], self.indptr[r + 1]);
        match self.indices[lo..hi].binary_search(&c) {
            Ok(p) => self.data[lo + p],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|r| (self.indptr[r]..self.indptr[r + 1]).map(|p| self.data[p] * x[self.indices[p]]).sum()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                trip.push((self.indices[p], r, self.data[p]));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, trip)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for r in 0..self.nrows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                d[r][self.indices[p]] = self.data[p];
            }
        }
        d
    }

    /// MatrixMarket coordinate format, 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            for p in self.indptr[r]..self.indptr[r + 1] {
                writeln!(out, "{} {} {:.17e}", r + 1, self.indices[p] + 1, self.data[p])?;
            }
        }
        Ok(())
    }
}
