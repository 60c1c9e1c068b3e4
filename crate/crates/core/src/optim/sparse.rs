//! Compressed sparse row storage and the Gauss–Newton product `JᵀJ`.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists with strictly increasing columns.
    pub fn from_rows(n_cols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        if n_cols > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!("{n_cols} columns exceed u32 indexing")));
        }
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for (i, row) in rows.iter().enumerate() {
            for (k, &(c, v)) in row.iter().enumerate() {
                if c >= n_cols || (k > 0 && row[k - 1].0 >= c) {
                    return Err(Error::InvalidArgument(format!(
                        "row {i}: column {c} out of order or out of range"
                    )));
                }
                col_idx.push(c as u32);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { n_rows: rows.len(), n_cols, row_ptr, col_idx, values })
    }

    pub fn from_dense(n_rows: usize, n_cols: usize, dense: &[f64]) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = (0..n_rows)
            .map(|i| {
                (0..n_cols)
                    .filter_map(|j| {
                        let v = dense[i * n_cols + j];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        Self::from_rows(n_cols, &rows).expect("well-formed rows")
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.n_rows as f64 * self.n_cols as f64)
    }

    /// Bytes held by values, column indices and row offsets.
    pub fn storage_bytes(&self) -> usize {
        self.values.len() * std::mem::size_of::<f64>()
            + self.col_idx.len() * std::mem::size_of::<u32>()
            + self.row_ptr.len() * std::mem::size_of::<usize>()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&(j as u32)).map_or(0.0, |k| vals[k])
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows * self.n_cols];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                out[i * self.n_cols + *c as usize] = *v;
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n_cols, x.len())?;
        Ok((0..self.n_rows)
            .into_par_iter()
            .map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(|(c, v)| v * x[*c as usize]).sum()
            })
            .collect())
    }

    /// `Aᵀ y`, accumulated row by row in order.
    pub fn transpose_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.n_rows, y.len())?;
        let mut out = vec![0.0; self.n_cols];
        for (i, &yi) in y.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                out[*c as usize] += v * yi;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_idx {
            counts[c as usize + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                let slot = &mut next[*c as usize];
                col_idx[*slot] = i as u32;
                values[*slot] = *v;
                *slot += 1;
            }
        }
        Self { n_rows: self.n_cols, n_cols: self.n_rows, row_ptr, col_idx, values }
    }

    /// Matrix Market coordinate file (1-based indices).
    pub fn write_matrix_market(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(f, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                writeln!(f, "{} {} {:.16e}", i + 1, c + 1, v)?;
            }
        }
        f.flush()?;
        Ok(())
    }
}

/// Maximal runs of consecutive column indices within one row: `(first column,
/// offset into the row, length)`.
fn runs(cols: &[u32]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut k = 0;
    while k < cols.len() {
        let start = k;
        while k + 1 < cols.len() && cols[k + 1] == cols[k] + 1 {
            k += 1;
        }
        k += 1;
        out.push((cols[start] as usize, start, k - start));
    }
    out
}

/// `H = JᵀJ`, stored with both triangles.
///
/// Entry `(i, j)` is accumulated over the rows of `J` in increasing order, the
/// same order for `(j, i)`, so `H` is exactly symmetric. The upper triangle is
/// computed and mirrored.
pub fn normal_matrix(j: &CsrMatrix) -> CsrMatrix {
    let n = j.n_cols;
    let jt = j.transpose();
    let row_runs: Vec<Vec<(usize, usize, usize)>> = (0..j.n_rows).map(|r| runs(j.row(r).0)).collect();

    let upper: Vec<(Vec<u32>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map_init(
            || vec![0.0f64; n],
            |acc, i| {
                let (rows, coefs) = jt.row(i);
                // Clip every run to columns ≥ i; the pattern is their union.
                let clip = |&(c0, off, len): &(usize, usize, usize)| {
                    let skip = i.saturating_sub(c0);
                    if len > skip {
                        Some((c0 + skip, off + skip, len - skip))
                    } else {
                        None
                    }
                };
                let mut spans: Vec<(usize, usize)> = rows
                    .iter()
                    .flat_map(|&r| row_runs[r as usize].iter().filter_map(clip))
                    .map(|(c0, _, len)| (c0, c0 + len))
                    .collect();
                spans.sort_unstable();
                let mut merged: Vec<(usize, usize)> = Vec::new();
                for (s, e) in spans {
                    match merged.last_mut() {
                        Some(last) if s <= last.1 => last.1 = last.1.max(e),
                        _ => merged.push((s, e)),
                    }
                }
                for &(s, e) in &merged {
                    acc[s..e].fill(0.0);
                }
                for (&r, &a) in rows.iter().zip(coefs) {
                    let r = r as usize;
                    let vals = &j.values[j.row_ptr[r]..j.row_ptr[r + 1]];
                    for (c0, off, len) in row_runs[r].iter().filter_map(clip) {
                        for (h, v) in acc[c0..c0 + len].iter_mut().zip(&vals[off..off + len]) {
                            *h += a * v;
                        }
                    }
                }
                let mut cols = Vec::new();
                let mut out = Vec::new();
                for (s, e) in merged {
                    cols.extend((s..e).map(|c| c as u32));
                    out.extend_from_slice(&acc[s..e]);
                }
                (cols, out)
            },
        )
        .collect();

    // Strict lower triangle of row i = strict upper of column i.
    let mut lower: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (i, (cols, vals)) in upper.iter().enumerate() {
        for (c, v) in cols.iter().zip(vals) {
            if *c as usize != i {
                lower[*c as usize].push((i as u32, *v));
            }
        }
    }
    let nnz: usize = upper.iter().map(|u| u.0.len()).sum::<usize>() * 2;
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(nnz);
    let mut values = Vec::with_capacity(nnz);
    row_ptr.push(0);
    for i in 0..n {
        for &(c, v) in &lower[i] {
            col_idx.push(c);
            values.push(v);
        }
        col_idx.extend_from_slice(&upper[i].0);
        values.extend_from_slice(&upper[i].1);
        row_ptr.push(col_idx.len());
    }
    CsrMatrix { n_rows: n, n_cols: n, row_ptr, col_idx, values }
}
