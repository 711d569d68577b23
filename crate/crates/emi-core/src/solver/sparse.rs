//! Compressed sparse row matrices with just the operations the solver
//! stack needs: triplet assembly, matrix-vector products, transposition,
//! symmetry checks and Matrix Market export.

use std::io::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum SparseError {
    #[error("triplet ({row}, {col}) outside a {nrows} x {ncols} matrix")]
    OutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("matrix market parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Triplet accumulator; duplicate entries sum on conversion.
#[derive(Clone, Debug)]
pub struct CooMatrix {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl CooMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        CooMatrix {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// Add `scale * m` entry-wise.
    pub fn add_matrix(&mut self, m: &CsrMatrix, scale: f64) {
        for (r, c, v) in m.triplets() {
            self.push(r, c, scale * v);
        }
    }

    pub fn to_csr(mut self) -> CsrMatrix {
        self.entries
            .sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_counts = vec![0usize; self.nrows];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_counts[r] += 1;
                last = Some((r, c));
            }
        }
        let mut row_ptr = vec![0usize; self.nrows + 1];
        for r in 0..self.nrows {
            row_ptr[r + 1] = row_ptr[r] + row_counts[r];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[range.clone()]
            .iter()
            .zip(&self.values[range])
            .map(|(&c, &v)| (c, v))
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r)
            .find(|&(cc, _)| cc == c)
            .map(|(_, v)| v)
            .unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[p] * x[self.col_idx[p]];
            }
            y[r] = acc;
        }
    }

    pub fn mul_vec_owned(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec(x, &mut y);
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut coo = CooMatrix::new(self.ncols, self.nrows);
        for (r, c, v) in self.triplets() {
            coo.push(c, r, v);
        }
        coo.to_csr()
    }

    /// Largest |A_ij - A_ji|, zero for a symmetric matrix.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            let mut a = self.row(r).peekable();
            let mut b = t.row(r).peekable();
            loop {
                match (a.peek().copied(), b.peek().copied()) {
                    (Some((ca, va)), Some((cb, vb))) => {
                        if ca == cb {
                            worst = worst.max((va - vb).abs());
                            a.next();
                            b.next();
                        } else if ca < cb {
                            worst = worst.max(va.abs());
                            a.next();
                        } else {
                            worst = worst.max(vb.abs());
                            b.next();
                        }
                    }
                    (Some((_, va)), None) => {
                        worst = worst.max(va.abs());
                        a.next();
                    }
                    (None, Some((_, vb))) => {
                        worst = worst.max(vb.abs());
                        b.next();
                    }
                    (None, None) => break,
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn inf_norm(&self) -> f64 {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    #[cfg(test)]
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn write_matrix_market<P: AsRef<Path>>(&self, path: P) -> Result<(), SparseError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(file, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(file, "{} {} {v}", r + 1, c + 1)?;
        }
        Ok(())
    }

    pub fn read_matrix_market<P: AsRef<Path>>(path: P) -> Result<CsrMatrix, SparseError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (ln, header) = lines.next().ok_or(SparseError::Parse {
            line: 0,
            msg: "empty file".into(),
        })?;
        if !header.starts_with("%%MatrixMarket matrix coordinate real") {
            return Err(SparseError::Parse {
                line: ln,
                msg: "unsupported matrix market header".into(),
            });
        }
        let mut lines = lines.filter(|(_, l)| !l.starts_with('%'));
        let (ln, size) = lines.next().ok_or(SparseError::Parse {
            line: 0,
            msg: "missing size line".into(),
        })?;
        let dims: Vec<usize> = size
            .split_whitespace()
            .map(|t| t.parse().unwrap_or(usize::MAX))
            .collect();
        if dims.len() != 3 || dims.contains(&usize::MAX) {
            return Err(SparseError::Parse {
                line: ln,
                msg: "bad size line".into(),
            });
        }
        let mut coo = CooMatrix::new(dims[0], dims[1]);
        for _ in 0..dims[2] {
            let (ln, entry) = lines.next().ok_or(SparseError::Parse {
                line: 0,
                msg: "entry table ends early".into(),
            })?;
            let toks: Vec<&str> = entry.split_whitespace().collect();
            if toks.len() != 3 {
                return Err(SparseError::Parse {
                    line: ln,
                    msg: "expected 'row col value'".into(),
                });
            }
            let r: usize = toks[0].parse().map_err(|_| SparseError::Parse {
                line: ln,
                msg: "bad row".into(),
            })?;
            let c: usize = toks[1].parse().map_err(|_| SparseError::Parse {
                line: ln,
                msg: "bad col".into(),
            })?;
            let v: f64 = toks[2].parse().map_err(|_| SparseError::Parse {
                line: ln,
                msg: "bad value".into(),
            })?;
            if r == 0 || c == 0 || r > dims[0] || c > dims[1] {
                return Err(SparseError::OutOfBounds {
                    row: r,
                    col: c,
                    nrows: dims[0],
                    ncols: dims[1],
                });
            }
            coo.push(r - 1, c - 1, v);
        }
        Ok(coo.to_csr())
    }
}

/// C = A * B, used only on small operator compositions.
pub fn spmm(a: &CsrMatrix, b: &CsrMatrix) -> CsrMatrix {
    assert_eq!(a.ncols, b.nrows);
    let mut coo = CooMatrix::new(a.nrows, b.ncols);
    for r in 0..a.nrows {
        for (k, av) in a.row(r) {
            for (c, bv) in b.row(k) {
                coo.push(r, c, av * bv);
            }
        }
    }
    coo.to_csr()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        let mut coo = CooMatrix::new(3, 3);
        coo.push(0, 0, 2.0);
        coo.push(0, 2, 1.0);
        coo.push(1, 1, 3.0);
        coo.push(2, 0, 1.0);
        coo.push(2, 2, 4.0);
        coo.push(2, 2, 0.5); // duplicate accumulates
        coo.to_csr()
    }

    #[test]
    fn duplicates_accumulate_and_rows_sort() {
        let m = sample();
        assert_eq!(m.nnz(), 5);
        assert_eq!(m.get(2, 2), 4.5);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn mat_vec_matches_dense() {
        let m = sample();
        let d = m.to_dense();
        let x = vec![1.0, -2.0, 0.5];
        let y = m.mul_vec_owned(&x);
        let yd = d * nalgebra::DVector::from_vec(x);
        for i in 0..3 {
            assert!((y[i] - yd[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn asymmetry_detects_and_clears() {
        let m = sample();
        assert!(m.asymmetry() < 1e-15); // sample is symmetric
        let mut coo = CooMatrix::new(2, 2);
        coo.push(0, 1, 1.0);
        let n = coo.to_csr();
        assert_eq!(n.asymmetry(), 1.0);
    }

    #[test]
    fn matrix_market_round_trip() {
        let m = sample();
        let dir = std::env::temp_dir().join("emi_sparse_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("sample.mtx");
        m.write_matrix_market(&path).unwrap();
        let back = CsrMatrix::read_matrix_market(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn spmm_matches_dense() {
        let m = sample();
        let p = spmm(&m, &m.transpose());
        let d = m.to_dense() * m.to_dense().transpose();
        for r in 0..3 {
            for c in 0..3 {
                assert!((p.get(r, c) - d[(r, c)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn empty_rows_are_preserved() {
        let mut coo = CooMatrix::new(4, 4);
        coo.push(0, 0, 1.0);
        coo.push(3, 3, 2.0);
        let m = coo.to_csr();
        assert_eq!(m.row_ptr, vec![0, 1, 1, 1, 2]);
        assert_eq!(m.mul_vec_owned(&[1.0, 1.0, 1.0, 1.0]), vec![1.0, 0.0, 0.0, 2.0]);
    }
}
