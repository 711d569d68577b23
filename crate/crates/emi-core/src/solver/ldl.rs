//! Up-looking sparse LDL^T factorisation.
//!
//! Row k of L is found from the sparse triangular solve L(0:k,0:k) y =
//! A(0:k,k); the nonzero pattern of y is read off the elimination tree, so
//! symbolic and numeric work are both proportional to the fill. Positive
//! definite inputs fail on a non-positive pivot; quasi-definite inputs
//! (saddle systems with rows of known sign) clamp tiny pivots to a signed
//! threshold instead, to be cleaned up by iterative refinement.

use super::sparse::CsrMatrix;

#[derive(Debug, thiserror::Error)]
pub enum LdlError {
    #[error("matrix is not positive definite: pivot {value:.3e} at row {index}")]
    NonPositivePivot { index: usize, value: f64 },
    #[error("factorisation requires a square matrix, got {nrows} x {ncols}")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("ordering length {got} does not match matrix dimension {expected}")]
    BadOrdering { expected: usize, got: usize },
}

pub struct LdlFactor {
    n: usize,
    /// order[k] = original index of the k-th pivot
    order: Vec<usize>,
    /// newidx[original] = pivot position
    newidx: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

enum PivotRule<'a> {
    SymmetricPositiveDefinite,
    QuasiDefinite { negative: &'a [bool], delta: f64 },
}

/// Upper triangle of the permuted matrix in column-compressed form.
struct UpperCsc {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

fn permuted_upper(a: &CsrMatrix, newidx: &[usize]) -> UpperCsc {
    let n = a.nrows;
    let mut counts = vec![0usize; n];
    for (r, c, _) in a.triplets() {
        let (nr, nc) = (newidx[r], newidx[c]);
        if nr <= nc {
            counts[nc] += 1;
        }
    }
    let mut col_ptr = vec![0usize; n + 1];
    for c in 0..n {
        col_ptr[c + 1] = col_ptr[c] + counts[c];
    }
    let mut row_idx = vec![0usize; col_ptr[n]];
    let mut values = vec![0.0; col_ptr[n]];
    let mut next = col_ptr.clone();
    for (r, c, v) in a.triplets() {
        let (nr, nc) = (newidx[r], newidx[c]);
        if nr <= nc {
            row_idx[next[nc]] = nr;
            values[next[nc]] = v;
            next[nc] += 1;
        }
    }
    UpperCsc {
        col_ptr,
        row_idx,
        values,
    }
}

fn factorize(
    a: &CsrMatrix,
    order: Vec<usize>,
    rule: PivotRule,
) -> Result<LdlFactor, LdlError> {
    if a.nrows != a.ncols {
        return Err(LdlError::NotSquare {
            nrows: a.nrows,
            ncols: a.ncols,
        });
    }
    let n = a.nrows;
    if order.len() != n {
        return Err(LdlError::BadOrdering {
            expected: n,
            got: order.len(),
        });
    }
    let mut newidx = vec![0usize; n];
    for (k, &old) in order.iter().enumerate() {
        newidx[old] = k;
    }
    let upper = permuted_upper(a, &newidx);

    // symbolic: elimination tree and per-column counts of L
    let mut parent = vec![usize::MAX; n];
    let mut flag = vec![usize::MAX; n];
    let mut lnz = vec![0usize; n];
    for k in 0..n {
        flag[k] = k;
        for p in upper.col_ptr[k]..upper.col_ptr[k + 1] {
            let mut i = upper.row_idx[p];
            while flag[i] != k {
                if parent[i] == usize::MAX {
                    parent[i] = k;
                }
                lnz[i] += 1;
                flag[i] = k;
                i = parent[i];
            }
        }
    }
    let mut lp = vec![0usize; n + 1];
    for k in 0..n {
        lp[k + 1] = lp[k] + lnz[k];
    }
    let mut li = vec![0usize; lp[n]];
    let mut lx = vec![0.0; lp[n]];
    let mut d = vec![0.0; n];
    let mut used = vec![0usize; n];
    let mut y = vec![0.0; n];
    let mut pattern = vec![0usize; n];
    let mut flag = vec![usize::MAX; n];

    for k in 0..n {
        flag[k] = k;
        let mut top = n;
        d[k] = 0.0;
        for p in upper.col_ptr[k]..upper.col_ptr[k + 1] {
            let entry = upper.row_idx[p];
            if entry == k {
                d[k] += upper.values[p];
                continue;
            }
            y[entry] += upper.values[p];
            let mut len = 0usize;
            let mut i = entry;
            while flag[i] != k {
                pattern[len] = i;
                len += 1;
                flag[i] = k;
                i = parent[i];
            }
            while len > 0 {
                len -= 1;
                top -= 1;
                pattern[top] = pattern[len];
            }
        }
        for &i in &pattern[top..n] {
            let yi = y[i];
            y[i] = 0.0;
            let stop = lp[i] + used[i];
            for q in lp[i]..stop {
                y[li[q]] -= lx[q] * yi;
            }
            let l_ki = yi / d[i];
            d[k] -= l_ki * yi;
            li[stop] = k;
            lx[stop] = l_ki;
            used[i] += 1;
        }
        match rule {
            PivotRule::SymmetricPositiveDefinite => {
                if d[k] <= 0.0 {
                    return Err(LdlError::NonPositivePivot {
                        index: order[k],
                        value: d[k],
                    });
                }
            }
            PivotRule::QuasiDefinite { negative, delta } => {
                if negative[order[k]] {
                    if d[k] > -delta {
                        d[k] = -delta;
                    }
                } else if d[k] < delta {
                    d[k] = delta;
                }
            }
        }
    }
    Ok(LdlFactor {
        n,
        order,
        newidx,
        lp,
        li,
        lx,
        d,
    })
}

impl LdlFactor {
    pub fn new_spd(a: &CsrMatrix, order: Vec<usize>) -> Result<Self, LdlError> {
        factorize(a, order, PivotRule::SymmetricPositiveDefinite)
    }

    /// `negative[i]` marks rows whose pivot must come out negative
    /// (multiplier rows of a saddle system).
    pub fn new_quasi_definite(
        a: &CsrMatrix,
        order: Vec<usize>,
        negative: &[bool],
        delta: f64,
    ) -> Result<Self, LdlError> {
        factorize(a, order, PivotRule::QuasiDefinite { negative, delta })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l_nnz(&self) -> usize {
        self.lx.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x: Vec<f64> = self.order.iter().map(|&old| b[old]).collect();
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.lp[j]..self.lp[j + 1] {
                    x[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
        for j in 0..self.n {
            x[j] /= self.d[j];
        }
        for j in (0..self.n).rev() {
            let mut acc = x[j];
            for p in self.lp[j]..self.lp[j + 1] {
                acc -= self.lx[p] * x[self.li[p]];
            }
            x[j] = acc;
        }
        let mut out = vec![0.0; self.n];
        for (old, &k) in self.newidx.iter().enumerate() {
            out[old] = x[k];
        }
        out
    }

    /// Direct solve plus `rounds` of iterative refinement against `a`.
    /// Returns the solution and the final residual norm.
    pub fn solve_refined(&self, a: &CsrMatrix, b: &[f64], rounds: usize) -> (Vec<f64>, f64) {
        let mut x = self.solve(b);
        let mut residual = vec![0.0; self.n];
        for _ in 0..rounds {
            a.mul_vec(&x, &mut residual);
            for (r, bv) in residual.iter_mut().zip(b) {
                *r = bv - *r;
            }
            let dx = self.solve(&residual);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        a.mul_vec(&x, &mut residual);
        let rnorm = residual
            .iter()
            .zip(b)
            .map(|(ri, bi)| (bi - ri) * (bi - ri))
            .sum::<f64>()
            .sqrt();
        (x, rnorm)
    }
}
