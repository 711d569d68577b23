//! Orthonormal modal bases: monomial-derived basis on the reference
//! triangle and Legendre bases on facets.

use crate::quadrature::{monomial_integral, TriangleRule};
use nalgebra::DMatrix;

/// Number of basis functions of a total-degree-k space in 2D.
pub fn space_dim(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// Monomial exponents (a,b) ordered by total degree, then by power of x.
pub fn monomial_exponents(degree: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(space_dim(degree));
    for d in 0..=degree {
        for b in 0..=d {
            out.push((d - b, b));
        }
    }
    out
}

/// L2-orthonormal polynomial basis on the reference triangle.
///
/// Built by Gram-Schmidt applied to monomials. The orthonormalisation is
/// run twice (Cholesky of the Gram matrix, then of the recomputed Gram) so
/// the final mass matrix is the identity to machine precision even at
/// degree 3, where a single pass loses digits to the conditioning of the
/// monomial Gram matrix.
#[derive(Debug, Clone)]
pub struct TriangleBasis {
    pub degree: usize,
    exponents: Vec<(usize, usize)>,
    /// coeff[i][j]: coefficient of monomial j in basis function i.
    coeff: Vec<Vec<f64>>,
}

fn inverse_lower_cholesky(gram: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gram.nrows();
    let chol = gram
        .clone()
        .cholesky()
        .expect("monomial Gram matrix must be positive definite");
    let l = chol.l();
    // Solve L * X = I for X = L^-1 by forward substitution.
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for col in 0..n {
        for row in col..n {
            let mut s = if row == col { 1.0 } else { 0.0 };
            for k in col..row {
                s -= l[(row, k)] * inv[(k, col)];
            }
            inv[(row, col)] = s / l[(row, row)];
        }
    }
    inv
}

impl TriangleBasis {
    pub fn new(degree: usize) -> Self {
        let exps = monomial_exponents(degree);
        let n = exps.len();
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                gram[(i, j)] = monomial_integral(exps[i].0 + exps[j].0, exps[i].1 + exps[j].1);
            }
        }
        let mut c = inverse_lower_cholesky(&gram);

        // Second pass against the numerically recomputed Gram matrix.
        let rule = TriangleRule::for_degree(2 * degree);
        let mut gram2 = DMatrix::<f64>::zeros(n, n);
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            let mono: Vec<f64> = exps
                .iter()
                .map(|&(a, b)| p[0].powi(a as i32) * p[1].powi(b as i32))
                .collect();
            let vals: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| c[(i, j)] * mono[j]).sum())
                .collect();
            for i in 0..n {
                for j in 0..n {
                    gram2[(i, j)] += w * vals[i] * vals[j];
                }
            }
        }
        c = inverse_lower_cholesky(&gram2) * c;

        let coeff = (0..n).map(|i| c.row(i).iter().copied().collect()).collect();
        TriangleBasis {
            degree,
            exponents: exps,
            coeff,
        }
    }

    pub fn len(&self) -> usize {
        self.coeff.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeff.is_empty()
    }

    /// Values of all basis functions at a reference point.
    pub fn eval(&self, xi: f64, eta: f64) -> Vec<f64> {
        let mono: Vec<f64> = self
            .exponents
            .iter()
            .map(|&(a, b)| xi.powi(a as i32) * eta.powi(b as i32))
            .collect();
        self.coeff
            .iter()
            .map(|row| row.iter().zip(&mono).map(|(c, m)| c * m).sum())
            .collect()
    }

    /// Reference gradients (d/dxi, d/deta) of all basis functions.
    pub fn eval_grad(&self, xi: f64, eta: f64) -> Vec<[f64; 2]> {
        let dx: Vec<f64> = self
            .exponents
            .iter()
            .map(|&(a, b)| {
                if a == 0 {
                    0.0
                } else {
                    a as f64 * xi.powi(a as i32 - 1) * eta.powi(b as i32)
                }
            })
            .collect();
        let dy: Vec<f64> = self
            .exponents
            .iter()
            .map(|&(a, b)| {
                if b == 0 {
                    0.0
                } else {
                    b as f64 * xi.powi(a as i32) * eta.powi(b as i32 - 1)
                }
            })
            .collect();
        self.coeff
            .iter()
            .map(|row| {
                let gx = row.iter().zip(&dx).map(|(c, m)| c * m).sum();
                let gy = row.iter().zip(&dy).map(|(c, m)| c * m).sum();
                [gx, gy]
            })
            .collect()
    }
}

/// Orthonormal Legendre basis on [0,1] scaled for a facet of given length:
/// psi_n(t) = sqrt((2n+1)/len) P_n(2t-1), so that the facet mass matrix in
/// the arclength measure is the identity.
#[derive(Debug, Clone)]
pub struct FacetBasis {
    pub degree: usize,
    pub length: f64,
}

impl FacetBasis {
    pub fn new(degree: usize, length: f64) -> Self {
        FacetBasis { degree, length }
    }

    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Values of all facet basis functions at parameter t in [0,1].
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let x = 2.0 * t - 1.0;
        let mut vals = Vec::with_capacity(self.degree + 1);
        let mut p0 = 1.0;
        let mut p1 = x;
        for n in 0..=self.degree {
            let p = match n {
                0 => 1.0,
                1 => x,
                _ => {
                    let nf = n as f64;
                    let p2 = ((2.0 * nf - 1.0) * x * p1 - (nf - 1.0) * p0) / nf;
                    p0 = p1;
                    p1 = p2;
                    p2
                }
            };
            vals.push(((2 * n + 1) as f64 / self.length).sqrt() * p);
        }
        vals
    }
}
