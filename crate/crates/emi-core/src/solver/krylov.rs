//! Matrix-free Krylov solvers.
//!
//! Operators and preconditioners are closures `(input, output)`, so the
//! callers can compose sparse products, factorised solves and diagonal
//! scalings without an operator trait. Conjugate gradients stops on the
//! absolute Euclidean residual; MINRES stops on the residual measured in
//! the preconditioner norm, relative to the right-hand side in that norm.

#[derive(Clone, Debug)]
pub struct IterationStats {
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Preconditioned conjugate gradients with warm start.
/// Terminates when the true residual satisfies `||b - A x||_2 <= tol_abs`.
pub fn pcg(
    apply_a: impl Fn(&[f64], &mut [f64]),
    apply_p: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: &[f64],
    tol_abs: f64,
    max_iter: usize,
) -> (Vec<f64>, IterationStats) {
    let n = b.len();
    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    apply_a(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rnorm = norm(&r);
    if rnorm <= tol_abs {
        return (
            x,
            IterationStats {
                iterations: 0,
                converged: true,
                final_residual: rnorm,
            },
        );
    }
    let mut z = vec![0.0; n];
    apply_p(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    for it in 1..=max_iter {
        apply_a(&p, &mut q);
        let alpha = rz / dot(&p, &q);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        rnorm = norm(&r);
        if rnorm <= tol_abs {
            return (
                x,
                IterationStats {
                    iterations: it,
                    converged: true,
                    final_residual: rnorm,
                },
            );
        }
        apply_p(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (
        x,
        IterationStats {
            iterations: max_iter,
            converged: false,
            final_residual: rnorm,
        },
    )
}

/// Preconditioned MINRES for symmetric (possibly indefinite) systems.
/// The preconditioner application must be symmetric positive definite.
/// Terminates when `||r||_{P} <= tol_rel * ||b||_{P}` where `||v||_P`
/// denotes the norm induced by the preconditioner.
pub fn minres(
    apply_a: impl Fn(&[f64], &mut [f64]),
    apply_p: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: &[f64],
    tol_rel: f64,
    max_iter: usize,
) -> (Vec<f64>, IterationStats) {
    minres_with_log(apply_a, apply_p, b, x0, tol_rel, max_iter, |_, _| {})
}

/// [`minres`] with a per-iteration callback receiving the iteration number
/// and the preconditioned residual norm estimate.
pub fn minres_with_log(
    apply_a: impl Fn(&[f64], &mut [f64]),
    apply_p: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: &[f64],
    tol_rel: f64,
    max_iter: usize,
    mut log: impl FnMut(usize, f64),
) -> (Vec<f64>, IterationStats) {
    let n = b.len();
    let mut x = x0.to_vec();

    let mut zb = vec![0.0; n];
    apply_p(b, &mut zb);
    let bnorm = dot(&zb, b).max(0.0).sqrt();
    if bnorm == 0.0 {
        return (
            vec![0.0; n],
            IterationStats {
                iterations: 0,
                converged: true,
                final_residual: 0.0,
            },
        );
    }

    let mut v_cur = vec![0.0; n];
    apply_a(&x, &mut v_cur);
    for i in 0..n {
        v_cur[i] = b[i] - v_cur[i];
    }
    let mut z_cur = vec![0.0; n];
    apply_p(&v_cur, &mut z_cur);
    let mut gamma_cur = dot(&z_cur, &v_cur).max(0.0).sqrt();
    let mut eta = gamma_cur;
    log(0, eta);
    if eta <= tol_rel * bnorm {
        return (
            x,
            IterationStats {
                iterations: 0,
                converged: true,
                final_residual: eta / bnorm,
            },
        );
    }

    let mut v_prev = vec![0.0; n];
    let mut gamma_prev = 1.0;
    let (mut c_prev, mut c_cur) = (1.0, 1.0);
    let (mut s_prev, mut s_cur) = (0.0, 0.0);
    let mut w_prev = vec![0.0; n];
    let mut w_cur = vec![0.0; n];
    let mut az = vec![0.0; n];
    let mut z_next = vec![0.0; n];

    for it in 1..=max_iter {
        for zi in z_cur.iter_mut() {
            *zi /= gamma_cur;
        }
        apply_a(&z_cur, &mut az);
        let delta = dot(&az, &z_cur);
        let mut v_next = az.clone();
        for i in 0..n {
            v_next[i] -= (delta / gamma_cur) * v_cur[i] + (gamma_cur / gamma_prev) * v_prev[i];
        }
        apply_p(&v_next, &mut z_next);
        let gamma_next = dot(&z_next, &v_next).max(0.0).sqrt();

        let a0 = c_cur * delta - c_prev * s_cur * gamma_cur;
        let a1 = (a0 * a0 + gamma_next * gamma_next).sqrt();
        let a2 = s_cur * delta + c_prev * c_cur * gamma_cur;
        let a3 = s_prev * gamma_cur;
        let c_next = a0 / a1;
        let s_next = gamma_next / a1;

        let mut w_next = vec![0.0; n];
        for i in 0..n {
            w_next[i] = (z_cur[i] - a3 * w_prev[i] - a2 * w_cur[i]) / a1;
        }
        for i in 0..n {
            x[i] += c_next * eta * w_next[i];
        }
        eta = -s_next * eta;
        log(it, eta.abs());

        if eta.abs() <= tol_rel * bnorm {
            return (
                x,
                IterationStats {
                    iterations: it,
                    converged: true,
                    final_residual: eta.abs() / bnorm,
                },
            );
        }

        v_prev = std::mem::replace(&mut v_cur, v_next);
        z_cur = std::mem::take(&mut z_next);
        z_next = vec![0.0; n];
        gamma_prev = std::mem::replace(&mut gamma_cur, gamma_next);
        c_prev = std::mem::replace(&mut c_cur, c_next);
        s_prev = std::mem::replace(&mut s_cur, s_next);
        w_prev = std::mem::replace(&mut w_cur, w_next);
    }
    (
        x,
        IterationStats {
            iterations: max_iter,
            converged: false,
            final_residual: eta.abs() / bnorm,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::ldl::LdlFactor;
    use crate::solver::sparse::{CooMatrix, CsrMatrix};

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut coo = CooMatrix::new(n, n);
        for i in 0..n {
            coo.push(i, i, 2.0);
            if i + 1 < n {
                coo.push(i, i + 1, -1.0);
                coo.push(i + 1, i, -1.0);
            }
        }
        coo.to_csr()
    }

    fn saddle(n: usize) -> CsrMatrix {
        let mut coo = CooMatrix::new(n + 1, n + 1);
        for i in 0..n {
            coo.push(i, i, 2.0 + (i as f64) * 0.3);
            coo.push(i, n, 1.0);
            coo.push(n, i, 1.0);
        }
        coo.to_csr()
    }

    #[test]
    fn cg_solves_laplacian_to_absolute_tolerance() {
        let n = 64;
        let a = laplacian_1d(n);
        let b = vec![1.0; n];
        let (x, stats) = pcg(
            |v, out| a.mul_vec(v, out),
            |v, out| out.copy_from_slice(v),
            &b,
            &vec![0.0; n],
            1e-10,
            10_000,
        );
        assert!(stats.converged);
        let mut r = vec![0.0; n];
        a.mul_vec(&x, &mut r);
        let res: f64 = r
            .iter()
            .zip(&b)
            .map(|(ri, bi)| (bi - ri) * (bi - ri))
            .sum::<f64>()
            .sqrt();
        assert!(res <= 1e-10);
    }

    #[test]
    fn cg_warm_start_with_solution_costs_zero_iterations() {
        let n = 32;
        let a = laplacian_1d(n);
        let b = vec![1.0; n];
        let (x, _) = pcg(
            |v, out| a.mul_vec(v, out),
            |v, out| out.copy_from_slice(v),
            &b,
            &vec![0.0; n],
            1e-12,
            10_000,
        );
        let (_, stats) = pcg(
            |v, out| a.mul_vec(v, out),
            |v, out| out.copy_from_slice(v),
            &b,
            &x,
            1e-10,
            10_000,
        );
        assert_eq!(stats.iterations, 0);
        assert!(stats.converged);
    }

    #[test]
    fn minres_solves_indefinite_saddle_system() {
        let n = 20;
        let a = saddle(n);
        let b: Vec<f64> = (0..=n).map(|i| ((i + 1) as f64).sin()).collect();
        let (x, stats) = minres(
            |v, out| a.mul_vec(v, out),
            |v, out| out.copy_from_slice(v),
            &b,
            &vec![0.0; n + 1],
            1e-12,
            2000,
        );
        assert!(stats.converged, "stats {stats:?}");
        let xd = a
            .to_dense()
            .lu()
            .solve(&nalgebra::DVector::from_vec(b.clone()))
            .unwrap();
        for i in 0..=n {
            assert!((x[i] - xd[i]).abs() < 1e-8, "i={i}");
        }
    }

    #[test]
    fn exact_preconditioner_converges_in_few_iterations() {
        let n = 48;
        let a = laplacian_1d(n);
        let f = LdlFactor::new_spd(&a, (0..n).collect()).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
        let (_, stats) = minres(
            |v, out| a.mul_vec(v, out),
            |v, out| out.copy_from_slice(&f.solve(v)),
            &b,
            &vec![0.0; n],
            1e-12,
            100,
        );
        assert!(stats.converged);
        assert!(stats.iterations <= 2, "took {}", stats.iterations);
    }

    #[test]
    fn minres_zero_rhs_returns_zero() {
        let n = 8;
        let a = laplacian_1d(n);
        let (x, stats) = minres(
            |v, out| a.mul_vec(v, out),
            |v, out| out.copy_from_slice(v),
            &vec![0.0; n],
            &vec![1.0; n],
            1e-12,
            100,
        );
        assert!(stats.converged);
        assert_eq!(stats.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
