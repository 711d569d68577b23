//! Interface lifting and the discrete interface solution operator.
//!
//! `lift_interface` extends a membrane trace function into the adjacent
//! intracellular elements by constant extension along the affine-projected
//! normal direction of the reference element, giving a broken field whose
//! membrane jump reproduces the trace exactly and which vanishes on the
//! extracellular subdomain. `ConstrainedSubspaceSolver` factorizes the
//! stiffness operator restricted to the jump-free subspace with a zero
//! extracellular mean, which yields the interface solution operator: the
//! lift plus the constrained correction. `reduced_step_equivalence` runs one
//! implicit step through both the full saddle system and the
//! interface-reduced system and reports how far the two jumps drift apart.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::forms::{self, BoundaryCondition, CoefficientSet, FormsError};
use crate::solver::ordering::{element_adjacency, nested_dissection};
use crate::solver::{element_block_order_bordered, spmm, CooMatrix, CsrMatrix, LdlError, LdlFactor};
use crate::space::{DgSpace, FieldVector, InterfaceSpace, SpaceError};

#[derive(Debug, Error)]
pub enum LiftingError {
    #[error("membrane facet {0} has no intracellular-side element")]
    NoIntracellularSide(usize),
    #[error("interface vector length {got} does not match interface dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("an element touches more than one membrane facet; the merge construction needs facet-disjoint elements")]
    OverlappingConstraints,
    #[error("the reduced interface system is singular")]
    SingularReducedSystem,
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Forms(#[from] FormsError),
    #[error(transparent)]
    Factorization(#[from] LdlError),
}

/// Coefficients of a function in the membrane trace space, ordered like the
/// interface slots with the per-facet modal layout of `InterfaceSpace`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceFunction(pub Vec<f64>);

impl InterfaceFunction {
    pub fn zeros(iface: &InterfaceSpace) -> Self {
        InterfaceFunction(vec![0.0; iface.dim()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn check(&self, iface: &InterfaceSpace) -> Result<(), LiftingError> {
        if self.len() != iface.dim() {
            return Err(LiftingError::DimensionMismatch {
                expected: iface.dim(),
                got: self.len(),
            });
        }
        Ok(())
    }
}

/// Intracellular carrier element of a membrane facet and the sign that makes
/// the stored jump of the lifted field equal the trace function.
fn carrier(space: &DgSpace, facet: usize) -> Result<(usize, f64), LiftingError> {
    let fc = &space.mesh.facets[facet];
    let (i, _j) = fc
        .class
        .membrane_pair()
        .ok_or(LiftingError::NoIntracellularSide(facet))?;
    let e_out = fc
        .elem_out
        .ok_or(LiftingError::NoIntracellularSide(facet))?;
    let (elem, sign) = if i == 0 {
        (e_out, -1.0)
    } else {
        (fc.elem_in, 1.0)
    };
    if space.mesh.labels[elem] == 0 {
        return Err(LiftingError::NoIntracellularSide(facet));
    }
    Ok((elem, sign))
}

/// Extend a membrane trace function into the intracellular elements touching
/// the membrane: on each carrier element the value at a point is the trace
/// value at the orthogonal projection of the reference coordinates onto the
/// reference edge of the facet. The result has membrane jump equal to the
/// input and vanishes identically on the extracellular subdomain.
pub fn lift_interface(
    space: &DgSpace,
    iface: &InterfaceSpace,
    g: &InterfaceFunction,
) -> Result<FieldVector, LiftingError> {
    g.check(iface)?;
    let mut out = space.zero_field();
    let nloc = space.n_local();
    let tab = &space.operator_tab;
    for slot in 0..iface.facets.len() {
        let f = iface.facets[slot];
        let (elem, sign) = carrier(space, f)?;
        let modal = &g.0[iface.slot_dofs(slot)];
        if modal.iter().all(|&c| c == 0.0) {
            continue;
        }
        let map = space.map(elem);
        let (p0, p1) = space.mesh.facet_endpoints(f);
        let r0 = map.to_reference(p0);
        let r1 = map.to_reference(p1);
        let d = [r1[0] - r0[0], r1[1] - r0[1]];
        let dd = d[0] * d[0] + d[1] * d[1];
        let basis = iface.basis(slot);
        let base = elem * nloc;
        for (q, &w) in tab.rule.weights.iter().enumerate() {
            let xi = tab.rule.points[q];
            let s = ((xi[0] - r0[0]) * d[0] + (xi[1] - r0[1]) * d[1]) / dd;
            let psi = basis.eval(s);
            let value: f64 = psi.iter().zip(modal).map(|(p, c)| p * c).sum();
            let scaled = sign * value * w;
            for a in 0..nloc {
                out.0[base + a] += scaled * tab.values[q][a];
            }
        }
    }
    Ok(out)
}

/// Orthonormal basis of the null space of `c` via a full Householder QR of
/// its transpose; the basis columns satisfy `c * n = 0` to roundoff.
fn null_space_basis(c: &DMatrix<f64>) -> DMatrix<f64> {
    let ct = c.transpose();
    let (n, r) = ct.shape();
    let mut a = ct;
    let mut reflectors: Vec<DVector<f64>> = Vec::with_capacity(r);
    for j in 0..r {
        let mut v = DVector::zeros(n);
        let norm: f64 = (j..n).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt();
        if norm > 0.0 {
            let alpha = if a[(j, j)] >= 0.0 { -norm } else { norm };
            v[j] = a[(j, j)] - alpha;
            for i in j + 1..n {
                v[i] = a[(i, j)];
            }
            let vv = v.dot(&v);
            if vv > 0.0 {
                for col in j..r {
                    let mut proj = 0.0;
                    for i in j..n {
                        proj += v[i] * a[(i, col)];
                    }
                    let scale = 2.0 * proj / vv;
                    for i in j..n {
                        a[(i, col)] -= scale * v[i];
                    }
                }
            }
        }
        reflectors.push(v);
    }
    let mut null = DMatrix::zeros(n, n - r);
    for (k, idx) in (r..n).enumerate() {
        let mut q = DVector::zeros(n);
        q[idx] = 1.0;
        for v in reflectors.iter().rev() {
            let vv = v.dot(v);
            if vv > 0.0 {
                let scale = 2.0 * v.dot(&q) / vv;
                q.axpy(-scale, v, 1.0);
            }
        }
        null.set_column(k, &q);
    }
    null
}

/// Factorized stiffness operator on the subspace of broken fields with zero
/// membrane jumps, bordered by the zero extracellular mean constraint.
///
/// The subspace is realized by a sparse merge matrix: elements away from the
/// membrane keep their identity columns while each membrane facet merges the
/// two adjacent elements through an orthonormal basis of the jump
/// constraint's null space. Solves are exact up to iterative refinement of
/// the bordered factorization.
pub struct ConstrainedSubspaceSolver {
    stiffness: CsrMatrix,
    merge: CsrMatrix,
    merge_t: CsrMatrix,
    bordered: CsrMatrix,
    factor: LdlFactor,
    reduced_dim: usize,
}

impl ConstrainedSubspaceSolver {
    pub fn new(
        space: &DgSpace,
        iface: &InterfaceSpace,
        stiffness: &CsrMatrix,
    ) -> Result<Self, LiftingError> {
        let n = space.dim();
        let nloc = space.n_local();
        let n_modes = iface.n_modes();
        let n_elems = space.mesh.n_elements();

        let mut slot_of_elem: Vec<Option<usize>> = vec![None; n_elems];
        for slot in 0..iface.facets.len() {
            let fc = &space.mesh.facets[iface.facets[slot]];
            let e_out = fc
                .elem_out
                .ok_or(LiftingError::NoIntracellularSide(iface.facets[slot]))?;
            for e in [fc.elem_in, e_out] {
                if slot_of_elem[e].is_some() {
                    return Err(LiftingError::OverlappingConstraints);
                }
                slot_of_elem[e] = Some(slot);
            }
        }

        let jump = forms::jump_operator(space, iface);
        let merged_width = 2 * nloc - n_modes;
        let mut col_of_free_elem: Vec<Option<usize>> = vec![None; n_elems];
        let mut col_of_slot: Vec<usize> = vec![usize::MAX; iface.facets.len()];
        let mut next_col = 0usize;
        for e in 0..n_elems {
            match slot_of_elem[e] {
                None => {
                    col_of_free_elem[e] = Some(next_col);
                    next_col += nloc;
                }
                Some(slot) => {
                    if col_of_slot[slot] == usize::MAX {
                        col_of_slot[slot] = next_col;
                        next_col += merged_width;
                    }
                }
            }
        }
        let reduced_dim = next_col;

        let mut merge_coo = CooMatrix::new(n, reduced_dim);
        for e in 0..n_elems {
            if let Some(col0) = col_of_free_elem[e] {
                for a in 0..nloc {
                    merge_coo.push(e * nloc + a, col0 + a, 1.0);
                }
            }
        }
        for slot in 0..iface.facets.len() {
            let fc = &space.mesh.facets[iface.facets[slot]];
            let e_in = fc.elem_in;
            let e_out = fc.elem_out.expect("membrane facet has two elements");
            let d_in = space.element_dofs(e_in);
            let d_out = space.element_dofs(e_out);
            let mut c = DMatrix::zeros(n_modes, 2 * nloc);
            for (m, row) in iface.slot_dofs(slot).enumerate() {
                for (col, v) in jump.row(row) {
                    if d_in.contains(&col) {
                        c[(m, col - d_in.start)] = v;
                    } else if d_out.contains(&col) {
                        c[(m, nloc + (col - d_out.start))] = v;
                    }
                }
            }
            let null = null_space_basis(&c);
            let col0 = col_of_slot[slot];
            for k in 0..merged_width {
                for a in 0..nloc {
                    merge_coo.push(d_in.start + a, col0 + k, null[(a, k)]);
                    merge_coo.push(d_out.start + a, col0 + k, null[(nloc + a, k)]);
                }
            }
        }
        let merge = merge_coo.to_csr();
        let merge_t = merge.transpose();

        let reduced = spmm(&merge_t, &spmm(stiffness, &merge));
        let mean = forms::mean_constraint_vector(space);
        let border = merge_t.mul_vec_owned(mean.as_slice());
        let mut bordered_coo = CooMatrix::new(reduced_dim + 1, reduced_dim + 1);
        bordered_coo.add_matrix(&reduced, 1.0);
        for (i, &v) in border.iter().enumerate() {
            bordered_coo.push(i, reduced_dim, v);
            bordered_coo.push(reduced_dim, i, v);
        }
        let bordered = bordered_coo.to_csr();

        let adj = element_adjacency(&space.mesh);
        let coords: Vec<[f64; 2]> = (0..n_elems).map(|e| space.mesh.element_centroid(e)).collect();
        let elem_order = nested_dissection(&adj, &coords);
        let mut order = Vec::with_capacity(reduced_dim + 1);
        let mut slot_emitted = vec![false; iface.facets.len()];
        for &e in &elem_order {
            match slot_of_elem[e] {
                None => {
                    let col0 = col_of_free_elem[e].expect("free element has columns");
                    order.extend(col0..col0 + nloc);
                }
                Some(slot) => {
                    if !slot_emitted[slot] {
                        slot_emitted[slot] = true;
                        let col0 = col_of_slot[slot];
                        order.extend(col0..col0 + merged_width);
                    }
                }
            }
        }
        order.push(reduced_dim);

        let mut negative = vec![false; reduced_dim + 1];
        negative[reduced_dim] = true;
        let delta = 1e-12 * bordered.max_abs().max(1e-300);
        let factor = LdlFactor::new_quasi_definite(&bordered, order, &negative, delta)?;

        Ok(ConstrainedSubspaceSolver {
            stiffness: stiffness.clone(),
            merge,
            merge_t,
            bordered,
            factor,
            reduced_dim,
        })
    }

    /// Solve the bordered subspace problem against a full-space functional
    /// and return the solution as a full-space field with zero jumps and
    /// zero extracellular mean.
    pub fn solve_in_subspace(&self, rhs: &[f64]) -> FieldVector {
        let reduced_rhs = self.merge_t.mul_vec_owned(rhs);
        let mut b = reduced_rhs;
        b.push(0.0);
        let (x, _res) = self.factor.solve_refined(&self.bordered, &b, 2);
        FieldVector(self.merge.mul_vec_owned(&x[..self.reduced_dim]))
    }

    /// Jump-free correction: the subspace field whose stiffness pairing with
    /// every jump-free test function matches the load minus the lifted
    /// contribution.
    pub fn solve_tilde(
        &self,
        space: &DgSpace,
        iface: &InterfaceSpace,
        load: &FieldVector,
        g: &InterfaceFunction,
    ) -> Result<FieldVector, LiftingError> {
        let lifted = lift_interface(space, iface, g)?;
        let a_lift = self.stiffness.mul_vec_owned(lifted.as_slice());
        let rhs: Vec<f64> = load
            .as_slice()
            .iter()
            .zip(&a_lift)
            .map(|(l, al)| l - al)
            .collect();
        Ok(self.solve_in_subspace(&rhs))
    }

    /// Interface solution operator: the lift plus the jump-free correction.
    /// The result has membrane jump `g`, zero extracellular mean, and its
    /// stiffness pairing with every jump-free test function matches the load.
    pub fn solve_s(
        &self,
        space: &DgSpace,
        iface: &InterfaceSpace,
        load: &FieldVector,
        g: &InterfaceFunction,
    ) -> Result<FieldVector, LiftingError> {
        let mut out = self.solve_tilde(space, iface, load, g)?;
        let lifted = lift_interface(space, iface, g)?;
        for (o, l) in out.0.iter_mut().zip(lifted.as_slice()) {
            *o += l;
        }
        Ok(out)
    }

    /// Random jump-free test field, used by the residual checks.
    pub fn random_test_field(&self, coeffs: &[f64]) -> FieldVector {
        assert_eq!(coeffs.len(), self.reduced_dim);
        FieldVector(self.merge.mul_vec_owned(coeffs))
    }

    pub fn reduced_dim(&self) -> usize {
        self.reduced_dim
    }
}

/// Run one implicit Euler step of the membrane-coupled problem with a linear
/// membrane current twice: once through the full bordered system and once
/// through the interface-reduced system solved with the lifting operators.
/// Returns the membrane L2 distance between the two resulting jumps.
pub fn reduced_step_equivalence(
    space: &DgSpace,
    iface: &InterfaceSpace,
    coeff: &CoefficientSet,
    load: &FieldVector,
    linear_rate: f64,
    u_hat_prev: &InterfaceFunction,
    tau: f64,
) -> Result<f64, LiftingError> {
    u_hat_prev.check(iface)?;
    let n = space.dim();
    let nh = iface.dim();
    let stiffness = forms::assemble_stiffness(space, coeff, BoundaryCondition::NeumannZeroMean)?;
    let jump = forms::jump_operator(space, iface);
    let jump_t = jump.transpose();
    let cap = forms::capacitance_diagonal(iface, coeff);
    let mean = forms::mean_constraint_vector(space);

    // Full route: bordered capacitance + stiffness system with the membrane
    // current of the previous jump on the right-hand side.
    let membrane_mass = forms::assemble_membrane_mass(space, coeff)?;
    let mut coo = CooMatrix::new(n + 1, n + 1);
    coo.add_matrix(&stiffness, 1.0);
    coo.add_matrix(&membrane_mass, 1.0 / tau);
    for (i, &v) in mean.as_slice().iter().enumerate() {
        coo.push(i, n, v);
        coo.push(n, i, v);
    }
    let full = coo.to_csr();
    let lag: Vec<f64> = (0..nh)
        .map(|m| (cap[m] / tau - linear_rate) * u_hat_prev.0[m])
        .collect();
    let mut rhs = jump_t.mul_vec_owned(&lag);
    for (r, l) in rhs.iter_mut().zip(load.as_slice()) {
        *r += l;
    }
    rhs.push(0.0);
    let order = element_block_order_bordered(&space.mesh, space.n_local());
    let mut negative = vec![false; n + 1];
    negative[n] = true;
    let delta = 1e-12 * full.max_abs().max(1e-300);
    let factor = LdlFactor::new_quasi_definite(&full, order, &negative, delta)?;
    let (x, _res) = factor.solve_refined(&full, &rhs, 2);
    let jump_full = jump.mul_vec_owned(&x[..n]);

    // Reduced route: eliminate the interior through the interface solution
    // operator and step the membrane system alone.
    let sub = ConstrainedSubspaceSolver::new(space, iface, &stiffness)?;
    let zero_load = space.zero_field();
    let mut lifts: Vec<FieldVector> = Vec::with_capacity(nh);
    for m in 0..nh {
        let mut e = InterfaceFunction(vec![0.0; nh]);
        e.0[m] = 1.0;
        lifts.push(lift_interface(space, iface, &e)?);
    }
    let u_load = sub.solve_in_subspace(load.as_slice());
    let a_u_load = stiffness.mul_vec_owned(u_load.as_slice());
    let load_residual: Vec<f64> = load
        .as_slice()
        .iter()
        .zip(&a_u_load)
        .map(|(l, au)| l - au)
        .collect();

    let mut sys = DMatrix::zeros(nh, nh);
    for col in 0..nh {
        let mut e = InterfaceFunction(vec![0.0; nh]);
        e.0[col] = 1.0;
        let s_col = sub.solve_s(space, iface, &zero_load, &e)?;
        let a_s = stiffness.mul_vec_owned(s_col.as_slice());
        for row in 0..nh {
            let pairing: f64 = lifts[row]
                .as_slice()
                .iter()
                .zip(&a_s)
                .map(|(l, v)| l * v)
                .sum();
            sys[(row, col)] = pairing;
        }
        sys[(col, col)] += cap[col] / tau;
    }
    let mut reduced_rhs = DVector::zeros(nh);
    for row in 0..nh {
        let pairing: f64 = lifts[row]
            .as_slice()
            .iter()
            .zip(&load_residual)
            .map(|(l, v)| l * v)
            .sum();
        reduced_rhs[row] = lag[row] + pairing;
    }
    let u_hat_next = sys
        .lu()
        .solve(&reduced_rhs)
        .ok_or(LiftingError::SingularReducedSystem)?;
    let reconstructed = sub.solve_s(
        space,
        iface,
        load,
        &InterfaceFunction(u_hat_next.iter().copied().collect()),
    )?;
    let jump_reduced = jump.mul_vec_owned(reconstructed.as_slice());

    let discrepancy: f64 = jump_full
        .iter()
        .zip(&jump_reduced)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(discrepancy)
}
