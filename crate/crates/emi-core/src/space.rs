//! Broken polynomial spaces on a labelled triangulation.
//!
//! `DgSpace` carries the element-local orthonormal basis together with the
//! affine maps of every element, so element mass matrices are `det(J) * I`
//! and projections never require a linear solve. `InterfaceSpace` is the
//! trace space on the membrane skeleton: one orthonormal Legendre line
//! basis per membrane facet, with a nodal representation at Gauss points
//! used by the membrane dynamics.

use crate::basis::{FacetBasis, TriangleBasis};
use crate::mesh::{Mesh, MeshError};
use crate::quadrature::{LineRule, TriangleRule};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum SpaceError {
    #[error("facet {0} is not a membrane facet")]
    NotMembrane(usize),
    #[error("vector length {got} does not match space dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Coefficient vector over a `DgSpace` (element-major, orthonormal modes).
#[derive(Clone, Debug, PartialEq)]
pub struct FieldVector(pub Vec<f64>);

impl FieldVector {
    pub fn zeros(n: usize) -> Self {
        FieldVector(vec![0.0; n])
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
}

impl std::ops::Index<usize> for FieldVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for FieldVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[derive(Clone, Debug)]
pub struct AffineMap {
    pub origin: [f64; 2],
    pub jac: [[f64; 2]; 2],
    pub inv_jac: [[f64; 2]; 2],
    pub det: f64,
}

impl AffineMap {
    fn new(v0: [f64; 2], v1: [f64; 2], v2: [f64; 2]) -> Self {
        let jac = [
            [v1[0] - v0[0], v2[0] - v0[0]],
            [v1[1] - v0[1], v2[1] - v0[1]],
        ];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let inv_jac = [
            [jac[1][1] / det, -jac[0][1] / det],
            [-jac[1][0] / det, jac[0][0] / det],
        ];
        AffineMap {
            origin: v0,
            jac,
            inv_jac,
            det,
        }
    }

    pub fn to_physical(&self, xi: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + self.jac[0][0] * xi[0] + self.jac[0][1] * xi[1],
            self.origin[1] + self.jac[1][0] * xi[0] + self.jac[1][1] * xi[1],
        ]
    }

    pub fn to_reference(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        [
            self.inv_jac[0][0] * d[0] + self.inv_jac[0][1] * d[1],
            self.inv_jac[1][0] * d[0] + self.inv_jac[1][1] * d[1],
        ]
    }

    /// Push a reference gradient to a physical gradient (J^{-T} g).
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_jac[0][0] * g[0] + self.inv_jac[1][0] * g[1],
            self.inv_jac[0][1] * g[0] + self.inv_jac[1][1] * g[1],
        ]
    }
}

/// Basis values and reference gradients tabulated at a triangle rule.
pub struct VolumeTabulation {
    pub rule: TriangleRule,
    pub values: Vec<Vec<f64>>,
    pub ref_grads: Vec<Vec<[f64; 2]>>,
}

fn tabulate(basis: &TriangleBasis, rule: TriangleRule) -> VolumeTabulation {
    let mut values = Vec::with_capacity(rule.points.len());
    let mut ref_grads = Vec::with_capacity(rule.points.len());
    for p in &rule.points {
        values.push(basis.eval(p[0], p[1]));
        ref_grads.push(basis.eval_grad(p[0], p[1]));
    }
    VolumeTabulation {
        rule,
        values,
        ref_grads,
    }
}

/// Basis values and physical gradients of one element along a facet.
pub struct FacetTrace {
    pub values: Vec<Vec<f64>>,
    pub grads: Vec<Vec<[f64; 2]>>,
}

pub struct DgSpace {
    pub mesh: Arc<Mesh>,
    pub degree: usize,
    pub basis: TriangleBasis,
    maps: Vec<AffineMap>,
    /// exact for products of two basis functions and their gradients
    pub operator_tab: VolumeTabulation,
    /// elevated rule for loads, projections and error norms
    pub data_tab: VolumeTabulation,
}

impl DgSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize) -> Self {
        assert!(
            (1..=6).contains(&degree),
            "polynomial degree must lie in 1..=6"
        );
        let basis = TriangleBasis::new(degree);
        let maps = (0..mesh.n_elements())
            .map(|e| {
                let [a, b, c] = mesh.element_vertices(e);
                AffineMap::new(a, b, c)
            })
            .collect();
        let operator_tab = tabulate(&basis, TriangleRule::for_degree(2 * degree + 2));
        let data_tab = tabulate(&basis, TriangleRule::for_degree(2 * degree + 4));
        DgSpace {
            mesh,
            degree,
            basis,
            maps,
            operator_tab,
            data_tab,
        }
    }

    pub fn n_local(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.mesh.n_elements() * self.n_local()
    }

    pub fn element_dofs(&self, e: usize) -> std::ops::Range<usize> {
        let n = self.n_local();
        e * n..(e + 1) * n
    }

    pub fn map(&self, e: usize) -> &AffineMap {
        &self.maps[e]
    }

    pub fn check(&self, v: &FieldVector) -> Result<(), SpaceError> {
        if v.len() != self.dim() {
            return Err(SpaceError::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    pub fn zero_field(&self) -> FieldVector {
        FieldVector::zeros(self.dim())
    }

    /// Value of the broken field inside element `e` at reference point `xi`.
    pub fn eval_ref(&self, field: &FieldVector, e: usize, xi: [f64; 2]) -> f64 {
        let vals = self.basis.eval(xi[0], xi[1]);
        let dofs = self.element_dofs(e);
        field.0[dofs]
            .iter()
            .zip(&vals)
            .map(|(c, v)| c * v)
            .sum()
    }

    pub fn eval_grad_ref(&self, field: &FieldVector, e: usize, xi: [f64; 2]) -> [f64; 2] {
        let grads = self.basis.eval_grad(xi[0], xi[1]);
        let dofs = self.element_dofs(e);
        let mut g = [0.0, 0.0];
        for (c, gr) in field.0[dofs].iter().zip(&grads) {
            g[0] += c * gr[0];
            g[1] += c * gr[1];
        }
        self.maps[e].push_gradient(g)
    }

    /// L2 projection of `f(label, x)` onto the broken space.
    pub fn project(&self, f: impl Fn(u32, [f64; 2]) -> f64) -> FieldVector {
        let mut out = FieldVector::zeros(self.dim());
        let tab = &self.data_tab;
        let nloc = self.n_local();
        for e in 0..self.mesh.n_elements() {
            let map = &self.maps[e];
            let label = self.mesh.labels[e];
            let base = e * nloc;
            for (q, w) in tab.rule.weights.iter().enumerate() {
                let x = map.to_physical(tab.rule.points[q]);
                let fv = f(label, x);
                for a in 0..nloc {
                    out.0[base + a] += w * fv * tab.values[q][a];
                }
            }
        }
        out
    }

    /// L2 norm over the whole domain; exact because element mass is det*I.
    pub fn l2_norm(&self, field: &FieldVector) -> f64 {
        let mut acc = 0.0;
        for e in 0..self.mesh.n_elements() {
            let det = self.maps[e].det;
            for a in self.element_dofs(e) {
                acc += det * field.0[a] * field.0[a];
            }
        }
        acc.sqrt()
    }

    /// Tabulate one element's basis along a facet parametrised by `t in [0,1]`
    /// running from the facet's first stored vertex to its second.
    pub fn trace_on_facet(&self, e: usize, facet: usize, rule: &LineRule) -> FacetTrace {
        let (p0, p1) = self.mesh.facet_endpoints(facet);
        let map = &self.maps[e];
        let mut values = Vec::with_capacity(rule.points.len());
        let mut grads = Vec::with_capacity(rule.points.len());
        for &t in &rule.points {
            let x = [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])];
            let xi = map.to_reference(x);
            values.push(self.basis.eval(xi[0], xi[1]));
            grads.push(
                self.basis
                    .eval_grad(xi[0], xi[1])
                    .into_iter()
                    .map(|g| map.push_gradient(g))
                    .collect(),
            );
        }
        FacetTrace { values, grads }
    }
}

/// Trace space on the membrane skeleton: per-facet orthonormal line modes.
pub struct InterfaceSpace {
    pub mesh: Arc<Mesh>,
    pub degree: usize,
    /// membrane facet ids in ascending order
    pub facets: Vec<usize>,
    slot_by_facet: Vec<Option<usize>>,
    bases: Vec<FacetBasis>,
    /// Gauss nodes used as the nodal representation (degree+1 per facet)
    pub nodal_rule: LineRule,
    data_rule: LineRule,
}

impl InterfaceSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize) -> Self {
        let facets: Vec<usize> = mesh.membrane_facets().collect();
        let mut slot_by_facet = vec![None; mesh.facets.len()];
        for (slot, &f) in facets.iter().enumerate() {
            slot_by_facet[f] = Some(slot);
        }
        let bases = facets
            .iter()
            .map(|&f| FacetBasis::new(degree, mesh.facet_length(f)))
            .collect();
        InterfaceSpace {
            mesh,
            degree,
            facets,
            slot_by_facet,
            bases,
            nodal_rule: LineRule::with_points(degree + 1),
            data_rule: LineRule::with_points(12),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.degree + 1
    }

    pub fn dim(&self) -> usize {
        self.facets.len() * self.n_modes()
    }

    pub fn slot(&self, facet: usize) -> Result<usize, SpaceError> {
        self.slot_by_facet
            .get(facet)
            .copied()
            .flatten()
            .ok_or(SpaceError::NotMembrane(facet))
    }

    pub fn slot_dofs(&self, slot: usize) -> std::ops::Range<usize> {
        let m = self.n_modes();
        slot * m..(slot + 1) * m
    }

    pub fn pair(&self, slot: usize) -> (u32, u32) {
        self.mesh.facets[self.facets[slot]]
            .class
            .membrane_pair()
            .expect("interface slots only index membrane facets")
    }

    pub fn basis(&self, slot: usize) -> &FacetBasis {
        &self.bases[slot]
    }

    /// Physical positions of the nodal Gauss points of one facet.
    pub fn nodal_points(&self, slot: usize) -> Vec<[f64; 2]> {
        let (p0, p1) = self.mesh.facet_endpoints(self.facets[slot]);
        self.nodal_rule
            .points
            .iter()
            .map(|&t| [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])])
            .collect()
    }

    /// Evaluate a modal facet function at the nodal points.
    pub fn modal_to_nodal(&self, slot: usize, modal: &[f64]) -> Vec<f64> {
        let basis = &self.bases[slot];
        self.nodal_rule
            .points
            .iter()
            .map(|&t| {
                basis
                    .eval(t)
                    .iter()
                    .zip(modal)
                    .map(|(p, c)| p * c)
                    .sum()
            })
            .collect()
    }

    /// Recover modal coefficients from nodal values (exact for degree <= k).
    pub fn nodal_to_modal(&self, slot: usize, nodal: &[f64]) -> Vec<f64> {
        let basis = &self.bases[slot];
        let len = basis.length;
        let mut modal = vec![0.0; self.n_modes()];
        for (q, &t) in self.nodal_rule.points.iter().enumerate() {
            let w = self.nodal_rule.weights[q] * len;
            let psi = basis.eval(t);
            for (m, p) in psi.iter().enumerate() {
                modal[m] += w * nodal[q] * p;
            }
        }
        modal
    }

    /// L2 projection of `g(pair, x)` onto the interface space.
    pub fn project(&self, g: impl Fn((u32, u32), [f64; 2]) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for slot in 0..self.facets.len() {
            let f = self.facets[slot];
            let (p0, p1) = self.mesh.facet_endpoints(f);
            let len = self.bases[slot].length;
            let pair = self.pair(slot);
            let dofs = self.slot_dofs(slot);
            for (q, &t) in self.data_rule.points.iter().enumerate() {
                let w = self.data_rule.weights[q] * len;
                let x = [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])];
                let gv = g(pair, x);
                let psi = self.bases[slot].eval(t);
                for (m, p) in psi.iter().enumerate() {
                    out[dofs.start + m] += w * gv * p;
                }
            }
        }
        out
    }

    /// Modal coefficients of the jump of a broken field across one membrane
    /// facet, oriented lower label minus higher label.
    pub fn jump_trace(
        &self,
        space: &DgSpace,
        field: &FieldVector,
        facet: usize,
    ) -> Result<Vec<f64>, SpaceError> {
        space.check(field)?;
        let slot = self.slot(facet)?;
        let fct = &self.mesh.facets[facet];
        let e_in = fct.elem_in;
        let e_out = fct.elem_out.ok_or(SpaceError::NotMembrane(facet))?;
        let tr_in = space.trace_on_facet(e_in, facet, &self.nodal_rule);
        let tr_out = space.trace_on_facet(e_out, facet, &self.nodal_rule);
        let d_in = space.element_dofs(e_in);
        let d_out = space.element_dofs(e_out);
        let nodal: Vec<f64> = (0..self.nodal_rule.points.len())
            .map(|q| {
                let v_in: f64 = field.0[d_in.clone()]
                    .iter()
                    .zip(&tr_in.values[q])
                    .map(|(c, v)| c * v)
                    .sum();
                let v_out: f64 = field.0[d_out.clone()]
                    .iter()
                    .zip(&tr_out.values[q])
                    .map(|(c, v)| c * v)
                    .sum();
                v_in - v_out
            })
            .collect();
        Ok(self.nodal_to_modal(slot, &nodal))
    }

    /// L2 norm over the membrane skeleton (modal coefficients, orthonormal).
    pub fn l2_norm(&self, v: &[f64]) -> f64 {
        v.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::GeometrySpec;
    use approx::assert_relative_eq;

    fn plus_space(degree: usize) -> DgSpace {
        let mesh = GeometrySpec::PlusCell { resolution: 1 }.build().unwrap();
        DgSpace::new(Arc::new(mesh), degree)
    }

    #[test]
    fn projection_reproduces_polynomials() {
        for degree in 1..=3 {
            let space = plus_space(degree);
            let f = |_l: u32, x: [f64; 2]| {
                let mut acc = 0.0;
                for d in 0..=degree as i32 {
                    acc += (x[0].powi(d) + 2.0 * x[1].powi(d)) * (d as f64 + 0.5);
                }
                acc
            };
            let field = space.project(f);
            for e in (0..space.mesh.n_elements()).step_by(7) {
                for xi in [[0.2, 0.3], [0.0, 0.0], [0.5, 0.5]] {
                    let x = space.map(e).to_physical(xi);
                    assert_relative_eq!(
                        space.eval_ref(&field, e, xi),
                        f(0, x),
                        epsilon = 1e-11
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_evaluation_matches_analytic() {
        let space = plus_space(2);
        let field = space.project(|_, x| x[0] * x[0] + 3.0 * x[0] * x[1] - x[1]);
        let e = 11;
        let xi = [0.25, 0.4];
        let x = space.map(e).to_physical(xi);
        let g = space.eval_grad_ref(&field, e, xi);
        assert_relative_eq!(g[0], 2.0 * x[0] + 3.0 * x[1], epsilon = 1e-11);
        assert_relative_eq!(g[1], 3.0 * x[0] - 1.0, epsilon = 1e-11);
    }

    #[test]
    fn l2_norm_matches_quadrature_on_smooth_function() {
        let mesh = GeometrySpec::UnitSquare { resolution: 8 }.build().unwrap();
        let space = DgSpace::new(Arc::new(mesh), 3);
        let field = space.project(|_, x| (std::f64::consts::PI * x[0]).sin());
        // ||sin(pi x)||^2 over the unit square is 1/2
        assert_relative_eq!(
            space.l2_norm(&field),
            0.5f64.sqrt(),
            epsilon = 1e-6
        );
    }

    #[test]
    fn projection_error_decays_at_expected_rate() {
        let degree = 2;
        let exact = |x: [f64; 2]| (2.0 * x[0] + x[1]).sin();
        let mut errors = Vec::new();
        for level in 0..3 {
            let mesh = GeometrySpec::UnitSquare {
                resolution: 4 << level,
            }
            .build()
            .unwrap();
            let space = DgSpace::new(Arc::new(mesh), degree);
            let field = space.project(|_, x| exact(x));
            // quadrature-evaluated L2 error against the analytic function
            let tab = &space.data_tab;
            let mut err2 = 0.0;
            for e in 0..space.mesh.n_elements() {
                let map = space.map(e);
                for (q, &w) in tab.rule.weights.iter().enumerate() {
                    let x = map.to_physical(tab.rule.points[q]);
                    let uh: f64 = tab.values[q]
                        .iter()
                        .zip(&field.0[space.element_dofs(e)])
                        .map(|(v, c)| v * c)
                        .sum();
                    err2 += w * map.det * (uh - exact(x)).powi(2);
                }
            }
            errors.push(err2.sqrt());
        }
        let rate01 = (errors[0] / errors[1]).log2();
        let rate12 = (errors[1] / errors[2]).log2();
        assert!((rate01 - 3.0).abs() < 0.2, "rate {rate01}");
        assert!((rate12 - 3.0).abs() < 0.2, "rate {rate12}");
    }

    #[test]
    fn jump_of_extracellular_indicator_is_plus_one() {
        for degree in 1..=2 {
            let space = plus_space(degree);
            let iface = InterfaceSpace::new(space.mesh.clone(), degree);
            let field = space.project(|label, _| if label == 0 { 1.0 } else { 0.0 });
            for &f in &iface.facets {
                let modal = iface.jump_trace(&space, &field, f).unwrap();
                let slot = iface.slot(f).unwrap();
                let nodal = iface.modal_to_nodal(slot, &modal);
                for v in nodal {
                    assert_relative_eq!(v, 1.0, epsilon = 1e-11);
                }
            }
        }
    }

    #[test]
    fn jump_trace_rejects_non_membrane_facets() {
        let space = plus_space(1);
        let iface = InterfaceSpace::new(space.mesh.clone(), 1);
        let field = space.zero_field();
        let non_membrane = (0..space.mesh.facets.len())
            .find(|&f| !space.mesh.facets[f].class.is_membrane())
            .unwrap();
        assert!(matches!(
            iface.jump_trace(&space, &field, non_membrane),
            Err(SpaceError::NotMembrane(_))
        ));
    }

    #[test]
    fn nodal_modal_round_trip_is_identity() {
        let space = plus_space(3);
        let iface = InterfaceSpace::new(space.mesh.clone(), 3);
        let modal = vec![0.7, -1.3, 0.25, 2.0];
        let nodal = iface.modal_to_nodal(0, &modal);
        let back = iface.nodal_to_modal(0, &nodal);
        for (a, b) in modal.iter().zip(&back) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn interface_projection_is_exact_for_linears() {
        let space = plus_space(1);
        let iface = InterfaceSpace::new(space.mesh.clone(), 1);
        let g = |_p: (u32, u32), x: [f64; 2]| 2.0 * x[0] - x[1] + 0.5;
        let coeffs = iface.project(g);
        for slot in 0..iface.facets.len() {
            let pts = iface.nodal_points(slot);
            let nodal = iface.modal_to_nodal(slot, &coeffs[iface.slot_dofs(slot)]);
            for (x, v) in pts.iter().zip(nodal) {
                assert_relative_eq!(v, g((0, 1), *x), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn interface_norm_matches_analytic_constant() {
        // || c ||_{L2(Gamma)} = c * sqrt(|Gamma|); plus-cell membrane length 3
        let space = plus_space(2);
        let iface = InterfaceSpace::new(space.mesh.clone(), 2);
        let coeffs = iface.project(|_, _| 2.0);
        assert_relative_eq!(
            iface.l2_norm(&coeffs),
            2.0 * 3.0f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let space = plus_space(1);
        let bad = FieldVector::zeros(space.dim() + 1);
        assert!(matches!(
            space.check(&bad),
            Err(SpaceError::DimensionMismatch { .. })
        ));
    }
}
