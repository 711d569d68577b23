//! Block-diagonal Riesz-map preconditioners for the mean-constrained
//! implicit step, and the MinRes robustness study on elongated geometries.

use std::sync::Arc;

use thiserror::Error;

use crate::forms::{self, BoundaryCondition, CoefficientSet, FormsError};
use crate::mesh::{GeometrySpec, MeshError};
use crate::solver::{
    element_block_order, minres_with_log, CooMatrix, CsrMatrix, IterationStats, LdlError,
    LdlFactor,
};
use crate::space::{DgSpace, InterfaceSpace};

#[derive(Debug, Error)]
pub enum RieszError {
    #[error(transparent)]
    Forms(#[from] FormsError),
    #[error("norm operator is not positive definite: {0}")]
    Indefinite(#[from] LdlError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Norm inducing the leading block of the preconditioner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RieszKind {
    /// Extracellular mass plus broken seminorm plus weighted jump mass.
    Simple,
    /// Mass term scaled by the inverse squared extracellular diameter.
    Poincare,
    /// Diameter scaling combined with the full stiffness form in place of
    /// the broken seminorm.
    PoincareA,
}

impl RieszKind {
    pub fn from_name(name: &str) -> Option<RieszKind> {
        match name {
            "simple" => Some(RieszKind::Simple),
            "poincare" => Some(RieszKind::Poincare),
            "poincare_a" => Some(RieszKind::PoincareA),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RieszKind::Simple => "simple",
            RieszKind::Poincare => "poincare",
            RieszKind::PoincareA => "poincare_a",
        }
    }
}

/// Bordered symmetric system of one implicit step with the extracellular
/// mean kept as an explicit scalar multiplier: leading block
/// stiffness + jump mass over the step size, border the mean functional.
pub struct SaddleSystem {
    pub matrix: CsrMatrix,
    pub n_field: usize,
}

impl SaddleSystem {
    pub fn new(space: &DgSpace, coeff: &CoefficientSet, tau: f64) -> Result<Self, RieszError> {
        let n = space.dim();
        let stiffness =
            forms::assemble_stiffness(space, coeff, BoundaryCondition::NeumannZeroMean)?;
        let membrane_mass = forms::assemble_membrane_mass(space, coeff)?;
        let mean = forms::mean_constraint_vector(space);
        let mut coo = CooMatrix::new(n + 1, n + 1);
        coo.add_matrix(&stiffness, 1.0);
        coo.add_matrix(&membrane_mass, 1.0 / tau);
        for (i, &v) in mean.as_slice().iter().enumerate() {
            coo.push(i, n, v);
            coo.push(n, i, v);
        }
        Ok(SaddleSystem {
            matrix: coo.to_csr(),
            n_field: n,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_field + 1
    }
}

/// Factorized block-diagonal preconditioner: an SPD norm operator on the
/// field block and a positive scalar on the multiplier block.
pub struct RieszPreconditioner {
    factor: LdlFactor,
    q_block: f64,
    n_field: usize,
    pub alpha: f64,
    pub kind: RieszKind,
}

impl RieszPreconditioner {
    pub fn new(
        space: &DgSpace,
        coeff: &CoefficientSet,
        tau: f64,
        kind: RieszKind,
    ) -> Result<Self, RieszError> {
        let n = space.dim();
        let alpha = match kind {
            RieszKind::Simple => 1.0,
            RieszKind::Poincare | RieszKind::PoincareA => {
                1.0 / space.mesh.subdomain_diameter(0)?
            }
        };
        let gradient_block = match kind {
            RieszKind::Simple | RieszKind::Poincare => {
                forms::dg_seminorm_matrix(space, coeff.penalty)
            }
            RieszKind::PoincareA => {
                forms::assemble_stiffness(space, coeff, BoundaryCondition::NeumannZeroMean)?
            }
        };
        let mass_e = forms::extracellular_mass(space);
        let membrane_mass = forms::assemble_membrane_mass(space, coeff)?;
        let mut coo = CooMatrix::new(n, n);
        coo.add_matrix(&mass_e, alpha * alpha);
        coo.add_matrix(&gradient_block, 1.0);
        coo.add_matrix(&membrane_mass, 1.0 / tau);
        let block = coo.to_csr();
        let order = element_block_order(&space.mesh, space.n_local());
        let factor = LdlFactor::new_spd(&block, order)?;
        let q_block = space.mesh.subdomain_area(0) / (alpha * alpha);
        Ok(RieszPreconditioner {
            factor,
            q_block,
            n_field: n,
            alpha,
            kind,
        })
    }

    /// Apply the preconditioner to a bordered residual.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        debug_assert_eq!(r.len(), self.n_field + 1);
        let field = self.factor.solve(&r[..self.n_field]);
        z[..self.n_field].copy_from_slice(&field);
        z[self.n_field] = r[self.n_field] / self.q_block;
    }

    /// Quadratic form of the inverse preconditioner, positive for any
    /// nonzero vector.
    pub fn inverse_quadratic_form(&self, r: &[f64]) -> f64 {
        let mut z = vec![0.0; r.len()];
        self.apply(r, &mut z);
        r.iter().zip(&z).map(|(a, b)| a * b).sum()
    }
}

/// Outcome of one preconditioned MinRes solve of the saddle system.
pub struct SaddleSolve {
    pub field: Vec<f64>,
    pub multiplier: f64,
    pub stats: IterationStats,
    pub residuals: Vec<f64>,
}

/// Run MinRes from a zero start on the bordered system; the tolerance is
/// measured on the preconditioned residual relative to the right-hand side.
pub fn solve_saddle(
    system: &SaddleSystem,
    precond: &RieszPreconditioner,
    rhs: &[f64],
    tol_rel: f64,
    max_iter: usize,
) -> SaddleSolve {
    let mut residuals = Vec::new();
    let (x, stats) = minres_with_log(
        |v, out| system.matrix.mul_vec(v, out),
        |v, out| precond.apply(v, out),
        rhs,
        &vec![0.0; system.dim()],
        tol_rel,
        max_iter,
        |_, r| residuals.push(r),
    );
    let multiplier = x[system.n_field];
    let mut field = x;
    field.truncate(system.n_field);
    SaddleSolve {
        field,
        multiplier,
        stats,
        residuals,
    }
}

/// The two elongated-geometry families of the robustness study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellFamily {
    /// One cell stretched to length `l`.
    Single,
    /// A chain of `l` unit cells coupled through shared membranes.
    Connected,
}

impl CellFamily {
    pub fn from_name(name: &str) -> Option<CellFamily> {
        match name {
            "single" => Some(CellFamily::Single),
            "connected" => Some(CellFamily::Connected),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellFamily::Single => "single",
            CellFamily::Connected => "connected",
        }
    }

    pub fn geometry(self, l: u32, resolution: u32) -> GeometrySpec {
        match self {
            CellFamily::Single => GeometrySpec::ElongatedCell {
                length: l,
                resolution,
            },
            CellFamily::Connected => GeometrySpec::CellChain {
                cells: l,
                resolution,
            },
        }
    }

    pub fn conductivities(self, l: u32) -> Vec<f64> {
        match self {
            CellFamily::Single => vec![1.0, 2.0],
            CellFamily::Connected => {
                let mut kappa = vec![1.0];
                kappa.extend(std::iter::repeat(2.0).take(l as usize));
                kappa
            }
        }
    }
}

/// One row of the robustness table.
#[derive(Debug, Clone, Copy)]
pub struct RobustnessRow {
    pub l: u32,
    pub dofs: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Right-hand side of the first implicit step from rest: every
/// cell-extracellular interface jump sits at the resting potential, the
/// volume sources vanish.
pub fn resting_step_rhs(
    space: &DgSpace,
    iface: &InterfaceSpace,
    coeff: &CoefficientSet,
    tau: f64,
) -> Vec<f64> {
    let jump = iface.project(|(i, _), _| if i == 0 { 85.0 } else { 0.0 });
    let capacitance = forms::capacitance_diagonal(iface, coeff);
    let weighted: Vec<f64> = jump
        .iter()
        .zip(&capacitance)
        .map(|(j, c)| c / tau * j)
        .collect();
    let jump_op = forms::jump_operator(space, iface);
    let mut rhs = jump_op.transpose().mul_vec_owned(&weighted);
    rhs.push(0.0);
    rhs
}

/// Step size used by the published robustness tables; large enough that the
/// stationary part of the operator, where the domain diameter enters,
/// dominates the spectrum.
pub const ROBUSTNESS_TAU: f64 = 100.0;

/// Unit load on every field coefficient with a zero constraint entry, the
/// fixed right-hand side of the iteration-count studies.
pub fn unit_load_rhs(system: &SaddleSystem) -> Vec<f64> {
    let mut rhs = vec![1.0; system.dim()];
    rhs[system.n_field] = 0.0;
    rhs
}

/// MinRes iteration count for one geometry of the robustness study.
pub fn robustness_point(
    family: CellFamily,
    l: u32,
    resolution: u32,
    degree: usize,
    tau: f64,
    kind: RieszKind,
) -> Result<RobustnessRow, RieszError> {
    let mesh = Arc::new(family.geometry(l, resolution).build()?);
    let space = DgSpace::new(mesh, degree);
    let coeff = CoefficientSet::isotropic(&family.conductivities(l));
    let system = SaddleSystem::new(&space, &coeff, tau)?;
    let precond = RieszPreconditioner::new(&space, &coeff, tau, kind)?;
    let rhs = unit_load_rhs(&system);
    let solve = solve_saddle(&system, &precond, &rhs, 1e-12, 10 * system.dim());
    Ok(RobustnessRow {
        l,
        dofs: space.dim(),
        iterations: solve.stats.iterations,
        converged: solve.stats.converged,
    })
}

/// Iteration counts across domain lengths for one family and norm choice.
pub fn robustness_study(
    family: CellFamily,
    ls: &[u32],
    resolution: u32,
    degree: usize,
    tau: f64,
    kind: RieszKind,
) -> Result<Vec<RobustnessRow>, RieszError> {
    ls.iter()
        .map(|&l| robustness_point(family, l, resolution, degree, tau, kind))
        .collect()
}
