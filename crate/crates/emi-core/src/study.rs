//! Mesh-refinement studies for the manufactured cases: run the transient
//! solver on a hierarchy of uniformly refined meshes, evaluate errors at the
//! final time and estimate convergence orders.

use std::sync::Arc;

use thiserror::Error;

use crate::forms::{self, ErrorNorms};
use crate::manufactured::ManufacturedCase;
use crate::membrane::MembraneAssignment;
use crate::mesh::MeshError;
use crate::space::{DgSpace, InterfaceSpace};
use crate::time::{
    Scheme, SolverBackend, TimeError, TimeStepper, TransientProblem, TransientState,
};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Time(#[from] TimeError),
}

/// Errors of one refinement level.
#[derive(Debug, Clone, Copy)]
pub struct LevelResult {
    pub level: u32,
    pub h: f64,
    pub dofs: usize,
    pub norms: ErrorNorms,
}

/// One row of a convergence table; the rates compare against the previous
/// level and are absent on the coarsest one.
#[derive(Debug, Clone, Copy)]
pub struct EocRow {
    pub level: u32,
    pub h: f64,
    pub dofs: usize,
    pub err_dg: f64,
    pub rate_dg: Option<f64>,
    pub err_l2: f64,
    pub rate_l2: Option<f64>,
}

/// Solve one manufactured case on the given refinement level and measure
/// errors at the final time. The discrete extracellular mean is aligned to
/// zero before comparing, matching the normalization of the exact solutions.
pub fn run_level(
    case: &ManufacturedCase,
    degree: usize,
    level: u32,
) -> Result<LevelResult, StudyError> {
    let mesh = Arc::new(case.geometry().build_refined(level)?);
    let space = DgSpace::new(mesh.clone(), degree);
    let iface = InterfaceSpace::new(mesh.clone(), degree);
    let coeff = case.coefficients();
    let bc = case.boundary_condition();
    let membrane = MembraneAssignment::uniform_for(&mesh, case.membrane_model());
    let h = mesh.max_element_diameter();
    let grid = case.time_grid(h)?;

    let problem = TransientProblem {
        space: &space,
        iface: &iface,
        coeff: &coeff,
        bc,
        membrane: &membrane,
        data: case,
        stimulus_mask: vec![false; iface.dim()],
        scheme: Scheme::BackwardEuler,
        grid,
    };
    let stepper = TimeStepper::new(&problem, SolverBackend::Direct)?;
    let initial = TransientState::from_jump(&problem, case.initial_jump(&iface))?;
    let state = stepper.run(&problem, initial, &mut [])?;

    let mut field = state.field;
    if bc.uses_mean_constraint() {
        let weights = forms::mean_constraint_vector(&space);
        let mean: f64 = weights
            .as_slice()
            .iter()
            .zip(field.as_slice())
            .map(|(w, u)| w * u)
            .sum();
        let c = mean / mesh.subdomain_area(0);
        let shift = space.project(|_, _| c);
        for (u, s) in field.0.iter_mut().zip(shift.as_slice()) {
            *u -= s;
        }
    }

    let norms = forms::error_norms(&space, &field, case, state.membrane.t, coeff.penalty);
    Ok(LevelResult {
        level,
        h,
        dofs: space.dim(),
        norms,
    })
}

/// Convergence orders between consecutive levels.
pub fn rates(results: &[LevelResult]) -> Vec<EocRow> {
    results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let rate = |get: fn(&ErrorNorms) -> f64| {
                if i == 0 {
                    None
                } else {
                    let prev = &results[i - 1];
                    let ratio = (prev.h / r.h).log2();
                    Some((get(&prev.norms) / get(&r.norms)).log2() / ratio)
                }
            };
            EocRow {
                level: r.level,
                h: r.h,
                dofs: r.dofs,
                err_dg: r.norms.dg,
                rate_dg: rate(|n| n.dg),
                err_l2: r.norms.l2,
                rate_l2: rate(|n| n.l2),
            }
        })
        .collect()
}

/// Run the refinement hierarchy `0..n_levels` and tabulate errors and rates.
pub fn convergence_study(
    case: &ManufacturedCase,
    degree: usize,
    n_levels: u32,
) -> Result<Vec<EocRow>, StudyError> {
    let mut results = Vec::new();
    for level in 0..n_levels {
        results.push(run_level(case, degree, level)?);
    }
    Ok(rates(&results))
}
