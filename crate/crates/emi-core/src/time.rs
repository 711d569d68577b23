//! Implicit time stepping for the membrane-coupled problem: backward Euler
//! with the membrane current lagged one step, and first-order operator
//! splitting that advances excitable membrane kinetics in an ODE substep
//! before each PDE solve.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::forms::{self, BoundaryCondition, CoefficientSet, FormsError, ProblemData};
use crate::membrane::{ode_step, MembraneAssignment, MembraneError, MembraneState};
use crate::solver::{element_block_order, pcg, CooMatrix, CsrMatrix, LdlError, LdlFactor};
use crate::space::{DgSpace, FieldVector, InterfaceSpace};

#[derive(Debug, Error)]
pub enum TimeError {
    #[error("time grid needs a positive horizon and a positive step target")]
    BadGrid,
    #[error("the iterative backend requires a boundary condition without the mean constraint")]
    BackendNeedsDefiniteSystem,
    #[error("linear solver did not converge within {max_iter} iterations (residual {residual})")]
    SolverStalled { max_iter: usize, residual: f64 },
    #[error(transparent)]
    Forms(#[from] FormsError),
    #[error(transparent)]
    Membrane(#[from] MembraneError),
    #[error(transparent)]
    Factorization(#[from] LdlError),
}

/// Uniform partition of a time interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub tau: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    /// Largest uniform step not exceeding `target_tau` that divides the
    /// horizon exactly.
    pub fn from_horizon(horizon: f64, target_tau: f64) -> Result<Self, TimeError> {
        if !(horizon > 0.0) || !(target_tau > 0.0) {
            return Err(TimeError::BadGrid);
        }
        let n_steps = (horizon / target_tau).ceil().max(1.0) as usize;
        Ok(TimeGrid {
            tau: horizon / n_steps as f64,
            n_steps,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.tau * self.n_steps as f64
    }
}

/// Whether a step is a single implicit solve or an ODE substep followed by
/// the implicit solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    BackwardEuler,
    GodunovSplit,
}

/// Linear solver used for the implicit step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverBackend {
    Direct,
    /// Conjugate gradients with an element-block diagonal preconditioner and
    /// the previous field as the initial guess.
    BlockJacobiCg { tol_abs: f64, max_iter: usize },
}

/// Everything a transient run needs: discretization, physics, data, and the
/// time grid.
pub struct TransientProblem<'a> {
    pub space: &'a DgSpace,
    pub iface: &'a InterfaceSpace,
    pub coeff: &'a CoefficientSet,
    pub bc: BoundaryCondition,
    pub membrane: &'a MembraneAssignment,
    pub data: &'a dyn ProblemData,
    pub stimulus_mask: Vec<bool>,
    pub scheme: Scheme,
    pub grid: TimeGrid,
}

/// Field, interface state, and multiplier after a step.
#[derive(Debug, Clone)]
pub struct TransientState {
    pub field: FieldVector,
    pub jump: Vec<f64>,
    pub membrane: MembraneState,
    pub multiplier: f64,
    pub step: usize,
    pub solver_iterations: usize,
}

impl TransientState {
    /// Initial state from modal jump coefficients in stored orientation;
    /// the field starts at zero and gates start at rest.
    pub fn from_jump(problem: &TransientProblem, jump: Vec<f64>) -> Result<Self, TimeError> {
        let membrane = MembraneState::from_stored_jump(
            problem.iface,
            &jump,
            vec![0.0; problem.iface.dim()],
            0.0,
        )?;
        Ok(TransientState {
            field: problem.space.zero_field(),
            jump,
            membrane,
            multiplier: 0.0,
            step: 0,
            solver_iterations: 0,
        })
    }

    /// Initial state from a collocated membrane state.
    pub fn from_membrane(
        problem: &TransientProblem,
        membrane: MembraneState,
    ) -> Result<Self, TimeError> {
        let jump = membrane.stored_jump_modal(problem.iface)?;
        Ok(TransientState {
            field: problem.space.zero_field(),
            jump,
            membrane,
            multiplier: 0.0,
            step: 0,
            solver_iterations: 0,
        })
    }
}

/// Callback receiving every state of a run, the initial one included.
pub trait Observer {
    fn observe(&mut self, state: &TransientState);
}

impl<F: FnMut(&TransientState)> Observer for F {
    fn observe(&mut self, state: &TransientState) {
        self(state)
    }
}

enum Backend {
    Direct(LdlFactor),
    DirectMean {
        factor: LdlFactor,
        mean: Vec<f64>,
        ones: Vec<f64>,
        area: f64,
        pin: usize,
    },
    Cg {
        preconditioner: LdlFactor,
        tol_abs: f64,
        max_iter: usize,
    },
}

/// Assembled and factorized operators for a fixed problem and step size,
/// reused across all steps of a run.
pub struct TimeStepper {
    system: CsrMatrix,
    backend: Backend,
    jump_op: CsrMatrix,
    jump_op_t: CsrMatrix,
    capacitance: Vec<f64>,
}

/// Zeroes the coupling row and column of one degree of freedom and puts a
/// unit pivot in its place, turning a matrix that is singular along the
/// global constant into a definite one.
fn pin_dof(matrix: &CsrMatrix, pin: usize) -> CsrMatrix {
    let n = matrix.nrows;
    let mut coo = CooMatrix::new(n, n);
    for r in 0..n {
        for (c, v) in matrix.row(r) {
            if r != pin && c != pin {
                coo.push(r, c, v);
            }
        }
    }
    coo.push(pin, pin, 1.0);
    coo.to_csr()
}

impl TimeStepper {
    pub fn new(problem: &TransientProblem, backend: SolverBackend) -> Result<Self, TimeError> {
        problem.coeff.validate(&problem.space.mesh)?;
        problem.membrane.validate(&problem.space.mesh)?;
        let space = problem.space;
        let n = space.dim();
        let tau = problem.grid.tau;
        let stiffness = forms::assemble_stiffness(space, problem.coeff, problem.bc)?;
        let membrane_mass = forms::assemble_membrane_mass(space, problem.coeff)?;
        let mean_constrained = problem.bc.uses_mean_constraint();

        let mut coo = CooMatrix::new(n, n);
        coo.add_matrix(&stiffness, 1.0);
        coo.add_matrix(&membrane_mass, 1.0 / tau);
        let full = coo.to_csr();

        let nloc = space.n_local();
        let order = element_block_order(&space.mesh, nloc);
        let (system, backend) = match backend {
            SolverBackend::Direct => {
                if mean_constrained {
                    let pin = 0;
                    let pinned = pin_dof(&full, pin);
                    let factor = LdlFactor::new_spd(&pinned, order)?;
                    let mean = forms::mean_constraint_vector(space).0;
                    let ones = space.project(|_, _| 1.0).0;
                    let area: f64 = mean.iter().zip(&ones).map(|(m, o)| m * o).sum();
                    (
                        pinned,
                        Backend::DirectMean {
                            factor,
                            mean,
                            ones,
                            area,
                            pin,
                        },
                    )
                } else {
                    (full.clone(), Backend::Direct(LdlFactor::new_spd(&full, order)?))
                }
            }
            SolverBackend::BlockJacobiCg { tol_abs, max_iter } => {
                if mean_constrained {
                    return Err(TimeError::BackendNeedsDefiniteSystem);
                }
                let system = full;
                let mut blocks = CooMatrix::new(n, n);
                for e in 0..space.mesh.n_elements() {
                    let base = e * nloc;
                    let mut dense = DMatrix::zeros(nloc, nloc);
                    for a in 0..nloc {
                        for (col, v) in system.row(base + a) {
                            if col >= base && col < base + nloc {
                                dense[(a, col - base)] = v;
                            }
                        }
                    }
                    for a in 0..nloc {
                        for b in 0..nloc {
                            blocks.push(base + a, base + b, dense[(a, b)]);
                        }
                    }
                }
                let block_csr = blocks.to_csr();
                let id_order = (0..n).collect();
                (
                    system,
                    Backend::Cg {
                        preconditioner: LdlFactor::new_spd(&block_csr, id_order)?,
                        tol_abs,
                        max_iter,
                    },
                )
            }
        };

        let jump_op = forms::jump_operator(space, problem.iface);
        let jump_op_t = jump_op.transpose();
        let capacitance = forms::capacitance_diagonal(problem.iface, problem.coeff);
        Ok(TimeStepper {
            system,
            backend,
            jump_op,
            jump_op_t,
            capacitance,
        })
    }

    fn solve(
        &self,
        rhs: &[f64],
        warm_start: &[f64],
    ) -> Result<(Vec<f64>, f64, usize), TimeError> {
        match &self.backend {
            Backend::Direct(factor) => {
                let (x, _res) = factor.solve_refined(&self.system, rhs, 2);
                Ok((x, 0.0, 0))
            }
            Backend::DirectMean {
                factor,
                mean,
                ones,
                area,
                pin,
            } => {
                let multiplier =
                    ones.iter().zip(rhs).map(|(o, r)| o * r).sum::<f64>() / area;
                let mut reduced: Vec<f64> = rhs
                    .iter()
                    .zip(mean)
                    .map(|(r, m)| r - multiplier * m)
                    .collect();
                reduced[*pin] = 0.0;
                let (raw, _res) = factor.solve_refined(&self.system, &reduced, 2);
                let shift =
                    mean.iter().zip(&raw).map(|(m, u)| m * u).sum::<f64>() / area;
                let x: Vec<f64> = raw
                    .iter()
                    .zip(ones)
                    .map(|(u, o)| u - shift * o)
                    .collect();
                Ok((x, multiplier, 0))
            }
            Backend::Cg {
                preconditioner,
                tol_abs,
                max_iter,
            } => {
                let (x, stats) = pcg(
                    |v, out| self.system.mul_vec(v, out),
                    |v, out| out.copy_from_slice(&preconditioner.solve(v)),
                    rhs,
                    warm_start,
                    *tol_abs,
                    *max_iter,
                );
                if !stats.converged {
                    return Err(TimeError::SolverStalled {
                        max_iter: *max_iter,
                        residual: stats.final_residual,
                    });
                }
                Ok((x, 0.0, stats.iterations))
            }
        }
    }

    /// One implicit solve with the given previous jump and lagged membrane
    /// current evaluation state.
    fn pde_step(
        &self,
        problem: &TransientProblem,
        prev_jump: &[f64],
        lag_state: &MembraneState,
        include_ode_currents: bool,
        warm_start: &FieldVector,
        t_next: f64,
        step: usize,
    ) -> Result<TransientState, TimeError> {
        let tau = problem.grid.tau;
        let current = problem.membrane.current_modal(
            problem.iface,
            lag_state,
            &problem.stimulus_mask,
            include_ode_currents,
        )?;
        let lag: Vec<f64> = (0..prev_jump.len())
            .map(|m| self.capacitance[m] / tau * prev_jump[m] - current[m])
            .collect();
        let mut rhs = self.jump_op_t.mul_vec_owned(&lag);
        let load = forms::assemble_load(problem.space, problem.coeff, problem.bc, problem.data, t_next)?;
        for (r, l) in rhs.iter_mut().zip(load.as_slice()) {
            *r += l;
        }

        let (x, multiplier, iterations) = self.solve(&rhs, warm_start.as_slice())?;
        let field = FieldVector(x);
        let jump = self.jump_op.mul_vec_owned(field.as_slice());
        let membrane = MembraneState::from_stored_jump(
            problem.iface,
            &jump,
            lag_state.gate.clone(),
            t_next,
        )?;
        Ok(TransientState {
            field,
            jump,
            membrane,
            multiplier,
            step,
            solver_iterations: iterations,
        })
    }

    /// Implicit step with every membrane current lagged from the previous
    /// state.
    pub fn backward_euler_step(
        &self,
        problem: &TransientProblem,
        state: &TransientState,
    ) -> Result<TransientState, TimeError> {
        let t_next = state.membrane.t + problem.grid.tau;
        self.pde_step(
            problem,
            &state.jump,
            &state.membrane,
            true,
            &state.field,
            t_next,
            state.step + 1,
        )
    }

    /// Splitting step: membrane kinetics first, then the implicit solve with
    /// the updated interface state; currents of ODE-integrated models are
    /// absorbed by the substep and excluded from the solve.
    pub fn godunov_step(
        &self,
        problem: &TransientProblem,
        state: &TransientState,
    ) -> Result<TransientState, TimeError> {
        let tau = problem.grid.tau;
        let advanced = ode_step(
            problem.membrane,
            problem.iface,
            &state.membrane,
            &problem.stimulus_mask,
            tau,
        )?;
        let jump_star = advanced.stored_jump_modal(problem.iface)?;
        self.pde_step(
            problem,
            &jump_star,
            &advanced,
            false,
            &state.field,
            advanced.t,
            state.step + 1,
        )
    }

    pub fn step(
        &self,
        problem: &TransientProblem,
        state: &TransientState,
    ) -> Result<TransientState, TimeError> {
        match problem.scheme {
            Scheme::BackwardEuler => self.backward_euler_step(problem, state),
            Scheme::GodunovSplit => self.godunov_step(problem, state),
        }
    }

    /// Run the full time grid, feeding every state to the observers.
    pub fn run(
        &self,
        problem: &TransientProblem,
        initial: TransientState,
        observers: &mut [&mut dyn Observer],
    ) -> Result<TransientState, TimeError> {
        for obs in observers.iter_mut() {
            obs.observe(&initial);
        }
        let mut state = initial;
        for _ in 0..problem.grid.n_steps {
            state = self.step(problem, &state)?;
            for obs in observers.iter_mut() {
                obs.observe(&state);
            }
        }
        Ok(state)
    }
}

/// Capacitance-weighted interface norm of stored modal jump coefficients.
pub fn weighted_jump_norm(capacitance: &[f64], jump: &[f64]) -> f64 {
    capacitance
        .iter()
        .zip(jump)
        .map(|(c, j)| c * j * j)
        .sum::<f64>()
        .sqrt()
}

/// Accumulates both sides of the discrete stability estimate along a run:
/// the final jump norm plus the time-integrated DG energy on the left, the
/// initial jump norm plus time-integrated source norms plus the zero-state
/// membrane current norm on the right.
pub struct StabilityWitness {
    pub lhs: f64,
    pub rhs: f64,
}

pub fn stability_witness(
    problem: &TransientProblem,
    states: &[TransientState],
) -> Result<StabilityWitness, TimeError> {
    let tau = problem.grid.tau;
    let cap = forms::capacitance_diagonal(problem.iface, problem.coeff);
    let gamma = problem.coeff.penalty;
    let last = states.last().expect("at least the initial state");
    let mut lhs = weighted_jump_norm(&cap, &last.jump).powi(2);
    for state in states.iter().skip(1) {
        lhs += tau * forms::dg_seminorm(problem.space, &state.field, gamma).powi(2);
    }

    let first = states.first().expect("at least the initial state");
    let mut rhs = weighted_jump_norm(&cap, &first.jump).powi(2);
    let tab = &problem.space.data_tab;
    for state in states.iter().skip(1) {
        let t = state.membrane.t;
        let mut f_sq = 0.0;
        for e in 0..problem.space.mesh.n_elements() {
            let map = problem.space.map(e);
            let label = problem.space.mesh.labels[e];
            for (q, &w) in tab.rule.weights.iter().enumerate() {
                let x = map.to_physical(tab.rule.points[q]);
                let f = problem.data.volume_source(label, x, t);
                f_sq += w * map.det * f * f;
            }
        }
        rhs += tau * f_sq;
    }
    let zero_state = MembraneState::zeros(problem.iface);
    let mask = vec![false; problem.iface.dim()];
    let zero_current = problem
        .membrane
        .current_modal(problem.iface, &zero_state, &mask, true)?;
    rhs += zero_current.iter().map(|c| c * c).sum::<f64>();
    Ok(StabilityWitness { lhs, rhs })
}
