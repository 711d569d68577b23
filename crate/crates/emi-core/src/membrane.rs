//! Membrane current models, gating dynamics, stimulus protocols, and the
//! collocated ODE integrator used by operator splitting.
//!
//! The membrane state lives at the interface collocation points and stores
//! the physical transmembrane potential: the intracellular trace minus the
//! extracellular trace on cell boundaries, and the lower-label trace minus
//! the higher-label trace between cells. Conversions to and from the modal
//! jump coefficients used by the PDE assembly apply the per-pair orientation
//! factor in both directions.

use std::collections::BTreeMap;
use std::io;

use thiserror::Error;

use crate::mesh::Mesh;
use crate::space::InterfaceSpace;

#[derive(Debug, Error)]
pub enum MembraneError {
    #[error("invalid membrane parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("membrane pair ({0}, {1}) has no assigned model")]
    UnassignedPair(u32, u32),
    #[error("state length {got} does not match interface dimension {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("stimulus selector matches no membrane facets")]
    EmptySelection,
    #[error("membrane ODE step size underflow at t = {t}; the dynamics are too stiff for the explicit integrator")]
    StiffFailure { t: f64 },
}

/// Rectangular current pulse: `amplitude` on the open window
/// (`start`, `stop`), zero outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stimulus {
    pub amplitude: f64,
    pub start: f64,
    pub stop: f64,
}

impl Stimulus {
    pub fn off() -> Self {
        Stimulus {
            amplitude: 0.0,
            start: 0.0,
            stop: 0.0,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        if t > self.start && t < self.stop {
            self.amplitude
        } else {
            0.0
        }
    }
}

/// Two-variable excitable membrane kinetics with cubic activation and a slow
/// recovery gate, expressed in millivolts and milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlievPanfilov {
    pub rate: f64,
    pub amplitude: f64,
    pub rest: f64,
    pub k: f64,
    pub threshold: f64,
    pub saturation: f64,
    pub recovery_rate: f64,
    pub recovery_gain: f64,
    pub recovery_offset: f64,
    pub stimulus: Stimulus,
}

impl Default for AlievPanfilov {
    fn default() -> Self {
        AlievPanfilov {
            rate: 0.0775,
            amplitude: 100.0,
            rest: -85.0,
            k: 8.0,
            threshold: 0.13,
            saturation: 1.0,
            recovery_rate: 0.002,
            recovery_gain: 0.2,
            recovery_offset: 0.3,
            stimulus: Stimulus {
                amplitude: 50.0,
                start: 5.0,
                stop: 15.0,
            },
        }
    }
}

impl AlievPanfilov {
    pub fn validate(&self) -> Result<(), MembraneError> {
        if !(self.rate > 0.0) {
            return Err(MembraneError::InvalidParameter {
                name: "rate",
                value: self.rate,
            });
        }
        if !(self.amplitude > 0.0) {
            return Err(MembraneError::InvalidParameter {
                name: "amplitude",
                value: self.amplitude,
            });
        }
        Ok(())
    }

    fn activation(&self, v: f64) -> f64 {
        (v - self.rest) / self.amplitude
    }

    /// Time derivatives of (potential, gate) under the applied current.
    pub fn derivatives(&self, v: f64, gate: f64, applied: f64) -> (f64, f64) {
        let a = self.activation(v);
        let dv = self.rate
            * self.amplitude
            * (applied - self.k * a * (a - self.threshold) * (a - self.saturation) - a * gate);
        let dgate = -self.rate
            * (self.recovery_rate + self.recovery_gain * gate / (a + self.recovery_offset))
            * (gate + self.k * a * a - self.k * a * (self.threshold + self.saturation));
        (dv, dgate)
    }
}

/// Membrane current as a function of the transmembrane potential.
#[derive(Debug, Clone, PartialEq)]
pub enum MembraneModel {
    PassiveLinear { conductance: f64 },
    GapJunction { resistance: f64, reversal: f64 },
    AlievPanfilov(AlievPanfilov),
}

impl MembraneModel {
    pub fn gap_junction_default() -> Self {
        MembraneModel::GapJunction {
            resistance: 0.05,
            reversal: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), MembraneError> {
        match self {
            MembraneModel::PassiveLinear { conductance } => {
                if !(*conductance >= 0.0) {
                    return Err(MembraneError::InvalidParameter {
                        name: "conductance",
                        value: *conductance,
                    });
                }
            }
            MembraneModel::GapJunction { resistance, .. } => {
                if !(*resistance > 0.0) {
                    return Err(MembraneError::InvalidParameter {
                        name: "resistance",
                        value: *resistance,
                    });
                }
            }
            MembraneModel::AlievPanfilov(ap) => ap.validate()?,
        }
        Ok(())
    }

    /// Current density at potential `v`. The gate and the stimulus only
    /// enter for the excitable model: its current is the negated potential
    /// rate so that an isolated membrane discharges toward the kinetics.
    pub fn current(&self, v: f64, gate: f64, t: f64, stimulated: bool) -> f64 {
        match self {
            MembraneModel::PassiveLinear { conductance } => conductance * v,
            MembraneModel::GapJunction {
                resistance,
                reversal,
            } => (v - reversal) / resistance,
            MembraneModel::AlievPanfilov(ap) => {
                let applied = if stimulated { ap.stimulus.value(t) } else { 0.0 };
                -ap.derivatives(v, gate, applied).0
            }
        }
    }

    /// Whether splitting advances this model in the ODE substep instead of
    /// lagging its current in the PDE step.
    pub fn ode_integrated(&self) -> bool {
        matches!(self, MembraneModel::AlievPanfilov(_))
    }
}

/// Sign relating the stored modal jump of a pair to the physical
/// transmembrane potential: cell boundaries store the extracellular trace
/// first, so their stored jump is the negated potential.
pub fn pair_orientation(pair: (u32, u32)) -> f64 {
    if pair.0 == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Per-pair assignment of membrane models.
#[derive(Debug, Clone, Default)]
pub struct MembraneAssignment {
    models: BTreeMap<(u32, u32), MembraneModel>,
}

impl MembraneAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, pair: (u32, u32), model: MembraneModel) {
        let key = (pair.0.min(pair.1), pair.0.max(pair.1));
        self.models.insert(key, model);
    }

    /// One model for every membrane pair of the mesh.
    pub fn uniform_for(mesh: &Mesh, model: MembraneModel) -> Self {
        let mut out = Self::new();
        for pair in mesh.membrane_pairs() {
            out.insert(pair, model.clone());
        }
        out
    }

    /// `cell_model` on cell boundaries, `junction_model` between cells.
    pub fn split_for(mesh: &Mesh, cell_model: MembraneModel, junction_model: MembraneModel) -> Self {
        let mut out = Self::new();
        for pair in mesh.membrane_pairs() {
            let model = if pair.0 == 0 {
                cell_model.clone()
            } else {
                junction_model.clone()
            };
            out.insert(pair, model);
        }
        out
    }

    pub fn model(&self, pair: (u32, u32)) -> Result<&MembraneModel, MembraneError> {
        self.models
            .get(&(pair.0.min(pair.1), pair.0.max(pair.1)))
            .ok_or(MembraneError::UnassignedPair(pair.0, pair.1))
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<(), MembraneError> {
        for pair in mesh.membrane_pairs() {
            self.model(pair)?.validate()?;
        }
        Ok(())
    }

    /// Modal coefficients, in stored jump orientation, of the membrane
    /// current at the given state, ready to pair against the jump operator.
    /// Models advanced by the ODE substep contribute zero unless
    /// `include_ode_models` is set.
    pub fn current_modal(
        &self,
        iface: &InterfaceSpace,
        state: &MembraneState,
        mask: &[bool],
        include_ode_models: bool,
    ) -> Result<Vec<f64>, MembraneError> {
        state.check(iface)?;
        check_mask(iface, mask)?;
        let mut out = vec![0.0; iface.dim()];
        let n_modes = iface.n_modes();
        let mut nodal = vec![0.0; n_modes];
        for slot in 0..iface.facets.len() {
            let pair = iface.pair(slot);
            let model = self.model(pair)?;
            if model.ode_integrated() && !include_ode_models {
                continue;
            }
            let sign = pair_orientation(pair);
            let dofs = iface.slot_dofs(slot);
            for (m, dof) in dofs.clone().enumerate() {
                nodal[m] = model.current(state.v[dof], state.gate[dof], state.t, mask[dof]);
            }
            let modal = iface.nodal_to_modal(slot, &nodal);
            for (m, dof) in dofs.enumerate() {
                out[dof] = sign * modal[m];
            }
        }
        Ok(out)
    }
}

/// Transmembrane potential and recovery gate at the interface collocation
/// points, plus the current time.
#[derive(Debug, Clone, PartialEq)]
pub struct MembraneState {
    pub v: Vec<f64>,
    pub gate: Vec<f64>,
    pub t: f64,
}

impl MembraneState {
    pub fn zeros(iface: &InterfaceSpace) -> Self {
        MembraneState {
            v: vec![0.0; iface.dim()],
            gate: vec![0.0; iface.dim()],
            t: 0.0,
        }
    }

    /// Resting state: cell boundaries at `rest`, cell-to-cell interfaces at
    /// zero potential difference, gates at zero.
    pub fn resting(iface: &InterfaceSpace, rest: f64) -> Self {
        let mut state = Self::zeros(iface);
        for slot in 0..iface.facets.len() {
            if iface.pair(slot).0 == 0 {
                for dof in iface.slot_dofs(slot) {
                    state.v[dof] = rest;
                }
            }
        }
        state
    }

    pub fn check(&self, iface: &InterfaceSpace) -> Result<(), MembraneError> {
        if self.v.len() != iface.dim() || self.gate.len() != iface.dim() {
            return Err(MembraneError::StateLength {
                expected: iface.dim(),
                got: self.v.len().min(self.gate.len()),
            });
        }
        Ok(())
    }

    /// Build the collocated potential from stored modal jump coefficients.
    pub fn from_stored_jump(
        iface: &InterfaceSpace,
        jump_modal: &[f64],
        gate: Vec<f64>,
        t: f64,
    ) -> Result<Self, MembraneError> {
        if jump_modal.len() != iface.dim() || gate.len() != iface.dim() {
            return Err(MembraneError::StateLength {
                expected: iface.dim(),
                got: jump_modal.len().min(gate.len()),
            });
        }
        let mut v = vec![0.0; iface.dim()];
        for slot in 0..iface.facets.len() {
            let sign = pair_orientation(iface.pair(slot));
            let dofs = iface.slot_dofs(slot);
            let nodal = iface.modal_to_nodal(slot, &jump_modal[dofs.clone()]);
            for (m, dof) in dofs.enumerate() {
                v[dof] = sign * nodal[m];
            }
        }
        Ok(MembraneState { v, gate, t })
    }

    /// Stored modal jump coefficients of the collocated potential.
    pub fn stored_jump_modal(&self, iface: &InterfaceSpace) -> Result<Vec<f64>, MembraneError> {
        self.check(iface)?;
        let mut out = vec![0.0; iface.dim()];
        for slot in 0..iface.facets.len() {
            let sign = pair_orientation(iface.pair(slot));
            let dofs = iface.slot_dofs(slot);
            let nodal: Vec<f64> = dofs.clone().map(|d| self.v[d]).collect();
            let modal = iface.nodal_to_modal(slot, &nodal);
            for (m, dof) in dofs.enumerate() {
                out[dof] = sign * modal[m];
            }
        }
        Ok(out)
    }
}

/// Subset of interface collocation points receiving the stimulus current.
#[derive(Debug, Clone, PartialEq)]
pub enum StimulusSelector {
    All,
    None,
    /// Membrane facets lying on the lowest edge of each listed cell.
    CellBottoms(Vec<u32>),
}

fn check_mask(iface: &InterfaceSpace, mask: &[bool]) -> Result<(), MembraneError> {
    if mask.len() != iface.dim() {
        return Err(MembraneError::StateLength {
            expected: iface.dim(),
            got: mask.len(),
        });
    }
    Ok(())
}

/// Boolean mask over interface collocation points selected by the stimulus
/// protocol.
pub fn stimulus_mask(
    iface: &InterfaceSpace,
    selector: &StimulusSelector,
) -> Result<Vec<bool>, MembraneError> {
    let mut mask = vec![false; iface.dim()];
    match selector {
        StimulusSelector::All => mask.iter_mut().for_each(|m| *m = true),
        StimulusSelector::None => {}
        StimulusSelector::CellBottoms(cells) => {
            let mut any = false;
            for &cell in cells {
                let facets: Vec<usize> = (0..iface.facets.len())
                    .filter(|&slot| iface.pair(slot) == (0, cell))
                    .map(|slot| iface.facets[slot])
                    .collect();
                let mut y_min = f64::INFINITY;
                for &f in &facets {
                    let (p0, p1) = iface.mesh.facet_endpoints(f);
                    y_min = y_min.min(p0[1]).min(p1[1]);
                }
                for slot in 0..iface.facets.len() {
                    if iface.pair(slot) != (0, cell) {
                        continue;
                    }
                    let (p0, p1) = iface.mesh.facet_endpoints(iface.facets[slot]);
                    if (p0[1] - y_min).abs() <= 1e-9 && (p1[1] - y_min).abs() <= 1e-9 {
                        any = true;
                        for dof in iface.slot_dofs(slot) {
                            mask[dof] = true;
                        }
                    }
                }
            }
            if !any {
                return Err(MembraneError::EmptySelection);
            }
        }
    }
    Ok(mask)
}

const STAGE_TIMES: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const STAGE_WEIGHTS: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const FIFTH_ORDER: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const FOURTH_ORDER: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One embedded explicit Runge-Kutta step of order 5(4): returns the
/// fifth-order update and the embedded error estimate.
fn embedded_step<F>(f: &F, t: f64, y: [f64; 2], h: f64) -> ([f64; 2], [f64; 2])
where
    F: Fn(f64, [f64; 2]) -> [f64; 2],
{
    let mut k = [[0.0f64; 2]; 7];
    for s in 0..7 {
        let mut ys = y;
        for (j, kj) in k.iter().enumerate().take(s.min(6)) {
            let w = STAGE_WEIGHTS[s][j];
            if w != 0.0 {
                ys[0] += h * w * kj[0];
                ys[1] += h * w * kj[1];
            }
        }
        k[s] = f(t + STAGE_TIMES[s] * h, ys);
    }
    let mut y5 = y;
    let mut err = [0.0f64; 2];
    for s in 0..7 {
        y5[0] += h * FIFTH_ORDER[s] * k[s][0];
        y5[1] += h * FIFTH_ORDER[s] * k[s][1];
        let d = FIFTH_ORDER[s] - FOURTH_ORDER[s];
        err[0] += h * d * k[s][0];
        err[1] += h * d * k[s][1];
    }
    (y5, err)
}

const ODE_ABS_TOL: f64 = 1e-8;
const ODE_REL_TOL: f64 = 1e-6;

fn integrate_adaptive<F>(f: &F, t0: f64, y0: [f64; 2], horizon: f64) -> Result<[f64; 2], MembraneError>
where
    F: Fn(f64, [f64; 2]) -> [f64; 2],
{
    let t_end = t0 + horizon;
    let mut t = t0;
    let mut y = y0;
    let mut h = horizon;
    let h_floor = 1e-13 * horizon;
    for _ in 0..1_000_000 {
        if t >= t_end {
            return Ok(y);
        }
        h = h.min(t_end - t);
        let (y5, err) = embedded_step(f, t, y, h);
        let mut scaled = 0.0f64;
        for i in 0..2 {
            let tol = ODE_ABS_TOL + ODE_REL_TOL * y[i].abs().max(y5[i].abs());
            scaled = scaled.max((err[i] / tol).abs());
        }
        if scaled <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if scaled > 0.0 {
            (0.9 * scaled.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        h *= factor;
        if h < h_floor && t < t_end {
            return Err(MembraneError::StiffFailure { t });
        }
    }
    Err(MembraneError::StiffFailure { t })
}

/// Advance the membrane state by `tau`: collocation points of excitable
/// models integrate their kinetics with adaptive embedded Runge-Kutta
/// stepping, all other points are left unchanged. The mask selects the
/// points receiving the stimulus current.
pub fn ode_step(
    assignment: &MembraneAssignment,
    iface: &InterfaceSpace,
    state: &MembraneState,
    mask: &[bool],
    tau: f64,
) -> Result<MembraneState, MembraneError> {
    assert!(tau > 0.0, "step size must be positive");
    state.check(iface)?;
    check_mask(iface, mask)?;
    let mut next = state.clone();
    for slot in 0..iface.facets.len() {
        let model = assignment.model(iface.pair(slot))?;
        let ap = match model {
            MembraneModel::AlievPanfilov(ap) => ap,
            _ => continue,
        };
        for dof in iface.slot_dofs(slot) {
            let stimulated = mask[dof];
            let rhs = |t: f64, y: [f64; 2]| {
                let applied = if stimulated { ap.stimulus.value(t) } else { 0.0 };
                let (dv, dg) = ap.derivatives(y[0], y[1], applied);
                [dv, dg]
            };
            let y = integrate_adaptive(&rhs, state.t, [state.v[dof], state.gate[dof]], tau)?;
            next.v[dof] = y[0];
            next.gate[dof] = y[1];
        }
    }
    next.t = state.t + tau;
    Ok(next)
}

/// Write the state as CSV rows `t,dof_id,v,beta`.
pub fn write_state_csv<W: io::Write>(state: &MembraneState, mut out: W) -> io::Result<()> {
    writeln!(out, "t,dof_id,v,beta")?;
    for (dof, (v, gate)) in state.v.iter().zip(&state.gate).enumerate() {
        writeln!(out, "{},{},{:.17e},{:.17e}", state.t, dof, v, gate)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::GeometrySpec;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn iface_for(geo: GeometrySpec, degree: usize) -> InterfaceSpace {
        let mesh = Arc::new(geo.build().unwrap());
        InterfaceSpace::new(mesh, degree)
    }

    #[test]
    fn stimulus_window_is_open() {
        let stim = AlievPanfilov::default().stimulus;
        assert_eq!(stim.value(10.0), 50.0);
        assert_eq!(stim.value(20.0), 0.0);
        assert_eq!(stim.value(4.999), 0.0);
        assert_eq!(stim.value(5.0), 0.0);
        assert_eq!(stim.value(15.0), 0.0);
        assert_eq!(Stimulus::off().value(10.0), 0.0);
    }

    #[test]
    fn gap_junction_current_values() {
        let gj = MembraneModel::gap_junction_default();
        assert_eq!(gj.current(0.0, 0.0, 0.0, false), 0.0);
        assert_relative_eq!(gj.current(1.0, 0.0, 0.0, false), 20.0, epsilon = 1e-14);
    }

    #[test]
    fn passive_linear_lipschitz_constant_is_the_conductance() {
        let c = 0.37;
        let model = MembraneModel::PassiveLinear { conductance: c };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let v1: f64 = rng.gen_range(-100.0..100.0);
            let v2: f64 = rng.gen_range(-100.0..100.0);
            if (v1 - v2).abs() < 1e-9 {
                continue;
            }
            let ratio = (model.current(v1, 0.0, 0.0, false) - model.current(v2, 0.0, 0.0, false))
                .abs()
                / (v1 - v2).abs();
            assert_relative_eq!(ratio, c, max_relative = 1e-12);
        }
    }

    #[test]
    fn excitable_rest_state_has_zero_current_and_zero_rates() {
        let ap = AlievPanfilov::default();
        let (dv, dg) = ap.derivatives(-85.0, 0.0, 0.0);
        assert_eq!(dv, 0.0);
        assert_eq!(dg, 0.0);
        let model = MembraneModel::AlievPanfilov(ap);
        assert_eq!(model.current(-85.0, 0.0, 0.0, false), 0.0);
    }

    #[test]
    fn rest_state_is_invariant_over_long_horizon() {
        let iface = iface_for(GeometrySpec::PlusCell { resolution: 1 }, 1);
        let assignment = MembraneAssignment::uniform_for(
            &iface.mesh,
            MembraneModel::AlievPanfilov(AlievPanfilov {
                stimulus: Stimulus::off(),
                ..AlievPanfilov::default()
            }),
        );
        let mask = stimulus_mask(&iface, &StimulusSelector::None).unwrap();
        let mut state = MembraneState::resting(&iface, -85.0);
        for _ in 0..100 {
            state = ode_step(&assignment, &iface, &state, &mask, 1.0).unwrap();
        }
        assert_relative_eq!(state.t, 100.0, epsilon = 1e-12);
        for dof in 0..iface.dim() {
            assert!((state.v[dof] + 85.0).abs() < 1e-8, "v drifted: {}", state.v[dof]);
            assert!(state.gate[dof].abs() < 1e-8, "gate drifted: {}", state.gate[dof]);
        }
    }

    fn rk4_oracle(ap: &AlievPanfilov, applied: f64, y0: [f64; 2], horizon: f64, n: usize) -> [f64; 2] {
        let h = horizon / n as f64;
        let f = |y: [f64; 2]| {
            let (dv, dg) = ap.derivatives(y[0], y[1], applied);
            [dv, dg]
        };
        let mut y = y0;
        for _ in 0..n {
            let k1 = f(y);
            let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
            let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
            let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
            y[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
            y[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        }
        y
    }

    #[test]
    fn adaptive_step_matches_fixed_step_oracle() {
        let ap = AlievPanfilov {
            stimulus: Stimulus::off(),
            ..AlievPanfilov::default()
        };
        let iface = iface_for(GeometrySpec::PlusCell { resolution: 1 }, 1);
        let assignment =
            MembraneAssignment::uniform_for(&iface.mesh, MembraneModel::AlievPanfilov(ap));
        let mask = stimulus_mask(&iface, &StimulusSelector::None).unwrap();
        let mut state = MembraneState::zeros(&iface);
        for dof in 0..iface.dim() {
            state.v[dof] = -60.0;
            state.gate[dof] = 0.05;
        }
        let next = ode_step(&assignment, &iface, &state, &mask, 1.0).unwrap();
        let oracle = rk4_oracle(&ap, 0.0, [-60.0, 0.05], 1.0, 10_000);
        for dof in 0..iface.dim() {
            assert_relative_eq!(next.v[dof], oracle[0], max_relative = 1e-6);
            assert_relative_eq!(next.gate[dof], oracle[1], max_relative = 1e-6);
        }
        assert!((oracle[0] + 60.0).abs() > 1.0, "dynamics should move the state");
    }

    #[test]
    fn embedded_step_error_converges_at_order_five() {
        let ap = AlievPanfilov {
            stimulus: Stimulus::off(),
            ..AlievPanfilov::default()
        };
        let f = |_t: f64, y: [f64; 2]| {
            let (dv, dg) = ap.derivatives(y[0], y[1], 0.0);
            [dv, dg]
        };
        let y0 = [-60.0, 0.05];
        let mut errors = Vec::new();
        for &h in &[1.6, 0.8, 0.4] {
            let reference = rk4_oracle(&ap, 0.0, y0, h, 50_000);
            let (y5, _) = embedded_step(&f, 0.0, y0, h);
            errors.push(((y5[0] - reference[0]).powi(2) + (y5[1] - reference[1]).powi(2)).sqrt());
        }
        let order1 = (errors[0] / errors[1]).log2();
        let order2 = (errors[1] / errors[2]).log2();
        assert!(order1 >= 4.0, "observed order {order1} from errors {errors:?}");
        assert!(order2 >= 4.0, "observed order {order2} from errors {errors:?}");
    }

    #[test]
    fn non_excitable_models_do_not_move_in_the_ode_substep() {
        let iface = iface_for(GeometrySpec::TwoCell { resolution: 1 }, 1);
        let assignment =
            MembraneAssignment::uniform_for(&iface.mesh, MembraneModel::gap_junction_default());
        let mask = vec![false; iface.dim()];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state = MembraneState::zeros(&iface);
        for dof in 0..iface.dim() {
            state.v[dof] = rng.gen_range(-90.0..10.0);
        }
        let next = ode_step(&assignment, &iface, &state, &mask, 0.5).unwrap();
        assert_eq!(next.v, state.v);
        assert_eq!(next.gate, state.gate);
        assert_relative_eq!(next.t, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn jump_round_trip_preserves_modal_coefficients() {
        let iface = iface_for(GeometrySpec::TwoCell { resolution: 1 }, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let jump: Vec<f64> = (0..iface.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let state =
            MembraneState::from_stored_jump(&iface, &jump, vec![0.0; iface.dim()], 0.0).unwrap();
        let back = state.stored_jump_modal(&iface).unwrap();
        for (a, b) in jump.iter().zip(&back) {
            assert_relative_eq!(a, b, epsilon = 1e-13, max_relative = 1e-13);
        }
    }

    #[test]
    fn linear_current_in_modal_form_scales_the_stored_jump() {
        let iface = iface_for(GeometrySpec::TwoCell { resolution: 1 }, 1);
        let mut assignment = MembraneAssignment::new();
        assignment.insert((0, 1), MembraneModel::PassiveLinear { conductance: 0.7 });
        assignment.insert((0, 2), MembraneModel::PassiveLinear { conductance: 0.7 });
        assignment.insert((1, 2), MembraneModel::gap_junction_default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let jump: Vec<f64> = (0..iface.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let state =
            MembraneState::from_stored_jump(&iface, &jump, vec![0.0; iface.dim()], 0.0).unwrap();
        let mask = vec![false; iface.dim()];
        let modal = assignment
            .current_modal(&iface, &state, &mask, false)
            .unwrap();
        for slot in 0..iface.facets.len() {
            let rate = if iface.pair(slot).0 == 0 { 0.7 } else { 20.0 };
            for dof in iface.slot_dofs(slot) {
                assert_relative_eq!(modal[dof], rate * jump[dof], max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn reversal_offset_enters_with_the_pair_orientation() {
        let iface = iface_for(GeometrySpec::TwoCell { resolution: 1 }, 1);
        let reversal = 2.5;
        let assignment = MembraneAssignment::uniform_for(
            &iface.mesh,
            MembraneModel::GapJunction {
                resistance: 0.05,
                reversal,
            },
        );
        let state = MembraneState::zeros(&iface);
        let mask = vec![false; iface.dim()];
        let modal = assignment
            .current_modal(&iface, &state, &mask, false)
            .unwrap();
        for slot in 0..iface.facets.len() {
            let sign = pair_orientation(iface.pair(slot));
            let len = iface.mesh.facet_length(iface.facets[slot]);
            let dofs: Vec<usize> = iface.slot_dofs(slot).collect();
            let expected0 = sign * (-reversal / 0.05) * len.sqrt();
            assert_relative_eq!(modal[dofs[0]], expected0, max_relative = 1e-12);
            for &dof in &dofs[1..] {
                assert!(modal[dof].abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn bottom_selector_matches_the_geometry_count() {
        let resolution = 1;
        let iface = iface_for(
            GeometrySpec::CellSheet {
                rows: 2,
                cols: 2,
                resolution,
            },
            1,
        );
        let mask = stimulus_mask(&iface, &StimulusSelector::CellBottoms(vec![1])).unwrap();
        let expected_facets = 2 * resolution as usize;
        let selected = mask.iter().filter(|&&m| m).count();
        assert_eq!(selected, expected_facets * iface.n_modes());
        for slot in 0..iface.facets.len() {
            let dofs: Vec<usize> = iface.slot_dofs(slot).collect();
            if mask[dofs[0]] {
                assert_eq!(iface.pair(slot), (0, 1));
                let (p0, p1) = iface.mesh.facet_endpoints(iface.facets[slot]);
                assert!(p0[1].abs() <= 1e-12 && p1[1].abs() <= 1e-12);
            }
        }

        let all = stimulus_mask(&iface, &StimulusSelector::All).unwrap();
        assert!(all.iter().all(|&m| m));
        let none = stimulus_mask(&iface, &StimulusSelector::None).unwrap();
        assert!(none.iter().all(|&m| !m));
        assert!(matches!(
            stimulus_mask(&iface, &StimulusSelector::CellBottoms(vec![99])),
            Err(MembraneError::EmptySelection)
        ));
    }

    #[test]
    fn invalid_parameters_and_missing_assignments_are_reported() {
        let iface = iface_for(GeometrySpec::PlusCell { resolution: 1 }, 1);
        let empty = MembraneAssignment::new();
        assert!(matches!(
            empty.model((0, 1)),
            Err(MembraneError::UnassignedPair(0, 1))
        ));
        assert!(empty.validate(&iface.mesh).is_err());

        let bad = MembraneModel::GapJunction {
            resistance: 0.0,
            reversal: 0.0,
        };
        assert!(matches!(
            bad.validate(),
            Err(MembraneError::InvalidParameter { name: "resistance", .. })
        ));
        let bad_ap = AlievPanfilov {
            rate: -1.0,
            ..AlievPanfilov::default()
        };
        assert!(bad_ap.validate().is_err());

        let state = MembraneState::zeros(&iface);
        let short_mask = vec![false; 1];
        let assignment = MembraneAssignment::uniform_for(
            &iface.mesh,
            MembraneModel::PassiveLinear { conductance: 0.0 },
        );
        assert!(matches!(
            ode_step(&assignment, &iface, &state, &short_mask, 0.1),
            Err(MembraneError::StateLength { .. })
        ));
    }

    #[test]
    fn csv_snapshot_has_header_and_one_row_per_point() {
        let iface = iface_for(GeometrySpec::PlusCell { resolution: 1 }, 1);
        let state = MembraneState::resting(&iface, -85.0);
        let mut buf = Vec::new();
        write_state_csv(&state, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,dof_id,v,beta");
        assert_eq!(lines.len(), 1 + iface.dim());
        assert!(lines[1].starts_with("0,0,"));
    }

    #[test]
    fn stimulated_point_depolarizes_during_the_pulse() {
        let ap = AlievPanfilov::default();
        let iface = iface_for(GeometrySpec::PlusCell { resolution: 1 }, 1);
        let assignment =
            MembraneAssignment::uniform_for(&iface.mesh, MembraneModel::AlievPanfilov(ap));
        let mask = stimulus_mask(&iface, &StimulusSelector::All).unwrap();
        let mut state = MembraneState::resting(&iface, -85.0);
        let tau = 0.5;
        let mut crossed_at = None;
        for _ in 0..80 {
            state = ode_step(&assignment, &iface, &state, &mask, tau).unwrap();
            if state.v[0] > 0.0 {
                crossed_at = Some(state.t);
                break;
            }
        }
        let t = crossed_at.expect("stimulated membrane should depolarize");
        assert!(t > 5.0 && t < 30.0, "upstroke at t = {t}");
    }
}
