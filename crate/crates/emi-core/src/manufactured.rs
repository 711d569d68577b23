//! Closed-form transient test problems. Each case fixes a geometry, exact
//! per-subdomain solutions, conductivities and a boundary mode, and derives
//! every source the discrete scheme needs: volume sources, the membrane
//! condition residual, the conductive flux jump and boundary data.
//!
//! The membrane current is carried entirely by the facet correction, so the
//! cases run with a zero membrane model and the backward Euler error is
//! governed by the spatial discretization alone.

use std::f64::consts::PI;

use crate::forms::{BoundaryCondition, CoefficientSet, ExactSolution, ProblemData};
use crate::membrane::MembraneModel;
use crate::mesh::GeometrySpec;
use crate::space::InterfaceSpace;
use crate::time::{TimeError, TimeGrid};

const ONECELL_OMEGA: f64 = 1e-6;
const ONECELL_HORIZON: f64 = 1e-2;
const TWOCELL_HORIZON: f64 = 1.0;
const LOWREG_TAU: f64 = 1e-5;
const LOWREG_STEPS: usize = 10;

/// A named transient problem with a known exact solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ManufacturedCase {
    /// Plus-shaped cell in the unit square; trigonometric solution with a
    /// slow exponential decay and flux data on the outer boundary.
    OneCell,
    /// Square cell in an L-shaped domain; the extracellular part has the
    /// reduced regularity of the reentrant-corner singular function
    /// `r^s sin(s theta)` and boundary values are prescribed.
    LowReg { s: f64 },
    /// Two box cells in contact; trigonometric solutions growing linearly
    /// in time, exercising the cell-to-cell interface.
    TwoCell,
}

impl ManufacturedCase {
    pub fn from_name(name: &str, s: Option<f64>) -> Option<Self> {
        match name {
            "onecell" => Some(ManufacturedCase::OneCell),
            "twocell" => Some(ManufacturedCase::TwoCell),
            "lowreg" => {
                let s = s.unwrap_or(0.5);
                if s > 0.0 && s < 1.0 {
                    Some(ManufacturedCase::LowReg { s })
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ManufacturedCase::OneCell => "onecell",
            ManufacturedCase::LowReg { .. } => "lowreg",
            ManufacturedCase::TwoCell => "twocell",
        }
    }

    pub fn geometry(&self) -> GeometrySpec {
        match self {
            ManufacturedCase::OneCell => GeometrySpec::PlusCell { resolution: 1 },
            ManufacturedCase::LowReg { .. } => GeometrySpec::LShapedCell { resolution: 1 },
            ManufacturedCase::TwoCell => GeometrySpec::TwoCell { resolution: 1 },
        }
    }

    pub fn coefficients(&self) -> CoefficientSet {
        match self {
            ManufacturedCase::TwoCell => CoefficientSet::isotropic(&[1.0, 2.0, 3.0]),
            _ => CoefficientSet::isotropic(&[1.0, 2.0]),
        }
    }

    pub fn boundary_condition(&self) -> BoundaryCondition {
        match self {
            ManufacturedCase::LowReg { .. } => BoundaryCondition::Dirichlet,
            _ => BoundaryCondition::NeumannData,
        }
    }

    /// The membrane current of every case lives in the facet correction.
    pub fn membrane_model(&self) -> MembraneModel {
        MembraneModel::PassiveLinear { conductance: 0.0 }
    }

    /// Step size rule: a fixed short grid for the low-regularity case, a
    /// tenth of the mesh size otherwise.
    pub fn time_grid(&self, h: f64) -> Result<TimeGrid, TimeError> {
        match self {
            ManufacturedCase::OneCell => TimeGrid::from_horizon(ONECELL_HORIZON, h / 10.0),
            ManufacturedCase::TwoCell => TimeGrid::from_horizon(TWOCELL_HORIZON, h / 10.0),
            ManufacturedCase::LowReg { .. } => Ok(TimeGrid {
                tau: LOWREG_TAU,
                n_steps: LOWREG_STEPS,
            }),
        }
    }

    /// Exact interface jump at the initial time, lower-label side minus
    /// higher-label side, projected facet-wise.
    pub fn initial_jump(&self, iface: &InterfaceSpace) -> Vec<f64> {
        iface.project(|pair, x| self.value(pair.0, x, 0.0) - self.value(pair.1, x, 0.0))
    }

    fn time_derivative(&self, label: u32, x: [f64; 2], t: f64) -> f64 {
        match self {
            ManufacturedCase::OneCell => {
                if label == 0 {
                    -ONECELL_OMEGA * ((x[0] + x[1]) * PI).sin() * (-ONECELL_OMEGA * t).exp()
                } else {
                    0.0
                }
            }
            ManufacturedCase::LowReg { s } => {
                let base = singular_value(*s, x);
                if label == 0 {
                    base
                } else {
                    base + x[0] + x[1]
                }
            }
            ManufacturedCase::TwoCell => twocell_shape(label, x),
        }
    }

    fn kappa_scalar(&self, label: u32) -> f64 {
        match self {
            ManufacturedCase::TwoCell => 1.0 + label as f64,
            _ => {
                if label == 0 {
                    1.0
                } else {
                    2.0
                }
            }
        }
    }
}

fn twocell_shape(label: u32, x: [f64; 2]) -> f64 {
    match label {
        0 => ((x[0] + x[1]) * PI).sin(),
        1 => ((x[0] - x[1]) * 2.0 * PI).cos(),
        _ => ((x[0] + x[1]) * 2.0 * PI).sin(),
    }
}

fn twocell_shape_gradient(label: u32, x: [f64; 2]) -> [f64; 2] {
    match label {
        0 => {
            let c = PI * ((x[0] + x[1]) * PI).cos();
            [c, c]
        }
        1 => {
            let s = -2.0 * PI * ((x[0] - x[1]) * 2.0 * PI).sin();
            [s, -s]
        }
        _ => {
            let c = 2.0 * PI * ((x[0] + x[1]) * 2.0 * PI).cos();
            [c, c]
        }
    }
}

/// `r^s sin(s theta)` with the angle measured in `(-pi, pi]`; the branch cut
/// lies in the quadrant removed from the L-shaped domain.
fn singular_value(s: f64, x: [f64; 2]) -> f64 {
    let r = x[1].hypot(x[0]);
    if r == 0.0 {
        return 0.0;
    }
    let theta = x[1].atan2(x[0]);
    r.powf(s) * (s * theta).sin()
}

fn singular_gradient(s: f64, x: [f64; 2]) -> [f64; 2] {
    let r = x[1].hypot(x[0]);
    if r == 0.0 {
        return [0.0, 0.0];
    }
    let theta = x[1].atan2(x[0]);
    let scale = s * r.powf(s - 1.0);
    [
        scale * ((s - 1.0) * theta).sin(),
        scale * ((s - 1.0) * theta).cos(),
    ]
}

impl ExactSolution for ManufacturedCase {
    fn value(&self, label: u32, x: [f64; 2], t: f64) -> f64 {
        match self {
            ManufacturedCase::OneCell => {
                if label == 0 {
                    ((x[0] + x[1]) * PI).sin() * (-ONECELL_OMEGA * t).exp()
                } else {
                    ((x[0] - x[1]) * 2.0 * PI).cos()
                }
            }
            ManufacturedCase::LowReg { s } => {
                let base = (1.0 + t) * singular_value(*s, x);
                if label == 0 {
                    base
                } else {
                    base + (1.0 + t) * (x[0] + x[1])
                }
            }
            ManufacturedCase::TwoCell => t * twocell_shape(label, x),
        }
    }

    fn gradient(&self, label: u32, x: [f64; 2], t: f64) -> [f64; 2] {
        match self {
            ManufacturedCase::OneCell => {
                if label == 0 {
                    let c = PI * ((x[0] + x[1]) * PI).cos() * (-ONECELL_OMEGA * t).exp();
                    [c, c]
                } else {
                    let s = -2.0 * PI * ((x[0] - x[1]) * 2.0 * PI).sin();
                    [s, -s]
                }
            }
            ManufacturedCase::LowReg { s } => {
                let g = singular_gradient(*s, x);
                if label == 0 {
                    [(1.0 + t) * g[0], (1.0 + t) * g[1]]
                } else {
                    [(1.0 + t) * (g[0] + 1.0), (1.0 + t) * (g[1] + 1.0)]
                }
            }
            ManufacturedCase::TwoCell => {
                let g = twocell_shape_gradient(label, x);
                [t * g[0], t * g[1]]
            }
        }
    }
}

impl ProblemData for ManufacturedCase {
    fn volume_source(&self, label: u32, x: [f64; 2], t: f64) -> f64 {
        match self {
            ManufacturedCase::OneCell => {
                if label == 0 {
                    2.0 * PI * PI * ((x[0] + x[1]) * PI).sin() * (-ONECELL_OMEGA * t).exp()
                } else {
                    16.0 * PI * PI * ((x[0] - x[1]) * 2.0 * PI).cos()
                }
            }
            ManufacturedCase::LowReg { .. } => 0.0,
            ManufacturedCase::TwoCell => {
                let k = self.kappa_scalar(label);
                match label {
                    0 => k * 2.0 * PI * PI * t * ((x[0] + x[1]) * PI).sin(),
                    1 => k * 8.0 * PI * PI * t * ((x[0] - x[1]) * 2.0 * PI).cos(),
                    _ => k * 8.0 * PI * PI * t * ((x[0] + x[1]) * 2.0 * PI).sin(),
                }
            }
        }
    }

    fn membrane_source(&self, pair: (u32, u32), x: [f64; 2], normal: [f64; 2], t: f64) -> f64 {
        let g_in = self.gradient(pair.0, x, t);
        let flux_in = self.kappa_scalar(pair.0) * (g_in[0] * normal[0] + g_in[1] * normal[1]);
        let jump_rate = self.time_derivative(pair.0, x, t) - self.time_derivative(pair.1, x, t);
        -flux_in - jump_rate
    }

    fn flux_jump(&self, pair: (u32, u32), x: [f64; 2], normal: [f64; 2], t: f64) -> f64 {
        let g_in = self.gradient(pair.0, x, t);
        let g_out = self.gradient(pair.1, x, t);
        let flux_in = self.kappa_scalar(pair.0) * (g_in[0] * normal[0] + g_in[1] * normal[1]);
        let flux_out = self.kappa_scalar(pair.1) * (g_out[0] * normal[0] + g_out[1] * normal[1]);
        flux_in - flux_out
    }

    fn boundary_flux(&self, x: [f64; 2], normal: [f64; 2], t: f64) -> f64 {
        let g = self.gradient(0, x, t);
        -self.kappa_scalar(0) * (g[0] * normal[0] + g[1] * normal[1])
    }

    fn boundary_value(&self, x: [f64; 2], t: f64) -> f64 {
        self.value(0, x, t)
    }
}
