//! Core kernels for a two-dimensional discontinuous Galerkin solver of the
//! EMI (extracellular-membrane-intracellular) model of excitable cells.
//!
//! The crate is organised bottom-up:
//!
//! * [`quadrature`] and [`basis`] provide reference-element rules and an
//!   orthonormal modal basis on triangles,
//! * [`mesh`] builds and refines structured triangulations of the catalogued
//!   cell geometries and classifies facets into interior / membrane /
//!   boundary classes,
//! * [`space`] carries broken polynomial spaces and per-facet interface
//!   spaces together with trace and projection operators,
//! * [`forms`] assembles the interior-penalty operator, membrane coupling
//!   and load functionals, and evaluates norms and errors,
//! * [`lifting`] implements the interface lifting `L`, the jump-constrained
//!   solve and the interface solution operator `S`,
//! * [`membrane`] contains the membrane current models and their adaptive
//!   ODE integration,
//! * [`time`] drives backward Euler and operator-split transient runs,
//! * [`sheet`] assembles the stimulated multi-cell sheet demonstration on
//!   top of the transient driver,
//! * [`solver`] holds the sparse matrix type, fill-reducing orderings, the
//!   LDL^T factorisation, Krylov methods and the Riesz-map preconditioners,
//! * [`manufactured`] defines the closed-form test problems with their
//!   interface correction terms,
//! * [`vtk`] writes legacy-ASCII snapshots of transient fields.

pub mod basis;
pub mod forms;
pub mod lifting;
pub mod manufactured;
pub mod membrane;
pub mod mesh;
pub mod quadrature;
pub mod sheet;
pub mod solver;
pub mod space;
pub mod study;
pub mod time;
pub mod vtk;

pub use forms::{BoundaryCondition, CoefficientSet, ErrorNorms, ExactSolution, ProblemData};
pub use lifting::{ConstrainedSubspaceSolver, InterfaceFunction};
pub use membrane::{
    AlievPanfilov, MembraneAssignment, MembraneModel, MembraneState, Stimulus, StimulusSelector,
};
pub use manufactured::ManufacturedCase;
pub use mesh::{FacetClass, GeometrySpec, Mesh};
pub use sheet::{run_sheet, CellTrace, SheetConfig, SheetRun};
pub use time::{Observer, Scheme, SolverBackend, TimeGrid, TimeStepper, TransientProblem, TransientState};
pub use space::{DgSpace, FieldVector, InterfaceSpace};
