//! Sparse direct and iterative linear algebra.

pub mod krylov;
pub mod ldl;
pub mod ordering;
pub mod riesz;
pub mod sparse;

pub use krylov::{minres, minres_with_log, pcg, IterationStats};
pub use ldl::{LdlError, LdlFactor};
pub use riesz::{
    robustness_point, robustness_study, solve_saddle, CellFamily, RieszError, RieszKind,
    RieszPreconditioner, RobustnessRow, SaddleSolve, SaddleSystem,
};
pub use sparse::{spmm, CooMatrix, CsrMatrix, SparseError};

use crate::mesh::Mesh;

/// Fill-reducing dof ordering for systems with `block` dofs per element.
pub fn element_block_order(mesh: &Mesh, block: usize) -> Vec<usize> {
    let adj = ordering::element_adjacency(mesh);
    let coords: Vec<[f64; 2]> = (0..mesh.n_elements())
        .map(|e| mesh.element_centroid(e))
        .collect();
    let elems = ordering::nested_dissection(&adj, &coords);
    ordering::expand_blocks(&elems, block)
}

/// Same ordering with one extra trailing index for a multiplier row.
pub fn element_block_order_bordered(mesh: &Mesh, block: usize) -> Vec<usize> {
    let mut order = element_block_order(mesh, block);
    order.push(order.len());
    order
}
