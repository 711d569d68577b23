//! Fill-reducing orderings for the sparse factorisation.
//!
//! The system matrices couple whole elements, so the ordering works on the
//! element connectivity graph and is afterwards expanded block-wise to the
//! degrees of freedom. Geometric nested dissection with one-layer vertex
//! separators is used: the element set is split at the coordinate median
//! of its wider axis, the boundary layer of the upper half becomes the
//! separator and is numbered last.

use crate::mesh::Mesh;

/// Element adjacency through shared facets, membrane facets included.
pub fn element_adjacency(mesh: &Mesh) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); mesh.n_elements()];
    for f in &mesh.facets {
        if let Some(out) = f.elem_out {
            adj[f.elem_in].push(out);
            adj[out].push(f.elem_in);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Returns `order` with `order[k] = old index of the k-th pivot`.
pub fn nested_dissection(adj: &[Vec<usize>], coords: &[[f64; 2]]) -> Vec<usize> {
    assert_eq!(adj.len(), coords.len());
    let mut order = Vec::with_capacity(adj.len());
    let nodes: Vec<usize> = (0..adj.len()).collect();
    let mut in_set = vec![false; adj.len()];
    dissect(&nodes, adj, coords, &mut in_set, &mut order);
    order
}

fn dissect(
    nodes: &[usize],
    adj: &[Vec<usize>],
    coords: &[[f64; 2]],
    in_set: &mut [bool],
    order: &mut Vec<usize>,
) {
    if nodes.len() <= 24 {
        order.extend_from_slice(nodes);
        return;
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for &v in nodes {
        for d in 0..2 {
            lo[d] = lo[d].min(coords[v][d]);
            hi[d] = hi[d].max(coords[v][d]);
        }
    }
    let axis = usize::from(hi[1] - lo[1] > hi[0] - lo[0]);
    let mut sorted = nodes.to_vec();
    sorted.sort_by(|&a, &b| {
        coords[a][axis]
            .partial_cmp(&coords[b][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mid = sorted.len() / 2;
    let (half_a, half_b) = sorted.split_at(mid);

    for &v in half_a {
        in_set[v] = true;
    }
    // boundary layer of B facing A separates the halves
    let mut separator = Vec::new();
    let mut rest_b = Vec::new();
    for &v in half_b {
        if adj[v].iter().any(|&u| in_set[u]) {
            separator.push(v);
        } else {
            rest_b.push(v);
        }
    }
    for &v in half_a {
        in_set[v] = false;
    }

    dissect(half_a, adj, coords, in_set, order);
    dissect(&rest_b, adj, coords, in_set, order);
    order.extend_from_slice(&separator);
}

/// Expand an element ordering to `block` consecutive dofs per element.
pub fn expand_blocks(elem_order: &[usize], block: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(elem_order.len() * block);
    for &e in elem_order {
        for a in 0..block {
            out.push(e * block + a);
        }
    }
    out
}
