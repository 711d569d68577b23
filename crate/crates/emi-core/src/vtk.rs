//! Legacy-ASCII snapshot writer for broken polynomial fields.
//!
//! Every element contributes its own copy of its three corner points, so the
//! written point values keep the inter-element jumps of the field instead of
//! averaging them away at shared vertices.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::space::{DgSpace, FieldVector};

const TRIANGLE_CELL_TYPE: u8 = 5;

/// Write one unstructured-grid snapshot: the field sampled at the duplicated
/// element corners as the point scalar `u`, the subdomain label as the cell
/// scalar `subdomain`.
pub fn write_snapshot<W: Write>(
    space: &DgSpace,
    field: &FieldVector,
    title: &str,
    out: W,
) -> io::Result<()> {
    assert_eq!(field.len(), space.dim(), "field size mismatch");
    let mesh = &space.mesh;
    let n_elem = mesh.n_elements();
    let mut w = BufWriter::new(out);

    writeln!(w, "# vtk DataFile Version 3.0")?;
    let clean: String = title
        .chars()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .take(255)
        .collect();
    writeln!(w, "{clean}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;

    writeln!(w, "POINTS {} double", 3 * n_elem)?;
    for e in 0..n_elem {
        for v in mesh.element_vertices(e) {
            writeln!(w, "{:.17e} {:.17e} 0.0", v[0], v[1])?;
        }
    }

    writeln!(w, "CELLS {} {}", n_elem, 4 * n_elem)?;
    for e in 0..n_elem {
        writeln!(w, "3 {} {} {}", 3 * e, 3 * e + 1, 3 * e + 2)?;
    }
    writeln!(w, "CELL_TYPES {n_elem}")?;
    for _ in 0..n_elem {
        writeln!(w, "{TRIANGLE_CELL_TYPE}")?;
    }

    writeln!(w, "POINT_DATA {}", 3 * n_elem)?;
    writeln!(w, "SCALARS u double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for e in 0..n_elem {
        let map = space.map(e);
        for v in mesh.element_vertices(e) {
            let value = space.eval_ref(field, e, map.to_reference(v));
            writeln!(w, "{value:.17e}")?;
        }
    }

    writeln!(w, "CELL_DATA {n_elem}")?;
    writeln!(w, "SCALARS subdomain int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for &label in &mesh.labels {
        writeln!(w, "{label}")?;
    }
    w.flush()
}

/// Write a snapshot to the given path, creating parent directories.
pub fn write_snapshot_file<P: AsRef<Path>>(
    space: &DgSpace,
    field: &FieldVector,
    title: &str,
    path: P,
) -> io::Result<()> {
    if let Some(parent) = path.as_ref().parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_snapshot(space, field, title, File::create(path)?)
}
