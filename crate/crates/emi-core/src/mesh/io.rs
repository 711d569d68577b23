//! Plain-text mesh exchange format.
//!
//! ```text
//! emimesh 1
//! vertices <n>
//! <x> <y>
//! triangles <m>
//! <v0> <v1> <v2> <label>
//! facet_classes <k>          # optional
//! <va> <vb> <class> [<i> <j>]
//! ```
//!
//! Coordinates are written with the shortest representation that parses
//! back to the identical f64, so a write/read cycle is bit-exact. The
//! optional facet-class table is validated against the classes derived
//! from the subdomain labels; a conflicting entry is rejected.

use super::{FacetClass, Mesh, MeshError};
use std::fmt::Write as _;
use std::path::Path;

pub fn write_mesh_string(mesh: &Mesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "emimesh 1");
    let _ = writeln!(out, "vertices {}", mesh.n_vertices());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {}", v[0], v[1]);
    }
    let _ = writeln!(out, "triangles {}", mesh.n_elements());
    for (tri, label) in mesh.triangles.iter().zip(&mesh.labels) {
        let _ = writeln!(out, "{} {} {} {}", tri[0], tri[1], tri[2], label);
    }
    out
}

pub fn write_mesh<P: AsRef<Path>>(mesh: &Mesh, path: P) -> Result<(), MeshError> {
    std::fs::write(path, write_mesh_string(mesh))?;
    Ok(())
}

struct LineParser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineParser<'a> {
    fn new(text: &'a str) -> Self {
        LineParser {
            lines: text.lines().enumerate(),
        }
    }

    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (idx, line) in self.lines.by_ref() {
            let trimmed = match line.find('#') {
                Some(p) => line[..p].trim(),
                None => line.trim(),
            };
            if !trimmed.is_empty() {
                return Some((idx + 1, trimmed));
            }
        }
        None
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn read_mesh_string(text: &str) -> Result<Mesh, MeshError> {
    let mut parser = LineParser::new(text);
    let (ln, header) = parser
        .next_content()
        .ok_or_else(|| parse_err(0, "empty mesh file"))?;
    if header != "emimesh 1" {
        return Err(parse_err(ln, format!("unknown header '{header}'")));
    }

    let (ln, vline) = parser
        .next_content()
        .ok_or_else(|| parse_err(0, "missing vertex section"))?;
    let nv: usize = vline
        .strip_prefix("vertices ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(ln, "expected 'vertices <n>'"))?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, line) = parser
            .next_content()
            .ok_or_else(|| parse_err(0, "vertex table ends early"))?;
        let mut it = line.split_whitespace();
        let x: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(ln, "bad vertex x"))?;
        let y: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(ln, "bad vertex y"))?;
        vertices.push([x, y]);
    }

    let (ln, tline) = parser
        .next_content()
        .ok_or_else(|| parse_err(0, "missing triangle section"))?;
    let nt: usize = tline
        .strip_prefix("triangles ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| parse_err(ln, "expected 'triangles <n>'"))?;
    let mut triangles = Vec::with_capacity(nt);
    let mut labels = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, line) = parser
            .next_content()
            .ok_or_else(|| parse_err(0, "triangle table ends early"))?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != 4 {
            return Err(parse_err(ln, "expected 'v0 v1 v2 label'"));
        }
        let mut ids = [0usize; 3];
        for (k, slot) in ids.iter_mut().enumerate() {
            *slot = vals[k]
                .parse()
                .map_err(|_| parse_err(ln, "bad vertex id"))?;
            if *slot >= nv {
                return Err(parse_err(ln, "vertex id out of range"));
            }
        }
        let label: u32 = vals[3]
            .parse()
            .map_err(|_| parse_err(ln, "bad subdomain label"))?;
        triangles.push(ids);
        labels.push(label);
    }

    let mesh = Mesh::from_arrays(vertices, triangles, labels)?;

    // Optional facet-class table: validated against derived classes.
    if let Some((ln, fline)) = parser.next_content() {
        let nf: usize = fline
            .strip_prefix("facet_classes ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| parse_err(ln, "expected 'facet_classes <n>'"))?;
        for _ in 0..nf {
            let (ln, line) = parser
                .next_content()
                .ok_or_else(|| parse_err(0, "facet table ends early"))?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() < 3 {
                return Err(parse_err(ln, "expected 'va vb class [i j]'"));
            }
            let va: usize = vals[0].parse().map_err(|_| parse_err(ln, "bad vertex"))?;
            let vb: usize = vals[1].parse().map_err(|_| parse_err(ln, "bad vertex"))?;
            let key = [va.min(vb), va.max(vb)];
            let facet = mesh
                .facets
                .iter()
                .find(|f| f.vertices == key)
                .ok_or(MeshError::MissingOverrideFacet {
                    v0: key[0],
                    v1: key[1],
                })?;
            let declared = match vals[2] {
                "boundary" => FacetClass::OuterBoundary,
                "interior_extra" => FacetClass::InteriorExtra,
                "interior_intra" => {
                    let i: u32 = vals
                        .get(3)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(ln, "interior_intra needs a label"))?;
                    FacetClass::InteriorIntra(i)
                }
                "membrane" => {
                    let i: u32 = vals
                        .get(3)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(ln, "membrane needs two labels"))?;
                    let j: u32 = vals
                        .get(4)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| parse_err(ln, "membrane needs two labels"))?;
                    FacetClass::Membrane(i, j)
                }
                other => return Err(parse_err(ln, format!("unknown facet class '{other}'"))),
            };
            if facet.class != declared {
                return Err(MeshError::InconsistentOverride(format!(
                    "facet ({}, {}) declared {:?} but labels imply {:?}",
                    key[0], key[1], declared, facet.class
                )));
            }
        }
    }
    Ok(mesh)
}

pub fn read_mesh<P: AsRef<Path>>(path: P) -> Result<Mesh, MeshError> {
    read_mesh_string(&std::fs::read_to_string(path)?)
}
