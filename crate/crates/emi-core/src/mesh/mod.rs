//! Conforming triangle meshes with subdomain labels and classified facets.
//!
//! Subdomain label 0 is the extracellular region; labels 1.. are cells.
//! Membrane facets separate two different labels and are stored with the
//! ordered pair (i, j), i < j; the facet normal points from the side
//! labelled i into the side labelled j, and jumps are evaluated as the
//! trace from side i minus the trace from side j.

mod geometry;
mod io;

pub use geometry::GeometrySpec;
pub use io::{read_mesh, write_mesh};

use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("geometry parameter out of range: {0}")]
    BadGeometry(String),
    #[error("mesh is not conforming: {0}")]
    NonConforming(String),
    #[error("triangle {0} has non-positive orientation")]
    BadOrientation(usize),
    #[error("subdomain label {0} not present in mesh")]
    UnknownSubdomain(u32),
    #[error("facet shared by more than two triangles ({v0}, {v1})")]
    OverSharedFacet { v0: usize, v1: usize },
    #[error("facet-class override refers to missing facet ({v0}, {v1})")]
    MissingOverrideFacet { v0: usize, v1: usize },
    #[error("facet-class override conflicts with subdomain labels: {0}")]
    InconsistentOverride(String),
    #[error("mesh file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Classification of a mesh facet by the subdomains it touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FacetClass {
    /// Interior facet with the extracellular region on both sides.
    InteriorExtra,
    /// Interior facet inside cell `i` (same label on both sides).
    InteriorIntra(u32),
    /// Facet between subdomains i and j (always stored with i < j).
    Membrane(u32, u32),
    /// Facet on the outer boundary of the computational domain.
    OuterBoundary,
}

impl FacetClass {
    pub fn is_membrane(&self) -> bool {
        matches!(self, FacetClass::Membrane(_, _))
    }

    pub fn membrane_pair(&self) -> Option<(u32, u32)> {
        match *self {
            FacetClass::Membrane(i, j) => Some((i, j)),
            _ => None,
        }
    }
}

/// A mesh facet (edge shared by one or two triangles).
#[derive(Debug, Clone)]
pub struct Facet {
    /// Endpoint vertex ids, ordered so `vertices[0] < vertices[1]`; the
    /// parametrisation used by facet quadrature runs from the first to the
    /// second endpoint.
    pub vertices: [usize; 2],
    /// Adjacent triangle on the side the stored normal points away from.
    pub elem_in: usize,
    /// Adjacent triangle on the side the normal points into (None on the
    /// outer boundary).
    pub elem_out: Option<usize>,
    pub class: FacetClass,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Subdomain label per triangle.
    pub labels: Vec<u32>,
    pub facets: Vec<Facet>,
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

/// Derive the facet class of an interior facet from its two labels.
fn class_of_pair(a: u32, b: u32) -> FacetClass {
    if a == b {
        if a == 0 {
            FacetClass::InteriorExtra
        } else {
            FacetClass::InteriorIntra(a)
        }
    } else {
        FacetClass::Membrane(a.min(b), a.max(b))
    }
}

/// Build the facet table of a labelled triangulation.
///
/// For a membrane facet the triangle with the smaller label becomes
/// `elem_in`, fixing the normal orientation from the smaller towards the
/// larger label. Fails if an edge is shared by more than two triangles.
pub fn classify_facets(
    vertices: &[[f64; 2]],
    triangles: &[[usize; 3]],
    labels: &[u32],
) -> Result<Vec<Facet>, MeshError> {
    let mut edge_map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for e in 0..3 {
            let a = tri[e];
            let b = tri[(e + 1) % 3];
            let key = (a.min(b), a.max(b));
            edge_map.entry(key).or_default().push(t);
        }
    }
    let mut keys: Vec<(usize, usize)> = edge_map.keys().copied().collect();
    keys.sort_unstable();
    let mut facets = Vec::with_capacity(keys.len());
    for key in keys {
        let elems = &edge_map[&key];
        if elems.len() > 2 {
            return Err(MeshError::OverSharedFacet {
                v0: key.0,
                v1: key.1,
            });
        }
        let facet = if elems.len() == 1 {
            Facet {
                vertices: [key.0, key.1],
                elem_in: elems[0],
                elem_out: None,
                class: FacetClass::OuterBoundary,
            }
        } else {
            let (mut e0, mut e1) = (elems[0], elems[1]);
            if labels[e1] < labels[e0] {
                std::mem::swap(&mut e0, &mut e1);
            }
            Facet {
                vertices: [key.0, key.1],
                elem_in: e0,
                elem_out: Some(e1),
                class: class_of_pair(labels[e0], labels[e1]),
            }
        };
        facets.push(facet);
    }
    let _ = vertices;
    Ok(facets)
}

impl Mesh {
    /// Assemble a mesh from raw arrays, classifying facets and checking
    /// orientation.
    pub fn from_arrays(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        labels: Vec<u32>,
    ) -> Result<Self, MeshError> {
        if triangles.len() != labels.len() {
            return Err(MeshError::NonConforming(format!(
                "{} triangles but {} labels",
                triangles.len(),
                labels.len()
            )));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]) <= 0.0 {
                return Err(MeshError::BadOrientation(t));
            }
        }
        let facets = classify_facets(&vertices, &triangles, &labels)?;
        Ok(Mesh {
            vertices,
            triangles,
            labels,
            facets,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Largest label + 1 (number of subdomains including extracellular).
    pub fn n_subdomains(&self) -> u32 {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    pub fn element_vertices(&self, t: usize) -> [[f64; 2]; 3] {
        let tri = self.triangles[t];
        [
            self.vertices[tri[0]],
            self.vertices[tri[1]],
            self.vertices[tri[2]],
        ]
    }

    pub fn element_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.element_vertices(t);
        signed_area(a, b, c)
    }

    pub fn element_centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.element_vertices(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn element_diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.element_vertices(t);
        let d = |p: [f64; 2], q: [f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
        d(a, b).max(d(b, c)).max(d(c, a))
    }

    pub fn max_element_diameter(&self) -> f64 {
        (0..self.n_elements())
            .map(|t| self.element_diameter(t))
            .fold(0.0, f64::max)
    }

    pub fn facet_endpoints(&self, f: usize) -> ([f64; 2], [f64; 2]) {
        let fc = &self.facets[f];
        (self.vertices[fc.vertices[0]], self.vertices[fc.vertices[1]])
    }

    pub fn facet_length(&self, f: usize) -> f64 {
        let (a, b) = self.facet_endpoints(f);
        ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
    }

    pub fn facet_midpoint(&self, f: usize) -> [f64; 2] {
        let (a, b) = self.facet_endpoints(f);
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// Unit normal of the facet, pointing out of `elem_in` (for membrane
    /// facets: from the smaller towards the larger label).
    pub fn facet_normal(&self, f: usize) -> [f64; 2] {
        let (a, b) = self.facet_endpoints(f);
        let len = self.facet_length(f);
        let mut n = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
        let mid = self.facet_midpoint(f);
        let cen = self.element_centroid(self.facets[f].elem_in);
        if n[0] * (mid[0] - cen[0]) + n[1] * (mid[1] - cen[1]) < 0.0 {
            n = [-n[0], -n[1]];
        }
        n
    }

    pub fn membrane_facets(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.facets.len()).filter(|&f| self.facets[f].class.is_membrane())
    }

    pub fn total_membrane_length(&self) -> f64 {
        self.membrane_facets().map(|f| self.facet_length(f)).sum()
    }

    /// Sorted list of distinct membrane pairs present in the mesh.
    pub fn membrane_pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs: Vec<(u32, u32)> = self
            .facets
            .iter()
            .filter_map(|f| f.class.membrane_pair())
            .collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    pub fn subdomain_area(&self, label: u32) -> f64 {
        (0..self.n_elements())
            .filter(|&t| self.labels[t] == label)
            .map(|t| self.element_area(t))
            .sum()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_elements()).map(|t| self.element_area(t)).sum()
    }

    /// Diameter of a subdomain by brute force over its vertices.
    pub fn subdomain_diameter(&self, label: u32) -> Result<f64, MeshError> {
        let mut used = vec![false; self.n_vertices()];
        let mut any = false;
        for (t, tri) in self.triangles.iter().enumerate() {
            if self.labels[t] == label {
                any = true;
                for &v in tri {
                    used[v] = true;
                }
            }
        }
        if !any {
            return Err(MeshError::UnknownSubdomain(label));
        }
        let pts: Vec<[f64; 2]> = (0..self.n_vertices())
            .filter(|&v| used[v])
            .map(|v| self.vertices[v])
            .collect();
        let mut best: f64 = 0.0;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let d2 = (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2);
                best = best.max(d2);
            }
        }
        Ok(best.sqrt())
    }

    /// Uniform refinement: every triangle splits into four congruent
    /// children; subdomain labels are inherited and facets reclassified.
    pub fn refine_uniform(&self) -> Mesh {
        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
            let key = (a.min(b), a.max(b));
            if let Some(&m) = midpoint.get(&key) {
                return m;
            }
            let pa = vertices[key.0];
            let pb = vertices[key.1];
            let m = vertices.len();
            vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            midpoint.insert(key, m);
            m
        };
        let mut triangles = Vec::with_capacity(4 * self.n_elements());
        let mut labels = Vec::with_capacity(4 * self.n_elements());
        for (t, tri) in self.triangles.iter().enumerate() {
            let [v0, v1, v2] = *tri;
            let m01 = mid(v0, v1, &mut vertices);
            let m12 = mid(v1, v2, &mut vertices);
            let m02 = mid(v0, v2, &mut vertices);
            triangles.push([v0, m01, m02]);
            triangles.push([m01, v1, m12]);
            triangles.push([m02, m12, v2]);
            triangles.push([m01, m12, m02]);
            for _ in 0..4 {
                labels.push(self.labels[t]);
            }
        }
        Mesh::from_arrays(vertices, triangles, labels)
            .expect("refinement of a valid mesh stays valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_minimal_counts() {
        let mesh = GeometrySpec::UnitSquare { resolution: 1 }.build().unwrap();
        assert_eq!(mesh.n_elements(), 2);
        let interior = mesh
            .facets
            .iter()
            .filter(|f| f.class != FacetClass::OuterBoundary)
            .count();
        let boundary = mesh
            .facets
            .iter()
            .filter(|f| f.class == FacetClass::OuterBoundary)
            .count();
        assert_eq!(interior, 1);
        assert_eq!(boundary, 4);
    }

    #[test]
    fn plus_cell_membrane_pairs_and_length() {
        let mesh = GeometrySpec::PlusCell { resolution: 1 }.build().unwrap();
        assert_eq!(mesh.membrane_pairs(), vec![(0, 1)]);
        let len = mesh.total_membrane_length();
        assert!((len - 3.0).abs() <= 1e-12 * 3.0, "membrane length {len}");
        let area1 = mesh.subdomain_area(1);
        assert!((area1 - 0.3125).abs() <= 1e-12);
        let area = mesh.total_area();
        assert!((area - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn plus_cell_refinement_doubles_membrane_facets_and_halves_h() {
        let mesh = GeometrySpec::PlusCell { resolution: 1 }.build().unwrap();
        let fine = mesh.refine_uniform();
        assert_eq!(fine.n_elements(), 4 * mesh.n_elements());
        assert_eq!(
            fine.membrane_facets().count(),
            2 * mesh.membrane_facets().count()
        );
        assert_eq!(fine.max_element_diameter(), 0.5 * mesh.max_element_diameter());
        assert!((fine.total_membrane_length() - 3.0).abs() <= 1e-12 * 3.0);
        // three refinements: diameters shrink by exactly 1/8 on this grid
        let f3 = fine.refine_uniform().refine_uniform();
        assert_eq!(f3.max_element_diameter(), mesh.max_element_diameter() / 8.0);
    }

    #[test]
    fn plus_cell_membrane_labels_are_zero_one() {
        for res in [1, 2] {
            let mesh = GeometrySpec::PlusCell { resolution: res }.build().unwrap();
            for f in mesh.membrane_facets() {
                assert_eq!(mesh.facets[f].class, FacetClass::Membrane(0, 1));
                let fc = &mesh.facets[f];
                assert_eq!(mesh.labels[fc.elem_in], 0);
                assert_eq!(mesh.labels[fc.elem_out.unwrap()], 1);
            }
        }
    }

    #[test]
    fn membrane_normal_points_from_lower_into_higher_label() {
        let mesh = GeometrySpec::TwoCell { resolution: 1 }.build().unwrap();
        for f in mesh.membrane_facets() {
            let fc = &mesh.facets[f];
            let (i, j) = fc.class.membrane_pair().unwrap();
            assert!(i < j);
            assert_eq!(mesh.labels[fc.elem_in], i);
            assert_eq!(mesh.labels[fc.elem_out.unwrap()], j);
            let n = mesh.facet_normal(f);
            let mid = mesh.facet_midpoint(f);
            let into = mesh.element_centroid(fc.elem_out.unwrap());
            assert!(n[0] * (into[0] - mid[0]) + n[1] * (into[1] - mid[1]) > 0.0);
        }
    }

    #[test]
    fn two_cell_geometry_has_three_interfaces() {
        let mesh = GeometrySpec::TwoCell { resolution: 1 }.build().unwrap();
        assert_eq!(mesh.membrane_pairs(), vec![(0, 1), (0, 2), (1, 2)]);
        let len_01: f64 = mesh
            .membrane_facets()
            .filter(|&f| mesh.facets[f].class == FacetClass::Membrane(0, 1))
            .map(|f| mesh.facet_length(f))
            .sum();
        let len_12: f64 = mesh
            .membrane_facets()
            .filter(|&f| mesh.facets[f].class == FacetClass::Membrane(1, 2))
            .map(|f| mesh.facet_length(f))
            .sum();
        assert!((len_01 - 1.0).abs() <= 1e-12);
        assert!((len_12 - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn l_shape_counts_match_combinatorial_oracle() {
        // 3 unit squares, n squares per unit side: 6n^2 triangles and
        // (3*3*2n^2 + 8n)/2 = 9n^2 + 4n facets, 8n of them on the boundary.
        let mesh = GeometrySpec::LShapedCell { resolution: 1 }.build().unwrap();
        let n = 4;
        assert_eq!(mesh.n_elements(), 6 * n * n);
        assert_eq!(mesh.facets.len(), 9 * n * n + 4 * n);
        let boundary = mesh
            .facets
            .iter()
            .filter(|f| f.class == FacetClass::OuterBoundary)
            .count();
        assert_eq!(boundary, 8 * n);
        assert!((mesh.total_area() - 3.0).abs() <= 1e-12 * 3.0);
        assert!((mesh.subdomain_area(1) - 0.25).abs() <= 1e-12);
        assert!((mesh.total_membrane_length() - 2.0).abs() <= 1e-12 * 2.0);
    }

    #[test]
    fn all_triangles_positively_oriented() {
        let specs = [
            GeometrySpec::PlusCell { resolution: 1 },
            GeometrySpec::LShapedCell { resolution: 1 },
            GeometrySpec::TwoCell { resolution: 1 },
            GeometrySpec::CellSheet {
                rows: 2,
                cols: 2,
                resolution: 1,
            },
        ];
        for spec in specs {
            let mesh = spec.build().unwrap();
            for t in 0..mesh.n_elements() {
                assert!(mesh.element_area(t) > 0.0);
            }
        }
    }

    #[test]
    fn no_triangle_has_two_membrane_facets() {
        let specs = [
            GeometrySpec::PlusCell { resolution: 1 },
            GeometrySpec::TwoCell { resolution: 1 },
            GeometrySpec::CellChain {
                cells: 3,
                resolution: 1,
            },
            GeometrySpec::CellSheet {
                rows: 2,
                cols: 3,
                resolution: 1,
            },
        ];
        for spec in specs {
            let mesh = spec.build().unwrap().refine_uniform();
            let mut count = vec![0usize; mesh.n_elements()];
            for f in mesh.membrane_facets() {
                let fc = &mesh.facets[f];
                count[fc.elem_in] += 1;
                count[fc.elem_out.unwrap()] += 1;
            }
            assert!(count.iter().all(|&c| c <= 1));
        }
    }

    #[test]
    fn elongated_strip_extracellular_diameter() {
        let mesh = GeometrySpec::ElongatedCell {
            length: 32,
            resolution: 1,
        }
        .build()
        .unwrap();
        let d = mesh.subdomain_diameter(0).unwrap();
        assert!((d - (32.0f64 * 32.0 + 1.0).sqrt()).abs() <= 1e-12 * d);
        assert!(mesh.subdomain_diameter(7).is_err());
    }

    #[test]
    fn plus_cell_subdomain_diameter_matches_brute_force_over_corners() {
        let mesh = GeometrySpec::PlusCell { resolution: 1 }.build().unwrap();
        let d = mesh.subdomain_diameter(1).unwrap();
        // farthest vertex pair of the plus: e.g. (0.125, 0.375)-(0.875, 0.625)
        assert!((d - 0.625f64.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn cell_chain_membrane_budget() {
        let c = 4u32;
        let mesh = GeometrySpec::CellChain {
            cells: c,
            resolution: 1,
        }
        .build()
        .unwrap();
        let pairs = mesh.membrane_pairs();
        assert!(pairs.contains(&(1, 2)) && pairs.contains(&(3, 4)));
        let want = 2.0 * c as f64 + 0.5 * (c as f64 - 1.0);
        assert!((mesh.total_membrane_length() - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn sheet_area_and_membrane_oracle() {
        let (rows, cols) = (3u32, 3u32);
        let mesh = GeometrySpec::CellSheet {
            rows,
            cols,
            resolution: 1,
        }
        .build()
        .unwrap();
        let cells = (rows * cols) as f64;
        let total = (rows as f64 + 1.0) * (cols as f64 + 1.0);
        assert!((mesh.total_area() - total).abs() <= 1e-12 * total);
        assert!((mesh.subdomain_area(1) - 0.5).abs() <= 1e-12);
        let junctions = (rows * (cols - 1) + cols * (rows - 1)) as f64;
        let want = cells * 4.0 - 0.25 * junctions;
        assert!((mesh.total_membrane_length() - want).abs() <= 1e-12 * want);
    }
}
