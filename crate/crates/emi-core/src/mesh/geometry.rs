//! Catalogue of cell geometries, meshed on structured square grids.
//!
//! Every geometry keeps its interfaces on grid lines, so squares never
//! straddle a subdomain boundary. Each square is split into two triangles;
//! the diagonal is chosen per square so that no triangle carries more than
//! one membrane edge, which the interface lifting and the jump-continuous
//! subspace both rely on.

use super::{Mesh, MeshError};

/// Parameterised geometry descriptions for the experiment suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometrySpec {
    /// Unit square without any cell (utility geometry). `resolution` is the
    /// number of squares per side.
    UnitSquare { resolution: u32 },
    /// Unit square with a plus-shaped cell of width and height 0.75.
    PlusCell { resolution: u32 },
    /// L-shaped domain (-1,1)^2 minus (-1,0)^2 with cell (0.25,0.75)^2.
    LShapedCell { resolution: u32 },
    /// Unit square with two box cells in contact along x = 0.5.
    TwoCell { resolution: u32 },
    /// Strip (0,L) x (0,1) with one elongated cell of length L - 0.5.
    ElongatedCell { length: u32, resolution: u32 },
    /// Strip (0,L) x (0,1) with a chain of L cells in contact.
    CellChain { cells: u32, resolution: u32 },
    /// Sheet of rows x cols plus-shaped cells in contact through their
    /// arms, surrounded by an extracellular margin of width 0.5.
    CellSheet { rows: u32, cols: u32, resolution: u32 },
}

struct GridPlan {
    x0: f64,
    y0: f64,
    nx: usize,
    ny: usize,
    h: f64,
    in_domain: Box<dyn Fn(f64, f64) -> bool>,
    region: Box<dyn Fn(f64, f64) -> u32>,
    /// (total area, per-label areas, total membrane length)
    expected: (f64, Vec<f64>, f64),
}

fn in_open(x: f64, lo: f64, hi: f64) -> bool {
    x > lo && x < hi
}

/// Plus shape spanning [cx-0.375, cx+0.375]^2 with arm width 0.25.
fn in_plus_of_extent(x: f64, y: f64, cx: f64, cy: f64) -> bool {
    let (dx, dy) = (x - cx, y - cy);
    (in_open(dx, -0.125, 0.125) && in_open(dy, -0.375, 0.375))
        || (in_open(dy, -0.125, 0.125) && in_open(dx, -0.375, 0.375))
}

/// Full-extent plus filling a unit tile: centre block (0.25,0.75)^2 plus
/// four arms of width 0.25 reaching the tile edges.
fn in_plus_full_tile(lx: f64, ly: f64) -> bool {
    (in_open(lx, 0.25, 0.75) && in_open(ly, 0.25, 0.75))
        || (in_open(lx, 0.375, 0.625) && in_open(ly, 0.0, 1.0))
        || (in_open(ly, 0.375, 0.625) && in_open(lx, 0.0, 1.0))
}

impl GeometrySpec {
    fn plan(&self) -> Result<GridPlan, MeshError> {
        let bad = |msg: &str| Err(MeshError::BadGeometry(msg.to_string()));
        match *self {
            GeometrySpec::UnitSquare { resolution } => {
                if resolution == 0 {
                    return bad("unit square needs resolution >= 1");
                }
                let n = resolution as usize;
                Ok(GridPlan {
                    x0: 0.0,
                    y0: 0.0,
                    nx: n,
                    ny: n,
                    h: 1.0 / n as f64,
                    in_domain: Box::new(|_, _| true),
                    region: Box::new(|_, _| 0),
                    expected: (1.0, vec![1.0], 0.0),
                })
            }
            GeometrySpec::PlusCell { resolution } => {
                if resolution == 0 {
                    return bad("plus-cell geometry needs resolution >= 1");
                }
                let n = 8 * resolution as usize;
                Ok(GridPlan {
                    x0: 0.0,
                    y0: 0.0,
                    nx: n,
                    ny: n,
                    h: 1.0 / n as f64,
                    in_domain: Box::new(|_, _| true),
                    region: Box::new(|x, y| u32::from(in_plus_of_extent(x, y, 0.5, 0.5))),
                    expected: (1.0, vec![0.6875, 0.3125], 3.0),
                })
            }
            GeometrySpec::LShapedCell { resolution } => {
                if resolution == 0 {
                    return bad("L-shaped geometry needs resolution >= 1");
                }
                let n = 8 * resolution as usize;
                Ok(GridPlan {
                    x0: -1.0,
                    y0: -1.0,
                    nx: n,
                    ny: n,
                    h: 2.0 / n as f64,
                    in_domain: Box::new(|x, y| !(x < 0.0 && y < 0.0)),
                    region: Box::new(|x, y| {
                        u32::from(in_open(x, 0.25, 0.75) && in_open(y, 0.25, 0.75))
                    }),
                    expected: (3.0, vec![2.75, 0.25], 2.0),
                })
            }
            GeometrySpec::TwoCell { resolution } => {
                if resolution == 0 {
                    return bad("two-cell geometry needs resolution >= 1");
                }
                let n = 8 * resolution as usize;
                Ok(GridPlan {
                    x0: 0.0,
                    y0: 0.0,
                    nx: n,
                    ny: n,
                    h: 1.0 / n as f64,
                    in_domain: Box::new(|_, _| true),
                    region: Box::new(|x, y| {
                        if !in_open(y, 0.25, 0.75) {
                            0
                        } else if in_open(x, 0.25, 0.5) {
                            1
                        } else if in_open(x, 0.5, 0.75) {
                            2
                        } else {
                            0
                        }
                    }),
                    expected: (1.0, vec![0.75, 0.125, 0.125], 2.5),
                })
            }
            GeometrySpec::ElongatedCell { length, resolution } => {
                if length == 0 || resolution == 0 {
                    return bad("elongated cell needs length >= 1 and resolution >= 1");
                }
                let l = length as f64;
                let per_unit = 4 * resolution as usize;
                let cell_area = (l - 0.5) * 0.5;
                Ok(GridPlan {
                    x0: 0.0,
                    y0: 0.0,
                    nx: length as usize * per_unit,
                    ny: per_unit,
                    h: 1.0 / per_unit as f64,
                    in_domain: Box::new(|_, _| true),
                    region: Box::new(move |x, y| {
                        u32::from(in_open(x, 0.25, l - 0.25) && in_open(y, 0.25, 0.75))
                    }),
                    expected: (l, vec![l - cell_area, cell_area], 2.0 * (l - 0.5) + 1.0),
                })
            }
            GeometrySpec::CellChain { cells, resolution } => {
                if cells == 0 || resolution == 0 {
                    return bad("cell chain needs cells >= 1 and resolution >= 1");
                }
                let c = cells as f64;
                let per_unit = 4 * resolution as usize;
                let mut areas = vec![cells as f64 - (c - 0.5) * 0.5];
                for m in 1..=cells {
                    let lo = if m == 1 { 0.25 } else { 0.0 };
                    let hi = if m == cells { 0.25 } else { 0.0 };
                    areas.push((1.0 - lo - hi) * 0.5);
                }
                let membrane = 2.0 * c + 0.5 * (c - 1.0);
                Ok(GridPlan {
                    x0: 0.0,
                    y0: 0.0,
                    nx: cells as usize * per_unit,
                    ny: per_unit,
                    h: 1.0 / per_unit as f64,
                    in_domain: Box::new(|_, _| true),
                    region: Box::new(move |x, y| {
                        if !in_open(y, 0.25, 0.75) {
                            return 0;
                        }
                        let m = (x.floor() as u32 + 1).min(cells);
                        let lo = (m - 1) as f64 + if m == 1 { 0.25 } else { 0.0 };
                        let hi = m as f64 - if m == cells { 0.25 } else { 0.0 };
                        if in_open(x, lo, hi) {
                            m
                        } else {
                            0
                        }
                    }),
                    expected: (c, areas, membrane),
                })
            }
            GeometrySpec::CellSheet {
                rows,
                cols,
                resolution,
            } => {
                if rows == 0 || cols == 0 || resolution == 0 {
                    return bad("cell sheet needs rows, cols, resolution >= 1");
                }
                let per_unit = 8 * resolution as usize;
                let (rf, cf) = (rows as f64, cols as f64);
                let total = (rf + 1.0) * (cf + 1.0);
                let ncells = rows * cols;
                let mut areas = vec![total - 0.5 * ncells as f64];
                areas.extend(std::iter::repeat(0.5).take(ncells as usize));
                let junctions = (rows * (cols - 1) + cols * (rows - 1)) as f64;
                let membrane = 4.0 * ncells as f64 - 0.25 * junctions;
                Ok(GridPlan {
                    x0: -0.5,
                    y0: -0.5,
                    nx: (cols as usize + 1) * per_unit,
                    ny: (rows as usize + 1) * per_unit,
                    h: 1.0 / per_unit as f64,
                    in_domain: Box::new(|_, _| true),
                    region: Box::new(move |x, y| {
                        if x < 0.0 || x >= cf || y < 0.0 || y >= rf {
                            return 0;
                        }
                        let (i, j) = (x.floor(), y.floor());
                        if in_plus_full_tile(x - i, y - j) {
                            1 + i as u32 + j as u32 * cols
                        } else {
                            0
                        }
                    }),
                    expected: (total, areas, membrane),
                })
            }
        }
    }

    /// Mesh the geometry at its base resolution.
    pub fn build(&self) -> Result<Mesh, MeshError> {
        let plan = self.plan()?;
        let mesh = mesh_structured(&plan)?;
        let (want_total, want_areas, want_membrane) = &plan.expected;
        let total = mesh.total_area();
        if (total - want_total).abs() > 1e-12 * want_total.max(1.0) {
            return Err(MeshError::NonConforming(format!(
                "total area {total} differs from analytic value {want_total}"
            )));
        }
        for (label, want) in want_areas.iter().enumerate() {
            let got = mesh.subdomain_area(label as u32);
            if (got - want).abs() > 1e-12 * want.max(1.0) {
                return Err(MeshError::NonConforming(format!(
                    "subdomain {label} area {got} differs from analytic value {want}"
                )));
            }
        }
        let mem = mesh.total_membrane_length();
        if (mem - want_membrane).abs() > 1e-12 * want_membrane.max(1.0) {
            return Err(MeshError::NonConforming(format!(
                "membrane length {mem} differs from analytic value {want_membrane}"
            )));
        }
        Ok(mesh)
    }

    /// Mesh the geometry and refine `levels` times.
    pub fn build_refined(&self, levels: u32) -> Result<Mesh, MeshError> {
        let mut mesh = self.build()?;
        for _ in 0..levels {
            mesh = mesh.refine_uniform();
        }
        Ok(mesh)
    }
}

fn mesh_structured(plan: &GridPlan) -> Result<Mesh, MeshError> {
    let (nx, ny, h) = (plan.nx, plan.ny, plan.h);
    let coord = |i: usize, j: usize| [plan.x0 + i as f64 * h, plan.y0 + j as f64 * h];
    let center = |i: usize, j: usize| {
        [
            plan.x0 + (i as f64 + 0.5) * h,
            plan.y0 + (j as f64 + 0.5) * h,
        ]
    };

    let mut square_label = vec![None; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let c = center(i, j);
            if (plan.in_domain)(c[0], c[1]) {
                square_label[j * nx + i] = Some((plan.region)(c[0], c[1]));
            }
        }
    }
    let label_at = |i: isize, j: isize| -> Option<u32> {
        if i < 0 || j < 0 || i as usize >= nx || j as usize >= ny {
            None
        } else {
            square_label[j as usize * nx + i as usize]
        }
    };

    // Compact vertex numbering over squares inside the domain.
    let mut vid = vec![usize::MAX; (nx + 1) * (ny + 1)];
    let mut vertices = Vec::new();
    let mut get_vid = |i: usize, j: usize, vertices: &mut Vec<[f64; 2]>| -> usize {
        let slot = j * (nx + 1) + i;
        if vid[slot] == usize::MAX {
            vid[slot] = vertices.len();
            vertices.push(coord(i, j));
        }
        vid[slot]
    };

    let mut triangles = Vec::new();
    let mut labels = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let Some(label) = square_label[j * nx + i] else {
                continue;
            };
            let (ii, jj) = (i as isize, j as isize);
            let differs = |l: Option<u32>| l.is_some() && l != Some(label);
            let mem_bottom = differs(label_at(ii, jj - 1));
            let mem_top = differs(label_at(ii, jj + 1));
            let mem_left = differs(label_at(ii - 1, jj));
            let mem_right = differs(label_at(ii + 1, jj));

            let v00 = get_vid(i, j, &mut vertices);
            let v10 = get_vid(i + 1, j, &mut vertices);
            let v01 = get_vid(i, j + 1, &mut vertices);
            let v11 = get_vid(i + 1, j + 1, &mut vertices);

            // Anti-diagonal "/" splits {bottom,right} from {top,left};
            // main diagonal "\" splits {bottom,left} from {top,right}.
            let main_diagonal = (mem_bottom && mem_left) || (mem_top && mem_right);
            if main_diagonal {
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            } else {
                triangles.push([v00, v10, v01]);
                triangles.push([v10, v11, v01]);
            }
            labels.push(label);
            labels.push(label);
        }
    }
    if triangles.is_empty() {
        return Err(MeshError::BadGeometry("empty domain".to_string()));
    }
    let mesh = Mesh::from_arrays(vertices, triangles, labels)?;

    // The lifting operator and the jump-constrained subspace need every
    // triangle to see at most one membrane facet.
    let mut count = vec![0usize; mesh.n_elements()];
    for f in mesh.membrane_facets() {
        let fc = &mesh.facets[f];
        count[fc.elem_in] += 1;
        count[fc.elem_out.unwrap()] += 1;
    }
    if let Some(t) = count.iter().position(|&c| c > 1) {
        return Err(MeshError::NonConforming(format!(
            "triangle {t} touches more than one membrane facet"
        )));
    }
    Ok(mesh)
}
