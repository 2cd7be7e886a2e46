//! Legacy ASCII VTK output.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use scaniga_core::tessellation::{FacetKind, PieceShape, TessellatedDomain};
use scaniga_core::VoxelGrid;

const VTK_LINE: u8 = 3;
const VTK_TRIANGLE: u8 = 5;
const VTK_QUAD: u8 = 9;
const VTK_TETRA: u8 = 10;
const VTK_HEXAHEDRON: u8 = 12;

/// An unstructured grid with named point and cell arrays.
#[derive(Debug, Clone, Default)]
pub struct UnstructuredGrid {
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<(u8, Vec<usize>)>,
    /// `(name, components, values)` with `components * points.len()` values.
    pub point_data: Vec<(String, usize, Vec<f64>)>,
    pub cell_data: Vec<(String, usize, Vec<f64>)>,
}

impl UnstructuredGrid {
    fn push_cell(&mut self, kind: u8, pts: &[[f64; 3]]) {
        let start = self.points.len();
        self.points.extend_from_slice(pts);
        self.cells.push((kind, (start..start + pts.len()).collect()));
    }

    /// Add a point array computed from the point coordinates.
    pub fn add_point_field(&mut self, name: &str, components: usize, f: impl Fn(&[f64; 3]) -> Vec<f64>) {
        let mut values = Vec::with_capacity(components * self.points.len());
        for p in &self.points {
            let v = f(p);
            assert_eq!(v.len(), components, "field {name} has the wrong arity");
            values.extend(v);
        }
        self.point_data.push((name.to_string(), components, values));
    }

    pub fn to_vtk(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
        let _ = writeln!(s, "POINTS {} double", self.points.len());
        for p in &self.points {
            let _ = writeln!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]);
        }
        let size: usize = self.cells.iter().map(|(_, c)| c.len() + 1).sum();
        let _ = writeln!(s, "CELLS {} {size}", self.cells.len());
        for (_, c) in &self.cells {
            let ids: Vec<String> = c.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(s, "{} {}", c.len(), ids.join(" "));
        }
        let _ = writeln!(s, "CELL_TYPES {}", self.cells.len());
        for (k, _) in &self.cells {
            let _ = writeln!(s, "{k}");
        }
        write_arrays(&mut s, "POINT_DATA", self.points.len(), &self.point_data);
        write_arrays(&mut s, "CELL_DATA", self.cells.len(), &self.cell_data);
        s
    }

    pub fn write(&self, path: &Path, title: &str) -> io::Result<()> {
        fs::write(path, self.to_vtk(title))
    }
}

fn write_arrays(s: &mut String, section: &str, n: usize, arrays: &[(String, usize, Vec<f64>)]) {
    if arrays.is_empty() {
        return;
    }
    let _ = writeln!(s, "{section} {n}");
    for (name, comps, values) in arrays {
        if *comps == 3 {
            let _ = writeln!(s, "VECTORS {name} double");
        } else {
            let _ = writeln!(s, "SCALARS {name} double {comps}\nLOOKUP_TABLE default");
        }
        for chunk in values.chunks(*comps) {
            let row: Vec<String> = chunk.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
    }
}

/// Integration pieces of a tessellated domain: whole cells, boxes and
/// triangles (2D) or hexahedra and tetrahedra (3D). Cell data `cut` is 1
/// on pieces of cut cells.
pub fn domain_pieces(domain: &TessellatedDomain) -> UnstructuredGrid {
    let nd = domain.mesh.ndim();
    let mut g = UnstructuredGrid::default();
    let mut cut = Vec::new();
    let push_box = |g: &mut UnstructuredGrid, lo: [f64; 3], hi: [f64; 3]| {
        if nd == 2 {
            g.push_cell(VTK_QUAD, &[lo, [hi[0], lo[1], 0.0], [hi[0], hi[1], 0.0], [lo[0], hi[1], 0.0]]);
        } else {
            let c = |x: usize, y: usize, z: usize| {
                [if x == 0 { lo[0] } else { hi[0] }, if y == 0 { lo[1] } else { hi[1] }, if z == 0 { lo[2] } else { hi[2] }]
            };
            g.push_cell(
                VTK_HEXAHEDRON,
                &[c(0, 0, 0), c(1, 0, 0), c(1, 1, 0), c(0, 1, 0), c(0, 0, 1), c(1, 0, 1), c(1, 1, 1), c(0, 1, 1)],
            );
        }
    };
    for &c in &domain.interior {
        let (lo, hi) = domain.mesh.cell_bounds(c);
        push_box(&mut g, lo, hi);
        cut.push(0.0);
    }
    for cc in &domain.cut {
        for p in &cc.pieces {
            match &p.shape {
                PieceShape::Box { lo, hi } => push_box(&mut g, *lo, *hi),
                PieceShape::Triangle(t) => g.push_cell(VTK_TRIANGLE, t),
                PieceShape::Tet(t) => g.push_cell(VTK_TETRA, t),
            }
            cut.push(1.0);
        }
    }
    g.cell_data.push(("cut".to_string(), 1, cut));
    g
}

/// Boundary facets with cell data `kind`: 0 on the immersed boundary,
/// `1 + 2 axis + upper` on sides of the box.
pub fn boundary_facets(domain: &TessellatedDomain) -> UnstructuredGrid {
    let mut g = UnstructuredGrid::default();
    let mut kind = Vec::new();
    for f in &domain.facets {
        let t = if f.vertices.len() == 2 { VTK_LINE } else { VTK_TRIANGLE };
        g.push_cell(t, &f.vertices);
        kind.push(match f.kind {
            FacetKind::Immersed => 0.0,
            FacetKind::Exterior(s) => (1 + 2 * s.axis + s.upper as usize) as f64,
        });
    }
    g.cell_data.push(("kind".to_string(), 1, kind));
    g
}

/// Voxel data as `STRUCTURED_POINTS` with one cell value per voxel.
pub fn image(grid: &VoxelGrid, name: &str) -> String {
    let d = grid.shape().dims();
    let sp = grid.spacing();
    let o = grid.origin();
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\n{name}\nASCII\nDATASET STRUCTURED_POINTS");
    let _ = writeln!(s, "DIMENSIONS {} {} {}", d[0] + 1, d[1] + 1, d[2] + 1);
    let spacing = |a: usize| if a < grid.ndim() { sp[a] } else { 1.0 };
    let _ = writeln!(s, "ORIGIN {:?} {:?} {:?}", o[0], o[1], o[2]);
    let _ = writeln!(s, "SPACING {:?} {:?} {:?}", spacing(0), spacing(1), spacing(2));
    let _ = writeln!(s, "CELL_DATA {}\nSCALARS {name} double 1\nLOOKUP_TABLE default", grid.values().len());
    for v in grid.values() {
        let _ = writeln!(s, "{v:?}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use scaniga_core::levelset::FnLevelSet;
    use scaniga_core::tessellation::{tessellate, BackgroundMesh};

    #[test]
    fn disc_pieces_are_consistent() {
        let f = FnLevelSet::new(2, [0.0; 3], [1.0, 1.0, 0.0], |x| 0.3 - ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt());
        let d = tessellate(&f, &BackgroundMesh::over(&f, 8), 0.0, 2);
        let g = domain_pieces(&d);
        let text = g.to_vtk("disc");
        assert!(text.contains(&format!("CELLS {} ", g.cells.len())));
        assert!(text.contains(&format!("CELL_DATA {}", g.cells.len())));
        let facets = boundary_facets(&d);
        assert_eq!(facets.cells.len(), d.facets.len());
        assert!(facets.cells.iter().all(|(k, ids)| *k == VTK_LINE && ids.len() == 2));
    }
}
