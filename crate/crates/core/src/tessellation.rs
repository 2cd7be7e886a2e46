//! Cut-cell integration for level-set domains `Ω = {f > g_crit}` immersed
//! in a uniform background mesh.
//!
//! Cut cells are bisected recursively up to depth `ρ_max`. Sub-boxes that
//! do not straddle the boundary are kept whole or dropped; leaves at the
//! finest level are split along the zero crossings of their edges and
//! triangulated around the midpoint of those crossings. All sampling uses
//! one global lattice with `2^ρ_max` intervals per cell, so neighbouring
//! cells see identical vertex values and crossings.

use alloc::vec;
use alloc::vec::Vec;

use crate::levelset::LevelSet;
use crate::math;
use crate::quadrature::{box_rule, cross, dot, lerp, norm, segment_rule, sub, tet_rule, triangle_rule, QuadRule};

/// Uniform background mesh over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundMesh {
    ndim: usize,
    dims: [usize; 3],
    origin: [f64; 3],
    lengths: [f64; 3],
}

impl BackgroundMesh {
    pub fn new(ndim: usize, dims: &[usize], origin: [f64; 3], lengths: [f64; 3]) -> Self {
        assert!((2..=3).contains(&ndim) && dims.len() >= ndim);
        let mut d = [1; 3];
        d[..ndim].copy_from_slice(&dims[..ndim]);
        let mut l = lengths;
        for a in ndim..3 {
            l[a] = 0.0;
        }
        BackgroundMesh {
            ndim,
            dims: d,
            origin,
            lengths: l,
        }
    }

    /// Mesh with `n` cells per axis over the level set's bounding box.
    pub fn over<F: LevelSet>(field: &F, n: usize) -> Self {
        let (lo, hi) = field.bounds();
        let nd = field.ndim();
        BackgroundMesh::new(nd, &[n, n, n], lo, [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]])
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_size(&self) -> [f64; 3] {
        let mut h = [0.0; 3];
        for a in 0..self.ndim {
            h[a] = self.lengths[a] / self.dims[a] as f64;
        }
        h
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        [i % self.dims[0], (i / self.dims[0]) % self.dims[1], i / (self.dims[0] * self.dims[1])]
    }

    pub fn cell_bounds(&self, i: usize) -> ([f64; 3], [f64; 3]) {
        let c = self.coords(i);
        let mut lo = self.origin;
        let mut hi = self.origin;
        for a in 0..self.ndim {
            lo[a] = self.origin[a] + self.lengths[a] * c[a] as f64 / self.dims[a] as f64;
            hi[a] = self.origin[a] + self.lengths[a] * (c[a] + 1) as f64 / self.dims[a] as f64;
        }
        (lo, hi)
    }

    /// Cell containing `x`, clamped to the mesh.
    pub fn locate(&self, x: &[f64; 3]) -> usize {
        let mut c = [0; 3];
        for a in 0..self.ndim {
            let t = (x[a] - self.origin[a]) / self.lengths[a] * self.dims[a] as f64;
            c[a] = (math::floor(t).max(0.0) as usize).min(self.dims[a] - 1);
        }
        self.index(c)
    }

    /// Face neighbour across `axis` in direction `upper`.
    pub fn neighbour(&self, i: usize, axis: usize, upper: bool) -> Option<usize> {
        let mut c = self.coords(i);
        if upper {
            if c[axis] + 1 >= self.dims[axis] {
                return None;
            }
            c[axis] += 1;
        } else {
            if c[axis] == 0 {
                return None;
            }
            c[axis] -= 1;
        }
        Some(self.index(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellClass {
    Inside,
    Outside,
    Cut,
}

/// A side of the ambient box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Side {
    pub axis: usize,
    pub upper: bool,
}

impl Side {
    pub const LEFT: Side = Side { axis: 0, upper: false };
    pub const RIGHT: Side = Side { axis: 0, upper: true };
    pub const BOTTOM: Side = Side { axis: 1, upper: false };
    pub const TOP: Side = Side { axis: 1, upper: true };

    pub fn normal(self) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[self.axis] = if self.upper { 1.0 } else { -1.0 };
        n
    }

    pub fn name(self) -> &'static str {
        match (self.axis, self.upper) {
            (0, false) => "left",
            (0, true) => "right",
            (1, false) => "bottom",
            (1, true) => "top",
            (_, false) => "back",
            (_, true) => "front",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FacetKind {
    /// Part of `∂Ω` inside the ambient box.
    Immersed,
    /// Part of `Ω` on a side of the ambient box.
    Exterior(Side),
}

/// A boundary segment (2D) or triangle (3D) with unit outward normal.
#[derive(Debug, Clone, PartialEq)]
pub struct Facet {
    pub vertices: Vec<[f64; 3]>,
    pub normal: [f64; 3],
    pub measure: f64,
    pub kind: FacetKind,
    pub cell: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PieceShape {
    Box { lo: [f64; 3], hi: [f64; 3] },
    Triangle([[f64; 3]; 3]),
    /// Signed: negative volumes cancel overlaps of the apex fan.
    Tet([[f64; 3]; 4]),
}

/// Part of a cut cell at bisection level `level`.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub shape: PieceShape,
    pub level: usize,
}

impl Piece {
    pub fn measure(&self, ndim: usize) -> f64 {
        match &self.shape {
            PieceShape::Box { lo, hi } => (0..ndim).map(|a| hi[a] - lo[a]).product(),
            PieceShape::Triangle(t) => {
                0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]))
            }
            PieceShape::Tet(t) => crate::quadrature::tet_volume(t[0], t[1], t[2], t[3]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutCell {
    pub cell: usize,
    pub pieces: Vec<Piece>,
    pub volume: f64,
}

/// Integration domain: whole cells inside `Ω`, tessellated cut cells, and
/// boundary facets.
#[derive(Debug, Clone, PartialEq)]
pub struct TessellatedDomain {
    pub mesh: BackgroundMesh,
    pub classes: Vec<CellClass>,
    pub interior: Vec<usize>,
    pub cut: Vec<CutCell>,
    pub facets: Vec<Facet>,
    pub rho_max: usize,
}

impl TessellatedDomain {
    /// Cells carrying part of `Ω`, sorted.
    pub fn active_cells(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.interior.clone();
        v.extend(self.cut.iter().filter(|c| c.volume > 0.0).map(|c| c.cell));
        v.sort_unstable();
        v
    }

    pub fn volume(&self) -> f64 {
        let h = self.mesh.cell_size();
        let cell: f64 = (0..self.mesh.ndim()).map(|a| h[a]).product();
        self.interior.len() as f64 * cell + self.cut.iter().map(|c| c.volume).sum::<f64>()
    }

    pub fn boundary_measure(&self, kind: Option<FacetKind>) -> f64 {
        self.facets
            .iter()
            .filter(|f| kind.is_none_or(|k| f.kind == k))
            .map(|f| f.measure)
            .sum()
    }

    pub fn is_cut(&self, cell: usize) -> bool {
        self.classes[cell] == CellClass::Cut
    }
}

/// Quadrature order per bisection level: `k_max` on whole cells, decaying
/// linearly to zero at `ρ_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureSchedule {
    pub k_max: usize,
    pub rho_max: usize,
}

impl QuadratureSchedule {
    pub fn new(k_max: usize, rho_max: usize) -> Self {
        QuadratureSchedule { k_max, rho_max }
    }

    pub fn order(&self, rho: usize) -> usize {
        if rho == 0 {
            return self.k_max;
        }
        if rho >= self.rho_max {
            return 0;
        }
        let num = self.k_max * (self.rho_max - rho);
        let den = self.rho_max - 1;
        num.div_ceil(den)
    }

    /// Every order halved, rounding up.
    pub fn halved(&self) -> Self {
        QuadratureSchedule {
            k_max: self.k_max.div_ceil(2),
            rho_max: self.rho_max,
        }
    }
}

/// Rules per active cell and per facet.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainQuadrature {
    /// `(cell, is_cut, rule)` for every active cell, sorted by cell.
    pub cells: Vec<(usize, bool, QuadRule)>,
    /// Parallel to the domain's facets.
    pub facets: Vec<QuadRule>,
}

impl DomainQuadrature {
    pub fn integrate(&self, f: impl Fn(&[f64; 3]) -> f64) -> f64 {
        self.cells.iter().map(|(_, _, r)| r.integrate(&f)).sum()
    }
}

pub fn piece_rule(ndim: usize, piece: &Piece, order: usize) -> QuadRule {
    match &piece.shape {
        PieceShape::Box { lo, hi } => box_rule(ndim, *lo, *hi, order),
        PieceShape::Triangle(t) => triangle_rule(t[0], t[1], t[2], order, true),
        PieceShape::Tet(t) => tet_rule(t[0], t[1], t[2], t[3], order),
    }
}

pub fn build_quadrature(domain: &TessellatedDomain, schedule: &QuadratureSchedule) -> DomainQuadrature {
    let nd = domain.mesh.ndim();
    let mut cells: Vec<(usize, bool, QuadRule)> = Vec::new();
    for &c in &domain.interior {
        let (lo, hi) = domain.mesh.cell_bounds(c);
        cells.push((c, false, box_rule(nd, lo, hi, schedule.k_max)));
    }
    for cc in &domain.cut {
        if cc.volume <= 0.0 {
            continue;
        }
        let mut rule = QuadRule::default();
        for p in &cc.pieces {
            rule.extend(&piece_rule(nd, p, schedule.order(p.level)));
        }
        cells.push((cc.cell, true, rule));
    }
    cells.sort_by_key(|c| c.0);
    let facets = domain
        .facets
        .iter()
        .map(|f| match f.vertices.len() {
            2 => segment_rule(f.vertices[0], f.vertices[1], schedule.k_max),
            _ => triangle_rule(f.vertices[0], f.vertices[1], f.vertices[2], schedule.k_max, false),
        })
        .collect();
    DomainQuadrature { cells, facets }
}

const SNAP: f64 = 1e-12;

struct Sampler<'a, F: LevelSet> {
    field: &'a F,
    mesh: &'a BackgroundMesh,
    g_crit: f64,
    /// Lattice intervals per cell and axis.
    n: usize,
}

impl<F: LevelSet> Sampler<'_, F> {
    fn point(&self, g: [usize; 3]) -> [f64; 3] {
        let mut x = self.mesh.origin;
        for a in 0..self.mesh.ndim {
            let total = (self.mesh.dims[a] * self.n) as f64;
            x[a] = self.mesh.origin[a] + self.mesh.lengths[a] * (g[a] as f64 / total);
        }
        x
    }

    /// Offset value, with rounding noise around the threshold snapped to
    /// zero so that boundaries lying on lattice lines give no slivers.
    fn s(&self, x: &[f64; 3]) -> f64 {
        let v = self.field.value(x) - self.g_crit;
        if v.abs() <= SNAP { 0.0 } else { v }
    }

    /// Lattice values of a cell, x fastest, `n + 1` per axis.
    fn cell_values(&self, cell: usize) -> Vec<f64> {
        let c = self.mesh.coords(cell);
        let nd = self.mesh.ndim;
        let m = self.n + 1;
        let nz = if nd == 3 { m } else { 1 };
        let mut out = Vec::with_capacity(m * m * nz);
        for k in 0..nz {
            for j in 0..m {
                for i in 0..m {
                    let g = [c[0] * self.n + i, c[1] * self.n + j, if nd == 3 { c[2] * self.n + k } else { 0 }];
                    out.push(self.s(&self.point(g)));
                }
            }
        }
        out
    }

    /// Boundary crossing on the segment between two lattice points of
    /// opposite inside-ness, searched from the lexicographically lower one.
    fn crossing(&self, a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        let (a, b) = if lex_less(&b, &a) { (b, a) } else { (a, b) };
        let ia = self.s(&a) > 0.0;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > 1e-10 {
            let mid = 0.5 * (lo + hi);
            if (self.s(&lerp(a, b, mid)) > 0.0) == ia {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lerp(a, b, 0.5 * (lo + hi))
    }
}

fn lex_less(a: &[f64; 3], b: &[f64; 3]) -> bool {
    for d in 0..3 {
        if a[d] != b[d] {
            return a[d] < b[d];
        }
    }
    false
}

fn signs(values: &[f64]) -> (bool, bool, f64, f64) {
    let mut pos = false;
    let mut neg = false;
    let mut min_abs = f64::INFINITY;
    let mut max_abs = 0.0f64;
    for &v in values {
        pos |= v > 0.0;
        neg |= v < 0.0;
        min_abs = min_abs.min(v.abs());
        max_abs = max_abs.max(v.abs());
    }
    (pos, neg, min_abs, max_abs)
}

/// Classify cells by the sign of `f − g_crit` on a lattice of `2^ρ_max`
/// intervals per cell. Cells whose samples come close to zero without a
/// sign change are resampled on finer lattices up to 32 intervals.
pub fn classify_cells<F: LevelSet>(field: &F, mesh: &BackgroundMesh, g_crit: f64, rho_max: usize) -> Vec<CellClass> {
    (0..mesh.len())
        .map(|cell| {
            let mut n = 1usize << rho_max;
            loop {
                let sampler = Sampler {
                    field,
                    mesh,
                    g_crit,
                    n,
                };
                let (pos, neg, min_abs, max_abs) = signs(&sampler.cell_values(cell));
                if pos && neg {
                    return CellClass::Cut;
                }
                if min_abs >= 0.1 * max_abs || n >= 32 {
                    return if pos { CellClass::Inside } else { CellClass::Outside };
                }
                n *= 2;
            }
        })
        .collect()
}

/// Classify and tessellate every cell.
pub fn tessellate<F: LevelSet>(field: &F, mesh: &BackgroundMesh, g_crit: f64, rho_max: usize) -> TessellatedDomain {
    let rho_max = rho_max.max(1);
    let classes = classify_cells(field, mesh, g_crit, rho_max);
    let sampler = Sampler {
        field,
        mesh,
        g_crit,
        n: 1 << rho_max,
    };
    let nd = mesh.ndim;
    let mut interior = Vec::new();
    let mut cut = Vec::new();
    let mut facets = Vec::new();
    for (cell, class) in classes.iter().enumerate() {
        match class {
            CellClass::Inside => {
                interior.push(cell);
                let (lo, hi) = mesh.cell_bounds(cell);
                box_exterior_facets(mesh, cell, lo, hi, &mut facets);
                // Walls towards outside cells.
                for axis in 0..nd {
                    for upper in [false, true] {
                        if let Some(nb) = mesh.neighbour(cell, axis, upper) {
                            if classes[nb] == CellClass::Outside {
                                box_face_facet(nd, lo, hi, Side { axis, upper }, FacetKind::Immersed, cell, &mut facets);
                            }
                        }
                    }
                }
            }
            CellClass::Cut => {
                let cc = tessellate_cell(&sampler, cell, &mut facets);
                cut.push(cc);
            }
            CellClass::Outside => {}
        }
    }
    TessellatedDomain {
        mesh: mesh.clone(),
        classes,
        interior,
        cut,
        facets,
        rho_max,
    }
}

fn box_exterior_facets(mesh: &BackgroundMesh, cell: usize, lo: [f64; 3], hi: [f64; 3], out: &mut Vec<Facet>) {
    for axis in 0..mesh.ndim {
        let end = mesh.origin[axis] + mesh.lengths[axis];
        if lo[axis] == mesh.origin[axis] {
            let side = Side { axis, upper: false };
            box_face_facet(mesh.ndim, lo, hi, side, FacetKind::Exterior(side), cell, out);
        }
        if hi[axis] == end {
            let side = Side { axis, upper: true };
            box_face_facet(mesh.ndim, lo, hi, side, FacetKind::Exterior(side), cell, out);
        }
    }
}

/// The face of a box on `side`, as one segment (2D) or two triangles (3D),
/// oriented along the side's outward normal.
fn box_face_facet(nd: usize, lo: [f64; 3], hi: [f64; 3], side: Side, kind: FacetKind, cell: usize, out: &mut Vec<Facet>) {
    let normal = side.normal();
    let v = if side.upper { hi[side.axis] } else { lo[side.axis] };
    if nd == 2 {
        let t = 1 - side.axis;
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        a[side.axis] = v;
        b[side.axis] = v;
        a[t] = lo[t];
        b[t] = hi[t];
        push_segment(a, b, normal, kind, cell, out);
    } else {
        let (u, w) = ((side.axis + 1) % 3, (side.axis + 2) % 3);
        let corner = |su: bool, sw: bool| {
            let mut p = [0.0; 3];
            p[side.axis] = v;
            p[u] = if su { hi[u] } else { lo[u] };
            p[w] = if sw { hi[w] } else { lo[w] };
            p
        };
        let q = [corner(false, false), corner(true, false), corner(true, true), corner(false, true)];
        for tri in [[q[0], q[1], q[2]], [q[0], q[2], q[3]]] {
            push_triangle(tri, Some(normal), kind, cell, out);
        }
    }
}

fn push_segment(a: [f64; 3], b: [f64; 3], normal: [f64; 3], kind: FacetKind, cell: usize, out: &mut Vec<Facet>) {
    let len = norm(sub(b, a));
    if len > 0.0 {
        out.push(Facet {
            vertices: vec![a, b],
            normal,
            measure: len,
            kind,
            cell,
        });
    }
}

fn push_triangle(t: [[f64; 3]; 3], normal: Option<[f64; 3]>, kind: FacetKind, cell: usize, out: &mut Vec<Facet>) {
    let c = cross(sub(t[1], t[0]), sub(t[2], t[0]));
    let area2 = norm(c);
    if area2 <= 0.0 {
        return;
    }
    let n = normal.unwrap_or([c[0] / area2, c[1] / area2, c[2] / area2]);
    out.push(Facet {
        vertices: t.to_vec(),
        normal: n,
        measure: 0.5 * area2,
        kind,
        cell,
    });
}

fn tessellate_cell<F: LevelSet>(sm: &Sampler<'_, F>, cell: usize, facets: &mut Vec<Facet>) -> CutCell {
    let values = sm.cell_values(cell);
    let base = sm.mesh.coords(cell);
    let mut pieces = Vec::new();
    let nd = sm.mesh.ndim;
    let lo = [0; 3];
    let mut hi = [0; 3];
    for a in 0..nd {
        hi[a] = sm.n;
    }
    let mut ctx = CellCtx {
        sm,
        cell,
        base,
        values: &values,
        pieces: &mut pieces,
        facets,
    };
    ctx.bisect(lo, hi, 0);
    let volume = pieces.iter().map(|p| p.measure(nd)).sum::<f64>().max(0.0);
    CutCell { cell, pieces, volume }
}

struct CellCtx<'a, 'b, F: LevelSet> {
    sm: &'a Sampler<'b, F>,
    cell: usize,
    base: [usize; 3],
    values: &'a [f64],
    pieces: &'a mut Vec<Piece>,
    facets: &'a mut Vec<Facet>,
}

impl<F: LevelSet> CellCtx<'_, '_, F> {
    fn value(&self, l: [usize; 3]) -> f64 {
        let m = self.sm.n + 1;
        self.values[l[0] + m * (l[1] + m * l[2])]
    }

    fn global(&self, l: [usize; 3]) -> [usize; 3] {
        let mut g = [0; 3];
        for a in 0..self.sm.mesh.ndim {
            g[a] = self.base[a] * self.sm.n + l[a];
        }
        g
    }

    fn point(&self, l: [usize; 3]) -> [f64; 3] {
        self.sm.point(self.global(l))
    }

    fn on_side(&self, l: [usize; 3], side: Side) -> bool {
        let g = self.global(l)[side.axis];
        if side.upper {
            g == self.sm.mesh.dims[side.axis] * self.sm.n
        } else {
            g == 0
        }
    }

    fn bisect(&mut self, lo: [usize; 3], hi: [usize; 3], level: usize) {
        let nd = self.sm.mesh.ndim;
        let (mut pos, mut neg) = (false, false);
        let zr = if nd == 3 { lo[2]..=hi[2] } else { 0..=0 };
        for k in zr {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let v = self.value([i, j, k]);
                    pos |= v > 0.0;
                    neg |= v < 0.0;
                }
            }
        }
        if !(pos && neg) {
            if pos {
                let (plo, phi) = (self.point(lo), self.point(hi));
                self.pieces.push(Piece {
                    shape: PieceShape::Box { lo: plo, hi: phi },
                    level,
                });
                for axis in 0..nd {
                    for upper in [false, true] {
                        let side = Side { axis, upper };
                        let corner = if upper { hi } else { lo };
                        if self.on_side(corner, side) {
                            box_face_facet(nd, plo, phi, side, FacetKind::Exterior(side), self.cell, self.facets);
                        }
                    }
                }
            }
            return;
        }
        if level == self.sm.n.trailing_zeros() as usize {
            if nd == 2 {
                self.leaf_2d(lo, hi, level);
            } else {
                self.leaf_3d(lo, hi, level);
            }
            return;
        }
        let half = (hi[0] - lo[0]) / 2;
        let nz = if nd == 3 { 2 } else { 1 };
        for cz in 0..nz {
            for cy in 0..2 {
                for cx in 0..2 {
                    let c = [cx, cy, cz];
                    let mut clo = lo;
                    let mut chi = hi;
                    for a in 0..nd {
                        clo[a] = lo[a] + c[a] * half;
                        chi[a] = clo[a] + half;
                    }
                    self.bisect(clo, chi, level + 1);
                }
            }
        }
    }

    fn leaf_2d(&mut self, lo: [usize; 3], hi: [usize; 3], level: usize) {
        let l = [[lo[0], lo[1], 0], [hi[0], lo[1], 0], [hi[0], hi[1], 0], [lo[0], hi[1], 0]];
        let p = l.map(|v| self.point(v));
        let inside = l.map(|v| self.value(v) > 0.0);
        let centre = || {
            let c = lerp(p[0], p[2], 0.5);
            self.sm.s(&c) > 0.0
        };
        let polys = square_polygons(&p, &inside, |a, b| self.sm.crossing(a, b), centre);
        for poly in &polys {
            let crossings: Vec<[f64; 3]> = poly.iter().filter(|q| q.1).map(|q| q.0).collect();
            let m = centroid(&crossings);
            let k = poly.len();
            for i in 0..k {
                let (a, b) = (poly[i], poly[(i + 1) % k]);
                let t = [m, a.0, b.0];
                let piece = Piece {
                    shape: PieceShape::Triangle(t),
                    level,
                };
                if piece.measure(2) > 0.0 {
                    self.pieces.push(piece);
                }
                if a.1 && b.1 {
                    let d = sub(b.0, a.0);
                    let len = norm(d);
                    if len > 0.0 {
                        push_segment(a.0, b.0, [d[1] / len, -d[0] / len, 0.0], FacetKind::Immersed, self.cell, self.facets);
                    }
                }
            }
        }
        // Inside parts of leaf edges on the ambient boundary.
        for e in 0..4 {
            let (i, j) = (e, (e + 1) % 4);
            let side = match e {
                0 => Side::BOTTOM,
                1 => Side::RIGHT,
                2 => Side::TOP,
                _ => Side::LEFT,
            };
            if !(self.on_side(l[i], side) && self.on_side(l[j], side)) {
                continue;
            }
            let (a, b) = match (inside[i], inside[j]) {
                (true, true) => (p[i], p[j]),
                (true, false) => (p[i], self.sm.crossing(p[i], p[j])),
                (false, true) => (self.sm.crossing(p[i], p[j]), p[j]),
                (false, false) => continue,
            };
            push_segment(a, b, side.normal(), FacetKind::Exterior(side), self.cell, self.facets);
        }
    }

    fn leaf_3d(&mut self, lo: [usize; 3], hi: [usize; 3], level: usize) {
        let corner = |b: usize| [if b & 1 == 0 { lo[0] } else { hi[0] }, if b & 2 == 0 { lo[1] } else { hi[1] }, if b & 4 == 0 { lo[2] } else { hi[2] }];
        let l: [[usize; 3]; 8] = core::array::from_fn(corner);
        let p = l.map(|v| self.point(v));
        let inside = l.map(|v| self.value(v) > 0.0);
        // Faces as CCW corner lists seen from outside, with their sides.
        const FACES: [([usize; 4], usize, bool); 6] = [
            ([0, 4, 6, 2], 0, false),
            ([1, 3, 7, 5], 0, true),
            ([0, 1, 5, 4], 1, false),
            ([2, 6, 7, 3], 1, true),
            ([0, 2, 3, 1], 2, false),
            ([4, 5, 7, 6], 2, true),
        ];
        let mut edge_pts: Vec<((usize, usize), [f64; 3])> = Vec::new();
        let mut crossing = |a: usize, b: usize, this: &Self| {
            let key = (a.min(b), a.max(b));
            if let Some(e) = edge_pts.iter().find(|e| e.0 == key) {
                return e.1;
            }
            let x = this.sm.crossing(p[a], p[b]);
            edge_pts.push((key, x));
            x
        };
        let mut surface: Vec<[[f64; 3]; 3]> = Vec::new();
        // Reversed face segments, keyed by cube edges: (from, to, a, b).
        let mut segs: Vec<((usize, usize), (usize, usize), [f64; 3], [f64; 3])> = Vec::new();
        for (f, axis, upper) in FACES {
            let fp = f.map(|i| p[i]);
            let fin = f.map(|i| inside[i]);
            let centre = || {
                let c = lerp(fp[0], fp[2], 0.5);
                self.sm.s(&c) > 0.0
            };
            let mut keys: Vec<([f64; 3], (usize, usize))> = Vec::new();
            let polys = square_polygons(&fp, &fin, |a, b| {
                let ia = f[fp.iter().position(|q| *q == a).expect("corner")];
                let ib = f[fp.iter().position(|q| *q == b).expect("corner")];
                let x = crossing(ia, ib, self);
                keys.push((x, (ia.min(ib), ia.max(ib))));
                x
            }, centre);
            let side = Side { axis, upper };
            let exterior = f.iter().all(|&i| self.on_side(l[i], side));
            for poly in &polys {
                let crossings: Vec<[f64; 3]> = poly.iter().filter(|q| q.1).map(|q| q.0).collect();
                let m = if crossings.is_empty() { lerp(fp[0], fp[2], 0.5) } else { centroid(&crossings) };
                let k = poly.len();
                for i in 0..k {
                    let (a, b) = (poly[i], poly[(i + 1) % k]);
                    let t = [m, a.0, b.0];
                    surface.push(t);
                    if exterior {
                        push_triangle(t, Some(side.normal()), FacetKind::Exterior(side), self.cell, self.facets);
                    }
                    if a.1 && b.1 {
                        let key = |x: [f64; 3]| keys.iter().find(|k| k.0 == x).expect("crossing key").1;
                        segs.push((key(b.0), key(a.0), b.0, a.0));
                    }
                }
            }
        }
        // Chain reversed segments into closed loops.
        let mut used = vec![false; segs.len()];
        for s0 in 0..segs.len() {
            if used[s0] {
                continue;
            }
            let mut loop_pts = Vec::new();
            let mut cur = s0;
            loop {
                used[cur] = true;
                loop_pts.push(segs[cur].2);
                let next_key = segs[cur].1;
                match (0..segs.len()).find(|&j| !used[j] && segs[j].0 == next_key) {
                    Some(j) => cur = j,
                    None => break,
                }
            }
            let m = centroid(&loop_pts);
            let k = loop_pts.len();
            for i in 0..k {
                let t = [m, loop_pts[i], loop_pts[(i + 1) % k]];
                surface.push(t);
                push_triangle(t, None, FacetKind::Immersed, self.cell, self.facets);
            }
        }
        let apex = centroid(&edge_pts.iter().map(|e| e.1).collect::<Vec<_>>());
        for t in surface {
            let piece = Piece {
                shape: PieceShape::Tet([apex, t[0], t[1], t[2]]),
                level,
            };
            if piece.measure(3) != 0.0 {
                self.pieces.push(piece);
            }
        }
    }
}

fn centroid(pts: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for q in pts {
        for d in 0..3 {
            c[d] += q[d];
        }
    }
    let n = pts.len().max(1) as f64;
    c.map(|v| v / n)
}

/// Inside polygons of a square with CCW corners `p`. Each vertex carries a
/// flag telling whether it is a boundary crossing. Diagonal (saddle)
/// configurations are joined when the centre is inside.
fn square_polygons(
    p: &[[f64; 3]; 4],
    inside: &[bool; 4],
    mut crossing: impl FnMut([f64; 3], [f64; 3]) -> [f64; 3],
    centre_inside: impl FnOnce() -> bool,
) -> Vec<Vec<([f64; 3], bool)>> {
    let n_in = inside.iter().filter(|&&b| b).count();
    if n_in == 0 {
        return Vec::new();
    }
    let mut cr: [Option<[f64; 3]>; 4] = [None; 4];
    for e in 0..4 {
        if inside[e] != inside[(e + 1) % 4] {
            cr[e] = Some(crossing(p[e], p[(e + 1) % 4]));
        }
    }
    let saddle = n_in == 2 && inside[0] == inside[2];
    if saddle && !centre_inside() {
        let mut out = Vec::new();
        for i in 0..4 {
            if inside[i] {
                let prev = cr[(i + 3) % 4].expect("crossing before");
                let next = cr[i].expect("crossing after");
                out.push(vec![(prev, true), (p[i], false), (next, true)]);
            }
        }
        return out;
    }
    let mut poly = Vec::new();
    for i in 0..4 {
        if inside[i] {
            poly.push((p[i], false));
        }
        if let Some(c) = cr[i] {
            poly.push((c, true));
        }
    }
    vec![poly]
}

/// Centroid of a facet.
pub fn facet_midpoint(f: &Facet) -> [f64; 3] {
    centroid(&f.vertices)
}

/// `∮ v·n` over all facets.
pub fn boundary_flux(domain: &TessellatedDomain, quad: &DomainQuadrature, v: impl Fn(&[f64; 3]) -> [f64; 3]) -> f64 {
    domain
        .facets
        .iter()
        .zip(&quad.facets)
        .map(|(f, r)| r.integrate(|x| dot(v(x), f.normal)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::FnLevelSet;
    use core::f64::consts::PI;

    fn circle(r: f64) -> FnLevelSet<impl Fn(&[f64; 3]) -> f64> {
        FnLevelSet::new(2, [0.0; 3], [1.0, 1.0, 0.0], move |x: &[f64; 3]| {
            r - math::sqrt((x[0] - 0.5) * (x[0] - 0.5) + (x[1] - 0.5) * (x[1] - 0.5))
        })
    }

    #[test]
    fn constant_inside_has_no_cut_cells() {
        let f = FnLevelSet::new(2, [0.0; 3], [1.0, 1.0, 0.0], |_: &[f64; 3]| 1.0);
        let mesh = BackgroundMesh::over(&f, 4);
        let d = tessellate(&f, &mesh, 0.5, 3);
        assert_eq!(d.interior.len(), 16);
        assert!(d.cut.is_empty());
        assert!((d.volume() - 1.0).abs() < 1e-14);
        assert!((d.boundary_measure(None) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn aligned_half_plane_has_no_cut_cells() {
        let f = FnLevelSet::new(2, [0.0; 3], [1.0, 1.0, 0.0], |x: &[f64; 3]| x[0] - 0.25);
        let mesh = BackgroundMesh::over(&f, 8);
        let d = tessellate(&f, &mesh, 0.0, 3);
        assert!(d.cut.is_empty());
        assert_eq!(d.interior.len(), 48);
        let walls = d.boundary_measure(Some(FacetKind::Immersed));
        assert!((walls - 1.0).abs() < 1e-14);
        for f in d.facets.iter().filter(|f| f.kind == FacetKind::Immersed) {
            assert_eq!(f.normal, [-1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn circle_cut_cells_match_dense_sampling() {
        let f = circle(0.3);
        let mesh = BackgroundMesh::over(&f, 8);
        let classes = classify_cells(&f, &mesh, 0.0, 3);
        for (cell, class) in classes.iter().enumerate() {
            let (lo, hi) = mesh.cell_bounds(cell);
            let (mut pos, mut neg) = (false, false);
            for j in 0..33 {
                for i in 0..33 {
                    let x = [lo[0] + (hi[0] - lo[0]) * i as f64 / 32.0, lo[1] + (hi[1] - lo[1]) * j as f64 / 32.0, 0.0];
                    let s = f.value(&x);
                    pos |= s > 0.0;
                    neg |= s < 0.0;
                }
            }
            assert_eq!(*class == CellClass::Cut, pos && neg, "cell {cell}");
        }
    }

    #[test]
    fn linear_field_gives_exact_chord() {
        let f = FnLevelSet::new(2, [0.0; 3], [1.0, 1.0, 0.0], |x: &[f64; 3]| 0.3 * x[0] + 0.7 * x[1] - 0.41);
        let mesh = BackgroundMesh::over(&f, 1);
        let d = tessellate(&f, &mesh, 0.0, 3);
        // Line 0.3x + 0.7y = 0.41 across the unit square.
        let (a, b) = ([0.0, 0.41 / 0.7], [1.0, 0.11 / 0.7]);
        let chord = math::sqrt((b[0] - a[0]) * (b[0] - a[0]) + (b[1] - a[1]) * (b[1] - a[1]));
        assert!((d.boundary_measure(Some(FacetKind::Immersed)) - chord).abs() < 1e-9);
        let area_out = 0.5 * (a[1] + b[1]);
        assert!((d.volume() - (1.0 - area_out)).abs() < 1e-9);
        for fa in d.facets.iter().filter(|f| f.kind == FacetKind::Immersed) {
            let g = [0.3, 0.7];
            let gn = math::sqrt(0.58);
            assert!((fa.normal[0] + g[0] / gn).abs() < 1e-9 && (fa.normal[1] + g[1] / gn).abs() < 1e-9);
        }
    }

    #[test]
    fn circle_area_perimeter_and_divergence() {
        let r = 0.3;
        let f = circle(r);
        let mesh = BackgroundMesh::over(&f, 16);
        let d = tessellate(&f, &mesh, 0.0, 3);
        let q = build_quadrature(&d, &QuadratureSchedule::new(3, 3));
        let area = q.integrate(|_| 1.0);
        assert!((area - PI * r * r).abs() / (PI * r * r) < 0.01);
        let per = d.boundary_measure(Some(FacetKind::Immersed));
        assert!((per - 2.0 * PI * r).abs() / (2.0 * PI * r) < 0.01);
        let v = |x: &[f64; 3]| [x[0] * x[0] + x[1], x[0] * x[1] - x[1] * x[1] * x[1] / 3.0, 0.0];
        let div = |x: &[f64; 3]| 2.0 * x[0] + x[0] - x[1] * x[1];
        let vol = q.integrate(div);
        let flux = boundary_flux(&d, &q, v);
        assert!((vol - flux).abs() / flux.abs() < 1e-6, "{vol} vs {flux}");
        let halved = build_quadrature(&d, &QuadratureSchedule::new(3, 3).halved()).integrate(|_| 1.0);
        assert!((halved - area).abs() / area < 0.005);
    }

    #[test]
    fn volume_self_converges() {
        let f = circle(0.3);
        let mesh = BackgroundMesh::over(&f, 16);
        let a = tessellate(&f, &mesh, 0.0, 3).volume();
        let b = tessellate(&f, &mesh, 0.0, 4).volume();
        assert!((a - b).abs() / b < 0.01);
    }

    #[test]
    fn facets_close_up() {
        let f = circle(0.3);
        let d = tessellate(&f, &BackgroundMesh::over(&f, 16), 0.0, 3);
        let ends: Vec<[f64; 3]> = d
            .facets
            .iter()
            .filter(|f| f.kind == FacetKind::Immersed)
            .flat_map(|f| f.vertices.clone())
            .collect();
        for e in &ends {
            let n = ends.iter().filter(|o| norm(sub(**o, *e)) < 1e-12).count();
            assert_eq!(n, 2);
        }
        for cc in &d.cut {
            assert!(cc.pieces.iter().all(|p| p.measure(2) > 0.0));
        }
    }

    #[test]
    fn schedule_orders() {
        let s = QuadratureSchedule::new(3, 3);
        assert_eq!((s.order(0), s.order(1), s.order(2), s.order(3), s.order(5)), (3, 3, 2, 0, 0));
        let s = QuadratureSchedule::new(4, 5);
        let o: Vec<usize> = (0..=5).map(|r| s.order(r)).collect();
        assert!(o.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(o[5], 0);
        assert_eq!(QuadratureSchedule::new(2, 1).order(1), 0);
    }

    #[test]
    fn whole_cell_polynomial_is_exact() {
        let f = FnLevelSet::new(2, [0.0; 3], [1.0, 1.0, 0.0], |_: &[f64; 3]| 1.0);
        let d = tessellate(&f, &BackgroundMesh::over(&f, 3), 0.0, 2);
        let q = build_quadrature(&d, &QuadratureSchedule::new(3, 2));
        let v = q.integrate(|x| x[0] * x[0] * x[0] + x[0] * x[1] * x[1] - 2.0 * x[1]);
        assert!((v - (0.25 + 1.0 / 6.0 - 1.0)).abs() < 1e-13);
    }

    #[test]
    fn sphere_volume_area_and_closure() {
        let r = 0.3;
        let f = FnLevelSet::new(3, [0.0; 3], [1.0; 3], move |x: &[f64; 3]| {
            r - math::sqrt((x[0] - 0.5) * (x[0] - 0.5) + (x[1] - 0.5) * (x[1] - 0.5) + (x[2] - 0.5) * (x[2] - 0.5))
        });
        let d = tessellate(&f, &BackgroundMesh::over(&f, 8), 0.0, 2);
        let vol = 4.0 / 3.0 * PI * r * r * r;
        assert!((d.volume() - vol).abs() / vol < 0.01, "{}", d.volume());
        let area = 4.0 * PI * r * r;
        let got = d.boundary_measure(Some(FacetKind::Immersed));
        assert!((got - area).abs() / area < 0.02, "{got}");
        let q = build_quadrature(&d, &QuadratureSchedule::new(3, 2));
        let v = |x: &[f64; 3]| [x[0] * x[1], x[2], x[2] * x[0]];
        let div = |x: &[f64; 3]| x[1] + x[0];
        let lhs = q.integrate(div);
        let rhs = boundary_flux(&d, &q, v);
        assert!((lhs - rhs).abs() / rhs.abs() < 1e-6, "{lhs} vs {rhs}");
    }

    #[test]
    fn exterior_sides_are_tagged() {
        let f = FnLevelSet::new(2, [0.0; 3], [1.0, 1.0, 0.0], |x: &[f64; 3]| 0.6 - x[1] - 0.1 * x[0]);
        let d = tessellate(&f, &BackgroundMesh::over(&f, 8), 0.0, 3);
        assert!((d.boundary_measure(Some(FacetKind::Exterior(Side::BOTTOM))) - 1.0).abs() < 1e-12);
        assert_eq!(d.boundary_measure(Some(FacetKind::Exterior(Side::TOP))), 0.0);
        assert!((d.boundary_measure(Some(FacetKind::Exterior(Side::LEFT))) - 0.6).abs() < 1e-9);
        assert!((d.boundary_measure(Some(FacetKind::Exterior(Side::RIGHT))) - 0.5).abs() < 1e-9);
        let q = build_quadrature(&d, &QuadratureSchedule::new(3, 3));
        let flux = boundary_flux(&d, &q, |x| [x[0], 0.0, 0.0]);
        assert!((flux - q.integrate(|_| 1.0)).abs() < 1e-9);
    }
}
