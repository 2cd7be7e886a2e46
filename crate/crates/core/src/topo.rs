//! Moving-window topology comparison between a voxel segmentation and the
//! voxelized smooth level set, with boundary masking and refinement marking.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::hierarchy::{CellId, HierarchicalMesh, HierarchyError};
use crate::levelset::{LevelSet, LevelSetError};
use crate::thb::{ThbBasis, ThbField};
use crate::voxel::{
    euler_characteristic, euler_from_labels, label_components, threshold, BinaryImage, Connectivity, Shape, VoxelError,
    VoxelGrid,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopoError {
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error(transparent)]
    LevelSet(#[from] LevelSetError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("smooth image has subdivision {smooth}, expected a multiple of the voxel image ({voxels})")]
    SubdivisionMismatch { voxels: usize, smooth: usize },
    #[error("window radius must be at least 1")]
    ZeroRadius,
}

/// Segment `f` on a grid refined `n_sub` times per voxel: a cell is filled
/// iff `f(centre) > g_crit`.
pub fn voxelize_smooth<F: LevelSet>(field: &F, grid: &VoxelGrid, n_sub: usize, g_crit: f64) -> BinaryImage {
    let n_sub = n_sub.max(1);
    let shape = grid.shape().scaled(n_sub);
    let nd = grid.ndim();
    let sp = grid.spacing();
    let o = grid.origin();
    let mut bits = Vec::with_capacity(shape.len());
    for lin in 0..shape.len() {
        let c = shape.coords(lin);
        let mut x = [0.0; 3];
        for a in 0..nd {
            x[a] = o[a] + (c[a] as f64 + 0.5) * sp[a] / n_sub as f64;
        }
        bits.push(field.value(&x) > g_crit);
    }
    BinaryImage::new(shape, n_sub, bits).expect("matching size")
}

/// Outcome of comparing two window images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonReport {
    pub verdict: bool,
    pub chi_v: BTreeMap<i64, usize>,
    pub chi_s: BTreeMap<i64, usize>,
    pub chi_v_complement: BTreeMap<i64, usize>,
    pub chi_s_complement: BTreeMap<i64, usize>,
    pub mask_region_count: usize,
}

/// Region-count comparison per Euler characteristic, on the images and on
/// their complements.
pub fn compare(v: &BinaryImage, s: &BinaryImage, conn: Connectivity) -> Result<ComparisonReport, TopoError> {
    check_same(v, s)?;
    let chi_v = euler_characteristic(v, conn).chi_multiset;
    let chi_s = euler_characteristic(s, conn).chi_multiset;
    let chi_v_complement = euler_characteristic(&v.complement(), conn).chi_multiset;
    let chi_s_complement = euler_characteristic(&s.complement(), conn).chi_multiset;
    let verdict = chi_v == chi_s && chi_v_complement == chi_s_complement;
    Ok(ComparisonReport {
        verdict,
        chi_v,
        chi_s,
        chi_v_complement,
        chi_s_complement,
        mask_region_count: 0,
    })
}

fn check_same(a: &BinaryImage, b: &BinaryImage) -> Result<(), TopoError> {
    if a.shape() != b.shape() {
        return Err(VoxelError::ShapeMismatch { a: a.shape(), b: b.shape() }.into());
    }
    if a.subdivision() != b.subdivision() {
        return Err(VoxelError::SubdivisionMismatch {
            a: a.subdivision(),
            b: b.subdivision(),
        }
        .into());
    }
    Ok(())
}

/// Boundary mask: the regions of `V Δ S` with Euler characteristic one that
/// avoid every cell flagged in `inner`.
pub fn boundary_mask(
    v: &BinaryImage,
    s: &BinaryImage,
    inner: &BinaryImage,
    conn: Connectivity,
) -> Result<(BinaryImage, usize), TopoError> {
    check_same(v, s)?;
    if inner.shape() != v.shape() {
        return Err(VoxelError::ShapeMismatch {
            a: v.shape(),
            b: inner.shape(),
        }
        .into());
    }
    let diff = v.symmetric_difference(s)?;
    let labels = label_components(&diff, conn);
    let chi = euler_from_labels(&diff, &labels).per_region_chi;
    let mut touches = vec![false; labels.region_count];
    for (l, &b) in labels.labels.iter().zip(inner.bits()) {
        if *l != 0 && b {
            touches[*l as usize - 1] = true;
        }
    }
    let keep: Vec<bool> = (0..labels.region_count).map(|r| chi[r] == 1 && !touches[r]).collect();
    let bits: Vec<bool> = labels.labels.iter().map(|&l| l != 0 && keep[l as usize - 1]).collect();
    let count = keep.iter().filter(|&&k| k).count();
    Ok((BinaryImage::new(v.shape(), v.subdivision(), bits)?, count))
}

/// Masked image `F = (M ∩ V) ∪ (M' ∩ S)`.
pub fn apply_mask(v: &BinaryImage, s: &BinaryImage, m: &BinaryImage) -> Result<BinaryImage, TopoError> {
    check_same(v, s)?;
    check_same(v, m)?;
    Ok(m.intersection(v)?.union(&m.complement().intersection(s)?)?)
}

/// Compare `V` against the masked smooth image.
pub fn compare_masked(
    v: &BinaryImage,
    s: &BinaryImage,
    inner: &BinaryImage,
    conn: Connectivity,
) -> Result<ComparisonReport, TopoError> {
    let (m, count) = boundary_mask(v, s, inner, conn)?;
    let f = apply_mask(v, s, &m)?;
    let mut report = compare(v, &f, conn)?;
    report.mask_region_count = count;
    Ok(report)
}

/// An r-neighbourhood of a voxel, clipped to the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub center: [usize; 3],
    pub radius: usize,
    /// Inclusive voxel range of the clipped window.
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl Window {
    pub fn new(shape: Shape, center: [usize; 3], radius: usize) -> Self {
        let (lo, hi) = clipped_box(shape, center, radius);
        Window {
            center,
            radius,
            lo,
            hi,
        }
    }

    pub fn len(&self) -> usize {
        (0..3).map(|a| self.hi[a] - self.lo[a] + 1).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Inclusive voxel range of the (r-1)-neighbourhood, clipped.
    pub fn inner(&self, shape: Shape) -> ([usize; 3], [usize; 3]) {
        clipped_box(shape, self.center, self.radius - 1)
    }
}

fn clipped_box(shape: Shape, c: [usize; 3], r: usize) -> ([usize; 3], [usize; 3]) {
    let d = shape.dims();
    let mut lo = [0; 3];
    let mut hi = [0; 3];
    for a in 0..shape.ndim() {
        lo[a] = c[a].saturating_sub(r);
        hi[a] = (c[a] + r).min(d[a] - 1);
    }
    (lo, hi)
}

/// Per-voxel anomaly flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorField(pub BinaryImage);

impl IndicatorField {
    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    pub fn count(&self) -> usize {
        self.0.count()
    }

    pub fn is_clear(&self) -> bool {
        self.0.count() == 0
    }

    pub fn flagged(&self) -> Vec<[usize; 3]> {
        let shape = self.0.shape();
        (0..shape.len()).filter(|&i| self.0.bits()[i]).map(|i| shape.coords(i)).collect()
    }

    /// Holes enclosed by flagged voxels. Their interiors are not marked.
    pub fn enclosed_holes(&self) -> usize {
        let e = euler_characteristic(&self.0, Connectivity::Vertex);
        if self.0.shape().ndim() == 2 {
            (e.region_count() as i64 - e.total_chi).max(0) as usize
        } else {
            0
        }
    }
}

/// Window scanner over a voxel segmentation and a smooth segmentation.
#[derive(Debug, Clone)]
pub struct Scanner {
    voxels: Shape,
    v_up: BinaryImage,
    smooth: BinaryImage,
    n_sub: usize,
    radius: usize,
    conn: Connectivity,
}

impl Scanner {
    pub fn new(voxels: &BinaryImage, smooth: &BinaryImage, radius: usize, conn: Connectivity) -> Result<Self, TopoError> {
        if radius == 0 {
            return Err(TopoError::ZeroRadius);
        }
        let n_sub = smooth.subdivision();
        if voxels.subdivision() != 1 || smooth.shape() != voxels.shape().scaled(n_sub) {
            return Err(TopoError::SubdivisionMismatch {
                voxels: voxels.subdivision(),
                smooth: n_sub,
            });
        }
        Ok(Scanner {
            voxels: voxels.shape(),
            v_up: voxels.upsample(n_sub),
            smooth: smooth.clone(),
            n_sub,
            radius,
            conn,
        })
    }

    /// Window images `(V, S, inner)` on the subdivided grid.
    pub fn window_images(&self, center: [usize; 3]) -> (BinaryImage, BinaryImage, BinaryImage) {
        let w = Window::new(self.voxels, center, self.radius);
        let nd = self.voxels.ndim();
        let n = self.n_sub;
        let mut lo = [0; 3];
        let mut hi = [1; 3];
        for a in 0..nd {
            lo[a] = w.lo[a] * n;
            hi[a] = (w.hi[a] + 1) * n;
        }
        let v = self.v_up.crop(lo, hi);
        let s = self.smooth.crop(lo, hi);
        let (ilo, ihi) = w.inner(self.voxels);
        let mut inner = BinaryImage::filled(v.shape(), false).with_subdivision(n);
        let shape = v.shape();
        for i in 0..shape.len() {
            let c = shape.coords(i);
            let inside = (0..nd).all(|a| {
                let base = (c[a] + lo[a]) / n;
                base >= ilo[a] && base <= ihi[a]
            });
            if inside {
                inner.set(c, true);
            }
        }
        (v, s, inner)
    }

    /// Report for the window centred at a voxel.
    pub fn report(&self, center: [usize; 3]) -> ComparisonReport {
        let (v, s, inner) = self.window_images(center);
        compare_masked(&v, &s, &inner, self.conn).expect("window images share a grid")
    }

    pub fn flag(&self, center: [usize; 3]) -> bool {
        !self.report(center).verdict
    }

    pub fn scan(&self) -> IndicatorField {
        let mut ind = BinaryImage::filled(self.voxels, false);
        for i in 0..self.voxels.len() {
            let c = self.voxels.coords(i);
            if self.flag(c) {
                ind.set(c, true);
            }
        }
        IndicatorField(ind)
    }
}

/// Flag every voxel whose window changes topology.
pub fn scan(
    voxels: &BinaryImage,
    smooth: &BinaryImage,
    radius: usize,
    conn: Connectivity,
) -> Result<IndicatorField, TopoError> {
    Ok(Scanner::new(voxels, smooth, radius, conn)?.scan())
}

/// Active cells overlapping flagged voxels. The mesh's level-0 cells must be
/// the voxels.
pub fn mark_refinement(indicator: &IndicatorField, mesh: &HierarchicalMesh) -> Vec<CellId> {
    let mut out = Vec::new();
    for c in indicator.flagged() {
        let root = CellId { level: 0, index: c };
        if mesh.is_active(root) {
            out.push(root);
            continue;
        }
        for l in 1..=mesh.max_level() {
            for d in mesh.descendants(root, l) {
                if mesh.is_active(d) {
                    out.push(d);
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Parameters of the topology-preserving segmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologyParams {
    pub degree: usize,
    pub g_crit: f64,
    pub radius: usize,
    pub n_sub: usize,
    pub max_passes: usize,
    pub connectivity: Connectivity,
}

impl Default for TopologyParams {
    fn default() -> Self {
        TopologyParams {
            degree: 2,
            g_crit: 0.5,
            radius: 1,
            n_sub: 3,
            max_passes: 1,
            connectivity: Connectivity::Vertex,
        }
    }
}

/// Result of [`preserve_topology`]. When `converged` is false the last
/// indicator still has flags after `max_passes` refinements.
#[derive(Debug, Clone)]
pub struct TopologyOutcome {
    pub mesh: HierarchicalMesh,
    pub field: ThbField,
    pub voxels: BinaryImage,
    pub smooth: BinaryImage,
    /// One indicator per evaluated field; the first is for the unrefined one.
    pub history: Vec<IndicatorField>,
    pub passes: usize,
    pub converged: bool,
}

impl TopologyOutcome {
    pub fn final_indicator(&self) -> &IndicatorField {
        self.history.last().expect("at least one pass")
    }

    pub fn refined_cells(&self) -> usize {
        (0..self.mesh.max_level()).map(|l| self.mesh.refined_cells(l).len()).sum()
    }
}

/// Convolve, voxelize, scan, mark and refine until no window is flagged or
/// `max_passes` refinements were made.
pub fn preserve_topology(grid: &VoxelGrid, params: &TopologyParams) -> Result<TopologyOutcome, TopoError> {
    let voxels = threshold(grid, params.g_crit);
    let mut mesh = HierarchicalMesh::for_grid(grid);
    let mut history = Vec::new();
    let mut passes = 0;
    loop {
        let field = ThbField::from_grid(grid, ThbBasis::new(&mesh, params.degree))?;
        let smooth = voxelize_smooth(&field, grid, params.n_sub, params.g_crit);
        let ind = scan(&voxels, &smooth, params.radius, params.connectivity)?;
        let clear = ind.is_clear();
        history.push(ind);
        if clear || passes == params.max_passes {
            return Ok(TopologyOutcome {
                mesh,
                field,
                voxels,
                smooth,
                history,
                passes,
                converged: clear,
            });
        }
        let marks = mark_refinement(history.last().expect("pushed"), &mesh);
        mesh = mesh.refine(&marks, params.degree)?;
        passes += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::FnLevelSet;

    fn img(rows: &[&str]) -> BinaryImage {
        BinaryImage::from_rows(rows)
    }

    fn all_3x3() -> Vec<BinaryImage> {
        (0..512u32)
            .map(|m| {
                let bits = (0..9).map(|i| m >> i & 1 == 1).collect();
                BinaryImage::new(Shape::d2(3, 3), 1, bits).unwrap()
            })
            .collect()
    }

    #[test]
    fn identical_images_compare_true() {
        let a = img(&["#.#", ".#.", "#.#"]);
        assert!(compare(&a, &a, Connectivity::Vertex).unwrap().verdict);
    }

    #[test]
    fn verdict_follows_multisets() {
        let imgs = all_3x3();
        for (i, v) in imgs.iter().enumerate().step_by(7) {
            for s in imgs.iter().skip(i % 11).step_by(13) {
                let r = compare(v, s, Connectivity::Vertex).unwrap();
                let same = r.chi_v == r.chi_s && r.chi_v_complement == r.chi_s_complement;
                assert_eq!(r.verdict, same);
            }
        }
    }

    #[test]
    fn empty_mask_keeps_smooth_image() {
        let v = img(&["##..", "##..", "....", "...."]);
        let m = BinaryImage::filled(v.shape(), false);
        let s = img(&[".#..", "###.", ".#..", "...."]);
        assert_eq!(apply_mask(&v, &s, &m).unwrap(), s);
    }

    #[test]
    fn identical_images_have_empty_mask() {
        let v = img(&["#..", ".#.", "..#"]);
        let inner = img(&["...", ".#.", "..."]);
        let (m, n) = boundary_mask(&v, &v, &inner, Connectivity::Vertex).unwrap();
        assert_eq!(n, 0);
        assert!(m.is_all(false));
    }

    #[test]
    fn region_crossing_inner_ring_is_not_masked() {
        let v = img(&[".....", ".....", ".....", ".....", "....."]);
        let s = img(&["#....", "##...", ".....", ".....", "....."]);
        let s2 = img(&["#....", "##...", "..#..", ".....", "....."]);
        let inner = img(&[".....", ".###.", ".###.", ".###.", "....."]);
        let (m, n) = boundary_mask(&v, &s, &inner, Connectivity::Vertex).unwrap();
        // (1,1) is inside the inner block.
        assert_eq!(n, 0);
        assert!(m.is_all(false));
        let s3 = img(&["#....", "#....", ".....", ".....", "....."]);
        let (m3, n3) = boundary_mask(&v, &s3, &inner, Connectivity::Vertex).unwrap();
        assert_eq!(n3, 1);
        assert_eq!(m3, s3);
        let (_, n2) = boundary_mask(&v, &s2, &inner, Connectivity::Vertex).unwrap();
        assert_eq!(n2, 0);
    }

    #[test]
    fn ring_shaped_difference_is_not_masked() {
        let v = BinaryImage::filled(Shape::d2(5, 5), false);
        let s = img(&["###..", "#.#..", "###..", ".....", "....."]);
        let inner = img(&[".....", ".....", ".....", "...#.", "....."]);
        let (_, n) = boundary_mask(&v, &s, &inner, Connectivity::Vertex).unwrap();
        assert_eq!(n, 0);
    }

    #[test]
    fn complement_identities_exhaustive_4x4() {
        // V, S on 4x4 with a fixed inner block; M and F must commute with
        // complementation.
        let inner = img(&["....", ".##.", ".##.", "...."]);
        let mut seed = 7u64;
        for vm in (0..1u32 << 16).step_by(97) {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            let sm = (seed >> 40) as u32 & 0xffff;
            let mk = |m: u32| BinaryImage::new(Shape::d2(4, 4), 1, (0..16).map(|i| m >> i & 1 == 1).collect()).unwrap();
            let (v, s) = (mk(vm), mk(sm));
            let (vc, sc) = (v.complement(), s.complement());
            let (m, _) = boundary_mask(&v, &s, &inner, Connectivity::Vertex).unwrap();
            let (mc, _) = boundary_mask(&vc, &sc, &inner, Connectivity::Vertex).unwrap();
            assert_eq!(m, mc);
            let f = apply_mask(&v, &s, &m).unwrap();
            assert_eq!(f.complement(), apply_mask(&vc, &sc, &mc).unwrap());
            let random_m = mk(sm.rotate_left(5));
            assert_eq!(
                apply_mask(&v, &s, &random_m).unwrap().complement(),
                apply_mask(&vc, &sc, &random_m).unwrap()
            );
        }
    }

    #[test]
    fn window_shapes() {
        let sh = Shape::d2(10, 10);
        let w = Window::new(sh, [5, 5, 0], 2);
        assert_eq!(w.len(), 25);
        assert_eq!(w.inner(sh), ([4, 4, 0], [6, 6, 0]));
        let c = Window::new(sh, [0, 9, 0], 1);
        assert_eq!((c.lo, c.hi), ([0, 8, 0], [1, 9, 0]));
        assert_eq!(c.inner(sh), ([0, 9, 0], [0, 9, 0]));
        let w3 = Window::new(Shape::d3(9, 9, 9), [4, 4, 4], 1);
        assert_eq!(w3.len(), 27);
    }

    #[test]
    fn smooth_equal_to_voxels_gives_no_flags() {
        let v = img(&["#..#.", "##.#.", "...#.", "####.", "....."]);
        for n in 1..=3 {
            let ind = scan(&v, &v.upsample(n), 1, Connectivity::Vertex).unwrap();
            assert!(ind.is_clear());
        }
    }

    #[test]
    fn scan_is_order_independent() {
        let v = img(&["#..#..", "##.#..", "...#..", "####..", "......", "..#..."]);
        let s = img(&["#..#..", "#..#..", "......", ".###..", "......", "......"]).upsample(2);
        let sc = Scanner::new(&v, &s, 1, Connectivity::Vertex).unwrap();
        let full = sc.scan();
        let shape = v.shape();
        let mut rev = BinaryImage::filled(shape, false);
        for i in (0..shape.len()).rev() {
            let c = shape.coords(i);
            rev.set(c, sc.flag(c));
        }
        assert_eq!(full.0, rev);
        assert!(full.count() > 0);
    }

    #[test]
    fn constant_field_voxelizes_full() {
        let g = VoxelGrid::unit(Shape::d2(4, 3), vec![1.0; 12]).unwrap();
        let f = FnLevelSet::new(2, [0.0; 3], [4.0, 3.0, 0.0], |_: &[f64; 3]| 1.0);
        for n in 1..=3 {
            let s = voxelize_smooth(&f, &g, n, 0.5);
            assert!(s.is_all(true));
            assert_eq!(s.subdivision(), n);
        }
    }

    #[test]
    fn marking_on_flat_mesh_returns_voxels() {
        let g = VoxelGrid::unit(Shape::d2(6, 6), vec![0.0; 36]).unwrap();
        let mesh = HierarchicalMesh::for_grid(&g);
        let mut ind = BinaryImage::filled(Shape::d2(6, 6), false);
        assert!(mark_refinement(&IndicatorField(ind.clone()), &mesh).is_empty());
        ind.set([2, 3, 0], true);
        assert_eq!(
            mark_refinement(&IndicatorField(ind.clone()), &mesh),
            vec![CellId { level: 0, index: [2, 3, 0] }]
        );
        let refined = mesh.refine(&[CellId { level: 0, index: [2, 3, 0] }], 2).unwrap();
        let marks = mark_refinement(&IndicatorField(ind), &refined);
        assert_eq!(marks.len(), 4);
        assert!(marks.iter().all(|c| c.level == 1));
    }

    #[test]
    fn faithful_image_needs_no_refinement() {
        let mut v = vec![0.0; 16 * 16];
        for y in 4..12 {
            for x in 4..12 {
                v[y * 16 + x] = 1.0;
            }
        }
        let g = VoxelGrid::unit(Shape::d2(16, 16), v).unwrap();
        let out = preserve_topology(&g, &TopologyParams::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.passes, 0);
        assert_eq!(out.mesh.max_level(), 0);
    }
}
