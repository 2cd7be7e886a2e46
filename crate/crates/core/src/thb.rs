//! Truncated hierarchical B-splines on a [`HierarchicalMesh`].
//!
//! A level-ℓ B-spline is selected when its support lies in `Ω^ℓ` but not in
//! `Ω^{ℓ+1}`. Its truncation is built level by level through the two-scale
//! relation, dropping the finer-level children whose support lies inside the
//! finer region. On every active cell each basis function is stored as a row
//! of coefficients over the local B-splines of that cell's level.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::bspline::{tensor_local, BSpline1d, TensorLocal};
use crate::hierarchy::{BoxCounter, CellId, HierarchicalMesh};
use crate::levelset::{cell_moments, check_domain, finish, ConvolutionCoefficients, LevelSet, LevelSetError};
use crate::voxel::VoxelGrid;

/// Per-level univariate bases.
#[derive(Debug, Clone)]
struct LevelAxes {
    axes: [BSpline1d; 3],
}

impl LevelAxes {
    fn fdims(&self) -> [usize; 3] {
        [
            self.axes[0].n_functions(),
            self.axes[1].n_functions(),
            self.axes[2].n_functions(),
        ]
    }

    fn flin(&self, m: [usize; 3]) -> usize {
        let d = self.fdims();
        m[0] + d[0] * (m[1] + d[1] * m[2])
    }

    fn fmulti(&self, i: usize) -> [usize; 3] {
        let d = self.fdims();
        [i % d[0], (i / d[0]) % d[1], i / (d[0] * d[1])]
    }

    fn support(&self, m: [usize; 3]) -> ([usize; 3], [usize; 3]) {
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for a in 0..3 {
            let (l, h) = self.axes[a].support(m[a]);
            lo[a] = l;
            hi[a] = h;
        }
        (lo, hi)
    }

    fn n_local(&self) -> usize {
        (self.axes[0].degree() + 1) * (self.axes[1].degree() + 1) * (self.axes[2].degree() + 1)
    }

    fn local_index(&self, off: [usize; 3]) -> usize {
        let np = [
            self.axes[0].degree() + 1,
            self.axes[1].degree() + 1,
            self.axes[2].degree() + 1,
        ];
        off[0] + np[0] * (off[1] + np[1] * off[2])
    }
}

/// Identifies a selected function by level and tensor index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ThbFunction {
    pub level: usize,
    pub index: [usize; 3],
}

/// Truncated hierarchical B-spline basis.
#[derive(Debug, Clone)]
pub struct ThbBasis {
    mesh: HierarchicalMesh,
    degree: usize,
    levels: Vec<LevelAxes>,
    functions: Vec<ThbFunction>,
    active: Vec<CellId>,
    /// `active_index[ℓ][c]` or `u32::MAX`.
    active_index: Vec<Vec<u32>>,
    /// Per active cell: `(function, row over the local B-splines)`.
    rows: Vec<Vec<(u32, Vec<f64>)>>,
}

/// Value and derivatives of the basis functions nonzero at a point.
#[derive(Debug, Clone, Default)]
pub struct ThbLocal {
    pub cell: Option<CellId>,
    pub functions: Vec<usize>,
    pub values: Vec<f64>,
    pub gradients: Vec<[f64; 3]>,
    pub hessians: Vec<[[f64; 3]; 3]>,
}

impl ThbBasis {
    pub fn new(mesh: &HierarchicalMesh, degree: usize) -> Self {
        let nd = mesh.ndim();
        let max_l = mesh.max_level();
        let levels: Vec<LevelAxes> = (0..=max_l + 1)
            .map(|l| {
                let d = mesh.dims(l);
                let mut axes = [BSpline1d::constant(), BSpline1d::constant(), BSpline1d::constant()];
                for a in 0..nd {
                    axes[a] = BSpline1d::new(degree, d[a], mesh.origin()[a], mesh.lengths()[a]).expect("valid level basis");
                }
                LevelAxes { axes }
            })
            .collect();
        let omega: Vec<BoxCounter> = (0..=max_l + 1)
            .map(|l| BoxCounter::new(mesh.dims(l), &mesh.omega_mask(l)))
            .collect();

        // Selection.
        let mut functions = Vec::new();
        for l in 0..=max_l {
            let lv = &levels[l];
            let n: usize = lv.fdims().iter().product();
            for i in 0..n {
                let m = lv.fmulti(i);
                let (lo, hi) = lv.support(m);
                if !omega[l].all(lo, hi) {
                    continue;
                }
                let (flo, fhi) = child_box(lo, hi, nd);
                if omega[l + 1].all(flo, fhi) {
                    continue;
                }
                functions.push(ThbFunction { level: l, index: m });
            }
        }

        // Two-scale relations per level and axis.
        let two_scale: Vec<[Vec<Vec<(usize, f64)>>; 3]> = (0..max_l)
            .map(|l| {
                let mut out: [Vec<Vec<(usize, f64)>>; 3] = [vec![vec![(0, 1.0)]], vec![vec![(0, 1.0)]], vec![vec![(0, 1.0)]]];
                for a in 0..nd {
                    out[a] = levels[l].axes[a].two_scale();
                }
                out
            })
            .collect();

        let active = mesh.active_cells();
        let mut active_index: Vec<Vec<u32>> = (0..=max_l).map(|l| vec![u32::MAX; mesh.level_len(l)]).collect();
        for (k, id) in active.iter().enumerate() {
            let li = mesh.linear(id.level, id.index);
            active_index[id.level][li] = k as u32;
        }
        let mut rows: Vec<Vec<(u32, Vec<f64>)>> = vec![Vec::new(); active.len()];

        for (fi, f) in functions.iter().enumerate() {
            let mut coefs: BTreeMap<usize, f64> = BTreeMap::new();
            coefs.insert(levels[f.level].flin(f.index), 1.0);
            let mut l = f.level;
            loop {
                scatter_rows(mesh, &levels[l], l, &coefs, fi as u32, &active_index[l], &mut rows);
                if l == max_l {
                    break;
                }
                // Refine to level l+1 and truncate.
                let mut next: BTreeMap<usize, f64> = BTreeMap::new();
                for (&j, &c) in &coefs {
                    let m = levels[l].fmulti(j);
                    let r = &two_scale[l];
                    for &(fx, cx) in &r[0][m[0]] {
                        for &(fy, cy) in &r[1][m[1]] {
                            for &(fz, cz) in &r[2][m[2]] {
                                let key = levels[l + 1].flin([fx, fy, fz]);
                                *next.entry(key).or_insert(0.0) += c * cx * cy * cz;
                            }
                        }
                    }
                }
                next.retain(|&j, _| {
                    let (lo, hi) = levels[l + 1].support(levels[l + 1].fmulti(j));
                    !omega[l + 1].all(lo, hi)
                });
                if next.is_empty() {
                    break;
                }
                coefs = next;
                l += 1;
            }
        }

        ThbBasis {
            mesh: mesh.clone(),
            degree,
            levels,
            functions,
            active,
            active_index,
            rows,
        }
    }

    pub fn mesh(&self) -> &HierarchicalMesh {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn ndim(&self) -> usize {
        self.mesh.ndim()
    }

    pub fn n_functions(&self) -> usize {
        self.functions.len()
    }

    pub fn functions(&self) -> &[ThbFunction] {
        &self.functions
    }

    pub fn active_cells(&self) -> &[CellId] {
        &self.active
    }

    /// `(function, row)` pairs of an active cell.
    pub fn cell_rows(&self, active: usize) -> &[(u32, Vec<f64>)] {
        &self.rows[active]
    }

    pub fn level_axes(&self, level: usize) -> &[BSpline1d; 3] {
        &self.levels[level].axes
    }

    pub fn active_position(&self, id: CellId) -> Option<usize> {
        let i = self.active_index.get(id.level)?[self.mesh.linear(id.level, id.index)];
        (i != u32::MAX).then_some(i as usize)
    }

    /// Nonzero basis functions at `x` with up to `n_ders` derivatives.
    pub fn eval(&self, x: &[f64; 3], n_ders: usize) -> ThbLocal {
        let id = self.mesh.locate(x);
        let pos = self.active_position(id).expect("located cell is active");
        let t = tensor_local(&self.levels[id.level].axes, self.ndim(), id.index, x, n_ders);
        self.combine(Some(id), pos, &t, n_ders)
    }

    fn combine(&self, cell: Option<CellId>, pos: usize, t: &TensorLocal, n_ders: usize) -> ThbLocal {
        let rows = &self.rows[pos];
        let mut out = ThbLocal {
            cell,
            functions: Vec::with_capacity(rows.len()),
            values: Vec::with_capacity(rows.len()),
            gradients: Vec::new(),
            hessians: Vec::new(),
        };
        for (f, row) in rows {
            out.functions.push(*f as usize);
            let mut v = 0.0;
            for (r, n) in row.iter().zip(&t.values) {
                v += r * n;
            }
            out.values.push(v);
            if n_ders >= 1 {
                let mut g = [0.0; 3];
                for (r, gr) in row.iter().zip(&t.gradients) {
                    for a in 0..3 {
                        g[a] += r * gr[a];
                    }
                }
                out.gradients.push(g);
            }
            if n_ders >= 2 {
                let mut h = [[0.0; 3]; 3];
                for (r, hr) in row.iter().zip(&t.hessians) {
                    for a in 0..3 {
                        for b in 0..3 {
                            h[a][b] += r * hr[a][b];
                        }
                    }
                }
                out.hessians.push(h);
            }
        }
        out
    }
}

fn child_box(lo: [usize; 3], hi: [usize; 3], nd: usize) -> ([usize; 3], [usize; 3]) {
    let mut flo = lo;
    let mut fhi = hi;
    for a in 0..nd {
        flo[a] = 2 * lo[a];
        fhi[a] = 2 * hi[a] + 1;
    }
    (flo, fhi)
}

fn scatter_rows(
    mesh: &HierarchicalMesh,
    lv: &LevelAxes,
    level: usize,
    coefs: &BTreeMap<usize, f64>,
    fi: u32,
    active_index: &[u32],
    rows: &mut [Vec<(u32, Vec<f64>)>],
) {
    let n_local = lv.n_local();
    for (&j, &c) in coefs {
        let m = lv.fmulti(j);
        let (lo, hi) = lv.support(m);
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let k = active_index[mesh.linear(level, [x, y, z])];
                    if k == u32::MAX {
                        continue;
                    }
                    let list = &mut rows[k as usize];
                    let slot = match list.iter().position(|(f, _)| *f == fi) {
                        Some(s) => s,
                        None => {
                            list.push((fi, vec![0.0; n_local]));
                            list.len() - 1
                        }
                    };
                    let off = [m[0] - x, m[1] - y, m[2] - z];
                    list[slot].1[lv.local_index(off)] += c;
                }
            }
        }
    }
}

/// Convolve grayscale data with a THB basis.
pub fn convolve_thb(grid: &VoxelGrid, basis: &ThbBasis) -> Result<ConvolutionCoefficients, LevelSetError> {
    check_domain(grid, basis.level_axes(0), basis.ndim())?;
    let n = basis.n_functions();
    let mut num = vec![0.0; n];
    let mut vol = vec![0.0; n];
    let (mut mg, mut m1) = (Vec::new(), Vec::new());
    for (pos, id) in basis.active.iter().enumerate() {
        cell_moments(grid, &basis.levels[id.level].axes, basis.ndim(), id.index, &mut mg, &mut m1);
        for (f, row) in &basis.rows[pos] {
            let mut sg = 0.0;
            let mut s1 = 0.0;
            for ((r, a), b) in row.iter().zip(&mg).zip(&m1) {
                sg += r * a;
                s1 += r * b;
            }
            num[*f as usize] += sg;
            vol[*f as usize] += s1;
        }
    }
    finish(num, vol)
}

/// A THB level set `f = Σ a_i T_i`.
#[derive(Debug, Clone)]
pub struct ThbField {
    pub basis: ThbBasis,
    pub coeffs: ConvolutionCoefficients,
}

impl ThbField {
    pub fn from_grid(grid: &VoxelGrid, basis: ThbBasis) -> Result<Self, LevelSetError> {
        let coeffs = convolve_thb(grid, &basis)?;
        Ok(ThbField { basis, coeffs })
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let l = self.basis.eval(x, 0);
        let mut v = 0.0;
        for (f, n) in l.functions.iter().zip(&l.values) {
            v += self.coeffs.a[*f] * n;
        }
        v
    }

    pub fn gradient(&self, x: &[f64; 3]) -> [f64; 3] {
        let l = self.basis.eval(x, 1);
        let mut g = [0.0; 3];
        for (f, gr) in l.functions.iter().zip(&l.gradients) {
            for a in 0..3 {
                g[a] += self.coeffs.a[*f] * gr[a];
            }
        }
        g
    }
}

impl LevelSet for ThbField {
    fn ndim(&self) -> usize {
        self.basis.ndim()
    }
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let o = self.basis.mesh.origin();
        let l = self.basis.mesh.lengths();
        (o, [o[0] + l[0], o[1] + l[1], o[2] + l[2]])
    }
    fn value(&self, x: &[f64; 3]) -> f64 {
        self.eval(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::{basis_on_grid, UniformField};
    use crate::voxel::Shape;
    use proptest::prelude::*;

    fn grid(n: usize, seed: u64) -> VoxelGrid {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let v: Vec<f64> = (0..n * n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64).clamp(0.0, 1.0)
            })
            .collect();
        VoxelGrid::new(Shape::d2(n, n), &[0.5, 0.5], v).unwrap()
    }

    fn sample_points(n: usize, l: f64) -> Vec<[f64; 3]> {
        let mut s = 12345u64;
        (0..n)
            .map(|_| {
                let mut r = || {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (s >> 11) as f64 / (1u64 << 53) as f64
                };
                [r() * l, r() * l, 0.0]
            })
            .collect()
    }

    fn three_level(g: &VoxelGrid, p: usize) -> HierarchicalMesh {
        let m = HierarchicalMesh::for_grid(g);
        let m = m.refine(&[CellId { level: 0, index: [4, 5, 0] }, CellId { level: 0, index: [5, 5, 0] }], p).unwrap();
        m.refine(&[CellId { level: 1, index: [9, 10, 0] }], p).unwrap()
    }

    #[test]
    fn coarsest_level_bit_matches_uniform() {
        let g = grid(9, 3);
        let m = HierarchicalMesh::for_grid(&g);
        let thb = ThbField::from_grid(&g, ThbBasis::new(&m, 2)).unwrap();
        let uni = UniformField::from_grid(&g, basis_on_grid(&g, 2, 1).unwrap()).unwrap();
        assert_eq!(thb.coeffs, uni.coeffs);
        for x in sample_points(200, 4.5) {
            assert_eq!(thb.eval(&x).to_bits(), uni.eval(&x).to_bits());
        }
    }

    #[test]
    fn uniform_hierarchy_equals_fine_uniform() {
        let g = grid(6, 8);
        let m = HierarchicalMesh::for_grid(&g).uniform(1);
        let thb = ThbField::from_grid(&g, ThbBasis::new(&m, 2)).unwrap();
        let uni = UniformField::from_grid(&g, basis_on_grid(&g, 2, 2).unwrap()).unwrap();
        assert_eq!(thb.basis.n_functions(), uni.basis.n_functions());
        for x in sample_points(200, 3.0) {
            assert!((thb.eval(&x) - uni.eval(&x)).abs() < 1e-13);
        }
    }

    #[test]
    fn truncation_matches_two_scale_oracle_1d() {
        // Coarse function minus its children supported in Ω¹.
        let n = 12;
        let g = VoxelGrid::new(Shape::with_ndim(&[n]).unwrap(), &[1.0], vec![0.0; n]).unwrap();
        let m = HierarchicalMesh::for_grid(&g)
            .refine(&[CellId { level: 0, index: [6, 0, 0] }], 2)
            .unwrap();
        let b = ThbBasis::new(&m, 2);
        let coarse = BSpline1d::new(2, n, 0.0, n as f64).unwrap();
        let fine = coarse.refined(2);
        let rel = coarse.two_scale();
        // Ω¹ covers coarse cells 4..=8, i.e. fine cells 8..=17.
        let fine_inside = |j: usize| {
            let (lo, hi) = fine.support(j);
            lo >= 8 && hi <= 17
        };
        for (fi, f) in b.functions().iter().enumerate() {
            if f.level != 0 {
                continue;
            }
            let i = f.index[0];
            for s in 0..=240 {
                let x = n as f64 * s as f64 / 240.0;
                let expected: f64 = rel[i]
                    .iter()
                    .filter(|(j, _)| !fine_inside(*j))
                    .map(|&(j, c)| c * fine.value(j, x))
                    .sum();
                let l = b.eval(&[x, 0.0, 0.0], 0);
                let got = l.functions.iter().position(|&k| k == fi).map_or(0.0, |k| l.values[k]);
                assert!((got - expected).abs() < 1e-14, "fn {i} at {x}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn selection_rules_hold() {
        let g = grid(10, 1);
        let m = three_level(&g, 2);
        let b = ThbBasis::new(&m, 2);
        assert_eq!(m.max_level(), 2);
        for f in b.functions() {
            let lv = &b.levels[f.level];
            let (lo, hi) = lv.support(f.index);
            let om = BoxCounter::new(m.dims(f.level), &m.omega_mask(f.level));
            assert!(om.all(lo, hi));
            let (flo, fhi) = child_box(lo, hi, 2);
            let om1 = BoxCounter::new(m.dims(f.level + 1), &m.omega_mask(f.level + 1));
            assert!(!om1.all(flo, fhi));
        }
    }

    #[test]
    fn continuity_across_level_interfaces() {
        let g = grid(10, 5);
        let m = three_level(&g, 2);
        let f = ThbField::from_grid(&g, ThbBasis::new(&m, 2)).unwrap();
        // Walk along lines crossing interfaces and compare one-sided limits.
        let eps = 1e-9;
        for id in m.active_cells() {
            let (lo, hi) = m.cell_bounds(id);
            let y = 0.5 * (lo[1] + hi[1]) + 0.013;
            for &xb in &[lo[0], hi[0]] {
                if xb <= 0.0 || xb >= 5.0 {
                    continue;
                }
                let a = [xb - eps, y, 0.0];
                let b = [xb + eps, y, 0.0];
                assert!((f.eval(&a) - f.eval(&b)).abs() < 1e-8);
                let ga = f.gradient(&a);
                let gb = f.gradient(&b);
                assert!((ga[0] - gb[0]).abs() < 1e-6 && (ga[1] - gb[1]).abs() < 1e-6);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn partition_of_unity_and_conservation(
            p in 2usize..=3,
            seed in 0u64..1000,
            marks in proptest::collection::vec((1usize..9, 1usize..9), 1..4),
        ) {
            let g = grid(10, seed);
            let ids: Vec<CellId> = marks.iter().map(|&(x, y)| CellId { level: 0, index: [x, y, 0] }).collect();
            let m = HierarchicalMesh::for_grid(&g).refine(&ids, p).unwrap();
            let l1: Vec<CellId> = m.active_cells().into_iter().filter(|c| c.level == 1).take(2).collect();
            let m = m.refine(&l1, p).unwrap();
            let b = ThbBasis::new(&m, p);
            for x in sample_points(300, 5.0) {
                let l = b.eval(&x, 0);
                let s: f64 = l.values.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(l.values.iter().all(|&v| v > -1e-13));
            }
            let f = ThbField::from_grid(&g, b).unwrap();
            let total = g.integral();
            prop_assert!((f.coeffs.field_integral() - total).abs() / total < 1e-10);
        }
    }
}
