//! Uniform open B-spline bases (Cox–de Boor) in one to three dimensions.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::math;

/// Largest supported degree plus one.
pub const MAX_ORDER: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BSplineError {
    #[error("degree {0} outside 0..={max}", max = MAX_ORDER - 1)]
    BadDegree(usize),
    #[error("a basis needs at least one cell per axis")]
    NoCells,
    #[error("domain length must be positive")]
    BadLength,
    #[error("point {0:?} lies outside the spline domain")]
    OutsideDomain([f64; 3]),
}

/// Univariate open uniform B-spline basis of degree `p` on `n_cells` equal
/// cells over `[origin, origin + length]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BSpline1d {
    degree: usize,
    n_cells: usize,
    origin: f64,
    length: f64,
}

/// Values (and derivatives) of the `p + 1` functions nonzero on a cell.
/// `ders[k][j]` is the k-th derivative of local function `j`, which is
/// global function `cell + j`.
#[derive(Debug, Clone, Copy)]
pub struct LocalValues {
    pub cell: usize,
    pub ders: [[f64; MAX_ORDER]; 3],
}

impl BSpline1d {
    pub fn new(degree: usize, n_cells: usize, origin: f64, length: f64) -> Result<Self, BSplineError> {
        if degree >= MAX_ORDER {
            return Err(BSplineError::BadDegree(degree));
        }
        if n_cells == 0 {
            return Err(BSplineError::NoCells);
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(BSplineError::BadLength);
        }
        Ok(BSpline1d {
            degree,
            n_cells,
            origin,
            length,
        })
    }

    /// Constant single function on one cell; used for unused axes.
    pub fn constant() -> Self {
        BSpline1d {
            degree: 0,
            n_cells: 1,
            origin: 0.0,
            length: 1.0,
        }
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    #[inline]
    pub fn n_functions(&self) -> usize {
        self.n_cells + self.degree
    }

    #[inline]
    pub fn origin(&self) -> f64 {
        self.origin
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    #[inline]
    pub fn mesh_size(&self) -> f64 {
        self.length / self.n_cells as f64
    }

    /// Coordinate of mesh line `i`, exact at both ends.
    #[inline]
    pub fn breakpoint(&self, i: usize) -> f64 {
        self.origin + (i as f64 * self.length) / self.n_cells as f64
    }

    /// Entry `k` of the open knot vector.
    #[inline]
    pub fn knot(&self, k: isize) -> f64 {
        let i = (k - self.degree as isize).clamp(0, self.n_cells as isize) as usize;
        self.breakpoint(i)
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..(self.n_functions() + self.degree + 1) as isize)
            .map(|k| self.knot(k))
            .collect()
    }

    /// Cell containing `x`, clamped to the domain.
    #[inline]
    pub fn cell_of(&self, x: f64) -> usize {
        let t = (x - self.origin) / self.length * self.n_cells as f64;
        let c = math::floor(t);
        if c < 0.0 {
            0
        } else {
            (c as usize).min(self.n_cells - 1)
        }
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.origin - tol && x <= self.origin + self.length + tol
    }

    /// Cells on which function `i` is nonzero (inclusive range).
    #[inline]
    pub fn support(&self, i: usize) -> (usize, usize) {
        let lo = i.saturating_sub(self.degree);
        let hi = i.min(self.n_cells - 1);
        (lo, hi)
    }

    /// Functions nonzero on cell `c` (inclusive range).
    #[inline]
    pub fn functions_on(&self, c: usize) -> (usize, usize) {
        (c, c + self.degree)
    }

    /// Values and up to `n_ders` (≤ 2) derivatives of the functions nonzero
    /// on `cell`, evaluated at `x`. `x` may lie on the cell boundary.
    pub fn local(&self, cell: usize, x: f64, n_ders: usize) -> LocalValues {
        let p = self.degree;
        let span = (cell + p) as isize;
        let mut ndu = [[0.0f64; MAX_ORDER]; MAX_ORDER];
        let mut left = [0.0f64; MAX_ORDER];
        let mut right = [0.0f64; MAX_ORDER];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knot(span + 1 - j as isize);
            right[j] = self.knot(span + j as isize) - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut out = LocalValues {
            cell,
            ders: [[0.0; MAX_ORDER]; 3],
        };
        for j in 0..=p {
            out.ders[0][j] = ndu[j][p];
        }
        let n_ders = n_ders.min(2).min(p);
        if n_ders == 0 {
            return out;
        }
        let mut a = [[0.0f64; MAX_ORDER]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=n_ders {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                out.ders[k][r] = d;
                core::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for k in 1..=n_ders {
            for j in 0..=p {
                out.ders[k][j] *= factor;
            }
            factor *= (p - k) as f64;
        }
        out
    }

    /// Value of the single function `i` at `x` (zero off its support).
    pub fn value(&self, i: usize, x: f64) -> f64 {
        let c = self.cell_of(x);
        if i < c || i > c + self.degree {
            return 0.0;
        }
        self.local(c, x, 0).ders[0][i - c]
    }

    /// Exact integral of function `i`: (t_{i+p+1} − t_i) / (p + 1).
    pub fn integral(&self, i: usize) -> f64 {
        let p = self.degree as isize;
        (self.knot(i as isize + p + 1) - self.knot(i as isize)) / (p + 1) as f64
    }

    /// The same basis on a mesh refined `factor` times.
    pub fn refined(&self, factor: usize) -> Self {
        BSpline1d {
            n_cells: self.n_cells * factor,
            ..self.clone()
        }
    }

    /// Two-scale relation for dyadic refinement: entry `i` lists the
    /// `(fine index, coefficient)` pairs with `N_i = Σ c N^fine_j`.
    pub fn two_scale(&self) -> Vec<Vec<(usize, f64)>> {
        let n = self.n_functions();
        let p = self.degree;
        let mut knots = self.knots();
        // Row r of `ctrl` holds the coefficients of all coarse functions on
        // the current basis function r.
        let mut ctrl: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                let mut row = vec![0.0; n];
                row[r] = 1.0;
                row
            })
            .collect();
        for c in 0..self.n_cells {
            let x = 0.5 * (self.breakpoint(c) + self.breakpoint(c + 1));
            // Span k with knots[k] <= x < knots[k + 1].
            let k = knots.iter().rposition(|&t| t <= x).expect("knot below x");
            let mut next = Vec::with_capacity(ctrl.len() + 1);
            for i in 0..=ctrl.len() {
                if i + p <= k {
                    next.push(ctrl[i].clone());
                } else if i > k {
                    next.push(ctrl[i - 1].clone());
                } else {
                    let alpha = (x - knots[i]) / (knots[i + p] - knots[i]);
                    let row: Vec<f64> = ctrl[i]
                        .iter()
                        .zip(&ctrl[i - 1])
                        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                        .collect();
                    next.push(row);
                }
            }
            ctrl = next;
            knots.insert(k + 1, x);
        }
        let mut out = vec![Vec::new(); n];
        for (fine, row) in ctrl.iter().enumerate() {
            for (coarse, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    out[coarse].push((fine, v));
                }
            }
        }
        out
    }
}

/// Tensor-product values of the `(p+1)^d` functions nonzero on one cell.
/// Local function `j` has per-axis offsets `j = jx + (px+1)(jy + (py+1) jz)`.
#[derive(Debug, Clone, Default)]
pub struct TensorLocal {
    pub cell: [usize; 3],
    pub offsets: Vec<[usize; 3]>,
    pub values: Vec<f64>,
    pub gradients: Vec<[f64; 3]>,
    pub hessians: Vec<[[f64; 3]; 3]>,
}

/// Evaluate a tensor basis on a known cell.
pub fn tensor_local(axes: &[BSpline1d; 3], ndim: usize, cell: [usize; 3], x: &[f64; 3], n_ders: usize) -> TensorLocal {
    let lv = [
        axes[0].local(cell[0], x[0], n_ders),
        axes[1].local(cell[1], x[1], n_ders),
        axes[2].local(cell[2], x[2], n_ders),
    ];
    let np = [axes[0].degree() + 1, axes[1].degree() + 1, axes[2].degree() + 1];
    let n = np[0] * np[1] * np[2];
    let mut out = TensorLocal {
        cell,
        offsets: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        gradients: Vec::new(),
        hessians: Vec::new(),
    };
    if n_ders >= 1 {
        out.gradients.reserve(n);
    }
    if n_ders >= 2 {
        out.hessians.reserve(n);
    }
    for k in 0..np[2] {
        for j in 0..np[1] {
            for i in 0..np[0] {
                let idx = [i, j, k];
                let v = |a: usize, d: usize| lv[a].ders[d][idx[a]];
                out.offsets.push(idx);
                out.values.push(v(0, 0) * v(1, 0) * v(2, 0));
                if n_ders >= 1 {
                    let mut g = [0.0; 3];
                    for a in 0..ndim {
                        let mut prod = 1.0;
                        for b in 0..3 {
                            prod *= v(b, if a == b { 1 } else { 0 });
                        }
                        g[a] = prod;
                    }
                    out.gradients.push(g);
                }
                if n_ders >= 2 {
                    let mut h = [[0.0; 3]; 3];
                    for a in 0..ndim {
                        for c in 0..ndim {
                            let mut order = [0usize; 3];
                            order[a] += 1;
                            order[c] += 1;
                            let mut prod = 1.0;
                            for b in 0..3 {
                                prod *= v(b, order[b]);
                            }
                            h[a][c] = prod;
                        }
                    }
                    out.hessians.push(h);
                }
            }
        }
    }
    out
}

/// Tensor-product uniform B-spline basis over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformBSplineBasis {
    ndim: usize,
    axes: [BSpline1d; 3],
}

impl UniformBSplineBasis {
    pub fn new(
        ndim: usize,
        degree: usize,
        cells: &[usize],
        origin: &[f64],
        lengths: &[f64],
    ) -> Result<Self, BSplineError> {
        let mut axes = [BSpline1d::constant(), BSpline1d::constant(), BSpline1d::constant()];
        for a in 0..ndim {
            axes[a] = BSpline1d::new(degree, cells[a], origin[a], lengths[a])?;
        }
        Ok(UniformBSplineBasis { ndim, axes })
    }

    pub fn from_axes(ndim: usize, axes: [BSpline1d; 3]) -> Self {
        UniformBSplineBasis { ndim, axes }
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.ndim
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.axes[0].degree()
    }

    #[inline]
    pub fn axes(&self) -> &[BSpline1d; 3] {
        &self.axes
    }

    pub fn cells(&self) -> [usize; 3] {
        [self.axes[0].n_cells(), self.axes[1].n_cells(), self.axes[2].n_cells()]
    }

    pub fn n_cells_total(&self) -> usize {
        let c = self.cells();
        c[0] * c[1] * c[2]
    }

    pub fn function_dims(&self) -> [usize; 3] {
        [
            self.axes[0].n_functions(),
            self.axes[1].n_functions(),
            self.axes[2].n_functions(),
        ]
    }

    pub fn n_functions(&self) -> usize {
        let d = self.function_dims();
        d[0] * d[1] * d[2]
    }

    #[inline]
    pub fn function_index(&self, m: [usize; 3]) -> usize {
        let d = self.function_dims();
        m[0] + d[0] * (m[1] + d[1] * m[2])
    }

    #[inline]
    pub fn function_multi(&self, i: usize) -> [usize; 3] {
        let d = self.function_dims();
        [i % d[0], (i / d[0]) % d[1], i / (d[0] * d[1])]
    }

    #[inline]
    pub fn cell_index(&self, c: [usize; 3]) -> usize {
        let d = self.cells();
        c[0] + d[0] * (c[1] + d[1] * c[2])
    }

    #[inline]
    pub fn cell_multi(&self, i: usize) -> [usize; 3] {
        let d = self.cells();
        [i % d[0], (i / d[0]) % d[1], i / (d[0] * d[1])]
    }

    pub fn mesh_size(&self) -> [f64; 3] {
        [
            self.axes[0].mesh_size(),
            self.axes[1].mesh_size(),
            self.axes[2].mesh_size(),
        ]
    }

    pub fn origin(&self) -> [f64; 3] {
        [self.axes[0].origin(), self.axes[1].origin(), self.axes[2].origin()]
    }

    pub fn lengths(&self) -> [f64; 3] {
        [self.axes[0].length(), self.axes[1].length(), self.axes[2].length()]
    }

    pub fn cell_of(&self, x: &[f64; 3]) -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..self.ndim {
            c[a] = self.axes[a].cell_of(x[a]);
        }
        c
    }

    pub fn cell_bounds(&self, c: [usize; 3]) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..self.ndim {
            lo[a] = self.axes[a].breakpoint(c[a]);
            hi[a] = self.axes[a].breakpoint(c[a] + 1);
        }
        (lo, hi)
    }

    pub fn check_inside(&self, x: &[f64; 3]) -> Result<(), BSplineError> {
        let tol = 1e-12 * self.lengths().iter().fold(0.0f64, |m, &l| m.max(l));
        if (0..self.ndim).all(|a| self.axes[a].contains(x[a], tol)) {
            Ok(())
        } else {
            Err(BSplineError::OutsideDomain(*x))
        }
    }

    /// Local tensor values at `x` with global function indices.
    pub fn eval_local(&self, x: &[f64; 3], n_ders: usize) -> (Vec<usize>, TensorLocal) {
        let cell = self.cell_of(x);
        let t = tensor_local(&self.axes, self.ndim, cell, x, n_ders);
        let global = t
            .offsets
            .iter()
            .map(|o| self.function_index([cell[0] + o[0], cell[1] + o[1], cell[2] + o[2]]))
            .collect();
        (global, t)
    }

    /// Functions nonzero on cell `c`, as global indices in local order.
    pub fn functions_on_cell(&self, c: [usize; 3]) -> Vec<usize> {
        let np = [
            self.axes[0].degree() + 1,
            self.axes[1].degree() + 1,
            self.axes[2].degree() + 1,
        ];
        let mut out = Vec::with_capacity(np[0] * np[1] * np[2]);
        for k in 0..np[2] {
            for j in 0..np[1] {
                for i in 0..np[0] {
                    out.push(self.function_index([c[0] + i, c[1] + j, c[2] + k]));
                }
            }
        }
        out
    }

    /// Inclusive cell ranges covered by the support of function `i`.
    pub fn support(&self, i: usize) -> [(usize, usize); 3] {
        let m = self.function_multi(i);
        [
            self.axes[0].support(m[0]),
            self.axes[1].support(m[1]),
            self.axes[2].support(m[2]),
        ]
    }

    /// Greville abscissa of function `i`.
    pub fn greville(&self, i: usize) -> [f64; 3] {
        let m = self.function_multi(i);
        let mut g = [0.0; 3];
        for a in 0..self.ndim {
            let ax = &self.axes[a];
            let p = ax.degree() as isize;
            let s: f64 = (1..=p).map(|k| ax.knot(m[a] as isize + k)).sum();
            g[a] = if p == 0 { ax.breakpoint(m[a]) } else { s / p as f64 };
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct recursive Cox–de Boor on an explicit knot vector.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            let last = knots[knots.len() - 1];
            let in_span = knots[i] <= x && x < knots[i + 1];
            // Close the final nonempty span on the right.
            let at_end = x == last && knots[i] < knots[i + 1] && knots[i + 1] == last;
            return if in_span || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 > 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 > 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
        }
        v
    }

    #[test]
    fn matches_recursive_definition() {
        for p in 0..=5 {
            let b = BSpline1d::new(p, 7, -1.0, 3.5).unwrap();
            let knots = b.knots();
            for s in 0..=200 {
                let x = -1.0 + 3.5 * s as f64 / 200.0;
                for i in 0..b.n_functions() {
                    let a = b.value(i, x);
                    let e = cox_de_boor(&knots, i, p, x);
                    assert!((a - e).abs() < 1e-13, "p={p} i={i} x={x}: {a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let b = BSpline1d::new(3, 5, 0.0, 1.0).unwrap();
        let eps = 1e-6;
        for s in 1..50 {
            let x = s as f64 / 50.0 + 0.003;
            let c = b.cell_of(x);
            let l = b.local(c, x, 2);
            let lp = b.local(c, x + eps, 0);
            let lm = b.local(c, x - eps, 0);
            for j in 0..4 {
                let fd1 = (lp.ders[0][j] - lm.ders[0][j]) / (2.0 * eps);
                let fd2 = (lp.ders[0][j] - 2.0 * l.ders[0][j] + lm.ders[0][j]) / (eps * eps);
                assert!((fd1 - l.ders[1][j]).abs() < 1e-6);
                assert!((fd2 - l.ders[2][j]).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn integrals_by_quadrature() {
        let b = BSpline1d::new(2, 6, 0.0, 3.0).unwrap();
        let (x, w) = crate::quadrature::gauss_legendre(4);
        for i in 0..b.n_functions() {
            let mut q = 0.0;
            for c in 0..6 {
                let (lo, hi) = (b.breakpoint(c), b.breakpoint(c + 1));
                for (t, wt) in x.iter().zip(&w) {
                    q += wt * (hi - lo) * b.value(i, lo + t * (hi - lo));
                }
            }
            assert!((q - b.integral(i)).abs() < 1e-14);
        }
    }

    #[test]
    fn two_scale_reproduces_functions() {
        for p in 1..=4 {
            let b = BSpline1d::new(p, 2 * p + 4, 0.0, 1.0).unwrap();
            let f = b.refined(2);
            let rel = b.two_scale();
            for s in 0..=97 {
                let x = s as f64 / 97.0;
                for (i, row) in rel.iter().enumerate() {
                    let v: f64 = row.iter().map(|&(j, c)| c * f.value(j, x)).sum();
                    assert!((v - b.value(i, x)).abs() < 1e-13);
                }
            }
            // Interior relation is binomial(p+1, k) / 2^p.
            let mid = &rel[p + 1];
            let scale = math::powi(2.0, p as i32);
            for (k, &(_, c)) in mid.iter().enumerate() {
                let binom = (1..=k).fold(1.0, |acc, t| acc * (p + 2 - t) as f64 / t as f64);
                assert!((c - binom / scale).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn outside_point_is_rejected() {
        let b = UniformBSplineBasis::new(2, 2, &[4, 4], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(b.check_inside(&[0.5, 0.5, 0.0]).is_ok());
        assert!(matches!(
            b.check_inside(&[1.5, 0.5, 0.0]),
            Err(BSplineError::OutsideDomain(_))
        ));
        assert!(BSpline1d::new(9, 4, 0.0, 1.0).is_err());
        assert!(BSpline1d::new(2, 0, 0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn partition_of_unity_and_nonnegativity(
            p in 1usize..=5, n in 1usize..12, x in 0.0f64..=1.0, y in 0.0f64..=1.0
        ) {
            let b = UniformBSplineBasis::new(2, p, &[n, n + 1], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
            let (_, t) = b.eval_local(&[x, y, 0.0], 2);
            let s: f64 = t.values.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(t.values.iter().all(|&v| v >= -1e-15));
            let gs: f64 = t.gradients.iter().map(|g| g[0] + g[1]).sum();
            prop_assert!(gs.abs() < 1e-9);
            let hs: f64 = t.hessians.iter().map(|h| h[0][0] + h[1][1] + h[0][1]).sum();
            prop_assert!(hs.abs() < 1e-7);
        }

        #[test]
        fn reproduces_linear_via_greville(p in 1usize..=4, n in 2usize..10, x in 0.0f64..=2.0) {
            let b = UniformBSplineBasis::new(1, p, &[n], &[0.0], &[2.0]).unwrap();
            let (g, t) = b.eval_local(&[x, 0.0, 0.0], 0);
            let v: f64 = g.iter().zip(&t.values).map(|(&i, v)| v * b.greville(i)[0]).sum();
            prop_assert!((v - x).abs() < 1e-12);
        }
    }
}
