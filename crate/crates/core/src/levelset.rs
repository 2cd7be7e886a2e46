//! Spline level sets obtained by convolving grayscale data with a B-spline
//! basis: `a_i = ∫ N_i g / ∫ N_i` and `f = Σ a_i N_i`.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::bspline::{tensor_local, BSpline1d, BSplineError, UniformBSplineBasis};
use crate::math;
use crate::quadrature::{gauss_legendre, points_for_order};
use crate::voxel::VoxelGrid;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LevelSetError {
    #[error("spline domain {basis:?} does not match the voxel box {grid:?}")]
    DomainMismatch { basis: [f64; 6], grid: [f64; 6] },
    #[error(transparent)]
    Spline(#[from] BSplineError),
    #[error("basis function {0} has non-positive integral")]
    NonPositiveVolume(usize),
}

/// Anything that can be thresholded into a geometry.
pub trait LevelSet {
    fn ndim(&self) -> usize;
    /// Bounding box `(lo, hi)` of the definition domain.
    fn bounds(&self) -> ([f64; 3], [f64; 3]);
    fn value(&self, x: &[f64; 3]) -> f64;
}

impl<T: LevelSet + ?Sized> LevelSet for &T {
    fn ndim(&self) -> usize {
        (**self).ndim()
    }
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        (**self).bounds()
    }
    fn value(&self, x: &[f64; 3]) -> f64 {
        (**self).value(x)
    }
}

/// A level set given by a closure, handy for analytic geometries.
pub struct FnLevelSet<F> {
    ndim: usize,
    lo: [f64; 3],
    hi: [f64; 3],
    f: F,
}

impl<F: Fn(&[f64; 3]) -> f64> FnLevelSet<F> {
    pub fn new(ndim: usize, lo: [f64; 3], hi: [f64; 3], f: F) -> Self {
        FnLevelSet { ndim, lo, hi, f }
    }
}

impl<F: Fn(&[f64; 3]) -> f64> LevelSet for FnLevelSet<F> {
    fn ndim(&self) -> usize {
        self.ndim
    }
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        (self.lo, self.hi)
    }
    fn value(&self, x: &[f64; 3]) -> f64 {
        (self.f)(x)
    }
}

/// Control values and basis-function integrals produced by a convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionCoefficients {
    pub a: Vec<f64>,
    pub volumes: Vec<f64>,
}

impl ConvolutionCoefficients {
    /// `∫ f = Σ a_i V_i`.
    pub fn field_integral(&self) -> f64 {
        self.a.iter().zip(&self.volumes).map(|(a, v)| a * v).sum()
    }
}

/// Uniform basis on the voxel box with `subdivision` spline cells per voxel
/// along every axis (`h = Δ / subdivision`).
pub fn basis_on_grid(grid: &VoxelGrid, degree: usize, subdivision: usize) -> Result<UniformBSplineBasis, LevelSetError> {
    let nd = grid.ndim();
    let dims = grid.shape().dims();
    let cells: Vec<usize> = (0..nd).map(|a| dims[a] * subdivision.max(1)).collect();
    let o = grid.origin();
    let l = grid.lengths();
    Ok(UniformBSplineBasis::new(nd, degree, &cells, &o[..nd], &l[..nd])?)
}

/// Uniform basis on the voxel box with `cells` spline cells per axis.
pub fn basis_with_cells(grid: &VoxelGrid, degree: usize, cells: &[usize]) -> Result<UniformBSplineBasis, LevelSetError> {
    let nd = grid.ndim();
    let o = grid.origin();
    let l = grid.lengths();
    Ok(UniformBSplineBasis::new(nd, degree, &cells[..nd], &o[..nd], &l[..nd])?)
}

pub(crate) fn check_domain(grid: &VoxelGrid, axes: &[BSpline1d; 3], ndim: usize) -> Result<(), LevelSetError> {
    let o = grid.origin();
    let l = grid.lengths();
    let ok = ndim == grid.ndim()
        && (0..ndim).all(|a| {
            let tol = 1e-9 * l[a];
            (axes[a].origin() - o[a]).abs() <= tol && (axes[a].length() - l[a]).abs() <= tol
        });
    if ok {
        Ok(())
    } else {
        let pack = |x: [f64; 3], y: [f64; 3]| [x[0], x[1], x[2], y[0], y[1], y[2]];
        Err(LevelSetError::DomainMismatch {
            basis: pack(
                [axes[0].origin(), axes[1].origin(), axes[2].origin()],
                [axes[0].length(), axes[1].length(), axes[2].length()],
            ),
            grid: pack(o, l),
        })
    }
}

/// Per-axis integration points of one spline cell, split at voxel faces.
struct AxisSamples {
    voxel: Vec<usize>,
    weight: Vec<f64>,
    /// `values[q * (p+1) + j]`.
    values: Vec<f64>,
}

fn axis_samples(axis: &BSpline1d, cell: usize, grid: &VoxelGrid, a: usize, active: bool) -> AxisSamples {
    let np = axis.degree() + 1;
    if !active {
        return AxisSamples {
            voxel: vec![0],
            weight: vec![1.0],
            values: vec![1.0],
        };
    }
    let lo = axis.breakpoint(cell);
    let hi = axis.breakpoint(cell + 1);
    let o = grid.origin()[a];
    let d = grid.spacing()[a];
    let n_vox = grid.shape().dims()[a];
    let mut cuts = vec![lo];
    let k0 = math::ceil((lo - o) / d) as isize;
    let k1 = math::floor((hi - o) / d) as isize;
    for k in k0..=k1 {
        let x = o + k as f64 * d;
        if x - lo > 1e-12 * d && hi - x > 1e-12 * d {
            cuts.push(x);
        }
    }
    cuts.push(hi);
    let (gx, gw) = gauss_legendre(points_for_order(axis.degree()));
    let mut s = AxisSamples {
        voxel: Vec::new(),
        weight: Vec::new(),
        values: Vec::new(),
    };
    for w in cuts.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let mid = 0.5 * (x0 + x1);
        let v = math::floor((mid - o) / d);
        let v = if v < 0.0 { 0 } else { (v as usize).min(n_vox - 1) };
        for (t, wt) in gx.iter().zip(&gw) {
            let x = x0 + t * (x1 - x0);
            let lv = axis.local(cell, x, 0);
            s.voxel.push(v);
            s.weight.push(wt * (x1 - x0));
            s.values.extend_from_slice(&lv.ders[0][..np]);
        }
    }
    s
}

/// Moments `∫ N_j g` and `∫ N_j` of the local functions of one cell.
pub(crate) fn cell_moments(
    grid: &VoxelGrid,
    axes: &[BSpline1d; 3],
    ndim: usize,
    cell: [usize; 3],
    mg: &mut Vec<f64>,
    m1: &mut Vec<f64>,
) {
    let s = [
        axis_samples(&axes[0], cell[0], grid, 0, ndim > 0),
        axis_samples(&axes[1], cell[1], grid, 1, ndim > 1),
        axis_samples(&axes[2], cell[2], grid, 2, ndim > 2),
    ];
    let np = [axes[0].degree() + 1, axes[1].degree() + 1, axes[2].degree() + 1];
    let n_local = np[0] * np[1] * np[2];
    mg.clear();
    mg.resize(n_local, 0.0);
    m1.clear();
    m1.resize(n_local, 0.0);
    let shape = grid.shape();
    let values = grid.values();
    for qz in 0..s[2].weight.len() {
        for qy in 0..s[1].weight.len() {
            for qx in 0..s[0].weight.len() {
                let g = values[shape.index([s[0].voxel[qx], s[1].voxel[qy], s[2].voxel[qz]])];
                let w = s[0].weight[qx] * s[1].weight[qy] * s[2].weight[qz];
                let vz = &s[2].values[qz * np[2]..(qz + 1) * np[2]];
                let vy = &s[1].values[qy * np[1]..(qy + 1) * np[1]];
                let vx = &s[0].values[qx * np[0]..(qx + 1) * np[0]];
                let mut j = 0;
                for bz in vz {
                    for by in vy {
                        let wyz = w * bz * by;
                        for bx in vx {
                            let n = wyz * bx;
                            m1[j] += n;
                            mg[j] += n * g;
                            j += 1;
                        }
                    }
                }
            }
        }
    }
}

/// Convolve grayscale data with a uniform basis.
pub fn convolve(grid: &VoxelGrid, basis: &UniformBSplineBasis) -> Result<ConvolutionCoefficients, LevelSetError> {
    check_domain(grid, basis.axes(), basis.ndim())?;
    let n = basis.n_functions();
    let mut num = vec![0.0; n];
    let mut vol = vec![0.0; n];
    let (mut mg, mut m1) = (Vec::new(), Vec::new());
    for ci in 0..basis.n_cells_total() {
        let cell = basis.cell_multi(ci);
        cell_moments(grid, basis.axes(), basis.ndim(), cell, &mut mg, &mut m1);
        for (j, g) in basis.functions_on_cell(cell).into_iter().enumerate() {
            num[g] += mg[j];
            vol[g] += m1[j];
        }
    }
    finish(num, vol)
}

pub(crate) fn finish(num: Vec<f64>, vol: Vec<f64>) -> Result<ConvolutionCoefficients, LevelSetError> {
    let mut a = Vec::with_capacity(num.len());
    for (i, (n, v)) in num.iter().zip(&vol).enumerate() {
        if !(*v > 0.0) {
            return Err(LevelSetError::NonPositiveVolume(i));
        }
        a.push(n / v);
    }
    Ok(ConvolutionCoefficients { a, volumes: vol })
}

/// A uniform spline field `f = Σ a_i N_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformField {
    pub basis: UniformBSplineBasis,
    pub coeffs: ConvolutionCoefficients,
}

impl UniformField {
    pub fn from_grid(grid: &VoxelGrid, basis: UniformBSplineBasis) -> Result<Self, LevelSetError> {
        let coeffs = convolve(grid, &basis)?;
        Ok(UniformField { basis, coeffs })
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let cell = self.basis.cell_of(x);
        let t = tensor_local(self.basis.axes(), self.basis.ndim(), cell, x, 0);
        let funcs = self.basis.functions_on_cell(cell);
        let mut v = 0.0;
        for (g, n) in funcs.iter().zip(&t.values) {
            v += self.coeffs.a[*g] * n;
        }
        v
    }

    pub fn gradient(&self, x: &[f64; 3]) -> [f64; 3] {
        let (g, t) = self.basis.eval_local(x, 1);
        let mut out = [0.0; 3];
        for (i, gr) in g.iter().zip(&t.gradients) {
            for a in 0..3 {
                out[a] += self.coeffs.a[*i] * gr[a];
            }
        }
        out
    }
}

impl LevelSet for UniformField {
    fn ndim(&self) -> usize {
        self.basis.ndim()
    }
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let o = self.basis.origin();
        let l = self.basis.lengths();
        (o, [o[0] + l[0], o[1] + l[1], o[2] + l[2]])
    }
    fn value(&self, x: &[f64; 3]) -> f64 {
        self.eval(x)
    }
}

/// Evaluate `Σ a_i N_i` at a list of points, rejecting points outside the
/// spline domain.
pub fn evaluate_field(
    coeffs: &ConvolutionCoefficients,
    basis: &UniformBSplineBasis,
    points: &[[f64; 3]],
) -> Result<Vec<f64>, LevelSetError> {
    let field = UniformField {
        basis: basis.clone(),
        coeffs: coeffs.clone(),
    };
    points
        .iter()
        .map(|p| {
            basis.check_inside(p)?;
            Ok(field.eval(p))
        })
        .collect()
}
