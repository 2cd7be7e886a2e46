//! Immersed isogeometric analysis in 2D: linear elasticity with strong
//! Dirichlet data on conforming sides, and Stokes flow with Nitsche walls,
//! ghost and skeleton penalties.
//!
//! The trial space is a uniform tensor B-spline basis on the background
//! mesh, restricted to the functions whose support meets an active cell.
//! Volume integrals use the cut-cell quadrature of the tessellation.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::bspline::{tensor_local, BSplineError, TensorLocal, UniformBSplineBasis};
use crate::levelset::{FnLevelSet, LevelSet};
use crate::linalg::{self, CsrMatrix, LinalgError, TripletBuilder};
use crate::quadrature::{gauss_legendre, points_for_order, QuadRule};
use crate::tessellation::{
    build_quadrature, facet_midpoint, tessellate, BackgroundMesh, DomainQuadrature, FacetKind, QuadratureSchedule, Side,
    TessellatedDomain,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("analysis is implemented in 2D only, got {0}D")]
    Dimension(usize),
    #[error("the domain has no active cells")]
    EmptyDomain,
    #[error(transparent)]
    Spline(#[from] BSplineError),
    #[error("singular elasticity system, some part of the domain has no load path to a constrained side: {0}")]
    Singular(LinalgError),
    #[error("Stokes factorization failed with gamma = {gamma}, gamma_tilde = {gamma_tilde}: {source}")]
    Stokes {
        source: LinalgError,
        gamma: f64,
        gamma_tilde: f64,
    },
}

/// Discretization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisSettings {
    pub degree: usize,
    pub g_crit: f64,
    pub rho_max: usize,
    /// Gauss order on whole cells; cut cells follow the decaying schedule.
    pub k_max: usize,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            degree: 2,
            g_crit: 0.5,
            rho_max: 3,
            k_max: 4,
        }
    }
}

/// Interior face between two active cells, `lower` below `upper` along `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub axis: usize,
    pub lower: usize,
    pub upper: usize,
    /// At least one neighbour is cut.
    pub ghost: bool,
}

const INACTIVE: usize = usize::MAX;

/// Background spline space, active mesh and integration data.
#[derive(Debug, Clone)]
pub struct BackgroundDiscretization {
    basis: UniformBSplineBasis,
    domain: TessellatedDomain,
    quadrature: DomainQuadrature,
    active_cells: Vec<usize>,
    cell_active: Vec<bool>,
    active: Vec<usize>,
    local: Vec<usize>,
    faces: Vec<Face>,
}

impl BackgroundDiscretization {
    /// Tessellate `{f > g_crit}` on `cells` x `cells` background cells.
    pub fn new<F: LevelSet>(field: &F, cells: usize, settings: &AnalysisSettings) -> Result<Self, SolverError> {
        if field.ndim() != 2 {
            return Err(SolverError::Dimension(field.ndim()));
        }
        let mesh = BackgroundMesh::over(field, cells);
        let domain = tessellate(field, &mesh, settings.g_crit, settings.rho_max);
        Self::from_domain(domain, settings)
    }

    pub fn from_domain(domain: TessellatedDomain, settings: &AnalysisSettings) -> Result<Self, SolverError> {
        let mesh = &domain.mesh;
        let nd = mesh.ndim();
        if nd != 2 {
            return Err(SolverError::Dimension(nd));
        }
        let basis = UniformBSplineBasis::new(nd, settings.degree, &mesh.dims()[..nd], &mesh.origin()[..nd], &mesh.lengths()[..nd])?;
        let quadrature = build_quadrature(&domain, &QuadratureSchedule::new(settings.k_max, settings.rho_max));
        let active_cells = domain.active_cells();
        if active_cells.is_empty() {
            return Err(SolverError::EmptyDomain);
        }
        let mut cell_active = vec![false; mesh.len()];
        for &c in &active_cells {
            cell_active[c] = true;
        }
        let mut used = vec![false; basis.n_functions()];
        for &c in &active_cells {
            for f in basis.functions_on_cell(mesh.coords(c)) {
                used[f] = true;
            }
        }
        let mut active = Vec::new();
        let mut local = vec![INACTIVE; basis.n_functions()];
        for (f, &u) in used.iter().enumerate() {
            if u {
                local[f] = active.len();
                active.push(f);
            }
        }
        let mut faces = Vec::new();
        for &c in &active_cells {
            for axis in 0..nd {
                if let Some(n) = mesh.neighbour(c, axis, true) {
                    if cell_active[n] {
                        faces.push(Face {
                            axis,
                            lower: c,
                            upper: n,
                            ghost: domain.is_cut(c) || domain.is_cut(n),
                        });
                    }
                }
            }
        }
        Ok(BackgroundDiscretization {
            basis,
            domain,
            quadrature,
            active_cells,
            cell_active,
            active,
            local,
            faces,
        })
    }

    pub fn basis(&self) -> &UniformBSplineBasis {
        &self.basis
    }

    pub fn domain(&self) -> &TessellatedDomain {
        &self.domain
    }

    pub fn quadrature(&self) -> &DomainQuadrature {
        &self.quadrature
    }

    pub fn mesh(&self) -> &BackgroundMesh {
        &self.domain.mesh
    }

    /// Background cell size along the first axis.
    pub fn h(&self) -> f64 {
        self.domain.mesh.cell_size()[0]
    }

    pub fn active_cells(&self) -> &[usize] {
        &self.active_cells
    }

    pub fn is_active_cell(&self, c: usize) -> bool {
        self.cell_active[c]
    }

    /// Global indices of the active basis functions.
    pub fn active_functions(&self) -> &[usize] {
        &self.active
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    /// Position of a global function among the active ones.
    pub fn local_index(&self, f: usize) -> Option<usize> {
        let l = self.local[f];
        (l != INACTIVE).then_some(l)
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn ghost_faces(&self) -> impl Iterator<Item = &Face> {
        self.faces.iter().filter(|f| f.ghost)
    }

    /// Basis values on a known cell with active positions of the functions.
    fn local_eval(&self, cell: usize, x: &[f64; 3], n_ders: usize) -> (Vec<usize>, TensorLocal) {
        let c = self.domain.mesh.coords(cell);
        let t = tensor_local(self.basis.axes(), 2, c, x, n_ders);
        let idx = t
            .offsets
            .iter()
            .map(|o| self.local[self.basis.function_index([c[0] + o[0], c[1] + o[1], 0])])
            .collect();
        (idx, t)
    }

    /// Evaluate `Σ c_i N_i` and its gradient for coefficients over the
    /// active functions, `stride` values per function starting at `offset`.
    fn field(&self, coeffs: &[f64], stride: usize, offset: usize, x: &[f64; 3]) -> (f64, [f64; 2]) {
        let cell = self.domain.mesh.locate(x);
        let (idx, t) = self.local_eval(cell, x, 1);
        let mut v = 0.0;
        let mut g = [0.0; 2];
        for (j, &l) in idx.iter().enumerate() {
            if l == INACTIVE {
                continue;
            }
            let c = coeffs[stride * l + offset];
            v += c * t.values[j];
            g[0] += c * t.gradients[j][0];
            g[1] += c * t.gradients[j][1];
        }
        (v, g)
    }

    /// Coefficients interpolating `f` at the Greville points of the active
    /// functions; exact for affine `f`.
    pub fn interpolate(&self, f: impl Fn(&[f64; 3]) -> f64) -> Vec<f64> {
        self.active.iter().map(|&g| f(&self.basis.greville(g))).collect()
    }

    /// `∫ [∂ⁿᵏ φ_i][∂ⁿᵏ φ_j] ds` over the interior faces, on active functions.
    /// `k` is 1 or 2.
    pub fn face_jump_matrix(&self, k: usize, ghost_only: bool) -> CsrMatrix {
        assert!((1..=2).contains(&k), "jump order must be 1 or 2");
        let mut t = TripletBuilder::new(self.n_active());
        for face in self.faces.iter().filter(|f| !ghost_only || f.ghost) {
            let (funcs, jumps, w) = self.face_jumps(face, k);
            for (a, &fa) in funcs.iter().enumerate() {
                for (b, &fb) in funcs.iter().enumerate() {
                    let s: f64 = w.iter().enumerate().map(|(q, wq)| wq * jumps[q][a] * jumps[q][b]).sum();
                    t.add(fa, fb, s);
                }
            }
        }
        t.build()
    }

    /// Active functions touching a face, jumps per quadrature point and
    /// weights.
    fn face_jumps(&self, face: &Face, k: usize) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
        let mesh = &self.domain.mesh;
        let mut funcs: Vec<usize> = Vec::new();
        for cell in [face.lower, face.upper] {
            for f in self.basis.functions_on_cell(mesh.coords(cell)) {
                let l = self.local[f];
                if !funcs.contains(&l) {
                    funcs.push(l);
                }
            }
        }
        let (lo, hi) = mesh.cell_bounds(face.lower);
        let tangent = 1 - face.axis;
        let len = hi[tangent] - lo[tangent];
        let (gx, gw) = gauss_legendre(points_for_order(2 * self.basis.degree()));
        let mut jumps = Vec::with_capacity(gx.len());
        let mut weights = Vec::with_capacity(gx.len());
        for (xi, wi) in gx.iter().zip(&gw) {
            let mut x = [0.0; 3];
            x[face.axis] = hi[face.axis];
            x[tangent] = lo[tangent] + 0.5 * (xi + 1.0) * len;
            let mut row = vec![0.0; funcs.len()];
            for (cell, sign) in [(face.upper, 1.0), (face.lower, -1.0)] {
                let (idx, t) = self.local_eval(cell, &x, k);
                for (j, l) in idx.iter().enumerate() {
                    let d = if k == 1 {
                        t.gradients[j][face.axis]
                    } else {
                        t.hessians[j][face.axis][face.axis]
                    };
                    let pos = funcs.iter().position(|f| f == l).expect("function of a face cell");
                    row[pos] += sign * d;
                }
            }
            jumps.push(row);
            weights.push(0.5 * wi * len);
        }
        (funcs, jumps, weights)
    }

    /// Exterior facets on `side` whose midpoint lies in the tangential
    /// range, with their rules.
    fn side_facets(&self, side: Side, range: Option<(f64, f64)>) -> impl Iterator<Item = (usize, &QuadRule, [f64; 3])> + '_ {
        let tangent = 1 - side.axis;
        self.domain
            .facets
            .iter()
            .zip(&self.quadrature.facets)
            .filter(move |(f, _)| {
                f.kind == FacetKind::Exterior(side)
                    && range.is_none_or(|(a, b)| {
                        let m = facet_midpoint(f)[tangent];
                        m > a && m < b
                    })
            })
            .map(|(f, r)| (f.cell, r, f.normal))
    }
}

/// Affine vector field `u_c(x) = constant[c] + Σ_a gradient[c][a] x_a`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineField {
    pub constant: [f64; 2],
    pub gradient: [[f64; 2]; 2],
}

impl AffineField {
    pub fn constant(c: [f64; 2]) -> Self {
        AffineField { constant: c, gradient: [[0.0; 2]; 2] }
    }

    pub fn at(&self, x: &[f64; 3]) -> [f64; 2] {
        let mut u = self.constant;
        for (c, uc) in u.iter_mut().enumerate() {
            *uc += self.gradient[c][0] * x[0] + self.gradient[c][1] * x[1];
        }
        u
    }
}

/// Strongly imposed displacement components on a side of the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletCondition {
    pub side: Side,
    pub components: [bool; 2],
    pub value: AffineField,
}

/// Plane-strain elasticity with `σ = λ div(u) I + 2μ ∇ˢu`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityProblem {
    pub lambda: f64,
    pub mu: f64,
    pub u_bar: f64,
    /// Applied in order; later conditions override earlier ones on shared
    /// functions.
    pub dirichlet: Vec<DirichletCondition>,
    /// Optional ghost penalty `γ̃ μ h^{2k-1}` on first-derivative jumps.
    pub ghost_penalty: f64,
}

impl ElasticityProblem {
    /// Top side displaced by `ū` along its normal, bottom clamped, rollers
    /// on left and right.
    pub fn displaced_top(lambda: f64, mu: f64, u_bar: f64) -> Self {
        let roller = |side| DirichletCondition {
            side,
            components: [true, false],
            value: AffineField::default(),
        };
        ElasticityProblem {
            lambda,
            mu,
            u_bar,
            dirichlet: vec![
                roller(Side::LEFT),
                roller(Side::RIGHT),
                DirichletCondition {
                    side: Side::BOTTOM,
                    components: [true, true],
                    value: AffineField::default(),
                },
                DirichletCondition {
                    side: Side::TOP,
                    components: [true, true],
                    value: AffineField::constant([0.0, u_bar]),
                },
            ],
            ghost_penalty: 0.0,
        }
    }
}

impl Default for ElasticityProblem {
    fn default() -> Self {
        ElasticityProblem::displaced_top(0.5, 0.5, 0.2)
    }
}

/// Assembled linear system with the constrained values it eliminated.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub constrained: Vec<Option<f64>>,
}

fn elastic_entry(lambda: f64, mu: f64, gi: &[f64; 3], gj: &[f64; 3], c: usize, d: usize) -> f64 {
    let dot = gi[0] * gj[0] + gi[1] * gj[1];
    let delta = if c == d { dot } else { 0.0 };
    lambda * gi[c] * gj[d] + mu * (delta + gi[d] * gj[c])
}

/// Constrained values per displacement unknown `2 l + c`.
pub fn elasticity_constraints(disc: &BackgroundDiscretization, problem: &ElasticityProblem) -> Vec<Option<f64>> {
    let mut out = vec![None; 2 * disc.n_active()];
    let fdims = disc.basis.function_dims();
    for cond in &problem.dirichlet {
        let s = cond.side;
        let boundary = if s.upper { fdims[s.axis] - 1 } else { 0 };
        for (cell, _, _) in disc.side_facets(s, None) {
            for f in disc.basis.functions_on_cell(disc.mesh().coords(cell)) {
                if disc.basis.function_multi(f)[s.axis] != boundary {
                    continue;
                }
                let Some(l) = disc.local_index(f) else { continue };
                let u = cond.value.at(&disc.basis.greville(f));
                for c in 0..2 {
                    if cond.components[c] {
                        out[2 * l + c] = Some(u[c]);
                    }
                }
            }
        }
    }
    out
}

/// Stiffness system on the displacement unknowns `2 l + c`. Constrained
/// rows become identity rows and their columns move to the right-hand side.
pub fn assemble_elasticity(disc: &BackgroundDiscretization, problem: &ElasticityProblem) -> LinearSystem {
    let n = 2 * disc.n_active();
    let constrained = elasticity_constraints(disc, problem);
    let mut t = TripletBuilder::new(n);
    let mut rhs = vec![0.0; n];
    let add = |t: &mut TripletBuilder, rhs: &mut [f64], i: usize, j: usize, v: f64| {
        if constrained[i].is_some() {
            return;
        }
        match constrained[j] {
            Some(g) => rhs[i] -= v * g,
            None => t.add(i, j, v),
        }
    };
    for (cell, _, rule) in &disc.quadrature.cells {
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let (idx, tl) = disc.local_eval(*cell, x, 1);
            for (a, &la) in idx.iter().enumerate() {
                for (b, &lb) in idx.iter().enumerate() {
                    for c in 0..2 {
                        for d in 0..2 {
                            let v = w * elastic_entry(problem.lambda, problem.mu, &tl.gradients[a], &tl.gradients[b], c, d);
                            add(&mut t, &mut rhs, 2 * la + c, 2 * lb + d, v);
                        }
                    }
                }
            }
        }
    }
    if problem.ghost_penalty > 0.0 {
        let scale = problem.ghost_penalty * problem.mu * disc.h();
        let jm = disc.face_jump_matrix(1, true);
        for i in 0..jm.n() {
            for (j, v) in jm.row(i) {
                for c in 0..2 {
                    add(&mut t, &mut rhs, 2 * i + c, 2 * j + c, scale * v);
                }
            }
        }
    }
    for (i, g) in constrained.iter().enumerate() {
        if let Some(g) = g {
            t.add(i, i, 1.0);
            rhs[i] = *g;
        }
    }
    LinearSystem {
        matrix: t.build(),
        rhs,
        constrained,
    }
}

/// Discrete displacement field.
#[derive(Debug, Clone)]
pub struct ElasticitySolution {
    pub lambda: f64,
    pub mu: f64,
    pub u_bar: f64,
    /// Interleaved `(u_x, u_y)` per active function.
    pub coefficients: Vec<f64>,
    pub relative_residual: f64,
}

pub fn solve_elasticity(disc: &BackgroundDiscretization, problem: &ElasticityProblem) -> Result<ElasticitySolution, SolverError> {
    let sys = assemble_elasticity(disc, problem);
    let solved = linalg::solve(&sys.matrix, &sys.rhs).map_err(SolverError::Singular)?;
    Ok(ElasticitySolution {
        lambda: problem.lambda,
        mu: problem.mu,
        u_bar: problem.u_bar,
        coefficients: solved.x,
        relative_residual: solved.relative_residual,
    })
}

impl ElasticitySolution {
    pub fn displacement(&self, disc: &BackgroundDiscretization, x: &[f64; 3]) -> [f64; 2] {
        [disc.field(&self.coefficients, 2, 0, x).0, disc.field(&self.coefficients, 2, 1, x).0]
    }

    /// Stress `[σ11, σ22, σ12]`.
    pub fn stress(&self, disc: &BackgroundDiscretization, x: &[f64; 3]) -> [f64; 3] {
        let gx = disc.field(&self.coefficients, 2, 0, x).1;
        let gy = disc.field(&self.coefficients, 2, 1, x).1;
        let div = gx[0] + gy[1];
        [
            self.lambda * div + 2.0 * self.mu * gx[0],
            self.lambda * div + 2.0 * self.mu * gy[1],
            self.mu * (gx[1] + gy[0]),
        ]
    }

    /// `(L/ū)(1/V_img) ∫_Ω σ22 dV`, with `L` the box height and `V_img` its
    /// area.
    pub fn effective_modulus(&self, disc: &BackgroundDiscretization) -> f64 {
        let l = disc.mesh().lengths();
        let integral = disc.quadrature.integrate(|x| self.stress(disc, x)[1]);
        l[1] / self.u_bar * integral / (l[0] * l[1])
    }
}

/// Stokes flow with no-slip walls on the immersed boundary, an inflow
/// traction `-p̄ n` on `inflow` and a traction-free `outflow`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StokesProblem {
    pub mu: f64,
    pub p_bar: f64,
    pub beta: f64,
    pub gamma: f64,
    pub gamma_tilde: f64,
    /// Order of the penalized normal derivative.
    pub jump_order: usize,
    pub inflow: Side,
    pub outflow: Side,
}

impl Default for StokesProblem {
    fn default() -> Self {
        StokesProblem {
            mu: 1.0,
            p_bar: 1.0,
            beta: 100.0,
            gamma: 0.05,
            gamma_tilde: 0.0005,
            jump_order: 2,
            inflow: Side::BOTTOM,
            outflow: Side::TOP,
        }
    }
}

/// Assemble the symmetric saddle system on unknowns `3 l + {0, 1, 2}` for
/// `(u_x, u_y, p)`.
pub fn assemble_stokes(disc: &BackgroundDiscretization, problem: &StokesProblem) -> LinearSystem {
    let n = 3 * disc.n_active();
    let mu = problem.mu;
    let mut t = TripletBuilder::new(n);
    let mut rhs = vec![0.0; n];
    let u = |l: usize, c: usize| 3 * l + c;
    let p = |l: usize| 3 * l + 2;
    for (cell, _, rule) in &disc.quadrature.cells {
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let (idx, tl) = disc.local_eval(*cell, x, 1);
            for (a, &la) in idx.iter().enumerate() {
                let ga = &tl.gradients[a];
                for (b, &lb) in idx.iter().enumerate() {
                    let gb = &tl.gradients[b];
                    for c in 0..2 {
                        for d in 0..2 {
                            t.add(u(la, c), u(lb, d), w * elastic_entry(0.0, mu, ga, gb, c, d));
                        }
                        let v = -w * tl.values[b] * ga[c];
                        t.add(u(la, c), p(lb), v);
                        t.add(p(lb), u(la, c), v);
                    }
                }
            }
        }
    }
    let h = disc.h();
    for (facet, rule) in disc.domain.facets.iter().zip(&disc.quadrature.facets) {
        let nrm = facet.normal;
        match facet.kind {
            FacetKind::Immersed => {
                for (x, w) in rule.points.iter().zip(&rule.weights) {
                    let (idx, tl) = disc.local_eval(facet.cell, x, 1);
                    for (a, &la) in idx.iter().enumerate() {
                        let (na, ga) = (tl.values[a], &tl.gradients[a]);
                        let gan = ga[0] * nrm[0] + ga[1] * nrm[1];
                        for (b, &lb) in idx.iter().enumerate() {
                            let (nb, gb) = (tl.values[b], &tl.gradients[b]);
                            let gbn = gb[0] * nrm[0] + gb[1] * nrm[1];
                            for c in 0..2 {
                                for d in 0..2 {
                                    let delta = if c == d { 1.0 } else { 0.0 };
                                    let cons = mu * (delta * gbn + gb[c] * nrm[d]) * na;
                                    let adj = mu * (delta * gan + ga[d] * nrm[c]) * nb;
                                    let pen = mu * problem.beta / h * delta * na * nb;
                                    t.add(u(la, c), u(lb, d), w * (pen - cons - adj));
                                }
                                let v = w * na * nb * nrm[c];
                                t.add(u(la, c), p(lb), v);
                                t.add(p(lb), u(la, c), v);
                            }
                        }
                    }
                }
            }
            FacetKind::Exterior(side) if side == problem.inflow => {
                for (x, w) in rule.points.iter().zip(&rule.weights) {
                    let (idx, tl) = disc.local_eval(facet.cell, x, 0);
                    for (a, &la) in idx.iter().enumerate() {
                        for c in 0..2 {
                            rhs[u(la, c)] -= w * problem.p_bar * tl.values[a] * nrm[c];
                        }
                    }
                }
            }
            FacetKind::Exterior(_) => {}
        }
    }
    let k = problem.jump_order;
    let hk = crate::math::powi(h, 2 * k as i32 - 1);
    if problem.gamma_tilde > 0.0 {
        let scale = problem.gamma_tilde * mu * hk;
        let jm = disc.face_jump_matrix(k, true);
        for i in 0..jm.n() {
            for (j, v) in jm.row(i) {
                for c in 0..2 {
                    t.add(u(i, c), u(j, c), scale * v);
                }
            }
        }
    }
    if problem.gamma > 0.0 {
        let scale = problem.gamma / mu * hk * h * h;
        let jm = disc.face_jump_matrix(k, false);
        for i in 0..jm.n() {
            for (j, v) in jm.row(i) {
                t.add(p(i), p(j), -scale * v);
            }
        }
    }
    LinearSystem {
        matrix: t.build(),
        rhs,
        constrained: vec![None; n],
    }
}

/// Discrete velocity and pressure.
#[derive(Debug, Clone)]
pub struct StokesSolution {
    /// Interleaved `(u_x, u_y, p)` per active function.
    pub coefficients: Vec<f64>,
    pub relative_residual: f64,
    /// 1-norm condition estimate of the system matrix.
    pub condition: f64,
}

pub fn solve_stokes(disc: &BackgroundDiscretization, problem: &StokesProblem) -> Result<StokesSolution, SolverError> {
    let sys = assemble_stokes(disc, problem);
    let err = |source| SolverError::Stokes {
        source,
        gamma: problem.gamma,
        gamma_tilde: problem.gamma_tilde,
    };
    let solved = linalg::solve(&sys.matrix, &sys.rhs).map_err(err)?;
    let condition = solved.lu.condition_estimate();
    Ok(StokesSolution {
        coefficients: solved.x,
        relative_residual: solved.relative_residual,
        condition,
    })
}

impl StokesSolution {
    pub fn velocity(&self, disc: &BackgroundDiscretization, x: &[f64; 3]) -> [f64; 2] {
        [disc.field(&self.coefficients, 3, 0, x).0, disc.field(&self.coefficients, 3, 1, x).0]
    }

    pub fn pressure(&self, disc: &BackgroundDiscretization, x: &[f64; 3]) -> f64 {
        disc.field(&self.coefficients, 3, 2, x).0
    }

    /// `∫ u·n ds` over the exterior facets on `side`, optionally only those
    /// whose midpoints fall in a tangential coordinate range.
    pub fn outflow_flux(&self, disc: &BackgroundDiscretization, side: Side, range: Option<(f64, f64)>) -> f64 {
        disc.side_facets(side, range)
            .map(|(_, rule, n)| {
                rule.integrate(|x| {
                    let v = self.velocity(disc, x);
                    v[0] * n[0] + v[1] * n[1]
                })
            })
            .sum()
    }
}

/// Straight vertical channel `x0 < x < x1` across the unit square, driven
/// bottom to top by a pressure drop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoiseuilleChannel {
    pub x0: f64,
    pub x1: f64,
}

impl PoiseuilleChannel {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn level_set(&self) -> FnLevelSet<impl Fn(&[f64; 3]) -> f64> {
        let (a, b) = (self.x0, self.x1);
        // Offset so that `{f > 0.5}` is the channel.
        FnLevelSet::new(2, [0.0; 3], [1.0, 1.0, 0.0], move |x| 0.5 + (x[0] - a).min(b - x[0]))
    }

    /// Centre-line velocity `p̄ H² / (8 μ L)` with unit length.
    pub fn max_velocity(&self, mu: f64, p_bar: f64) -> f64 {
        p_bar * self.width() * self.width() / (8.0 * mu)
    }

    /// Flux per unit depth `p̄ H³ / (12 μ L)`.
    pub fn flux(&self, mu: f64, p_bar: f64) -> f64 {
        p_bar * crate::math::powi(self.width(), 3) / (12.0 * mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::{basis_on_grid, UniformField};
    use crate::phantom::{bridge_image, channel_image, CHANNEL_LEFT_OUTLET};

    fn unit_box(f: impl Fn(&[f64; 3]) -> f64) -> FnLevelSet<impl Fn(&[f64; 3]) -> f64> {
        FnLevelSet::new(2, [0.0; 3], [1.0, 1.0, 0.0], f)
    }

    fn residual(sys: &LinearSystem, x: &[f64]) -> Vec<f64> {
        sys.matrix.mul(x).iter().zip(&sys.rhs).map(|(a, b)| a - b).collect()
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn full_square_is_uniform_uniaxial_state() {
        let full = unit_box(|_| 1.0);
        let d = BackgroundDiscretization::new(&full, 8, &AnalysisSettings::default()).unwrap();
        let problem = ElasticityProblem::default();
        let sys = assemble_elasticity(&d, &problem);
        assert!(sys.matrix.asymmetry() <= 1e-12 * sys.matrix.max_abs());
        let s = solve_elasticity(&d, &problem).unwrap();
        assert!((s.effective_modulus(&d) - 1.5).abs() < 1e-10);
        for x in [[0.1, 0.2, 0.0], [0.77, 0.5, 0.0], [0.5, 0.93, 0.0]] {
            let sig = s.stress(&d, &x);
            assert!((sig[1] - 0.3).abs() < 1e-10);
            assert!((sig[0] - 0.1).abs() < 1e-10 && sig[2].abs() < 1e-10);
        }
    }

    #[test]
    fn rigid_translation_has_no_internal_force() {
        let disc = unit_box(|x| 0.5 + 0.3 - ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt());
        let d = BackgroundDiscretization::new(&disc, 12, &AnalysisSettings::default()).unwrap();
        let problem = ElasticityProblem {
            dirichlet: Vec::new(),
            ..ElasticityProblem::default()
        };
        let sys = assemble_elasticity(&d, &problem);
        let mut t = vec![0.0; 2 * d.n_active()];
        for l in 0..d.n_active() {
            t[2 * l] = 0.3;
            t[2 * l + 1] = -1.1;
        }
        assert!(max_abs(&sys.matrix.mul(&t)) < 1e-12);
    }

    #[test]
    fn patch_test_on_cut_strip() {
        // Uniaxial tension of a strip with traction-free cut sides:
        // σ11 = σ12 = 0 gives u = (−λ/(λ+2μ) ū x, ū y).
        let (a, b) = (0.31, 0.67);
        let strip = unit_box(move |x| 0.5 + (x[0] - a).min(b - x[0]));
        let d = BackgroundDiscretization::new(&strip, 10, &AnalysisSettings::default()).unwrap();
        assert!(!d.domain().cut.is_empty());
        let u_bar = 0.2;
        let exact = AffineField {
            constant: [0.0; 2],
            gradient: [[-u_bar / 3.0, 0.0], [0.0, u_bar]],
        };
        let problem = ElasticityProblem {
            dirichlet: [Side::BOTTOM, Side::TOP]
                .into_iter()
                .map(|side| DirichletCondition {
                    side,
                    components: [true, true],
                    value: exact,
                })
                .collect(),
            ..ElasticityProblem::displaced_top(0.5, 0.5, u_bar)
        };
        let sys = assemble_elasticity(&d, &problem);
        let s = solve_elasticity(&d, &problem).unwrap();
        assert!(max_abs(&residual(&sys, &s.coefficients)) <= 1e-10 * max_abs(&sys.rhs));
        for x in [[0.35, 0.1, 0.0], [0.5, 0.5, 0.0], [0.66, 0.97, 0.0]] {
            let u = s.displacement(&d, &x);
            let e = exact.at(&x);
            assert!((u[0] - e[0]).abs() < 1e-10 && (u[1] - e[1]).abs() < 1e-10, "{u:?} vs {e:?}");
            let sig = s.stress(&d, &x);
            assert!(sig[0].abs() < 1e-10 && sig[2].abs() < 1e-10);
        }
        let q = s.effective_modulus(&d);
        assert!((q - 4.0 / 3.0 * (b - a)).abs() < 1e-9);
    }

    #[test]
    fn broken_bridge_leaves_upper_left_part_unloaded() {
        let g = bridge_image();
        let f = UniformField::from_grid(&g, basis_on_grid(&g, 2, 1).unwrap()).unwrap();
        let d = BackgroundDiscretization::new(&f, 32, &AnalysisSettings::default()).unwrap();
        let s = solve_elasticity(&d, &ElasticityProblem::default()).unwrap();
        let upper_left = s.stress(&d, &[0.25, 0.8, 0.0]);
        assert!(upper_left.iter().all(|v| v.abs() < 1e-8), "{upper_left:?}");
        let u = s.displacement(&d, &[0.25, 0.8, 0.0]);
        assert!((u[1] - 0.2).abs() < 1e-8);
        assert!(s.stress(&d, &[0.7, 0.5, 0.0])[1] > 0.1);
    }

    #[test]
    fn poiseuille_channel_matches_closed_form() {
        let ch = PoiseuilleChannel { x0: 15.0 / 32.0, x1: 17.0 / 32.0 };
        let ls = ch.level_set();
        let d = BackgroundDiscretization::new(&ls, 64, &AnalysisSettings::default()).unwrap();
        let p = StokesProblem::default();
        let s = solve_stokes(&d, &p).unwrap();
        assert!(s.relative_residual < 1e-10);
        let u = s.velocity(&d, &[0.5, 0.5, 0.0]);
        let umax = ch.max_velocity(p.mu, p.p_bar);
        assert!((u[1] / umax - 1.0).abs() < 0.01, "{} vs {umax}", u[1]);
        assert!(u[0].abs() < 1e-6 * umax);
        // Parabolic across the section.
        let xq = 15.5 / 32.0;
        let parabola = 4.0 * (xq - ch.x0) * (ch.x1 - xq) / (ch.width() * ch.width());
        assert!((s.velocity(&d, &[xq, 0.5, 0.0])[1] / u[1] - parabola).abs() < 1e-3);
        let q = s.outflow_flux(&d, Side::TOP, None);
        assert!((q / ch.flux(p.mu, p.p_bar) - 1.0).abs() < 0.01);
        let q_in = s.outflow_flux(&d, Side::BOTTOM, None);
        assert!((q + q_in).abs() < 1e-6 * q);
    }

    #[test]
    fn stokes_system_is_symmetric_and_enforces_divergence_equation() {
        let ch = PoiseuilleChannel { x0: 0.3, x1: 0.71 };
        let ls = ch.level_set();
        let d = BackgroundDiscretization::new(&ls, 16, &AnalysisSettings::default()).unwrap();
        let sys = assemble_stokes(&d, &StokesProblem::default());
        assert!(sys.matrix.asymmetry() <= 1e-12 * sys.matrix.max_abs());
        let s = solve_stokes(&d, &StokesProblem::default()).unwrap();
        let r = residual(&sys, &s.coefficients);
        let pressure_rows: Vec<f64> = r.iter().skip(2).step_by(3).copied().collect();
        assert!(max_abs(&pressure_rows) <= 1e-10 * max_abs(&sys.rhs));
    }

    #[test]
    fn closed_cavity_has_no_outflow() {
        // Open to the inflow side only: the fluid is at rest under p = p̄.
        let cavity = unit_box(|x| 0.5 + (x[0] - 0.3).min(0.7 - x[0]).min(0.63 - x[1]));
        let d = BackgroundDiscretization::new(&cavity, 16, &AnalysisSettings::default()).unwrap();
        let s = solve_stokes(&d, &StokesProblem::default()).unwrap();
        assert_eq!(s.outflow_flux(&d, Side::TOP, None), 0.0);
        // Only the weakly imposed walls leak, at the scale of p̄ h / (μ β).
        let leak = StokesProblem::default().p_bar * d.h() / 100.0;
        assert!(s.outflow_flux(&d, Side::BOTTOM, None).abs() < 1e-3 * leak);
        // Rest is an exact discrete solution up to the mismatch between the
        // decayed cut-cell volume rules and the facet rules.
        assert!((s.pressure(&d, &[0.5, 0.3, 0.0]) - 1.0).abs() < 1e-3);
        let u = s.velocity(&d, &[0.45, 0.4, 0.0]);
        assert!(u[0].abs() < 1e-3 * leak && u[1].abs() < 1e-3 * leak);
    }

    #[test]
    fn penalties_vanish_on_affine_fields() {
        let disc = unit_box(|x| 0.5 + 0.31 - ((x[0] - 0.52).powi(2) + (x[1] - 0.47).powi(2)).sqrt());
        let d = BackgroundDiscretization::new(&disc, 16, &AnalysisSettings::default()).unwrap();
        assert!(d.ghost_faces().count() > 0);
        assert!(d.ghost_faces().count() < d.faces().len());
        let affine = d.interpolate(|x| 0.7 - 1.3 * x[0] + 2.1 * x[1]);
        let wavy = d.interpolate(|x| (7.0 * x[0]).sin() * x[1]);
        // Scaled as in the Stokes forms with μ = 1 and k = 2.
        let p = StokesProblem::default();
        let h = d.h();
        for (ghost_only, scale) in [(true, p.gamma_tilde * h.powi(3)), (false, p.gamma * h.powi(5))] {
            let j = d.face_jump_matrix(2, ghost_only);
            let energy = |c: &[f64]| scale * j.mul(c).iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            assert!(energy(&affine).abs() <= 1e-12);
            assert!(energy(&wavy) > 1e3 * energy(&affine).abs());
        }
    }

    #[test]
    fn ghost_penalty_guards_sliver_cells() {
        let h = 1.0 / 32.0;
        let ch = PoiseuilleChannel { x0: 0.375 - 1e-6 * h, x1: 0.625 + 1e-6 * h };
        let ls = ch.level_set();
        let d = BackgroundDiscretization::new(&ls, 32, &AnalysisSettings::default()).unwrap();
        let on = solve_stokes(&d, &StokesProblem::default()).unwrap();
        assert!(on.condition < 1e10);
        let off = solve_stokes(
            &d,
            &StokesProblem {
                gamma_tilde: 0.0,
                ..StokesProblem::default()
            },
        );
        match off {
            Err(SolverError::Stokes { gamma_tilde, .. }) => assert_eq!(gamma_tilde, 0.0),
            Ok(s) => assert!(s.condition > 1e3 * on.condition),
            Err(e) => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn pinched_branch_carries_no_flow_without_repair() {
        let g = channel_image();
        let f = UniformField::from_grid(&g, basis_on_grid(&g, 2, 1).unwrap()).unwrap();
        let d = BackgroundDiscretization::new(&f, 16, &AnalysisSettings::default()).unwrap();
        let s = solve_stokes(&d, &StokesProblem::default()).unwrap();
        assert!(s.outflow_flux(&d, Side::TOP, Some(CHANNEL_LEFT_OUTLET)).abs() < 1e-12);
        assert!(s.outflow_flux(&d, Side::TOP, None) > 1e-5);
        let u = s.velocity(&d, &[7.5 / 32.0, 0.9, 0.0]);
        assert!(u[0].abs() < 1e-10 && u[1].abs() < 1e-10);
        assert!(s.pressure(&d, &[7.5 / 32.0, 0.9, 0.0]).abs() < 1e-10);
    }
}
