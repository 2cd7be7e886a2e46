//! Ingest, segment, repair topology, tessellate and solve, writing every
//! artifact into the output directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use scaniga_core::levelset::{basis_on_grid, UniformField};
use scaniga_core::phantom;
use scaniga_core::solver::{
    self, AnalysisSettings, BackgroundDiscretization, ElasticityProblem, StokesProblem,
};
use scaniga_core::tessellation::{tessellate, BackgroundMesh, FacetKind, Side, TessellatedDomain};
use scaniga_core::topo::{self, preserve_topology, voxelize_smooth, TopologyOutcome, TopologyParams};
use scaniga_core::voxel::{euler_characteristic, label_components, threshold};
use scaniga_core::{BinaryImage, LevelSet, VoxelGrid};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig, SolverKind};
use crate::report::{self, InputSummary, QoiRow, RunReport, SegmentationSummary, TessellationSummary, TopologySummary};
use crate::voxel_file::{self, Encoding, ValueType};
use crate::vtk;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Segment,
    Topology,
    Tessellate,
    Solve,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Segment => "segment",
            Stage::Topology => "topology",
            Stage::Tessellate => "tessellate",
            Stage::Solve => "solve",
            Stage::Output => "output",
        })
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
#[error("[{stage}] {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: BoxError,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<BoxError>) -> Self {
        PipelineError {
            stage,
            source: source.into(),
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::new(Stage::Config, e)
    }
}

trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<BoxError>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}

/// Read a voxel file, or build a named phantom (`phantom:bridge`,
/// `phantom:channel`, `phantom:repair`).
pub fn load_input(spec: &str) -> Result<VoxelGrid, PipelineError> {
    match spec.strip_prefix("phantom:") {
        Some("bridge") => Ok(phantom::bridge_image()),
        Some("channel") => Ok(phantom::channel_image()),
        Some("repair") => Ok(phantom::repair_image()),
        Some(other) => Err(PipelineError::new(Stage::Ingest, format!("unknown phantom `{other}`"))),
        None => voxel_file::read(Path::new(spec)).stage(Stage::Ingest),
    }
}

pub fn topology_params(cfg: &PipelineConfig) -> TopologyParams {
    TopologyParams {
        degree: cfg.degree,
        g_crit: cfg.g_crit,
        radius: cfg.radius,
        n_sub: cfg.n_sub,
        max_passes: cfg.max_passes,
        connectivity: cfg.connectivity,
    }
}

pub fn analysis_settings(cfg: &PipelineConfig) -> AnalysisSettings {
    AnalysisSettings {
        degree: cfg.degree,
        g_crit: cfg.g_crit,
        rho_max: cfg.rho_max,
        k_max: cfg.analysis_k_max(),
    }
}

/// Smooth level set with `h = Δ` and no correction.
pub fn uncorrected_field(grid: &VoxelGrid, cfg: &PipelineConfig) -> Result<UniformField, PipelineError> {
    let basis = basis_on_grid(grid, cfg.degree, 1).stage(Stage::Segment)?;
    UniformField::from_grid(grid, basis).stage(Stage::Segment)
}

pub fn segmentation_summary(img: &BinaryImage, voxels: &BinaryImage, cfg: &PipelineConfig) -> SegmentationSummary {
    let e = euler_characteristic(img, cfg.connectivity);
    let v = euler_characteristic(voxels, cfg.connectivity);
    SegmentationSummary {
        n_sub: img.subdivision(),
        regions: e.region_count(),
        matches_voxels: e.chi_multiset == v.chi_multiset,
        chi_multiset: e.chi_multiset,
    }
}

pub fn input_summary(source: &str, grid: &VoxelGrid, cfg: &PipelineConfig) -> InputSummary {
    let nd = grid.ndim();
    let voxels = threshold(grid, cfg.g_crit);
    let e = euler_characteristic(&voxels, cfg.connectivity);
    let (min, max) = grid.min_max();
    InputSummary {
        source: source.to_string(),
        dims: grid.shape().dims()[..nd].to_vec(),
        spacing: grid.spacing()[..nd].to_vec(),
        min,
        max,
        foreground: voxels.count(),
        regions: e.region_count(),
        chi_multiset: e.chi_multiset,
    }
}

pub fn topology_summary(outcome: &TopologyOutcome, initial: &BinaryImage, cfg: &PipelineConfig) -> TopologySummary {
    let first = &outcome.history[0].0;
    TopologySummary {
        passes: outcome.passes,
        converged: outcome.converged,
        flagged_per_pass: outcome.history.iter().map(|h| h.count()).collect(),
        flagged_zones: label_components(first, cfg.connectivity).region_count,
        refined_cells: outcome.refined_cells(),
        initial: segmentation_summary(initial, &outcome.voxels, cfg),
        corrected: segmentation_summary(&outcome.smooth, &outcome.voxels, cfg),
    }
}

pub fn tessellation_summary(d: &TessellatedDomain) -> TessellationSummary {
    TessellationSummary {
        cells_per_side: d.mesh.dims()[0],
        rho_max: d.rho_max,
        interior_cells: d.interior.len(),
        cut_cells: d.cut.len(),
        facets: d.facets.len(),
        volume: d.volume(),
        immersed_boundary: d.boundary_measure(Some(FacetKind::Immersed)),
        exterior_boundary: d.boundary_measure(None) - d.boundary_measure(Some(FacetKind::Immersed)),
    }
}

/// Solve on one analysis mesh and return the QoI rows and the
/// discretization for output.
pub fn solve_on<F: LevelSet>(
    field: &F,
    geometry: &str,
    cells: usize,
    cfg: &PipelineConfig,
) -> Result<(Vec<QoiRow>, BackgroundDiscretization, Solution), PipelineError> {
    let disc = BackgroundDiscretization::new(field, cells, &analysis_settings(cfg)).stage(Stage::Solve)?;
    let h = disc.h();
    let row = |dofs: usize, quantity: &str, value: f64, res: f64| QoiRow {
        geometry: geometry.to_string(),
        cells,
        h,
        dofs,
        quantity: quantity.to_string(),
        value,
        relative_residual: res,
    };
    match cfg.solver {
        SolverKind::None => Err(PipelineError::new(Stage::Solve, "no solver selected")),
        SolverKind::Elasticity => {
            let problem = ElasticityProblem::displaced_top(cfg.lame_lambda, cfg.lame_mu, cfg.u_bar);
            let s = solver::solve_elasticity(&disc, &problem).stage(Stage::Solve)?;
            let rows = vec![row(
                s.coefficients.len(),
                "effective_modulus",
                s.effective_modulus(&disc),
                s.relative_residual,
            )];
            Ok((rows, disc, Solution::Elasticity(s)))
        }
        SolverKind::Stokes => {
            let problem = stokes_problem(cfg);
            let s = solver::solve_stokes(&disc, &problem).stage(Stage::Solve)?;
            let n = s.coefficients.len();
            let mut rows = vec![row(n, "outflow", s.outflow_flux(&disc, Side::TOP, None), s.relative_residual)];
            if let Some(w) = cfg.flux_window {
                rows.push(row(n, "outflow_window", s.outflow_flux(&disc, Side::TOP, Some(w)), s.relative_residual));
            }
            Ok((rows, disc, Solution::Stokes(s)))
        }
    }
}

pub fn stokes_problem(cfg: &PipelineConfig) -> StokesProblem {
    StokesProblem {
        mu: cfg.viscosity,
        p_bar: cfg.p_bar,
        beta: cfg.beta,
        gamma: cfg.gamma,
        gamma_tilde: cfg.gamma_tilde,
        ..StokesProblem::default()
    }
}

pub enum Solution {
    Elasticity(solver::ElasticitySolution),
    Stokes(solver::StokesSolution),
}

/// Pieces of the analysis domain with the solution sampled at their
/// vertices.
pub fn solution_vtk(disc: &BackgroundDiscretization, sol: &Solution) -> vtk::UnstructuredGrid {
    let mut g = vtk::domain_pieces(disc.domain());
    match sol {
        Solution::Elasticity(s) => {
            g.add_point_field("displacement", 3, |x| {
                let u = s.displacement(disc, x);
                vec![u[0], u[1], 0.0]
            });
            g.add_point_field("sigma22", 1, |x| vec![s.stress(disc, x)[1]]);
        }
        Solution::Stokes(s) => {
            g.add_point_field("velocity", 3, |x| {
                let u = s.velocity(disc, x);
                vec![u[0], u[1], 0.0]
            });
            g.add_point_field("pressure", 1, |x| vec![s.pressure(disc, x)]);
        }
    }
    g
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir).stage(Stage::Output)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
        fs::write(self.dir.join(name), bytes).stage(Stage::Output)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn image(&mut self, stem: &str, img: &BinaryImage, grid: &VoxelGrid) -> Result<(), PipelineError> {
        let g = voxel_file::binary_grid(img, grid.origin(), grid.lengths());
        self.write(&format!("{stem}.voxel"), voxel_file::to_bytes(&g, ValueType::U8, Encoding::Binary))?;
        self.write(&format!("{stem}.vtk"), vtk::image(&g, stem))
    }
}

/// Which stages [`run`] executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Until {
    Segment,
    Detect,
    Refine,
    Tessellate,
    Solve,
}

/// Run the pipeline up to `until` and write its artifacts and
/// `report.json`.
pub fn run(cfg: &PipelineConfig, until: Until) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let source = cfg
        .input
        .clone()
        .ok_or_else(|| PipelineError::new(Stage::Config, "no input given"))?;
    let grid = load_input(&source)?;
    let mut out = Outputs::new(&cfg.output)?;
    let mut report = RunReport {
        schema: report::SCHEMA.to_string(),
        input: input_summary(&source, &grid, cfg),
        config: serde_json::to_value(cfg).expect("config serializes"),
        segmentation: None,
        topology: None,
        tessellation: None,
        qoi: Vec::new(),
        outputs: Vec::new(),
    };

    let voxels = threshold(&grid, cfg.g_crit);
    let initial_field = uncorrected_field(&grid, cfg)?;
    let initial = voxelize_smooth(&initial_field, &grid, cfg.n_sub, cfg.g_crit);
    report.segmentation = Some(segmentation_summary(&initial, &voxels, cfg));
    out.image("segmentation_initial", &initial, &grid)?;

    if until >= Until::Detect {
        let ind = topo::scan(&voxels, &initial, cfg.radius, cfg.connectivity).stage(Stage::Topology)?;
        out.image("indicator", &ind.0, &grid)?;
    }
    if until >= Until::Refine {
        let outcome = preserve_topology(&grid, &topology_params(cfg)).stage(Stage::Topology)?;
        report.topology = Some(topology_summary(&outcome, &initial, cfg));
        out.image("segmentation", &outcome.smooth, &grid)?;
        if until >= Until::Tessellate {
            run_analysis(cfg, &grid, &outcome, &initial_field, until, &mut report, &mut out)?;
        }
    }

    let mut csv = Vec::new();
    report::write_qoi_csv(&report.qoi, &mut csv).stage(Stage::Output)?;
    if until >= Until::Solve {
        out.write("qoi.csv", csv)?;
    }
    out.written.push("report.json".to_string());
    report.outputs = out.written.clone();
    fs::write(out.dir.join("report.json"), report.to_json()).stage(Stage::Output)?;
    Ok(report)
}

fn run_analysis(
    cfg: &PipelineConfig,
    grid: &VoxelGrid,
    outcome: &TopologyOutcome,
    initial_field: &UniformField,
    until: Until,
    report: &mut RunReport,
    out: &mut Outputs,
) -> Result<(), PipelineError> {
    let finest = *cfg.cells.iter().max().expect("validated non-empty");
    let field = &outcome.field;
    if grid.ndim() == 1 {
        return Err(PipelineError::new(Stage::Tessellate, "tessellation needs a 2D or 3D image"));
    }
    let mesh = BackgroundMesh::over(field, finest);
    let domain = tessellate(field, &mesh, cfg.g_crit, cfg.rho_max);
    report.tessellation = Some(tessellation_summary(&domain));
    out.write("boundary.vtk", vtk::boundary_facets(&domain).to_vtk("boundary facets"))?;
    if until < Until::Solve || cfg.solver == SolverKind::None {
        out.write("domain.vtk", vtk::domain_pieces(&domain).to_vtk("integration domain"))?;
        return Ok(());
    }
    let mut cells = cfg.cells.clone();
    cells.sort_unstable();
    cells.dedup();
    for &n in &cells {
        let (rows, disc, sol) = solve_on(field, "corrected", n, cfg)?;
        report.qoi.extend(rows);
        if n == finest {
            out.write("solution.vtk", solution_vtk(&disc, &sol).to_vtk("solution"))?;
        }
        if cfg.compare {
            let (rows, _, _) = solve_on(initial_field, "uncorrected", n, cfg)?;
            report.qoi.extend(rows);
        }
    }
    Ok(())
}
