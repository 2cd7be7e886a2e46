use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scaniga::pipeline::{input_summary, load_input};
use scaniga::{run, PipelineConfig, PipelineError, SolverKind, Stage, Until};
use scaniga_core::kernel::{convolved_feature_peak, fit_kernel_width, gaussian_kernel_width, peak_one_term};

#[derive(Parser)]
#[command(name = "scaniga", version, about = "Scan-based immersed isogeometric analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a summary of the input image.
    IngestInfo(Common),
    /// Smooth segmentation without topology repair.
    Segment(Common),
    /// Segmentation plus the topology-error indicator.
    Detect(Common),
    /// Topology-preserving refinement.
    Refine(Common),
    /// Repair and tessellate on the finest analysis mesh.
    Tessellate(Common),
    /// Displacement-driven elasticity on the repaired geometry.
    SolveElasticity(Common),
    /// Pressure-driven Stokes flow on the repaired geometry.
    SolveStokes(Common),
    /// Kernel-width law against the fitted width, and peak classification.
    AnalyzeKernel,
    /// Every stage, with the solver taken from the configuration.
    Pipeline(Common),
}

#[derive(Args)]
struct Common {
    /// Voxel file or `phantom:NAME`.
    input: Option<String>,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    g_crit: Option<f64>,
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long)]
    n_sub: Option<usize>,
    #[arg(long)]
    rho_max: Option<usize>,
    #[arg(long)]
    max_passes: Option<usize>,
    /// Comma-separated cells per side.
    #[arg(long)]
    cells: Option<String>,
    /// Also solve on the uncorrected segmentation.
    #[arg(long)]
    compare: bool,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_overrides(self.set.iter().map(String::as_str))?;
        let flags = [
            ("input", self.input.clone()),
            ("output", self.output.as_ref().map(|p| p.display().to_string())),
            ("degree", self.degree.map(|v| v.to_string())),
            ("g_crit", self.g_crit.map(|v| v.to_string())),
            ("radius", self.radius.map(|v| v.to_string())),
            ("n_sub", self.n_sub.map(|v| v.to_string())),
            ("rho_max", self.rho_max.map(|v| v.to_string())),
            ("max_passes", self.max_passes.map(|v| v.to_string())),
            ("cells", self.cells.clone()),
            ("compare", self.compare.then(|| "true".to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        Ok(cfg)
    }
}

fn analyze_kernel() {
    println!("p,h,sigma_law,sigma_fit,rel_error,peak_one_term,peak_numeric,survives");
    for p in [2, 3, 4] {
        for h in [1.0, 0.5] {
            let law = gaussian_kernel_width(h, p);
            let fit = fit_kernel_width(p, h);
            let one = peak_one_term(1.0, p);
            let num = convolved_feature_peak(p, 1);
            println!("{p},{h},{law:.6},{fit:.6},{:.4},{one:.4},{num:.4},{}", (fit - law).abs() / law, num > 0.5);
        }
    }
}

fn execute(command: Command) -> Result<(), PipelineError> {
    let (common, until, solver) = match command {
        Command::AnalyzeKernel => {
            analyze_kernel();
            return Ok(());
        }
        Command::IngestInfo(c) => {
            let cfg = c.config()?;
            cfg.validate()?;
            let source = cfg.input.clone().ok_or_else(|| PipelineError::new(Stage::Config, "no input given"))?;
            let grid = load_input(&source)?;
            let summary = input_summary(&source, &grid, &cfg);
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            return Ok(());
        }
        Command::Segment(c) => (c, Until::Segment, None),
        Command::Detect(c) => (c, Until::Detect, None),
        Command::Refine(c) => (c, Until::Refine, None),
        Command::Tessellate(c) => (c, Until::Tessellate, None),
        Command::SolveElasticity(c) => (c, Until::Solve, Some(SolverKind::Elasticity)),
        Command::SolveStokes(c) => (c, Until::Solve, Some(SolverKind::Stokes)),
        Command::Pipeline(c) => (c, Until::Solve, None),
    };
    let mut cfg = common.config()?;
    if let Some(s) = solver {
        cfg.solver = s;
    }
    let report = run(&cfg, until)?;
    for row in &report.qoi {
        println!("{} n={} {} = {:.6e}", row.geometry, row.cells, row.quantity, row.value);
    }
    if let Some(t) = &report.topology {
        println!("topology: {} pass(es), {} flagged zone(s), converged {}", t.passes, t.flagged_zones, t.converged);
    }
    println!("wrote {} file(s) to {}", report.outputs.len(), cfg.output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scaniga: {e}");
            ExitCode::FAILURE
        }
    }
}
