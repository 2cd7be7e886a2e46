//! File formats, configuration, reports and the pipeline driver around
//! `scaniga-core`.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod voxel_file;
pub mod vtk;

pub use config::{ConfigError, PipelineConfig, SolverKind};
pub use pipeline::{run, PipelineError, Stage, Until};
pub use report::RunReport;
