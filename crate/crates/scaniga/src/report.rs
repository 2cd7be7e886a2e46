//! Machine-readable run report and the QoI table.
//!
//! The report is JSON with the fields of [`RunReport`]; sections of stages
//! that did not run are `null`. Unknown fields are rejected on reading, so
//! a successful [`RunReport::from_json`] is the schema check.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};

pub const SCHEMA: &str = "scaniga-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema: String,
    pub input: InputSummary,
    /// The effective configuration.
    pub config: serde_json::Value,
    pub segmentation: Option<SegmentationSummary>,
    pub topology: Option<TopologySummary>,
    pub tessellation: Option<TessellationSummary>,
    pub qoi: Vec<QoiRow>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let r: RunReport = serde_json::from_str(text)?;
        if r.schema != SCHEMA {
            return Err(serde::de::Error::custom(format!("schema `{}`, expected `{SCHEMA}`", r.schema)));
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSummary {
    pub source: String,
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub min: f64,
    pub max: f64,
    /// Voxels at or above `g_crit`.
    pub foreground: usize,
    pub regions: usize,
    pub chi_multiset: BTreeMap<i64, usize>,
}

/// Region structure of a smooth segmentation voxelized at `n_sub`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationSummary {
    pub n_sub: usize,
    pub regions: usize,
    pub chi_multiset: BTreeMap<i64, usize>,
    pub matches_voxels: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySummary {
    /// Refinement passes made.
    pub passes: usize,
    pub converged: bool,
    /// Flagged voxels per evaluated field, the first for the unrefined one.
    pub flagged_per_pass: Vec<usize>,
    /// Connected groups of flagged voxels before refinement.
    pub flagged_zones: usize,
    pub refined_cells: usize,
    pub initial: SegmentationSummary,
    pub corrected: SegmentationSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TessellationSummary {
    pub cells_per_side: usize,
    pub rho_max: usize,
    pub interior_cells: usize,
    pub cut_cells: usize,
    pub facets: usize,
    pub volume: f64,
    pub immersed_boundary: f64,
    pub exterior_boundary: f64,
}

/// One quantity of interest on one analysis mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QoiRow {
    /// `corrected` or `uncorrected` segmentation.
    pub geometry: String,
    pub cells: usize,
    pub h: f64,
    pub dofs: usize,
    pub quantity: String,
    pub value: f64,
    pub relative_residual: f64,
}

/// CSV with a header row, one line per [`QoiRow`].
pub fn write_qoi_csv<W: io::Write>(rows: &[QoiRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["geometry", "cells", "h", "dofs", "quantity", "value", "relative_residual"])?;
    }
    w.flush()?;
    Ok(())
}
