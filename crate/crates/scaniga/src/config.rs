//! Pipeline configuration: defaults, then a `key = value` file, then
//! command-line overrides in the same syntax.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use scaniga_core::Connectivity;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: cannot parse `{value}` as {expected}")]
    Value {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("`{key}`: {message}")]
    Range { key: &'static str, message: String },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<ConfigError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    None,
    Elasticity,
    Stokes,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::None => "none",
            SolverKind::Elasticity => "elasticity",
            SolverKind::Stokes => "stokes",
        })
    }
}

/// Every tunable of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    /// A voxel file, or `phantom:bridge`, `phantom:channel`, `phantom:repair`.
    pub input: Option<String>,
    pub output: PathBuf,
    pub degree: usize,
    pub g_crit: f64,
    pub radius: usize,
    pub n_sub: usize,
    pub rho_max: usize,
    /// Whole-cell Gauss order. Unset means `p + 1` for geometry and `2p`
    /// for analysis.
    pub k_max: Option<usize>,
    pub max_passes: usize,
    #[serde(serialize_with = "ser_connectivity")]
    pub connectivity: Connectivity,
    pub solver: SolverKind,
    /// Analysis meshes, cells per side.
    pub cells: Vec<usize>,
    /// Also solve on the uncorrected segmentation.
    pub compare: bool,
    /// Tangential range on the outflow side for an extra partial flux.
    pub flux_window: Option<(f64, f64)>,
    pub lame_lambda: f64,
    pub lame_mu: f64,
    pub u_bar: f64,
    pub viscosity: f64,
    pub p_bar: f64,
    pub beta: f64,
    pub gamma: f64,
    pub gamma_tilde: f64,
}

fn ser_connectivity<S: serde::Serializer>(c: &Connectivity, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(connectivity_name(*c))
}

pub fn connectivity_name(c: Connectivity) -> &'static str {
    match c {
        Connectivity::Face => "face",
        Connectivity::Vertex => "vertex",
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: None,
            output: PathBuf::from("scaniga-out"),
            degree: 2,
            g_crit: 0.5,
            radius: 1,
            n_sub: 3,
            rho_max: 3,
            k_max: None,
            max_passes: 1,
            connectivity: Connectivity::Vertex,
            solver: SolverKind::None,
            cells: vec![32],
            compare: false,
            flux_window: None,
            lame_lambda: 0.5,
            lame_mu: 0.5,
            u_bar: 0.2,
            viscosity: 1.0,
            p_bar: 1.0,
            beta: 100.0,
            gamma: 0.05,
            gamma_tilde: 0.0005,
        }
    }
}

pub const KEYS: &[&str] = &[
    "input",
    "output",
    "degree",
    "g_crit",
    "radius",
    "n_sub",
    "rho_max",
    "k_max",
    "max_passes",
    "connectivity",
    "solver",
    "cells",
    "compare",
    "flux_window",
    "lame_lambda",
    "lame_mu",
    "u_bar",
    "viscosity",
    "p_bar",
    "beta",
    "gamma",
    "gamma_tilde",
];

fn parse<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

impl PipelineConfig {
    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "input" => self.input = Some(v.to_string()),
            "output" => self.output = PathBuf::from(v),
            "degree" => self.degree = parse(key, v, "an integer")?,
            "g_crit" => self.g_crit = parse(key, v, "a number")?,
            "radius" => self.radius = parse(key, v, "an integer")?,
            "n_sub" => self.n_sub = parse(key, v, "an integer")?,
            "rho_max" => self.rho_max = parse(key, v, "an integer")?,
            "k_max" => self.k_max = if v == "none" { None } else { Some(parse(key, v, "an integer or `none`")?) },
            "max_passes" => self.max_passes = parse(key, v, "an integer")?,
            "connectivity" => {
                self.connectivity = match v {
                    "vertex" => Connectivity::Vertex,
                    "face" => Connectivity::Face,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.to_string(),
                            value: v.to_string(),
                            expected: "`vertex` or `face`",
                        })
                    }
                }
            }
            "solver" => {
                self.solver = match v {
                    "none" => SolverKind::None,
                    "elasticity" => SolverKind::Elasticity,
                    "stokes" => SolverKind::Stokes,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.to_string(),
                            value: v.to_string(),
                            expected: "`none`, `elasticity` or `stokes`",
                        })
                    }
                }
            }
            "cells" => {
                self.cells = v
                    .split(',')
                    .map(|c| parse(key, c.trim(), "a comma-separated list of integers"))
                    .collect::<Result<_, _>>()?
            }
            "compare" => self.compare = parse(key, v, "`true` or `false`")?,
            "flux_window" => {
                self.flux_window = if v == "none" {
                    None
                } else {
                    let pair: Vec<f64> = v
                        .split(',')
                        .map(|c| parse(key, c.trim(), "`none` or two comma-separated numbers"))
                        .collect::<Result<_, _>>()?;
                    match pair[..] {
                        [a, b] => Some((a, b)),
                        _ => {
                            return Err(ConfigError::Value {
                                key: key.to_string(),
                                value: v.to_string(),
                                expected: "`none` or two comma-separated numbers",
                            })
                        }
                    }
                }
            }
            "lame_lambda" => self.lame_lambda = parse(key, v, "a number")?,
            "lame_mu" => self.lame_mu = parse(key, v, "a number")?,
            "u_bar" => self.u_bar = parse(key, v, "a number")?,
            "viscosity" => self.viscosity = parse(key, v, "a number")?,
            "p_bar" => self.p_bar = parse(key, v, "a number")?,
            "beta" => self.beta = parse(key, v, "a number")?,
            "gamma" => self.gamma = parse(key, v, "a number")?,
            "gamma_tilde" => self.gamma_tilde = parse(key, v, "a number")?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Apply a configuration file. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: line.to_string(),
                });
            };
            self.set(k, v).map_err(|e| ConfigError::AtLine {
                line: i + 1,
                source: Box::new(e),
            })?;
        }
        Ok(())
    }

    /// Apply `key=value` overrides.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<(), ConfigError> {
        for p in pairs {
            let (k, v) = p.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: 0,
                text: p.to_string(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |key: &'static str, ok: bool, message: &str| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Range {
                    key,
                    message: message.to_string(),
                })
            }
        };
        range("degree", (1..=5).contains(&self.degree), "must lie in 1..=5")?;
        range("g_crit", self.g_crit > 0.0 && self.g_crit < 1.0, "must lie in (0, 1)")?;
        range("radius", self.radius >= 1, "must be at least 1")?;
        range("n_sub", (1..=8).contains(&self.n_sub), "must lie in 1..=8")?;
        range("rho_max", (1..=8).contains(&self.rho_max), "must lie in 1..=8")?;
        range("k_max", self.k_max.is_none_or(|k| (1..=20).contains(&k)), "must lie in 1..=20")?;
        range("max_passes", self.max_passes <= 8, "must be at most 8")?;
        range("flux_window", self.flux_window.is_none_or(|(a, b)| a < b), "lower end must be below upper end")?;
        range("cells", !self.cells.is_empty() && self.cells.iter().all(|&c| (2..=512).contains(&c)), "each entry must lie in 2..=512")?;
        range("lame_lambda", self.lame_lambda > 0.0, "must be positive")?;
        range("lame_mu", self.lame_mu > 0.0, "must be positive")?;
        range("u_bar", self.u_bar != 0.0, "must be nonzero")?;
        range("viscosity", self.viscosity > 0.0, "must be positive")?;
        range("beta", self.beta > 0.0, "must be positive")?;
        range("gamma", self.gamma >= 0.0, "must be non-negative")?;
        range("gamma_tilde", self.gamma_tilde >= 0.0, "must be non-negative")?;
        Ok(())
    }

    pub fn geometry_k_max(&self) -> usize {
        self.k_max.unwrap_or(self.degree + 1)
    }

    pub fn analysis_k_max(&self) -> usize {
        self.k_max.unwrap_or(2 * self.degree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let mut c = PipelineConfig::default();
        c.apply_text("# run\ndegree = 3\ng_crit=0.4\n\ncells = 16, 32\n").unwrap();
        c.apply_overrides(["degree=4"]).unwrap();
        assert_eq!(c.degree, 4);
        assert_eq!(c.g_crit, 0.4);
        assert_eq!(c.cells, vec![16, 32]);
        assert_eq!(c.radius, 1);
        c.validate().unwrap();
    }

    #[test]
    fn errors_carry_line_and_key() {
        let mut c = PipelineConfig::default();
        let e = c.apply_text("degree = 2\nradius: 3\n").unwrap_err();
        assert_eq!(e, ConfigError::Syntax { line: 2, text: "radius: 3".into() });
        let e = c.apply_text("colour = red").unwrap_err();
        assert!(matches!(e, ConfigError::AtLine { line: 1, .. }));
        c.g_crit = 1.5;
        assert!(matches!(c.validate(), Err(ConfigError::Range { key: "g_crit", .. })));
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = PipelineConfig::default();
        let defaults = serde_json::to_value(&c).unwrap();
        for key in KEYS {
            let v = match defaults[*key].clone() {
                serde_json::Value::Null => "none".to_string(),
                serde_json::Value::String(s) => s,
                serde_json::Value::Array(a) => a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                other => other.to_string(),
            };
            let v = if *key == "input" { "phantom:bridge".to_string() } else { v };
            c.set(key, &v).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
