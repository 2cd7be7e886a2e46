use std::fs;

use scaniga::config::KEYS;
use scaniga::{ConfigError, PipelineConfig, SolverKind};

#[test]
fn flags_beat_file_beat_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(&path, "solver = stokes\nradius = 2\nflux_window = 0.1, 0.3\n").unwrap();
    let mut c = PipelineConfig::default();
    c.apply_text(&fs::read_to_string(&path).unwrap()).unwrap();
    c.apply_overrides(["radius=3", "k_max=5"]).unwrap();
    assert_eq!(c.solver, SolverKind::Stokes);
    assert_eq!(c.radius, 3);
    assert_eq!(c.k_max, Some(5));
    assert_eq!(c.flux_window, Some((0.1, 0.3)));
    assert_eq!(c.n_sub, PipelineConfig::default().n_sub);
    c.validate().unwrap();
}

#[test]
fn bad_values_are_rejected() {
    let mut c = PipelineConfig::default();
    assert!(matches!(c.set("cells", "16,x"), Err(ConfigError::Value { .. })));
    assert!(matches!(c.set("solver", "heat"), Err(ConfigError::Value { .. })));
    assert!(matches!(c.apply_overrides(["degree"]), Err(ConfigError::Syntax { .. })));
    c.set("flux_window", "0.4,0.2").unwrap();
    assert!(matches!(c.validate(), Err(ConfigError::Range { key: "flux_window", .. })));
}

#[test]
fn every_key_appears_in_the_serialized_config() {
    let v = serde_json::to_value(PipelineConfig::default()).unwrap();
    let obj = v.as_object().unwrap();
    assert_eq!(obj.len(), KEYS.len());
    assert!(KEYS.iter().all(|k| obj.contains_key(*k)));
}
