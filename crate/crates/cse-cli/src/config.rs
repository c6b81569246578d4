//! JSON run configuration: schema, loading with JSON-pointer error paths,
//! and per-command requirement checks.

use std::path::{Path, PathBuf};

use cse_core::designs::{MultiArmBetaBinomial, ShiftedBoundaryZTest, TwoStageSelection, ZTest};
use cse_core::{Design, Estimand, ModelFamily, NullHypothesis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema violation at {pointer}: {message}")]
    Schema { pointer: String, message: String },
}

/// Everything a run needs besides command-line flags. `master_seed` is
/// mandatory so no artifact can depend on wall-clock state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: ModelFamily,
    pub design: DesignSpec,
    pub grid: GridSpec,
    /// Simulations per tile before any adaptive growth.
    pub sim_count: u64,
    /// Family-wise Type I Error target; calibrate only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Per-tile band miscoverage; validate only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adaptive: Option<AdaptiveSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_scan: Option<BoundScanSpec>,
    /// What the confidence set reports the range of; travels inside the
    /// calibration artifact so `confset` can run from it alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimand: Option<Estimand>,
    /// Calibration resampling diagnostic replicate count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_reps: Option<u64>,
    /// Also compute the lower validation band.
    #[serde(default)]
    pub lower_band: bool,
    /// Default artifact directory; the --out flag wins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Axis-aligned box, per-axis cell counts, and the null hypotheses whose
/// boundaries the tiling must respect.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
    pub hypotheses: Vec<NullHypothesis>,
}

/// Refinement schedule: each round bisects the `budget` highest-scoring
/// tiles and re-simulates the children with `sim_growth` times the sims.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveSpec {
    pub rounds: u32,
    pub budget: usize,
    #[serde(default = "default_sim_growth")]
    pub sim_growth: f64,
}

fn default_sim_growth() -> f64 {
    // Children inherit the parent's per-tile budget unless told otherwise;
    // growing sims is a cost knob, not a correctness one.
    1.0
}

/// A one-dimensional scan for the `bound` command: transfer `level` from
/// `theta0` along `direction` (unit vector on axis 0 when omitted) to
/// displacements t in [0, v_max] on a v_count-point grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundScanSpec {
    pub theta0: Vec<f64>,
    /// The error rate known at theta0.
    pub level: f64,
    pub v_max: f64,
    pub v_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
    /// Extra columns: the forward bound at each of these fixed exponents.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixed_qs: Vec<f64>,
}

/// Design selection: {"name": ..., "params": {...}}. `lambda` is the fixed
/// rejection threshold a validation run tests at; calibrate finds its own.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum DesignSpec {
    Ztest(ZtestParams),
    BoundaryZtest(ZtestParams),
    MultiArmBetaBinomial(MultiArmParams),
    TwoStageSelection(TwoStageParams),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZtestParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiArmParams {
    /// Shared Beta(a, b) prior over arm response rates.
    pub prior: (f64, f64),
    /// Null boundary per arm on the log-odds scale.
    pub null_log_odds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStageParams {
    pub stage_one: u64,
    pub stage_two: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl DesignSpec {
    pub fn build(&self) -> Result<Box<dyn Design>, cse_core::Error> {
        Ok(match self {
            DesignSpec::Ztest(_) => Box::new(ZTest),
            DesignSpec::BoundaryZtest(_) => Box::new(ShiftedBoundaryZTest),
            DesignSpec::MultiArmBetaBinomial(p) => {
                Box::new(MultiArmBetaBinomial::new(p.prior, p.null_log_odds.clone())?)
            }
            DesignSpec::TwoStageSelection(p) => {
                Box::new(TwoStageSelection::new(p.stage_one, p.stage_two)?)
            }
        })
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            DesignSpec::Ztest(p) | DesignSpec::BoundaryZtest(p) => p.lambda,
            DesignSpec::MultiArmBetaBinomial(p) => p.lambda,
            DesignSpec::TwoStageSelection(p) => p.lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Validate,
    Calibrate,
    Bound,
    Grid,
    Confset,
}

impl RunConfig {
    /// Parse a config file, reporting schema violations with the JSON
    /// pointer of the offending value.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        from_json_str(&text)
    }

    /// Cross-field requirements that serde cannot express, specialized to
    /// the command about to run.
    pub fn check_for(&self, command: CommandKind) -> Result<(), ConfigError> {
        if self.alpha.is_some() && self.delta.is_some() {
            return Err(schema(
                "/alpha",
                "alpha and delta are mutually exclusive: alpha drives calibrate, delta drives validate",
            ));
        }
        if let Some(alpha) = self.alpha {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(schema("/alpha", &format!("alpha {alpha} outside (0, 1)")));
            }
        }
        if let Some(delta) = self.delta {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(schema("/delta", &format!("delta {delta} outside (0, 1)")));
            }
        }
        match command {
            CommandKind::Validate => {
                if self.delta.is_none() {
                    return Err(schema("/delta", "required by validate (band miscoverage)"));
                }
                if self.design.lambda().is_none() {
                    return Err(schema(
                        "/design/params/lambda",
                        "required by validate (the fixed rejection threshold under test)",
                    ));
                }
            }
            CommandKind::Calibrate => {
                if self.alpha.is_none() {
                    return Err(schema("/alpha", "required by calibrate (the level to guarantee)"));
                }
            }
            CommandKind::Bound => {
                if self.bound_scan.is_none() {
                    return Err(schema("/bound_scan", "required by bound (the scan to tabulate)"));
                }
            }
            CommandKind::Grid => {}
            CommandKind::Confset => {
                if self.estimand.is_none() {
                    return Err(schema(
                        "/estimand",
                        "required by confset (what to report the retained range of)",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Deserialize any artifact-side JSON with pointer-annotated errors.
pub fn from_json_str<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let deserializer = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(deserializer).map_err(|err| {
        let message = err.inner().to_string();
        ConfigError::Schema {
            pointer: pointer_for(err.path(), &message),
            message,
        }
    })
}

/// Turn the error's path into a JSON pointer. Missing fields surface at
/// the parent container, so splice the field name from serde's "missing
/// field `x`" message back onto the pointer.
fn pointer_for(path: &serde_path_to_error::Path, message: &str) -> String {
    use serde_path_to_error::Segment;
    let mut pointer = String::new();
    for segment in path.iter() {
        match segment {
            Segment::Map { key } => {
                pointer.push('/');
                pointer.push_str(key);
            }
            Segment::Seq { index } => {
                pointer.push('/');
                pointer.push_str(&index.to_string());
            }
            Segment::Enum { variant } => {
                pointer.push('/');
                pointer.push_str(variant);
            }
            Segment::Unknown => pointer.push_str("/?"),
        }
    }
    if let Some(rest) = message.split("missing field `").nth(1) {
        if let Some(field) = rest.split('`').next() {
            pointer.push('/');
            pointer.push_str(field);
        }
    }
    if pointer.is_empty() {
        pointer.push('/');
    }
    pointer
}

fn schema(pointer: &str, message: &str) -> ConfigError {
    ConfigError::Schema {
        pointer: pointer.to_string(),
        message: message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config() -> serde_json::Value {
        serde_json::json!({
            "family": {"kind": "normal_location", "dim": 1},
            "design": {"name": "ztest", "params": {"lambda": 0.025}},
            "grid": {
                "lower": [-1.0],
                "upper": [0.0],
                "cells": [4],
                "hypotheses": [{"axis": 0, "threshold": 0.0, "direction": "leq"}]
            },
            "sim_count": 100,
            "delta": 0.05,
            "master_seed": 7
        })
    }

    fn parse(value: serde_json::Value) -> Result<RunConfig, ConfigError> {
        from_json_str(&value.to_string())
    }

    #[test]
    fn minimal_config_round_trips() {
        let config = parse(minimal_config()).unwrap();
        assert_eq!(config.master_seed, 7);
        assert_eq!(config.design.lambda(), Some(0.025));
        let json = serde_json::to_string(&config).unwrap();
        let back: RunConfig = from_json_str(&json).unwrap();
        assert_eq!(back.sim_count, config.sim_count);
        assert_eq!(back.grid.cells, config.grid.cells);
    }

    #[test]
    fn missing_master_seed_names_its_pointer() {
        let mut value = minimal_config();
        value.as_object_mut().unwrap().remove("master_seed");
        let err = parse(value).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("/master_seed"), "got: {text}");
    }

    #[test]
    fn nested_schema_errors_carry_full_pointer() {
        let mut value = minimal_config();
        value["grid"]["cells"] = serde_json::json!([4.5]);
        let err = parse(value).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("/grid/cells/0"), "got: {text}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut value = minimal_config();
        value["typo_field"] = serde_json::json!(1);
        assert!(parse(value).is_err());
    }

    #[test]
    fn unknown_design_name_is_rejected() {
        let mut value = minimal_config();
        value["design"]["name"] = serde_json::json!("tteest");
        let err = parse(value).unwrap_err();
        assert!(err.to_string().contains("tteest"));
    }

    #[test]
    fn alpha_and_delta_together_fail_every_command() {
        let mut value = minimal_config();
        value["alpha"] = serde_json::json!(0.025);
        let config = parse(value).unwrap();
        for command in [
            CommandKind::Validate,
            CommandKind::Calibrate,
            CommandKind::Grid,
        ] {
            assert!(config.check_for(command).is_err());
        }
    }

    #[test]
    fn per_command_requirements() {
        let config = parse(minimal_config()).unwrap();
        assert!(config.check_for(CommandKind::Validate).is_ok());
        // No alpha: calibrate refuses.
        assert!(config.check_for(CommandKind::Calibrate).is_err());
        // No bound_scan: bound refuses.
        assert!(config.check_for(CommandKind::Bound).is_err());
        // Grid needs neither level.
        assert!(config.check_for(CommandKind::Grid).is_ok());

        let mut value = minimal_config();
        value.as_object_mut().unwrap().remove("delta");
        value["alpha"] = serde_json::json!(0.025);
        let config = parse(value).unwrap();
        assert!(config.check_for(CommandKind::Calibrate).is_ok());
        assert!(config.check_for(CommandKind::Validate).is_err());
    }

    #[test]
    fn validate_requires_design_lambda() {
        let mut value = minimal_config();
        value["design"]["params"] = serde_json::json!({});
        let config = parse(value).unwrap();
        let err = config.check_for(CommandKind::Validate).unwrap_err();
        assert!(err.to_string().contains("/design/params/lambda"));
    }

    #[test]
    fn all_design_names_build() {
        for (name, params) in [
            ("ztest", serde_json::json!({})),
            ("boundary_ztest", serde_json::json!({})),
            (
                "multi_arm_beta_binomial",
                serde_json::json!({"prior": [1.0, 1.0], "null_log_odds": [0.0, 0.0]}),
            ),
            (
                "two_stage_selection",
                serde_json::json!({"stage_one": 3, "stage_two": 2}),
            ),
        ] {
            let spec: DesignSpec =
                from_json_str(&serde_json::json!({"name": name, "params": params}).to_string())
                    .unwrap();
            spec.build().unwrap();
        }
    }
}
