//! Experiment configuration files.
//!
//! Rates (`gamma`, `kappa`) are read in units of `omega` and `dt` in units of
//! `1 / omega`, unless `units.rates` is `"absolute"`. `omega` itself is always
//! absolute. Output paths are relative to the directory holding the config.

use std::fs;
use std::path::{Path, PathBuf};

use holorefocus::dynamics::default_dt;
use holorefocus::models::ModelId;
use holorefocus::schemes::{PulseAxis, SchemeKind, SchemeSpec, SweepGrid};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateUnit {
    #[default]
    Omega,
    Absolute,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    #[serde(default)]
    pub rates: RateUnit,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_report")]
    pub report: PathBuf,
    #[serde(default = "default_sweep_csv")]
    pub sweep_csv: PathBuf,
    #[serde(default = "default_fit")]
    pub fit: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from(".")
}
fn default_report() -> PathBuf {
    PathBuf::from("report.json")
}
fn default_sweep_csv() -> PathBuf {
    PathBuf::from("sweep.csv")
}
fn default_fit() -> PathBuf {
    PathBuf::from("fit.json")
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            report: default_report(),
            sweep_csv: default_sweep_csv(),
            fit: default_fit(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verbosity {
    #[default]
    Summary,
    /// Adds per-stage information and the target gate.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub kappa_over_gamma: Vec<f64>,
    pub kappa_over_omega: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: SchemeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelId>,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub kappa: f64,
    pub theta0: f64,
    #[serde(default = "default_ramp")]
    pub ramp_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_wilson_steps")]
    pub wilson_steps: usize,
    #[serde(default)]
    pub trajectories: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pulse_axis: PulseAxis,
    #[serde(default)]
    pub allow_nonadiabatic: bool,
    #[serde(default)]
    pub units: Units,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub verbosity: Verbosity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

fn default_omega() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    1.0 / 200.0
}
fn default_ramp() -> f64 {
    0.25
}
fn default_wilson_steps() -> usize {
    4000
}

/// A config with every value in absolute units.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub spec: SchemeSpec,
    pub model: Option<ModelId>,
    pub trajectories: usize,
    pub verbosity: Verbosity,
    pub grid: Option<SweepGrid>,
    pub output: OutputSpec,
    /// Config echo with absolute units and an explicit step.
    pub echo: ExperimentConfig,
    dt_explicit: bool,
}

impl Resolved {
    pub fn report_path(&self) -> PathBuf {
        self.output.dir.join(&self.output.report)
    }

    pub fn sweep_csv_path(&self) -> PathBuf {
        self.output.dir.join(&self.output.sweep_csv)
    }

    pub fn fit_path(&self) -> PathBuf {
        self.output.dir.join(&self.output.fit)
    }

    /// Base scheme parameters of a sweep: without an explicit step every grid point uses
    /// its own default.
    pub fn sweep_spec(&self) -> SchemeSpec {
        SchemeSpec {
            dt: self.spec.dt.filter(|_| self.dt_explicit),
            ..self.spec.clone()
        }
    }

    pub fn sweep_echo(&self) -> ExperimentConfig {
        ExperimentConfig {
            dt: self.echo.dt.filter(|_| self.dt_explicit),
            ..self.echo.clone()
        }
    }
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("invalid parameter `{field}`: {reason}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Converts to absolute units and validates. `base` anchors relative
    /// output directories.
    pub fn resolve(&self, base: &Path) -> Result<Resolved, CliError> {
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(invalid(
                "omega",
                format!("must be positive, got {}", self.omega),
            ));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(invalid(
                "gamma",
                format!("must be positive, got {}", self.gamma),
            ));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(invalid(
                "kappa",
                format!("must be non-negative, got {}", self.kappa),
            ));
        }
        let scale = match self.units.rates {
            RateUnit::Omega => self.omega,
            RateUnit::Absolute => 1.0,
        };
        let gamma = self.gamma * scale;
        let kappa = self.kappa * scale;
        let dt = match self.dt {
            Some(dt) if !(dt.is_finite() && dt > 0.0) => {
                return Err(invalid("dt", format!("must be positive, got {dt}")))
            }
            Some(dt) => dt / scale,
            None => default_dt(self.omega, gamma),
        };
        let spec = SchemeSpec {
            scheme: self.scheme,
            omega: self.omega,
            gamma,
            kappa,
            theta0: self.theta0,
            ramp_fraction: self.ramp_fraction,
            dt: Some(dt),
            seed: self.seed,
            pulse_axis: self.pulse_axis,
            allow_nonadiabatic: self.allow_nonadiabatic,
            wilson_steps: self.wilson_steps,
        };
        spec.validate()
            .map_err(|e| CliError::from_core("config", e))?;
        spec.resolve_model(self.model)
            .map_err(|e| CliError::from_core("config", e))?;

        let grid = self.grid.as_ref().map(|g| SweepGrid {
            kappa_over_gamma: g.kappa_over_gamma.clone(),
            kappa_over_omega: g.kappa_over_omega.clone(),
        });
        if let Some(g) = &grid {
            g.validate().map_err(|e| CliError::from_core("config", e))?;
        }

        let mut output = self.output.clone();
        if output.dir.is_relative() {
            output.dir = base.join(&output.dir);
        }
        let echo = ExperimentConfig {
            gamma,
            kappa,
            dt: Some(dt),
            units: Units {
                rates: RateUnit::Absolute,
            },
            ..self.clone()
        };
        Ok(Resolved {
            spec,
            model: self.model,
            trajectories: self.trajectories,
            verbosity: self.verbosity,
            grid,
            output,
            echo,
            dt_explicit: self.dt.is_some(),
        })
    }
}

pub fn load(path: &Path) -> Result<(ExperimentConfig, Resolved), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    let config = ExperimentConfig::from_json(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let resolved = config.resolve(base)?;
    Ok((config, resolved))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"scheme": "LAMBDA_DOUBLE", "kappa": 0.005, "theta0": 0.7853981633974483}"#
    }

    #[test]
    fn defaults_resolve_to_reference_point() {
        let cfg = ExperimentConfig::from_json(minimal()).unwrap();
        let r = cfg.resolve(Path::new("/tmp")).unwrap();
        assert_eq!(r.spec.omega, 1.0);
        assert_eq!(r.spec.gamma, 0.005);
        assert_eq!(r.spec.dt, Some(0.01));
        assert_eq!(r.spec.ramp_fraction, 0.25);
        assert_eq!(r.report_path(), Path::new("/tmp/./report.json"));
    }

    #[test]
    fn rates_scale_with_omega_unless_absolute() {
        let text = r#"{"scheme": "NMR_DOUBLE", "omega": 2.0, "gamma": 0.01, "kappa": 0.02, "theta0": 1.0, "dt": 0.02}"#;
        let r = ExperimentConfig::from_json(text)
            .unwrap()
            .resolve(Path::new("."))
            .unwrap();
        assert_eq!(
            (r.spec.gamma, r.spec.kappa, r.spec.dt),
            (0.02, 0.04, Some(0.01))
        );

        let text = r#"{"scheme": "NMR_DOUBLE", "omega": 2.0, "gamma": 0.01, "kappa": 0.02, "theta0": 1.0,
                       "units": {"rates": "absolute"}}"#;
        let r = ExperimentConfig::from_json(text)
            .unwrap()
            .resolve(Path::new("."))
            .unwrap();
        assert_eq!((r.spec.gamma, r.spec.kappa), (0.01, 0.02));
    }

    #[test]
    fn echo_resolves_to_the_same_spec() {
        let text = r#"{"scheme": "NMR_DOUBLE", "omega": 3.0, "gamma": 0.004, "kappa": 0.01, "theta0": 1.0}"#;
        let r = ExperimentConfig::from_json(text)
            .unwrap()
            .resolve(Path::new("."))
            .unwrap();
        let json = serde_json::to_string(&r.echo).unwrap();
        let again = ExperimentConfig::from_json(&json)
            .unwrap()
            .resolve(Path::new("."))
            .unwrap();
        assert_eq!(again.spec, r.spec);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"scheme": "NMR_DOUBLE", "kappa": 0.0, "theta0": 1.0, "kapa": 1}"#;
        let e = ExperimentConfig::from_json(text).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("kapa"));
    }

    #[test]
    fn negative_kappa_names_the_field() {
        let text = r#"{"scheme": "NMR_DOUBLE", "kappa": -1, "theta0": 1.0}"#;
        let e = ExperimentConfig::from_json(text)
            .unwrap()
            .resolve(Path::new("."))
            .unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("`kappa`"), "{e}");
    }

    #[test]
    fn empty_grid_is_invalid() {
        let text = r#"{"scheme": "SINGLE", "model": "LAMBDA_FIRST", "kappa": 0.0, "theta0": 1.0,
                       "grid": {"kappa_over_gamma": [], "kappa_over_omega": [0.01]}}"#;
        let e = ExperimentConfig::from_json(text)
            .unwrap()
            .resolve(Path::new("."))
            .unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
