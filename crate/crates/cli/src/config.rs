//! Scenario files.
//!
//! A scenario file is JSON with a `schema` field equal to [`SCHEMA`]. Unknown
//! keys anywhere in the document are rejected.
//!
//! ```json
//! {
//!   "schema": "matflow.scenario/1",
//!   "name": "heat-gaussian",
//!   "seed": 7,
//!   "output": "runs/heat",
//!   "scenario": { "grid": {...}, "coefficients": {...}, "flow": {...}, "tau": 1.0, "samples": 65 },
//!   "checks": [ { "check": "t_inequality", "tolerance": 1e-4 }, { "check": "turnpike" } ]
//! }
//! ```

use crate::{CliError, CliResult};
use matflow_core::flows::{DensitySpec, FlowScenario, FlowSpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA: &str = "matflow.scenario/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: String,
    pub name: String,
    pub scenario: FlowScenario,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    /// Seed for random directions; the library default when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Output directory; `runs/<name>` when absent.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// One requested checker. Series checkers default to the tolerance derived
/// from the series' step size and resolution certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    TInequality {
        #[serde(default)]
        tolerance: Option<f64>,
    },
    SInequality {
        #[serde(default)]
        tolerance: Option<f64>,
    },
    EntropyGrowth {
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Turnpike {
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Energy {
        #[serde(default)]
        tolerance: Option<f64>,
    },
    MatrixEnergy {
        #[serde(default)]
        tolerance: Option<f64>,
    },
    CostIdentity {
        #[serde(default)]
        tolerance: Option<f64>,
    },
    CostInequality {
        #[serde(default)]
        tolerance: Option<f64>,
    },
    TimeSymmetry {
        #[serde(default)]
        tolerance: Option<f64>,
    },
    /// Horizon sweep on the scenario's bridge marginals.
    Longtime { taus: Vec<f64>, tolerance: f64 },
    /// Evolution variational inequality on the scenario's bridge marginals.
    Evi {
        times: Vec<f64>,
        fd_step: f64,
        tolerance: f64,
    },
    /// Entropy-cost contraction on the scenario's bridge marginals.
    Contraction {
        tau_heat: f64,
        n_steps: usize,
        tolerance: f64,
    },
}

impl CheckSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CheckSpec::TInequality { .. } => "t_inequality",
            CheckSpec::SInequality { .. } => "s_inequality",
            CheckSpec::EntropyGrowth { .. } => "entropy_growth",
            CheckSpec::Turnpike { .. } => "turnpike",
            CheckSpec::Energy { .. } => "energy",
            CheckSpec::MatrixEnergy { .. } => "matrix_energy",
            CheckSpec::CostIdentity { .. } => "cost_identity",
            CheckSpec::CostInequality { .. } => "cost_inequality",
            CheckSpec::TimeSymmetry { .. } => "time_symmetry",
            CheckSpec::Longtime { .. } => "longtime",
            CheckSpec::Evi { .. } => "evi",
            CheckSpec::Contraction { .. } => "contraction",
        }
    }

    /// Checkers that build their own bridges between the scenario marginals.
    pub fn needs_marginals(&self) -> bool {
        matches!(
            self,
            CheckSpec::Longtime { .. } | CheckSpec::Evi { .. } | CheckSpec::Contraction { .. }
        )
    }

    fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(format!("check {}: {msg}", self.name())));
        let tol_ok = |t: f64| t >= 0.0 && t.is_finite();
        match self {
            CheckSpec::Longtime { taus, tolerance } => {
                if taus.is_empty() || taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                    return bad("taus must be a non-empty list of positive horizons".into());
                }
                if !tol_ok(*tolerance) {
                    return bad(format!("invalid tolerance {tolerance}"));
                }
            }
            CheckSpec::Evi {
                times,
                fd_step,
                tolerance,
            } => {
                if times.is_empty() || times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
                    return bad("times must be a non-empty list of non-negative times".into());
                }
                if !(*fd_step > 0.0 && fd_step.is_finite()) {
                    return bad(format!("fd_step must be positive, got {fd_step}"));
                }
                if !tol_ok(*tolerance) {
                    return bad(format!("invalid tolerance {tolerance}"));
                }
            }
            CheckSpec::Contraction {
                tau_heat,
                n_steps,
                tolerance,
            } => {
                if !(*tau_heat >= 0.0 && tau_heat.is_finite()) || *n_steps == 0 {
                    return bad("tau_heat must be >= 0 and n_steps >= 1".into());
                }
                if !tol_ok(*tolerance) {
                    return bad(format!("invalid tolerance {tolerance}"));
                }
            }
            CheckSpec::TInequality { tolerance }
            | CheckSpec::SInequality { tolerance }
            | CheckSpec::EntropyGrowth { tolerance }
            | CheckSpec::Turnpike { tolerance }
            | CheckSpec::Energy { tolerance }
            | CheckSpec::MatrixEnergy { tolerance }
            | CheckSpec::CostIdentity { tolerance }
            | CheckSpec::CostInequality { tolerance }
            | CheckSpec::TimeSymmetry { tolerance } => {
                if let Some(t) = tolerance {
                    if !tol_ok(*t) {
                        return bad(format!("invalid tolerance {t}"));
                    }
                }
            }
        }
        Ok(())
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> CliResult<ScenarioFile> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> CliResult<ScenarioFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        ScenarioFile::parse(&text)
    }

    /// Schema, name, checker parameters and everything the flow constructor
    /// can check without running.
    pub fn validate(&self) -> CliResult<()> {
        if self.schema != SCHEMA {
            return Err(CliError::Config(format!(
                "unsupported schema {:?} (expected {SCHEMA:?})",
                self.schema
            )));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!("invalid scenario name {:?}", self.name)));
        }
        self.scenario.validate().map_err(CliError::Invalid)?;
        for c in &self.checks {
            c.validate()?;
            if c.needs_marginals() && self.marginals().is_none() {
                return Err(CliError::Config(format!(
                    "check {} needs a bridge scenario to take its marginals from",
                    c.name()
                )));
            }
        }
        Ok(())
    }

    /// `(μ_a, μ_z)` when the flow is a bridge.
    pub fn marginals(&self) -> Option<(&DensitySpec, &DensitySpec)> {
        match &self.scenario.flow {
            FlowSpec::Bridge { mu_a, mu_z, .. } => Some((mu_a, mu_z)),
            _ => None,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAT: &str = r#"{
        "schema": "matflow.scenario/1",
        "name": "heat",
        "scenario": {
            "grid": {"extent": [20.0], "points": [64]},
            "coefficients": {"sigma": 1.0},
            "flow": {"kind": "heat", "rho0": {"kind": "gaussian", "mean": [0.0], "cov": [[1.0]]}},
            "tau": 1.0,
            "samples": 9
        },
        "checks": [{"check": "t_inequality", "tolerance": 1e-4}, {"check": "turnpike"}]
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let f = ScenarioFile::parse(HEAT).unwrap();
        assert_eq!(f.checks.len(), 2);
        assert_eq!(f.output_dir(), PathBuf::from("runs/heat"));
        let back = ScenarioFile::parse(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn unknown_keys_and_schema_are_rejected() {
        let typo = HEAT.replace("\"tolerance\": 1e-4", "\"tolerence\": 1e-4");
        assert!(matches!(ScenarioFile::parse(&typo), Err(CliError::Config(_))));
        let schema = HEAT.replace("matflow.scenario/1", "matflow.scenario/9");
        assert!(matches!(ScenarioFile::parse(&schema), Err(CliError::Config(_))));
    }

    #[test]
    fn bridge_checks_need_marginals() {
        let text = HEAT.replace(
            r#"{"check": "turnpike"}"#,
            r#"{"check": "longtime", "taus": [1.0, 2.0], "tolerance": 1e-4}"#,
        );
        let err = ScenarioFile::parse(&text).unwrap_err();
        assert!(err.to_string().contains("bridge"), "{err}");
    }
}
