//! Config file format.
//!
//! A TOML file with an optional `[run]` section and one section per
//! experiment. Values are resolved in this order, later entries winning:
//! built-in defaults, `ROBUST_AM_PARALLELISM` (parallelism only), the config
//! file, command-line flags.

use std::path::{Path, PathBuf};

use robust_phase::harness::{ConvergenceSpec, ImageExperimentSpec, InitSpec, PhaseGridSpec, RuntimeSpec};
use robust_phase::measurement::ValueModel;
use robust_phase::robust_am::RobustAmConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const PARALLELISM_ENV: &str = "ROBUST_AM_PARALLELISM";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorChoice {
    Gaussian,
    /// `k` random-sign Hadamard blocks; `d` must be a power of two and `m = k d`.
    Hadamard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSpec {
    pub d: usize,
    /// Ignored for the Hadamard operator.
    pub m: usize,
    pub k: usize,
    pub operator: OperatorChoice,
    pub eta: f64,
    pub value_model: ValueModel,
    pub init: InitSpec,
    pub solver: RobustAmConfig,
    pub master_seed: u64,
}

impl Default for SolveSpec {
    fn default() -> Self {
        Self {
            d: 200,
            m: 2000,
            k: 8,
            operator: OperatorChoice::Gaussian,
            eta: 0.3,
            value_model: ValueModel::Zero,
            init: InitSpec::default(),
            solver: RobustAmConfig::default(),
            master_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySpec {
    pub etas: Vec<f64>,
}

impl Default for TheorySpec {
    fn default() -> Self {
        Self {
            etas: parse_list("0:0.25:0.01").unwrap_or_default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub run: RunSection,
    pub solve: SolveSpec,
    pub phase_grid: PhaseGridSpec,
    pub convergence: ConvergenceSpec,
    pub runtime: RuntimeSpec,
    pub image: ImageExperimentSpec,
    pub theory: TheorySpec,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Parses `a:b:s` (inclusive range with step `s`) or a comma-separated list.
pub fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("bad number {s:?}: {e}"));
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [a, b, s] => {
            let (a, b, s) = (num(a)?, num(b)?, num(s)?);
            if !(s > 0.0) || b < a {
                return Err(format!("range {text:?} needs start <= stop and a positive step"));
            }
            let n = ((b - a) / s + 1e-9).floor() as usize + 1;
            // round to the step's precision so 0.1 + 0.2 prints as 0.3
            Ok((0..n).map(|i| round_to(a + i as f64 * s, 12)).collect())
        }
        [_] => text.split(',').map(num).collect(),
        _ => Err(format!("expected a:b:s or a comma-separated list, got {text:?}")),
    }
}

fn round_to(x: f64, digits: i32) -> f64 {
    let p = 10f64.powi(digits);
    (x * p).round() / p
}

pub fn parse_usize_list(text: &str) -> Result<Vec<usize>, String> {
    parse_list(text)?
        .into_iter()
        .map(|v| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(format!("expected positive integers, got {v}"))
            }
        })
        .collect()
}

/// Parallelism from the environment, else the machine's core count.
pub fn default_parallelism() -> Result<usize, CliError> {
    match std::env::var(PARALLELISM_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("{PARALLELISM_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}
