use serde::{Deserialize, Serialize};

use super::{
    build_lp_cache, build_ls_cache, solve_lad_admm, solve_lad_lp_admm, solve_lad_subgradient, AdmmConfig, LadSolution,
    LpCache, LpCacheOptions, LsCache, RsgConfig, SignedLadProblem,
};
use crate::error::{Error, Result};
use crate::measurement::MeasurementOperator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolverKind {
    AdmmLad,
    AdmmLp,
    Subgradient,
}

impl InnerSolverKind {
    pub const ALL: [InnerSolverKind; 3] = [Self::AdmmLad, Self::AdmmLp, Self::Subgradient];

    pub fn name(self) -> &'static str {
        match self {
            Self::AdmmLad => "admm_lad",
            Self::AdmmLp => "admm_lp",
            Self::Subgradient => "subgradient",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Solver with default parameters.
    pub fn default_config(self) -> InnerSolverConfig {
        match self {
            Self::AdmmLad => InnerSolverConfig::AdmmLad(AdmmConfig::default()),
            Self::AdmmLp => InnerSolverConfig::AdmmLp {
                admm: AdmmConfig::default(),
                lp: LpCacheOptions::default(),
            },
            Self::Subgradient => InnerSolverConfig::Subgradient(RsgConfig::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "snake_case")]
pub enum InnerSolverConfig {
    AdmmLad(AdmmConfig),
    AdmmLp { admm: AdmmConfig, lp: LpCacheOptions },
    Subgradient(RsgConfig),
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        InnerSolverKind::AdmmLad.default_config()
    }
}

impl InnerSolverConfig {
    pub fn kind(&self) -> InnerSolverKind {
        match self {
            Self::AdmmLad(_) => InnerSolverKind::AdmmLad,
            Self::AdmmLp { .. } => InnerSolverKind::AdmmLp,
            Self::Subgradient(_) => InnerSolverKind::Subgradient,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::AdmmLad(c) | Self::AdmmLp { admm: c, .. } => c.validate(),
            Self::Subgradient(c) => c.validate(),
        }
    }

    pub fn set_record_trace(&mut self, on: bool) {
        match self {
            Self::AdmmLad(c) | Self::AdmmLp { admm: c, .. } => c.record_trace = on,
            Self::Subgradient(c) => c.record_trace = on,
        }
    }
}

#[derive(Clone, Debug)]
enum Cache {
    Ls(LsCache),
    Lp(LpCache),
    None,
}

/// An inner solver bound to one operator, with its cache built once.
#[derive(Clone, Debug)]
pub struct PreparedSolver {
    config: InnerSolverConfig,
    cache: Cache,
    fingerprint: u64,
    build_seconds: f64,
}

impl PreparedSolver {
    pub fn prepare(op: &MeasurementOperator, config: &InnerSolverConfig) -> Result<Self> {
        config.validate()?;
        let start = std::time::Instant::now();
        let cache = match config {
            InnerSolverConfig::AdmmLad(_) => Cache::Ls(build_ls_cache(op)?),
            InnerSolverConfig::AdmmLp { lp, .. } => Cache::Lp(build_lp_cache(op, lp)?),
            InnerSolverConfig::Subgradient(_) => Cache::None,
        };
        Ok(Self {
            config: config.clone(),
            cache,
            fingerprint: op.fingerprint(),
            build_seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn config(&self) -> &InnerSolverConfig {
        &self.config
    }

    pub fn kind(&self) -> InnerSolverKind {
        self.config.kind()
    }

    /// Wall time spent building the cache.
    pub fn build_seconds(&self) -> f64 {
        self.build_seconds
    }

    /// Whether a factorization was built (always false for the subgradient method).
    pub fn has_cache(&self) -> bool {
        !matches!(self.cache, Cache::None)
    }

    pub fn matches(&self, op: &MeasurementOperator) -> bool {
        op.fingerprint() == self.fingerprint
    }

    pub fn solve(&self, problem: &SignedLadProblem<'_>) -> Result<LadSolution> {
        match (&self.config, &self.cache) {
            (InnerSolverConfig::AdmmLad(cfg), Cache::Ls(cache)) => solve_lad_admm(problem, cache, cfg),
            (InnerSolverConfig::AdmmLp { admm, .. }, Cache::Lp(cache)) => solve_lad_lp_admm(problem, cache, admm),
            (InnerSolverConfig::Subgradient(cfg), Cache::None) => {
                if !self.matches(problem.operator) {
                    return Err(Error::CacheMismatch);
                }
                solve_lad_subgradient(problem, cfg)
            }
            _ => unreachable!("cache variant follows the config"),
        }
    }
}
