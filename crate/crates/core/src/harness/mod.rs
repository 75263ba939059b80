//! Monte-Carlo experiment protocols and result export.
//!
//! Every trial draws its randomness from [`crate::rng::stream`] with a path
//! built from the master seed and the trial's indices, and results are
//! collected in trial order. Output therefore does not depend on the number
//! of worker threads.

mod convergence;
mod grid;
mod images;
mod plot;
mod runtime;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::ProblemInstance;
use crate::robust_am::{oracle_init, spectral_init, SpectralConfig};

pub use self::convergence::{median_trace, run_convergence, ConvergenceResult, ConvergenceSpec, ConvergenceTrial};
pub use self::grid::{all_signals_rate, run_phase_grid, PhaseCell, PhaseGrid, PhaseGridSpec};
pub use self::images::{load_image_dir, run_image_experiment, ImageExperimentResult, ImageExperimentSpec};
pub use self::plot::{export_svg, heatmap_svg, trace_svg, PlotKind, Series, SEMILOG_FLOOR};
pub use self::runtime::{run_runtime_comparison, write_runtime_csv, RuntimeRow, RuntimeSpec};

/// Experiment tags used as the first element of trial seed paths.
pub(crate) mod tag {
    pub const GRID: u64 = 11;
    pub const CONVERGENCE: u64 = 12;
    pub const RUNTIME: u64 = 13;
    pub const IMAGES: u64 = 14;
}

/// How the starting point of each run is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum InitSpec {
    /// Truncated spectral initializer; its seed is replaced per trial.
    Spectral(SpectralConfig),
    /// `x⋆ + r‖x⋆‖u` for a random unit `u`.
    Oracle { radius_fraction: f64 },
}

impl Default for InitSpec {
    fn default() -> Self {
        Self::Spectral(SpectralConfig::default())
    }
}

impl InitSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Spectral(c) if c.power_iters == 0 || !(c.truncation > 0.0) => Err(Error::InvalidParameter(
                "spectral init needs positive truncation and iterations".into(),
            )),
            Self::Oracle { radius_fraction } if !(*radius_fraction > 0.0 && *radius_fraction < 1.0) => Err(
                Error::InvalidParameter(format!("radius fraction {radius_fraction} outside (0, 1)")),
            ),
            _ => Ok(()),
        }
    }

    pub fn initial_point(&self, inst: &ProblemInstance, seed: u64) -> Result<DVector<f64>> {
        match self {
            Self::Spectral(c) => {
                let cfg = SpectralConfig { seed, ..c.clone() };
                Ok(spectral_init(&inst.operator, &inst.b, &cfg)?.x0)
            }
            Self::Oracle { radius_fraction } => oracle_init(&inst.x_star, *radius_fraction, seed),
        }
    }
}

/// Maps `f` over `0..n` on a pool of `parallelism` threads, keeping index order.
pub fn run_indexed<T, F>(parallelism: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if parallelism == 0 {
        return Err(Error::InvalidParameter("parallelism must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

/// Median of a nonempty slice.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Reproducibility record written next to every experiment's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub software_version: String,
    pub master_seed: u64,
    pub parallelism: usize,
    pub config: serde_json::Value,
    pub started_at: String,
    pub finished_at: String,
}

impl Manifest {
    pub fn new<C: Serialize>(experiment: &str, config: &C, master_seed: u64, parallelism: usize) -> Result<Self> {
        Ok(Self {
            experiment: experiment.to_string(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            parallelism,
            config: serde_json::to_value(config).map_err(|e| Error::Format(e.to_string()))?,
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: String::new(),
        })
    }

    pub fn finish(&mut self) {
        self.finished_at = chrono::Utc::now().to_rfc3339();
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}
