use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{median, run_indexed, tag, InitSpec};
use crate::error::{Error, Result};
use crate::measurement::{gaussian_ensemble, gaussian_signal, synthesize_instance, OutlierSpec, ValueModel};
use crate::rng::{derive_seed, role};
use crate::robust_am::{robust_am, IterateTrace, RecoveryStatus, RobustAmConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceSpec {
    pub d: usize,
    pub m: usize,
    pub eta: f64,
    pub value_model: ValueModel,
    pub n_trials: usize,
    pub solver: RobustAmConfig,
    pub init: InitSpec,
    pub master_seed: u64,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self {
            d: 200,
            m: 1500,
            eta: 0.1,
            value_model: ValueModel::Zero,
            n_trials: 10,
            solver: RobustAmConfig::default(),
            init: InitSpec::default(),
            master_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrial {
    pub trial: usize,
    pub trace: Option<IterateTrace>,
    pub status: Option<RecoveryStatus>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub trials: Vec<ConvergenceTrial>,
    /// `(k, median dist)`; a finished trial keeps contributing its last value.
    pub median: Vec<(usize, f64)>,
}

impl ConvergenceResult {
    pub fn failures(&self) -> usize {
        self.trials.iter().filter(|t| t.error.is_some()).count()
    }

    /// First `k` with median dist at or below `tol`.
    pub fn iterations_to(&self, tol: f64) -> Option<usize> {
        self.median.iter().find(|(_, d)| *d <= tol).map(|(k, _)| *k)
    }

    /// CSV with header `k,median_dist`.
    pub fn write_median_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "k,median_dist")?;
        for (k, d) in &self.median {
            writeln!(w, "{k},{d:e}")?;
        }
        Ok(())
    }

    /// All trial traces stacked, with header `trial,k,dist,objective,inner_iters`.
    pub fn write_trials_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "trial,k,dist,objective,inner_iters")?;
        for t in &self.trials {
            let Some(trace) = &t.trace else { continue };
            if let Some(d0) = trace.initial_dist {
                writeln!(w, "{},0,{d0:e},{:e},0", t.trial, trace.initial_objective)?;
            }
            for r in &trace.rows {
                let dist = r.dist.map(|d| format!("{d:e}")).unwrap_or_default();
                writeln!(w, "{},{},{},{:e},{}", t.trial, r.k, dist, r.objective, r.inner_iters)?;
            }
        }
        Ok(())
    }
}

/// Per-iteration median of dist over traces, carrying finished traces forward.
pub fn median_trace(traces: &[&IterateTrace]) -> Vec<(usize, f64)> {
    let series: Vec<Vec<(usize, f64)>> = traces
        .iter()
        .map(|t| t.dist_series())
        .filter(|s| !s.is_empty())
        .collect();
    let len = series.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|k| {
            let mut vals: Vec<f64> = series.iter().map(|s| s[k.min(s.len() - 1)].1).collect();
            (k, median(&mut vals))
        })
        .collect()
}

/// Independent Gaussian instances, each with its own operator and recorded trace.
pub fn run_convergence(spec: &ConvergenceSpec, parallelism: usize) -> Result<ConvergenceResult> {
    if spec.d == 0 || spec.m == 0 || spec.n_trials == 0 {
        return Err(Error::InvalidParameter("d, m and n_trials must be positive".into()));
    }
    spec.solver.validate()?;
    spec.init.validate()?;
    let cfg = RobustAmConfig {
        record_trace: true,
        ..spec.solver.clone()
    };
    let trials = run_indexed(parallelism, spec.n_trials, |t| {
        let seed = |r: u64| derive_seed(spec.master_seed, &[tag::CONVERGENCE, t as u64, r]);
        let run = || -> Result<_> {
            let op = Arc::new(gaussian_ensemble(spec.d, spec.m, seed(role::OPERATOR))?);
            let x_star = gaussian_signal(spec.d, seed(role::SIGNAL));
            let outliers = OutlierSpec::new(spec.eta, spec.value_model);
            let inst = synthesize_instance(op, x_star, &outliers, seed(role::SUPPORT))?;
            let x0 = spec.init.initial_point(&inst, seed(role::INIT))?;
            robust_am(&inst, &x0, &cfg)
        };
        match run() {
            Ok(res) => ConvergenceTrial {
                trial: t,
                trace: res.trace,
                status: Some(res.status),
                error: None,
            },
            Err(e) => {
                log::warn!("convergence trial {t} failed: {e}");
                ConvergenceTrial {
                    trial: t,
                    trace: None,
                    status: None,
                    error: Some(e.to_string()),
                }
            }
        }
    })?;
    let traces: Vec<&IterateTrace> = trials.iter().filter_map(|t| t.trace.as_ref()).collect();
    let median = median_trace(&traces);
    Ok(ConvergenceResult { trials, median })
}
