use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{tag, InitSpec};
use crate::error::{Error, Result};
use crate::inner::{InnerSolverConfig, InnerSolverKind, PreparedSolver};
use crate::measurement::{gaussian_ensemble, gaussian_signal, synthesize_instance, OutlierSpec, ValueModel};
use crate::rng::{derive_seed, role};
use crate::robust_am::{robust_am_prepared, IterateTrace, RobustAmConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeSpec {
    pub d: usize,
    pub m: usize,
    pub eta: f64,
    pub value_models: Vec<ValueModel>,
    pub solvers: Vec<InnerSolverConfig>,
    pub n_trials: usize,
    /// Target `dist(x_k, x⋆)`.
    pub tol: f64,
    /// Outer-loop settings; `inner` is replaced by each entry of `solvers`.
    pub outer: RobustAmConfig,
    pub init: InitSpec,
    pub master_seed: u64,
}

impl Default for RuntimeSpec {
    fn default() -> Self {
        Self {
            d: 1000,
            m: 10000,
            eta: 0.3,
            value_models: vec![ValueModel::Zero, ValueModel::cauchy(), ValueModel::uniform_scaled()],
            solvers: InnerSolverKind::ALL.iter().map(|k| k.default_config()).collect(),
            n_trials: 1,
            tol: 1e-5,
            outer: RobustAmConfig {
                max_outer: 50,
                ..RobustAmConfig::default()
            },
            init: InitSpec::default(),
            master_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub solver: String,
    pub value_model: String,
    pub trial: usize,
    pub cache_build_s: f64,
    /// Seconds from the start of the outer loop, excluding the cache build.
    pub time_to_tol_s: Option<f64>,
    pub outer_iters: usize,
    pub trace: Option<IterateTrace>,
    pub error: Option<String>,
}

/// Wall-clock comparison of the inner solvers on shared instances. Runs
/// sequentially so that timings do not compete for cores.
pub fn run_runtime_comparison(spec: &RuntimeSpec) -> Result<Vec<RuntimeRow>> {
    if spec.d == 0 || spec.m == 0 || spec.n_trials == 0 || spec.solvers.is_empty() || spec.value_models.is_empty() {
        return Err(Error::InvalidParameter(
            "runtime comparison needs positive sizes, solvers and models".into(),
        ));
    }
    if !(spec.tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    spec.init.validate()?;
    let mut rows = Vec::new();
    for (mi, model) in spec.value_models.iter().enumerate() {
        for t in 0..spec.n_trials {
            let seed = |r: u64| derive_seed(spec.master_seed, &[tag::RUNTIME, mi as u64, t as u64, r]);
            let op = Arc::new(gaussian_ensemble(spec.d, spec.m, seed(role::OPERATOR))?);
            let x_star = gaussian_signal(spec.d, seed(role::SIGNAL));
            let inst = synthesize_instance(op, x_star, &OutlierSpec::new(spec.eta, *model), seed(role::SUPPORT))?;
            let x0 = spec.init.initial_point(&inst, seed(role::INIT))?;
            for solver_cfg in &spec.solvers {
                let cfg = RobustAmConfig {
                    inner: solver_cfg.clone(),
                    dist_tol: Some(spec.tol),
                    record_trace: true,
                    ..spec.outer.clone()
                };
                let mut row = RuntimeRow {
                    solver: solver_cfg.kind().name().to_string(),
                    value_model: model.name().to_string(),
                    trial: t,
                    cache_build_s: 0.0,
                    time_to_tol_s: None,
                    outer_iters: 0,
                    trace: None,
                    error: None,
                };
                let outcome = PreparedSolver::prepare(&inst.operator, solver_cfg).and_then(|solver| {
                    row.cache_build_s = solver.build_seconds();
                    robust_am_prepared(&inst, &x0, &cfg, &solver)
                });
                match outcome {
                    Ok(res) => {
                        let trace = res.trace.unwrap_or_default();
                        row.time_to_tol_s = trace
                            .rows
                            .iter()
                            .find(|r| r.dist.is_some_and(|d| d <= spec.tol))
                            .map(|r| r.wall_time_s);
                        row.outer_iters = res.outer_iterations;
                        row.trace = Some(trace);
                    }
                    Err(e @ Error::CapExceeded { .. }) => {
                        log::warn!("{} skipped: O(m^3) factorization flagged ({e})", row.solver);
                        row.error = Some(e.to_string());
                    }
                    Err(e) => {
                        log::warn!("{} on {} trial {t} failed: {e}", row.solver, row.value_model);
                        row.error = Some(e.to_string());
                    }
                }
                log::info!(
                    "{} / {} trial {t}: build {:.3}s, time to tol {:?}, {} outer",
                    row.solver,
                    row.value_model,
                    row.cache_build_s,
                    row.time_to_tol_s,
                    row.outer_iters
                );
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// CSV with header `solver,value_model,trial,cache_build_s,time_to_tol_s,outer_iters`.
/// Without `with_timing` both timing columns are left empty.
pub fn write_runtime_csv<W: Write>(rows: &[RuntimeRow], w: &mut W, with_timing: bool) -> std::io::Result<()> {
    writeln!(w, "solver,value_model,trial,cache_build_s,time_to_tol_s,outer_iters")?;
    for r in rows {
        let (build, tol) = if with_timing {
            (
                format!("{:.6}", r.cache_build_s),
                r.time_to_tol_s.map(|t| format!("{t:.6}")).unwrap_or_default(),
            )
        } else {
            (String::new(), String::new())
        };
        writeln!(
            w,
            "{},{},{},{build},{tol},{}",
            r.solver, r.value_model, r.trial, r.outer_iters
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner::{AdmmConfig, LpCacheOptions, LpFactorization};

    #[test]
    fn small_comparison_reaches_tolerance() {
        let spec = RuntimeSpec {
            d: 10,
            m: 120,
            eta: 0.1,
            value_models: vec![ValueModel::Zero],
            n_trials: 1,
            ..RuntimeSpec::default()
        };
        let rows = run_runtime_comparison(&spec).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert!(r.error.is_none(), "{:?}", r.error);
        }
        assert!(rows[0].time_to_tol_s.is_some() && rows[1].time_to_tol_s.is_some());
        let mut out = Vec::new();
        write_runtime_csv(&rows, &mut out, false).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("admm_lad,zero,0,,,"));
    }

    #[test]
    fn dense_lp_over_cap_is_flagged() {
        let spec = RuntimeSpec {
            d: 4,
            m: 40,
            eta: 0.0,
            value_models: vec![ValueModel::Zero],
            solvers: vec![InnerSolverConfig::AdmmLp {
                admm: AdmmConfig::default(),
                lp: LpCacheOptions {
                    factorization: LpFactorization::Dense,
                    max_dense_m: 10,
                },
            }],
            ..RuntimeSpec::default()
        };
        let rows = run_runtime_comparison(&spec).unwrap();
        assert!(rows[0].error.as_ref().unwrap().contains("cap"));
        assert!(rows[0].time_to_tol_s.is_none());
    }

    #[test]
    fn lad_admm_is_fastest_to_tolerance() {
        let spec = RuntimeSpec {
            d: 100,
            m: 1000,
            eta: 0.2,
            value_models: vec![ValueModel::Zero],
            n_trials: 1,
            master_seed: 3,
            ..Default::default()
        };
        let rows = run_runtime_comparison(&spec).unwrap();
        let total = |kind: InnerSolverKind| {
            let row = rows.iter().find(|r| r.solver == kind.name()).unwrap();
            row.cache_build_s + row.time_to_tol_s.unwrap_or(f64::INFINITY)
        };
        let lad = total(InnerSolverKind::AdmmLad);
        assert!(lad.is_finite());
        assert!(lad <= total(InnerSolverKind::AdmmLp));
        assert!(lad <= total(InnerSolverKind::Subgradient));
    }
}
