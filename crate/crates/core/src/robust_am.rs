//! The Robust-AM outer loop.
//!
//! Each outer step freezes the signs of the current iterate and solves the
//! resulting LAD regression:
//!
//! ```text
//! x_{k+1} ∈ argmin_x Σ_i |⟨a_i, x⟩ − sign(⟨a_i, x_k⟩) b_i|
//! ```
//!
//! This equals alternating minimization for the LAD phase-retrieval
//! objective `ℓ(x) = (1/m) Σ_i ||⟨a_i, x⟩| − b_i|` only when measurements
//! whose sign disagrees are dropped; here every measurement is kept.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::inner::{sign, InnerSolverConfig, PreparedSolver, SignedLadProblem};
use crate::measurement::{MeasurementOperator, ProblemInstance};
use crate::rng::{role, stream};

/// `min(‖x − y‖₂, ‖x + y‖₂)`.
pub fn dist(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    assert_eq!(x.len(), y.len(), "dist needs equal lengths");
    let (mut minus, mut plus) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y.iter()) {
        minus += (a - b) * (a - b);
        plus += (a + b) * (a + b);
    }
    minus.min(plus).sqrt()
}

/// `c_i = sign(⟨a_i, x_k⟩) b_i` with `sign(0) = +1`.
pub fn signed_targets(op: &MeasurementOperator, b: &DVector<f64>, xk: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("measurements", op.rows(), b.len())?;
    let ax = op.apply(xk)?;
    Ok(DVector::from_fn(b.len(), |i, _| sign(ax[i]) * b[i]))
}

/// `ℓ(x) = (1/m) Σ_i ||⟨a_i, x⟩| − b_i|`.
pub fn amplitude_objective(op: &MeasurementOperator, b: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    check_len("measurements", op.rows(), b.len())?;
    let ax = op.apply(x)?;
    Ok(ax.iter().zip(b.iter()).map(|(a, b)| (a.abs() - b).abs()).sum::<f64>() / b.len() as f64)
}

/// Absolute tolerance `ε_k` handed to the inner solver at outer step `k`,
/// expressed per measurement row (the solver receives `m · value`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum InnerTolerance {
    Fixed {
        per_row: f64,
    },
    /// `max(floor, start · ratio^k)`.
    Geometric {
        start: f64,
        ratio: f64,
        floor: f64,
    },
}

impl Default for InnerTolerance {
    fn default() -> Self {
        Self::Fixed { per_row: 1e-8 }
    }
}

impl InnerTolerance {
    pub fn at(&self, k: usize, m: usize) -> f64 {
        let per_row = match *self {
            Self::Fixed { per_row } => per_row,
            Self::Geometric { start, ratio, floor } => (start * ratio.powi(k as i32)).max(floor),
        };
        per_row * m as f64
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Fixed { per_row } => per_row > 0.0,
            Self::Geometric { start, ratio, floor } => start > 0.0 && floor > 0.0 && ratio > 0.0 && ratio <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("inner tolerance must be positive".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustAmConfig {
    pub inner: InnerSolverConfig,
    pub inner_tol: InnerTolerance,
    pub max_outer: usize,
    /// Success once `dist(x_k, x⋆) ≤ dist_tol`. Needs the ground truth.
    pub dist_tol: Option<f64>,
    /// Success once `‖x_{k+1} − x_k‖ ≤ change_tol ‖x_k‖`.
    pub change_tol: f64,
    /// Consecutive outer steps with an unchanged sign pattern before giving up.
    pub stall_patience: usize,
    pub record_trace: bool,
}

impl Default for RobustAmConfig {
    fn default() -> Self {
        Self {
            inner: InnerSolverConfig::default(),
            inner_tol: InnerTolerance::default(),
            max_outer: 100,
            dist_tol: None,
            change_tol: 1e-10,
            stall_patience: 3,
            record_trace: false,
        }
    }
}

impl RobustAmConfig {
    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        self.inner_tol.validate()?;
        if self.max_outer == 0 || self.stall_patience == 0 {
            return Err(Error::InvalidParameter(
                "max_outer and stall_patience must be at least 1".into(),
            ));
        }
        if !(self.change_tol > 0.0) || self.dist_tol.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::InvalidParameter("stopping tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub dist: Option<f64>,
    /// `ℓ(x_k)`.
    pub objective: f64,
    pub inner_iters: usize,
    /// Seconds since the start of the run.
    pub wall_time_s: f64,
}

/// Per-outer-iteration record. Rows start at `k = 1`; the starting point
/// is kept separately.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterateTrace {
    pub initial_dist: Option<f64>,
    pub initial_objective: f64,
    pub rows: Vec<TraceRow>,
}

impl IterateTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `(k, dist)` pairs including `k = 0`, when the ground truth is known.
    pub fn dist_series(&self) -> Vec<(usize, f64)> {
        self.initial_dist
            .map(|d| (0, d))
            .into_iter()
            .chain(self.rows.iter().filter_map(|r| r.dist.map(|d| (r.k, d))))
            .collect()
    }

    /// CSV with header `k,dist,objective,inner_iters,wall_time_s`; an unknown
    /// distance is left empty.
    pub fn write_csv<W: Write>(&self, w: &mut W, with_wall_time: bool) -> std::io::Result<()> {
        writeln!(w, "k,dist,objective,inner_iters,wall_time_s")?;
        for r in &self.rows {
            let dist = r.dist.map(|d| format!("{d:e}")).unwrap_or_default();
            let wall = if with_wall_time {
                format!("{:.6}", r.wall_time_s)
            } else {
                String::new()
            };
            writeln!(w, "{},{},{:e},{},{}", r.k, dist, r.objective, r.inner_iters, wall)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryStatus {
    Success,
    MaxOuter,
    /// The sign pattern stopped changing before a success criterion fired.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct RecoveryResult {
    pub x_hat: DVector<f64>,
    pub outer_iterations: usize,
    pub status: RecoveryStatus,
    pub trace: Option<IterateTrace>,
    pub total_inner_iterations: usize,
    /// Factorizations built during this run.
    pub cache_builds: usize,
}

/// Runs Robust-AM on an instance, building the inner-solver cache once.
pub fn robust_am(instance: &ProblemInstance, x0: &DVector<f64>, cfg: &RobustAmConfig) -> Result<RecoveryResult> {
    cfg.validate()?;
    let solver = PreparedSolver::prepare(&instance.operator, &cfg.inner)?;
    let mut res = robust_am_prepared(instance, x0, cfg, &solver)?;
    res.cache_builds = usize::from(solver.has_cache());
    Ok(res)
}

/// Runs Robust-AM with a solver prepared for `instance.operator`.
/// The solver's own config overrides `cfg.inner`.
pub fn robust_am_prepared(
    instance: &ProblemInstance,
    x0: &DVector<f64>,
    cfg: &RobustAmConfig,
    solver: &PreparedSolver,
) -> Result<RecoveryResult> {
    recover(&instance.operator, &instance.b, Some(&instance.x_star), x0, cfg, solver)
}

/// Robust-AM from measurements `b`; `x_star` enables the distance stop and
/// distance tracing.
pub fn recover(
    op: &MeasurementOperator,
    b: &DVector<f64>,
    x_star: Option<&DVector<f64>>,
    x0: &DVector<f64>,
    cfg: &RobustAmConfig,
    solver: &PreparedSolver,
) -> Result<RecoveryResult> {
    cfg.validate()?;
    check_len("measurements", op.rows(), b.len())?;
    check_len("initial point", op.cols(), x0.len())?;
    if let Some(xs) = x_star {
        check_len("ground truth", op.cols(), xs.len())?;
    }
    if cfg.dist_tol.is_some() && x_star.is_none() {
        return Err(Error::InvalidParameter("dist_tol needs the ground truth".into()));
    }
    if !solver.matches(op) {
        return Err(Error::CacheMismatch);
    }
    if x0.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidParameter("initial point must be nonzero".into()));
    }
    let m = op.rows();
    let start = Instant::now();

    let mut trace = cfg.record_trace.then(|| IterateTrace {
        initial_dist: x_star.map(|xs| dist(x0, xs)),
        initial_objective: amplitude_objective(op, b, x0).unwrap_or(f64::NAN),
        rows: Vec::new(),
    });

    let mut x = x0.clone();
    let mut ax = op.apply(&x)?;
    let mut signs: Vec<bool> = ax.iter().map(|v| *v < 0.0).collect();
    let mut unchanged = 0;
    let mut status = RecoveryStatus::MaxOuter;
    let mut total_inner = 0;
    let mut k = 0;

    while k < cfg.max_outer {
        k += 1;
        let c = DVector::from_fn(m, |i, _| if signs[i] { -b[i] } else { b[i] });
        let problem = SignedLadProblem::new(op, c, cfg.inner_tol.at(k - 1, m))?.with_warm_start(x.clone())?;
        let sol = solver.solve(&problem)?;
        total_inner += sol.iterations;

        let change = sol.x.metric_distance(&x);
        let base = x.norm();
        x = sol.x;
        ax = op.apply(&x)?;
        let d = x_star.map(|xs| dist(&x, xs));

        if let Some(t) = trace.as_mut() {
            t.rows.push(TraceRow {
                k,
                dist: d,
                objective: ax.iter().zip(b.iter()).map(|(a, b)| (a.abs() - b).abs()).sum::<f64>() / m as f64,
                inner_iters: sol.iterations,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
        }

        if cfg.dist_tol.is_some_and(|tol| d.is_some_and(|d| d <= tol)) || change <= cfg.change_tol * base {
            status = RecoveryStatus::Success;
            break;
        }
        if x.iter().all(|v| *v == 0.0) {
            return Err(Error::Degenerate("iterate collapsed to zero".into()));
        }

        let new_signs: Vec<bool> = ax.iter().map(|v| *v < 0.0).collect();
        if new_signs == signs {
            unchanged += 1;
            if unchanged >= cfg.stall_patience {
                status = RecoveryStatus::Stalled;
                break;
            }
        } else {
            unchanged = 0;
            signs = new_signs;
        }
    }

    log::debug!("robust-am finished after {k} outer iterations with status {status:?}");
    Ok(RecoveryResult {
        x_hat: x,
        outer_iterations: k,
        status,
        trace,
        total_inner_iterations: total_inner,
        cache_builds: 0,
    })
}

/// Spectral initializer parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    /// Rows with `|b_i| > γ · median(|b|)` are dropped.
    pub truncation: f64,
    pub power_iters: usize,
    pub tol: f64,
    /// Seed of the power-iteration start vector.
    pub seed: u64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            truncation: 7.0,
            power_iters: 200,
            tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralInit {
    pub x0: DVector<f64>,
    pub norm_estimate: f64,
    pub iterations: usize,
    /// False when the power iteration hit `power_iters` first.
    pub converged: bool,
}

/// Leading eigenvector of `Y = (1/m) Σ_i b_i² a_i a_iᵀ 1{|b_i| ≤ γ median(|b|)}`,
/// scaled by `median(|b|)/(0.6745 σ)` with `σ² = ‖A‖_F²/(m d)` the mean
/// per-entry energy of the rows.
pub fn spectral_init(op: &MeasurementOperator, b: &DVector<f64>, cfg: &SpectralConfig) -> Result<SpectralInit> {
    check_len("measurements", op.rows(), b.len())?;
    let (m, d) = (op.rows(), op.cols());
    if m == 0 || cfg.power_iters == 0 || !(cfg.truncation > 0.0) {
        return Err(Error::InvalidParameter(
            "spectral init needs m >= 1 and positive parameters".into(),
        ));
    }
    let mut mags: Vec<f64> = b.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let median = if m % 2 == 1 {
        mags[m / 2]
    } else {
        0.5 * (mags[m / 2 - 1] + mags[m / 2])
    };
    let cut = cfg.truncation * median;
    let weights = DVector::from_fn(m, |i, _| {
        let v = b[i].abs();
        if v <= cut {
            v * v / m as f64
        } else {
            0.0
        }
    });
    if weights.iter().all(|w| *w == 0.0) {
        return Err(Error::Degenerate("every measurement was truncated away".into()));
    }

    let mut rng = stream(cfg.seed, &[role::INIT]);
    let mut v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
    let mut av = DVector::zeros(m);
    let mut next = DVector::zeros(d);
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=cfg.power_iters {
        iterations = it;
        op.apply_into(&v, &mut av);
        av.component_mul_assign(&weights);
        op.apply_adjoint_into(&av, &mut next);
        let n = next.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Degenerate("power iteration collapsed".into()));
        }
        next /= n;
        let delta = dist(&next, &v);
        std::mem::swap(&mut v, &mut next);
        if delta <= cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "spectral power iteration did not reach tol {} in {} steps",
            cfg.tol,
            cfg.power_iters
        );
    }
    let sigma = (op.frobenius_norm_squared() / (m * d) as f64).sqrt();
    let norm_estimate = median / (0.6745 * sigma);
    Ok(SpectralInit {
        x0: v * norm_estimate,
        norm_estimate,
        iterations,
        converged,
    })
}

/// `x⋆ + r ‖x⋆‖ u` for a uniformly random unit vector `u`.
pub fn oracle_init(x_star: &DVector<f64>, radius_fraction: f64, seed: u64) -> Result<DVector<f64>> {
    if !(radius_fraction > 0.0 && radius_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "radius fraction must lie in (0, 1), got {radius_fraction}"
        )));
    }
    let mut rng = stream(seed, &[role::INIT]);
    let u = DVector::from_fn(x_star.len(), |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
    Ok(x_star + u * (radius_fraction * x_star.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{gaussian_ensemble, gaussian_signal, synthesize_instance, OutlierSpec, ValueModel};
    use std::sync::Arc;

    fn instance(d: usize, m: usize, eta: f64, seed: u64) -> ProblemInstance {
        let op = Arc::new(gaussian_ensemble(d, m, seed).unwrap());
        synthesize_instance(
            op,
            gaussian_signal(d, seed + 1),
            &OutlierSpec::new(eta, ValueModel::Zero),
            seed + 2,
        )
        .unwrap()
    }

    #[test]
    fn dist_examples() {
        let x = DVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(dist(&x, &x), 0.0);
        assert_eq!(dist(&x, &-&x), 0.0);
        let (e1, e2) = (DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0]));
        assert!((dist(&e1, &e2) - 2f64.sqrt()).abs() < 1e-15);
        let y = DVector::from_vec(vec![0.3, 0.1]);
        assert!(dist(&x, &y) <= (&x - &y).norm());
    }

    #[test]
    fn signed_targets_follow_signs() {
        let inst = instance(4, 20, 0.0, 1);
        let ax = inst.operator.apply(&inst.x_star).unwrap();
        assert_eq!(signed_targets(&inst.operator, &inst.b, &inst.x_star).unwrap(), ax);
        let flipped = signed_targets(&inst.operator, &inst.b, &-&inst.x_star).unwrap();
        assert!((flipped + ax).amax() < 1e-15);

        let op = MeasurementOperator::dense(nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let b = DVector::from_vec(vec![2.0, 3.0]);
        let c = signed_targets(&op, &b, &DVector::from_vec(vec![0.0, -1.0])).unwrap();
        assert_eq!(c, DVector::from_vec(vec![2.0, -3.0]));
    }

    #[test]
    fn fixed_point_at_truth() {
        let inst = instance(10, 100, 0.0, 3);
        let cfg = RobustAmConfig {
            dist_tol: Some(1e-6),
            record_trace: true,
            ..RobustAmConfig::default()
        };
        let res = robust_am(&inst, &inst.x_star, &cfg).unwrap();
        assert_eq!(res.outer_iterations, 1);
        assert_eq!(res.status, RecoveryStatus::Success);
        assert!(dist(&res.x_hat, &inst.x_star) <= 1e-6);
        assert_eq!(res.trace.unwrap().len(), 1);
        assert_eq!(res.cache_builds, 1);
    }

    #[test]
    fn rejects_zero_start() {
        let inst = instance(3, 30, 0.0, 5);
        assert!(robust_am(&inst, &DVector::zeros(3), &RobustAmConfig::default()).is_err());
    }

    #[test]
    fn recovers_from_oracle_init_with_outliers() {
        let inst = instance(20, 300, 0.2, 7);
        let x0 = oracle_init(&inst.x_star, 0.05, 8).unwrap();
        let cfg = RobustAmConfig {
            dist_tol: Some(1e-6),
            record_trace: true,
            ..RobustAmConfig::default()
        };
        let res = robust_am(&inst, &x0, &cfg).unwrap();
        assert_eq!(res.status, RecoveryStatus::Success);
        let series = res.trace.unwrap().dist_series();
        assert_eq!(series[0].0, 0);
        assert!(series.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-8));
    }

    #[test]
    fn sign_flip_equivariance() {
        let inst = instance(10, 150, 0.1, 11);
        let x0 = oracle_init(&inst.x_star, 0.05, 12).unwrap();
        let cfg = RobustAmConfig::default();
        let a = robust_am(&inst, &x0, &cfg).unwrap();
        let b = robust_am(&inst, &-&x0, &cfg).unwrap();
        assert!(dist(&a.x_hat, &b.x_hat) <= 1e-6);
    }

    #[test]
    fn oracle_init_radius_is_exact() {
        let x = gaussian_signal(30, 2);
        let x0 = oracle_init(&x, 0.1, 3).unwrap();
        assert!(((&x0 - &x).norm() - 0.1 * x.norm()).abs() < 1e-12);
        assert!(oracle_init(&x, 0.0, 3).is_err());
        assert!(oracle_init(&x, 1.0, 3).is_err());
        assert!((oracle_init(&x, 1e-12, 3).unwrap() - &x).norm() < 1e-10);
    }

    /// In one dimension the direction is exact and the error is that of the
    /// sample median of `|g|`: standard deviation `1/(2 f(q) √m) / q` with
    /// `q = 0.6745` and `f(q) = 2φ(q)`.
    #[test]
    fn spectral_one_dimensional() {
        let q: f64 = 0.6745;
        let f = 2.0 * (-q * q / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        for (m, bound) in [(200usize, None), (20_000, Some(0.05))] {
            let sd = 1.0 / (2.0 * f * (m as f64).sqrt()) / q;
            let bound = bound.unwrap_or(4.0 * sd);
            for seed in 0..5 {
                let inst = instance(1, m, 0.0, 21 + 10 * seed);
                let init = spectral_init(&inst.operator, &inst.b, &SpectralConfig::default()).unwrap();
                let rel = dist(&init.x0, &inst.x_star) / inst.x_star.norm();
                assert!(rel <= bound, "m = {m}: relative error {rel} > {bound}");
            }
        }
    }

    #[test]
    fn spectral_constant_measurements() {
        let op = gaussian_ensemble(5, 50, 2).unwrap();
        let b = DVector::from_element(50, 1.0);
        assert!(spectral_init(&op, &b, &SpectralConfig::default()).is_ok());
        assert!(spectral_init(&op, &DVector::zeros(50), &SpectralConfig::default()).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let trace = IterateTrace {
            initial_dist: Some(1.0),
            initial_objective: 0.5,
            rows: vec![TraceRow {
                k: 1,
                dist: Some(0.25),
                objective: 0.125,
                inner_iters: 7,
                wall_time_s: 0.5,
            }],
        };
        let mut out = Vec::new();
        trace.write_csv(&mut out, false).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "k,dist,objective,inner_iters,wall_time_s\n1,2.5e-1,1.25e-1,7,\n"
        );
    }
}
