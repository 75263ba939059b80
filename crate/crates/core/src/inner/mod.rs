//! Solvers for the signed LAD subproblem `min_x Σ_i |⟨a_i, x⟩ − c_i|`.
//!
//! Each solver returns a [`LadSolution`] whose `objective` is the normalized
//! value `(1/m) Σ_i |⟨a_i, x⟩ − c_i|` recomputed at the returned `x`.
//!
//! The subproblem tolerance `ε` is an absolute bound on the unnormalized
//! suboptimality `Σ_i |⟨a_i, x⟩ − c_i| − min`. The ADMM solvers certify it
//! with a dual bound: any `ν` with `Aᵀν = 0` and `‖ν‖_∞ ≤ 1` satisfies
//! `min ≥ |⟨c, ν⟩|`, and such a `ν` is obtained by projecting the running
//! dual estimate onto `null(Aᵀ)` and clipping it into the unit box. A solve
//! also stops when the usual primal/dual residual tests pass with
//! `abs_tol`/`rel_tol`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::measurement::MeasurementOperator;

mod admm_lad;
mod admm_lp;
mod lp_cache;
mod ls_cache;
pub mod oracle;
mod polish;
mod prepared;
mod subgradient;

pub use admm_lad::solve_lad_admm;
pub use admm_lp::solve_lad_lp_admm;
pub use lp_cache::{build_lp_cache, LpCache, LpCacheOptions, LpFactorization};
pub use ls_cache::{build_ls_cache, LsCache};
pub use oracle::lad_bruteforce_oracle;
pub use prepared::{InnerSolverConfig, InnerSolverKind, PreparedSolver};
pub use subgradient::{solve_lad_subgradient, RsgConfig};

/// `sign(v)` with the convention `sign(0) = +1`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// One LAD subproblem: operator, signed targets and a suboptimality tolerance.
#[derive(Clone, Debug)]
pub struct SignedLadProblem<'a> {
    pub operator: &'a MeasurementOperator,
    pub target: DVector<f64>,
    pub warm_start: Option<DVector<f64>>,
    pub tolerance: f64,
}

impl<'a> SignedLadProblem<'a> {
    pub fn new(operator: &'a MeasurementOperator, target: DVector<f64>, tolerance: f64) -> Result<Self> {
        check_len("target", operator.rows(), target.len())?;
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("target has non-finite entries".into()));
        }
        if !(tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be positive, got {tolerance}"
            )));
        }
        Ok(Self {
            operator,
            target,
            warm_start: None,
            tolerance,
        })
    }

    pub fn with_warm_start(mut self, x0: DVector<f64>) -> Result<Self> {
        check_len("warm start", self.operator.cols(), x0.len())?;
        self.warm_start = Some(x0);
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.operator.rows()
    }

    pub fn d(&self) -> usize {
        self.operator.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIters,
}

/// Inner iteration record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerTraceRow {
    pub inner_iter: usize,
    pub objective: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    /// Penalty for ADMM, step size for the subgradient method.
    pub rho: f64,
}

#[derive(Clone, Debug)]
pub struct LadSolution {
    pub x: DVector<f64>,
    /// `(1/m) Σ |⟨a_i, x⟩ − c_i|`.
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Certified bound on the unnormalized suboptimality, when available.
    pub gap_bound: Option<f64>,
    pub status: SolveStatus,
    /// Whether `x` came from active-set polishing.
    pub polished: bool,
    pub trace: Vec<InnerTraceRow>,
}

/// Parameters shared by both ADMM solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub rho0: f64,
    pub vary_rho: bool,
    /// Residual ratio that triggers a penalty update.
    pub mu: f64,
    pub tau_incr: f64,
    pub tau_decr: f64,
    /// Iterations between penalty updates.
    pub rho_update_every: usize,
    /// Last iteration at which the penalty may change.
    pub rho_update_until: usize,
    pub max_iters: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Iterations between dual-certificate evaluations.
    pub certificate_every: usize,
    /// Try an exact solve on the estimated zero-residual rows at certificate checks.
    pub polish: bool,
    /// Minimum iterations between polishing attempts.
    pub polish_every: usize,
    pub record_trace: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho0: 1.0,
            vary_rho: true,
            mu: 10.0,
            tau_incr: 2.0,
            tau_decr: 2.0,
            rho_update_every: 10,
            rho_update_until: 1000,
            max_iters: 10_000,
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            certificate_every: 10,
            polish: true,
            polish_every: 50,
            record_trace: false,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.rho0, self.mu, self.abs_tol, self.rel_tol];
        if positive.iter().any(|v| !(*v > 0.0))
            || self.max_iters == 0
            || self.certificate_every == 0
            || self.rho_update_every == 0
        {
            return Err(Error::InvalidParameter("ADMM parameters must be positive".into()));
        }
        if !(self.tau_incr > 1.0 && self.tau_decr > 1.0) {
            return Err(Error::InvalidParameter("ADMM penalty factors must exceed 1".into()));
        }
        Ok(())
    }

    /// Pivot budget of the polishing crossover.
    pub(crate) fn max_pivots(&self, d: usize) -> usize {
        4 * d + 100
    }

    /// The crossover is skipped when many more than `d` rows look fitted:
    /// the vertex is then highly degenerate and simplex pivots stall.
    pub(crate) fn try_crossover(active: &[bool], d: usize) -> bool {
        2 * active.iter().filter(|a| **a).count() <= 3 * d
    }

    /// Residual balancing at iteration `it`: returns the new penalty.
    pub(crate) fn balance(&self, it: usize, rho: f64, primal: f64, dual: f64) -> f64 {
        if !self.vary_rho || !it.is_multiple_of(self.rho_update_every) || it > self.rho_update_until {
            rho
        } else if primal > self.mu * dual {
            rho * self.tau_incr
        } else if dual > self.mu * primal {
            rho / self.tau_decr
        } else {
            rho
        }
    }
}

/// `(1/m) Σ_i |⟨a_i, x⟩ − c_i|`.
pub fn lad_objective(op: &MeasurementOperator, c: &DVector<f64>, x: &DVector<f64>) -> Result<f64> {
    check_len("target", op.rows(), c.len())?;
    let ax = op.apply(x)?;
    Ok(residual_l1(&ax, c) / op.rows() as f64)
}

/// Order-sensitive digest of an index set, to detect a changed active set.
pub(crate) fn active_digest(active: &[bool]) -> u64 {
    active
        .iter()
        .enumerate()
        .filter(|(_, a)| **a)
        .fold(0xcbf2_9ce4_8422_2325u64, |h, (i, _)| {
            (h ^ i as u64).wrapping_mul(0x100_0000_01b3)
        })
}

/// `Σ_i |ax_i − c_i|`.
pub(crate) fn residual_l1(ax: &DVector<f64>, c: &DVector<f64>) -> f64 {
    ax.iter().zip(c.iter()).map(|(a, b)| (a - b).abs()).sum()
}

/// Lower bound `|⟨c, ν⟩|` on `min Σ|Ax − c|` from a vector already in
/// `null(Aᵀ)`, after clipping it into the unit box.
pub(crate) fn dual_lower_bound(nu: &DVector<f64>, c: &DVector<f64>) -> f64 {
    let scale = nu.amax().max(1.0);
    (nu.dot(c) / scale).abs()
}

pub(crate) fn ensure_finite(v: &DVector<f64>, solver: &'static str, iteration: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence { solver, iteration })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::gaussian_ensemble;
    use nalgebra::DMatrix;

    #[test]
    fn objective_of_simple_cases() {
        let op = MeasurementOperator::dense(DMatrix::identity(2, 2)).unwrap();
        let c = DVector::from_vec(vec![1.0, -1.0]);
        assert_eq!(lad_objective(&op, &c, &DVector::zeros(2)).unwrap(), 1.0);
        assert_eq!(lad_objective(&op, &c, &c).unwrap(), 0.0);
        assert!(lad_objective(&op, &DVector::zeros(3), &c).is_err());
    }

    #[test]
    fn objective_matches_row_loop() {
        let op = gaussian_ensemble(4, 9, 3).unwrap();
        let a = op.as_dense().unwrap();
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        let c = DVector::from_fn(9, |i, _| (i as f64).cos());
        let naive: f64 = (0..9)
            .map(|i| ((0..4).map(|j| a[(i, j)] * x[j]).sum::<f64>() - c[i]).abs())
            .sum::<f64>()
            / 9.0;
        assert!((lad_objective(&op, &c, &x).unwrap() - naive).abs() < 1e-12);
    }

    #[test]
    fn sign_of_zero_is_positive() {
        assert_eq!(sign(0.0), 1.0);
        assert_eq!(sign(-0.0), 1.0);
        assert_eq!(sign(-2.0), -1.0);
    }

    #[test]
    fn problem_validation() {
        let op = gaussian_ensemble(2, 4, 1).unwrap();
        assert!(SignedLadProblem::new(&op, DVector::zeros(4), 0.0).is_err());
        assert!(SignedLadProblem::new(&op, DVector::zeros(3), 1.0).is_err());
        let mut c = DVector::zeros(4);
        c[1] = f64::INFINITY;
        assert!(SignedLadProblem::new(&op, c, 1.0).is_err());
        let p = SignedLadProblem::new(&op, DVector::zeros(4), 1.0).unwrap();
        assert!(p.clone().with_warm_start(DVector::zeros(3)).is_err());
        assert!(p.with_warm_start(DVector::zeros(2)).is_ok());
    }

    #[test]
    fn config_validation() {
        assert!(AdmmConfig::default().validate().is_ok());
        let bad = AdmmConfig {
            tau_incr: 1.0,
            ..AdmmConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AdmmConfig {
            rho0: -1.0,
            ..AdmmConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
