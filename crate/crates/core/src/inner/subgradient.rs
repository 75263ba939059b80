use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{ensure_finite, residual_l1, sign, InnerTraceRow, LadSolution, SignedLadProblem, SolveStatus};
use crate::error::{Error, Result};

/// Restarted subgradient parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RsgConfig {
    /// Initial step. `None` uses the Polyak step `f(x₀)/‖g₀‖²` at the start point.
    pub step0: Option<f64>,
    /// Iterations per epoch. `None` uses `100 ⌈log₂ m⌉`.
    pub epoch_len: Option<usize>,
    pub epochs: usize,
    /// Record one row per epoch.
    pub record_trace: bool,
}

impl Default for RsgConfig {
    fn default() -> Self {
        Self {
            step0: None,
            epoch_len: None,
            epochs: 20,
            record_trace: false,
        }
    }
}

impl RsgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step0.is_some_and(|s| !(s > 0.0)) || self.epoch_len == Some(0) || self.epochs == 0 {
            return Err(Error::InvalidParameter(
                "subgradient step, epoch length and epoch count must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn resolved_epoch_len(&self, m: usize) -> usize {
        self.epoch_len
            .unwrap_or_else(|| 100 * (m.max(2) as f64).log2().ceil() as usize)
    }
}

/// `x ← x − (η/m) Aᵀ sign(A x − c)` with `η` held for one epoch and halved
/// after it. Returns the best iterate seen.
pub fn solve_lad_subgradient(p: &SignedLadProblem<'_>, cfg: &RsgConfig) -> Result<LadSolution> {
    cfg.validate()?;
    let op = p.operator;
    let (m, d) = (p.m(), p.d());
    let c = &p.target;
    let t_len = cfg.resolved_epoch_len(m);

    let mut x = p.warm_start.clone().unwrap_or_else(|| DVector::zeros(d));
    let mut ax = DVector::zeros(m);
    let mut s = DVector::zeros(m);
    let mut g = DVector::zeros(d);
    op.apply_into(&x, &mut ax);
    let mut f = residual_l1(&ax, c);
    let mut best_x = x.clone();
    let mut best_f = f;

    let subgrad = |ax: &DVector<f64>, s: &mut DVector<f64>, g: &mut DVector<f64>| {
        for i in 0..m {
            s[i] = sign(ax[i] - c[i]);
        }
        op.apply_adjoint_into(s, g);
        *g /= m as f64;
    };

    let mut eta = match cfg.step0 {
        Some(e) => e,
        None => {
            subgrad(&ax, &mut s, &mut g);
            let gn = g.norm_squared();
            if gn > 0.0 {
                (f / m as f64) / gn
            } else {
                1.0
            }
        }
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    for epoch in 0..cfg.epochs {
        for _ in 0..t_len {
            if best_f == 0.0 {
                break;
            }
            subgrad(&ax, &mut s, &mut g);
            x.axpy(-eta, &g, 1.0);
            op.apply_into(&x, &mut ax);
            f = residual_l1(&ax, c);
            iterations += 1;
            if f < best_f {
                best_f = f;
                best_x.copy_from(&x);
            }
        }
        ensure_finite(&x, "subgradient", iterations)?;
        if cfg.record_trace {
            trace.push(InnerTraceRow {
                inner_iter: (epoch + 1) * t_len,
                objective: f / m as f64,
                primal_res: best_f / m as f64,
                dual_res: 0.0,
                rho: eta,
            });
        }
        eta *= 0.5;
    }

    Ok(LadSolution {
        x: best_x,
        objective: best_f / m as f64,
        iterations,
        primal_residual: 0.0,
        dual_residual: 0.0,
        gap_bound: None,
        status: SolveStatus::MaxIters,
        polished: false,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner::lad_bruteforce_oracle;
    use crate::measurement::gaussian_ensemble;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_target_from_zero() {
        let op = gaussian_ensemble(2, 8, 1).unwrap();
        let p = SignedLadProblem::new(&op, DVector::zeros(8), 1e-9)
            .unwrap()
            .with_warm_start(DVector::zeros(2))
            .unwrap();
        let sol = solve_lad_subgradient(&p, &RsgConfig::default()).unwrap();
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.x, DVector::zeros(2));
    }

    #[test]
    fn close_to_oracle() {
        for seed in 0..5 {
            let op = gaussian_ensemble(2, 8, 10 + seed).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c = DVector::from_fn(8, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal)).normalize();
            let oracle = lad_bruteforce_oracle(op.as_dense().unwrap(), &c).unwrap();
            let p = SignedLadProblem::new(&op, c, 1e-9).unwrap();
            let cfg = RsgConfig {
                epoch_len: Some(200),
                ..RsgConfig::default()
            };
            let sol = solve_lad_subgradient(&p, &cfg).unwrap();
            assert!(sol.objective - oracle.objective < 1e-3, "seed {seed}");
            assert!(sol.objective >= oracle.objective - 1e-10);
        }
    }

    #[test]
    fn default_epoch_length() {
        assert_eq!(RsgConfig::default().resolved_epoch_len(2000), 1100);
        assert_eq!(RsgConfig::default().resolved_epoch_len(8), 300);
        assert!(RsgConfig {
            step0: Some(0.0),
            ..RsgConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn best_objective_never_increases() {
        let op = gaussian_ensemble(4, 40, 3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let c = DVector::from_fn(40, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let p = SignedLadProblem::new(&op, c, 1e-9).unwrap();
        let cfg = RsgConfig {
            record_trace: true,
            epochs: 8,
            ..RsgConfig::default()
        };
        let sol = solve_lad_subgradient(&p, &cfg).unwrap();
        assert_eq!(sol.trace.len(), 8);
        for w in sol.trace.windows(2) {
            assert!(w[1].primal_res <= w[0].primal_res);
            assert_eq!(w[1].rho, 0.5 * w[0].rho);
        }
        assert_eq!(sol.trace.last().unwrap().primal_res, sol.objective);
    }
}
