use nalgebra::DVector;

use super::polish::Polished;
use super::{
    active_digest, dual_lower_bound, ensure_finite, residual_l1, sign, AdmmConfig, InnerTraceRow, LadSolution, LsCache,
    SignedLadProblem, SolveStatus,
};
use crate::error::{Error, Result};

/// ADMM for `min ‖A x − c‖₁` in the splitting `A x = y`:
///
/// ```text
/// x ← A⁺ (y − φ/ρ)
/// y ← c + sign(A x + φ/ρ − c) ⊙ [|A x + φ/ρ − c| − 1/ρ]₊
/// φ ← φ + ρ (A x − y)
/// ```
///
/// With `A = Q R` from the cache, the iteration is carried in the
/// coordinates `Qᵀy` and `Qᵀφ`, which costs two `m × d` products per step.
/// `φ` is the unscaled multiplier, so a penalty change leaves it untouched.
pub fn solve_lad_admm(p: &SignedLadProblem<'_>, cache: &LsCache, cfg: &AdmmConfig) -> Result<LadSolution> {
    cfg.validate()?;
    let op = p.operator;
    if !cache.matches(op) {
        return Err(Error::CacheMismatch);
    }
    let (m, d) = (p.m(), p.d());
    let c = &p.target;
    let sqrt_m = (m as f64).sqrt();
    let sqrt_d = (d as f64).sqrt();
    let p_tol = p.tolerance;

    let x0 = match &p.warm_start {
        Some(x) => x.clone(),
        None => cache.solve(op, c)?,
    };
    let mut ax = op.apply(&x0)?;
    let mut y = ax.clone();
    let mut y_prev = DVector::zeros(m);
    let mut phi = DVector::<f64>::zeros(m);
    let mut qy = DVector::zeros(d);
    cache.qt_into(op, &y, &mut qy);
    let mut qy_prev = DVector::zeros(d);
    let mut qphi = DVector::<f64>::zeros(d);
    let mut u = qy.clone();
    let mut proj = DVector::zeros(m);

    let mut rho = cfg.rho0;
    let mut status = SolveStatus::MaxIters;
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    let mut gap_bound = None;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut polished = None;
    let (mut last_polish, mut last_digest) = (0, None);

    for it in 1..=cfg.max_iters {
        iterations = it;
        // x-update in factor coordinates: R x = Qᵀ(y − φ/ρ), A x = Q R x
        u.copy_from(&qy);
        u.axpy(-1.0 / rho, &qphi, 1.0);
        cache.q_into(op, &u, &mut ax);

        std::mem::swap(&mut y, &mut y_prev);
        let inv_rho = 1.0 / rho;
        for i in 0..m {
            let t = ax[i] + phi[i] * inv_rho - c[i];
            y[i] = c[i] + sign(t) * (t.abs() - inv_rho).max(0.0);
        }
        for i in 0..m {
            phi[i] += rho * (ax[i] - y[i]);
        }
        std::mem::swap(&mut qy, &mut qy_prev);
        cache.qt_into(op, &y, &mut qy);
        // Qᵀ(A x) = R x = u
        qphi += (&u - &qy) * rho;

        primal = ax.metric_distance(&y);
        dual = rho * cache.rt_mul(&(&qy - &qy_prev)).norm();
        ensure_finite(&u, "admm_lad", it)?;

        if cfg.record_trace {
            trace.push(InnerTraceRow {
                inner_iter: it,
                objective: residual_l1(&ax, c) / m as f64,
                primal_res: primal,
                dual_res: dual,
                rho,
            });
        }

        let eps_pri = sqrt_m * cfg.abs_tol + cfg.rel_tol * ax.norm().max(y.norm());
        let eps_dual = sqrt_d * cfg.abs_tol + cfg.rel_tol * cache.rt_mul(&qphi).norm();
        if primal <= eps_pri && dual <= eps_dual {
            status = SolveStatus::Converged;
            break;
        }

        if it % cfg.certificate_every == 0 {
            // resync Qᵀφ and project φ onto null(Aᵀ)
            cache.qt_into(op, &phi, &mut qphi);
            cache.q_into(op, &qphi, &mut proj);
            let nu = &phi - &proj;
            let lower = dual_lower_bound(&nu, c);
            let gap = (residual_l1(&ax, c) - lower).max(0.0);
            gap_bound = Some(gap);
            if gap <= p.tolerance {
                status = SolveStatus::Converged;
                break;
            }
            if cfg.polish && it >= last_polish + cfg.polish_every {
                // the shrinkage step returns c_i exactly on rows it treats as fitted
                let active: Vec<bool> = (0..m).map(|i| y[i] == c[i]).collect();
                let digest = Some(active_digest(&active));
                if digest != last_digest {
                    last_digest = digest;
                    last_polish = it;
                    let mut cand = cache.polisher().polish(op, c, &active);
                    let gap_of = |p: &Polished| (p.residual_sum - p.lower_bound.max(lower)).max(0.0);
                    if cand.as_ref().is_none_or(|p| gap_of(p) > p_tol) && AdmmConfig::try_crossover(&active, d) {
                        let mut x = u.clone();
                        cache.r_solve(&mut x);
                        cand = cache.polisher().crossover(op, c, &x, cfg.max_pivots(d));
                    }
                    if let Some(cand) = cand {
                        let gap = gap_of(&cand);
                        if gap <= p_tol {
                            gap_bound = Some(gap);
                            polished = Some(cand.x);
                            status = SolveStatus::Converged;
                            break;
                        }
                    }
                }
            }
        }

        rho = cfg.balance(it, rho, primal, dual);
    }

    let was_polished = polished.is_some();
    let x = match polished {
        Some(x) => x,
        None => {
            let mut x = u;
            cache.r_solve(&mut x);
            x
        }
    };
    ensure_finite(&x, "admm_lad", iterations)?;
    let objective = residual_l1(&op.apply(&x)?, c) / m as f64;
    Ok(LadSolution {
        x,
        objective,
        iterations,
        primal_residual: primal,
        dual_residual: dual,
        gap_bound,
        status,
        polished: was_polished,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner::{build_ls_cache, lad_bruteforce_oracle, lad_objective};
    use crate::measurement::{gaussian_ensemble, hadamard_ensemble, MeasurementOperator};
    use rand::{Rng, SeedableRng};

    fn unit_target(m: usize, seed: u64) -> DVector<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        c.normalize()
    }

    fn solve(op: &MeasurementOperator, c: DVector<f64>, tol: f64) -> LadSolution {
        let cache = build_ls_cache(op).unwrap();
        let p = SignedLadProblem::new(op, c, tol).unwrap();
        solve_lad_admm(&p, &cache, &AdmmConfig::default()).unwrap()
    }

    #[test]
    fn consistent_system_is_solved_exactly() {
        let op = gaussian_ensemble(4, 30, 2).unwrap();
        let xhat = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let c = op.apply(&xhat).unwrap();
        let sol = solve(&op, c, 1e-12);
        assert!(sol.objective <= 1e-8, "objective {}", sol.objective);
        assert!((&sol.x - &xhat).norm() <= 1e-6);
    }

    #[test]
    fn matches_enumeration_oracle_on_small_instances() {
        for seed in 0..10 {
            let op = gaussian_ensemble(2, 8, 100 + seed).unwrap();
            let c = unit_target(8, 200 + seed);
            let oracle = lad_bruteforce_oracle(op.as_dense().unwrap(), &c).unwrap();
            let sol = solve(&op, c, 1e-10);
            assert!(
                (sol.objective - oracle.objective).abs() <= 1e-6,
                "seed {seed}: {} vs {}",
                sol.objective,
                oracle.objective
            );
        }
    }

    #[test]
    fn plain_iteration_matches_oracle_without_polishing() {
        let cfg = AdmmConfig {
            polish: false,
            ..AdmmConfig::default()
        };
        for seed in 0..10 {
            let op = gaussian_ensemble(3, 7, 500 + seed).unwrap();
            let c = unit_target(7, 600 + seed);
            let oracle = lad_bruteforce_oracle(op.as_dense().unwrap(), &c).unwrap();
            let cache = build_ls_cache(&op).unwrap();
            let p = SignedLadProblem::new(&op, c, 1e-10).unwrap();
            let sol = solve_lad_admm(&p, &cache, &cfg).unwrap();
            assert!(!sol.polished);
            assert!((sol.objective - oracle.objective).abs() <= 1e-6, "seed {seed}");
        }
    }

    #[test]
    fn polishing_certifies_larger_problems() {
        let op = gaussian_ensemble(20, 200, 3).unwrap();
        let c = unit_target(200, 4);
        let sol = solve(&op, c, 1e-9);
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!(sol.gap_bound.unwrap() <= 1e-9);
        assert!(sol.polished);
    }

    #[test]
    fn gross_outlier_matches_oracle() {
        let op = gaussian_ensemble(3, 7, 5).unwrap();
        let mut c = unit_target(7, 6);
        c[3] = 1e6;
        let oracle = lad_bruteforce_oracle(op.as_dense().unwrap(), &c).unwrap();
        let sol = solve(&op, c.clone(), 1e-9);
        assert!((sol.objective - oracle.objective).abs() <= 1e-6 * oracle.objective.max(1.0));
        assert!((&sol.x - &oracle.x).norm() <= 1e-6 * oracle.x.norm().max(1.0));
    }

    #[test]
    fn reported_objective_matches_recomputation() {
        let op = gaussian_ensemble(5, 40, 9).unwrap();
        let c = unit_target(40, 10);
        let sol = solve(&op, c.clone(), 1e-9);
        assert!((sol.objective - lad_objective(&op, &c, &sol.x).unwrap()).abs() <= 1e-10);
        assert_eq!(sol.status, SolveStatus::Converged);
    }

    #[test]
    fn hadamard_operator_runs_matrix_free() {
        let op = hadamard_ensemble(32, 4, 1).unwrap();
        let dense = MeasurementOperator::dense(op.to_dense()).unwrap();
        let c = unit_target(128, 3);
        let fast = solve(&op, c.clone(), 1e-10);
        let slow = solve(&dense, c, 1e-10);
        assert!((fast.objective - slow.objective).abs() < 1e-8);
    }

    #[test]
    fn cached_runs_are_bit_identical() {
        let op = gaussian_ensemble(3, 25, 4).unwrap();
        let c = unit_target(25, 8);
        let cache = build_ls_cache(&op).unwrap();
        let p = SignedLadProblem::new(&op, c, 1e-9).unwrap();
        let first = solve_lad_admm(&p, &cache, &AdmmConfig::default()).unwrap();
        for _ in 0..10 {
            let again = solve_lad_admm(&p, &cache, &AdmmConfig::default()).unwrap();
            assert_eq!(again.x, first.x);
            let fresh = solve_lad_admm(&p, &build_ls_cache(&op).unwrap(), &AdmmConfig::default()).unwrap();
            assert_eq!(fresh.x, first.x);
        }
    }

    #[test]
    fn trace_records_residuals_and_penalty() {
        let op = gaussian_ensemble(3, 25, 4).unwrap();
        let c = unit_target(25, 8);
        let cache = build_ls_cache(&op).unwrap();
        let p = SignedLadProblem::new(&op, c, 1e-9).unwrap();
        let cfg = AdmmConfig {
            record_trace: true,
            polish: false,
            ..AdmmConfig::default()
        };
        let sol = solve_lad_admm(&p, &cache, &cfg).unwrap();
        assert!(!sol.polished);
        assert_eq!(sol.trace.len(), sol.iterations);
        assert!(sol.trace.iter().all(|r| r.rho > 0.0 && r.primal_res >= 0.0));
        assert!(sol.primal_residual <= 1e-4);
    }

    #[test]
    fn rejects_mismatched_cache() {
        let op = gaussian_ensemble(3, 25, 4).unwrap();
        let other = gaussian_ensemble(3, 25, 5).unwrap();
        let cache = build_ls_cache(&other).unwrap();
        let p = SignedLadProblem::new(&op, DVector::zeros(25), 1e-9).unwrap();
        assert!(matches!(
            solve_lad_admm(&p, &cache, &AdmmConfig::default()),
            Err(Error::CacheMismatch)
        ));
    }

    #[test]
    fn zero_target_from_zero_is_immediate() {
        let op = gaussian_ensemble(3, 12, 4).unwrap();
        let sol = solve(&op, DVector::zeros(12), 1e-9);
        assert_eq!(sol.objective, 0.0);
        assert!(sol.iterations <= 10);
    }
}
