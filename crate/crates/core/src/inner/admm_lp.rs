use nalgebra::DVector;

use super::polish::Polished;
use super::{
    active_digest, dual_lower_bound, ensure_finite, residual_l1, AdmmConfig, InnerTraceRow, LadSolution, LpCache,
    SignedLadProblem, SolveStatus,
};
use crate::error::{Error, Result};

/// ADMM on the standard-form LP of the LAD problem.
///
/// Variables `w = [x; t; u; s]` with constraints
///
/// ```text
/// A x − t + s = c,   A x + t − u = c,   u, s ≥ 0
/// ```
///
/// and cost `1ᵀt`. Both the equality block `B w = p` and the consensus
/// `w = y` (with `y_u, y_s ≥ 0`) are penalized:
///
/// ```text
/// w  ← (1/ρ) (I + BᵀB)⁻¹ (Bᵀ(ρ p − z₁) + ρ y − z₂ − e_t)
/// y  ← Π(w + z₂/ρ)
/// z₁ ← z₁ + ρ (B w − p)
/// z₂ ← z₂ + ρ (w − y)
/// ```
///
/// where `Π` clips the `u` and `s` blocks at zero.
pub fn solve_lad_lp_admm(p: &SignedLadProblem<'_>, cache: &LpCache, cfg: &AdmmConfig) -> Result<LadSolution> {
    cfg.validate()?;
    let op = p.operator;
    if !cache.matches(op) {
        return Err(Error::CacheMismatch);
    }
    let (m, d) = (p.m(), p.d());
    let n = cache.n_vars();
    let c = &p.target;

    let x0 = match &p.warm_start {
        Some(x) => x.clone(),
        None => cache.least_squares(op, c),
    };
    let ax0 = op.apply(&x0)?;
    let mut w = DVector::zeros(n);
    w.rows_mut(0, d).copy_from(&x0);
    for i in 0..m {
        let r = ax0[i] - c[i];
        let t = r.abs();
        w[d + i] = t;
        w[d + m + i] = r + t;
        w[d + 2 * m + i] = t - r;
    }
    let mut y = w.clone();
    let mut y_prev;
    let mut z1 = DVector::<f64>::zeros(2 * m);
    let mut z2 = DVector::<f64>::zeros(n);
    let mut pvec = DVector::zeros(2 * m);
    pvec.rows_mut(0, m).copy_from(c);
    pvec.rows_mut(m, m).copy_from(c);
    let btp = cache.bt_mul(op, &pvec);
    let mut btz1 = DVector::<f64>::zeros(n);
    let sqrt_cons = ((2 * m + n) as f64).sqrt();
    let sqrt_n = (n as f64).sqrt();
    let p_norm = pvec.norm();

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
        let mut rhs = &btp * rho - &btz1 + &y * rho - &z2;
        for i in 0..m {
            rhs[d + i] -= 1.0;
        }
        w = cache.apply_inverse(op, &rhs)? / rho;

        y_prev = y;
        y = &w + &z2 / rho;
        for v in y.rows_mut(d + m, 2 * m).iter_mut() {
            *v = v.max(0.0);
        }

        let bw = cache.b_mul(op, &w);
        let r_eq = &bw - &pvec;
        let r_cons = &w - &y;
        z1.axpy(rho, &r_eq, 1.0);
        z2.axpy(rho, &r_cons, 1.0);
        btz1 = cache.bt_mul(op, &z1);
        ensure_finite(&w, "admm_lp", it)?;

        primal = (r_eq.norm_squared() + r_cons.norm_squared()).sqrt();
        dual = rho * y.metric_distance(&y_prev);

        if cfg.record_trace {
            let ax = op.apply(&w.rows(0, d).into_owned())?;
            trace.push(InnerTraceRow {
                inner_iter: it,
                objective: residual_l1(&ax, c) / m as f64,
                primal_res: primal,
                dual_res: dual,
                rho,
            });
        }

        let lhs_norm = (bw.norm_squared() + w.norm_squared()).sqrt();
        let rhs_norm = (p_norm * p_norm + y.norm_squared()).sqrt();
        let eps_pri = sqrt_cons * cfg.abs_tol + cfg.rel_tol * lhs_norm.max(rhs_norm);
        let eps_dual = sqrt_n * cfg.abs_tol + cfg.rel_tol * (&btz1 + &z2).norm();
        if primal <= eps_pri && dual <= eps_dual {
            status = SolveStatus::Converged;
            break;
        }

        if it % cfg.certificate_every == 0 {
            let ax = op.apply(&w.rows(0, d).into_owned())?;
            let nu_raw: DVector<f64> = z1.rows(0, m) + z1.rows(m, m);
            let nu = cache.project_null_adjoint(op, &nu_raw);
            let lower = dual_lower_bound(&nu, c);
            let gap = (residual_l1(&ax, c) - lower).max(0.0);
            gap_bound = Some(gap);
            if gap <= p.tolerance {
                status = SolveStatus::Converged;
                break;
            }
            if cfg.polish && it >= last_polish + cfg.polish_every {
                // a fitted row has both slack blocks clipped to zero
                let active: Vec<bool> = (0..m).map(|i| y[d + m + i] == 0.0 && y[d + 2 * m + i] == 0.0).collect();
                let digest = Some(active_digest(&active));
                if digest != last_digest {
                    last_digest = digest;
                    last_polish = it;
                    let mut cand = cache.polisher().polish(op, c, &active);
                    let gap_of = |p: &Polished| (p.residual_sum - p.lower_bound.max(lower)).max(0.0);
                    if cand.as_ref().is_none_or(|q| gap_of(q) > p.tolerance) && AdmmConfig::try_crossover(&active, d) {
                        let x = w.rows(0, d).into_owned();
                        cand = cache.polisher().crossover(op, c, &x, cfg.max_pivots(d));
                    }
                    if let Some(cand) = cand {
                        let gap = gap_of(&cand);
                        if gap <= p.tolerance {
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
    let x = polished.unwrap_or_else(|| w.rows(0, d).into_owned());
    ensure_finite(&x, "admm_lp", iterations)?;
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
    use crate::inner::{build_lp_cache, lad_bruteforce_oracle, LpCacheOptions, LpFactorization};
    use crate::measurement::{gaussian_ensemble, hadamard_ensemble, MeasurementOperator};
    use rand::{Rng, SeedableRng};

    fn unit_target(m: usize, seed: u64) -> DVector<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(m, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal)).normalize()
    }

    fn solve_with(op: &MeasurementOperator, c: DVector<f64>, f: LpFactorization) -> LadSolution {
        let opts = LpCacheOptions {
            factorization: f,
            ..LpCacheOptions::default()
        };
        let cache = build_lp_cache(op, &opts).unwrap();
        let p = SignedLadProblem::new(op, c, 1e-10).unwrap();
        solve_lad_lp_admm(&p, &cache, &AdmmConfig::default()).unwrap()
    }

    #[test]
    fn matches_enumeration_oracle() {
        for seed in 0..10 {
            let op = gaussian_ensemble(2, 8, 300 + seed).unwrap();
            let c = unit_target(8, 400 + seed);
            let oracle = lad_bruteforce_oracle(op.as_dense().unwrap(), &c).unwrap();
            let sol = solve_with(&op, c, LpFactorization::Structured);
            assert!(
                (sol.objective - oracle.objective).abs() <= 1e-6,
                "seed {seed}: {} vs {}",
                sol.objective,
                oracle.objective
            );
        }
    }

    #[test]
    fn structured_and_dense_factorizations_agree() {
        let op = gaussian_ensemble(3, 20, 1).unwrap();
        let c = unit_target(20, 2);
        let a = solve_with(&op, c.clone(), LpFactorization::Structured);
        let b = solve_with(&op, c, LpFactorization::Dense);
        assert!((a.objective - b.objective).abs() <= 1e-8);
    }

    #[test]
    fn consistent_system() {
        let op = hadamard_ensemble(8, 3, 2).unwrap();
        let xhat = DVector::from_fn(8, |i, _| i as f64 - 3.5);
        let c = op.apply(&xhat).unwrap();
        let sol = solve_with(&op, c, LpFactorization::Structured);
        assert!(sol.objective <= 1e-8, "objective {}", sol.objective);
        assert!((&sol.x - &xhat).norm() <= 1e-6);
    }

    #[test]
    fn agrees_with_lad_admm() {
        let op = gaussian_ensemble(5, 40, 7).unwrap();
        let c = unit_target(40, 8);
        let lp = solve_with(&op, c.clone(), LpFactorization::Structured);
        let cache = crate::inner::build_ls_cache(&op).unwrap();
        let p = SignedLadProblem::new(&op, c, 1e-10).unwrap();
        let lad = crate::inner::solve_lad_admm(&p, &cache, &AdmmConfig::default()).unwrap();
        assert!((lp.objective - lad.objective).abs() <= 1e-7);
    }

    #[test]
    fn reused_cache_matches_fresh_cache() {
        let op = gaussian_ensemble(4, 30, 11).unwrap();
        let opts = LpCacheOptions::default();
        let shared = build_lp_cache(&op, &opts).unwrap();
        for seed in 0..3 {
            let p = SignedLadProblem::new(&op, unit_target(30, 50 + seed), 1e-10).unwrap();
            let reused = solve_lad_lp_admm(&p, &shared, &AdmmConfig::default()).unwrap();
            let fresh = solve_lad_lp_admm(&p, &build_lp_cache(&op, &opts).unwrap(), &AdmmConfig::default()).unwrap();
            assert_eq!(reused.x, fresh.x);
            assert_eq!(reused.iterations, fresh.iterations);
        }
    }
}
