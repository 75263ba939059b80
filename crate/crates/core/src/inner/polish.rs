//! Active-set polishing for the LAD subproblem.
//!
//! Given rows `Z` estimated to have zero residual at the optimum, the
//! candidate `x_Z` solves `A_Z x = c_Z` in the least-squares sense and the
//! candidate dual is
//!
//! ```text
//! ν_i = sign(r_i) for i ∉ Z,   ν_Z = A_Z (A_Zᵀ A_Z)⁻¹ (−A_{Zᶜ}ᵀ ν_{Zᶜ}),
//! ```
//!
//! which satisfies `Aᵀν = 0`. When `Z` is the true active set the pair is
//! optimal and the duality gap vanishes; otherwise the gap stays large and
//! the candidate is discarded by the caller.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{dual_lower_bound, residual_l1, sign};
use crate::measurement::MeasurementOperator;

#[derive(Clone, Debug)]
pub(crate) struct Polisher {
    /// `AᵀA`, or `None` for a tight frame with `AᵀA = k I`.
    gram: Option<DMatrix<f64>>,
    frame_bound: f64,
}

pub(crate) struct Polished {
    pub x: DVector<f64>,
    /// `Σ |A x − c|`.
    pub residual_sum: f64,
    pub lower_bound: f64,
}

impl Polisher {
    pub fn new(op: &MeasurementOperator) -> Self {
        match op {
            MeasurementOperator::Dense(a) => Self {
                gram: Some(a.tr_mul(a)),
                frame_bound: 0.0,
            },
            MeasurementOperator::Hadamard(h) => Self {
                gram: None,
                frame_bound: h.k() as f64,
            },
        }
    }

    fn gram_of_rows(op: &MeasurementOperator, rows: &[usize]) -> DMatrix<f64> {
        let sub = gather_rows(op, rows);
        sub.tr_mul(&sub)
    }

    /// Candidate solution for the active set `active`, or `None` when `A_Z`
    /// is rank deficient.
    pub fn polish(&self, op: &MeasurementOperator, c: &DVector<f64>, active: &[bool]) -> Option<Polished> {
        let (m, d) = (op.rows(), op.cols());
        let inside: Vec<usize> = (0..m).filter(|&i| active[i]).collect();
        if inside.len() < d {
            return None;
        }
        let outside: Vec<usize> = (0..m).filter(|&i| !active[i]).collect();
        let g_z = if outside.len() < inside.len() {
            let full = self
                .gram
                .clone()
                .unwrap_or_else(|| DMatrix::identity(d, d) * self.frame_bound);
            full - Self::gram_of_rows(op, &outside)
        } else {
            Self::gram_of_rows(op, &inside)
        };
        let scale = g_z.diagonal().amax();
        let chol = Cholesky::new(g_z)?;
        let min_pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if !(min_pivot > 1e-6 * scale.sqrt()) {
            return None;
        }

        let masked_c = DVector::from_fn(m, |i, _| if active[i] { c[i] } else { 0.0 });
        let x = chol.solve(&op.apply_adjoint(&masked_c).ok()?);
        let ax = op.apply(&x).ok()?;
        let residual_sum = residual_l1(&ax, c);

        let s = DVector::from_fn(m, |i, _| if active[i] { 0.0 } else { sign(ax[i] - c[i]) });
        let h = -op.apply_adjoint(&s).ok()?;
        let fill = op.apply(&chol.solve(&h)).ok()?;
        let nu = DVector::from_fn(m, |i, _| if active[i] { fill[i] } else { s[i] });
        Some(Polished {
            x,
            residual_sum,
            lower_bound: dual_lower_bound(&nu, c),
        })
    }
}

/// Dense copy of the rows `rows` of `A`.
fn gather_rows(op: &MeasurementOperator, rows: &[usize]) -> DMatrix<f64> {
    let mut sub = DMatrix::zeros(rows.len(), op.cols());
    for (r, &i) in rows.iter().enumerate() {
        match op {
            MeasurementOperator::Dense(a) => sub.row_mut(r).copy_from(&a.row(i)),
            MeasurementOperator::Hadamard(_) => sub.row_mut(r).copy_from(&op.row(i).transpose()),
        }
    }
    sub
}

/// First `d` rows of `order` that are linearly independent of the rows
/// already taken.
fn independent_rows(op: &MeasurementOperator, order: &[usize], d: usize) -> Option<Vec<usize>> {
    let mut q: Vec<DVector<f64>> = Vec::with_capacity(d);
    let mut picked = Vec::with_capacity(d);
    for &i in order {
        let a = gather_rows(op, &[i]).row(0).transpose();
        let norm = a.norm();
        let mut r = a;
        for _ in 0..2 {
            for b in &q {
                let proj = b.dot(&r);
                r.axpy(-proj, b, 1.0);
            }
        }
        let rn = r.norm();
        if rn > 1e-8 * norm {
            q.push(r / rn);
            picked.push(i);
            if picked.len() == d {
                return Some(picked);
            }
        }
    }
    None
}

impl Polisher {
    /// Exact LAD simplex from the basis formed by the `d` rows with the
    /// smallest `|r_i|` at `x`.
    ///
    /// At a basis `B` with `x = A_B⁻¹ c_B`, the multipliers are
    /// `ν_B = −A_B⁻ᵀ A_Nᵀ sign(r_N)`. If some `|ν_j| > 1`, releasing row `j`
    /// is a descent direction; an exact line search along it picks the
    /// entering row. Stops at `|ν_B| ≤ 1`, which is optimal, or after
    /// `max_pivots` pivots.
    pub fn crossover(
        &self,
        op: &MeasurementOperator,
        c: &DVector<f64>,
        x: &DVector<f64>,
        max_pivots: usize,
    ) -> Option<Polished> {
        let (m, d) = (op.rows(), op.cols());
        let ax = op.apply(x).ok()?;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| (ax[a] - c[a]).abs().total_cmp(&(ax[b] - c[b]).abs()));
        let mut basis = independent_rows(op, &order, d)?;
        let mut in_basis = vec![false; m];
        basis.iter().for_each(|&i| in_basis[i] = true);

        let mut a_b = gather_rows(op, &basis);
        let mut inv = a_b.clone().try_inverse()?;
        let scale = op.frobenius_norm_squared().sqrt().max(1.0);
        let mut since_refactor = 0;

        for _ in 0..=max_pivots {
            let c_b = DVector::from_fn(d, |r, _| c[basis[r]]);
            let x = &inv * &c_b;
            let ax = op.apply(&x).ok()?;
            let mut s = DVector::zeros(m);
            let mut residual_sum = 0.0;
            for i in 0..m {
                if !in_basis[i] {
                    let r = ax[i] - c[i];
                    s[i] = sign(r);
                    residual_sum += r.abs();
                }
            }
            let g = op.apply_adjoint(&s).ok()?;
            let nu_b = -(inv.tr_mul(&g));
            let (j, nu_j) = nu_b
                .iter()
                .enumerate()
                .map(|(j, v)| (j, *v))
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?;
            if nu_j.abs() <= 1.0 + 1e-12 || since_refactor == max_pivots {
                let mut nu = s;
                for (r, &i) in basis.iter().enumerate() {
                    nu[i] = nu_b[r];
                }
                return Some(Polished {
                    x,
                    residual_sum,
                    lower_bound: dual_lower_bound(&nu, c),
                });
            }

            // direction with A_B δ = sign(ν_j) e_j
            let sigma = sign(nu_j);
            let delta = inv.column(j) * sigma;
            let v = op.apply(&delta).ok()?;
            let mut breaks: Vec<(f64, f64, usize)> = (0..m)
                .filter(|&i| !in_basis[i] && v[i].abs() > 1e-14 * scale)
                .filter_map(|i| {
                    let t = -(ax[i] - c[i]) / v[i];
                    (t >= 0.0).then_some((t, 2.0 * v[i].abs(), i))
                })
                .collect();
            breaks.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut slope = 1.0 - nu_j.abs();
            let mut entering = None;
            for &(_, jump, i) in &breaks {
                slope += jump;
                if slope >= 0.0 {
                    entering = Some(i);
                    break;
                }
            }
            let i_new = entering?;

            let leaving = basis[j];
            let new_row = gather_rows(op, &[i_new]);
            // Sherman-Morrison for replacing row j of A_B
            let u = new_row.row(0) - a_b.row(j);
            let w = &u * &inv;
            let denom = 1.0 + w[j];
            if denom.abs() < 1e-12 {
                return None;
            }
            let col_j = inv.column(j).into_owned();
            inv -= col_j * (w / denom);
            a_b.row_mut(j).copy_from(&new_row.row(0));
            basis[j] = i_new;
            in_basis[leaving] = false;
            in_basis[i_new] = true;
            since_refactor += 1;
            if since_refactor % 64 == 0 {
                inv = a_b.clone().try_inverse()?;
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner::lad_bruteforce_oracle;
    use crate::measurement::MeasurementOperator;
    use crate::measurement::{gaussian_ensemble, hadamard_ensemble};

    #[test]
    fn true_active_set_closes_the_gap() {
        let op = gaussian_ensemble(3, 10, 4).unwrap();
        let c = DVector::from_fn(10, |i, _| ((i * 5 % 7) as f64 - 3.0) / 4.0);
        let oracle = lad_bruteforce_oracle(op.as_dense().unwrap(), &c).unwrap();
        let r = op.apply(&oracle.x).unwrap() - &c;
        let active: Vec<bool> = r.iter().map(|v| v.abs() < 1e-9).collect();
        let p = Polisher::new(&op).polish(&op, &c, &active).unwrap();
        assert!((p.residual_sum / 10.0 - oracle.objective).abs() < 1e-12);
        assert!(p.lower_bound <= p.residual_sum + 1e-12);
        assert!(
            p.residual_sum - p.lower_bound < 1e-9,
            "gap {}",
            p.residual_sum - p.lower_bound
        );
    }

    #[test]
    fn consistent_hadamard_system() {
        let op = hadamard_ensemble(16, 2, 1).unwrap();
        let x = DVector::from_fn(16, |i, _| i as f64);
        let c = op.apply(&x).unwrap();
        let active = vec![true; 32];
        let p = Polisher::new(&op).polish(&op, &c, &active).unwrap();
        assert!((p.x - x).amax() < 1e-10);
        assert!(p.residual_sum < 1e-9);
    }

    #[test]
    fn crossover_reaches_the_enumerated_optimum() {
        for seed in 0..20 {
            let op = gaussian_ensemble(3, 11, 40 + seed).unwrap();
            let c = DVector::from_fn(11, |i, _| (((i as u64 + 1) * (seed + 3)) % 13) as f64 / 6.0 - 1.0);
            let oracle = lad_bruteforce_oracle(op.as_dense().unwrap(), &c).unwrap();
            let start = DVector::from_element(3, 0.5);
            let p = Polisher::new(&op).crossover(&op, &c, &start, 100).unwrap();
            assert!((p.residual_sum / 11.0 - oracle.objective).abs() < 1e-12, "seed {seed}");
            assert!(p.residual_sum - p.lower_bound < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn crossover_on_hadamard_rows() {
        let op = hadamard_ensemble(8, 3, 2).unwrap();
        let dense = MeasurementOperator::dense(op.to_dense()).unwrap();
        let c = DVector::from_fn(24, |i, _| ((i * 7 % 5) as f64 - 2.0) / 3.0);
        let start = DVector::from_element(8, 0.1);
        let fast = Polisher::new(&op).crossover(&op, &c, &start, 200).unwrap();
        let slow = Polisher::new(&dense).crossover(&dense, &c, &start, 200).unwrap();
        assert!(slow.residual_sum - slow.lower_bound < 1e-9);
        assert!((fast.residual_sum - slow.residual_sum).abs() < 1e-9);
    }

    #[test]
    fn too_few_rows_is_rejected() {
        let op = gaussian_ensemble(3, 10, 4).unwrap();
        let mut active = vec![false; 10];
        active[0] = true;
        assert!(Polisher::new(&op).polish(&op, &DVector::zeros(10), &active).is_none());
    }
}
