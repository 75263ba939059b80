//! Exhaustive LAD solver for tiny problems.
//!
//! Some minimizer of `Σ|A x − c|` interpolates `d` rows when `A` has full
//! column rank, so enumerating all `d`-subsets of rows and keeping the best
//! interpolant gives the exact optimum.

use nalgebra::{DMatrix, DVector};

use super::residual_l1;
use crate::error::{check_len, Error, Result};

pub const MAX_ROWS: usize = 12;
pub const MAX_COLS: usize = 3;

#[derive(Clone, Debug)]
pub struct OracleSolution {
    pub x: DVector<f64>,
    /// `(1/m) Σ |⟨a_i, x⟩ − c_i|`.
    pub objective: f64,
}

pub fn lad_bruteforce_oracle(a: &DMatrix<f64>, c: &DVector<f64>) -> Result<OracleSolution> {
    let (m, d) = a.shape();
    check_len("target", m, c.len())?;
    if m > MAX_ROWS || d > MAX_COLS || d == 0 || m < d {
        return Err(Error::InvalidParameter(format!(
            "oracle handles 1 <= d <= {MAX_COLS}, d <= m <= {MAX_ROWS} (got m = {m}, d = {d})"
        )));
    }
    let mut best: Option<OracleSolution> = None;
    let mut subset: Vec<usize> = (0..d).collect();
    loop {
        let sub = DMatrix::from_fn(d, d, |i, j| a[(subset[i], j)]);
        let rhs = DVector::from_fn(d, |i, _| c[subset[i]]);
        let lu = sub.lu();
        if lu.determinant().abs() > 1e-12 {
            if let Some(x) = lu.solve(&rhs) {
                let obj = residual_l1(&(a * &x), c) / m as f64;
                if best.as_ref().is_none_or(|b| obj < b.objective) {
                    best = Some(OracleSolution { x, objective: obj });
                }
            }
        }
        if !next_subset(&mut subset, m) {
            break;
        }
    }
    best.ok_or_else(|| Error::Degenerate("every row subset is singular".into()))
}

/// Advances a sorted index subset in lexicographic order.
fn next_subset(s: &mut [usize], m: usize) -> bool {
    let d = s.len();
    for i in (0..d).rev() {
        if s[i] < m - d + i {
            s[i] += 1;
            for j in i + 1..d {
                s[j] = s[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_lad_is_a_median() {
        let a = DMatrix::from_element(3, 1, 1.0);
        let sol = lad_bruteforce_oracle(&a, &DVector::from_vec(vec![0.0, 0.0, 10.0])).unwrap();
        assert_eq!(sol.x[0], 0.0);
        assert!((sol.objective - 10.0 / 3.0).abs() < 1e-12);
        let sol = lad_bruteforce_oracle(&a, &DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(sol.x[0], 2.0);
        assert!((sol.objective - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn subset_enumeration_counts() {
        let mut s = vec![0, 1, 2];
        let mut count = 1;
        while next_subset(&mut s, 6) {
            count += 1;
        }
        assert_eq!(count, 20);
    }

    #[test]
    fn rejects_large_and_singular_inputs() {
        assert!(lad_bruteforce_oracle(&DMatrix::zeros(13, 2), &DVector::zeros(13)).is_err());
        assert!(lad_bruteforce_oracle(&DMatrix::zeros(5, 2), &DVector::zeros(5)).is_err());
    }
}
