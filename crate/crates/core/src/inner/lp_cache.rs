use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::polish::Polisher;
use crate::error::{check_len, Error, Result};
use crate::measurement::MeasurementOperator;

/// How `(I_{2m} + B Bᵀ)` is factorized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpFactorization {
    /// Block-diagonalize `I + B Bᵀ = [[G + 3I, G − I], [G − I, G + 3I]]`
    /// (`G = A Aᵀ`) by the sum/difference transform, which leaves the blocks
    /// `2(G + I)` and `4I`; the first is inverted through `I_d + AᵀA`.
    /// Cost `O(d³ + m d²)` and `O(d²)` memory.
    Structured,
    /// Explicit `2m × 2m` Cholesky factor, `O(m³)` time and `O(m²)` memory.
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LpCacheOptions {
    pub factorization: LpFactorization,
    /// Largest `m` accepted by the dense factorization.
    pub max_dense_m: usize,
}

impl Default for LpCacheOptions {
    fn default() -> Self {
        Self {
            factorization: LpFactorization::Structured,
            max_dense_m: 1000,
        }
    }
}

#[derive(Clone, Debug)]
enum SmallFactor {
    Chol(Cholesky<f64, Dyn>),
    Scalar(f64),
}

impl SmallFactor {
    fn new(mat: DMatrix<f64>) -> Result<Self> {
        let scale = mat.diagonal().amax();
        let chol = Cholesky::new(mat).ok_or(Error::Singular {
            pivot: 0.0,
            threshold: 0.0,
        })?;
        let pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |a, v| a.min(v.abs()));
        let threshold = 1e-10 * scale.sqrt();
        if !(pivot > threshold) {
            return Err(Error::Singular { pivot, threshold });
        }
        Ok(Self::Chol(chol))
    }

    fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Self::Chol(c) => c.solve(v),
            Self::Scalar(s) => v / *s,
        }
    }
}

#[derive(Clone, Debug)]
enum Inverse {
    Structured { inner: SmallFactor },
    Dense { full: Cholesky<f64, Dyn> },
}

/// Factorization behind `(I + BᵀB)⁻¹` for the standard-form LP with
/// `B = [[A, −I, 0, I], [A, I, −I, 0]]`, applied through the
/// matrix-inversion lemma `(I + BᵀB)⁻¹ = I − Bᵀ (I + BBᵀ)⁻¹ B`.
///
/// Only `A` enters `B`, so one cache serves every inner and outer iteration.
#[derive(Clone, Debug)]
pub struct LpCache {
    fingerprint: u64,
    m: usize,
    d: usize,
    inverse: Inverse,
    gram: SmallFactor,
    polisher: Polisher,
}

pub fn build_lp_cache(op: &MeasurementOperator, opts: &LpCacheOptions) -> Result<LpCache> {
    let (m, d) = (op.rows(), op.cols());
    let gram_matrix = match op {
        MeasurementOperator::Dense(a) => Some(a.tr_mul(a)),
        MeasurementOperator::Hadamard(_) => None,
    };
    let k = match op {
        MeasurementOperator::Hadamard(h) => h.k() as f64,
        MeasurementOperator::Dense(_) => 0.0,
    };
    let gram = match &gram_matrix {
        Some(g) => SmallFactor::new(g.clone())?,
        None => SmallFactor::Scalar(k),
    };
    let inverse = match opts.factorization {
        LpFactorization::Structured => Inverse::Structured {
            inner: match gram_matrix {
                Some(g) => SmallFactor::new(g + DMatrix::identity(d, d))?,
                None => SmallFactor::Scalar(1.0 + k),
            },
        },
        LpFactorization::Dense => {
            if m > opts.max_dense_m {
                return Err(Error::CapExceeded {
                    m,
                    cap: opts.max_dense_m,
                });
            }
            let a = op.to_dense();
            let g = &a * a.transpose();
            let mut full = DMatrix::zeros(2 * m, 2 * m);
            for j in 0..m {
                for i in 0..m {
                    let gij = g[(i, j)];
                    let diag = if i == j { 1.0 } else { 0.0 };
                    full[(i, j)] = gij + 3.0 * diag;
                    full[(i + m, j + m)] = gij + 3.0 * diag;
                    full[(i, j + m)] = gij - diag;
                    full[(i + m, j)] = gij - diag;
                }
            }
            Inverse::Dense {
                full: Cholesky::new(full).ok_or(Error::Singular {
                    pivot: 0.0,
                    threshold: 0.0,
                })?,
            }
        }
    };
    log::info!(
        "built LP cache (m = {m}, d = {d}, factorization = {:?})",
        opts.factorization
    );
    Ok(LpCache {
        fingerprint: op.fingerprint(),
        m,
        d,
        inverse,
        gram,
        polisher: Polisher::new(op),
    })
}

impl LpCache {
    pub fn matches(&self, op: &MeasurementOperator) -> bool {
        self.m == op.rows() && self.d == op.cols() && self.fingerprint == op.fingerprint()
    }

    pub(crate) fn polisher(&self) -> &Polisher {
        &self.polisher
    }

    /// Length of `w = [x; t; u; s]`.
    pub fn n_vars(&self) -> usize {
        self.d + 3 * self.m
    }

    /// `B w = [A x − t + s; A x + t − u]`.
    pub fn b_mul(&self, op: &MeasurementOperator, w: &DVector<f64>) -> DVector<f64> {
        let (m, d) = (self.m, self.d);
        let ax = op
            .apply(&w.rows(0, d).into_owned())
            .expect("dimension checked by caller");
        let (t, u, s) = (w.rows(d, m), w.rows(d + m, m), w.rows(d + 2 * m, m));
        let mut out = DVector::zeros(2 * m);
        for i in 0..m {
            out[i] = ax[i] - t[i] + s[i];
            out[m + i] = ax[i] + t[i] - u[i];
        }
        out
    }

    /// `Bᵀ q = [Aᵀ(q₁ + q₂); q₂ − q₁; −q₂; q₁]`.
    pub fn bt_mul(&self, op: &MeasurementOperator, q: &DVector<f64>) -> DVector<f64> {
        let (m, d) = (self.m, self.d);
        let (q1, q2) = (q.rows(0, m), q.rows(m, m));
        let sum: DVector<f64> = q1 + q2;
        let atq = op.apply_adjoint(&sum).expect("dimension checked by caller");
        let mut out = DVector::zeros(d + 3 * m);
        out.rows_mut(0, d).copy_from(&atq);
        for i in 0..m {
            out[d + i] = q2[i] - q1[i];
            out[d + m + i] = -q2[i];
            out[d + 2 * m + i] = q1[i];
        }
        out
    }

    /// `(I_{2m} + B Bᵀ)⁻¹ r`.
    pub fn solve_bbt(&self, op: &MeasurementOperator, r: &DVector<f64>) -> DVector<f64> {
        let m = self.m;
        match &self.inverse {
            Inverse::Dense { full } => full.solve(r),
            Inverse::Structured { inner } => {
                let (r1, r2) = (r.rows(0, m), r.rows(m, m));
                let sigma: DVector<f64> = r1 + r2;
                let delta: DVector<f64> = r1 - r2;
                // (I + A Aᵀ)⁻¹ σ = σ − A (I + AᵀA)⁻¹ Aᵀ σ
                let ats = op.apply_adjoint(&sigma).expect("dimension checked by caller");
                let corr = op.apply(&inner.solve(&ats)).expect("dimension checked by caller");
                let half_sum = (sigma - corr) * 0.5;
                let half_diff = delta * 0.25;
                let mut out = DVector::zeros(2 * m);
                for i in 0..m {
                    out[i] = 0.5 * (half_sum[i] + half_diff[i]);
                    out[m + i] = 0.5 * (half_sum[i] - half_diff[i]);
                }
                out
            }
        }
    }

    /// `(I + BᵀB)⁻¹ v` through the inversion lemma.
    pub fn apply_inverse(&self, op: &MeasurementOperator, v: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.matches(op) {
            return Err(Error::CacheMismatch);
        }
        check_len("LP variable", self.n_vars(), v.len())?;
        let inner = self.solve_bbt(op, &self.b_mul(op, v));
        Ok(v - self.bt_mul(op, &inner))
    }

    /// Projection of `ν ∈ R^m` onto `null(Aᵀ)`.
    pub(crate) fn project_null_adjoint(&self, op: &MeasurementOperator, nu: &DVector<f64>) -> DVector<f64> {
        let atn = op.apply_adjoint(nu).expect("dimension checked by caller");
        nu - op.apply(&self.gram.solve(&atn)).expect("dimension checked by caller")
    }

    /// `argmin_x ‖A x − r‖₂` through the normal equations.
    pub(crate) fn least_squares(&self, op: &MeasurementOperator, r: &DVector<f64>) -> DVector<f64> {
        self.gram
            .solve(&op.apply_adjoint(r).expect("dimension checked by caller"))
    }

    /// Explicit `B`, for tests and small problems.
    pub fn b_matrix(&self, op: &MeasurementOperator) -> DMatrix<f64> {
        let (m, d) = (self.m, self.d);
        let a = op.to_dense();
        let mut b = DMatrix::zeros(2 * m, d + 3 * m);
        b.view_mut((0, 0), (m, d)).copy_from(&a);
        b.view_mut((m, 0), (m, d)).copy_from(&a);
        for i in 0..m {
            b[(i, d + i)] = -1.0;
            b[(i, d + 2 * m + i)] = 1.0;
            b[(m + i, d + i)] = 1.0;
            b[(m + i, d + m + i)] = -1.0;
        }
        b
    }
}
