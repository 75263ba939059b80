use nalgebra::{DMatrix, DVector};

use super::polish::Polisher;
use crate::error::{check_len, Error, Result};
use crate::measurement::MeasurementOperator;

/// Relative pivot threshold below which `A` is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Thin factorization `A = Q R` reused for every least-squares solve
/// against the same operator.
///
/// For the Hadamard ensemble `AᵀA = k I`, so `Q = A/√k` and `R = √k I` are
/// used without materializing anything.
#[derive(Clone, Debug)]
pub struct LsCache {
    fingerprint: u64,
    m: usize,
    d: usize,
    factor: Factor,
    polisher: Polisher,
}

#[derive(Clone, Debug)]
enum Factor {
    Dense { q: DMatrix<f64>, r: DMatrix<f64> },
    TightFrame { k: f64 },
}

/// Factorizes `A`. Fails when `m < d` or a pivot of `R` is below
/// `1e-10 ‖A‖_F`.
pub fn build_ls_cache(op: &MeasurementOperator) -> Result<LsCache> {
    let (m, d) = (op.rows(), op.cols());
    if m < d {
        return Err(Error::InvalidParameter(format!(
            "least-squares cache needs m >= d (m = {m}, d = {d})"
        )));
    }
    let factor = match op {
        MeasurementOperator::Dense(a) => {
            let qr = a.clone().qr();
            let r = qr.r();
            let threshold = RANK_TOL * a.norm();
            let pivot = r.diagonal().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
            if !(pivot > threshold) {
                return Err(Error::Singular { pivot, threshold });
            }
            Factor::Dense { q: qr.q(), r }
        }
        MeasurementOperator::Hadamard(h) => Factor::TightFrame { k: h.k() as f64 },
    };
    log::info!("built LS cache (m = {m}, d = {d})");
    Ok(LsCache {
        fingerprint: op.fingerprint(),
        m,
        d,
        factor,
        polisher: Polisher::new(op),
    })
}

impl LsCache {
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn matches(&self, op: &MeasurementOperator) -> bool {
        self.m == op.rows() && self.d == op.cols() && self.fingerprint == op.fingerprint()
    }

    /// `argmin_x ‖A x − r‖₂`.
    pub fn solve(&self, op: &MeasurementOperator, r: &DVector<f64>) -> Result<DVector<f64>> {
        if !self.matches(op) {
            return Err(Error::CacheMismatch);
        }
        check_len("least-squares right-hand side", self.m, r.len())?;
        let mut u = DVector::zeros(self.d);
        self.qt_into(op, r, &mut u);
        self.r_solve(&mut u);
        Ok(u)
    }

    pub(crate) fn polisher(&self) -> &Polisher {
        &self.polisher
    }

    /// `out ← Qᵀ v`.
    pub(crate) fn qt_into(&self, op: &MeasurementOperator, v: &DVector<f64>, out: &mut DVector<f64>) {
        match &self.factor {
            Factor::Dense { q, .. } => out.gemv_tr(1.0, q, v, 0.0),
            Factor::TightFrame { k } => {
                op.apply_adjoint_into(v, out);
                *out /= k.sqrt();
            }
        }
    }

    /// `out ← Q u`.
    pub(crate) fn q_into(&self, op: &MeasurementOperator, u: &DVector<f64>, out: &mut DVector<f64>) {
        match &self.factor {
            Factor::Dense { q, .. } => out.gemv(1.0, q, u, 0.0),
            Factor::TightFrame { k } => {
                op.apply_into(u, out);
                *out /= k.sqrt();
            }
        }
    }

    /// `u ← R⁻¹ u`.
    pub(crate) fn r_solve(&self, u: &mut DVector<f64>) {
        match &self.factor {
            Factor::Dense { r, .. } => {
                let ok = r.solve_upper_triangular_mut(u);
                debug_assert!(ok, "R verified nonsingular at build time");
            }
            Factor::TightFrame { k } => *u /= k.sqrt(),
        }
    }

    /// `Rᵀ u`.
    pub(crate) fn rt_mul(&self, u: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Dense { r, .. } => r.tr_mul(u),
            Factor::TightFrame { k } => u * k.sqrt(),
        }
    }
}
