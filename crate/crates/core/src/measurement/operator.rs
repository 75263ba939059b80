use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::fwht::{fwht_unchecked, hadamard_entry};
use crate::error::{check_len, Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Dense,
    Hadamard,
}

/// Sign-modulated Hadamard ensemble `A = (I_k ⊗ H_n) [S_1, …, S_k]ᵀ`.
///
/// Only the `k` sign diagonals are stored. Block `j` of `A x` is
/// `H_n (s_j ⊙ x)`, so `Aᵀ A = k I`.
#[derive(Clone, Debug, PartialEq)]
pub struct HadamardOperator {
    n: usize,
    signs: Vec<Vec<f64>>,
}

impl HadamardOperator {
    pub fn new(n: usize, signs: Vec<Vec<f64>>) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(n));
        }
        if signs.is_empty() {
            return Err(Error::InvalidParameter("need at least one modulation".into()));
        }
        for s in &signs {
            check_len("sign diagonal", n, s.len())?;
            if s.iter().any(|&v| v != 1.0 && v != -1.0) {
                return Err(Error::InvalidParameter("sign diagonal entries must be ±1".into()));
            }
        }
        Ok(Self { n, signs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.signs.len()
    }

    pub fn sign_diagonals(&self) -> &[Vec<f64>] {
        &self.signs
    }
}

/// Linear measurement map `x ↦ A x` with rows `a_i`.
#[derive(Clone, Debug, PartialEq)]
pub enum MeasurementOperator {
    Dense(DMatrix<f64>),
    Hadamard(HadamardOperator),
}

/// Gaussian ensemble: `m × d` matrix with i.i.d. standard normal entries.
pub fn gaussian_ensemble(d: usize, m: usize, seed: u64) -> Result<MeasurementOperator> {
    if d == 0 || m == 0 {
        return Err(Error::InvalidParameter(format!(
            "gaussian ensemble needs m, d >= 1 (got m = {m}, d = {d})"
        )));
    }
    let mut rng = rng::stream(seed, &[rng::role::OPERATOR]);
    let a = DMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(MeasurementOperator::Dense(a))
}

/// Structured ensemble with `k` random sign modulations of the order-`n`
/// normalized Hadamard matrix; `m = k n`, `d = n`.
pub fn hadamard_ensemble(n: usize, k: usize, seed: u64) -> Result<MeasurementOperator> {
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let mut rng = rng::stream(seed, &[rng::role::OPERATOR]);
    let signs = (0..k)
        .map(|_| (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
        .collect();
    Ok(MeasurementOperator::Hadamard(HadamardOperator::new(n, signs)?))
}

impl MeasurementOperator {
    /// Wraps a dense matrix after checking every entry is finite.
    pub fn dense(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::InvalidParameter("empty matrix".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("matrix has non-finite entries".into()));
        }
        Ok(Self::Dense(a))
    }

    pub fn kind(&self) -> OperatorKind {
        match self {
            Self::Dense(_) => OperatorKind::Dense,
            Self::Hadamard(_) => OperatorKind::Hadamard,
        }
    }

    /// Number of measurements `m`.
    pub fn rows(&self) -> usize {
        match self {
            Self::Dense(a) => a.nrows(),
            Self::Hadamard(h) => h.n * h.k(),
        }
    }

    /// Signal dimension `d`.
    pub fn cols(&self) -> usize {
        match self {
            Self::Dense(a) => a.ncols(),
            Self::Hadamard(h) => h.n,
        }
    }

    pub fn as_dense(&self) -> Option<&DMatrix<f64>> {
        match self {
            Self::Dense(a) => Some(a),
            Self::Hadamard(_) => None,
        }
    }

    /// `A x`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("apply input", self.cols(), x.len())?;
        let mut out = DVector::zeros(self.rows());
        self.apply_into(x, &mut out);
        Ok(out)
    }

    /// `Aᵀ y`.
    pub fn apply_adjoint(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("adjoint input", self.rows(), y.len())?;
        let mut out = DVector::zeros(self.cols());
        self.apply_adjoint_into(y, &mut out);
        Ok(out)
    }

    /// `out ← A x` without dimension checks beyond debug assertions.
    pub(crate) fn apply_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        debug_assert_eq!(x.len(), self.cols());
        debug_assert_eq!(out.len(), self.rows());
        match self {
            Self::Dense(a) => out.gemv(1.0, a, x, 0.0),
            Self::Hadamard(h) => {
                let n = h.n;
                let scale = 1.0 / (n as f64).sqrt();
                for (block, s) in out.as_mut_slice().chunks_exact_mut(n).zip(&h.signs) {
                    for ((o, &xi), &si) in block.iter_mut().zip(x.iter()).zip(s) {
                        *o = xi * si;
                    }
                    fwht_unchecked(block);
                    block.iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
    }

    /// `out ← Aᵀ y` without dimension checks beyond debug assertions.
    pub(crate) fn apply_adjoint_into(&self, y: &DVector<f64>, out: &mut DVector<f64>) {
        debug_assert_eq!(y.len(), self.rows());
        debug_assert_eq!(out.len(), self.cols());
        match self {
            Self::Dense(a) => out.gemv_tr(1.0, a, y, 0.0),
            Self::Hadamard(h) => {
                let n = h.n;
                let scale = 1.0 / (n as f64).sqrt();
                out.fill(0.0);
                let mut buf = vec![0.0; n];
                for (block, s) in y.as_slice().chunks_exact(n).zip(&h.signs) {
                    buf.copy_from_slice(block);
                    fwht_unchecked(&mut buf);
                    for ((o, &b), &si) in out.iter_mut().zip(&buf).zip(s) {
                        *o += scale * si * b;
                    }
                }
            }
        }
    }

    /// Row `a_i` as a vector.
    pub fn row(&self, i: usize) -> DVector<f64> {
        match self {
            Self::Dense(a) => a.row(i).transpose(),
            Self::Hadamard(h) => {
                let (j, r) = (i / h.n, i % h.n);
                DVector::from_fn(h.n, |c, _| h.signs[j][c] * hadamard_entry(h.n, r, c))
            }
        }
    }

    /// Explicit `m × d` matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Self::Dense(a) => a.clone(),
            Self::Hadamard(h) => {
                let n = h.n;
                DMatrix::from_fn(self.rows(), n, |i, c| h.signs[i / n][c] * hadamard_entry(n, i % n, c))
            }
        }
    }

    /// Squared Frobenius norm of `A`.
    pub fn frobenius_norm_squared(&self) -> f64 {
        match self {
            Self::Dense(a) => a.norm_squared(),
            // every row of a normalized Hadamard block is a unit vector
            Self::Hadamard(h) => (h.n * h.k()) as f64,
        }
    }

    /// FNV-1a digest of the operator contents, used to match caches to operators.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        match self {
            Self::Dense(a) => {
                h.write_u64(0);
                h.write_u64(a.nrows() as u64);
                h.write_u64(a.ncols() as u64);
                a.iter().for_each(|v| h.write_u64(v.to_bits()));
            }
            Self::Hadamard(op) => {
                h.write_u64(1);
                h.write_u64(op.n as u64);
                h.write_u64(op.k() as u64);
                for s in &op.signs {
                    s.iter().for_each(|v| h.write_u64(v.to_bits()));
                }
            }
        }
        h.0
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_vec(len: usize, seed: u64) -> DVector<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn gaussian_is_deterministic_per_seed() {
        let a = gaussian_ensemble(2, 3, 7).unwrap();
        let b = gaussian_ensemble(2, 3, 7).unwrap();
        let c = gaussian_ensemble(2, 3, 8).unwrap();
        assert_eq!(a.rows(), 3);
        assert_eq!(a.cols(), 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn gaussian_column_norms_concentrate() {
        let a = gaussian_ensemble(100, 800, 1).unwrap();
        let a = a.as_dense().unwrap();
        for col in a.column_iter() {
            let r = col.norm_squared() / 800.0;
            assert!((0.8..=1.2).contains(&r), "column norm ratio {r}");
        }
    }

    #[test]
    fn gaussian_mean_absolute_entry() {
        let a = gaussian_ensemble(1, 100_000, 3).unwrap();
        let mean = a.as_dense().unwrap().iter().map(|v| v.abs()).sum::<f64>() / 1e5;
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - expected).abs() < 0.01, "mean |g| = {mean}");
    }

    #[test]
    fn hadamard_scalar_case() {
        let op = hadamard_ensemble(1, 1, 0).unwrap();
        let dense = op.to_dense();
        assert_eq!(dense.shape(), (1, 1));
        assert_eq!(dense[(0, 0)].abs(), 1.0);
    }

    #[test]
    fn hadamard_single_block_is_isometry() {
        let op = hadamard_ensemble(4, 1, 5).unwrap();
        for s in 0..10 {
            let x = random_vec(4, 100 + s);
            let ax = op.apply(&x).unwrap();
            assert!((ax.norm() - x.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn hadamard_tight_frame_against_dense_construction() {
        let k = 8;
        let op = hadamard_ensemble(256, k, 2).unwrap();
        let dense = op.to_dense();
        let gram = dense.transpose() * &dense;
        let expected = DMatrix::<f64>::identity(256, 256) * k as f64;
        assert!((gram - expected).amax() < 1e-10 * k as f64);
        for s in 0..20 {
            let x = random_vec(256, 200 + s);
            let back = op.apply_adjoint(&op.apply(&x).unwrap()).unwrap();
            assert!((back - &x * k as f64).norm() <= 1e-10 * k as f64 * x.norm());
        }
    }

    #[test]
    fn hadamard_fast_path_matches_materialized() {
        for &(n, k) in &[(8, 3), (64, 2), (512, 2)] {
            let op = hadamard_ensemble(n, k, 9).unwrap();
            let dense = op.to_dense();
            let x = random_vec(n, 1);
            let y = random_vec(n * k, 2);
            assert!((op.apply(&x).unwrap() - &dense * &x).amax() < 1e-12);
            assert!((op.apply_adjoint(&y).unwrap() - dense.transpose() * &y).amax() < 1e-12);
            assert!((op.row(n + 3) - dense.row(n + 3).transpose()).amax() < 1e-15);
        }
    }

    #[test]
    fn hadamard_first_column_block() {
        let op = MeasurementOperator::Hadamard(HadamardOperator::new(4, vec![vec![1.0; 4]]).unwrap());
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let y = op.apply(&e1).unwrap();
        for v in y.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn dense_identity_and_adjoint_identity() {
        let op = MeasurementOperator::dense(DMatrix::identity(2, 2)).unwrap();
        let x = DVector::from_vec(vec![3.0, -4.0]);
        assert_eq!(op.apply(&x).unwrap(), x);

        let op = gaussian_ensemble(3, 5, 4).unwrap();
        let x = random_vec(3, 5);
        let y = random_vec(5, 6);
        let lhs = op.apply(&x).unwrap().dot(&y);
        let rhs = x.dot(&op.apply_adjoint(&y).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn errors_are_explicit() {
        assert!(matches!(hadamard_ensemble(12, 2, 0), Err(Error::NotPowerOfTwo(12))));
        let op = gaussian_ensemble(3, 5, 4).unwrap();
        assert!(matches!(
            op.apply(&DVector::zeros(4)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(op.apply_adjoint(&DVector::zeros(3)).is_err());
        let mut bad = DMatrix::zeros(2, 2);
        bad[(0, 1)] = f64::NAN;
        assert!(MeasurementOperator::dense(bad).is_err());
    }
}
