use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Cauchy, Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::operator::MeasurementOperator;
use crate::error::{check_len, Error, Result};
use crate::rng;

/// How outlier positions are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportRule {
    /// Uniform over all subsets of `[m]` of size `⌊η m⌋`.
    UniformRandom,
    /// A caller-chosen index set; must have exactly `⌊η m⌋` distinct entries.
    Fixed(Vec<usize>),
}

/// Distribution of the corrupted values `ξ_i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ValueModel {
    /// Cauchy with median 0 and the given scale (median absolute deviation).
    Cauchy { scale: f64 },
    /// Uniform on `(-w, w)` with `w = half_width_factor · d · ‖x⋆‖²`.
    UniformScaled { half_width_factor: f64 },
    /// Measurements replaced by zero.
    Zero,
}

impl ValueModel {
    pub fn cauchy() -> Self {
        Self::Cauchy { scale: 1.0 }
    }

    pub fn uniform_scaled() -> Self {
        Self::UniformScaled { half_width_factor: 0.5 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Cauchy { .. } => "cauchy",
            Self::UniformScaled { .. } => "uniform_scaled",
            Self::Zero => "zero",
        }
    }

    /// Parses `cauchy`, `uniform`/`uniform_scaled` or `zero` with default parameters.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "cauchy" => Some(Self::cauchy()),
            "uniform" | "uniform_scaled" => Some(Self::uniform_scaled()),
            "zero" => Some(Self::Zero),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    pub fraction: f64,
    pub support: SupportRule,
    pub values: ValueModel,
}

impl OutlierSpec {
    pub fn new(fraction: f64, values: ValueModel) -> Self {
        Self {
            fraction,
            support: SupportRule::UniformRandom,
            values,
        }
    }

    pub fn none() -> Self {
        Self::new(0.0, ValueModel::Zero)
    }

    /// `⌊η m⌋`, tolerant of representation error in `η` (0.29 · 100 is 29).
    pub fn outlier_count(&self, m: usize) -> usize {
        (self.fraction * m as f64 + 1e-9).floor() as usize
    }
}

/// Seeds that produced an instance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedManifest {
    /// Seed of the operator, when it came from one of the ensemble constructors.
    pub operator: Option<u64>,
    /// Seed of the ground truth, when it was drawn at random.
    pub signal: Option<u64>,
    /// Seed of the outlier support and values.
    pub corruption: u64,
}

/// Operator, corrupted amplitudes and the ground truth that produced them.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub operator: Arc<MeasurementOperator>,
    pub b: DVector<f64>,
    pub x_star: DVector<f64>,
    /// Sorted outlier indices.
    pub outlier_support: Vec<usize>,
    pub outliers: OutlierSpec,
    pub seeds: SeedManifest,
}

impl ProblemInstance {
    pub fn m(&self) -> usize {
        self.operator.rows()
    }

    pub fn d(&self) -> usize {
        self.operator.cols()
    }

    /// `true` for indices that carry clean amplitudes.
    pub fn inlier_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.m()];
        for &i in &self.outlier_support {
            mask[i] = false;
        }
        mask
    }
}

/// Draws a ground truth `x⋆ ~ Normal(0, I_d)`.
pub fn gaussian_signal(d: usize, seed: u64) -> DVector<f64> {
    let mut rng = rng::stream(seed, &[rng::role::SIGNAL]);
    DVector::from_fn(d, |_, _| rng.sample(rand_distr::StandardNormal))
}

/// Builds `b_i = |⟨a_i, x⋆⟩|` on inliers and `b_i = ξ_i` on the outlier support.
pub fn synthesize_instance(
    operator: Arc<MeasurementOperator>,
    x_star: DVector<f64>,
    spec: &OutlierSpec,
    seed: u64,
) -> Result<ProblemInstance> {
    let m = operator.rows();
    check_len("ground truth", operator.cols(), x_star.len())?;
    if !(0.0..1.0).contains(&spec.fraction) {
        return Err(Error::InvalidParameter(format!(
            "outlier fraction {} outside [0, 1)",
            spec.fraction
        )));
    }
    if x_star.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("ground truth has non-finite entries".into()));
    }
    let count = spec.outlier_count(m);
    if count >= m {
        return Err(Error::InvalidParameter(format!(
            "outlier count {count} leaves no inliers among m = {m}"
        )));
    }

    let support = match &spec.support {
        SupportRule::UniformRandom => {
            let mut rng = rng::stream(seed, &[rng::role::SUPPORT]);
            let mut idx = rand::seq::index::sample(&mut rng, m, count).into_vec();
            idx.sort_unstable();
            idx
        }
        SupportRule::Fixed(set) => {
            let mut idx = set.clone();
            idx.sort_unstable();
            idx.dedup();
            if idx.len() != count || idx.last().is_some_and(|&i| i >= m) {
                return Err(Error::InvalidParameter(format!(
                    "fixed support must hold exactly {count} distinct indices below {m}"
                )));
            }
            idx
        }
    };

    let mut b = operator.apply(&x_star)?;
    b.iter_mut().for_each(|v| *v = v.abs());

    let mut rng = rng::stream(seed, &[rng::role::OUTLIER_VALUES]);
    match spec.values {
        ValueModel::Zero => support.iter().for_each(|&i| b[i] = 0.0),
        ValueModel::Cauchy { scale } => {
            let dist = Cauchy::new(0.0, scale).map_err(|e| Error::InvalidParameter(format!("cauchy scale: {e}")))?;
            support.iter().for_each(|&i| b[i] = dist.sample(&mut rng));
        }
        ValueModel::UniformScaled { half_width_factor } => {
            let w = half_width_factor * x_star.len() as f64 * x_star.norm_squared();
            if w > 0.0 {
                let dist = Uniform::new(-w, w).map_err(|e| Error::InvalidParameter(format!("uniform width: {e}")))?;
                support.iter().for_each(|&i| b[i] = dist.sample(&mut rng));
            } else {
                support.iter().for_each(|&i| b[i] = 0.0);
            }
        }
    }

    Ok(ProblemInstance {
        operator,
        b,
        x_star,
        outlier_support: support,
        outliers: spec.clone(),
        seeds: SeedManifest {
            operator: None,
            signal: None,
            corruption: seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::gaussian_ensemble;

    fn op(d: usize, m: usize) -> Arc<MeasurementOperator> {
        Arc::new(gaussian_ensemble(d, m, 17).unwrap())
    }

    fn max_clean_error(inst: &ProblemInstance) -> f64 {
        let clean = inst.operator.apply(&inst.x_star).unwrap();
        let mask = inst.inlier_mask();
        (0..inst.m())
            .filter(|&i| mask[i])
            .map(|i| (inst.b[i] - clean[i].abs()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn no_outliers_gives_clean_amplitudes() {
        let a = op(5, 40);
        let x = gaussian_signal(5, 1);
        let inst = synthesize_instance(a.clone(), x.clone(), &OutlierSpec::none(), 3).unwrap();
        assert!(inst.outlier_support.is_empty());
        let clean = a.apply(&x).unwrap().abs();
        assert_eq!(inst.b, clean);
    }

    #[test]
    fn zero_model_replaces_exactly_floor_eta_m_entries() {
        let a = op(10, 123);
        let x = gaussian_signal(10, 2);
        let spec = OutlierSpec::new(0.3, ValueModel::Zero);
        let inst = synthesize_instance(a, x, &spec, 4).unwrap();
        assert_eq!(inst.outlier_support.len(), 36);
        assert!(inst.outlier_support.iter().all(|&i| inst.b[i] == 0.0));
        assert_eq!(max_clean_error(&inst), 0.0);
    }

    #[test]
    fn cauchy_magnitudes_have_unit_median() {
        let a = op(2, 10_000);
        let x = gaussian_signal(2, 3);
        let spec = OutlierSpec::new(0.25, ValueModel::cauchy());
        let inst = synthesize_instance(a, x, &spec, 5).unwrap();
        let mut mags: Vec<f64> = inst.outlier_support.iter().map(|&i| inst.b[i].abs()).collect();
        mags.sort_by(f64::total_cmp);
        let med = mags[mags.len() / 2];
        assert!((med - 1.0).abs() < 0.15, "median |ξ| = {med}");
        assert_eq!(max_clean_error(&inst), 0.0);
    }

    #[test]
    fn uniform_values_lie_in_scaled_interval() {
        let a = op(4, 200);
        let x = gaussian_signal(4, 6);
        let w = 0.5 * 4.0 * x.norm_squared();
        let spec = OutlierSpec::new(0.2, ValueModel::uniform_scaled());
        let inst = synthesize_instance(a, x, &spec, 7).unwrap();
        for &i in &inst.outlier_support {
            assert!(inst.b[i].abs() < w);
        }
    }

    #[test]
    fn same_seed_same_instance() {
        let a = op(6, 60);
        let x = gaussian_signal(6, 8);
        let spec = OutlierSpec::new(0.2, ValueModel::cauchy());
        let i1 = synthesize_instance(a.clone(), x.clone(), &spec, 9).unwrap();
        let i2 = synthesize_instance(a.clone(), x.clone(), &spec, 9).unwrap();
        let i3 = synthesize_instance(a, x, &spec, 10).unwrap();
        assert_eq!(i1.b, i2.b);
        assert_eq!(i1.outlier_support, i2.outlier_support);
        assert_ne!(i1.b, i3.b);
    }

    #[test]
    fn fixed_support_is_validated() {
        let a = op(3, 10);
        let x = gaussian_signal(3, 1);
        let good = OutlierSpec {
            fraction: 0.2,
            support: SupportRule::Fixed(vec![7, 2]),
            values: ValueModel::Zero,
        };
        let inst = synthesize_instance(a.clone(), x.clone(), &good, 0).unwrap();
        assert_eq!(inst.outlier_support, vec![2, 7]);
        let wrong_size = OutlierSpec {
            support: SupportRule::Fixed(vec![1]),
            ..good.clone()
        };
        assert!(synthesize_instance(a.clone(), x.clone(), &wrong_size, 0).is_err());
        let out_of_range = OutlierSpec {
            support: SupportRule::Fixed(vec![1, 10]),
            ..good
        };
        assert!(synthesize_instance(a, x, &out_of_range, 0).is_err());
    }

    #[test]
    fn rejects_bad_fractions() {
        let a = op(3, 10);
        let x = gaussian_signal(3, 1);
        for eta in [-0.1, 1.0, 1.5] {
            let spec = OutlierSpec::new(eta, ValueModel::Zero);
            assert!(synthesize_instance(a.clone(), x.clone(), &spec, 0).is_err());
        }
        // 0.95 * 10 = 9 outliers still leaves one inlier
        let spec = OutlierSpec::new(0.95, ValueModel::Zero);
        assert!(synthesize_instance(a, x, &spec, 0).is_ok());
    }

    #[test]
    fn floor_count_tolerates_representation_error() {
        assert_eq!(OutlierSpec::new(0.29, ValueModel::Zero).outlier_count(100), 29);
        assert_eq!(OutlierSpec::new(0.3, ValueModel::Zero).outlier_count(7), 2);
    }
}
