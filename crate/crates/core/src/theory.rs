//! Quantities from the local convergence guarantee.
//!
//! With `θ = 2/25` the one-step recursion reads
//!
//! ```text
//! dist(x_{k+1}, x⋆) ≤ ν_η dist(x_k, x⋆) + ε_k / C_η
//! ```
//!
//! where
//!
//! ```text
//! c₀  = 4/(25π) (√(2/π) + √(2 ln(25eπ/4))) + 1/(625√π)
//! C_η = (1 − 2η) √(2/π) − c₀ − (1 + √η)/250
//! ν_η = c₀ / C_η
//! ```
//!
//! Summing the geometric series with `ε_k ≤ ε_max` gives the noise factor
//! `λ_η = 1/(C_η (1 − ν_η))` in `dist(x_k, x⋆) ≤ ν_η^k dist(x₀, x⋆) + λ_η ε_max`.

use std::f64::consts::{E, PI};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{role, stream};
use crate::robust_am::IterateTrace;

/// Largest outlier fraction covered by the guarantee.
pub const ETA_MAX: f64 = 0.25;

/// Angle of the wedge used in the proof.
pub const BASIN_ANGLE: f64 = 2.0 / 25.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub eta: f64,
    pub c0: f64,
    pub c_eta: f64,
    pub nu_eta: f64,
    pub lambda_eta: f64,
}

pub fn c0() -> f64 {
    4.0 / (25.0 * PI) * ((2.0 / PI).sqrt() + (2.0 * (25.0 * E * PI / 4.0).ln()).sqrt()) + 1.0 / (625.0 * PI.sqrt())
}

/// Constants for `η ∈ [0, 1/4]`.
pub fn rate_constants(eta: f64) -> Result<RateConstants> {
    if !(0.0..=ETA_MAX).contains(&eta) {
        return Err(Error::InvalidParameter(format!(
            "rate constants are defined for eta in [0, 0.25], got {eta}"
        )));
    }
    let c0 = c0();
    let c_eta = (1.0 - 2.0 * eta) * (2.0 / PI).sqrt() - c0 - (1.0 + eta.sqrt()) / 250.0;
    let nu_eta = c0 / c_eta;
    Ok(RateConstants {
        eta,
        c0,
        c_eta,
        nu_eta,
        lambda_eta: 1.0 / (c_eta * (1.0 - nu_eta)),
    })
}

/// `sin(2/25) ‖x⋆‖`.
pub fn basin_radius(norm_xstar: f64) -> f64 {
    BASIN_ANGLE.sin() * norm_xstar
}

/// Directions whose inner products with `x` and `z` have different signs.
#[derive(Clone, Debug, PartialEq)]
pub struct Wedge {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub theta: f64,
}

impl Wedge {
    pub fn new(x: DVector<f64>, z: DVector<f64>) -> Result<Self> {
        if x.len() != z.len() {
            return Err(Error::DimensionMismatch {
                what: "wedge vectors",
                expected: x.len(),
                got: z.len(),
            });
        }
        let (nx, nz) = (x.norm(), z.norm());
        if !(nx > 0.0 && nz > 0.0) {
            return Err(Error::InvalidParameter("wedge vectors must be nonzero".into()));
        }
        let theta = (x.dot(&z) / (nx * nz)).clamp(-1.0, 1.0).acos();
        Ok(Self { x, z, theta })
    }

    /// Gaussian measure of the wedge, `θ/π`.
    pub fn probability(&self) -> f64 {
        self.theta / PI
    }
}

const WEDGE_BLOCK: usize = 4096;

/// Fraction of `n_samples` standard normal `g` with
/// `sign⟨g, x⟩ ≠ sign⟨g, z⟩`. Blocks of samples use their own seeds, so the
/// estimate does not depend on the thread count.
pub fn wedge_probability_mc(x: &DVector<f64>, z: &DVector<f64>, n_samples: usize, seed: u64) -> Result<f64> {
    let w = Wedge::new(x.clone(), z.clone())?;
    if n_samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let d = w.x.len();
    let blocks = n_samples.div_ceil(WEDGE_BLOCK);
    let hits: usize = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, &[role::WEDGE, b as u64]);
            let count = WEDGE_BLOCK.min(n_samples - b * WEDGE_BLOCK);
            let mut hits = 0;
            let mut g = DVector::zeros(d);
            for _ in 0..count {
                g.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                if (g.dot(&w.x) < 0.0) != (g.dot(&w.z) < 0.0) {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(hits as f64 / n_samples as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearRateFit {
    /// `exp(slope)` of the least-squares line through `(k, ln dist_k)`.
    pub rate: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Fits `ln dist(x_k, x⋆)` against `k` over the leading run of points with
/// `dist > 10 · floor`, starting at `k = 0`. Needs at least `window` points.
pub fn certify_linear_rate(trace: &IterateTrace, window: usize, floor: f64) -> Result<LinearRateFit> {
    if window < 2 {
        return Err(Error::InvalidParameter("window must be at least 2".into()));
    }
    let points: Vec<(f64, f64)> = trace
        .dist_series()
        .into_iter()
        .take_while(|(_, d)| *d > 10.0 * floor)
        .map(|(k, d)| (k as f64, d.ln()))
        .collect();
    if points.len() < window {
        return Err(Error::Degenerate(format!(
            "only {} trace points above the floor, need {window}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean_k = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_k).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_k) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - mean_y - slope * (p.0 - mean_k)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LinearRateFit {
        rate: slope.exp(),
        r_squared,
        n_points: points.len(),
    })
}

/// One CSV row per `η`: `eta,c0,C_eta,nu_eta,lambda_eta`.
pub fn rate_table_csv(etas: &[f64]) -> Result<String> {
    let mut out = String::from("eta,c0,C_eta,nu_eta,lambda_eta\n");
    for &eta in etas {
        let r = rate_constants(eta)?;
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            eta, r.c0, r.c_eta, r.nu_eta, r.lambda_eta
        ));
    }
    Ok(out)
}
