use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{all_signals_rate, run_indexed, tag, InitSpec, PhaseCell, PhaseGrid};
use crate::error::{Error, Result};
use crate::inner::PreparedSolver;
use crate::measurement::{
    hadamard_ensemble, is_degenerate, list_pgm_files, pad_pixels, synthesize_instance, synthetic_digits, OutlierSpec,
    ValueModel,
};
use crate::rng::{derive_seed, role};
use crate::robust_am::{dist, robust_am_prepared, RobustAmConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageExperimentSpec {
    /// Directory of PGM images; `None` uses the synthetic digits.
    pub image_dir: Option<PathBuf>,
    pub n_synthetic: usize,
    pub synthetic_size: u32,
    pub ks: Vec<usize>,
    pub etas: Vec<f64>,
    /// Success when `dist(x̂, x⋆) ≤ tol · ‖x⋆‖`.
    pub success_rel_tol: f64,
    pub solver: RobustAmConfig,
    pub init: InitSpec,
    pub master_seed: u64,
}

impl Default for ImageExperimentSpec {
    fn default() -> Self {
        Self {
            image_dir: None,
            n_synthetic: 50,
            synthetic_size: 16,
            ks: (1..=12).collect(),
            etas: (0..=8).map(|i| f64::from(i) * 0.05).collect(),
            success_rel_tol: 1e-3,
            solver: RobustAmConfig::default(),
            init: InitSpec::default(),
            master_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageExperimentResult {
    /// Cells indexed by `k` (stored as the ratio `m/n`) and `η`; each image
    /// is its own operator set with one signal.
    pub grid: PhaseGrid,
    pub n: usize,
    pub n_images: usize,
    /// Files that could not be decoded.
    pub skipped: usize,
    /// All-zero images excluded from the rates.
    pub degenerate: usize,
}

/// Loads the PGM images of a directory, padded to a common power-of-two
/// length. Returns the vectors, that length and the number of unreadable files.
pub fn load_image_dir(dir: &Path) -> Result<(Vec<DVector<f64>>, usize, usize)> {
    let mut grids = Vec::new();
    let mut skipped = 0;
    for path in list_pgm_files(dir)? {
        match image::open(&path) {
            Ok(img) => grids.push(img.to_luma8()),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped += 1;
            }
        }
    }
    let n = grids
        .iter()
        .map(|g| (g.width() as usize).next_power_of_two() * (g.height() as usize).next_power_of_two())
        .max()
        .unwrap_or(1);
    let vectors = grids
        .iter()
        .map(|g| pad_pixels(g.width() as usize, g.height() as usize, g.as_raw(), n))
        .collect::<Result<Vec<_>>>()?;
    Ok((vectors, n, skipped))
}

fn ground_truths(spec: &ImageExperimentSpec) -> Result<(Vec<DVector<f64>>, usize, usize)> {
    match &spec.image_dir {
        Some(dir) => load_image_dir(dir),
        None => {
            let size = spec.synthetic_size as usize;
            let n = size.next_power_of_two().pow(2);
            let seed = derive_seed(spec.master_seed, &[tag::IMAGES, role::IMAGE]);
            let vectors = synthetic_digits(spec.n_synthetic, spec.synthetic_size, seed)
                .iter()
                .map(|g| pad_pixels(size, size, g.as_raw(), n))
                .collect::<Result<Vec<_>>>()?;
            Ok((vectors, n, 0))
        }
    }
}

/// Zero-valued outliers on `k` random-sign Hadamard modulations of each image.
pub fn run_image_experiment(spec: &ImageExperimentSpec, parallelism: usize) -> Result<ImageExperimentResult> {
    if spec.ks.is_empty() || spec.etas.is_empty() || spec.ks.contains(&0) {
        return Err(Error::InvalidParameter(
            "image experiment needs positive k values and etas".into(),
        ));
    }
    if !(spec.success_rel_tol > 0.0) {
        return Err(Error::InvalidParameter("success tolerance must be positive".into()));
    }
    spec.solver.validate()?;
    spec.init.validate()?;
    let (all, n, skipped) = ground_truths(spec)?;
    let total = all.len();
    let images: Vec<DVector<f64>> = all.into_iter().filter(|v| !is_degenerate(v)).collect();
    let degenerate = total - images.len();
    if degenerate > 0 {
        log::warn!("{degenerate} all-zero images excluded");
    }
    if images.is_empty() {
        return Err(Error::Degenerate("no usable images".into()));
    }

    let (nk, ne, ni) = (spec.ks.len(), spec.etas.len(), images.len());
    let outcomes = run_indexed(parallelism, nk * ne * ni, |u| {
        let (ki, rest) = (u / (ne * ni), u % (ne * ni));
        let (ei, img) = (rest / ni, rest % ni);
        let seed = |r: u64| derive_seed(spec.master_seed, &[tag::IMAGES, ki as u64, ei as u64, img as u64, r]);
        let run = || -> Result<bool> {
            let op = Arc::new(hadamard_ensemble(n, spec.ks[ki], seed(role::OPERATOR))?);
            let solver = PreparedSolver::prepare(&op, &spec.solver.inner)?;
            let x_star = images[img].clone();
            let inst = synthesize_instance(
                op,
                x_star,
                &OutlierSpec::new(spec.etas[ei], ValueModel::Zero),
                seed(role::SUPPORT),
            )?;
            let x0 = spec.init.initial_point(&inst, seed(role::INIT))?;
            let res = robust_am_prepared(&inst, &x0, &spec.solver, &solver)?;
            Ok(dist(&res.x_hat, &inst.x_star) <= spec.success_rel_tol * inst.x_star.norm())
        };
        run().map_err(|e| {
            log::warn!(
                "image run (k = {}, eta = {}, image {img}) failed: {e}",
                spec.ks[ki],
                spec.etas[ei]
            );
        })
    })?;

    let cells = outcomes
        .chunks(ni)
        .enumerate()
        .map(|(c, chunk)| {
            let recovered: Vec<Vec<bool>> = chunk.iter().map(|o| vec![*o == Ok(true)]).collect();
            let rate = all_signals_rate(&recovered);
            PhaseCell {
                m_over_d: spec.ks[c / ne] as f64,
                eta: spec.etas[c % ne],
                success_rate: rate,
                n_sets: ni,
                n_signals: 1,
                failures: chunk.iter().filter(|o| o.is_err()).count(),
                signal_rate: rate,
            }
        })
        .collect();
    Ok(ImageExperimentResult {
        grid: PhaseGrid {
            ratios: spec.ks.iter().map(|&k| k as f64).collect(),
            etas: spec.etas.clone(),
            cells,
        },
        n,
        n_images: ni,
        skipped,
        degenerate,
    })
}
