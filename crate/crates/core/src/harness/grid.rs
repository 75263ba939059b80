use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{run_indexed, tag, InitSpec};
use crate::error::{Error, Result};
use crate::inner::PreparedSolver;
use crate::measurement::{gaussian_ensemble, gaussian_signal, synthesize_instance, OutlierSpec, ValueModel};
use crate::rng::{derive_seed, role};
use crate::robust_am::{dist, robust_am_prepared, RobustAmConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseGridSpec {
    pub d: usize,
    pub ratios: Vec<f64>,
    pub etas: Vec<f64>,
    pub value_model: ValueModel,
    pub n_operator_sets: usize,
    pub n_signals_per_set: usize,
    pub success_dist_tol: f64,
    pub solver: RobustAmConfig,
    pub init: InitSpec,
    pub master_seed: u64,
}

impl Default for PhaseGridSpec {
    fn default() -> Self {
        Self {
            d: 100,
            ratios: (2..=12).map(f64::from).collect(),
            etas: (0..=8).map(|i| f64::from(i) * 0.05).collect(),
            value_model: ValueModel::Zero,
            n_operator_sets: 20,
            n_signals_per_set: 30,
            success_dist_tol: 1e-3,
            solver: RobustAmConfig::default(),
            init: InitSpec::default(),
            master_seed: 0,
        }
    }
}

impl PhaseGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_operator_sets == 0 || self.n_signals_per_set == 0 {
            return Err(Error::InvalidParameter(
                "grid dimensions and counts must be positive".into(),
            ));
        }
        if self.ratios.is_empty() || self.etas.is_empty() {
            return Err(Error::InvalidParameter(
                "grid needs at least one ratio and one eta".into(),
            ));
        }
        if self.ratios.iter().any(|r| !(*r > 0.0)) || self.etas.iter().any(|e| !(0.0..1.0).contains(e)) {
            return Err(Error::InvalidParameter(
                "ratios must be positive and etas in [0, 1)".into(),
            ));
        }
        if !(self.success_dist_tol > 0.0) {
            return Err(Error::InvalidParameter("success tolerance must be positive".into()));
        }
        self.solver.validate()?;
        self.init.validate()
    }

    pub fn m_for(&self, ratio: f64) -> usize {
        ((ratio * self.d as f64).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub m_over_d: f64,
    pub eta: f64,
    pub success_rate: f64,
    pub n_sets: usize,
    pub n_signals: usize,
    /// Runs that ended in a solver error; they count as not recovered.
    pub failures: usize,
    /// Fraction of single signals recovered, for reference.
    pub signal_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub ratios: Vec<f64>,
    pub etas: Vec<f64>,
    /// Ratio-major: cell `(i, j)` is at `i * etas.len() + j`.
    pub cells: Vec<PhaseCell>,
}

impl PhaseGrid {
    pub fn cell(&self, ratio_idx: usize, eta_idx: usize) -> &PhaseCell {
        &self.cells[ratio_idx * self.etas.len() + eta_idx]
    }

    /// Success rates at a fixed eta, in increasing ratio order.
    pub fn rates_at_eta(&self, eta_idx: usize) -> Vec<f64> {
        (0..self.ratios.len())
            .map(|i| self.cell(i, eta_idx).success_rate)
            .collect()
    }

    /// Success rates at a fixed ratio, in eta order.
    pub fn rates_at_ratio(&self, ratio_idx: usize) -> Vec<f64> {
        (0..self.etas.len())
            .map(|j| self.cell(ratio_idx, j).success_rate)
            .collect()
    }

    /// CSV with header `m_over_d,eta,success_rate,n_sets,n_signals,failures`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "m_over_d,eta,success_rate,n_sets,n_signals,failures")?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.m_over_d, c.eta, c.success_rate, c.n_sets, c.n_signals, c.failures
            )?;
        }
        Ok(())
    }
}

/// Fraction of operator sets whose signals were all recovered.
pub fn all_signals_rate(outcomes: &[Vec<bool>]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    let ok = outcomes.iter().filter(|set| set.iter().all(|&r| r)).count();
    ok as f64 / outcomes.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Recovered,
    Missed,
    Failed,
}

/// Runs every (ratio, eta, operator set) unit of the grid; each unit shares
/// one prepared solver across its signals.
pub fn run_phase_grid(spec: &PhaseGridSpec, parallelism: usize) -> Result<PhaseGrid> {
    spec.validate()?;
    let (nr, ne, ns) = (spec.ratios.len(), spec.etas.len(), spec.n_operator_sets);
    let units = run_indexed(parallelism, nr * ne * ns, |u| {
        let (ri, rest) = (u / (ne * ns), u % (ne * ns));
        let (ei, set) = (rest / ns, rest % ns);
        run_unit(spec, ri, ei, set)
    })?;
    let mut cells = Vec::with_capacity(nr * ne);
    for (cell_idx, chunk) in units.chunks(ns).enumerate() {
        let (ri, ei) = (cell_idx / ne, cell_idx % ne);
        let recovered: Vec<Vec<bool>> = chunk
            .iter()
            .map(|set| set.iter().map(|o| *o == Outcome::Recovered).collect())
            .collect();
        let flat = chunk.iter().flatten();
        let total = ns * spec.n_signals_per_set;
        cells.push(PhaseCell {
            m_over_d: spec.ratios[ri],
            eta: spec.etas[ei],
            success_rate: all_signals_rate(&recovered),
            n_sets: ns,
            n_signals: spec.n_signals_per_set,
            failures: flat.clone().filter(|o| **o == Outcome::Failed).count(),
            signal_rate: flat.filter(|o| **o == Outcome::Recovered).count() as f64 / total as f64,
        });
        log::info!(
            "grid cell m/d = {}, eta = {}: success rate {}",
            spec.ratios[ri],
            spec.etas[ei],
            cells.last().map_or(0.0, |c| c.success_rate)
        );
    }
    Ok(PhaseGrid {
        ratios: spec.ratios.clone(),
        etas: spec.etas.clone(),
        cells,
    })
}

fn run_unit(spec: &PhaseGridSpec, ri: usize, ei: usize, set: usize) -> Vec<Outcome> {
    let path = [tag::GRID, ri as u64, ei as u64, set as u64];
    let seed = |extra: &[u64]| derive_seed(spec.master_seed, &[&path[..], extra].concat());
    let m = spec.m_for(spec.ratios[ri]);
    let n = spec.n_signals_per_set;
    let prepared = gaussian_ensemble(spec.d, m, seed(&[role::OPERATOR])).and_then(|op| {
        let op = Arc::new(op);
        let solver = PreparedSolver::prepare(&op, &spec.solver.inner)?;
        Ok((op, solver))
    });
    let (op, solver) = match prepared {
        Ok(p) => p,
        Err(e) => {
            log::warn!("grid unit ({ri}, {ei}, {set}) failed to set up: {e}");
            return vec![Outcome::Failed; n];
        }
    };
    let outliers = OutlierSpec::new(spec.etas[ei], spec.value_model);
    (0..n as u64)
        .map(|j| {
            let run = || -> Result<bool> {
                let x_star = gaussian_signal(spec.d, seed(&[j, role::SIGNAL]));
                let inst = synthesize_instance(op.clone(), x_star, &outliers, seed(&[j, role::SUPPORT]))?;
                let x0 = spec.init.initial_point(&inst, seed(&[j, role::INIT]))?;
                let res = robust_am_prepared(&inst, &x0, &spec.solver, &solver)?;
                Ok(dist(&res.x_hat, &inst.x_star) <= spec.success_dist_tol)
            };
            match run() {
                Ok(true) => Outcome::Recovered,
                Ok(false) => Outcome::Missed,
                Err(e) => {
                    log::warn!("grid run ({ri}, {ei}, {set}, {j}) failed: {e}");
                    Outcome::Failed
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn success_needs_every_signal_of_a_set() {
        // 3 sets: all recovered, one miss, all recovered
        let mixed = vec![vec![true; 4], vec![true, true, false, true], vec![true; 4]];
        assert!((all_signals_rate(&mixed) - 2.0 / 3.0).abs() < 1e-15);
        // 11 of 12 signals recovered, yet only 2 of 3 sets count
        let per_signal = mixed.iter().flatten().filter(|r| **r).count() as f64 / 12.0;
        assert!(per_signal > all_signals_rate(&mixed));
        assert_eq!(all_signals_rate(&[vec![false, true], vec![true, false]]), 0.0);
        assert_eq!(all_signals_rate(&[]), 0.0);
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let cell = |r: f64, e: f64| PhaseCell {
            m_over_d: r,
            eta: e,
            success_rate: 0.5,
            n_sets: 2,
            n_signals: 3,
            failures: 0,
            signal_rate: 0.5,
        };
        let grid = PhaseGrid {
            ratios: vec![2.0, 4.0],
            etas: vec![0.0, 0.1],
            cells: vec![cell(2.0, 0.0), cell(2.0, 0.1), cell(4.0, 0.0), cell(4.0, 0.1)],
        };
        let mut out = Vec::new();
        grid.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "m_over_d,eta,success_rate,n_sets,n_signals,failures");
        assert_eq!(lines[2], "2,0.1,0.5,2,3,0");
        assert_eq!(grid.rates_at_ratio(1), vec![0.5, 0.5]);
    }

    #[test]
    fn small_grid_corners() {
        let spec = PhaseGridSpec {
            d: 10,
            ratios: vec![1.0, 12.0],
            etas: vec![0.0],
            n_operator_sets: 3,
            n_signals_per_set: 3,
            ..PhaseGridSpec::default()
        };
        let grid = run_phase_grid(&spec, 2).unwrap();
        assert_eq!(grid.cells.len(), 2);
        assert_eq!(grid.cell(0, 0).success_rate, 0.0);
        assert_eq!(grid.cell(1, 0).success_rate, 1.0);
        assert_eq!(run_phase_grid(&spec, 1).unwrap(), grid);
    }

    #[test]
    fn square_systems_never_succeed() {
        let spec = PhaseGridSpec {
            d: 20,
            ratios: vec![1.0],
            etas: vec![0.0],
            n_operator_sets: 3,
            n_signals_per_set: 5,
            master_seed: 8,
            ..Default::default()
        };
        let g = run_phase_grid(&spec, 2).unwrap();
        assert_eq!(g.cell(0, 0).success_rate, 0.0);
    }
}
