use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use robust_phase::harness::{
    export_svg, run_convergence, run_image_experiment, run_phase_grid, run_runtime_comparison, write_runtime_csv,
    InitSpec, Manifest, PlotKind, Series,
};
use robust_phase::inner::{lad_bruteforce_oracle, InnerSolverKind, PreparedSolver, SignedLadProblem};
use robust_phase::measurement::{
    gaussian_ensemble, gaussian_signal, hadamard_ensemble, synthesize_instance, OutlierSpec, ValueModel, PIXEL_SCALING,
};
use robust_phase::rng::{derive_seed, role, stream};
use robust_phase::robust_am::{dist, robust_am, IterateTrace, RobustAmConfig, SpectralConfig};
use robust_phase::theory::{c0, rate_constants, rate_table_csv};
use serde::Serialize;

use crate::config::{default_parallelism, parse_list, parse_usize_list, ConfigFile, OperatorChoice};
use crate::error::CliError;
use crate::{Command, CommonArgs, SolverArgs};

struct Resolved {
    file: ConfigFile,
    seed: Option<u64>,
    parallelism: usize,
    out: Option<PathBuf>,
    wall_time: bool,
}

fn resolve(common: &CommonArgs) -> Result<Resolved, CliError> {
    let file = match &common.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let parallelism = match common.parallelism.or(file.run.parallelism) {
        Some(0) => return Err(CliError::Config("parallelism must be at least 1".into())),
        Some(n) => n,
        None => default_parallelism()?,
    };
    Ok(Resolved {
        seed: common.seed.or(file.run.seed),
        out: common.out.clone().or_else(|| file.run.out.clone()),
        parallelism,
        wall_time: common.wall_time,
        file,
    })
}

fn config_err(e: String) -> CliError {
    CliError::Config(e)
}

fn model(name: &str) -> Result<ValueModel, CliError> {
    ValueModel::from_name(name).ok_or_else(|| config_err(format!("unknown outlier model {name:?}")))
}

fn list(text: &Option<String>) -> Result<Option<Vec<f64>>, CliError> {
    text.as_deref().map(parse_list).transpose().map_err(config_err)
}

fn apply_solver(args: &SolverArgs, outer: &mut RobustAmConfig, init: &mut InitSpec) -> Result<(), CliError> {
    if let Some(name) = &args.solver {
        let kind = InnerSolverKind::from_name(name).ok_or_else(|| config_err(format!("unknown solver {name:?}")))?;
        if outer.inner.kind() != kind {
            outer.inner = kind.default_config();
        }
    }
    if let Some(n) = args.max_outer {
        outer.max_outer = n;
    }
    match args.init.as_deref() {
        None => {}
        Some("spectral") => {
            if !matches!(init, InitSpec::Spectral(_)) {
                *init = InitSpec::Spectral(SpectralConfig::default());
            }
        }
        Some("oracle") => {
            if !matches!(init, InitSpec::Oracle { .. }) {
                *init = InitSpec::Oracle {
                    radius_fraction: robust_phase::theory::basin_radius(1.0),
                };
            }
        }
        Some(other) => return Err(config_err(format!("unknown init {other:?}"))),
    }
    if let Some(r) = args.radius {
        match init {
            InitSpec::Oracle { radius_fraction } => *radius_fraction = r,
            InitSpec::Spectral(_) => return Err(config_err("--radius needs --init oracle".into())),
        }
    }
    Ok(())
}

fn out_dir(res: &Resolved, default: &str) -> Result<PathBuf, CliError> {
    let dir = res.out.clone().unwrap_or_else(|| PathBuf::from(default));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", path.display())))
}

fn write_with<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

fn write_manifest(path: &Path, mut manifest: Manifest) -> Result<(), CliError> {
    manifest.finish();
    let json = manifest.to_json()?;
    std::fs::write(path, json + "\n").map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

fn manifest<C: Serialize>(name: &str, spec: &C, seed: u64, res: &Resolved) -> Result<Manifest, CliError> {
    Ok(Manifest::new(name, spec, seed, res.parallelism)?)
}

fn trace_series(label: String, trace: &IterateTrace) -> Series {
    Series {
        label,
        points: trace.dist_series().into_iter().map(|(k, d)| (k as f64, d)).collect(),
    }
}

pub fn dispatch(common: &CommonArgs, command: Command) -> Result<(), CliError> {
    let res = resolve(common)?;
    if common.print_config {
        print!("{}", res.file.to_toml()?);
        return Ok(());
    }
    match command {
        Command::Solve {
            d,
            m,
            k,
            operator,
            eta,
            model: value_model,
            solver,
        } => {
            let mut spec = res.file.solve.clone();
            if let Some(v) = d {
                spec.d = v;
            }
            if let Some(v) = m {
                spec.m = v;
            }
            if let Some(v) = k {
                spec.k = v;
            }
            if let Some(v) = eta {
                spec.eta = v;
            }
            if let Some(name) = &value_model {
                spec.value_model = model(name)?;
            }
            match operator.as_deref() {
                None => {}
                Some("gaussian") => spec.operator = OperatorChoice::Gaussian,
                Some("hadamard") => spec.operator = OperatorChoice::Hadamard,
                Some(other) => return Err(config_err(format!("unknown operator {other:?}"))),
            }
            apply_solver(&solver, &mut spec.solver, &mut spec.init)?;
            if let Some(s) = res.seed {
                spec.master_seed = s;
            }
            let seed = spec.master_seed;
            let started = manifest("solve", &spec, seed, &res)?;

            let op_seed = derive_seed(seed, &[role::OPERATOR]);
            let op = match spec.operator {
                OperatorChoice::Gaussian => gaussian_ensemble(spec.d, spec.m, op_seed)?,
                OperatorChoice::Hadamard => hadamard_ensemble(spec.d, spec.k, op_seed)?,
            };
            let x_star = gaussian_signal(spec.d, derive_seed(seed, &[role::SIGNAL]));
            let inst = synthesize_instance(
                Arc::new(op),
                x_star,
                &OutlierSpec::new(spec.eta, spec.value_model),
                derive_seed(seed, &[role::SUPPORT]),
            )?;
            let x0 = spec.init.initial_point(&inst, derive_seed(seed, &[role::INIT]))?;
            let cfg = RobustAmConfig {
                record_trace: true,
                ..spec.solver.clone()
            };
            let result = robust_am(&inst, &x0, &cfg)?;
            let final_dist = dist(&result.x_hat, &inst.x_star);
            let objective = robust_phase::robust_am::amplitude_objective(&inst.operator, &inst.b, &result.x_hat)?;
            println!("dist = {final_dist:.6e}");
            println!("objective = {objective:.6e}");
            println!("outer_iterations = {}", result.outer_iterations);
            println!("status = {:?}", result.status);
            if res.out.is_some() {
                let dir = out_dir(&res, ".")?;
                let trace = result.trace.unwrap_or_default();
                write_with(&dir.join("trace.csv"), |w| trace.write_csv(w, res.wall_time))?;
                export_svg(
                    &PlotKind::Lines {
                        series: &[trace_series("Robust-AM".into(), &trace)],
                        x_label: "outer iteration",
                        y_label: "dist",
                    },
                    &dir.join("trace.svg"),
                )?;
                write_manifest(&dir.join("manifest.json"), started)?;
            }
            Ok(())
        }

        Command::PhaseGrid {
            d,
            ratios,
            etas,
            model: value_model,
            sets,
            signals,
            tol,
            solver,
        } => {
            let mut spec = res.file.phase_grid.clone();
            if let Some(v) = d {
                spec.d = v;
            }
            if let Some(v) = list(&ratios)? {
                spec.ratios = v;
            }
            if let Some(v) = list(&etas)? {
                spec.etas = v;
            }
            if let Some(name) = &value_model {
                spec.value_model = model(name)?;
            }
            if let Some(v) = sets {
                spec.n_operator_sets = v;
            }
            if let Some(v) = signals {
                spec.n_signals_per_set = v;
            }
            if let Some(v) = tol {
                spec.success_dist_tol = v;
            }
            apply_solver(&solver, &mut spec.solver, &mut spec.init)?;
            if let Some(s) = res.seed {
                spec.master_seed = s;
            }
            let started = manifest("phase-grid", &spec, spec.master_seed, &res)?;
            let dir = out_dir(&res, "results")?;
            let grid = run_phase_grid(&spec, res.parallelism)?;
            write_with(&dir.join("phase_grid.csv"), |w| grid.write_csv(w))?;
            export_svg(&PlotKind::Heatmap(&grid), &dir.join("phase_grid.svg"))?;
            write_manifest(&dir.join("manifest.json"), started)?;
            println!(
                "wrote {} cells to {}",
                grid.cells.len(),
                dir.join("phase_grid.csv").display()
            );
            Ok(())
        }

        Command::Converge {
            d,
            m,
            eta,
            model: value_model,
            trials,
            solver,
        } => {
            let mut spec = res.file.convergence.clone();
            if let Some(v) = d {
                spec.d = v;
            }
            if let Some(v) = m {
                spec.m = v;
            }
            if let Some(v) = eta {
                spec.eta = v;
            }
            if let Some(name) = &value_model {
                spec.value_model = model(name)?;
            }
            if let Some(v) = trials {
                spec.n_trials = v;
            }
            apply_solver(&solver, &mut spec.solver, &mut spec.init)?;
            if let Some(s) = res.seed {
                spec.master_seed = s;
            }
            let started = manifest("converge", &spec, spec.master_seed, &res)?;
            let dir = out_dir(&res, "results")?;
            let result = run_convergence(&spec, res.parallelism)?;
            write_with(&dir.join("convergence_trials.csv"), |w| result.write_trials_csv(w))?;
            write_with(&dir.join("convergence_median.csv"), |w| result.write_median_csv(w))?;
            let mut series: Vec<Series> = result
                .trials
                .iter()
                .filter_map(|t| {
                    t.trace
                        .as_ref()
                        .map(|tr| trace_series(format!("trial {}", t.trial), tr))
                })
                .collect();
            series.insert(
                0,
                Series {
                    label: "median".into(),
                    points: result.median.iter().map(|&(k, d)| (k as f64, d)).collect(),
                },
            );
            export_svg(
                &PlotKind::Lines {
                    series: &series,
                    x_label: "outer iteration",
                    y_label: "dist",
                },
                &dir.join("convergence.svg"),
            )?;
            write_manifest(&dir.join("manifest.json"), started)?;
            match result.iterations_to(1e-5) {
                Some(k) => println!("median dist <= 1e-5 after {k} outer iterations"),
                None => println!("median dist did not reach 1e-5"),
            }
            println!("failed trials = {}", result.failures());
            Ok(())
        }

        Command::Runtime {
            d,
            m,
            eta,
            models,
            solvers,
            trials,
            tol,
            max_outer,
        } => {
            let mut spec = res.file.runtime.clone();
            if let Some(v) = d {
                spec.d = v;
            }
            if let Some(v) = m {
                spec.m = v;
            }
            if let Some(v) = eta {
                spec.eta = v;
            }
            if let Some(names) = &models {
                spec.value_models = names.split(',').map(|n| model(n.trim())).collect::<Result<_, _>>()?;
            }
            if let Some(names) = &solvers {
                spec.solvers = names
                    .split(',')
                    .map(|n| {
                        InnerSolverKind::from_name(n.trim())
                            .map(InnerSolverKind::default_config)
                            .ok_or_else(|| config_err(format!("unknown solver {n:?}")))
                    })
                    .collect::<Result<_, _>>()?;
            }
            if let Some(v) = trials {
                spec.n_trials = v;
            }
            if let Some(v) = tol {
                spec.tol = v;
            }
            if let Some(v) = max_outer {
                spec.outer.max_outer = v;
            }
            if let Some(s) = res.seed {
                spec.master_seed = s;
            }
            let started = manifest("runtime", &spec, spec.master_seed, &res)?;
            let dir = out_dir(&res, "results")?;
            let rows = run_runtime_comparison(&spec)?;
            write_with(&dir.join("runtime.csv"), |w| write_runtime_csv(&rows, w, true))?;
            let series: Vec<Series> = rows
                .iter()
                .filter_map(|r| {
                    r.trace.as_ref().map(|t| Series {
                        label: format!("{} / {} #{}", r.solver, r.value_model, r.trial),
                        points: t
                            .rows
                            .iter()
                            .filter_map(|row| row.dist.map(|d| (row.wall_time_s, d)))
                            .collect(),
                    })
                })
                .collect();
            export_svg(
                &PlotKind::Lines {
                    series: &series,
                    x_label: "seconds",
                    y_label: "dist",
                },
                &dir.join("runtime.svg"),
            )?;
            write_manifest(&dir.join("manifest.json"), started)?;
            for r in &rows {
                let t = r.time_to_tol_s.map_or("-".to_string(), |t| format!("{t:.3}s"));
                println!(
                    "{:<12} {:<15} trial {} cache {:.3}s time-to-tol {t} outer {}",
                    r.solver, r.value_model, r.trial, r.cache_build_s, r.outer_iters
                );
            }
            Ok(())
        }

        Command::Image {
            images,
            count,
            ks,
            etas,
            tol,
            solver,
        } => {
            let mut spec = res.file.image.clone();
            if let Some(dir) = images {
                spec.image_dir = Some(dir);
            }
            if let Some(v) = count {
                spec.n_synthetic = v;
            }
            if let Some(text) = &ks {
                spec.ks = parse_usize_list(text).map_err(config_err)?;
            }
            if let Some(v) = list(&etas)? {
                spec.etas = v;
            }
            if let Some(v) = tol {
                spec.success_rel_tol = v;
            }
            apply_solver(&solver, &mut spec.solver, &mut spec.init)?;
            if let Some(s) = res.seed {
                spec.master_seed = s;
            }
            if let Some(dir) = &spec.image_dir {
                if !dir.is_dir() {
                    return Err(CliError::Io(format!("image directory {} not found", dir.display())));
                }
            }
            let mut started = manifest("image", &spec, spec.master_seed, &res)?;
            started.config["pixel_scaling"] = serde_json::Value::from(PIXEL_SCALING);
            let dir = out_dir(&res, "results")?;
            let result = run_image_experiment(&spec, res.parallelism)?;
            write_with(&dir.join("image_grid.csv"), |w| result.grid.write_csv(w))?;
            export_svg(&PlotKind::Heatmap(&result.grid), &dir.join("image_grid.svg"))?;
            write_manifest(&dir.join("manifest.json"), started)?;
            println!(
                "{} images (n = {}), {} unreadable, {} degenerate",
                result.n_images, result.n, result.skipped, result.degenerate
            );
            Ok(())
        }

        Command::Theory { etas } => {
            let mut spec = res.file.theory.clone();
            if let Some(v) = list(&etas)? {
                spec.etas = v;
            }
            let csv = rate_table_csv(&spec.etas)?;
            let path = match &res.out {
                Some(p) if p.extension().is_some_and(|e| e == "csv") => {
                    if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                        std::fs::create_dir_all(parent)?;
                    }
                    p.clone()
                }
                _ => out_dir(&res, "results")?.join("rates.csv"),
            };
            let started = manifest("theory", &spec, res.seed.unwrap_or(0), &res)?;
            std::fs::write(&path, csv).map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))?;
            write_manifest(&path.with_extension("manifest.json"), started)?;
            println!("wrote {} rows to {}", spec.etas.len(), path.display());
            Ok(())
        }

        Command::Selftest => selftest(res.seed.unwrap_or(0)),
    }
}

fn selftest(seed: u64) -> Result<(), CliError> {
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("selftest {name}: {} ({detail})", if ok { "pass" } else { "FAIL" });
        if !ok {
            failed.push(name.to_string());
        }
    };

    let tolerances = [
        (InnerSolverKind::AdmmLad, 1e-6),
        (InnerSolverKind::AdmmLp, 1e-4),
        (InnerSolverKind::Subgradient, 1e-3),
    ];
    for (kind, tol) in tolerances {
        let mut worst = 0.0f64;
        for (t, (m, d)) in [(8, 2), (7, 3)].iter().cycle().take(10).enumerate() {
            let op = gaussian_ensemble(*d, *m, derive_seed(seed, &[t as u64, role::OPERATOR]))?;
            let mut rng = stream(seed, &[t as u64, role::PROBE]);
            let c = DVector::from_fn(*m, |_, _| rng.sample(StandardNormal)).normalize();
            let oracle = lad_bruteforce_oracle(op.as_dense().expect("gaussian operators are dense"), &c)?;
            let solver = PreparedSolver::prepare(&op, &kind.default_config())?;
            let sol = solver.solve(&SignedLadProblem::new(&op, c, 1e-10 * *m as f64)?)?;
            worst = worst.max((sol.objective - oracle.objective).abs());
        }
        check(
            kind.name(),
            worst <= tol,
            format!("max gap {worst:.2e}, tolerance {tol:.0e}"),
        );
    }

    let grid: Vec<f64> = (0..1000).map(|i| 0.25 * i as f64 / 999.0).collect();
    let rates = grid.iter().map(|&e| rate_constants(e)).collect::<Result<Vec<_>, _>>()?;
    let monotone = rates.windows(2).all(|w| w[1].nu_eta > w[0].nu_eta) && rates.iter().all(|r| r.c_eta > 0.0);
    check("nu monotone", monotone, "1000-point grid on [0, 1/4]".into());
    let nu_q = rate_constants(0.25)?.nu_eta;
    check("nu at 1/4", nu_q < 0.9, format!("{nu_q:.6}"));
    let ln_term = 1.0 + 25f64.ln() + std::f64::consts::PI.ln() - 4f64.ln();
    let pi = std::f64::consts::PI;
    let c0_ref = 0.16 / pi * ((2.0 / pi).sqrt() + (2.0 * ln_term).sqrt()) + 0.0016 / pi.sqrt();
    check("c0", (c0() - c0_ref).abs() <= 1e-10, format!("{:.12}", c0()));

    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Solver(format!("selftest failed: {}", failed.join(", "))))
    }
}
