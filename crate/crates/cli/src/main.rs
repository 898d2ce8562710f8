#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use qdtune::config::{
    load_device, load_scenario, ConfigError, Device, Scenario, TargetKind, TuneSpec,
};
use qdtune::control::{
    align_multi, align_qd_to_cavity, temperature_from_power, ControlError, MultiTarget,
    TuningSolution,
};
use qdtune::device::{rasterize, CellKind};
use qdtune::exec::Execution;
use qdtune::fit::{fit_line, LineFit};
use qdtune::output::{field_csv, peaks_json, spectrum_csv, to_json};
use qdtune::spectral::{calibrate_q_slope, cavity_q, synthesize_spectrum, DEFAULT_ALPHA_NM_PER_K2};
use qdtune::sweep::{
    auto_window, peak_track, power_grid, run_sweep, stacked_csv, track_csv, track_slope,
    SweepSettings,
};
use qdtune::thermal::{lumped_temperature, solve_steady_state, SolverOptions};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "tuner",
    version,
    about = "Local laser-heating tuning of quantum dots and cavities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Steady-state temperature field of one structure.
    Thermal {
        #[arg(
            long,
            conflicts_with = "scenario",
            required_unless_present = "scenario"
        )]
        device: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Structure to solve when a scenario lists several.
        #[arg(long)]
        structure: Option<String>,
        /// Absorbed heating power.
        #[arg(long)]
        power_abs_mw: Option<f64>,
        #[arg(long)]
        dx_um: Option<f64>,
        #[arg(long)]
        tol: Option<f64>,
        /// Bath temperature when solving a bare device file.
        #[arg(long, default_value_t = 10.0)]
        bath_k: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spectra and peak tracks over an incident-power sweep.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        structure: Option<String>,
        #[arg(long)]
        power_min: Option<f64>,
        #[arg(long)]
        power_max: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Track peaks re-extracted from the sampled spectra.
        #[arg(long)]
        refit: bool,
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heating powers that reach a spectral target.
    Tune {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        target: Option<Target>,
        #[arg(long)]
        tol_nm: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit shift coefficients to measured anchors.
    Calibrate {
        #[arg(long)]
        anchors_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Target {
    QdToCavity,
    QdToQd,
}

enum Failure {
    Config(String),
    Solver(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

/// Files to write, collected before anything touches the disk.
struct Artifacts(Vec<(&'static str, String)>);

impl Artifacts {
    fn write(&self, dir: &Path) -> Result<(), Failure> {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
        for (name, text) in &self.0 {
            let p = dir.join(name);
            fs::write(&p, text)
                .map_err(|e| Failure::Config(format!("cannot write {}: {e}", p.display())))?;
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Thermal {
            device,
            scenario,
            structure,
            power_abs_mw,
            dx_um,
            tol,
            bath_k,
            out,
        } => cmd_thermal(
            device,
            scenario,
            structure,
            power_abs_mw,
            dx_um,
            tol,
            bath_k,
            &out,
        ),
        Command::Sweep {
            scenario,
            structure,
            power_min,
            power_max,
            steps,
            refit,
            sequential,
            out,
        } => cmd_sweep(
            &scenario, structure, power_min, power_max, steps, refit, sequential, &out,
        ),
        Command::Tune {
            scenario,
            target,
            tol_nm,
            out,
        } => cmd_tune(&scenario, target, tol_nm, &out),
        Command::Calibrate { anchors_file, out } => cmd_calibrate(&anchors_file, &out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver failure: {m}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_thermal(
    device: Option<PathBuf>,
    scenario: Option<PathBuf>,
    structure: Option<String>,
    power_abs_mw: Option<f64>,
    dx_um: Option<f64>,
    tol: Option<f64>,
    bath_k: f64,
    out: &Path,
) -> Result<u8, Failure> {
    let (dev, bath, spec_power, spec_dx, spec_tol) = match (&device, &scenario) {
        (Some(path), _) => (load_device(path)?, bath_k, None, None, None),
        (None, Some(path)) => {
            let s = load_scenario(path)?;
            let spec = s.thermal.clone();
            let id = structure
                .as_deref()
                .or(spec.as_ref().and_then(|t| t.structure.as_deref()));
            let dev = s.structure(id)?.device.clone();
            (
                dev,
                s.bath_k,
                spec.as_ref().map(|t| t.power_abs_mw),
                spec.as_ref().map(|t| t.dx_um),
                spec.as_ref().map(|t| t.tol),
            )
        }
        (None, None) => unreachable!("clap requires one of --device and --scenario"),
    };
    let power_mw = power_abs_mw
        .or(spec_power)
        .ok_or_else(|| Failure::Config("no absorbed power given (--power-abs-mw)".into()))?;
    let dx = dx_um.or(spec_dx).unwrap_or(0.1);
    let tol = tol.or(spec_tol).unwrap_or(1e-6);
    if !(power_mw >= 0.0 && power_mw.is_finite()) {
        return Err(Failure::Config(format!(
            "absorbed power must be ≥ 0 (got {power_mw} mW)"
        )));
    }
    if !(tol > 0.0) {
        return Err(Failure::Config(format!(
            "tolerance must be positive (got {tol})"
        )));
    }

    let grid =
        rasterize(&dev.layout, dx, power_mw * 1e-3).map_err(|e| Failure::Config(e.to_string()))?;
    let (field, report) = solve_steady_state(&grid, bath, &SolverOptions::default().with_tol(tol))
        .map_err(|e| Failure::Solver(e.to_string()))?;
    let lumped = lumped_temperature(&dev.layout, power_mw * 1e-3, bath)
        .map_err(|e| Failure::Solver(e.to_string()))?;

    let pad_max = field
        .solid_cells()
        .filter(|(i, ..)| field.grid().cells()[*i].kind == CellKind::Pad)
        .map(|(.., t)| t)
        .fold(f64::NEG_INFINITY, f64::max);
    let pad_mean = field.mean_over(CellKind::Pad).unwrap_or(f64::NAN);
    let cavity_k = field.at(dev.layout.cavity_position).unwrap_or(f64::NAN);
    let qd_k: BTreeMap<&str, f64> = dev
        .layout
        .qd_positions
        .iter()
        .map(|q| (q.id.as_str(), field.at(q.position).unwrap_or(f64::NAN)))
        .collect();
    let summary = json!({
        "power_abs_mw": power_mw,
        "dx_um": dx,
        "bath_k": bath,
        "cells": grid.solid_count(),
        "solve": report,
        "pad_mean_k": pad_mean,
        "pad_max_k": pad_max,
        "cavity_k": cavity_k,
        "qd_k": qd_k,
        "field_max_k": field.max_k(),
        "lumped_k": lumped,
    });
    Artifacts(vec![
        ("field.csv", field_csv(&field)),
        ("report.json", to_json(&summary)),
    ])
    .write(out)?;

    println!("cells            {}", grid.solid_count());
    println!("iterations       {}", report.iterations);
    println!("energy residual  {:.3e}", report.residual);
    println!("pad mean / max   {pad_mean:.3} / {pad_max:.3} K");
    println!("cavity           {cavity_k:.3} K");
    println!("lumped model     {lumped:.3} K");
    if report.converged {
        Ok(0)
    } else {
        eprintln!(
            "solver failure: not converged after {} iterations (residual {:.3e})",
            report.iterations, report.residual
        );
        Ok(EXIT_SOLVER)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    scenario_path: &Path,
    structure: Option<String>,
    power_min: Option<f64>,
    power_max: Option<f64>,
    steps: Option<usize>,
    refit: bool,
    sequential: bool,
    out: &Path,
) -> Result<u8, Failure> {
    let scenario = load_scenario(scenario_path)?;
    let spec = scenario.sweep.clone();
    let id = structure
        .as_deref()
        .or(spec.as_ref().and_then(|s| s.structure.as_deref()));
    let s = scenario.structure(id)?;
    let missing =
        |flag: &str| Failure::Config(format!("sweep needs {flag} (flag or scenario sweep block)"));
    let lo = power_min
        .or(spec.as_ref().map(|s| s.power_min_mw))
        .ok_or_else(|| missing("--power-min"))?;
    let hi = power_max
        .or(spec.as_ref().map(|s| s.power_max_mw))
        .ok_or_else(|| missing("--power-max"))?;
    let n = steps
        .or(spec.as_ref().map(|s| s.steps))
        .ok_or_else(|| missing("--steps"))?;
    if !(lo <= hi) || n < 2 || lo < 0.0 {
        return Err(Failure::Config(format!(
            "need 0 ≤ power-min ≤ power-max and steps ≥ 2 (got {lo}, {hi}, {n})"
        )));
    }
    let dev = &s.device;
    let settings = SweepSettings {
        window_nm: spec
            .as_ref()
            .and_then(|s| s.window_nm)
            .unwrap_or_else(|| auto_window(&dev.qds, &dev.cavity)),
        samples: spec.as_ref().map(|s| s.samples).unwrap_or(2001),
        execution: if sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    let powers = power_grid(lo, hi, n);
    let rows = run_sweep(&s.map, &dev.qds, &dev.cavity, &powers, &settings)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let track = peak_track(&rows, refit);
    let warnings: Vec<&str> = rows.iter().filter_map(|r| r.warning.as_deref()).collect();
    let slopes: BTreeMap<String, Option<f64>> = dev
        .qds
        .iter()
        .map(|q| q.id.clone())
        .chain(std::iter::once("cavity".to_string()))
        .map(|id| {
            let slope = track_slope(&track, &id);
            (id, slope)
        })
        .collect();
    let summary = json!({
        "structure": s.map.id,
        "beta": s.map.beta,
        "powers_mw": powers,
        "temperatures_k": rows.iter().map(|r| r.temperature_k).collect::<Vec<_>>(),
        "refit": refit,
        "track_slopes_nm_per_mw": slopes,
        "warnings": warnings,
    });
    Artifacts(vec![
        ("spectra.csv", stacked_csv(&rows)),
        ("peaks_track.csv", track_csv(&track)),
        ("sweep_report.json", to_json(&summary)),
    ])
    .write(out)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} spectra, {} skipped",
        rows.len() - warnings.len(),
        warnings.len()
    );
    Ok(0)
}

fn is_infeasible(e: &ControlError) -> bool {
    matches!(
        e,
        ControlError::Unreachable(_)
            | ControlError::ToleranceUnreachable { .. }
            | ControlError::InfeasiblePlan(_)
            | ControlError::TuningRangeExceeded { .. }
            | ControlError::PowerOutOfRange { .. }
            | ControlError::Spectral(_)
    )
}

fn pick_target(spec: &TuneSpec, flag: Option<Target>) -> Result<TargetKind, Failure> {
    let kind = match flag {
        Some(Target::QdToCavity) => Some(TargetKind::QdToCavity),
        Some(Target::QdToQd) => Some(TargetKind::QdToQd),
        None => spec.target.or(match (&spec.qd_to_cavity, &spec.qd_to_qd) {
            (Some(_), None) => Some(TargetKind::QdToCavity),
            (None, Some(_)) => Some(TargetKind::QdToQd),
            _ => None,
        }),
    };
    kind.ok_or_else(|| Failure::Config("choose a target with --target".into()))
}

fn cmd_tune(
    scenario_path: &Path,
    target: Option<Target>,
    tol_nm: Option<f64>,
    out: &Path,
) -> Result<u8, Failure> {
    let scenario = load_scenario(scenario_path)?;
    let spec = scenario
        .tune
        .clone()
        .ok_or_else(|| Failure::Config("scenario has no tune block".into()))?;
    let tol = tol_nm.unwrap_or(spec.tol_nm);
    if !(tol > 0.0) {
        return Err(Failure::Config(format!(
            "tolerance must be positive (got {tol})"
        )));
    }
    let mut artifacts = Vec::new();
    let outcome = match pick_target(&spec, target)? {
        TargetKind::QdToCavity => {
            let c = spec
                .qd_to_cavity
                .as_ref()
                .ok_or_else(|| Failure::Config("tune block has no qd_to_cavity entry".into()))?;
            let s = scenario.structure(c.structure.as_deref())?;
            let qd = s.device.qd(&c.qd).expect("checked on load");
            align_qd_to_cavity(&s.map, qd, &s.device.cavity, tol).and_then(|mut sol| {
                let p = sol.powers_mw[&s.map.id];
                let t = temperature_from_power(&s.map, p)?;
                let q = cavity_q(&s.device.cavity, t, s.map.t_bath)?;
                if let Some(min_q) = c.min_q {
                    if q < min_q {
                        sol.feasible = false;
                        sol.warnings.push(format!(
                            "cavity Q {q:.1} at the solution is below min_q {min_q}"
                        ));
                    }
                }
                artifacts.extend(resonant_spectrum(&s.device, t, s.map.t_bath)?);
                Ok(sol)
            })
        }
        TargetKind::QdToQd => {
            let q = spec
                .qd_to_qd
                .as_ref()
                .ok_or_else(|| Failure::Config("tune block has no qd_to_qd entry".into()))?;
            multi_targets(&scenario, q).and_then(|targets| {
                align_multi(
                    &scenario.maps(),
                    &scenario.crosstalk,
                    &targets,
                    tol,
                    q.max_iter,
                )
            })
        }
    };
    let (solution, code) = match outcome {
        Ok(sol) => {
            let code = if sol.feasible { 0 } else { EXIT_INFEASIBLE };
            (sol, code)
        }
        Err(e) if is_infeasible(&e) => (TuningSolution::infeasible(e.to_string()), EXIT_INFEASIBLE),
        Err(e) => return Err(Failure::Solver(e.to_string())),
    };
    let mut files = vec![("solution.json", to_json(&solution))];
    if solution.feasible {
        files.extend(artifacts);
    }
    Artifacts(files).write(out)?;
    for (id, p) in &solution.powers_mw {
        println!("{id}: {p:.9} mW");
    }
    for w in &solution.warnings {
        eprintln!("warning: {w}");
    }
    println!("feasible: {}", solution.feasible);
    Ok(code)
}

/// Spectrum of the tuned scene around the cavity line.
fn resonant_spectrum(
    dev: &Device,
    t: f64,
    t_ref: f64,
) -> Result<Vec<(&'static str, String)>, ControlError> {
    let window = auto_window(&dev.qds, &dev.cavity);
    let s = synthesize_spectrum(&dev.qds, &dev.cavity, t, t_ref, window, 2001)?;
    Ok(vec![
        ("spectrum.csv", spectrum_csv(&s)),
        ("spectrum_peaks.json", peaks_json(&s.peaks)),
    ])
}

fn multi_targets(
    scenario: &Scenario,
    spec: &qdtune::config::QdToQdSpec,
) -> Result<Vec<MultiTarget>, ControlError> {
    let picked: Vec<(usize, qdtune::spectral::QdState)> = spec
        .qds
        .iter()
        .map(|r| {
            let i = scenario
                .structure_index(&r.structure)
                .expect("checked on load");
            (
                i,
                scenario.structures[i]
                    .device
                    .qd(&r.qd)
                    .expect("checked on load")
                    .clone(),
            )
        })
        .collect();
    let wavelength = spec.wavelength_nm.unwrap_or_else(|| {
        picked
            .iter()
            .map(|(_, q)| q.lambda0_nm)
            .fold(f64::NEG_INFINITY, f64::max)
    });
    Ok(picked
        .into_iter()
        .map(|(structure, qd)| MultiTarget {
            structure,
            qd,
            wavelength_nm: wavelength,
        })
        .collect())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemperatureAnchor {
    t_k: f64,
    shift_nm: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PowerAnchor {
    power_mw: f64,
    shift_nm: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CavityAnchors {
    q_cold: f64,
    q_hot: f64,
    /// Structure and incident power at which `q_hot` was measured.
    structure: String,
    hot_power_mw: f64,
    qd_shift_nm: f64,
    cavity_shift_nm: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorsFile {
    #[serde(default = "ten")]
    t_ref_k: f64,
    #[serde(default)]
    temperature: Vec<TemperatureAnchor>,
    #[serde(default)]
    power: BTreeMap<String, Vec<PowerAnchor>>,
    cavity: Option<CavityAnchors>,
}

fn ten() -> f64 {
    10.0
}

fn cmd_calibrate(path: &Path, out: &Path) -> Result<u8, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let anchors: AnchorsFile = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("cannot parse {}: {e}", path.display())))?;
    if anchors.temperature.is_empty() && anchors.power.is_empty() {
        return Err(Failure::Config(
            "anchors file has no temperature or power anchors".into(),
        ));
    }
    let fit = |what: &str, pts: Vec<(f64, f64)>| -> Result<LineFit, Failure> {
        fit_line(&pts).map_err(|e| Failure::Config(format!("{what}: {e}")))
    };

    let t_ref = anchors.t_ref_k;
    let alpha_fit = if anchors.temperature.is_empty() {
        None
    } else {
        let pts = anchors
            .temperature
            .iter()
            .map(|a| (a.t_k * a.t_k - t_ref * t_ref, a.shift_nm))
            .collect();
        Some(fit("temperature anchors", pts)?)
    };
    let alpha = alpha_fit
        .map(|f| f.slope)
        .unwrap_or(DEFAULT_ALPHA_NM_PER_K2);
    if !(alpha > 0.0) {
        return Err(Failure::Config(format!(
            "fitted alpha {alpha} is not positive"
        )));
    }

    let mut structures = BTreeMap::new();
    let mut betas = BTreeMap::new();
    for (id, pts) in &anchors.power {
        let f = fit(
            &format!("power anchors of {id}"),
            pts.iter().map(|a| (a.power_mw, a.shift_nm)).collect(),
        )?;
        let beta = f.slope / alpha;
        betas.insert(id.clone(), beta);
        structures.insert(
            id.clone(),
            json!({"shift_per_mw_nm": f.slope, "beta": beta, "fit": f}),
        );
    }

    let (q_slope, shift_ratio) = match &anchors.cavity {
        None => (None, None),
        Some(c) => {
            let beta = *betas.get(&c.structure).ok_or_else(|| {
                Failure::Config(format!(
                    "cavity anchors name unknown structure {:?}",
                    c.structure
                ))
            })?;
            if !(c.q_cold > 0.0 && c.q_hot > 0.0 && c.hot_power_mw > 0.0 && c.cavity_shift_nm > 0.0)
            {
                return Err(Failure::Config("cavity anchors must be positive".into()));
            }
            let q = calibrate_q_slope(c.q_cold, c.q_hot, beta * c.hot_power_mw);
            (Some(q), Some(c.qd_shift_nm / c.cavity_shift_nm))
        }
    };
    let summary = json!({
        "t_ref_k": t_ref,
        "alpha": alpha,
        "alpha_fit": alpha_fit,
        "structures": structures,
        "q_slope": q_slope,
        "shift_ratio": shift_ratio,
    });
    Artifacts(vec![("calibration.json", to_json(&summary))]).write(out)?;
    println!("alpha {alpha:.6e} nm/K²");
    for (id, b) in &betas {
        println!("{id}: beta {b:.6} K²/mW");
    }
    Ok(0)
}
