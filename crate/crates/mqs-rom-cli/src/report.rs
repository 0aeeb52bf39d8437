//! The report stage: turns the persisted verification artifacts into
//! plot-ready CSV series and one consolidated key-value summary.
//!
//! Inputs: `report.csv`, `summary`, and the test trajectories written by
//! verify. No model is rebuilt here; the stage is pure file transformation.

use std::path::Path;

use mqs_rom_core::integrator::Trajectory;
use mqs_rom_core::matcore::DMat;
use mqs_rom_core::passivity::relative_output_error;

use crate::config::PipelineConfig;
use crate::error::{write_err, CliError};
use crate::manifest::Manifest;
use crate::stages::read_traj;
use crate::verify::{REPORT_CSV, SUMMARY_FILE, TRAJ_DEIM_TEST, TRAJ_ODE_TEST, TRAJ_POD_TEST};

pub const FIG_STATE_ERROR: &str = "fig_state_error.csv";
pub const FIG_OUTPUT_ERROR: &str = "fig_output_error.csv";
pub const FIG_PERTURBATION: &str = "fig_perturbation.csv";
pub const FIG_OUTPUTS: &str = "fig_outputs.csv";
pub const FIG_RELATIVE_ERROR: &str = "fig_relative_error.csv";
pub const REPORT_SUMMARY: &str = "report_summary";

/// A parsed numeric CSV: header names and column-major values.
struct Columns {
    names: Vec<String>,
    cols: Vec<Vec<f64>>,
}

impl Columns {
    fn read(path: &Path) -> Result<Columns, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read {}: {}", path.display(), e))
        })?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CliError::Config(format!("{} is empty", path.display())))?;
        let names: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut cols = vec![Vec::new(); names.len()];
        for (idx, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != names.len() {
                return Err(CliError::Config(format!(
                    "{} line {}: {} fields, header has {}",
                    path.display(),
                    idx + 2,
                    fields.len(),
                    names.len()
                )));
            }
            for (c, f) in fields.iter().enumerate() {
                let v: f64 = f.parse().map_err(|_| {
                    CliError::Config(format!(
                        "{} line {}: '{}' is not a number",
                        path.display(),
                        idx + 2,
                        f
                    ))
                })?;
                cols[c].push(v);
            }
        }
        Ok(Columns { names, cols })
    }

    fn col(&self, name: &str, path: &Path) -> Result<&[f64], CliError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.cols[i].as_slice())
            .ok_or_else(|| {
                CliError::Config(format!("{} lacks column '{}'", path.display(), name))
            })
    }

    /// All columns whose name starts with `prefix`, in header order.
    fn group(&self, prefix: &str) -> Vec<&[f64]> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.starts_with(prefix))
            .map(|(i, _)| self.cols[i].as_slice())
            .collect()
    }
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        let mut line = String::new();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&format!("{:.16e}", v));
        }
        text.push_str(&line);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| write_err(path, e))
}

fn outputs_matrix(traj: &Trajectory) -> DMat {
    let mut y = DMat::zeros(traj.n_outputs(), traj.len());
    for k in 0..traj.len() {
        y.set_column(k, &traj.outputs[k]);
    }
    y
}

pub fn cmd_report(cfg: &PipelineConfig) -> Result<(), CliError> {
    let report_path = cfg.out(REPORT_CSV);
    if !report_path.exists() {
        return Err(CliError::StageDependency {
            missing: format!("verification report {}", report_path.display()),
            produced_by: "verify".into(),
        });
    }
    let report = Columns::read(&report_path)?;
    let summary_path = cfg.out(SUMMARY_FILE);
    let summary = std::fs::read_to_string(&summary_path).map_err(|_| CliError::StageDependency {
        missing: format!("verification summary {}", summary_path.display()),
        produced_by: "verify".into(),
    })?;
    let ode_test = read_traj(cfg, TRAJ_ODE_TEST, "verify")?;
    let pod_test = read_traj(cfg, TRAJ_POD_TEST, "verify")?;
    let deim_test = read_traj(cfg, TRAJ_DEIM_TEST, "verify")?;

    let t = report.col("t", &report_path)?;
    let eps = report.col("eps_norm", &report_path)?;
    let theta1 = report.col("theta1", &report_path)?;
    let theta2 = report.col("theta2", &report_path)?;
    let delta = report.col("delta", &report_path)?;
    let io_integral = report.col("io_integral", &report_path)?;
    let y_delta_cols = report.group("y_delta_");
    let m = deim_test.n_outputs();
    if y_delta_cols.len() != m || pod_test.len() != t.len() || deim_test.len() != t.len() {
        return Err(CliError::Config(
            "report.csv and the test trajectories disagree; rerun verify".into(),
        ));
    }
    let c_norm: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("c_norm=").map(str::to_string))
        .ok_or_else(|| CliError::Config("summary lacks c_norm; rerun verify".into()))?
        .parse()
        .map_err(|_| CliError::Config("summary c_norm is not a number".into()))?;

    // State error against both envelopes.
    write_csv(
        &cfg.out(FIG_STATE_ERROR),
        "t,eps_norm,theta1,theta2",
        (0..t.len()).map(|k| vec![t[k], eps[k], theta1[k], theta2[k]]),
    )?;

    // Output error against the output envelopes.
    let out_err: Vec<f64> = (0..t.len())
        .map(|k| (&pod_test.outputs[k] - &deim_test.outputs[k]).norm())
        .collect();
    write_csv(
        &cfg.out(FIG_OUTPUT_ERROR),
        "t,output_error,bound_theta1,bound_theta2",
        (0..t.len()).map(|k| vec![t[k], out_err[k], c_norm * theta1[k], c_norm * theta2[k]]),
    )?;

    // Perturbation components delta(t) u_i(t).
    let pert_header = std::iter::once("t,delta".to_string())
        .chain((1..=m).map(|i| format!(",delta_u_{}", i)))
        .collect::<String>();
    write_csv(
        &cfg.out(FIG_PERTURBATION),
        &pert_header,
        (0..t.len()).map(|k| {
            let mut row = vec![t[k], delta[k]];
            row.extend(deim_test.inputs[k].iter().map(|u| delta[k] * u));
            row
        }),
    )?;

    // Raw vs perturbed outputs.
    let out_header = std::iter::once("t".to_string())
        .chain((1..=m).map(|i| format!(",y_{}", i)))
        .chain((1..=m).map(|i| format!(",y_delta_{}", i)))
        .collect::<String>();
    write_csv(
        &cfg.out(FIG_OUTPUTS),
        &out_header,
        (0..t.len()).map(|k| {
            let mut row = vec![t[k]];
            row.extend(deim_test.outputs[k].iter());
            row.extend(y_delta_cols.iter().map(|c| c[k]));
            row
        }),
    )?;

    // Peak-normalized output errors of the interpolated and the perturbed
    // model against the unreduced reference.
    let y_ref = outputs_matrix(&ode_test);
    let y_deim = outputs_matrix(&deim_test);
    let mut y_delta = DMat::zeros(m, t.len());
    for (i, col) in y_delta_cols.iter().enumerate() {
        for k in 0..t.len() {
            y_delta[(i, k)] = col[k];
        }
    }
    let rel_deim = relative_output_error(&y_ref, &y_deim)?;
    let rel_delta = relative_output_error(&y_ref, &y_delta)?;
    write_csv(
        &cfg.out(FIG_RELATIVE_ERROR),
        "t,rel_deim,rel_delta",
        (0..t.len()).map(|k| vec![t[k], rel_deim[k], rel_delta[k]]),
    )?;

    // Consolidated summary: the verify verdicts plus series aggregates.
    let mut text = summary;
    text.push_str(&format!(
        "max_output_error={:.16e}\n",
        out_err.iter().cloned().fold(0.0, f64::max)
    ));
    text.push_str(&format!(
        "max_rel_deim={:.16e}\n",
        rel_deim.iter().cloned().fold(0.0, f64::max)
    ));
    text.push_str(&format!(
        "max_rel_delta={:.16e}\n",
        rel_delta.iter().cloned().fold(0.0, f64::max)
    ));
    text.push_str(&format!("final_io_integral={:.16e}\n", io_integral[t.len() - 1]));
    text.push_str(&format!("grid_nodes={}\n", t.len()));
    let path = cfg.out(REPORT_SUMMARY);
    std::fs::write(&path, text).map_err(|e| write_err(&path, e))?;

    let mut manifest = Manifest::open(&cfg.output_dir, &cfg.sha256, cfg.seed);
    for rel in [
        FIG_STATE_ERROR,
        FIG_OUTPUT_ERROR,
        FIG_PERTURBATION,
        FIG_OUTPUTS,
        FIG_RELATIVE_ERROR,
        REPORT_SUMMARY,
    ] {
        manifest.record_file(&cfg.output_dir, rel)?;
    }
    manifest.write(&cfg.output_dir)?;
    println!("report: {} series over {} nodes -> {}", 5, t.len(), cfg.output_dir.display());
    Ok(())
}
