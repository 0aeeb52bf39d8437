//! The generate, simulate, and reduce stages, plus the artifact-path layout
//! shared by every stage.
//!
//! Each stage reads only the configuration and artifacts persisted by earlier
//! stages, writes its own artifacts under the output directory, and merges
//! them into the run manifest.

use std::path::PathBuf;

use mqs_rom_core::integrator::{integrate_dae, integrate_ode, Trajectory};
use mqs_rom_core::matcore::{DVec, SparseMatrix};
use mqs_rom_core::mqs::MqsDae;
use mqs_rom_core::problem::{
    build_synthetic_3d, build_transformer_2d, read_bundle, write_bundle, write_matrix_market,
    FemProblem,
};
use mqs_rom_core::regularization::{regularize, OdeSystem, RegularizedSystem};
use mqs_rom_core::rom::{
    a1_snapshots, build_deim, build_pod, f1_snapshots, pod_basis, BasisBundle, PodSpec,
    RomDeim, RomPod, SNAPSHOT_RANK_TOL,
};

use crate::config::{PipelineConfig, ProblemSpec, ReductionSpec};
use crate::error::{write_err, CliError};
use crate::manifest::Manifest;

pub const BUNDLE_DIR: &str = "bundle";
pub const ROM_DIR: &str = "rom";
pub const TRANSFORMS_DIR: &str = "transforms";
pub const TRAJ_FULL: &str = "traj_full.csv";
pub const TRAJ_REGULARIZED: &str = "traj_regularized.csv";
pub const TRAJ_ODE: &str = "traj_ode.csv";

const BUNDLE_FILES: [&str; 7] =
    ["meta", "M11.mtx", "Cd.mtx", "Upsilon.mtx", "R.mtx", "Mf.mtx", "Mf1.mtx"];

/// Which model the simulate stage integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimTarget {
    Full,
    Regularized,
    Ode,
}

impl SimTarget {
    pub fn csv_name(&self) -> &'static str {
        match self {
            SimTarget::Full => TRAJ_FULL,
            SimTarget::Regularized => TRAJ_REGULARIZED,
            SimTarget::Ode => TRAJ_ODE,
        }
    }
}

/// Builds the problem straight from the config (generator or external bundle).
pub fn build_problem(cfg: &PipelineConfig) -> Result<FemProblem, CliError> {
    let p = match &cfg.problem {
        ProblemSpec::Transformer2d(c) => build_transformer_2d(c)?,
        ProblemSpec::Synthetic3d(c) => build_synthetic_3d(c)?,
        ProblemSpec::Bundle(path) => {
            if !path.join("meta").exists() {
                return Err(CliError::Config(format!(
                    "[problem] path {} does not hold a problem bundle",
                    path.display()
                )));
            }
            read_bundle(path)?
        }
    };
    if cfg.training_input.channels() != p.m {
        return Err(CliError::Config(format!(
            "training_input has {} channels but the problem has {} ports",
            cfg.training_input.channels(),
            p.m
        )));
    }
    Ok(p)
}

/// Loads the problem persisted by the generate stage.
pub fn load_bundle(cfg: &PipelineConfig) -> Result<FemProblem, CliError> {
    let dir = cfg.out(BUNDLE_DIR);
    if !dir.join("meta").exists() {
        return Err(CliError::StageDependency {
            missing: format!("problem bundle {}", dir.display()),
            produced_by: "generate".into(),
        });
    }
    let p = read_bundle(&dir)?;
    if cfg.training_input.channels() != p.m {
        return Err(CliError::Config(format!(
            "training_input has {} channels but the problem has {} ports",
            cfg.training_input.channels(),
            p.m
        )));
    }
    Ok(p)
}

pub fn build_regularized(p: FemProblem) -> Result<RegularizedSystem, CliError> {
    let dae = MqsDae::new(p)?;
    Ok(regularize(dae)?)
}

/// Reads a trajectory CSV persisted by an earlier stage.
pub fn read_traj(cfg: &PipelineConfig, rel: &str, produced_by: &str) -> Result<Trajectory, CliError> {
    let path = cfg.out(rel);
    if !path.exists() {
        return Err(CliError::StageDependency {
            missing: format!("trajectory {}", path.display()),
            produced_by: produced_by.into(),
        });
    }
    Ok(Trajectory::read_csv(&path)?)
}

/// Writes the congruence transform, the image-basis embedding, and the output
/// matrix of the regularized system as Matrix Market files.
pub fn dump_transforms(
    cfg: &PipelineConfig,
    reg: &RegularizedSystem,
    manifest: &mut Manifest,
) -> Result<(), CliError> {
    let dir = cfg.out(TRANSFORMS_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| write_err(&dir, e))?;
    let entries: [(&str, &mqs_rom_core::matcore::DMat); 3] = [
        ("W.mtx", &reg.condensed_form().w),
        ("Yhat.mtx", reg.yhat()),
        ("Cr.mtx", reg.output_matrix()),
    ];
    for (name, mat) in entries {
        write_matrix_market(&dir.join(name), &SparseMatrix::from_dense(mat))?;
        manifest.record_file(&cfg.output_dir, &format!("{}/{}", TRANSFORMS_DIR, name))?;
    }
    Ok(())
}

pub fn cmd_generate(cfg: &PipelineConfig, dump: bool) -> Result<(), CliError> {
    let p = build_problem(cfg)?;
    p.validate()?;
    let dir = cfg.out(BUNDLE_DIR);
    write_bundle(&dir, &p)?;

    let mut manifest = Manifest::open(&cfg.output_dir, &cfg.sha256, cfg.seed);
    for name in BUNDLE_FILES {
        manifest.record_file(&cfg.output_dir, &format!("{}/{}", BUNDLE_DIR, name))?;
    }
    manifest.record_info("n1", p.n1.to_string());
    manifest.record_info("n2", p.n2.to_string());
    manifest.record_info("m", p.m.to_string());
    if dump {
        let reg = build_regularized(p.clone())?;
        dump_transforms(cfg, &reg, &mut manifest)?;
    }
    manifest.write(&cfg.output_dir)?;
    println!(
        "generate: bundle (n1 = {}, n2 = {}, m = {}) -> {}",
        p.n1,
        p.n2,
        p.m,
        dir.display()
    );
    Ok(())
}

pub fn cmd_simulate(cfg: &PipelineConfig, target: SimTarget, dump: bool) -> Result<(), CliError> {
    let p = load_bundle(cfg)?;
    let ctl = cfg.grid.step_control();
    let input = |t: f64| cfg.training_input.sample(t);

    let mut reg_for_dump: Option<RegularizedSystem> = None;
    let traj = match target {
        SimTarget::Full => {
            if dump {
                reg_for_dump = Some(build_regularized(p.clone())?);
            }
            let dae = MqsDae::new(p)?;
            integrate_dae(&dae, &DVec::zeros(dae.n_state()), &ctl, input)?
        }
        SimTarget::Regularized => {
            let reg = build_regularized(p)?;
            let traj = integrate_ode(&reg, &DVec::zeros(reg.n_r()), &ctl, input)?;
            reg_for_dump = Some(reg);
            traj
        }
        SimTarget::Ode => {
            let reg = build_regularized(p)?;
            let ode = reg.to_ode()?;
            let traj = integrate_ode(&ode, &DVec::zeros(ode.n_ode()), &ctl, input)?;
            reg_for_dump = Some(reg);
            traj
        }
    };

    let rel = target.csv_name();
    traj.write_csv(&cfg.out(rel))?;
    let mut manifest = Manifest::open(&cfg.output_dir, &cfg.sha256, cfg.seed);
    manifest.record_file(&cfg.output_dir, rel)?;
    if dump {
        if let Some(reg) = &reg_for_dump {
            dump_transforms(cfg, reg, &mut manifest)?;
        }
    }
    manifest.write(&cfg.output_dir)?;
    println!(
        "simulate: {} steps of {:?} -> {}",
        traj.len() - 1,
        target,
        cfg.out(rel).display()
    );
    Ok(())
}

/// Numerical rank of a singular spectrum under the shared snapshot cutoff.
pub fn spectrum_rank(sigma: &DVec) -> usize {
    let cutoff = SNAPSHOT_RANK_TOL * sigma.iter().cloned().fold(0.0_f64, f64::max);
    sigma.iter().filter(|s| **s > cutoff).count()
}

fn write_spectrum(path: &PathBuf, sigma: &DVec) -> Result<(), CliError> {
    let mut text = String::new();
    for s in sigma.iter() {
        text.push_str(&format!("{:.16e}\n", s));
    }
    std::fs::write(path, text).map_err(|e| write_err(path, e))
}

/// Rebuilds the reduced pair from persisted artifacts. Shared by reduce (to
/// construct) and verify (to reload); both paths validate the basis.
pub fn assemble_rom(
    cfg: &PipelineConfig,
    ode: &OdeSystem,
    traj: &Trajectory,
    u_a1: mqs_rom_core::matcore::DMat,
    ell_override: Option<usize>,
) -> Result<(RomPod, RomDeim), CliError> {
    let rom = build_pod(ode, u_a1)?;
    let xf = f1_snapshots(ode, traj);
    let ell = match ell_override {
        Some(l) => l,
        None => match cfg.deim {
            ReductionSpec::Fixed(l) => l,
            ReductionSpec::Tol(t) => pod_basis(&xf, PodSpec::EnergyTol(t))?.r,
        },
    };
    let deim = build_deim(&rom, &xf, ell)?;
    Ok((rom, deim))
}

pub fn cmd_reduce(cfg: &PipelineConfig, dump: bool) -> Result<(), CliError> {
    let p = load_bundle(cfg)?;
    let reg = build_regularized(p)?;
    let ode = reg.to_ode()?;
    let traj = read_traj(cfg, TRAJ_ODE, "simulate --which ode")?;
    if traj.n_states() != ode.n_ode() {
        return Err(CliError::Config(format!(
            "{} carries {} states but the regularized ODE has {}; regenerate the trajectory",
            TRAJ_ODE,
            traj.n_states(),
            ode.n_ode()
        )));
    }

    let xa = a1_snapshots(&ode, &traj);
    let basis = pod_basis(&xa, cfg.pod.pod_spec())?;
    let (rom, deim) = assemble_rom(cfg, &ode, &traj, basis.u.clone(), None)?;

    let dir = cfg.out(ROM_DIR);
    let bundle = BasisBundle {
        u_a1: rom.u_a1().clone(),
        u_f1: Some(deim.u_f1().clone()),
        kappa: Some(deim.kappa().to_vec()),
    };
    mqs_rom_core::rom::write_basis_bundle(&dir, &bundle)?;
    for (name, mat) in [
        ("E.mtx", rom.e()),
        ("A.mtx", rom.a_frozen()),
        ("B.mtx", rom.b()),
        ("C.mtx", rom.c()),
    ] {
        write_matrix_market(&dir.join(name), &SparseMatrix::from_dense(mat))?;
    }
    write_spectrum(&dir.join("sigma_a1.txt"), &basis.sigma)?;
    write_spectrum(&dir.join("sigma_f1.txt"), deim.sigma_f1())?;

    let mut manifest = Manifest::open(&cfg.output_dir, &cfg.sha256, cfg.seed);
    for name in [
        "u_a1.mtx",
        "u_f1.mtx",
        "kappa.txt",
        "E.mtx",
        "A.mtx",
        "B.mtx",
        "C.mtx",
        "sigma_a1.txt",
        "sigma_f1.txt",
    ] {
        manifest.record_file(&cfg.output_dir, &format!("{}/{}", ROM_DIR, name))?;
    }
    manifest.record_info("r", rom.r().to_string());
    manifest.record_info("ell", deim.ell().to_string());
    manifest.record_info("rank_a1", spectrum_rank(&basis.sigma).to_string());
    manifest.record_info("rank_f1", spectrum_rank(deim.sigma_f1()).to_string());
    if dump {
        dump_transforms(cfg, &reg, &mut manifest)?;
    }
    manifest.write(&cfg.output_dir)?;
    println!(
        "reduce: r = {}, ell = {} (snapshot ranks {} / {}) -> {}",
        rom.r(),
        deim.ell(),
        spectrum_rank(&basis.sigma),
        spectrum_rank(deim.sigma_f1()),
        dir.display()
    );
    Ok(())
}
