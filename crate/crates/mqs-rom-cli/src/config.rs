//! Pipeline configuration: a TOML file of sections, overridable from the
//! command line with repeated `--set section.key=value` flags.
//!
//! Sections and keys (defaults in parentheses):
//!
//! ```text
//! seed = 42                      # RNG seed for sampled-state checks (42)
//!
//! [problem]
//! kind = "transformer2d"         # transformer2d | synthetic3d | bundle
//! # transformer2d: nx, ny (8), lx, ly (1.0), core = [x0,x1,y0,y1],
//! #   coils = [[x0,x1,y0,y1], ...], winding_density (1e3), sigma (1e4),
//! #   resistances ([1.0, 1.0])
//! # synthetic3d: nx, ny, nz (3), lx, ly, lz (1.0), box_lo, box_hi
//! #   ([1,1,1]/[2,2,2]), m (2), sigma (1e4), resistances ([1.0, 1.0])
//! # bundle: path = "dir"         # ingest an existing problem bundle
//!
//! [problem.curve]                # optional; generator default otherwise
//! kind = "brauer"                # brauer | constant
//! k1 = 0.3774  k2 = 2.97  k3 = 388.33           (brauer)
//! nu_c = 400.0                                  (constant)
//! nu_air = 795774.7154594767    zeta_max = 2.0
//!
//! [grid]
//! dt = 5.0e-6                    # step size (required)
//! t_end = 0.01                   # final time (required, multiple of dt)
//! order = 1                      # BDF order, 1 | 2
//! newton_tol = 1e-10  max_newton = 25
//!
//! [training_input]               # channel i: sum_j amps[i][j]*sin(omegas[i][j]*pi*t)
//! amps   = [[45.5e3], [77.0e3]]
//! omegas = [[900.0], [1700.0]]
//!
//! [test_input]                   # optional; training input otherwise
//!
//! [pod]
//! r = 35                         # fixed rank, or
//! tol = 1e-7                     # singular-value cutoff (default)
//!
//! [deim]
//! ell = 9                        # fixed interpolation order, or
//! tol = 1e-7                     # cutoff on the force spectrum (default)
//!
//! [tolerances]
//! dissipation = 1e-8  identity = 1e-10  equivalence = 1e-6
//!
//! [output]
//! dir = "out"                    # artifact directory (required)
//! ```
//!
//! Paths are resolved relative to the working directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use mqs_rom_core::integrator::{BdfOrder, StepControl, MAX_NEWTON, NEWTON_TOL};
use mqs_rom_core::matcore::DVec;
use mqs_rom_core::passivity::DISSIPATION_TOL;
use mqs_rom_core::problem::{
    CurveKind, ReluctivityCurve, Synthetic3dConfig, Transformer2dConfig, NU_VACUUM,
};
use mqs_rom_core::rom::{PodSpec, DEFAULT_ENERGY_TOL};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_IDENTITY_TOL: f64 = 1e-10;
pub const DEFAULT_EQUIVALENCE_TOL: f64 = 1e-6;

/// Fully validated pipeline configuration.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub problem: ProblemSpec,
    pub grid: GridSpec,
    pub training_input: InputSpec,
    pub test_input: InputSpec,
    pub pod: ReductionSpec,
    pub deim: ReductionSpec,
    pub tolerances: Tolerances,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Digest of the config file bytes and the sorted override list.
    pub sha256: String,
}

#[derive(Debug, Clone)]
pub enum ProblemSpec {
    Transformer2d(Transformer2dConfig),
    Synthetic3d(Synthetic3dConfig),
    Bundle(PathBuf),
}

#[derive(Debug, Clone)]
pub struct GridSpec {
    pub dt: f64,
    pub t_end: f64,
    pub order: BdfOrder,
    pub newton_tol: f64,
    pub max_newton: usize,
}

impl GridSpec {
    pub fn step_control(&self) -> StepControl {
        let mut ctl = StepControl::new(self.dt, self.t_end, self.order);
        ctl.newton_tol = self.newton_tol;
        ctl.max_newton = self.max_newton;
        ctl
    }
}

/// Sum-of-sinusoids input, u_i(t) = Σ_j amps[i][j]·sin(omegas[i][j]·π·t).
#[derive(Debug, Clone)]
pub struct InputSpec {
    pub amps: Vec<Vec<f64>>,
    pub omegas: Vec<Vec<f64>>,
}

impl InputSpec {
    pub fn channels(&self) -> usize {
        self.amps.len()
    }

    pub fn sample(&self, t: f64) -> DVec {
        let mut u = DVec::zeros(self.amps.len());
        for (i, (amps, omegas)) in self.amps.iter().zip(&self.omegas).enumerate() {
            u[i] = amps
                .iter()
                .zip(omegas)
                .map(|(a, w)| a * (w * std::f64::consts::PI * t).sin())
                .sum();
        }
        u
    }

    fn validate(&self, section: &str) -> Result<(), CliError> {
        if self.amps.is_empty() {
            return Err(CliError::Config(format!("[{}] needs at least one channel", section)));
        }
        if self.amps.len() != self.omegas.len() {
            return Err(CliError::Config(format!(
                "[{}] amps has {} channels but omegas has {}",
                section,
                self.amps.len(),
                self.omegas.len()
            )));
        }
        for (i, (a, w)) in self.amps.iter().zip(&self.omegas).enumerate() {
            if a.len() != w.len() {
                return Err(CliError::Config(format!(
                    "[{}] channel {} has {} amplitudes but {} frequencies",
                    section,
                    i + 1,
                    a.len(),
                    w.len()
                )));
            }
            if a.iter().chain(w).any(|v| !v.is_finite()) {
                return Err(CliError::Config(format!(
                    "[{}] channel {} contains a non-finite value",
                    section,
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Basis size selection: a fixed dimension or a spectrum cutoff.
#[derive(Debug, Clone, Copy)]
pub enum ReductionSpec {
    Fixed(usize),
    Tol(f64),
}

impl ReductionSpec {
    pub fn pod_spec(&self) -> PodSpec {
        match *self {
            ReductionSpec::Fixed(r) => PodSpec::FixedRank(r),
            ReductionSpec::Tol(t) => PodSpec::EnergyTol(t),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Budget factor for dissipation and io-passivity slack.
    pub dissipation: f64,
    /// Relative tolerance on algebraic identities (output matrix, patterns).
    pub identity: f64,
    /// Relative tolerance when comparing outputs of equivalent models.
    pub equivalence: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            dissipation: DISSIPATION_TOL,
            identity: DEFAULT_IDENTITY_TOL,
            equivalence: DEFAULT_EQUIVALENCE_TOL,
        }
    }
}

impl PipelineConfig {
    /// Reads, overrides, and validates a configuration.
    pub fn load(path: &Path, sets: &[String]) -> Result<PipelineConfig, CliError> {
        let bytes = std::fs::read(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {}", path.display(), e))
        })?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| CliError::Config(format!("{} is not UTF-8", path.display())))?;
        let mut value: toml::Value = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))?;
        for set in sets {
            apply_set(&mut value, set)?;
        }
        let file: FileConfig = value
            .try_into()
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))?;

        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let mut sorted: Vec<&String> = sets.iter().collect();
        sorted.sort();
        for s in sorted {
            hasher.update(b"\nset:");
            hasher.update(s.as_bytes());
        }
        let sha256 = hex::encode(hasher.finalize());

        file.build(sha256)
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.output_dir.join(rel)
    }
}

/// Applies one `section.key=value` override onto the parsed tree. The value
/// is parsed with TOML scalar syntax; anything unparsable stays a string.
fn apply_set(root: &mut toml::Value, set: &str) -> Result<(), CliError> {
    let (path, raw) = set
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set '{}' is not key=value", set)))?;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Config(format!("--set '{}' has an empty key segment", set)));
    }
    let leaf: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {}", raw)) {
        Ok(mut t) => t.remove("v").expect("parsed table has key v"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    for seg in &segments[..segments.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("--set '{}': '{}' is not a section", set, seg))
        })?;
        node = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::Config(format!("--set '{}': parent is not a section", set)))?;
    table.insert(segments[segments.len() - 1].to_string(), leaf);
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    problem: ProblemFile,
    grid: GridFile,
    training_input: InputFile,
    test_input: Option<InputFile>,
    pod: Option<ReductionFile>,
    deim: Option<ReductionFile>,
    tolerances: Option<TolerancesFile>,
    output: OutputFile,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    kind: String,
    path: Option<String>,
    nx: Option<usize>,
    ny: Option<usize>,
    nz: Option<usize>,
    lx: Option<f64>,
    ly: Option<f64>,
    lz: Option<f64>,
    core: Option<[f64; 4]>,
    coils: Option<Vec<[f64; 4]>>,
    winding_density: Option<f64>,
    sigma: Option<f64>,
    resistances: Option<Vec<f64>>,
    box_lo: Option<[usize; 3]>,
    box_hi: Option<[usize; 3]>,
    m: Option<usize>,
    curve: Option<CurveFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CurveFile {
    kind: String,
    k1: Option<f64>,
    k2: Option<f64>,
    k3: Option<f64>,
    nu_c: Option<f64>,
    nu_air: Option<f64>,
    zeta_max: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    dt: f64,
    t_end: f64,
    order: Option<u8>,
    newton_tol: Option<f64>,
    max_newton: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InputFile {
    amps: Vec<Vec<f64>>,
    omegas: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReductionFile {
    r: Option<usize>,
    ell: Option<usize>,
    tol: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TolerancesFile {
    dissipation: Option<f64>,
    identity: Option<f64>,
    equivalence: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputFile {
    dir: String,
}

impl FileConfig {
    fn build(self, sha256: String) -> Result<PipelineConfig, CliError> {
        let problem = self.problem.build()?;
        let grid = self.grid.build()?;
        let training_input = InputSpec { amps: self.training_input.amps, omegas: self.training_input.omegas };
        training_input.validate("training_input")?;
        let test_input = match self.test_input {
            Some(f) => {
                let spec = InputSpec { amps: f.amps, omegas: f.omegas };
                spec.validate("test_input")?;
                if spec.channels() != training_input.channels() {
                    return Err(CliError::Config(format!(
                        "test_input has {} channels, training_input has {}",
                        spec.channels(),
                        training_input.channels()
                    )));
                }
                spec
            }
            None => training_input.clone(),
        };
        let pod = build_reduction(self.pod, "pod", "r")?;
        let deim = build_reduction(self.deim, "deim", "ell")?;
        let tolerances = match self.tolerances {
            Some(t) => {
                let d = Tolerances::default();
                let tol = Tolerances {
                    dissipation: t.dissipation.unwrap_or(d.dissipation),
                    identity: t.identity.unwrap_or(d.identity),
                    equivalence: t.equivalence.unwrap_or(d.equivalence),
                };
                for (name, v) in [
                    ("dissipation", tol.dissipation),
                    ("identity", tol.identity),
                    ("equivalence", tol.equivalence),
                ] {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(CliError::Config(format!(
                            "[tolerances] {} must be a positive number, got {}",
                            name, v
                        )));
                    }
                }
                tol
            }
            None => Tolerances::default(),
        };
        Ok(PipelineConfig {
            problem,
            grid,
            training_input,
            test_input,
            pod,
            deim,
            tolerances,
            output_dir: PathBuf::from(self.output.dir),
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            sha256,
        })
    }
}

fn build_reduction(
    file: Option<ReductionFile>,
    section: &str,
    size_key: &str,
) -> Result<ReductionSpec, CliError> {
    let Some(f) = file else {
        return Ok(ReductionSpec::Tol(DEFAULT_ENERGY_TOL));
    };
    let size = match section {
        "pod" => {
            if f.ell.is_some() {
                return Err(CliError::Config("[pod] takes 'r', not 'ell'".into()));
            }
            f.r
        }
        _ => {
            if f.r.is_some() {
                return Err(CliError::Config("[deim] takes 'ell', not 'r'".into()));
            }
            f.ell
        }
    };
    match (size, f.tol) {
        (Some(_), Some(_)) => Err(CliError::Config(format!(
            "[{}] sets both '{}' and 'tol'; pick one",
            section, size_key
        ))),
        (Some(0), None) => Err(CliError::Config(format!("[{}] {} must be >= 1", section, size_key))),
        (Some(n), None) => Ok(ReductionSpec::Fixed(n)),
        (None, Some(t)) if t > 0.0 && t.is_finite() => Ok(ReductionSpec::Tol(t)),
        (None, Some(t)) => Err(CliError::Config(format!(
            "[{}] tol must be a positive number, got {}",
            section, t
        ))),
        (None, None) => Ok(ReductionSpec::Tol(DEFAULT_ENERGY_TOL)),
    }
}

impl ProblemFile {
    fn build(self) -> Result<ProblemSpec, CliError> {
        match self.kind.as_str() {
            "transformer2d" => {
                self.reject_irrelevant("transformer2d", &["path", "nz", "lz", "box_lo", "box_hi", "m"])?;
                let mut cfg = Transformer2dConfig::default();
                if let Some(v) = self.nx {
                    cfg.nx = v;
                }
                if let Some(v) = self.ny {
                    cfg.ny = v;
                }
                if let Some(v) = self.lx {
                    cfg.lx = v;
                }
                if let Some(v) = self.ly {
                    cfg.ly = v;
                }
                if let Some(r) = self.core {
                    cfg.core = rect(r);
                }
                if let Some(cs) = self.coils {
                    cfg.coils = cs.into_iter().map(rect).collect();
                }
                if let Some(v) = self.winding_density {
                    cfg.winding_density = v;
                }
                if let Some(v) = self.sigma {
                    cfg.sigma = v;
                }
                if let Some(v) = self.resistances {
                    cfg.resistances = v;
                }
                cfg.curve = build_curve(self.curve, cfg.curve)?;
                Ok(ProblemSpec::Transformer2d(cfg))
            }
            "synthetic3d" => {
                self.reject_irrelevant(
                    "synthetic3d",
                    &["path", "core", "coils", "winding_density"],
                )?;
                let mut cfg = Synthetic3dConfig::default();
                if let Some(v) = self.nx {
                    cfg.nx = v;
                }
                if let Some(v) = self.ny {
                    cfg.ny = v;
                }
                if let Some(v) = self.nz {
                    cfg.nz = v;
                }
                if let Some(v) = self.lx {
                    cfg.lx = v;
                }
                if let Some(v) = self.ly {
                    cfg.ly = v;
                }
                if let Some(v) = self.lz {
                    cfg.lz = v;
                }
                if let Some(v) = self.box_lo {
                    cfg.box_lo = v;
                }
                if let Some(v) = self.box_hi {
                    cfg.box_hi = v;
                }
                if let Some(v) = self.m {
                    cfg.m = v;
                }
                if let Some(v) = self.sigma {
                    cfg.sigma = v;
                }
                if let Some(v) = self.resistances {
                    cfg.resistances = v;
                }
                cfg.curve = build_curve(self.curve, cfg.curve)?;
                Ok(ProblemSpec::Synthetic3d(cfg))
            }
            "bundle" => {
                let every = [
                    "nx", "ny", "nz", "lx", "ly", "lz", "box_lo", "box_hi", "m", "core",
                    "coils", "winding_density", "sigma", "resistances",
                ];
                self.reject_irrelevant("bundle", &every)?;
                if self.curve.is_some() {
                    return Err(CliError::Config(
                        "[problem.curve] is ignored for kind = bundle; the bundle meta carries the curve"
                            .into(),
                    ));
                }
                let path = self.path.as_ref().ok_or_else(|| {
                    CliError::Config("[problem] kind = bundle requires 'path'".into())
                })?;
                Ok(ProblemSpec::Bundle(PathBuf::from(path)))
            }
            other => Err(CliError::Config(format!(
                "[problem] kind must be transformer2d, synthetic3d, or bundle, got '{}'",
                other
            ))),
        }
    }

    fn reject_irrelevant(&self, kind: &str, names: &[&str]) -> Result<(), CliError> {
        let set: &[(&str, bool)] = &[
            ("path", self.path.is_some()),
            ("nx", self.nx.is_some()),
            ("ny", self.ny.is_some()),
            ("nz", self.nz.is_some()),
            ("lx", self.lx.is_some()),
            ("ly", self.ly.is_some()),
            ("lz", self.lz.is_some()),
            ("core", self.core.is_some()),
            ("coils", self.coils.is_some()),
            ("box_lo", self.box_lo.is_some()),
            ("box_hi", self.box_hi.is_some()),
            ("m", self.m.is_some()),
            ("winding_density", self.winding_density.is_some()),
            ("sigma", self.sigma.is_some()),
            ("resistances", self.resistances.is_some()),
        ];
        for (name, present) in set {
            if *present && names.contains(name) {
                return Err(CliError::Config(format!(
                    "[problem] key '{}' does not apply to kind = {}",
                    name, kind
                )));
            }
        }
        Ok(())
    }
}

fn rect(r: [f64; 4]) -> mqs_rom_core::problem::Rect {
    mqs_rom_core::problem::Rect { x0: r[0], x1: r[1], y0: r[2], y1: r[3] }
}

fn build_curve(
    file: Option<CurveFile>,
    fallback: ReluctivityCurve,
) -> Result<ReluctivityCurve, CliError> {
    let Some(f) = file else {
        return Ok(fallback);
    };
    let nu_air = f.nu_air.unwrap_or(NU_VACUUM);
    let zeta_max = f.zeta_max.unwrap_or(fallback.zeta_max);
    let kind = match f.kind.as_str() {
        "brauer" => {
            if f.nu_c.is_some() {
                return Err(CliError::Config("[problem.curve] 'nu_c' is for kind = constant".into()));
            }
            let defaults = match fallback.kind {
                CurveKind::Brauer { k1, k2, k3 } => (k1, k2, k3),
                CurveKind::Constant { .. } => (0.3774, 2.97, 388.33),
            };
            CurveKind::Brauer {
                k1: f.k1.unwrap_or(defaults.0),
                k2: f.k2.unwrap_or(defaults.1),
                k3: f.k3.unwrap_or(defaults.2),
            }
        }
        "constant" => {
            if f.k1.is_some() || f.k2.is_some() || f.k3.is_some() {
                return Err(CliError::Config(
                    "[problem.curve] 'k1'/'k2'/'k3' are for kind = brauer".into(),
                ));
            }
            let nu_c = f.nu_c.ok_or_else(|| {
                CliError::Config("[problem.curve] kind = constant requires 'nu_c'".into())
            })?;
            CurveKind::Constant { nu: nu_c }
        }
        other => {
            return Err(CliError::Config(format!(
                "[problem.curve] kind must be brauer or constant, got '{}'",
                other
            )))
        }
    };
    Ok(ReluctivityCurve::new(kind, nu_air, zeta_max)?)
}

impl GridFile {
    fn build(self) -> Result<GridSpec, CliError> {
        let order = match self.order.unwrap_or(1) {
            1 => BdfOrder::One,
            2 => BdfOrder::Two,
            other => {
                return Err(CliError::Config(format!(
                    "[grid] order must be 1 or 2, got {}",
                    other
                )))
            }
        };
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(CliError::Config(format!("[grid] dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(CliError::Config(format!(
                "[grid] t_end must be positive, got {}",
                self.t_end
            )));
        }
        let newton_tol = self.newton_tol.unwrap_or(NEWTON_TOL);
        if !(newton_tol > 0.0) || !newton_tol.is_finite() {
            return Err(CliError::Config(format!(
                "[grid] newton_tol must be positive, got {}",
                newton_tol
            )));
        }
        Ok(GridSpec {
            dt: self.dt,
            t_end: self.t_end,
            order,
            newton_tol,
            max_newton: self.max_newton.unwrap_or(MAX_NEWTON),
        })
    }
}
