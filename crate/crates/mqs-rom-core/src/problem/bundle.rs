//! On-disk problem bundle: a directory holding a plain-text `meta` file and
//! the matrices in Matrix Market coordinate format.
//!
//! Files: `meta`, `M11.mtx`, `Cd.mtx`, `Upsilon.mtx`, `R.mtx`, `Mf.mtx`,
//! `Mf1.mtx`. The flux map is reconstructed from the diagonals of `Mf`
//! (weights) and `Mf1` (conducting groups); the load matrix is recomputed as
//! `Cdᵀ·Upsilon`. Every structural invariant is re-validated on ingestion and
//! violations are reported by name.

use std::collections::BTreeMap;
use std::path::Path;

use super::matrix_market::{read_matrix_market, write_matrix_market};
use super::{CurveKind, FemProblem, FluxMap, ProblemDim, ProblemError, ReluctivityCurve};
use crate::matcore::SparseMatrix;

const META_FILE: &str = "meta";
const FORMAT_TAG: &str = "mqs-problem-bundle-v1";

pub fn write_bundle(dir: &Path, p: &FemProblem) -> Result<(), ProblemError> {
    std::fs::create_dir_all(dir).map_err(|e| ProblemError::Io {
        path: dir.display().to_string(),
        detail: e.to_string(),
    })?;

    let mut meta = String::new();
    meta.push_str(&format!("format = {}\n", FORMAT_TAG));
    meta.push_str(&format!("dimension = {}\n", p.dimension.as_str()));
    meta.push_str(&format!("n1 = {}\n", p.n1));
    meta.push_str(&format!("n2 = {}\n", p.n2));
    meta.push_str(&format!("m = {}\n", p.m));
    meta.push_str(&format!("group_dim = {}\n", p.flux.group_dim));
    match p.curve.kind {
        CurveKind::Brauer { k1, k2, k3 } => {
            meta.push_str("curve = brauer\n");
            meta.push_str(&format!("k1 = {:.16e}\n", k1));
            meta.push_str(&format!("k2 = {:.16e}\n", k2));
            meta.push_str(&format!("k3 = {:.16e}\n", k3));
        }
        CurveKind::Constant { nu } => {
            meta.push_str("curve = constant\n");
            meta.push_str(&format!("nu_c = {:.16e}\n", nu));
        }
    }
    meta.push_str(&format!("nu_air = {:.16e}\n", p.curve.nu_air));
    meta.push_str(&format!("zeta_max = {:.16e}\n", p.curve.zeta_max));
    let meta_path = dir.join(META_FILE);
    std::fs::write(&meta_path, meta).map_err(|e| ProblemError::Io {
        path: meta_path.display().to_string(),
        detail: e.to_string(),
    })?;

    write_matrix_market(&dir.join("M11.mtx"), &p.m11)?;
    write_matrix_market(&dir.join("Cd.mtx"), &p.cd)?;
    write_matrix_market(&dir.join("Upsilon.mtx"), &p.upsilon)?;
    write_matrix_market(&dir.join("R.mtx"), &SparseMatrix::from_dense(&p.r))?;
    write_matrix_market(&dir.join("Mf.mtx"), &p.mf())?;
    write_matrix_market(&dir.join("Mf1.mtx"), &p.mf1())?;
    Ok(())
}

fn parse_meta(path: &Path) -> Result<BTreeMap<String, String>, ProblemError> {
    let text = std::fs::read_to_string(path).map_err(|e| ProblemError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(ProblemError::Format {
                path: path.display().to_string(),
                line: i + 1,
                detail: "expected 'key = value'".into(),
            });
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn meta_get<'a>(
    map: &'a BTreeMap<String, String>,
    path: &Path,
    key: &str,
) -> Result<&'a str, ProblemError> {
    map.get(key).map(|s| s.as_str()).ok_or_else(|| ProblemError::Format {
        path: path.display().to_string(),
        line: 0,
        detail: format!("missing key '{}'", key),
    })
}

fn meta_parse<T: std::str::FromStr>(path: &Path, key: &str, raw: &str) -> Result<T, ProblemError> {
    raw.parse().map_err(|_| ProblemError::Format {
        path: path.display().to_string(),
        line: 0,
        detail: format!("key '{}' has unparsable value '{}'", key, raw),
    })
}

/// Extract the diagonal of a matrix required to be exactly diagonal.
fn strict_diagonal(m: &SparseMatrix, name: &str) -> Result<Vec<f64>, ProblemError> {
    if m.nrows() != m.ncols() {
        return Err(ProblemError::Ingest(format!("{} must be square", name)));
    }
    let mut diag = vec![0.0; m.nrows()];
    for (i, j, v) in m.triplet_iter() {
        if i != j {
            return Err(ProblemError::Ingest(format!(
                "{} must be diagonal, found entry ({}, {})",
                name, i, j
            )));
        }
        diag[i] = v;
    }
    Ok(diag)
}

pub fn read_bundle(dir: &Path) -> Result<FemProblem, ProblemError> {
    let meta_path = dir.join(META_FILE);
    let meta = parse_meta(&meta_path)?;

    let format = meta_get(&meta, &meta_path, "format")?;
    if format != FORMAT_TAG {
        return Err(ProblemError::Format {
            path: meta_path.display().to_string(),
            line: 0,
            detail: format!("unsupported format '{}'", format),
        });
    }
    let dimension = match meta_get(&meta, &meta_path, "dimension")? {
        "2d" => ProblemDim::TwoD,
        "3d" => ProblemDim::ThreeDType,
        other => {
            return Err(ProblemError::Format {
                path: meta_path.display().to_string(),
                line: 0,
                detail: format!("unknown dimension '{}'", other),
            });
        }
    };
    let n1: usize = meta_parse(&meta_path, "n1", meta_get(&meta, &meta_path, "n1")?)?;
    let n2: usize = meta_parse(&meta_path, "n2", meta_get(&meta, &meta_path, "n2")?)?;
    let m: usize = meta_parse(&meta_path, "m", meta_get(&meta, &meta_path, "m")?)?;
    let group_dim: usize =
        meta_parse(&meta_path, "group_dim", meta_get(&meta, &meta_path, "group_dim")?)?;
    if group_dim == 0 {
        return Err(ProblemError::Ingest("group_dim must be at least 1".into()));
    }
    let nu_air: f64 = meta_parse(&meta_path, "nu_air", meta_get(&meta, &meta_path, "nu_air")?)?;
    let zeta_max: f64 =
        meta_parse(&meta_path, "zeta_max", meta_get(&meta, &meta_path, "zeta_max")?)?;
    let curve = match meta_get(&meta, &meta_path, "curve")? {
        "brauer" => {
            let k1: f64 = meta_parse(&meta_path, "k1", meta_get(&meta, &meta_path, "k1")?)?;
            let k2: f64 = meta_parse(&meta_path, "k2", meta_get(&meta, &meta_path, "k2")?)?;
            let k3: f64 = meta_parse(&meta_path, "k3", meta_get(&meta, &meta_path, "k3")?)?;
            ReluctivityCurve::brauer(k1, k2, k3, nu_air, zeta_max)?
        }
        "constant" => {
            let nu_c: f64 = meta_parse(&meta_path, "nu_c", meta_get(&meta, &meta_path, "nu_c")?)?;
            ReluctivityCurve::constant(nu_c, nu_air, zeta_max)?
        }
        other => {
            return Err(ProblemError::Format {
                path: meta_path.display().to_string(),
                line: 0,
                detail: format!("unknown curve kind '{}'", other),
            });
        }
    };

    let m11 = read_matrix_market(&dir.join("M11.mtx"))?;
    let cd = read_matrix_market(&dir.join("Cd.mtx"))?;
    let upsilon = read_matrix_market(&dir.join("Upsilon.mtx"))?;
    let r = read_matrix_market(&dir.join("R.mtx"))?.to_dense();
    let mf = read_matrix_market(&dir.join("Mf.mtx"))?;
    let mf1 = read_matrix_market(&dir.join("Mf1.mtx"))?;

    if mf.nrows() != cd.nrows() || mf1.nrows() != cd.nrows() {
        return Err(ProblemError::Ingest(format!(
            "Mf/Mf1 row counts {}/{} must match Cd rows {}",
            mf.nrows(),
            mf1.nrows(),
            cd.nrows()
        )));
    }
    if cd.nrows() % group_dim != 0 {
        return Err(ProblemError::Ingest(format!(
            "flux row count {} is not a multiple of group_dim {}",
            cd.nrows(),
            group_dim
        )));
    }
    let n_groups = cd.nrows() / group_dim;
    let diag = strict_diagonal(&mf, "Mf")?;
    let diag1 = strict_diagonal(&mf1, "Mf1")?;

    let mut weights = Vec::with_capacity(n_groups);
    let mut conducting = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        let rows = g * group_dim..(g + 1) * group_dim;
        let w = diag[rows.start];
        if diag[rows.clone()].iter().any(|&v| v != w) {
            return Err(ProblemError::Ingest(format!(
                "Mf weights inconsistent within flux group {}",
                g
            )));
        }
        let c1 = diag1[rows.start];
        if diag1[rows.clone()].iter().any(|&v| v != c1) {
            return Err(ProblemError::Ingest(format!(
                "Mf1 entries inconsistent within flux group {}",
                g
            )));
        }
        let cond = if c1 == 0.0 {
            false
        } else if c1 == w {
            true
        } else {
            return Err(ProblemError::Ingest(format!(
                "Mf1 diagonal of group {} must be zero or equal to Mf",
                g
            )));
        };
        weights.push(w);
        conducting.push(cond);
    }

    let x = cd.tr_mul_dense(&upsilon.to_dense())?;
    let problem = FemProblem {
        dimension,
        n1,
        n2,
        m,
        m11,
        cd,
        upsilon,
        x,
        r,
        curve,
        flux: FluxMap { group_dim, weights, conducting },
    };
    problem.validate()?;
    Ok(problem)
}
