//! Structured-hex synthetic problem with edge unknowns.
//!
//! A uniform nx x ny x nz grid carries one unknown per interior edge
//! (boundary edges eliminated by a homogeneous Dirichlet condition). Flux
//! unknowns live on faces: one row per face with at least one interior edge,
//! holding the signed sum of its boundary edges. A conducting box strictly
//! inside the grid marks edges and faces as conducting; ports are driven
//! through single-face winding loops placed away from the box. The
//! non-conducting curl block of this construction has a nontrivial kernel,
//! which is what the regularization stage exists to remove.
//!
//! Numbering contracts: edges are numbered conducting-first, each class in
//! direction-major scan order (x, y, z edges; k, j, i loops within each).
//! Faces are scanned z-normal, x-normal, y-normal with their plane loops as
//! written below; only faces with at least one interior edge get a row.

use std::collections::BTreeMap;

use super::{FemProblem, FluxMap, ProblemDim, ProblemError, ReluctivityCurve};
use crate::matcore::{DMat, SparseMatrix};

#[derive(Debug, Clone)]
pub struct Synthetic3dConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    /// Conducting cell box, half-open per axis: cells [lo, hi).
    pub box_lo: [usize; 3],
    pub box_hi: [usize; 3],
    /// Number of winding ports.
    pub m: usize,
    pub sigma: f64,
    pub resistances: Vec<f64>,
    pub curve: ReluctivityCurve,
}

impl Default for Synthetic3dConfig {
    fn default() -> Self {
        Synthetic3dConfig {
            nx: 3,
            ny: 3,
            nz: 3,
            lx: 1.0,
            ly: 1.0,
            lz: 1.0,
            box_lo: [1, 1, 1],
            box_hi: [2, 2, 2],
            m: 2,
            sigma: 1.0e4,
            resistances: vec![1.0, 1.0],
            curve: ReluctivityCurve::brauer(0.3774, 2.97, 388.33, super::NU_VACUUM, 2.0)
                .expect("default Brauer curve is valid"),
        }
    }
}

/// Edge key: (direction, i, j, k) for the edge from node (i,j,k) towards
/// direction d. Directions 0, 1, 2 are x, y, z.
type EdgeKey = (u8, usize, usize, usize);

struct Edge {
    key: EdgeKey,
    conducting: bool,
}

pub fn build_synthetic_3d(cfg: &Synthetic3dConfig) -> Result<FemProblem, ProblemError> {
    let (nx, ny, nz) = (cfg.nx, cfg.ny, cfg.nz);
    if nx < 3 || ny < 3 || nz < 3 {
        return Err(ProblemError::Geometry(format!(
            "grid {}x{}x{} too coarse for a strictly interior conducting box; need 3 cells per axis",
            nx, ny, nz
        )));
    }
    if !(cfg.lx > 0.0 && cfg.ly > 0.0 && cfg.lz > 0.0) {
        return Err(ProblemError::Geometry("domain side lengths must be positive".into()));
    }
    if !(cfg.sigma > 0.0) {
        return Err(ProblemError::Geometry("conductivity must be positive".into()));
    }
    let dims = [nx, ny, nz];
    for d in 0..3 {
        if !(1 <= cfg.box_lo[d] && cfg.box_lo[d] < cfg.box_hi[d] && cfg.box_hi[d] <= dims[d] - 1) {
            return Err(ProblemError::Geometry(format!(
                "conducting box [{}, {}) on axis {} must be strictly interior to {} cells",
                cfg.box_lo[d], cfg.box_hi[d], d, dims[d]
            )));
        }
    }
    if cfg.m == 0 {
        return Err(ProblemError::Geometry("at least one port is required".into()));
    }
    if cfg.resistances.len() != cfg.m {
        return Err(ProblemError::Geometry(format!(
            "{} resistances for {} ports",
            cfg.resistances.len(),
            cfg.m
        )));
    }
    if cfg.resistances.iter().any(|&r| !(r > 0.0)) {
        return Err(ProblemError::Geometry("resistances must be positive".into()));
    }

    let (hx, hy, hz) = (cfg.lx / nx as f64, cfg.ly / ny as f64, cfg.lz / nz as f64);
    let lo = cfg.box_lo;
    let hi = cfg.box_hi;
    // Box nodes span [lo, hi] inclusive per axis.
    let node_in_box =
        |i: usize, j: usize, k: usize| (lo[0]..=hi[0]).contains(&i) && (lo[1]..=hi[1]).contains(&j) && (lo[2]..=hi[2]).contains(&k);

    // Interior edges in a fixed scan order. An edge is interior when it does
    // not lie inside a boundary plane of the grid.
    let mut edges: Vec<Edge> = Vec::new();
    for k in 1..nz {
        for j in 1..ny {
            for i in 0..nx {
                let conducting = node_in_box(i, j, k) && node_in_box(i + 1, j, k);
                edges.push(Edge { key: (0, i, j, k), conducting });
            }
        }
    }
    for k in 1..nz {
        for j in 0..ny {
            for i in 1..nx {
                let conducting = node_in_box(i, j, k) && node_in_box(i, j + 1, k);
                edges.push(Edge { key: (1, i, j, k), conducting });
            }
        }
    }
    for k in 0..nz {
        for j in 1..ny {
            for i in 1..nx {
                let conducting = node_in_box(i, j, k) && node_in_box(i, j, k + 1);
                edges.push(Edge { key: (2, i, j, k), conducting });
            }
        }
    }

    // Conducting edges first, preserving scan order within each class.
    let mut id_of: BTreeMap<EdgeKey, usize> = BTreeMap::new();
    let mut n1 = 0usize;
    for e in edges.iter().filter(|e| e.conducting) {
        id_of.insert(e.key, n1);
        n1 += 1;
    }
    let mut next = n1;
    for e in edges.iter().filter(|e| !e.conducting) {
        id_of.insert(e.key, next);
        next += 1;
    }
    let n = next;
    let n2 = n - n1;
    if n1 == 0 {
        return Err(ProblemError::Geometry("conducting box contains no interior edges".into()));
    }

    // Faces with at least one interior edge, one flux row each. Signed edges
    // follow the boundary loop of the face.
    let mut cd_t: Vec<(usize, usize, f64)> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut conducting: Vec<bool> = Vec::new();
    let mut face_edges: Vec<Vec<usize>> = Vec::new();
    let mut face_has_conducting_edge: Vec<bool> = Vec::new();
    let mut face_noncond_edges: Vec<usize> = Vec::new();

    let mut push_face = |loop_edges: &[(EdgeKey, f64)],
                         area: f64,
                         cond: bool,
                         cd_t: &mut Vec<(usize, usize, f64)>,
                         weights: &mut Vec<f64>,
                         conducting: &mut Vec<bool>| {
        let present: Vec<(usize, f64)> = loop_edges
            .iter()
            .filter_map(|(key, s)| id_of.get(key).map(|&id| (id, *s)))
            .collect();
        if present.is_empty() {
            return;
        }
        let row = weights.len();
        let mut ids = Vec::with_capacity(present.len());
        let mut has_cond = false;
        let mut noncond = 0usize;
        for (id, s) in present {
            cd_t.push((row, id, s));
            ids.push(id);
            if id < n1 {
                has_cond = true;
            } else {
                noncond += 1;
            }
        }
        weights.push(area);
        conducting.push(cond);
        face_edges.push(ids);
        face_has_conducting_edge.push(has_cond);
        face_noncond_edges.push(noncond);
    };

    // z-normal faces.
    for k in 0..=nz {
        for j in 0..ny {
            for i in 0..nx {
                let cond = i >= lo[0] && i + 1 <= hi[0] && j >= lo[1] && j + 1 <= hi[1] && (lo[2]..=hi[2]).contains(&k);
                let le = [
                    ((0u8, i, j, k), 1.0),
                    ((1u8, i + 1, j, k), 1.0),
                    ((0u8, i, j + 1, k), -1.0),
                    ((1u8, i, j, k), -1.0),
                ];
                push_face(&le, hx * hy, cond, &mut cd_t, &mut weights, &mut conducting);
            }
        }
    }
    // x-normal faces.
    for i in 0..=nx {
        for k in 0..nz {
            for j in 0..ny {
                let cond = j >= lo[1] && j + 1 <= hi[1] && k >= lo[2] && k + 1 <= hi[2] && (lo[0]..=hi[0]).contains(&i);
                let le = [
                    ((1u8, i, j, k), 1.0),
                    ((2u8, i, j + 1, k), 1.0),
                    ((1u8, i, j, k + 1), -1.0),
                    ((2u8, i, j, k), -1.0),
                ];
                push_face(&le, hy * hz, cond, &mut cd_t, &mut weights, &mut conducting);
            }
        }
    }
    // y-normal faces.
    for j in 0..=ny {
        for k in 0..nz {
            for i in 0..nx {
                let cond = i >= lo[0] && i + 1 <= hi[0] && k >= lo[2] && k + 1 <= hi[2] && (lo[1]..=hi[1]).contains(&j);
                let le = [
                    ((2u8, i, j, k), 1.0),
                    ((0u8, i, j, k + 1), 1.0),
                    ((2u8, i + 1, j, k), -1.0),
                    ((0u8, i, j, k), -1.0),
                ];
                push_face(&le, hx * hz, cond, &mut cd_t, &mut weights, &mut conducting);
            }
        }
    }

    let n_rows = weights.len();
    let cd = SparseMatrix::from_triplets(n_rows, n, &cd_t)?;

    // Port faces: need a non-conducting edge so the X2 column is nonzero;
    // prefer faces with no conducting edges at all, then lowest row index.
    // Selected ports must be pairwise edge-disjoint.
    let mut candidates: Vec<usize> = (0..n_rows).filter(|&f| face_noncond_edges[f] > 0).collect();
    candidates.sort_by_key(|&f| (face_has_conducting_edge[f], f));
    let mut used = vec![false; n];
    let mut ports: Vec<usize> = Vec::new();
    for f in candidates {
        if ports.len() == cfg.m {
            break;
        }
        if face_edges[f].iter().any(|&e| used[e]) {
            continue;
        }
        for &e in &face_edges[f] {
            used[e] = true;
        }
        ports.push(f);
    }
    if ports.len() < cfg.m {
        return Err(ProblemError::Geometry(format!(
            "could not place {} edge-disjoint port faces, only {} available",
            cfg.m,
            ports.len()
        )));
    }

    let upsilon_t: Vec<(usize, usize, f64)> =
        ports.iter().enumerate().map(|(j, &f)| (f, j, 1.0)).collect();
    let upsilon = SparseMatrix::from_triplets(n_rows, cfg.m, &upsilon_t)?;
    let x = cd.tr_mul_dense(&upsilon.to_dense())?;

    let cell_volume = hx * hy * hz;
    let m11_t: Vec<(usize, usize, f64)> =
        (0..n1).map(|i| (i, i, cfg.sigma * cell_volume)).collect();
    let m11 = SparseMatrix::from_triplets(n1, n1, &m11_t)?;

    let mut r_mat = DMat::zeros(cfg.m, cfg.m);
    for (j, &rj) in cfg.resistances.iter().enumerate() {
        r_mat[(j, j)] = rj;
    }

    let problem = FemProblem {
        dimension: ProblemDim::ThreeDType,
        n1,
        n2,
        m: cfg.m,
        m11,
        cd,
        upsilon,
        x,
        r: r_mat,
        curve: cfg.curve.clone(),
        flux: FluxMap { group_dim: 1, weights, conducting },
    };
    problem.validate()?;
    Ok(problem)
}
