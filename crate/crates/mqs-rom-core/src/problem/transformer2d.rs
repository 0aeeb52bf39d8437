//! 2D transformer cross-section on a uniform P1 triangulation.
//!
//! The domain [0, lx] x [0, ly] is meshed into nx x ny cells, each split into
//! two triangles. The unknown is the out-of-plane vector potential at the
//! interior grid nodes (homogeneous Dirichlet boundary). A rectangular core
//! region is conducting and carries the nonlinear reluctivity; stranded coil
//! windings excite the field through their winding density.
//!
//! Numbering contracts: interior nodes are numbered conducting-first (a node
//! conducts when it touches a core cell), each class in row-major scan order
//! (iy outer, ix inner). Cells produce two triangles each, scanned the same
//! way, with the lower-right triangle first; flux group g is triangle g.

use super::{FemProblem, FluxMap, ProblemDim, ProblemError, ReluctivityCurve};
use crate::matcore::{self, DMat, SparseMatrix};

/// Axis-aligned rectangle in domain fractions. Cell membership tests the cell
/// center against the half-open box [x0, x1) x [y0, y1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, fx: f64, fy: f64) -> bool {
        fx >= self.x0 && fx < self.x1 && fy >= self.y0 && fy < self.y1
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    fn well_formed(&self) -> bool {
        (0.0..self.x1).contains(&self.x0)
            && self.x1 <= 1.0
            && (0.0..self.y1).contains(&self.y0)
            && self.y1 <= 1.0
    }
}

#[derive(Debug, Clone)]
pub struct Transformer2dConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub core: Rect,
    pub coils: Vec<Rect>,
    /// Winding density (ampere-turns per area, per unit port current).
    pub winding_density: f64,
    /// Core conductivity.
    pub sigma: f64,
    pub resistances: Vec<f64>,
    pub curve: ReluctivityCurve,
}

impl Default for Transformer2dConfig {
    fn default() -> Self {
        Transformer2dConfig {
            nx: 8,
            ny: 8,
            lx: 1.0,
            ly: 1.0,
            core: Rect { x0: 0.375, x1: 0.625, y0: 0.25, y1: 0.75 },
            coils: vec![
                Rect { x0: 0.125, x1: 0.25, y0: 0.25, y1: 0.75 },
                Rect { x0: 0.75, x1: 0.875, y0: 0.25, y1: 0.75 },
            ],
            winding_density: 1.0e3,
            sigma: 1.0e4,
            resistances: vec![1.0, 1.0],
            curve: ReluctivityCurve::brauer(0.3774, 2.97, 388.33, super::NU_VACUUM, 2.0)
                .expect("default Brauer curve is valid"),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Region {
    Air,
    Core,
    Coil(usize),
}

pub fn build_transformer_2d(cfg: &Transformer2dConfig) -> Result<FemProblem, ProblemError> {
    let (nx, ny) = (cfg.nx, cfg.ny);
    if nx < 2 || ny < 2 {
        return Err(ProblemError::Geometry(format!(
            "mesh {}x{} has no interior nodes; need at least 2 cells per side",
            nx, ny
        )));
    }
    if !(cfg.lx > 0.0 && cfg.ly > 0.0) {
        return Err(ProblemError::Geometry("domain side lengths must be positive".into()));
    }
    if !(cfg.sigma > 0.0) {
        return Err(ProblemError::Geometry("conductivity must be positive".into()));
    }
    if !(cfg.winding_density != 0.0 && cfg.winding_density.is_finite()) {
        return Err(ProblemError::Geometry("winding density must be nonzero".into()));
    }
    if cfg.coils.is_empty() {
        return Err(ProblemError::Geometry("at least one coil is required".into()));
    }
    if !cfg.core.well_formed() || cfg.coils.iter().any(|c| !c.well_formed()) {
        return Err(ProblemError::Geometry(
            "core and coil rectangles must satisfy 0 <= lo < hi <= 1".into(),
        ));
    }
    for a in 0..cfg.coils.len() {
        for b in a + 1..cfg.coils.len() {
            if cfg.coils[a].overlaps(&cfg.coils[b]) {
                return Err(ProblemError::Geometry(format!(
                    "coil supports {} and {} overlap",
                    a, b
                )));
            }
        }
    }
    if cfg.resistances.len() != cfg.coils.len() {
        return Err(ProblemError::Geometry(format!(
            "{} resistances for {} coils",
            cfg.resistances.len(),
            cfg.coils.len()
        )));
    }
    if cfg.resistances.iter().any(|&r| !(r > 0.0)) {
        return Err(ProblemError::Geometry("resistances must be positive".into()));
    }

    let m = cfg.coils.len();
    let (hx, hy) = (cfg.lx / nx as f64, cfg.ly / ny as f64);

    // Classify cells by their center; the core wins over coils on overlap.
    let mut region = vec![Region::Air; nx * ny];
    let mut core_cells = 0usize;
    let mut coil_cells = vec![0usize; m];
    for cy in 0..ny {
        for cx in 0..nx {
            let fx = (cx as f64 + 0.5) / nx as f64;
            let fy = (cy as f64 + 0.5) / ny as f64;
            let r = if cfg.core.contains(fx, fy) {
                core_cells += 1;
                Region::Core
            } else if let Some(j) = cfg.coils.iter().position(|c| c.contains(fx, fy)) {
                coil_cells[j] += 1;
                Region::Coil(j)
            } else {
                Region::Air
            };
            region[cy * nx + cx] = r;
        }
    }
    if core_cells == 0 {
        return Err(ProblemError::Geometry("core region covers no cells at this mesh size".into()));
    }
    if let Some(j) = coil_cells.iter().position(|&c| c == 0) {
        return Err(ProblemError::Geometry(format!(
            "coil {} covers no cells at this mesh size",
            j
        )));
    }

    // Interior nodes, conducting ones (touching a core cell) numbered first.
    let node_slot = |ix: usize, iy: usize| iy * (nx + 1) + ix;
    let touches_core = |ix: usize, iy: usize| {
        let mut hit = false;
        for cy in iy.saturating_sub(1)..=iy.min(ny - 1) {
            for cx in ix.saturating_sub(1)..=ix.min(nx - 1) {
                hit |= region[cy * nx + cx] == Region::Core;
            }
        }
        hit
    };
    let mut id = vec![None; (nx + 1) * (ny + 1)];
    let mut n1 = 0usize;
    for iy in 1..ny {
        for ix in 1..nx {
            if touches_core(ix, iy) {
                id[node_slot(ix, iy)] = Some(n1);
                n1 += 1;
            }
        }
    }
    let mut next = n1;
    for iy in 1..ny {
        for ix in 1..nx {
            let s = node_slot(ix, iy);
            if id[s].is_none() {
                id[s] = Some(next);
                next += 1;
            }
        }
    }
    let n = next;
    let n2 = n - n1;
    if n1 == 0 {
        return Err(ProblemError::Geometry("core region has no interior nodes".into()));
    }

    // Two triangles per cell, split along the (lo, lo) -> (hi, hi) diagonal,
    // both counterclockwise. One flux group (2 gradient rows) per triangle.
    let area = 0.5 * hx * hy;
    let n_tri = 2 * nx * ny;
    let mut weights = Vec::with_capacity(n_tri);
    let mut conducting = Vec::with_capacity(n_tri);
    let mut cd_t: Vec<(usize, usize, f64)> = Vec::new();
    let mut m11_t: Vec<(usize, usize, f64)> = Vec::new();
    let mut x_fem = DMat::zeros(n, m);

    let mut tri = 0usize;
    for cy in 0..ny {
        for cx in 0..nx {
            let reg = region[cy * nx + cx];
            let corner = |dx: usize, dy: usize| {
                (
                    (cx + dx, cy + dy),
                    ((cx + dx) as f64 * hx, (cy + dy) as f64 * hy),
                )
            };
            let v00 = corner(0, 0);
            let v10 = corner(1, 0);
            let v11 = corner(1, 1);
            let v01 = corner(0, 1);
            for verts in [[v00, v10, v11], [v00, v11, v01]] {
                weights.push(area);
                conducting.push(reg == Region::Core);
                let mut local_ids = [None; 3];
                for (a, ((ix, iy), _)) in verts.iter().enumerate() {
                    local_ids[a] = id[node_slot(*ix, *iy)];
                }
                for a in 0..3 {
                    let Some(col) = local_ids[a] else { continue };
                    let (_, pb) = verts[(a + 1) % 3];
                    let (_, pc) = verts[(a + 2) % 3];
                    let gx = (pb.1 - pc.1) / (2.0 * area);
                    let gy = (pc.0 - pb.0) / (2.0 * area);
                    cd_t.push((2 * tri, col, gx));
                    cd_t.push((2 * tri + 1, col, gy));
                }
                match reg {
                    Region::Core => {
                        // Consistent P1 mass on the core region.
                        for a in 0..3 {
                            let Some(ra) = local_ids[a] else { continue };
                            for b in 0..3 {
                                let Some(rb) = local_ids[b] else { continue };
                                let w = cfg.sigma * area * if a == b { 1.0 / 6.0 } else { 1.0 / 12.0 };
                                m11_t.push((ra, rb, w));
                            }
                        }
                    }
                    Region::Coil(j) => {
                        for ids in local_ids.iter().flatten() {
                            x_fem[(*ids, j)] += cfg.winding_density * area / 3.0;
                        }
                    }
                    Region::Air => {}
                }
                tri += 1;
            }
        }
    }

    let n_rows = 2 * n_tri;
    let cd = SparseMatrix::from_triplets(n_rows, n, &cd_t)?;
    let m11 = SparseMatrix::from_triplets(n1, n1, &m11_t)?;

    // Least-norm winding flux functions: K_L w = X_fem with unit-reluctivity
    // stiffness K_L, then Upsilon = M_f Cd w, so Cdᵀ Upsilon recovers X_fem.
    let cd_dense = cd.to_dense();
    let mut scaled = cd_dense.clone();
    for r in 0..n_rows {
        let w = weights[r / 2];
        for c in 0..n {
            scaled[(r, c)] *= w;
        }
    }
    let kl = cd_dense.transpose() * &scaled;
    let kl_chol = matcore::spd_factor(&kl)?;
    let w_all = kl_chol.solve_mat(&x_fem)?;
    let upsilon_dense = &scaled * &w_all;
    let upsilon = SparseMatrix::from_dense(&upsilon_dense);

    let mut r_mat = DMat::zeros(m, m);
    for (j, &rj) in cfg.resistances.iter().enumerate() {
        r_mat[(j, j)] = rj;
    }

    let problem = FemProblem {
        dimension: ProblemDim::TwoD,
        n1,
        n2,
        m,
        m11,
        cd,
        upsilon,
        x: x_fem,
        r: r_mat,
        curve: cfg.curve.clone(),
        flux: FluxMap { group_dim: 2, weights, conducting },
    };
    problem.validate()?;
    Ok(problem)
}
