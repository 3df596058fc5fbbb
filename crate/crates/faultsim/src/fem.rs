//! P1 vector finite elements on the layered subdomain meshes.
//!
//! Assembles the consistent mass matrix, the elasticity form `b` (isotropic
//! Hooke tensor in plane strain) and the Kelvin--Voigt viscosity form
//! `a = c_A b`, plus the gravity load functional. Matrices are built over
//! *all* vertices of all subdomains; Dirichlet conditions are applied later
//! by constraining rows/columns, with time-dependent boundary values lifted
//! into the right-hand side.

use crate::linalg::{BlockCoo, BlockCsr, Mat2, ScalarCsr, Vec2};
use crate::mesh::{BoundaryTag, MeshHierarchy, Triangulation};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("degenerate triangle {triangle} in subdomain {subdomain} (area {area:.3e} m^2)")]
    DegenerateTriangle { subdomain: usize, triangle: usize, area: f64 },
    #[error("invalid material parameters: {0}")]
    InvalidParams(String),
}

/// Isotropic Kelvin--Voigt material constants.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct MaterialParams {
    /// Young's modulus (Pa)
    pub e: f64,
    /// Poisson ratio
    pub nu: f64,
    /// mass density per unit thickness (kg/m^2)
    pub rho: f64,
    /// gravitational acceleration (N/kg)
    pub g: f64,
    /// viscosity time scale c_A in A = c_A * B (s)
    pub c_a: f64,
}

impl MaterialParams {
    pub fn table1() -> Self {
        MaterialParams { e: 4.12e7, nu: 0.3, rho: 5e3, g: 9.81, c_a: 1e-3 }
    }

    pub fn validate(&self) -> Result<(), FemError> {
        if !(self.e > 0.0) {
            return Err(FemError::InvalidParams(format!("E must be positive, got {}", self.e)));
        }
        if !(self.nu > 0.0 && self.nu < 0.5) {
            return Err(FemError::InvalidParams(format!("nu must lie in (0, 0.5), got {}", self.nu)));
        }
        if !(self.rho > 0.0) {
            return Err(FemError::InvalidParams(format!("rho must be positive, got {}", self.rho)));
        }
        if self.c_a < 0.0 {
            return Err(FemError::InvalidParams(format!("c_A must be nonnegative, got {}", self.c_a)));
        }
        Ok(())
    }

    /// Plane-strain Lame constants (lambda, mu).
    pub fn lame(&self) -> (f64, f64) {
        let lambda = self.e * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu));
        let mu = self.e / (2.0 * (1.0 + self.nu));
        (lambda, mu)
    }
}

/// Vertex-to-global-block numbering across subdomains, with the Dirichlet
/// block list.
#[derive(Clone, Debug)]
pub struct DofMap {
    /// first global block index of each subdomain
    pub offsets: Vec<usize>,
    /// total number of vector dofs
    pub n_total: usize,
    /// per-dof component fixing; Dirichlet vertices fix both components
    pub fixed: Vec<[bool; 2]>,
}

impl DofMap {
    pub fn new(meshes: &[Triangulation]) -> Self {
        let mut offsets = Vec::with_capacity(meshes.len());
        let mut n = 0;
        for m in meshes {
            offsets.push(n);
            n += m.vertices.len();
        }
        let mut fixed = vec![[false; 2]; n];
        for (s, m) in meshes.iter().enumerate() {
            for face in &m.boundary_faces {
                if face.tag == BoundaryTag::Dirichlet {
                    for &v in &face.v {
                        fixed[offsets[s] + v] = [true, true];
                    }
                }
            }
        }
        DofMap { offsets, n_total: n, fixed }
    }

    pub fn global(&self, subdomain: usize, vertex: usize) -> usize {
        self.offsets[subdomain] + vertex
    }

    pub fn len(&self) -> usize {
        self.n_total
    }

    pub fn is_empty(&self) -> bool {
        self.n_total == 0
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.fixed[dof][0] && self.fixed[dof][1]
    }

    /// Global coordinates of every dof, for output and contact search.
    pub fn positions(&self, meshes: &[Triangulation]) -> Vec<Vec2> {
        let mut out = Vec::with_capacity(self.n_total);
        for m in meshes {
            out.extend_from_slice(&m.vertices);
        }
        out
    }
}

fn triangle_geometry(
    mesh: &Triangulation,
    sub: usize,
    t: usize,
) -> Result<(f64, [Vec2; 3]), FemError> {
    let [p0, p1, p2] = mesh.triangle_vertices(t);
    let d1 = p1 - p0;
    let d2 = p2 - p0;
    let twice_area = d1.x * d2.y - d1.y * d2.x;
    let area = 0.5 * twice_area;
    if area.abs() < 1e-14 {
        return Err(FemError::DegenerateTriangle { subdomain: sub, triangle: t, area });
    }
    // gradients of the barycentric coordinates
    let g0 = Vec2::new(p1.y - p2.y, p2.x - p1.x) / twice_area;
    let g1 = Vec2::new(p2.y - p0.y, p0.x - p2.x) / twice_area;
    let g2 = Vec2::new(p0.y - p1.y, p1.x - p0.x) / twice_area;
    Ok((area, [g0, g1, g2]))
}

/// Elasticity form `b(v, w) = int B eps(v) : eps(w) dx` with the isotropic
/// Hooke tensor in plane strain; exact constant-strain quadrature.
pub fn assemble_elasticity(
    meshes: &[Triangulation],
    dofs: &DofMap,
    params: &MaterialParams,
) -> Result<BlockCsr, FemError> {
    params.validate()?;
    let (lambda, mu) = params.lame();
    let mut coo = BlockCoo::new(dofs.len(), dofs.len());
    for (s, mesh) in meshes.iter().enumerate() {
        for t in 0..mesh.triangles.len() {
            let (area, g) = triangle_geometry(mesh, s, t)?;
            let area = area.abs();
            for i in 0..3 {
                for k in 0..3 {
                    let mut block = Mat2::zeros();
                    let dot = g[i].dot(&g[k]);
                    for a in 0..2 {
                        for c in 0..2 {
                            let mut val = mu * g[i][c] * g[k][a] + lambda * g[i][a] * g[k][c];
                            if a == c {
                                val += mu * dot;
                            }
                            block[(a, c)] = area * val;
                        }
                    }
                    coo.push(
                        dofs.global(s, mesh.triangles[t][i]),
                        dofs.global(s, mesh.triangles[t][k]),
                        block,
                    );
                }
            }
        }
    }
    Ok(coo.to_csr())
}

/// Viscosity form `a = c_A * b`.
pub fn assemble_viscosity(
    meshes: &[Triangulation],
    dofs: &DofMap,
    params: &MaterialParams,
) -> Result<BlockCsr, FemError> {
    let b = assemble_elasticity(meshes, dofs, params)?;
    Ok(BlockCsr::linear_combination(&[(params.c_a, &b)]))
}

/// Consistent mass matrix for `(rho ., .)`.
pub fn assemble_mass(
    meshes: &[Triangulation],
    dofs: &DofMap,
    params: &MaterialParams,
) -> Result<BlockCsr, FemError> {
    params.validate()?;
    let mut coo = BlockCoo::new(dofs.len(), dofs.len());
    for (s, mesh) in meshes.iter().enumerate() {
        for t in 0..mesh.triangles.len() {
            let (area, _) = triangle_geometry(mesh, s, t)?;
            let scale = params.rho * area.abs() / 12.0;
            for i in 0..3 {
                for k in 0..3 {
                    let w = if i == k { 2.0 } else { 1.0 };
                    coo.push(
                        dofs.global(s, mesh.triangles[t][i]),
                        dofs.global(s, mesh.triangles[t][k]),
                        scale * w * Mat2::identity(),
                    );
                }
            }
        }
    }
    Ok(coo.to_csr())
}

/// Load functional `ell(v) = int f v dx + int f_N v ds` with the constant
/// body force `f = -rho g e_2` and an optional constant Neumann traction.
pub fn assemble_load(
    meshes: &[Triangulation],
    dofs: &DofMap,
    params: &MaterialParams,
    neumann: Option<Vec2>,
) -> Result<Vec<Vec2>, FemError> {
    params.validate()?;
    let f = Vec2::new(0.0, -params.rho * params.g);
    let mut ell = crate::linalg::bv_zeros(dofs.len());
    for (s, mesh) in meshes.iter().enumerate() {
        for t in 0..mesh.triangles.len() {
            let (area, _) = triangle_geometry(mesh, s, t)?;
            let w = area.abs() / 3.0;
            for i in 0..3 {
                ell[dofs.global(s, mesh.triangles[t][i])] += w * f;
            }
        }
        if let Some(traction) = neumann {
            for face in &mesh.boundary_faces {
                if face.tag == BoundaryTag::Neumann {
                    let len = (mesh.vertices[face.v[1]] - mesh.vertices[face.v[0]]).norm();
                    for &v in &face.v {
                        ell[dofs.global(s, v)] += 0.5 * len * traction;
                    }
                }
            }
        }
    }
    Ok(ell)
}

/// Newmark operator `a_n = (2/tau) M + A + (tau/2) B`.
pub fn compose_an(m: &BlockCsr, a: &BlockCsr, b: &BlockCsr, tau: f64) -> BlockCsr {
    debug_assert!(tau > 0.0);
    BlockCsr::linear_combination(&[(2.0 / tau, m), (1.0, a), (0.5 * tau, b)])
}

/// Newmark right-hand side
/// `l_n = ell + M acc + (2/tau) M vel - (tau/2) B vel - B u`.
pub fn compose_ln(
    ell: &[Vec2],
    m: &BlockCsr,
    b: &BlockCsr,
    u_prev: &[Vec2],
    vel_prev: &[Vec2],
    acc_prev: &[Vec2],
    tau: f64,
) -> Vec<Vec2> {
    debug_assert!(tau > 0.0);
    let m_acc = m.mul_vec(acc_prev);
    let m_vel = m.mul_vec(vel_prev);
    let b_vel = b.mul_vec(vel_prev);
    let b_u = b.mul_vec(u_prev);
    let mut out = ell.to_vec();
    for i in 0..out.len() {
        out[i] += m_acc[i] + (2.0 / tau) * m_vel[i] - (0.5 * tau) * b_vel[i] - b_u[i];
    }
    out
}

/// Coordinate text dump `row col b00 b01 b10 b11`, one line per block.
pub fn dump_coordinate(a: &BlockCsr) -> String {
    let mut out = String::new();
    for i in 0..a.n_rows {
        for (j, b) in a.row(i) {
            out.push_str(&format!(
                "{} {} {:.17e} {:.17e} {:.17e} {:.17e}\n",
                i,
                j,
                b[(0, 0)],
                b[(0, 1)],
                b[(1, 0)],
                b[(1, 1)]
            ));
        }
    }
    out
}

/// Global prolongation from hierarchy level `k` to `k + 1`, acting on
/// block vectors over all subdomains.
pub fn global_prolongation(hier: &MeshHierarchy, k: usize) -> ScalarCsr {
    let fine = DofMap::new(&hier.levels[k + 1]);
    let coarse = DofMap::new(&hier.levels[k]);
    let mut rows = vec![Vec::new(); fine.len()];
    for (s, sub_rows) in hier.prolongations[k].iter().enumerate() {
        for (fv, entries) in sub_rows.iter().enumerate() {
            let row = &mut rows[fine.global(s, fv)];
            for &(cv, w) in entries {
                row.push((coarse.global(s, cv), w));
            }
        }
    }
    ScalarCsr::from_rows(coarse.len(), rows)
}

/// All level transfer operators of the hierarchy, coarsest first.
pub fn global_prolongations(hier: &MeshHierarchy) -> Vec<ScalarCsr> {
    (0..hier.num_levels() - 1).map(|k| global_prolongation(hier, k)).collect()
}
