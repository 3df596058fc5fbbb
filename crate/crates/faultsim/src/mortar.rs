//! Mortar contact coupling across non-matching fault meshes.
//!
//! The lower (non-mortar) side of each fault carries dual basis functions
//! that are biorthogonal to the nodal basis under the deformed-measure
//! inner product. Weak nodal jumps `[[v]]_p = v_B(p) - sum_j w_pj v_T(j)`
//! replace the pointwise displacement jump; a sparse basis change maps
//! nodal coefficients to separated coordinates in which the jumps are plain
//! vector entries and the non-penetration constraint is a component-wise
//! zero.

use crate::fem::DofMap;
use crate::linalg::{triple_product, BlockCsr, Mat2, ScalarCsr, Vec2};
use crate::mesh::{BoundaryTag, Triangulation};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MortarError {
    #[error("no contact overlap on interface {0}")]
    NoContact(usize),
    #[error("degenerate contact geometry on interface {interface}: {detail}")]
    DegenerateGeometry { interface: usize, detail: String },
}

const PARAM_TOL: f64 = 1e-9;

/// One side of a fault: a chain of vertex indices ordered by reference x.
#[derive(Clone, Debug)]
pub struct FaultChain {
    pub subdomain: usize,
    pub nodes: Vec<usize>,
}

/// Extracts the ordered node chain of `side` faces on `interface`, if the
/// mesh carries any.
pub fn fault_chain(mesh: &Triangulation, interface: usize, bottom: bool) -> Option<FaultChain> {
    let want = if bottom { BoundaryTag::FaultBottom(interface) } else { BoundaryTag::FaultTop(interface) };
    let mut nodes: Vec<usize> = mesh
        .boundary_faces
        .iter()
        .filter(|f| f.tag == want)
        .flat_map(|f| f.v)
        .collect();
    if nodes.is_empty() {
        return None;
    }
    nodes.sort_unstable();
    nodes.dedup();
    nodes.sort_by(|&a, &b| mesh.vertices[a].x.total_cmp(&mesh.vertices[b].x));
    Some(FaultChain { subdomain: mesh.subdomain, nodes })
}

/// Deformed polyline with projection helpers.
struct Polyline {
    pts: Vec<Vec2>,
}

impl Polyline {
    fn len_segments(&self) -> usize {
        self.pts.len() - 1
    }

    fn point_at(&self, seg: usize, t: f64) -> Vec2 {
        self.pts[seg] + t * (self.pts[seg + 1] - self.pts[seg])
    }

    /// Closest point; returns (segment, clamped parameter, raw parameter on
    /// that segment, distance).
    fn project(&self, p: Vec2) -> (usize, f64, f64, f64) {
        let mut best = (0, 0.0, 0.0, f64::INFINITY);
        for s in 0..self.len_segments() {
            let a = self.pts[s];
            let d = self.pts[s + 1] - a;
            let raw = (p - a).dot(&d) / d.norm_squared();
            let t = raw.clamp(0.0, 1.0);
            let dist = (p - (a + t * d)).norm();
            if dist < best.3 {
                best = (s, t, raw, dist);
            }
        }
        best
    }

    /// Chain parameter (segment + local t) of the closest point.
    fn project_param(&self, p: Vec2) -> f64 {
        let (s, t, _, _) = self.project(p);
        s as f64 + t
    }
}

/// A sub-interval of one bottom segment matched to one top segment, with
/// its deformed length as quadrature weight.
#[derive(Clone, Copy, Debug)]
pub struct OverlapSegment {
    pub bottom_seg: usize,
    pub top_seg: usize,
    /// local parameter range on the bottom segment
    pub b_range: [f64; 2],
    /// local parameter on the top segment at the two interval endpoints
    pub t_range: [f64; 2],
    /// deformed length of the interval (m)
    pub weight: f64,
}

/// Approximate contact map of one fault interface.
#[derive(Clone, Debug)]
pub struct ContactMap {
    pub interface: usize,
    pub bottom: FaultChain,
    pub top: FaultChain,
    /// deformed positions of the chains
    pub bottom_def: Vec<Vec2>,
    pub top_def: Vec<Vec2>,
    /// per bottom node: contact-set membership
    pub contact: Vec<bool>,
    /// per bottom node: reference image of the contact projection
    pub pi_ref: Vec<Option<Vec2>>,
    pub overlaps: Vec<OverlapSegment>,
}

impl ContactMap {
    pub fn n_bottom(&self) -> usize {
        self.bottom.nodes.len()
    }
}

/// Builds the approximate contact map by closest-point projection of the
/// deformed bottom surface onto the deformed top polyline.
pub fn build_contact_map(
    interface: usize,
    bottom: FaultChain,
    top: FaultChain,
    _bottom_ref: &[Vec2],
    bottom_def: Vec<Vec2>,
    top_ref: &[Vec2],
    top_def: Vec<Vec2>,
) -> Result<ContactMap, MortarError> {
    let nb = bottom.nodes.len();
    let bpoly = Polyline { pts: bottom_def.clone() };
    let tpoly = Polyline { pts: top_def.clone() };
    if bpoly.len_segments() == 0 || tpoly.len_segments() == 0 {
        return Err(MortarError::NoContact(interface));
    }
    // contact zone in bottom chain parameter: bottom surface clipped against
    // the projections of the top endpoints
    let lo = bpoly.project_param(top_def[0]).max(0.0);
    let hi = bpoly.project_param(*top_def.last().unwrap()).min(bpoly.len_segments() as f64);
    if hi - lo < PARAM_TOL {
        return Err(MortarError::NoContact(interface));
    }

    // per-node projections and contact membership
    let mut contact = vec![false; nb];
    let mut pi_ref = vec![None; nb];
    for (j, &p) in bottom_def.iter().enumerate() {
        let (seg, t, raw, _) = tpoly.project(p);
        let inside = !((seg == 0 && raw < -PARAM_TOL)
            || (seg == tpoly.len_segments() - 1 && raw > 1.0 + PARAM_TOL));
        let in_zone = (j as f64) >= lo - PARAM_TOL && (j as f64) <= hi + PARAM_TOL;
        if inside && in_zone {
            contact[j] = true;
            pi_ref[j] = Some((1.0 - t) * top_ref[seg] + t * top_ref[seg + 1]);
        }
    }
    if !contact.iter().any(|&c| c) {
        return Err(MortarError::NoContact(interface));
    }

    // breakpoints: zone ends, bottom nodes, pullbacks of top vertices
    let mut cuts = vec![lo, hi];
    for j in 1..bpoly.len_segments() {
        let u = j as f64;
        if u > lo + PARAM_TOL && u < hi - PARAM_TOL {
            cuts.push(u);
        }
    }
    for &p in &top_def[1..top_def.len() - 1] {
        let u = bpoly.project_param(p);
        if u > lo + PARAM_TOL && u < hi - PARAM_TOL {
            cuts.push(u);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < PARAM_TOL);

    let mut overlaps = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a < PARAM_TOL {
            continue;
        }
        let mid = 0.5 * (a + b);
        let bottom_seg = (mid.floor() as usize).min(bpoly.len_segments() - 1);
        let pa = bpoly.point_at(bottom_seg, a - bottom_seg as f64);
        let pb = bpoly.point_at(bottom_seg, b - bottom_seg as f64);
        let pm = 0.5 * (pa + pb);
        let (top_seg, _, _, _) = tpoly.project(pm);
        let seg_vec = top_def[top_seg + 1] - top_def[top_seg];
        let t_of = |p: Vec2| ((p - top_def[top_seg]).dot(&seg_vec) / seg_vec.norm_squared()).clamp(0.0, 1.0);
        overlaps.push(OverlapSegment {
            bottom_seg,
            top_seg,
            b_range: [a - bottom_seg as f64, b - bottom_seg as f64],
            t_range: [t_of(pa), t_of(pb)],
            weight: (pb - pa).norm(),
        });
    }
    Ok(ContactMap { interface, bottom, top, bottom_def, top_def, contact, pi_ref, overlaps })
}

/// Dual mortar basis: per bottom segment the nodal values of the two dual
/// functions of its endpoints, plus per-node cell measures.
#[derive(Clone, Debug)]
pub struct DualBasis {
    /// `coeffs[e][q_local]` = nodal values of phi_{node q} on segment e
    pub coeffs: Vec<[[f64; 2]; 2]>,
    /// integral of lambda_p over the contact zone (deformed measure)
    pub cell_measure: Vec<f64>,
}

const GAUSS3: [(f64, f64); 3] = [
    (0.1127016653792583, 0.2777777777777778),
    (0.5, 0.4444444444444444),
    (0.8872983346207417, 0.2777777777777778),
];

/// Element-local dual construction: on each fault segment the coefficients
/// solve the local deformed-measure mass system, scaled so that global
/// biorthogonality `<lambda_p, phi_q> = delta_pq` holds exactly.
pub fn build_dual_basis(map: &ContactMap) -> Result<DualBasis, MortarError> {
    let nb = map.n_bottom();
    let n_seg = nb - 1;
    // local mass matrices and lambda integrals per bottom segment
    let mut mass = vec![[[0.0f64; 2]; 2]; n_seg];
    let mut d = vec![[0.0f64; 2]; n_seg];
    for o in &map.overlaps {
        for &(x, w) in &GAUSS3 {
            let s = o.b_range[0] + x * (o.b_range[1] - o.b_range[0]);
            let lam = [1.0 - s, s];
            for i in 0..2 {
                for k in 0..2 {
                    mass[o.bottom_seg][i][k] += w * o.weight * lam[i] * lam[k];
                }
                d[o.bottom_seg][i] += w * o.weight * lam[i];
            }
        }
    }
    let mut cell_measure = vec![0.0; nb];
    for e in 0..n_seg {
        cell_measure[e] += d[e][0];
        cell_measure[e + 1] += d[e][1];
    }
    let mut coeffs = vec![[[0.0f64; 2]; 2]; n_seg];
    for e in 0..n_seg {
        let m = mass[e];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let total = m[0][0] + m[1][1];
        if total == 0.0 {
            continue; // segment outside the contact zone
        }
        if det <= 1e-14 * total * total {
            return Err(MortarError::DegenerateGeometry {
                interface: map.interface,
                detail: format!("singular local mass on segment {e}"),
            });
        }
        let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
        for q in 0..2 {
            let node = e + q;
            let w_q = cell_measure[node];
            if w_q <= 0.0 {
                continue;
            }
            let scale = d[e][q] / w_q;
            coeffs[e][q] = [scale * inv[0][q], scale * inv[1][q]];
        }
    }
    Ok(DualBasis { coeffs, cell_measure })
}

/// `<lambda_p, phi_q>` under the deformed measure, assembled by Gauss
/// quadrature over the overlap segments (biorthogonality check).
pub fn dual_mass_matrix(map: &ContactMap, dual: &DualBasis) -> Vec<Vec<f64>> {
    let nb = map.n_bottom();
    let mut out = vec![vec![0.0; nb]; nb];
    for o in &map.overlaps {
        let e = o.bottom_seg;
        for &(x, w) in &GAUSS3 {
            let s = o.b_range[0] + x * (o.b_range[1] - o.b_range[0]);
            let lam = [1.0 - s, s];
            for p_local in 0..2 {
                for q_local in 0..2 {
                    let phi = dual.coeffs[e][q_local][0] * (1.0 - s) + dual.coeffs[e][q_local][1] * s;
                    out[e + p_local][e + q_local] += w * o.weight * lam[p_local] * phi;
                }
            }
        }
    }
    out
}

/// Mortar weight rows: `w[p][j] = <lambda_j_top o pi, phi_p>` over the
/// contact zone, indexed by (bottom node, top node).
pub fn mortar_weights(map: &ContactMap, dual: &DualBasis) -> Vec<Vec<(usize, f64)>> {
    let nb = map.n_bottom();
    let mut rows: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); nb];
    for o in &map.overlaps {
        let e = o.bottom_seg;
        for &(x, w) in &GAUSS3 {
            let s = o.b_range[0] + x * (o.b_range[1] - o.b_range[0]);
            let t = o.t_range[0] + x * (o.t_range[1] - o.t_range[0]);
            let lam_top = [1.0 - t, t];
            for p_local in 0..2 {
                let phi = dual.coeffs[e][p_local][0] * (1.0 - s) + dual.coeffs[e][p_local][1] * s;
                for j_local in 0..2 {
                    *rows[e + p_local].entry(o.top_seg + j_local).or_insert(0.0) +=
                        w * o.weight * phi * lam_top[j_local];
                }
            }
        }
    }
    rows.into_iter().map(|r| r.into_iter().collect()).collect()
}

/// Nodal normals and tangents on the deformed non-mortar surface:
/// `n_p` is the normalized sum of adjacent unit face normals (pointing from
/// the bottom into the top body), `t_p = n_p` rotated by +90 degrees.
pub fn nodal_normals(map: &ContactMap) -> Vec<(Vec2, Vec2)> {
    let nb = map.n_bottom();
    let rot90 = |v: Vec2| Vec2::new(-v.y, v.x);
    let mut out = Vec::with_capacity(nb);
    for j in 0..nb {
        let mut sum = Vec2::zeros();
        if j > 0 {
            let d = map.bottom_def[j] - map.bottom_def[j - 1];
            sum += rot90(d).normalize();
        }
        if j + 1 < nb {
            let d = map.bottom_def[j + 1] - map.bottom_def[j];
            sum += rot90(d).normalize();
        }
        let n = sum.normalize();
        out.push((n, rot90(n)));
    }
    out
}

/// One contact node in the separated basis.
#[derive(Clone, Debug)]
pub struct ContactNode {
    /// global block dof of the bottom node
    pub dof: usize,
    pub interface: usize,
    /// rotation with rows (t_p, n_p)
    pub q: Mat2,
    /// mortar weight row over global top dofs
    pub weights: Vec<(usize, f64)>,
    /// dual cell measure |C_p| (m)
    pub measure: f64,
}

/// Sparse basis change between nodal and separated (jump) coordinates.
#[derive(Clone, Debug)]
pub struct JumpBasisTransform {
    pub n: usize,
    pub nodes: Vec<ContactNode>,
    /// T = I - W: nodal -> separated
    t_mat: ScalarCsr,
    /// C = I + W: separated -> nodal (exact inverse since W^2 = 0)
    c_mat: ScalarCsr,
}

impl JumpBasisTransform {
    pub fn new(n: usize, nodes: Vec<ContactNode>) -> Self {
        let mut t_rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
        let mut c_rows = t_rows.clone();
        for node in &nodes {
            for &(j, w) in &node.weights {
                t_rows[node.dof].push((j, -w));
                c_rows[node.dof].push((j, w));
            }
        }
        JumpBasisTransform {
            n,
            nodes,
            t_mat: ScalarCsr::from_rows(n, t_rows),
            c_mat: ScalarCsr::from_rows(n, c_rows),
        }
    }

    /// Nodal coefficients -> separated coordinates (jumps at contact dofs).
    pub fn to_separated(&self, v: &[Vec2]) -> Vec<Vec2> {
        self.t_mat.mul_blocks(v)
    }

    /// Separated coordinates -> nodal coefficients.
    pub fn from_separated(&self, y: &[Vec2]) -> Vec<Vec2> {
        self.c_mat.mul_blocks(y)
    }

    /// Per-dof rotations into (t, n) components; identity off the faults.
    pub fn rotations(&self) -> Vec<Mat2> {
        let mut rot = vec![Mat2::identity(); self.n];
        for node in &self.nodes {
            rot[node.dof] = node.q;
        }
        rot
    }

    /// Transformed operator `R C^T A C R^T` acting on rotated separated
    /// coordinates.
    pub fn transform_matrix(&self, a: &BlockCsr) -> BlockCsr {
        triple_product(&self.c_mat, a).rotate(&self.rotations())
    }

    /// Transformed functional `R C^T l`.
    pub fn transform_vector(&self, l: &[Vec2]) -> Vec<Vec2> {
        let y = self.c_mat.mul_blocks_transpose(l);
        let rot = self.rotations();
        y.iter().zip(&rot).map(|(v, r)| r * v).collect()
    }

    /// Inverse of [`Self::transform_vector`]'s coordinate change for primal
    /// vectors: rotated separated -> nodal.
    pub fn primal_from_rotated(&self, z: &[Vec2]) -> Vec<Vec2> {
        let rot = self.rotations();
        let y: Vec<Vec2> = z.iter().zip(&rot).map(|(v, r)| r.transpose() * v).collect();
        self.from_separated(&y)
    }

    /// Nodal -> rotated separated coordinates.
    pub fn rotated_from_primal(&self, v: &[Vec2]) -> Vec<Vec2> {
        let rot = self.rotations();
        self.to_separated(v).iter().zip(&rot).map(|(v, r)| r * v).collect()
    }

    /// The projection onto the constrained space: zeroes the normal
    /// component of every weak jump.
    pub fn project(&self, v: &[Vec2]) -> Vec<Vec2> {
        let mut z = self.rotated_from_primal(v);
        for node in &self.nodes {
            z[node.dof].y = 0.0;
        }
        self.primal_from_rotated(&z)
    }

    /// Component fixing for the rotated separated system: Dirichlet dofs
    /// plus the normal jump components.
    pub fn constrained_fixed(&self, dofs: &DofMap) -> Vec<[bool; 2]> {
        let mut fixed = dofs.fixed.clone();
        for node in &self.nodes {
            fixed[node.dof][1] = true;
        }
        fixed
    }

    /// Weak jumps at the contact nodes (in xy components).
    pub fn jumps(&self, v: &[Vec2]) -> Vec<Vec2> {
        let y = self.to_separated(v);
        self.nodes.iter().map(|n| y[n.dof]).collect()
    }

    /// Coordinate text dump of the mortar weight rows.
    pub fn dump_weights(&self) -> String {
        let mut s = String::new();
        for node in &self.nodes {
            for &(j, w) in &node.weights {
                s.push_str(&format!("{} {} {:.17e}\n", node.dof, j, w));
            }
        }
        s
    }
}

/// All mortar data of one configuration: per-fault maps and duals plus the
/// global basis change.
#[derive(Clone, Debug)]
pub struct ContactCoupling {
    pub maps: Vec<ContactMap>,
    pub duals: Vec<DualBasis>,
    pub transform: JumpBasisTransform,
}

impl ContactCoupling {
    /// Builds the coupling for all interfaces present in the mesh set, with
    /// surfaces deformed by `u`.
    pub fn build(
        meshes: &[Triangulation],
        dofs: &DofMap,
        u: &[Vec2],
    ) -> Result<ContactCoupling, MortarError> {
        let mut maps = Vec::new();
        let mut duals = Vec::new();
        let mut nodes = Vec::new();
        for interface in 0..meshes.len().saturating_sub(1) {
            let bottom = match fault_chain(&meshes[interface], interface, true) {
                Some(c) => c,
                None => continue,
            };
            let top = fault_chain(&meshes[interface + 1], interface, false)
                .ok_or(MortarError::NoContact(interface))?;
            let deform = |chain: &FaultChain, mesh: &Triangulation| -> Vec<Vec2> {
                chain
                    .nodes
                    .iter()
                    .map(|&v| mesh.vertices[v] + u[dofs.global(chain.subdomain, v)])
                    .collect()
            };
            let bottom_def = deform(&bottom, &meshes[interface]);
            let top_def = deform(&top, &meshes[interface + 1]);
            let bottom_ref: Vec<Vec2> =
                bottom.nodes.iter().map(|&v| meshes[interface].vertices[v]).collect();
            let top_ref: Vec<Vec2> =
                top.nodes.iter().map(|&v| meshes[interface + 1].vertices[v]).collect();
            let map = build_contact_map(
                interface, bottom, top, &bottom_ref, bottom_def, &top_ref, top_def,
            )?;
            let dual = build_dual_basis(&map)?;
            let weights = mortar_weights(&map, &dual);
            let normals = nodal_normals(&map);
            for (j, &local) in map.bottom.nodes.iter().enumerate() {
                if !map.contact[j] {
                    continue;
                }
                let (n, t) = normals[j];
                let q = Mat2::new(t.x, t.y, n.x, n.y);
                let row: Vec<(usize, f64)> = weights[j]
                    .iter()
                    .map(|&(tj, w)| (dofs.global(map.top.subdomain, map.top.nodes[tj]), w))
                    .collect();
                nodes.push(ContactNode {
                    dof: dofs.global(map.bottom.subdomain, local),
                    interface,
                    q,
                    weights: row,
                    measure: dual.cell_measure[j],
                });
            }
            maps.push(map);
            duals.push(dual);
        }
        Ok(ContactCoupling { maps, duals, transform: JumpBasisTransform::new(dofs.len(), nodes) })
    }
}
