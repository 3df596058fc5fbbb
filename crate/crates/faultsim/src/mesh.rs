//! Layered rectangular domains, fault-graded red-green refinement and the
//! nested mesh hierarchy used by assembly and multigrid.
//!
//! Each subdomain is meshed independently; the fault interfaces between
//! consecutive subdomains are resolved exactly by boundary faces on both
//! sides, but the two surface meshes need not match (the mortar coupling
//! takes care of that).

use crate::linalg::Vec2;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid subdomain spec: {0}")]
    InvalidSpec(String),
    #[error("refinement did not terminate within {0} levels")]
    RefinementOverflow(usize),
}

/// Boundary classification of a subdomain edge or a mesh boundary face.
/// Fault tags carry the interface index: interface `i` separates subdomain
/// `i` (below, non-mortar) from subdomain `i + 1` (above, mortar).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
    /// Top edge of the lower body of interface `i`: the non-mortar side.
    FaultBottom(usize),
    /// Bottom edge of the upper body of interface `i`: the mortar side.
    FaultTop(usize),
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// One layered body with boundary tags for its four axis-aligned edges.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SubdomainSpec {
    pub id: usize,
    pub rect: Rect,
    pub left: BoundaryTag,
    pub right: BoundaryTag,
    pub bottom: BoundaryTag,
    pub top: BoundaryTag,
}

/// Builds the standard layered stack: rectangles ordered bottom to top,
/// Dirichlet at the foundation and the upper boundary, Neumann sides,
/// fault interfaces between consecutive bodies.
pub fn layered_stack(rects: &[Rect]) -> Result<Vec<SubdomainSpec>, MeshError> {
    if rects.is_empty() {
        return Err(MeshError::InvalidSpec("no subdomains".into()));
    }
    let n = rects.len();
    let mut specs = Vec::with_capacity(n);
    for (i, r) in rects.iter().enumerate() {
        if r.width() <= 0.0 || r.height() <= 0.0 {
            return Err(MeshError::InvalidSpec(format!("degenerate rectangle for subdomain {i}")));
        }
        if i + 1 < n {
            let above = &rects[i + 1];
            if (above.y_min - r.y_max).abs() > 1e-12
                || (above.x_min - r.x_min).abs() > 1e-12
                || (above.x_max - r.x_max).abs() > 1e-12
            {
                return Err(MeshError::InvalidSpec(format!(
                    "subdomains {i} and {} do not share a horizontal interface",
                    i + 1
                )));
            }
        }
        specs.push(SubdomainSpec {
            id: i,
            rect: *r,
            left: BoundaryTag::Neumann,
            right: BoundaryTag::Neumann,
            bottom: if i == 0 { BoundaryTag::Dirichlet } else { BoundaryTag::FaultTop(i - 1) },
            top: if i + 1 == n { BoundaryTag::Dirichlet } else { BoundaryTag::FaultBottom(i) },
        });
    }
    Ok(specs)
}

/// Fault interface segments (interface index, endpoints) of a layered spec.
pub fn fault_segments(specs: &[SubdomainSpec]) -> Vec<(usize, [Vec2; 2])> {
    let mut out = Vec::new();
    for s in specs {
        if let BoundaryTag::FaultBottom(i) = s.top {
            out.push((
                i,
                [Vec2::new(s.rect.x_min, s.rect.y_max), Vec2::new(s.rect.x_max, s.rect.y_max)],
            ));
        }
    }
    out.sort_by_key(|&(i, _)| i);
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryFace {
    pub v: [usize; 2],
    pub tag: BoundaryTag,
}

/// Internal record of a green closure so it can be undone before the next
/// refinement round.
#[derive(Clone, Debug)]
struct Green {
    children: [usize; 2],
    parent: [usize; 3],
    /// bisected edge of the parent (endpoints, existing midpoint vertex)
    edge: [usize; 2],
    midpoint: usize,
}

/// A conforming triangulation of one subdomain.
#[derive(Clone, Debug)]
pub struct Triangulation {
    pub subdomain: usize,
    pub vertices: Vec<Vec2>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_faces: Vec<BoundaryFace>,
    greens: Vec<Green>,
}

impl Triangulation {
    /// An ad-hoc triangulation without refinement history, mainly for
    /// assembly tests and externally supplied meshes.
    pub fn from_parts(
        subdomain: usize,
        vertices: Vec<Vec2>,
        triangles: Vec<[usize; 3]>,
        boundary_faces: Vec<BoundaryFace>,
    ) -> Self {
        Triangulation { subdomain, vertices, triangles, boundary_faces, greens: Vec::new() }
    }

    pub fn fault_faces(&self, interface: usize) -> Vec<[usize; 2]> {
        self.boundary_faces
            .iter()
            .filter(|f| f.tag == BoundaryTag::FaultBottom(interface) || f.tag == BoundaryTag::FaultTop(interface))
            .map(|f| f.v)
            .collect()
    }

    pub fn triangle_vertices(&self, t: usize) -> [Vec2; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        ((a - b).norm()).max((b - c).norm()).max((c - a).norm())
    }

    pub fn min_angle(&self) -> f64 {
        let mut worst = f64::INFINITY;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle_vertices(t);
            for (p, q, r) in [(a, b, c), (b, c, a), (c, a, b)] {
                let u = q - p;
                let v = r - p;
                let ang = (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos();
                worst = worst.min(ang);
            }
        }
        worst.to_degrees()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        0.5 * ((b - a).perp(&(c - a))).abs()
    }

    /// Line-oriented debug dump: `v x y`, `t i j k sub`, `f i j interface`.
    pub fn dump_text(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            s.push_str(&format!("v {:.17e} {:.17e}\n", v.x, v.y));
        }
        for t in &self.triangles {
            s.push_str(&format!("t {} {} {} {}\n", t[0], t[1], t[2], self.subdomain));
        }
        for f in &self.boundary_faces {
            if let BoundaryTag::FaultBottom(i) | BoundaryTag::FaultTop(i) = f.tag {
                s.push_str(&format!("f {} {} {}\n", f.v[0], f.v[1], i));
            }
        }
        s
    }
}

/// Distance between a point and a segment.
fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + t * ab)).norm()
}

fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d = |a: Vec2, b: Vec2, c: Vec2| (b - a).perp(&(c - a));
    let d1 = d(q1, q2, p1);
    let d2 = d(q1, q2, p2);
    let d3 = d(p1, p2, q1);
    let d4 = d(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    false
}

/// Exact distance between two segments.
pub fn segment_segment_distance(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> f64 {
    if segments_intersect(p1, p2, q1, q2) {
        return 0.0;
    }
    point_segment_distance(p1, q1, q2)
        .min(point_segment_distance(p2, q1, q2))
        .min(point_segment_distance(q1, p1, p2))
        .min(point_segment_distance(q2, p1, p2))
}

/// Euclidean distance from a triangle (as a set) to the nearest fault
/// segment; exact for the convex polygon vs. segment case.
pub fn distance_to_faults(tri: &[Vec2; 3], faults: &[(usize, [Vec2; 2])]) -> f64 {
    let edges = [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])];
    let mut best = f64::INFINITY;
    for (_, [a, b]) in faults {
        for &(p, q) in &edges {
            best = best.min(segment_segment_distance(p, q, *a, *b));
        }
    }
    best
}

/// Structured split of each rectangle into right triangles with alternating
/// (union-jack) diagonals. A single cell yields 2 triangles and 4 vertices.
pub fn build_initial_mesh(specs: &[SubdomainSpec], target_h0: &[f64]) -> Result<Vec<Triangulation>, MeshError> {
    assert_eq!(specs.len(), target_h0.len());
    let mut out = Vec::with_capacity(specs.len());
    for (s, &h0) in specs.iter().zip(target_h0) {
        if h0 <= 0.0 {
            return Err(MeshError::InvalidSpec("target_h0 must be positive".into()));
        }
        let r = &s.rect;
        if r.width() <= 0.0 || r.height() <= 0.0 {
            return Err(MeshError::InvalidSpec(format!("degenerate rectangle for subdomain {}", s.id)));
        }
        let nx = (r.width() / h0).ceil().max(1.0) as usize;
        let ny = (r.height() / h0).ceil().max(1.0) as usize;
        out.push(structured_mesh(s, nx, ny));
    }
    Ok(out)
}

/// Structured mesh with explicit cell counts per direction.
pub fn structured_mesh(spec: &SubdomainSpec, nx: usize, ny: usize) -> Triangulation {
    let r = &spec.rect;
    let dx = r.width() / nx as f64;
    let dy = r.height() / ny as f64;
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Vec2::new(r.x_min + i as f64 * dx, r.y_min + j as f64 * dy));
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    let mut boundary_faces = Vec::new();
    for i in 0..nx {
        boundary_faces.push(BoundaryFace { v: [vid(i, 0), vid(i + 1, 0)], tag: spec.bottom });
        boundary_faces.push(BoundaryFace { v: [vid(i, ny), vid(i + 1, ny)], tag: spec.top });
    }
    for j in 0..ny {
        boundary_faces.push(BoundaryFace { v: [vid(0, j), vid(0, j + 1)], tag: spec.left });
        boundary_faces.push(BoundaryFace { v: [vid(nx, j), vid(nx, j + 1)], tag: spec.right });
    }
    Triangulation { subdomain: spec.id, vertices, triangles, boundary_faces, greens: Vec::new() }
}

/// Nested levels of triangulations plus the vertex interpolation weights
/// between consecutive levels.
pub struct MeshHierarchy {
    /// `levels[k][i]` is the level-k triangulation of subdomain i.
    pub levels: Vec<Vec<Triangulation>>,
    /// `prolongations[k][i]` maps level-k to level-(k+1) vertices of
    /// subdomain i: one weight row per fine vertex (coarse index, weight).
    pub prolongations: Vec<Vec<Vec<Vec<(usize, f64)>>>>,
}

impl MeshHierarchy {
    pub fn finest(&self) -> &Vec<Triangulation> {
        self.levels.last().unwrap()
    }
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
    pub fn total_vertices(&self, level: usize) -> usize {
        self.levels[level].iter().map(|t| t.vertices.len()).sum()
    }
}

type EdgeKey = (usize, usize);

fn edge_key(a: usize, b: usize) -> EdgeKey {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Fault-graded adaptive refinement: red refinement of all triangles with
/// `h_T >= (1 + grading * d(T, fault)) * h_min`, red propagation to
/// triangles with two or more bisected edges, green closure of the rest.
/// Green closures are undone before each round.
pub fn refine_adaptive(
    meshes: Vec<Triangulation>,
    faults: &[(usize, [Vec2; 2])],
    h_min: f64,
    grading: f64,
    level_cap: usize,
) -> Result<MeshHierarchy, MeshError> {
    let hier = refine_adaptive_capped(meshes, faults, h_min, grading, level_cap + 1);
    if hier.num_levels() > level_cap + 1 {
        return Err(MeshError::RefinementOverflow(level_cap));
    }
    Ok(hier)
}

/// Like [`refine_adaptive`], but stops silently after `max_rounds`
/// refinement sweeps even if the grading criterion is still violated.
/// Used for deliberately under-resolved (desk-scale) hierarchies.
pub fn refine_adaptive_capped(
    meshes: Vec<Triangulation>,
    faults: &[(usize, [Vec2; 2])],
    h_min: f64,
    grading: f64,
    max_rounds: usize,
) -> MeshHierarchy {
    assert!(h_min > 0.0 && grading >= 0.0);
    let mut levels = vec![meshes];
    let mut prolongations = Vec::new();
    while levels.len() <= max_rounds {
        let current = levels.last().unwrap();
        let mut refined = Vec::new();
        let mut prolong = Vec::new();
        let mut any = false;
        for mesh in current {
            let (m, p, changed) = refine_one(mesh, faults, h_min, grading);
            any = any || changed;
            refined.push(m);
            prolong.push(p);
        }
        if !any {
            break;
        }
        prolongations.push(prolong);
        levels.push(refined);
    }
    MeshHierarchy { levels, prolongations }
}

/// One refinement round for a single subdomain mesh. Returns the refined
/// mesh, the per-fine-vertex interpolation row, and whether any triangle
/// was actually refined red.
fn refine_one(
    mesh: &Triangulation,
    faults: &[(usize, [Vec2; 2])],
    h_min: f64,
    grading: f64,
) -> (Triangulation, Vec<Vec<(usize, f64)>>, bool) {
    // 1. undo green closures: restore parents, remember their bisected edges
    let green_children: BTreeSet<usize> = mesh.greens.iter().flat_map(|g| g.children).collect();
    let mut work: Vec<[usize; 3]> = Vec::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if !green_children.contains(&t) {
            work.push(*tri);
        }
    }
    let mut midpoints: BTreeMap<EdgeKey, usize> = BTreeMap::new();
    for g in &mesh.greens {
        work.push(g.parent);
        midpoints.insert(edge_key(g.edge[0], g.edge[1]), g.midpoint);
    }

    // 2. mark by the grading criterion
    let mut red = vec![false; work.len()];
    let mut changed = false;
    for (t, tri) in work.iter().enumerate() {
        let pts = [mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]];
        let h = (pts[0] - pts[1]).norm().max((pts[1] - pts[2]).norm()).max((pts[2] - pts[0]).norm());
        let d = distance_to_faults(&pts, faults);
        // no faults (or zero grading): plain uniform refinement to h_min
        let factor = if d.is_finite() { 1.0 + grading * d } else { 1.0 };
        if h >= factor * h_min {
            red[t] = true;
            changed = true;
        }
    }
    if !changed {
        // nothing to refine: the level is copied with identity interpolation
        let identity = (0..mesh.vertices.len()).map(|i| vec![(i, 1.0)]).collect();
        return (mesh.clone(), identity, false);
    }

    // 3. allocate midpoints of red triangles, propagate red refinement
    let mut vertices = mesh.vertices.clone();
    let mut prolong: Vec<Vec<(usize, f64)>> = (0..vertices.len()).map(|i| vec![(i, 1.0)]).collect();
    let mut bisected: BTreeSet<EdgeKey> = midpoints.keys().copied().collect();
    let get_mid = |a: usize, b: usize,
                       vertices: &mut Vec<Vec2>,
                       prolong: &mut Vec<Vec<(usize, f64)>>,
                       midpoints: &mut BTreeMap<EdgeKey, usize>,
                       bisected: &mut BTreeSet<EdgeKey>| {
        let k = edge_key(a, b);
        bisected.insert(k);
        *midpoints.entry(k).or_insert_with(|| {
            let m = vertices.len();
            vertices.push(0.5 * (vertices[a] + vertices[b]));
            prolong.push(vec![(a, 0.5), (b, 0.5)]);
            m
        })
    };
    loop {
        for (t, tri) in work.iter().enumerate() {
            if red[t] {
                for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
                    get_mid(a, b, &mut vertices, &mut prolong, &mut midpoints, &mut bisected);
                }
            }
        }
        let mut grew = false;
        for (t, tri) in work.iter().enumerate() {
            if red[t] {
                continue;
            }
            let n_bis = [edge_key(tri[0], tri[1]), edge_key(tri[1], tri[2]), edge_key(tri[2], tri[0])]
                .iter()
                .filter(|k| bisected.contains(k))
                .count();
            if n_bis >= 2 {
                red[t] = true;
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }

    // 4. emit children
    let mut triangles = Vec::new();
    let mut greens = Vec::new();
    for (t, tri) in work.iter().enumerate() {
        let [a, b, c] = *tri;
        if red[t] {
            let mab = midpoints[&edge_key(a, b)];
            let mbc = midpoints[&edge_key(b, c)];
            let mca = midpoints[&edge_key(c, a)];
            triangles.push([a, mab, mca]);
            triangles.push([mab, b, mbc]);
            triangles.push([mca, mbc, c]);
            triangles.push([mab, mbc, mca]);
        } else {
            let bis: Vec<(usize, usize, usize)> = [(a, b, c), (b, c, a), (c, a, b)]
                .into_iter()
                .filter(|&(p, q, _)| bisected.contains(&edge_key(p, q)))
                .collect();
            match bis.len() {
                0 => triangles.push([a, b, c]),
                1 => {
                    let (p, q, r) = bis[0];
                    let m = midpoints[&edge_key(p, q)];
                    let i0 = triangles.len();
                    triangles.push([p, m, r]);
                    triangles.push([m, q, r]);
                    greens.push(Green {
                        children: [i0, i0 + 1],
                        parent: [a, b, c],
                        edge: [p, q],
                        midpoint: m,
                    });
                }
                _ => unreachable!("propagation left a triangle with >=2 bisected edges"),
            }
        }
    }

    // 5. boundary faces, split where bisected
    let mut boundary_faces = Vec::new();
    for f in &mesh.boundary_faces {
        let [a, b] = f.v;
        if let Some(&m) = midpoints.get(&edge_key(a, b)) {
            boundary_faces.push(BoundaryFace { v: [a, m], tag: f.tag });
            boundary_faces.push(BoundaryFace { v: [m, b], tag: f.tag });
        } else {
            boundary_faces.push(*f);
        }
    }

    (
        Triangulation { subdomain: mesh.subdomain, vertices, triangles, boundary_faces, greens },
        prolong,
        true,
    )
}
