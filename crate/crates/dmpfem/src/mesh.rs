//! Interval and quadrilateral meshes: structured builders, deterministic
//! jitter, bilinear element maps, h-refinement, and GLL DOF numbering.
//!
//! Meshes are immutable after construction and carry their provenance
//! ([`MeshKind`]), which is what makes refinement well defined: refining a
//! jittered mesh rebuilds the refined parent and re-jitters it with the same
//! seed. Geometry is bilinear regardless of the solution order (the domains
//! are polygonal, so this is exact).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::SpectralBasis;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
}

/// Distinguishes the two Dirichlet groups of the square-with-hole domain;
/// single-boundary domains use `Outer` throughout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryRegion {
    Outer,
    Inner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub element: usize,
    /// 1D: 0 = left endpoint, 1 = right. 2D: 0 bottom, 1 right, 2 top, 3
    /// left, relative to the counter-clockwise corner order.
    pub local_edge: usize,
    pub tag: BoundaryTag,
    pub region: BoundaryRegion,
}

/// Construction recipe, kept so refinement and re-jittering are exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MeshKind {
    Interval {
        a: f64,
        b: f64,
        ne: usize,
    },
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        nx: usize,
        ny: usize,
    },
    Hole {
        n: usize,
    },
    Jittered {
        base: Box<MeshKind>,
        amplitude: f64,
        seed: u64,
    },
    Imported,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub dim: usize,
    /// For 1D meshes the second coordinate is zero.
    pub vertices: Vec<[f64; 2]>,
    /// Vertex indices per element: 2 for intervals, 4 counter-clockwise for
    /// quads.
    pub elements: Vec<Vec<usize>>,
    pub boundary: Vec<BoundaryEdge>,
    pub kind: MeshKind,
}

impl Mesh {
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Corner pair of a local edge in counter-clockwise order, so that
    /// `(t.y, -t.x)` for `t = b - a` is the outward direction.
    pub fn edge_ccw(&self, element: usize, local_edge: usize) -> (usize, usize) {
        let e = &self.elements[element];
        (e[local_edge], e[(local_edge + 1) % 4])
    }
}

pub fn build_interval_mesh(a: f64, b: f64, ne: usize) -> Result<Mesh> {
    if !(a < b) {
        return Err(Error::InvalidArgument(format!(
            "interval extent must satisfy a < b, got [{a}, {b}]"
        )));
    }
    if ne < 1 {
        return Err(Error::InvalidArgument("need at least one element".into()));
    }
    let vertices: Vec<[f64; 2]> = (0..=ne)
        .map(|i| [a + (b - a) * i as f64 / ne as f64, 0.0])
        .collect();
    let elements: Vec<Vec<usize>> = (0..ne).map(|e| vec![e, e + 1]).collect();
    let boundary = vec![
        BoundaryEdge {
            element: 0,
            local_edge: 0,
            tag: BoundaryTag::Dirichlet,
            region: BoundaryRegion::Outer,
        },
        BoundaryEdge {
            element: ne - 1,
            local_edge: 1,
            tag: BoundaryTag::Dirichlet,
            region: BoundaryRegion::Outer,
        },
    ];
    Ok(Mesh {
        dim: 1,
        vertices,
        elements,
        boundary,
        kind: MeshKind::Interval { a, b, ne },
    })
}

pub fn build_rect_mesh(
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    nx: usize,
    ny: usize,
) -> Result<Mesh> {
    if !(x0 < x1 && y0 < y1) {
        return Err(Error::InvalidArgument(format!(
            "rectangle extents are degenerate: [{x0}, {x1}] x [{y0}, {y1}]"
        )));
    }
    if nx < 1 || ny < 1 {
        return Err(Error::InvalidArgument(
            "need at least one element per direction".into(),
        ));
    }
    let vid = |i: usize, j: usize| i + j * (nx + 1);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([
                x0 + (x1 - x0) * i as f64 / nx as f64,
                y0 + (y1 - y0) * j as f64 / ny as f64,
            ]);
        }
    }
    let mut elements = Vec::with_capacity(nx * ny);
    let mut boundary = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let el = elements.len();
            elements.push(vec![vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]);
            let mut side = |local_edge| {
                boundary.push(BoundaryEdge {
                    element: el,
                    local_edge,
                    tag: BoundaryTag::Dirichlet,
                    region: BoundaryRegion::Outer,
                })
            };
            if j == 0 {
                side(0);
            }
            if i + 1 == nx {
                side(1);
            }
            if j + 1 == ny {
                side(2);
            }
            if i == 0 {
                side(3);
            }
        }
    }
    Ok(Mesh {
        dim: 2,
        vertices,
        elements,
        boundary,
        kind: MeshKind::Rect {
            x0,
            y0,
            x1,
            y1,
            nx,
            ny,
        },
    })
}

/// The unit square with the open hole `(4/9, 5/9)^2` removed, meshed as a
/// `9n x 9n` grid minus the center `n x n` block. The outer boundary and the
/// hole ring are both Dirichlet, distinguished by [`BoundaryRegion`].
pub fn build_hole_mesh(n: usize) -> Result<Mesh> {
    if n < 1 {
        return Err(Error::InvalidArgument(
            "hole mesh needs at least one subdivision per band".into(),
        ));
    }
    let m = 9 * n;
    let grid_vid = |i: usize, j: usize| i + j * (m + 1);
    let in_hole = |i: usize, j: usize| (4 * n..5 * n).contains(&i) && (4 * n..5 * n).contains(&j);

    let mut elements = Vec::new();
    let mut boundary = Vec::new();
    for j in 0..m {
        for i in 0..m {
            if in_hole(i, j) {
                continue;
            }
            let el = elements.len();
            elements.push(vec![
                grid_vid(i, j),
                grid_vid(i + 1, j),
                grid_vid(i + 1, j + 1),
                grid_vid(i, j + 1),
            ]);
            let mut side = |local_edge, region| {
                boundary.push(BoundaryEdge {
                    element: el,
                    local_edge,
                    tag: BoundaryTag::Dirichlet,
                    region,
                })
            };
            if j == 0 {
                side(0, BoundaryRegion::Outer);
            } else if in_hole(i, j - 1) {
                side(0, BoundaryRegion::Inner);
            }
            if i + 1 == m {
                side(1, BoundaryRegion::Outer);
            } else if in_hole(i + 1, j) {
                side(1, BoundaryRegion::Inner);
            }
            if j + 1 == m {
                side(2, BoundaryRegion::Outer);
            } else if in_hole(i, j + 1) {
                side(2, BoundaryRegion::Inner);
            }
            if i == 0 {
                side(3, BoundaryRegion::Outer);
            } else if in_hole(i - 1, j) {
                side(3, BoundaryRegion::Inner);
            }
        }
    }

    // compact away vertices strictly inside the hole
    let full: Vec<[f64; 2]> = (0..=m)
        .flat_map(|j| (0..=m).map(move |i| [i as f64 / m as f64, j as f64 / m as f64]))
        .collect();
    let mut used = vec![false; full.len()];
    for e in &elements {
        for &v in e {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; full.len()];
    let mut vertices = Vec::new();
    for (v, &u) in used.iter().enumerate() {
        if u {
            remap[v] = vertices.len();
            vertices.push(full[v]);
        }
    }
    for e in &mut elements {
        for v in e.iter_mut() {
            *v = remap[*v];
        }
    }

    Ok(Mesh {
        dim: 2,
        vertices,
        elements,
        boundary,
        kind: MeshKind::Hole { n },
    })
}

/// Multiplier of the jitter generator (a 64-bit LCG); documented so jittered
/// meshes are reproducible outside this crate.
pub const JITTER_LCG_MUL: u64 = 6364136223846793005;
/// Increment of the jitter generator.
pub const JITTER_LCG_INC: u64 = 1442695040888963407;

struct Lcg(u64);

impl Lcg {
    /// Advances the state and returns a uniform draw in `[0, 1)` built from
    /// the top 53 bits.
    fn next_unit(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(JITTER_LCG_MUL).wrapping_add(JITTER_LCG_INC);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Displaces the interior vertices of a structured 2D mesh by uniform
/// pseudo-random offsets of at most `amplitude` times the shortest incident
/// element edge, per coordinate. Boundary vertices stay fixed. Vertices are
/// visited in index order with two draws each, so the result is a pure
/// function of `(mesh, amplitude, seed)`. If any element inverts, the whole
/// displacement is retried from the same seed with the amplitude halved.
pub fn jitter_mesh(mesh: &Mesh, amplitude: f64, seed: u64) -> Result<Mesh> {
    if !(0.0..0.5).contains(&amplitude) {
        return Err(Error::InvalidArgument(format!(
            "jitter amplitude must lie in [0, 0.5), got {amplitude}"
        )));
    }
    if mesh.dim != 2 {
        return Err(Error::InvalidArgument(
            "jitter is defined for 2D meshes only".into(),
        ));
    }
    if matches!(mesh.kind, MeshKind::Jittered { .. } | MeshKind::Imported) {
        return Err(Error::Mesh(
            "jitter requires a structured rectangle or hole mesh".into(),
        ));
    }
    if amplitude == 0.0 {
        return Ok(mesh.clone());
    }

    let nv = mesh.vertices.len();
    let mut on_boundary = vec![false; nv];
    for be in &mesh.boundary {
        let (a, b) = mesh.edge_ccw(be.element, be.local_edge);
        on_boundary[a] = true;
        on_boundary[b] = true;
    }
    let mut local_size = vec![f64::INFINITY; nv];
    for e in &mesh.elements {
        for k in 0..4 {
            let (a, b) = (e[k], e[(k + 1) % 4]);
            let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
            let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
            local_size[a] = local_size[a].min(len);
            local_size[b] = local_size[b].min(len);
        }
    }

    let mut amp = amplitude;
    for _ in 0..=5 {
        let mut rng = Lcg(seed);
        let mut vertices = mesh.vertices.clone();
        for v in 0..nv {
            if on_boundary[v] {
                continue;
            }
            let ux = rng.next_unit();
            let uy = rng.next_unit();
            vertices[v][0] += (2.0 * ux - 1.0) * amp * local_size[v];
            vertices[v][1] += (2.0 * uy - 1.0) * amp * local_size[v];
        }
        let candidate = Mesh {
            dim: 2,
            vertices,
            elements: mesh.elements.clone(),
            boundary: mesh.boundary.clone(),
            kind: MeshKind::Jittered {
                base: Box::new(mesh.kind.clone()),
                amplitude,
                seed,
            },
        };
        // det J of a bilinear quad is linear in each reference coordinate,
        // so positivity at the four corners implies positivity everywhere
        let corner_positive = (0..candidate.n_elements()).all(|el| {
            let map = element_map(&candidate, el);
            [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]
                .iter()
                .all(|c| map.jacobian(c).det > 0.0)
        });
        if corner_positive {
            return Ok(candidate);
        }
        amp *= 0.5;
    }
    Err(Error::Computation(format!(
        "jitter with amplitude {amplitude} still inverts elements after 5 halvings"
    )))
}

/// Jacobian of an element map at one reference point.
#[derive(Clone, Copy, Debug)]
pub struct Jacobian {
    /// `mat[r][c] = d x_r / d xi_c`; for 1D the second row/column pad with
    /// the identity so `det` stays the 1D stretch factor.
    pub mat: [[f64; 2]; 2],
    pub det: f64,
}

impl Jacobian {
    /// Pushes a reference gradient forward to a physical gradient,
    /// `g_x = J^{-T} g_xi`.
    pub fn apply_inv_t(&self, g: [f64; 2]) -> [f64; 2] {
        let m = &self.mat;
        [
            (m[1][1] * g[0] - m[1][0] * g[1]) / self.det,
            (-m[0][1] * g[0] + m[0][0] * g[1]) / self.det,
        ]
    }
}

/// Affine (1D) or bilinear (2D) map from the reference element to one mesh
/// element.
#[derive(Clone, Debug)]
pub struct ElementMap {
    pub dim: usize,
    pub corners: Vec<[f64; 2]>,
}

pub fn element_map(mesh: &Mesh, element: usize) -> ElementMap {
    ElementMap {
        dim: mesh.dim,
        corners: mesh.elements[element]
            .iter()
            .map(|&v| mesh.vertices[v])
            .collect(),
    }
}

impl ElementMap {
    /// Physical location of the reference point `xi`.
    pub fn point(&self, xi: &[f64]) -> [f64; 2] {
        match self.dim {
            1 => {
                let (a, b) = (self.corners[0][0], self.corners[1][0]);
                [a + (b - a) * (xi[0] + 1.0) / 2.0, 0.0]
            }
            _ => {
                let (s, t) = (xi[0], xi[1]);
                let n = [
                    (1.0 - s) * (1.0 - t) / 4.0,
                    (1.0 + s) * (1.0 - t) / 4.0,
                    (1.0 + s) * (1.0 + t) / 4.0,
                    (1.0 - s) * (1.0 + t) / 4.0,
                ];
                let mut x = [0.0, 0.0];
                for (ni, c) in n.iter().zip(&self.corners) {
                    x[0] += ni * c[0];
                    x[1] += ni * c[1];
                }
                x
            }
        }
    }

    pub fn jacobian(&self, xi: &[f64]) -> Jacobian {
        match self.dim {
            1 => {
                let h2 = (self.corners[1][0] - self.corners[0][0]) / 2.0;
                Jacobian {
                    mat: [[h2, 0.0], [0.0, 1.0]],
                    det: h2,
                }
            }
            _ => {
                let (s, t) = (xi[0], xi[1]);
                let dn_ds = [
                    -(1.0 - t) / 4.0,
                    (1.0 - t) / 4.0,
                    (1.0 + t) / 4.0,
                    -(1.0 + t) / 4.0,
                ];
                let dn_dt = [
                    -(1.0 - s) / 4.0,
                    -(1.0 + s) / 4.0,
                    (1.0 + s) / 4.0,
                    (1.0 - s) / 4.0,
                ];
                let mut m = [[0.0; 2]; 2];
                for k in 0..4 {
                    m[0][0] += dn_ds[k] * self.corners[k][0];
                    m[0][1] += dn_dt[k] * self.corners[k][0];
                    m[1][0] += dn_ds[k] * self.corners[k][1];
                    m[1][1] += dn_dt[k] * self.corners[k][1];
                }
                Jacobian {
                    mat: m,
                    det: m[0][0] * m[1][1] - m[0][1] * m[1][0],
                }
            }
        }
    }
}

/// Rebuilds a mesh from its construction recipe.
pub fn build_mesh(kind: &MeshKind) -> Result<Mesh> {
    match kind {
        MeshKind::Interval { a, b, ne } => build_interval_mesh(*a, *b, *ne),
        MeshKind::Rect {
            x0,
            y0,
            x1,
            y1,
            nx,
            ny,
        } => build_rect_mesh(*x0, *y0, *x1, *y1, *nx, *ny),
        MeshKind::Hole { n } => build_hole_mesh(*n),
        MeshKind::Jittered {
            base,
            amplitude,
            seed,
        } => jitter_mesh(&build_mesh(base)?, *amplitude, *seed),
        MeshKind::Imported => Err(Error::Mesh(
            "imported meshes carry no construction recipe".into(),
        )),
    }
}

/// Splits every element `factor x factor` (`factor` pieces in 1D) by
/// rebuilding from the construction recipe; boundary tags are inherited.
/// Jittered meshes are re-jittered on the refined parent with the original
/// seed and amplitude. `factor == 1` returns the mesh unchanged.
pub fn refine(mesh: &Mesh, factor: usize) -> Result<Mesh> {
    if factor == 0 {
        return Err(Error::InvalidArgument(
            "refinement factor must be positive".into(),
        ));
    }
    if factor == 1 {
        return Ok(mesh.clone());
    }
    match &mesh.kind {
        MeshKind::Interval { a, b, ne } => build_interval_mesh(*a, *b, ne * factor),
        MeshKind::Rect {
            x0,
            y0,
            x1,
            y1,
            nx,
            ny,
        } => build_rect_mesh(*x0, *y0, *x1, *y1, nx * factor, ny * factor),
        MeshKind::Hole { n } => build_hole_mesh(n * factor),
        MeshKind::Jittered {
            base,
            amplitude,
            seed,
        } => {
            let parent = refine(&build_mesh(base)?, factor)?;
            jitter_mesh(&parent, *amplitude, *seed)
        }
        MeshKind::Imported => Err(Error::Mesh(
            "cannot refine an imported mesh (no construction recipe)".into(),
        )),
    }
}

/// Local flat node indices along a local edge, in traversal order. 2D edges
/// 0 and 2 run with increasing `xi`, edges 1 and 3 with increasing `eta`.
pub fn edge_local_nodes(dim: usize, p: usize, local_edge: usize) -> Vec<usize> {
    let n = p + 1;
    match (dim, local_edge) {
        (1, 0) => vec![0],
        (1, _) => vec![p],
        (_, 0) => (0..n).collect(),
        (_, 1) => (0..n).map(|k| p + k * n).collect(),
        (_, 2) => (0..n).map(|j| j + p * n).collect(),
        _ => (0..n).map(|k| k * n).collect(),
    }
}

/// A Dirichlet or Neumann DOF with its region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryNode {
    pub node: usize,
    pub tag: BoundaryTag,
    pub region: BoundaryRegion,
}

/// Global numbering of the order-`p` GLL nodes of a mesh.
///
/// Built topologically: corner nodes are shared through mesh vertices, edge
/// nodes through the (min-vertex, max-vertex) key of the shared edge with a
/// canonical min-to-max orientation, so C0 continuity holds exactly and no
/// coordinate comparisons are involved. Nodes are numbered in first-touch
/// order scanning elements in index order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DofMap {
    pub p: usize,
    pub n_nodes: usize,
    /// Global node ids per element in tensor order (first coordinate
    /// fastest).
    pub element_nodes: Vec<Vec<usize>>,
    /// Physical coordinates of every global node.
    pub coords: Vec<[f64; 2]>,
    /// Deduplicated boundary nodes; Dirichlet wins where a corner joins
    /// edges of different tags.
    pub boundary: Vec<BoundaryNode>,
}

impl DofMap {
    pub fn build(mesh: &Mesh, basis: &SpectralBasis) -> Result<DofMap> {
        let p = basis.order;
        let n = p + 1;
        let mut vertex_dof: Vec<Option<usize>> = vec![None; mesh.vertices.len()];
        let mut edge_dof: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut coords: Vec<[f64; 2]> = Vec::new();
        let mut element_nodes = Vec::with_capacity(mesh.n_elements());

        for (el, verts) in mesh.elements.iter().enumerate() {
            let expected = if mesh.dim == 1 { 2 } else { 4 };
            if verts.len() != expected {
                return Err(Error::Mesh(format!(
                    "element {el} has {} vertices, expected {expected}",
                    verts.len()
                )));
            }
            let map = element_map(mesh, el);
            let mut nodes = vec![usize::MAX; n.pow(mesh.dim as u32)];

            if mesh.dim == 1 {
                for j in 0..n {
                    nodes[j] = if j == 0 || j == p {
                        let v = verts[if j == 0 { 0 } else { 1 }];
                        *vertex_dof[v].get_or_insert_with(|| {
                            coords.push(mesh.vertices[v]);
                            coords.len() - 1
                        })
                    } else {
                        coords.push(map.point(&[basis.nodes[j]]));
                        coords.len() - 1
                    };
                }
            } else {
                for k in 0..n {
                    for j in 0..n {
                        let flat = j + k * n;
                        let corner = match (j, k) {
                            (0, 0) => Some(0),
                            (jj, 0) if jj == p => Some(1),
                            (jj, kk) if jj == p && kk == p => Some(2),
                            (0, kk) if kk == p => Some(3),
                            _ => None,
                        };
                        if let Some(c) = corner {
                            let v = verts[c];
                            nodes[flat] = *vertex_dof[v].get_or_insert_with(|| {
                                coords.push(mesh.vertices[v]);
                                coords.len() - 1
                            });
                            continue;
                        }
                        // (start vertex, end vertex, position along edge)
                        let edge = if k == 0 {
                            Some((verts[0], verts[1], j))
                        } else if j == p {
                            Some((verts[1], verts[2], k))
                        } else if k == p {
                            Some((verts[3], verts[2], j))
                        } else if j == 0 {
                            Some((verts[0], verts[3], k))
                        } else {
                            None
                        };
                        if let Some((a, b, t)) = edge {
                            let key = (a.min(b), a.max(b));
                            let start = *edge_dof.entry(key).or_insert_with(|| {
                                let start = coords.len();
                                // canonical direction: from min to max vertex
                                for s in 1..p {
                                    let xi = if a < b {
                                        basis.nodes[s]
                                    } else {
                                        basis.nodes[p - s]
                                    };
                                    let point = match () {
                                        _ if k == 0 => map.point(&[xi, -1.0]),
                                        _ if j == p => map.point(&[1.0, xi]),
                                        _ if k == p => map.point(&[xi, 1.0]),
                                        _ => map.point(&[-1.0, xi]),
                                    };
                                    coords.push(point);
                                }
                                start
                            });
                            let pos = if a < b { t } else { p - t };
                            nodes[flat] = start + pos - 1;
                        } else {
                            coords.push(map.point(&[basis.nodes[j], basis.nodes[k]]));
                            nodes[flat] = coords.len() - 1;
                        }
                    }
                }
            }
            element_nodes.push(nodes);
        }

        // boundary nodes, Dirichlet taking priority at tag joints
        let mut tagged: BTreeMap<usize, (BoundaryTag, BoundaryRegion)> = BTreeMap::new();
        for be in &mesh.boundary {
            for local in edge_local_nodes(mesh.dim, p, be.local_edge) {
                let node = element_nodes[be.element][local];
                tagged
                    .entry(node)
                    .and_modify(|(tag, region)| {
                        if be.tag == BoundaryTag::Dirichlet {
                            *tag = BoundaryTag::Dirichlet;
                            *region = be.region;
                        }
                    })
                    .or_insert((be.tag, be.region));
            }
        }
        let boundary = tagged
            .into_iter()
            .map(|(node, (tag, region))| BoundaryNode { node, tag, region })
            .collect();

        Ok(DofMap {
            p,
            n_nodes: coords.len(),
            element_nodes,
            coords,
            boundary,
        })
    }

    /// Dirichlet nodes only, with their regions.
    pub fn dirichlet_nodes(&self) -> impl Iterator<Item = &BoundaryNode> {
        self.boundary
            .iter()
            .filter(|b| b.tag == BoundaryTag::Dirichlet)
    }
}

/// Writes the newline-delimited text form: a `dim ne nv` header, `nv` vertex
/// lines (`dim` coordinates each), `ne` element lines (vertex indices), then
/// one line per boundary edge: `element local_edge D|N O|I`.
pub fn write_mesh_text(mesh: &Mesh, path: &Path) -> Result<()> {
    let ioerr = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(ioerr)?);
    writeln!(out, "{} {} {}", mesh.dim, mesh.n_elements(), mesh.vertices.len()).map_err(ioerr)?;
    for v in &mesh.vertices {
        if mesh.dim == 1 {
            writeln!(out, "{}", v[0]).map_err(ioerr)?;
        } else {
            writeln!(out, "{} {}", v[0], v[1]).map_err(ioerr)?;
        }
    }
    for e in &mesh.elements {
        let parts: Vec<String> = e.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", parts.join(" ")).map_err(ioerr)?;
    }
    for b in &mesh.boundary {
        let tag = match b.tag {
            BoundaryTag::Dirichlet => "D",
            BoundaryTag::Neumann => "N",
        };
        let region = match b.region {
            BoundaryRegion::Outer => "O",
            BoundaryRegion::Inner => "I",
        };
        writeln!(out, "{} {} {} {}", b.element, b.local_edge, tag, region).map_err(ioerr)?;
    }
    out.flush().map_err(ioerr)
}

/// Reads the text form written by [`write_mesh_text`]. The result has
/// `Imported` provenance (it cannot be refined or jittered). Elements are
/// validated for positive corner Jacobians.
pub fn read_mesh_text(path: &Path) -> Result<Mesh> {
    let parse_err = |what: String| Error::Parse {
        path: path.to_path_buf(),
        what,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| parse_err("empty file".into()))?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(format!("bad header: {header}"))))
        .collect::<Result<_>>()?;
    let &[dim, ne, nv] = head.as_slice() else {
        return Err(parse_err(format!("header needs `dim ne nv`: {header}")));
    };
    if dim != 1 && dim != 2 {
        return Err(parse_err(format!("dimension must be 1 or 2, got {dim}")));
    }

    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let line = lines
            .next()
            .ok_or_else(|| parse_err(format!("missing vertex line {i}")))?;
        let c: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(format!("bad vertex line: {line}"))))
            .collect::<Result<_>>()?;
        if c.len() != dim {
            return Err(parse_err(format!(
                "vertex line has {} coordinates, expected {dim}: {line}",
                c.len()
            )));
        }
        vertices.push([c[0], if dim == 2 { c[1] } else { 0.0 }]);
    }

    let per_element = if dim == 1 { 2 } else { 4 };
    let mut elements = Vec::with_capacity(ne);
    for i in 0..ne {
        let line = lines
            .next()
            .ok_or_else(|| parse_err(format!("missing element line {i}")))?;
        let v: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(format!("bad element line: {line}"))))
            .collect::<Result<_>>()?;
        if v.len() != per_element {
            return Err(parse_err(format!(
                "element line has {} vertices, expected {per_element}: {line}",
                v.len()
            )));
        }
        if v.iter().any(|&x| x >= nv) {
            return Err(parse_err(format!("vertex index out of range: {line}")));
        }
        elements.push(v);
    }

    let mut boundary = Vec::new();
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let &[el, le, tag, region] = parts.as_slice() else {
            return Err(parse_err(format!(
                "boundary line needs `element local_edge tag region`: {line}"
            )));
        };
        let element: usize = el
            .parse()
            .map_err(|_| parse_err(format!("bad boundary element: {line}")))?;
        let local_edge: usize = le
            .parse()
            .map_err(|_| parse_err(format!("bad boundary edge: {line}")))?;
        if element >= ne || local_edge >= if dim == 1 { 2 } else { 4 } {
            return Err(parse_err(format!("boundary reference out of range: {line}")));
        }
        let tag = match tag {
            "D" => BoundaryTag::Dirichlet,
            "N" => BoundaryTag::Neumann,
            other => return Err(parse_err(format!("unknown boundary tag {other}"))),
        };
        let region = match region {
            "O" => BoundaryRegion::Outer,
            "I" => BoundaryRegion::Inner,
            other => return Err(parse_err(format!("unknown boundary region {other}"))),
        };
        boundary.push(BoundaryEdge {
            element,
            local_edge,
            tag,
            region,
        });
    }

    let mesh = Mesh {
        dim,
        vertices,
        elements,
        boundary,
        kind: MeshKind::Imported,
    };
    for el in 0..mesh.n_elements() {
        let map = element_map(&mesh, el);
        let corners: &[[f64; 2]] = if dim == 1 {
            &[[-1.0, 0.0], [1.0, 0.0]]
        } else {
            &[[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]
        };
        for c in corners {
            let det = map.jacobian(&c[..dim]).det;
            if det <= 0.0 {
                return Err(Error::Mesh(format!(
                    "element {el} has non-positive Jacobian ({det})"
                )));
            }
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::gll_nodes;
    use approx::assert_abs_diff_eq;

    #[test]
    fn interval_mesh_examples() {
        let m = build_interval_mesh(0.0, 1.0, 4).unwrap();
        let xs: Vec<f64> = m.vertices.iter().map(|v| v[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(m.n_elements(), 4);
        assert_eq!(m.boundary.len(), 2);

        let m = build_interval_mesh(-1.0, 1.0, 1).unwrap();
        assert_eq!(m.n_elements(), 1);
        assert!(build_interval_mesh(1.0, 1.0, 3).is_err());
    }

    #[test]
    fn rect_mesh_counts_and_sizes() {
        let m = build_rect_mesh(0.0, 0.0, 1.0, 0.3, 20, 6).unwrap();
        assert_eq!(m.n_elements(), 120);
        assert_eq!(m.boundary.len(), 2 * (20 + 6));
        let map = element_map(&m, 0);
        let j = map.jacobian(&[0.2, -0.3]);
        assert_abs_diff_eq!(j.mat[0][0], 0.025, epsilon = 1e-15); // hx/2
        assert_abs_diff_eq!(j.mat[1][1], 0.025, epsilon = 1e-15); // hy/2
        assert_eq!(j.mat[0][1], 0.0);
        assert_eq!(j.mat[1][0], 0.0);

        let single = build_rect_mesh(0.0, 0.0, 1.0, 1.0, 1, 1).unwrap();
        assert_eq!(single.boundary.len(), 4);
        assert!(build_rect_mesh(0.0, 0.0, 0.0, 1.0, 1, 1).is_err());
    }

    #[test]
    fn hole_mesh_counts() {
        let m1 = build_hole_mesh(1).unwrap();
        assert_eq!(m1.n_elements(), 80);
        let inner = m1
            .boundary
            .iter()
            .filter(|b| b.region == BoundaryRegion::Inner)
            .count();
        assert_eq!(inner, 4);
        let m2 = build_hole_mesh(2).unwrap();
        assert_eq!(m2.n_elements(), 320);
        let inner = m2
            .boundary
            .iter()
            .filter(|b| b.region == BoundaryRegion::Inner)
            .count();
        assert_eq!(inner, 8);
        // every vertex is referenced by some element
        let mut used = vec![false; m2.vertices.len()];
        for e in &m2.elements {
            for &v in e {
                used[v] = true;
            }
        }
        assert!(used.iter().all(|&u| u));
    }

    #[test]
    fn element_map_examples() {
        let m = build_interval_mesh(0.0, 1.0, 4).unwrap();
        let map = element_map(&m, 1); // [0.25, 0.5]
        assert_eq!(map.point(&[-1.0])[0], 0.25);
        assert_eq!(map.jacobian(&[0.0]).det, 0.125);

        let sq = build_rect_mesh(0.0, 0.0, 1.0, 1.0, 1, 1).unwrap();
        let map = element_map(&sq, 0);
        assert_eq!(map.point(&[0.0, 0.0]), [0.5, 0.5]);
        assert_eq!(map.jacobian(&[0.0, 0.0]).det, 0.25);
    }

    #[test]
    fn jacobian_inverse_transpose_round_trip() {
        let m = build_hole_mesh(1).unwrap();
        let jm = jitter_mesh(&m, 0.2, 7).unwrap();
        let map = element_map(&jm, 17);
        let j = map.jacobian(&[0.3, -0.4]);
        // J^T (J^{-T} g) must reproduce g
        let g = [0.7, -1.3];
        let gi = j.apply_inv_t(g);
        let back = [
            j.mat[0][0] * gi[0] + j.mat[1][0] * gi[1],
            j.mat[0][1] * gi[0] + j.mat[1][1] * gi[1],
        ];
        assert_abs_diff_eq!(back[0], g[0], epsilon = 1e-14);
        assert_abs_diff_eq!(back[1], g[1], epsilon = 1e-14);
    }

    #[test]
    fn jitter_zero_amplitude_is_identity() {
        let m = build_rect_mesh(0.0, 0.0, 0.5, 0.5, 8, 8).unwrap();
        let j = jitter_mesh(&m, 0.0, 42).unwrap();
        assert_eq!(m, j);
    }

    #[test]
    fn jitter_is_deterministic_and_keeps_elements_valid() {
        let m = build_rect_mesh(0.0, 0.0, 0.5, 0.5, 8, 8).unwrap();
        let a = jitter_mesh(&m, 0.2, 42).unwrap();
        let b = jitter_mesh(&m, 0.2, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.vertices, m.vertices);
        // boundary vertices fixed
        for be in &m.boundary {
            let (va, vb) = m.edge_ccw(be.element, be.local_edge);
            assert_eq!(a.vertices[va], m.vertices[va]);
            assert_eq!(a.vertices[vb], m.vertices[vb]);
        }
        for el in 0..a.n_elements() {
            let map = element_map(&a, el);
            for c in [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]] {
                assert!(map.jacobian(&c).det > 0.0);
            }
        }
    }

    #[test]
    fn jitter_rejects_bad_input() {
        let m = build_rect_mesh(0.0, 0.0, 1.0, 1.0, 4, 4).unwrap();
        assert!(jitter_mesh(&m, 0.5, 1).is_err());
        assert!(jitter_mesh(&m, -0.1, 1).is_err());
        let j = jitter_mesh(&m, 0.1, 1).unwrap();
        assert!(jitter_mesh(&j, 0.1, 1).is_err()); // already jittered
        let line = build_interval_mesh(0.0, 1.0, 4).unwrap();
        assert!(jitter_mesh(&line, 0.1, 1).is_err());
    }

    #[test]
    fn refine_examples() {
        let m = build_interval_mesh(0.0, 1.0, 4).unwrap();
        assert_eq!(refine(&m, 2).unwrap().n_elements(), 8);
        let r = build_rect_mesh(0.0, 0.0, 1.0, 0.3, 20, 6).unwrap();
        assert_eq!(refine(&r, 2).unwrap().n_elements(), 40 * 12);
        let h = build_hole_mesh(1).unwrap();
        assert_eq!(refine(&h, 2).unwrap(), build_hole_mesh(2).unwrap());
        assert_eq!(refine(&h, 1).unwrap(), h);
    }

    #[test]
    fn refine_rejitters_from_same_seed() {
        let base = build_rect_mesh(0.0, 0.0, 0.5, 0.5, 4, 4).unwrap();
        let j = jitter_mesh(&base, 0.2, 42).unwrap();
        let r = refine(&j, 2).unwrap();
        let expected =
            jitter_mesh(&build_rect_mesh(0.0, 0.0, 0.5, 0.5, 8, 8).unwrap(), 0.2, 42).unwrap();
        assert_eq!(r, expected);
    }

    #[test]
    fn elements_partition_domain_area() {
        for (mesh, area) in [
            (build_rect_mesh(0.0, 0.0, 1.0, 0.3, 20, 6).unwrap(), 0.3),
            (build_hole_mesh(2).unwrap(), 1.0 - 1.0 / 81.0),
            (
                jitter_mesh(&build_rect_mesh(0.0, 0.0, 0.5, 0.5, 8, 8).unwrap(), 0.2, 42).unwrap(),
                0.25,
            ),
        ] {
            let rule = crate::quadrature::gauss_rule(2).unwrap();
            let mut total = 0.0;
            for el in 0..mesh.n_elements() {
                let map = element_map(&mesh, el);
                for qy in 0..2 {
                    for qx in 0..2 {
                        let w = rule.weights[qx] * rule.weights[qy];
                        total += w * map.jacobian(&[rule.points[qx], rule.points[qy]]).det;
                    }
                }
            }
            assert_abs_diff_eq!(total, area, epsilon = 1e-10);
        }
    }

    #[test]
    fn dof_count_matches_closed_form() {
        for (nx, ny, p) in [(3, 2, 4), (20, 6, 1), (5, 5, 8), (1, 1, 3)] {
            let m = build_rect_mesh(0.0, 0.0, 1.0, 1.0, nx, ny).unwrap();
            let b = gll_nodes(p).unwrap();
            let dofs = DofMap::build(&m, &b).unwrap();
            assert_eq!(dofs.n_nodes, (nx * p + 1) * (ny * p + 1), "nx={nx} ny={ny} p={p}");
        }
        let line = build_interval_mesh(0.0, 1.0, 4).unwrap();
        let b = gll_nodes(6).unwrap();
        assert_eq!(DofMap::build(&line, &b).unwrap().n_nodes, 25);
    }

    #[test]
    fn shared_edges_share_global_nodes() {
        let m = build_rect_mesh(0.0, 0.0, 1.0, 1.0, 2, 1).unwrap();
        let b = gll_nodes(5).unwrap();
        let dofs = DofMap::build(&m, &b).unwrap();
        // right edge of element 0 must equal left edge of element 1
        let right: Vec<usize> = edge_local_nodes(2, 5, 1)
            .iter()
            .map(|&l| dofs.element_nodes[0][l])
            .collect();
        let left: Vec<usize> = edge_local_nodes(2, 5, 3)
            .iter()
            .map(|&l| dofs.element_nodes[1][l])
            .collect();
        assert_eq!(right, left);
        // and their coordinates agree with the shared segment x = 0.5
        for &g in &right {
            assert_abs_diff_eq!(dofs.coords[g][0], 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn dirichlet_nodes_lie_on_the_boundary() {
        let m = build_hole_mesh(1).unwrap();
        let jm = jitter_mesh(&m, 0.2, 42).unwrap();
        let b = gll_nodes(3).unwrap();
        let dofs = DofMap::build(&jm, &b).unwrap();
        assert!(dofs.dirichlet_nodes().count() > 0);
        for bn in dofs.dirichlet_nodes() {
            let [x, y] = dofs.coords[bn.node];
            let on_outer = x.abs() < 1e-12
                || y.abs() < 1e-12
                || (x - 1.0).abs() < 1e-12
                || (y - 1.0).abs() < 1e-12;
            let on_inner = ((x - 4.0 / 9.0).abs() < 1e-12 || (x - 5.0 / 9.0).abs() < 1e-12)
                && (4.0 / 9.0 - 1e-12..=5.0 / 9.0 + 1e-12).contains(&y)
                || ((y - 4.0 / 9.0).abs() < 1e-12 || (y - 5.0 / 9.0).abs() < 1e-12)
                    && (4.0 / 9.0 - 1e-12..=5.0 / 9.0 + 1e-12).contains(&x);
            assert!(on_outer || on_inner, "node at ({x}, {y}) is not on the boundary");
            match bn.region {
                BoundaryRegion::Outer => assert!(on_outer),
                BoundaryRegion::Inner => assert!(on_inner),
            }
        }
    }

    #[test]
    fn text_round_trip() {
        let m = jitter_mesh(&build_rect_mesh(0.0, 0.0, 0.5, 0.5, 3, 3).unwrap(), 0.2, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.txt");
        write_mesh_text(&m, &path).unwrap();
        let back = read_mesh_text(&path).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.elements, m.elements);
        assert_eq!(back.boundary, m.boundary);
        assert_eq!(back.kind, MeshKind::Imported);
        assert!(refine(&back, 2).is_err());

        let line = build_interval_mesh(-1.0, 1.0, 3).unwrap();
        let path1 = dir.path().join("line.txt");
        write_mesh_text(&line, &path1).unwrap();
        let back = read_mesh_text(&path1).unwrap();
        assert_eq!(back.vertices, line.vertices);
    }

    #[test]
    fn text_reader_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "2 1 4\n0 0\n1 0\n1 1\n0 1\n0 1 2 9\n").unwrap();
        assert!(read_mesh_text(&path).is_err());
        // inverted element: clockwise corner order
        std::fs::write(&path, "2 1 4\n0 0\n1 0\n1 1\n0 1\n0 3 2 1\n").unwrap();
        assert!(matches!(read_mesh_text(&path), Err(Error::Mesh(_))));
    }

    #[test]
    fn edge_local_node_patterns() {
        assert_eq!(edge_local_nodes(2, 2, 0), vec![0, 1, 2]);
        assert_eq!(edge_local_nodes(2, 2, 1), vec![2, 5, 8]);
        assert_eq!(edge_local_nodes(2, 2, 2), vec![6, 7, 8]);
        assert_eq!(edge_local_nodes(2, 2, 3), vec![0, 3, 6]);
        assert_eq!(edge_local_nodes(1, 4, 0), vec![0]);
        assert_eq!(edge_local_nodes(1, 4, 1), vec![4]);
    }
}
