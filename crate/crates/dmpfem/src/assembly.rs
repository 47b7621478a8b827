//! Element and global assembly.
//!
//! Three formulations share one pipeline. The single-field path integrates
//! `alpha c w + grad(w) . D grad(c)` against the load `f w`. The
//! least-squares paths discretize the first-order system
//! `R1 = alpha c + div q - f`, `R2 = q + D grad(c)` and minimize
//! `1/2 ||beta R1||^2 + 1/2 ||W^(1/2) R2||^2` plus a boundary term on
//! prescribed-flux edges, with `(beta, W) = (1, I)` for LS1 and
//! `(alpha^(-1/2) or 1, D^(-1))` for LS2.
//!
//! Every element matrix is accumulated on the upper triangle and mirrored, so
//! assembled systems are exactly symmetric, bit for bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::basis::{tensor_basis, BasisEval, SpectralBasis};
use crate::mesh::{element_map, BoundaryTag, DofMap, ElementMap, Mesh};
use crate::problem::{BoundaryData, CoefficientField, SymMat2};
use crate::quadrature::{check_rule_order, QuadratureRule};
use crate::sparse::{CsrMatrix, SparseBuilder};
use crate::{map_indexed, Error, Parallelism, Result};

/// Discretization family: classical Galerkin on the concentration alone, or
/// one of the two least-squares forms on the concentration-flux pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    SingleField,
    Ls1,
    Ls2,
}

impl Formulation {
    /// Unknown fields per node: 1, or concentration plus one flux component
    /// per space dimension.
    pub fn n_fields(self, dim: usize) -> usize {
        match self {
            Formulation::SingleField => 1,
            _ => dim + 1,
        }
    }

    pub fn is_least_squares(self) -> bool {
        !matches!(self, Formulation::SingleField)
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-field" | "galerkin" => Ok(Formulation::SingleField),
            "ls1" => Ok(Formulation::Ls1),
            "ls2" => Ok(Formulation::Ls2),
            other => Err(Error::InvalidArgument(format!(
                "unknown formulation `{other}` (expected single-field, ls1, or ls2)"
            ))),
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Formulation::SingleField => "single-field",
            Formulation::Ls1 => "ls1",
            Formulation::Ls2 => "ls2",
        })
    }
}

/// Dense element matrix and load in blocked layout: local index
/// `field * n_nodes + node`, matrix row-major of side `n_fields * n_nodes`.
#[derive(Clone, Debug)]
pub struct ElementSystem {
    pub n_fields: usize,
    pub n_nodes: usize,
    pub matrix: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl ElementSystem {
    fn zero(n_fields: usize, n_nodes: usize) -> ElementSystem {
        let n = n_fields * n_nodes;
        ElementSystem {
            n_fields,
            n_nodes,
            matrix: vec![0.0; n * n],
            rhs: vec![0.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n_fields * self.n_nodes
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n() + j]
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i <= j, "accumulate on the upper triangle only");
        let n = self.n();
        self.matrix[i * n + j] += v;
    }

    /// Copies the strict upper triangle onto the lower one.
    fn mirror_upper(&mut self) {
        let n = self.n();
        for i in 0..n {
            for j in (i + 1)..n {
                self.matrix[j * n + i] = self.matrix[i * n + j];
            }
        }
    }

    /// Largest absolute entry; zero matrices report 0.
    pub fn max_abs(&self) -> f64 {
        self.matrix.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Shared per-quadrature-point basis data: tensor points, tensor weights,
/// and the basis values/reference gradients at each point. Built once per
/// (basis, rule) pair and reused across elements.
#[derive(Clone)]
pub(crate) struct BasisTable {
    pub dim: usize,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub evals: Vec<BasisEval>,
}

pub(crate) fn basis_table(
    basis: &SpectralBasis,
    dim: usize,
    rule: &QuadratureRule,
) -> Result<BasisTable> {
    if dim < 1 || dim > 2 {
        return Err(Error::InvalidArgument(format!(
            "assembly supports 1 or 2 dimensions, got {dim}"
        )));
    }
    let q = rule.points.len();
    let total = q.pow(dim as u32);
    let mut points = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut evals = Vec::with_capacity(total);
    for flat in 0..total {
        let (a, b) = (flat % q, flat / q);
        let point = if dim == 1 {
            [rule.points[a], 0.0]
        } else {
            [rule.points[a], rule.points[b]]
        };
        let w = if dim == 1 {
            rule.weights[a]
        } else {
            rule.weights[a] * rule.weights[b]
        };
        evals.push(tensor_basis(basis, dim, &point[..dim])?);
        points.push(point);
        weights.push(w);
    }
    Ok(BasisTable {
        dim,
        points,
        weights,
        evals,
    })
}

fn check_jacobian(det: f64, xi: &[f64]) -> Result<()> {
    if det <= 0.0 {
        return Err(Error::Mesh(format!(
            "non-positive Jacobian determinant {det:.3e} at reference point {xi:?}"
        )));
    }
    Ok(())
}

/// Single-field element matrix and load:
/// `K_ij = int alpha v_i v_j + grad(v_i) . D grad(v_j)`, `F_i = int f v_i`.
pub fn element_galerkin(
    map: &ElementMap,
    coeff: &CoefficientField,
    basis: &SpectralBasis,
    rule: &QuadratureRule,
) -> Result<ElementSystem> {
    check_rule_order(rule, basis.order)?;
    let table = basis_table(basis, map.dim, rule)?;
    element_galerkin_with(&table, map, coeff)
}

pub(crate) fn element_galerkin_with(
    table: &BasisTable,
    map: &ElementMap,
    coeff: &CoefficientField,
) -> Result<ElementSystem> {
    let nn = table.evals[0].values.len();
    let mut sys = ElementSystem::zero(1, nn);
    let mut grad = vec![[0.0f64; 2]; nn];
    for (k, eval) in table.evals.iter().enumerate() {
        let xi = &table.points[k][..table.dim];
        let jac = map.jacobian(xi);
        check_jacobian(jac.det, xi)?;
        let [x, y] = map.point(xi);
        let alpha = (coeff.alpha)(x, y);
        let d = (coeff.diffusivity)(x, y);
        let f = (coeff.forcing)(x, y);
        let w = table.weights[k] * jac.det;
        for (g, e) in grad.iter_mut().zip(&eval.gradients) {
            *g = jac.apply_inv_t([e[0], e[1]]);
        }
        for i in 0..nn {
            let dg = d.mul_vec(grad[i]);
            let vi = eval.values[i];
            for j in i..nn {
                sys.add(
                    i,
                    j,
                    w * (alpha * vi * eval.values[j] + dg[0] * grad[j][0] + dg[1] * grad[j][1]),
                );
            }
            sys.rhs[i] += w * f * vi;
        }
    }
    sys.mirror_upper();
    Ok(sys)
}

/// Pointwise least-squares weights: the squared scaling of the first-order
/// residual and the symmetric weight on the flux-mismatch residual.
fn ls_weights(form: Formulation, alpha: f64, d: &SymMat2, x: f64, y: f64) -> Result<(f64, SymMat2)> {
    match form {
        Formulation::Ls1 => Ok((1.0, SymMat2::identity())),
        Formulation::Ls2 => {
            let beta2 = if alpha > 0.0 { 1.0 / alpha } else { 1.0 };
            let w = d.inverse().ok_or_else(|| {
                Error::Degenerate(format!("diffusivity not invertible at ({x:.6}, {y:.6})"))
            })?;
            Ok((beta2, w))
        }
        Formulation::SingleField => Err(Error::InvalidArgument(
            "least-squares weights are undefined for the single-field formulation".into(),
        )),
    }
}

/// Least-squares element system over the concentration-flux pair; the
/// matrix gains `int_edge (w . n)(q . n)` on each listed prescribed-flux
/// edge (the load counterpart lives in [`neumann_load`]).
pub fn element_ls(
    map: &ElementMap,
    coeff: &CoefficientField,
    basis: &SpectralBasis,
    rule: &QuadratureRule,
    form: Formulation,
    neumann_edges: &[usize],
) -> Result<ElementSystem> {
    check_rule_order(rule, basis.order)?;
    let table = basis_table(basis, map.dim, rule)?;
    element_ls_with(&table, map, coeff, basis, rule, form, neumann_edges)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn element_ls_with(
    table: &BasisTable,
    map: &ElementMap,
    coeff: &CoefficientField,
    basis: &SpectralBasis,
    rule: &QuadratureRule,
    form: Formulation,
    neumann_edges: &[usize],
) -> Result<ElementSystem> {
    if !form.is_least_squares() {
        return Err(Error::InvalidArgument(
            "element_ls requires ls1 or ls2".into(),
        ));
    }
    let dim = map.dim;
    let n_fields = dim + 1;
    let nn = table.evals[0].values.len();
    let nl = n_fields * nn;
    let mut sys = ElementSystem::zero(n_fields, nn);
    let mut grad = vec![[0.0f64; 2]; nn];
    let mut r = vec![0.0f64; nl];
    let mut s = vec![[0.0f64; 2]; nl];
    let mut ws = vec![[0.0f64; 2]; nl];

    for (k, eval) in table.evals.iter().enumerate() {
        let xi = &table.points[k][..dim];
        let jac = map.jacobian(xi);
        check_jacobian(jac.det, xi)?;
        let [x, y] = map.point(xi);
        let alpha = (coeff.alpha)(x, y);
        let d = (coeff.diffusivity)(x, y);
        let f = (coeff.forcing)(x, y);
        let w = table.weights[k] * jac.det;
        let (beta2, wmat) = ls_weights(form, alpha, &d, x, y)?;

        for (g, e) in grad.iter_mut().zip(&eval.gradients) {
            *g = jac.apply_inv_t([e[0], e[1]]);
        }
        // First-order-residual and flux-mismatch factors per local DOF: the
        // concentration contributes (alpha v, D grad v), each flux component
        // contributes its divergence part and itself.
        for m in 0..nn {
            let v = eval.values[m];
            let g = grad[m];
            r[m] = alpha * v;
            s[m] = d.mul_vec(g);
            r[nn + m] = g[0];
            s[nn + m] = [v, 0.0];
            if dim == 2 {
                r[2 * nn + m] = g[1];
                s[2 * nn + m] = [0.0, v];
            }
        }
        for i in 0..nl {
            ws[i] = wmat.mul_vec(s[i]);
        }
        for i in 0..nl {
            let (ri, wsi) = (r[i], ws[i]);
            for j in i..nl {
                sys.add(
                    i,
                    j,
                    w * (beta2 * ri * r[j] + wsi[0] * s[j][0] + wsi[1] * s[j][1]),
                );
            }
            sys.rhs[i] += w * beta2 * f * ri;
        }
    }

    for &le in neumann_edges {
        add_edge_flux_matrix(&mut sys, map, basis, rule, le)?;
    }

    sys.mirror_upper();
    Ok(sys)
}

/// Reference parametrization of a local edge traversed counter-clockwise:
/// the point at parameter `s` in [-1, 1] and the direction `d xi / d s`.
pub(crate) fn edge_reference(local_edge: usize, s: f64) -> ([f64; 2], [f64; 2]) {
    match local_edge {
        0 => ([s, -1.0], [1.0, 0.0]),
        1 => ([1.0, s], [0.0, 1.0]),
        2 => ([-s, 1.0], [-1.0, 0.0]),
        _ => ([-1.0, -s], [0.0, -1.0]),
    }
}

/// Outward unit normal and length element `|d x / d s|` at an edge point.
/// Counter-clockwise traversal puts the outward direction at `(t_y, -t_x)`.
pub(crate) fn edge_normal(map: &ElementMap, xi: &[f64; 2], dxi: &[f64; 2]) -> ([f64; 2], f64) {
    let m = map.jacobian(&xi[..]).mat;
    let tx = m[0][0] * dxi[0] + m[0][1] * dxi[1];
    let ty = m[1][0] * dxi[0] + m[1][1] * dxi[1];
    let len = tx.hypot(ty);
    ([ty / len, -tx / len], len)
}

/// Adds `int_edge (w . n)(q . n)` over one local edge to the flux-flux
/// blocks (upper triangle only). In 1D the edge integral is a point product
/// at the endpoint.
fn add_edge_flux_matrix(
    sys: &mut ElementSystem,
    map: &ElementMap,
    basis: &SpectralBasis,
    rule: &QuadratureRule,
    local_edge: usize,
) -> Result<()> {
    let nn = sys.n_nodes;
    if map.dim == 1 {
        let xi = if local_edge == 0 { -1.0 } else { 1.0 };
        let eval = tensor_basis(basis, 1, &[xi])?;
        for m in 0..nn {
            for j in m..nn {
                // The two unit normals cancel in the product.
                sys.add(nn + m, nn + j, eval.values[m] * eval.values[j]);
            }
        }
        return Ok(());
    }
    for (q, &sq) in rule.points.iter().enumerate() {
        let (xi, dxi) = edge_reference(local_edge, sq);
        let (nrm, len) = edge_normal(map, &xi, &dxi);
        let eval = tensor_basis(basis, 2, &xi[..])?;
        let w = rule.weights[q] * len;
        for a in 0..2 {
            for b in a..2 {
                let c = w * nrm[a] * nrm[b];
                for m in 0..nn {
                    let start = if a == b { m } else { 0 };
                    for j in start..nn {
                        sys.add(
                            (a + 1) * nn + m,
                            (b + 1) * nn + j,
                            c * eval.values[m] * eval.values[j],
                        );
                    }
                }
            }
        }
    }
    Ok(())
}

/// Closed-form expansion of the LS1 element blocks (two-dimensional,
/// volume terms only). Cross-checked against [`element_ls`], which stays
/// authoritative.
pub fn element_ls1_voigt(
    map: &ElementMap,
    coeff: &CoefficientField,
    basis: &SpectralBasis,
    rule: &QuadratureRule,
) -> Result<ElementSystem> {
    element_voigt(map, coeff, basis, rule, Formulation::Ls1)
}

/// Closed-form expansion of the LS2 element blocks (two-dimensional,
/// volume terms only), reading the inverse-diffusivity factors as entries
/// of the matrix inverse. Matches [`element_ls`] when the decay
/// coefficient vanishes; the generic path stays authoritative.
pub fn element_ls2_voigt(
    map: &ElementMap,
    coeff: &CoefficientField,
    basis: &SpectralBasis,
    rule: &QuadratureRule,
) -> Result<ElementSystem> {
    element_voigt(map, coeff, basis, rule, Formulation::Ls2)
}

fn element_voigt(
    map: &ElementMap,
    coeff: &CoefficientField,
    basis: &SpectralBasis,
    rule: &QuadratureRule,
    form: Formulation,
) -> Result<ElementSystem> {
    if map.dim != 2 {
        return Err(Error::InvalidArgument(
            "closed-form least-squares kernels are two-dimensional".into(),
        ));
    }
    check_rule_order(rule, basis.order)?;
    let table = basis_table(basis, 2, rule)?;
    let nn = table.evals[0].values.len();
    let mut sys = ElementSystem::zero(3, nn);
    let mut gx = vec![0.0f64; nn];
    let mut gy = vec![0.0f64; nn];

    for (k, eval) in table.evals.iter().enumerate() {
        let xi = &table.points[k][..2];
        let jac = map.jacobian(xi);
        check_jacobian(jac.det, xi)?;
        let [x, y] = map.point(xi);
        let alpha = (coeff.alpha)(x, y);
        let d = (coeff.diffusivity)(x, y);
        let f = (coeff.forcing)(x, y);
        let w = table.weights[k] * jac.det;
        let v = &eval.values;
        for m in 0..nn {
            let g = jac.apply_inv_t([eval.gradients[m][0], eval.gradients[m][1]]);
            gx[m] = g[0];
            gy[m] = g[1];
        }
        let a2 = alpha * alpha;
        match form {
            Formulation::Ls1 => {
                // Concentration-concentration coupling through D^T D; the
                // cross factor is D_xy (D_xx + D_yy).
                let cxx = d.xx * d.xx + d.xy * d.xy;
                let cyy = d.xy * d.xy + d.yy * d.yy;
                let cxy = d.xy * (d.xx + d.yy);
                for i in 0..nn {
                    for j in i..nn {
                        sys.add(
                            i,
                            j,
                            w * (a2 * v[i] * v[j]
                                + cxx * gx[i] * gx[j]
                                + cyy * gy[i] * gy[j]
                                + cxy * (gx[i] * gy[j] + gy[i] * gx[j])),
                        );
                    }
                    for j in 0..nn {
                        sys.add(
                            i,
                            nn + j,
                            w * (alpha * v[i] * gx[j] + (d.xx * gx[i] + d.xy * gy[i]) * v[j]),
                        );
                        sys.add(
                            i,
                            2 * nn + j,
                            w * (alpha * v[i] * gy[j] + (d.xy * gx[i] + d.yy * gy[i]) * v[j]),
                        );
                    }
                }
                for m in 0..nn {
                    for j in m..nn {
                        sys.add(nn + m, nn + j, w * (v[m] * v[j] + gx[m] * gx[j]));
                        sys.add(2 * nn + m, 2 * nn + j, w * (v[m] * v[j] + gy[m] * gy[j]));
                    }
                    for j in 0..nn {
                        sys.add(nn + m, 2 * nn + j, w * gx[m] * gy[j]);
                    }
                }
            }
            Formulation::Ls2 => {
                let inv = d.inverse().ok_or_else(|| {
                    Error::Degenerate(format!("diffusivity not invertible at ({x:.6}, {y:.6})"))
                })?;
                for i in 0..nn {
                    for j in i..nn {
                        sys.add(
                            i,
                            j,
                            w * (a2 * v[i] * v[j]
                                + d.xx * gx[i] * gx[j]
                                + d.yy * gy[i] * gy[j]
                                + d.xy * (gx[i] * gy[j] + gy[i] * gx[j])),
                        );
                    }
                    for j in 0..nn {
                        sys.add(i, nn + j, w * (alpha * v[i] * gx[j] + gx[i] * v[j]));
                        sys.add(i, 2 * nn + j, w * (alpha * v[i] * gy[j] + gy[i] * v[j]));
                    }
                }
                for m in 0..nn {
                    for j in m..nn {
                        sys.add(nn + m, nn + j, w * (gx[m] * gx[j] + inv.xx * v[m] * v[j]));
                        sys.add(
                            2 * nn + m,
                            2 * nn + j,
                            w * (gy[m] * gy[j] + inv.yy * v[m] * v[j]),
                        );
                    }
                    for j in 0..nn {
                        sys.add(nn + m, 2 * nn + j, w * (gx[m] * gy[j] + inv.xy * v[m] * v[j]));
                    }
                }
            }
            Formulation::SingleField => unreachable!(),
        }
        for i in 0..nn {
            sys.rhs[i] += w * alpha * f * v[i];
            sys.rhs[nn + i] += w * f * gx[i];
            sys.rhs[2 * nn + i] += w * f * gy[i];
        }
    }
    sys.mirror_upper();
    Ok(sys)
}

/// Assembled sparse system. Global DOF `node * n_fields + field` interleaves
/// the fields so each node's unknowns stay adjacent. `constraints` is empty
/// until [`apply_dirichlet`] records the pinned DOFs and values.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dofs: DofMap,
    pub n_fields: usize,
    pub formulation: Formulation,
    pub constraints: Vec<(usize, f64)>,
}

/// Assembles the global matrix and load. Element systems are computed
/// independently (optionally in parallel) and scattered sequentially in
/// element order, so the result never depends on thread scheduling.
pub fn assemble_global(
    mesh: &Mesh,
    coeff: &CoefficientField,
    basis: &SpectralBasis,
    form: Formulation,
    rule: &QuadratureRule,
    par: Parallelism,
) -> Result<AssembledSystem> {
    check_rule_order(rule, basis.order)?;
    let dofs = DofMap::build(mesh, basis)?;
    let n_fields = form.n_fields(mesh.dim);
    let table = basis_table(basis, mesh.dim, rule)?;
    let mut neumann_edges = vec![Vec::new(); mesh.n_elements()];
    for be in &mesh.boundary {
        if be.tag == BoundaryTag::Neumann {
            neumann_edges[be.element].push(be.local_edge);
        }
    }

    let systems = map_indexed(par, mesh.n_elements(), |el| {
        let map = element_map(mesh, el);
        match form {
            Formulation::SingleField => element_galerkin_with(&table, &map, coeff),
            _ => element_ls_with(&table, &map, coeff, basis, rule, form, &neumann_edges[el]),
        }
    });

    let n = dofs.n_nodes * n_fields;
    let mut builder = SparseBuilder::new(n);
    let mut rhs = vec![0.0; n];
    for (el, sys) in systems.into_iter().enumerate() {
        let sys = sys?;
        let nodes = &dofs.element_nodes[el];
        let nn = sys.n_nodes;
        let nl = sys.n();
        if nodes.len() != nn {
            return Err(Error::Internal(format!(
                "element {el}: {} mapped nodes vs {nn} basis nodes",
                nodes.len()
            )));
        }
        for a in 0..n_fields {
            for (m, &node_i) in nodes.iter().enumerate() {
                let li = a * nn + m;
                let gi = node_i * n_fields + a;
                rhs[gi] += sys.rhs[li];
                for b in 0..n_fields {
                    for (j, &node_j) in nodes.iter().enumerate() {
                        builder.add(gi, node_j * n_fields + b, sys.matrix[li * nl + b * nn + j]);
                    }
                }
            }
        }
    }
    Ok(AssembledSystem {
        matrix: builder.into_csr(),
        rhs,
        dofs,
        n_fields,
        formulation: form,
        constraints: Vec::new(),
    })
}

/// Pins the concentration DOFs on Dirichlet boundary nodes by symmetric
/// elimination: known values move to the load, the row and column are
/// zeroed, the diagonal becomes one, and the load entry holds the value.
/// Flux DOFs are never constrained.
pub fn apply_dirichlet(
    mut system: AssembledSystem,
    boundary: &BoundaryData,
) -> Result<AssembledSystem> {
    let nf = system.n_fields;
    let n = system.rhs.len();
    let mut constraints: Vec<(usize, f64)> = system
        .dofs
        .dirichlet_nodes()
        .map(|bn| {
            let [x, y] = system.dofs.coords[bn.node];
            (bn.node * nf, (boundary.dirichlet)(x, y, bn.region))
        })
        .collect();
    constraints.sort_unstable_by(|a, b| a.0.cmp(&b.0));

    let mut constrained = vec![false; n];
    for &(k, _) in &constraints {
        if k >= n {
            return Err(Error::Internal(format!(
                "constrained dof {k} outside system of size {n}"
            )));
        }
        constrained[k] = true;
    }
    for &(k, v) in &constraints {
        if v == 0.0 {
            continue;
        }
        let cols = system.matrix.row_indices(k).to_vec();
        let vals = system.matrix.row_values(k).to_vec();
        for (j, a) in cols.into_iter().zip(vals) {
            if !constrained[j] {
                system.rhs[j] -= a * v;
            }
        }
    }
    for &(k, v) in &constraints {
        let cols = system.matrix.row_indices(k).to_vec();
        for c in cols {
            if let Some(e) = system.matrix.get_mut(k, c) {
                *e = 0.0;
            }
            if let Some(e) = system.matrix.get_mut(c, k) {
                *e = 0.0;
            }
        }
        match system.matrix.get_mut(k, k) {
            Some(e) => *e = 1.0,
            None => {
                return Err(Error::Internal(format!(
                    "missing diagonal for constrained dof {k}"
                )))
            }
        }
        system.rhs[k] = v;
    }
    system.constraints = constraints;
    Ok(system)
}

/// Adds the prescribed-flux edge contributions to the load. The datum `t`
/// is the conormal derivative `(D grad c) . n`, so the single-field load
/// gains `+ int_edge v t` while the least-squares load gains
/// `- int_edge (w . n) t` on the flux test functions (the matching matrix
/// term is added during element assembly). In 1D both reduce to endpoint
/// products.
pub fn neumann_load(
    mut system: AssembledSystem,
    mesh: &Mesh,
    boundary: &BoundaryData,
    basis: &SpectralBasis,
    rule: &QuadratureRule,
) -> Result<AssembledSystem> {
    let nf = system.n_fields;
    let ls = system.formulation.is_least_squares();
    for be in &mesh.boundary {
        if be.tag != BoundaryTag::Neumann {
            continue;
        }
        let map = element_map(mesh, be.element);
        let nodes = &system.dofs.element_nodes[be.element];
        if mesh.dim == 1 {
            let (xi, n) = if be.local_edge == 0 {
                (-1.0, -1.0)
            } else {
                (1.0, 1.0)
            };
            let [x, y] = map.point(&[xi]);
            let t = (boundary.neumann)(x, y);
            let eval = tensor_basis(basis, 1, &[xi])?;
            for (m, &node) in nodes.iter().enumerate() {
                if ls {
                    system.rhs[node * nf + 1] -= n * eval.values[m] * t;
                } else {
                    system.rhs[node * nf] += eval.values[m] * t;
                }
            }
        } else {
            for (q, &sq) in rule.points.iter().enumerate() {
                let (xi, dxi) = edge_reference(be.local_edge, sq);
                let (nrm, len) = edge_normal(&map, &xi, &dxi);
                let [x, y] = map.point(&xi[..]);
                let t = (boundary.neumann)(x, y);
                let w = rule.weights[q] * len;
                let eval = tensor_basis(basis, 2, &xi[..])?;
                for (m, &node) in nodes.iter().enumerate() {
                    if ls {
                        system.rhs[node * nf + 1] -= w * nrm[0] * eval.values[m] * t;
                        system.rhs[node * nf + 2] -= w * nrm[1] * eval.values[m] * t;
                    } else {
                        system.rhs[node * nf] += w * eval.values[m] * t;
                    }
                }
            }
        }
    }
    Ok(system)
}
