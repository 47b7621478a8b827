//! Gauss-Lobatto-Legendre nodal bases on the reference interval `[-1, 1]`.
//!
//! The cardinal functions are Lagrange polynomials on the GLL nodes,
//! evaluated in barycentric form (stable for all orders we accept). Tensor
//! bases on the reference square/cube use the same 1D cardinals per
//! coordinate, flattened with the first coordinate fastest.

use crate::{tol, Error, Result};

/// Maximum supported polynomial order. High enough for every study in the
/// harness; keeps node solves and barycentric weights comfortably inside f64.
pub const MAX_ORDER: usize = 32;

/// Legendre polynomial value and first derivative at `xi`.
///
/// Three-term recurrence in the value together with the derivative recurrence
/// `L'_{n+1} = L'_{n-1} + (2n+1) L_n`. Exact at the endpoints:
/// `legendre(p, 1.0) == (1.0, p(p+1)/2)`.
pub fn legendre(p: usize, xi: f64) -> (f64, f64) {
    if p == 0 {
        return (1.0, 0.0);
    }
    let (mut l0, mut l1) = (1.0, xi);
    let (mut d0, mut d1) = (0.0, 1.0);
    for n in 1..p {
        let a = (2 * n + 1) as f64;
        let l2 = (a * xi * l1 - n as f64 * l0) / (n + 1) as f64;
        let d2 = d0 + a * l1;
        l0 = l1;
        l1 = l2;
        d0 = d1;
        d1 = d2;
    }
    (l1, d1)
}

/// A nodal basis of order `p` on `[-1, 1]`: the `p + 1` GLL nodes in
/// ascending order plus the barycentric weights of the Lagrange cardinals.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    pub order: usize,
    /// Ascending, exactly antisymmetric: `nodes[p - j] == -nodes[j]`.
    pub nodes: Vec<f64>,
    /// Barycentric weights, normalized to unit maximum magnitude.
    pub weights: Vec<f64>,
}

impl SpectralBasis {
    pub fn n_nodes(&self) -> usize {
        self.order + 1
    }
}

/// Builds the order-`p` GLL basis. The nodes are `-1`, `1`, and the roots of
/// `L'_p`, found by Newton iteration from Chebyshev-Lobatto seeds; the
/// negative half is solved and mirrored so the set is exactly antisymmetric.
pub fn gll_nodes(p: usize) -> Result<SpectralBasis> {
    if p < 1 || p > MAX_ORDER {
        return Err(Error::InvalidArgument(format!(
            "basis order must be in 1..={MAX_ORDER}, got {p}"
        )));
    }
    let mut nodes = vec![0.0; p + 1];
    nodes[0] = -1.0;
    nodes[p] = 1.0;
    for j in 1..=(p / 2) {
        if 2 * j == p {
            nodes[j] = 0.0; // middle node of an even-order basis
        } else {
            let seed = -(std::f64::consts::PI * j as f64 / p as f64).cos();
            nodes[j] = newton_gll_interior(p, seed)?;
        }
    }
    for j in 1..=(p / 2) {
        if p - j != j {
            nodes[p - j] = -nodes[j];
        }
    }

    // Barycentric weights w_j = 1 / prod_{k != j} (x_j - x_k), lower half
    // computed directly and mirrored via w_{p-j} = (-1)^p w_j.
    let mut weights = vec![0.0; p + 1];
    for j in 0..=(p / 2) {
        let mut w = 1.0;
        for k in 0..=p {
            if k != j {
                w *= nodes[j] - nodes[k];
            }
        }
        weights[j] = 1.0 / w;
    }
    let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
    for j in 0..=(p / 2) {
        if p - j != j {
            weights[p - j] = sign * weights[j];
        }
    }
    let scale = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    for w in &mut weights {
        *w /= scale;
    }

    Ok(SpectralBasis {
        order: p,
        nodes,
        weights,
    })
}

/// Newton solve for one interior GLL node, i.e. a root of `L'_p`. Uses
/// `L''_p = (2 xi L'_p - p(p+1) L_p) / (1 - xi^2)`.
fn newton_gll_interior(p: usize, seed: f64) -> Result<f64> {
    let pp1 = (p * (p + 1)) as f64;
    let mut x = seed;
    for _ in 0..tol::NODE_NEWTON_MAX_ITER {
        let (l, d) = legendre(p, x);
        let denom = 2.0 * x * d - pp1 * l;
        let dx = -d * (1.0 - x * x) / denom;
        x += dx;
        if dx.abs() <= tol::NODE_NEWTON {
            return Ok(x);
        }
    }
    Err(Error::Computation(format!(
        "GLL node iteration stalled for order {p} from seed {seed}"
    )))
}

/// All `p + 1` cardinal values and derivatives at `xi`.
///
/// Barycentric evaluation away from the nodes; within [`tol::NODE_SNAP`] of a
/// node the values collapse to a Kronecker delta and the derivatives to the
/// corresponding differentiation-matrix row (the barycentric derivative is
/// ill-conditioned there). The derivative row uses the negative-sum trick for
/// its diagonal entry, so cardinal derivatives sum to zero exactly at nodes.
pub fn lagrange_1d(basis: &SpectralBasis, xi: f64) -> (Vec<f64>, Vec<f64>) {
    let n = basis.n_nodes();
    let (nodes, w) = (&basis.nodes, &basis.weights);

    let mut nearest = 0;
    let mut dmin = f64::INFINITY;
    for (j, &x) in nodes.iter().enumerate() {
        let d = (xi - x).abs();
        if d < dmin {
            dmin = d;
            nearest = j;
        }
    }

    let mut values = vec![0.0; n];
    let mut derivs = vec![0.0; n];
    if dmin <= tol::NODE_SNAP {
        let m = nearest;
        values[m] = 1.0;
        let mut diag = 0.0;
        for j in 0..n {
            if j != m {
                let d = (w[j] / w[m]) / (nodes[m] - nodes[j]);
                derivs[j] = d;
                diag -= d;
            }
        }
        derivs[m] = diag;
        return (values, derivs);
    }

    let mut u = vec![0.0; n];
    let mut du = vec![0.0; n];
    let (mut s, mut ds) = (0.0, 0.0);
    for j in 0..n {
        let d = xi - nodes[j];
        u[j] = w[j] / d;
        du[j] = -w[j] / (d * d);
        s += u[j];
        ds += du[j];
    }
    for j in 0..n {
        values[j] = u[j] / s;
        derivs[j] = (du[j] * s - u[j] * ds) / (s * s);
    }
    (values, derivs)
}

/// Tensor-product basis evaluation: all values and gradients at one point of
/// the reference element.
#[derive(Clone, Debug)]
pub struct BasisEval {
    pub dim: usize,
    /// One value per tensor node, first coordinate fastest.
    pub values: Vec<f64>,
    /// Reference-coordinate gradients; components beyond `dim` are zero.
    pub gradients: Vec<[f64; 3]>,
}

/// Evaluates the `(p + 1)^dim` tensor cardinals at `point` (reference
/// coordinates). Flat node index with `n = p + 1`:
/// `i = j + k n (+ l n^2)` for node `(j, k, l)`.
pub fn tensor_basis(basis: &SpectralBasis, dim: usize, point: &[f64]) -> Result<BasisEval> {
    if dim < 1 || dim > 3 {
        return Err(Error::InvalidArgument(format!(
            "tensor basis dimension must be 1, 2, or 3, got {dim}"
        )));
    }
    if point.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "point has {} coordinates, expected {dim}",
            point.len()
        )));
    }
    let n = basis.n_nodes();
    let per_axis: Vec<(Vec<f64>, Vec<f64>)> = (0..dim)
        .map(|d| lagrange_1d(basis, point[d]))
        .collect();

    let total = n.pow(dim as u32);
    let mut values = vec![0.0; total];
    let mut gradients = vec![[0.0; 3]; total];
    match dim {
        1 => {
            let (v, g) = &per_axis[0];
            for j in 0..n {
                values[j] = v[j];
                gradients[j][0] = g[j];
            }
        }
        2 => {
            let (vx, gx) = &per_axis[0];
            let (vy, gy) = &per_axis[1];
            for k in 0..n {
                for j in 0..n {
                    let i = j + k * n;
                    values[i] = vx[j] * vy[k];
                    gradients[i][0] = gx[j] * vy[k];
                    gradients[i][1] = vx[j] * gy[k];
                }
            }
        }
        _ => {
            let (vx, gx) = &per_axis[0];
            let (vy, gy) = &per_axis[1];
            let (vz, gz) = &per_axis[2];
            for l in 0..n {
                for k in 0..n {
                    for j in 0..n {
                        let i = j + (k + l * n) * n;
                        values[i] = vx[j] * vy[k] * vz[l];
                        gradients[i][0] = gx[j] * vy[k] * vz[l];
                        gradients[i][1] = vx[j] * gy[k] * vz[l];
                        gradients[i][2] = vx[j] * vy[k] * gz[l];
                    }
                }
            }
        }
    }
    Ok(BasisEval {
        dim,
        values,
        gradients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn legendre_low_orders_match_closed_forms() {
        assert_eq!(legendre(0, 0.37), (1.0, 0.0));
        assert_eq!(legendre(1, -0.8), (-0.8, 1.0));
        let (l2, d2) = legendre(2, 0.5);
        assert_abs_diff_eq!(l2, -0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(d2, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn legendre_endpoint_values_are_exact() {
        let (l, d) = legendre(7, 1.0);
        assert_eq!(l, 1.0);
        assert_eq!(d, 28.0); // p(p+1)/2
        let (l, _) = legendre(6, -1.0);
        assert_eq!(l, 1.0);
        let (l, _) = legendre(7, -1.0);
        assert_eq!(l, -1.0);
    }

    #[test]
    fn legendre_bounded_on_interval() {
        for p in 0..=12 {
            for i in 0..=100 {
                let x = -1.0 + 0.02 * i as f64;
                let (l, _) = legendre(p, x);
                assert!(l.abs() <= 1.0 + 1e-12, "|L_{p}({x})| = {}", l.abs());
            }
        }
    }

    #[test]
    fn gll_nodes_low_orders() {
        assert_eq!(gll_nodes(1).unwrap().nodes, vec![-1.0, 1.0]);
        assert_eq!(gll_nodes(2).unwrap().nodes, vec![-1.0, 0.0, 1.0]);
        let b = gll_nodes(3).unwrap();
        // interior nodes of order 3 are -+1/sqrt(5)
        assert_abs_diff_eq!(b.nodes[1], -0.4472135954999579, epsilon = 1e-15);
        assert_abs_diff_eq!(b.nodes[2], 0.4472135954999579, epsilon = 1e-15);
    }

    #[test]
    fn gll_nodes_are_roots_and_symmetric() {
        for p in [4, 7, 12, 16] {
            let b = gll_nodes(p).unwrap();
            assert_eq!(b.nodes.len(), p + 1);
            for j in 0..=p {
                assert_eq!(b.nodes[j], -b.nodes[p - j], "antisymmetry p={p} j={j}");
                let (_, d) = legendre(p, b.nodes[j]);
                let residual = (1.0 - b.nodes[j] * b.nodes[j]) * d;
                assert!(residual.abs() < 1e-12, "residual {residual} at p={p} j={j}");
            }
            for j in 1..=p {
                assert!(b.nodes[j] > b.nodes[j - 1], "ascending order p={p}");
            }
        }
    }

    #[test]
    fn gll_rejects_out_of_range_order() {
        assert!(gll_nodes(0).is_err());
        assert!(gll_nodes(MAX_ORDER + 1).is_err());
    }

    #[test]
    fn cardinals_are_kronecker_at_nodes() {
        let b = gll_nodes(6).unwrap();
        for m in 0..b.n_nodes() {
            let (v, _) = lagrange_1d(&b, b.nodes[m]);
            for j in 0..b.n_nodes() {
                assert_eq!(v[j], if j == m { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn linear_cardinals_at_midpoint() {
        let b = gll_nodes(1).unwrap();
        let (v, d) = lagrange_1d(&b, 0.0);
        assert_eq!(v, vec![0.5, 0.5]);
        assert_eq!(d, vec![-0.5, 0.5]);
    }

    #[test]
    fn cardinals_partition_unity_off_nodes() {
        let b = gll_nodes(4).unwrap();
        for xi in [-0.123456, 0.654321, 0.9, -0.31] {
            let (v, d) = lagrange_1d(&b, xi);
            let sv: f64 = v.iter().sum();
            let sd: f64 = d.iter().sum();
            assert_abs_diff_eq!(sv, 1.0, epsilon = 1e-13);
            assert_abs_diff_eq!(sd, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cardinal_derivative_matches_finite_difference() {
        let b = gll_nodes(5).unwrap();
        let h = 1e-6;
        for xi in [0.3, -0.77] {
            let (_, d) = lagrange_1d(&b, xi);
            let (vp, _) = lagrange_1d(&b, xi + h);
            let (vm, _) = lagrange_1d(&b, xi - h);
            for j in 0..b.n_nodes() {
                let fd = (vp[j] - vm[j]) / (2.0 * h);
                assert_abs_diff_eq!(d[j], fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn tensor_bilinear_at_center() {
        let b = gll_nodes(1).unwrap();
        let e = tensor_basis(&b, 2, &[0.0, 0.0]).unwrap();
        assert_eq!(e.values, vec![0.25; 4]);
        // corner ordering: (-1,-1), (1,-1), (-1,1), (1,1)
        assert_eq!(e.gradients[0][..2], [-0.25, -0.25]);
        assert_eq!(e.gradients[1][..2], [0.25, -0.25]);
        assert_eq!(e.gradients[2][..2], [-0.25, 0.25]);
        assert_eq!(e.gradients[3][..2], [0.25, 0.25]);
    }

    #[test]
    fn tensor_kronecker_at_tensor_node() {
        let b = gll_nodes(2).unwrap();
        // node (j, k) = (1, 2) -> flat 1 + 2 * 3 = 7
        let e = tensor_basis(&b, 2, &[b.nodes[1], b.nodes[2]]).unwrap();
        for (i, &v) in e.values.iter().enumerate() {
            assert_eq!(v, if i == 7 { 1.0 } else { 0.0 }, "index {i}");
        }
    }

    #[test]
    fn tensor_trilinear_center_and_unity() {
        let b = gll_nodes(1).unwrap();
        let e = tensor_basis(&b, 3, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(e.values, vec![0.125; 8]);
        let b4 = gll_nodes(4).unwrap();
        let e = tensor_basis(&b4, 2, &[0.217, -0.58]).unwrap();
        let s: f64 = e.values.iter().sum();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn tensor_rejects_bad_dimension() {
        let b = gll_nodes(2).unwrap();
        assert!(tensor_basis(&b, 0, &[]).is_err());
        assert!(tensor_basis(&b, 4, &[0.0; 4]).is_err());
        assert!(tensor_basis(&b, 2, &[0.0]).is_err());
    }
}
