//! Gauss-Legendre quadrature on the reference interval and its tensor
//! extensions to the reference square and cube.

use crate::basis::legendre;
use crate::{tol, Error, Result};

/// Largest supported point count per direction.
pub const MAX_NGP: usize = 32;

/// A 1D Gauss-Legendre rule: `points` ascending in `(-1, 1)`, `weights`
/// positive and summing to 2.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Number of quadrature points per direction for assembling order-`p`
/// operators: `p + 1` suffices for constant coefficients, one extra point
/// absorbs smooth spatial variation.
pub fn ngp_for(p: usize, varying_coefficients: bool) -> usize {
    if varying_coefficients {
        p + 2
    } else {
        p + 1
    }
}

/// Fails unless the rule has at least `p + 1` points per direction — the
/// minimum for which the assembled operators of an order-`p` basis with
/// constant coefficients are exact. Every assembly path funnels through this.
pub fn check_rule_order(rule: &QuadratureRule, p: usize) -> Result<()> {
    if rule.len() < p + 1 {
        return Err(Error::InvalidArgument(format!(
            "quadrature with {} points is insufficient for order {p} (need >= {})",
            rule.len(),
            p + 1
        )));
    }
    Ok(())
}

/// Builds the `ngp`-point Gauss-Legendre rule. Roots of `L_ngp` by Newton
/// iteration from Chebyshev seeds; the positive half is solved and mirrored.
/// Weights are `2 / ((1 - x^2) L'_ngp(x)^2)`.
pub fn gauss_rule(ngp: usize) -> Result<QuadratureRule> {
    if ngp < 1 || ngp > MAX_NGP {
        return Err(Error::InvalidArgument(format!(
            "quadrature point count must be in 1..={MAX_NGP}, got {ngp}"
        )));
    }
    let n = ngp;
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    if n % 2 == 1 {
        let (_, d) = legendre(n, 0.0);
        points[n / 2] = 0.0;
        weights[n / 2] = 2.0 / (d * d);
    }
    for i in 1..=(n / 2) {
        // i-th root from the right; seeds descend from +1
        let seed = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        let x = newton_gauss(n, seed)?;
        let (_, d) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * d * d);
        points[n - i] = x;
        points[i - 1] = -x;
        weights[n - i] = w;
        weights[i - 1] = w;
    }
    Ok(QuadratureRule { points, weights })
}

fn newton_gauss(n: usize, seed: f64) -> Result<f64> {
    let mut x = seed;
    for _ in 0..tol::NODE_NEWTON_MAX_ITER {
        let (l, d) = legendre(n, x);
        let dx = -l / d;
        x += dx;
        if dx.abs() <= tol::NODE_NEWTON {
            return Ok(x);
        }
    }
    Err(Error::Computation(format!(
        "Gauss node iteration stalled for {n} points from seed {seed}"
    )))
}

/// Integrates `f` over the reference element `[-1, 1]^dim` with an
/// `ngp`-point tensor rule. `f` receives reference coordinates.
pub fn integrate_ref<F>(dim: usize, ngp: usize, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if dim < 1 || dim > 3 {
        return Err(Error::InvalidArgument(format!(
            "integration dimension must be 1, 2, or 3, got {dim}"
        )));
    }
    let rule = gauss_rule(ngp)?;
    let n = rule.len();
    let mut total = 0.0;
    match dim {
        1 => {
            for q in 0..n {
                total += rule.weights[q] * f(&[rule.points[q]]);
            }
        }
        2 => {
            for qy in 0..n {
                for qx in 0..n {
                    let w = rule.weights[qx] * rule.weights[qy];
                    total += w * f(&[rule.points[qx], rule.points[qy]]);
                }
            }
        }
        _ => {
            for qz in 0..n {
                for qy in 0..n {
                    for qx in 0..n {
                        let w = rule.weights[qx] * rule.weights[qy] * rule.weights[qz];
                        total += w * f(&[rule.points[qx], rule.points[qy], rule.points[qz]]);
                    }
                }
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn small_rules_match_tabulated_values() {
        let r = gauss_rule(1).unwrap();
        assert_eq!(r.points, vec![0.0]);
        assert_eq!(r.weights, vec![2.0]);

        let r = gauss_rule(2).unwrap();
        assert_abs_diff_eq!(r.points[0], -0.5773502691896257, epsilon = 1e-15);
        assert_abs_diff_eq!(r.points[1], 0.5773502691896257, epsilon = 1e-15);
        assert_eq!(r.weights, vec![1.0, 1.0]);

        let r = gauss_rule(3).unwrap();
        assert_abs_diff_eq!(r.points[0], -0.7745966692414834, epsilon = 1e-15);
        assert_eq!(r.points[1], 0.0);
        assert_abs_diff_eq!(r.weights[0], 5.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights[1], 8.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn weights_sum_to_interval_length() {
        for ngp in 1..=MAX_NGP {
            let r = gauss_rule(ngp).unwrap();
            let s: f64 = r.weights.iter().sum();
            assert_abs_diff_eq!(s, 2.0, epsilon = 1e-13);
            for i in 1..ngp {
                assert!(r.points[i] > r.points[i - 1]);
            }
        }
    }

    #[test]
    fn exact_for_polynomials_below_degree_bound() {
        // an ngp-point rule integrates monomials up to degree 2 ngp - 1
        for ngp in 1..=12usize {
            let r = gauss_rule(ngp).unwrap();
            for k in 0..=(2 * ngp - 1) {
                let integral: f64 = r
                    .points
                    .iter()
                    .zip(&r.weights)
                    .map(|(x, w)| w * x.powi(k as i32))
                    .sum();
                let exact = if k % 2 == 0 { 2.0 / (k + 1) as f64 } else { 0.0 };
                assert_abs_diff_eq!(integral, exact, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn reference_integrals_by_dimension() {
        assert_abs_diff_eq!(
            integrate_ref(1, 2, |x| x[0] * x[0]).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(integrate_ref(2, 1, |_| 1.0).unwrap(), 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            integrate_ref(2, 3, |x| x[0] * x[0] * x[1] * x[1]).unwrap(),
            4.0 / 9.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(integrate_ref(3, 2, |_| 1.0).unwrap(), 8.0, epsilon = 1e-13);
    }

    #[test]
    fn rejects_out_of_range_requests() {
        assert!(gauss_rule(0).is_err());
        assert!(gauss_rule(MAX_NGP + 1).is_err());
        assert!(integrate_ref(4, 2, |_| 1.0).is_err());
        let r = gauss_rule(3).unwrap();
        assert!(check_rule_order(&r, 2).is_ok());
        assert!(check_rule_order(&r, 3).is_err());
    }

    #[test]
    fn ngp_policy() {
        assert_eq!(ngp_for(4, false), 5);
        assert_eq!(ngp_for(4, true), 6);
    }
}
