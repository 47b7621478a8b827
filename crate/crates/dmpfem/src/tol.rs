//! Centralized numeric tolerances.
//!
//! Every inexact comparison in the crate goes through a named constant so that
//! the rationale lives in one place and tests can reference the same values.

/// Newton tolerance for node solves (GLL and Gauss points).
///
/// Roots of Legendre-type polynomials are simple and well separated, so
/// Newton converges quadratically; 1e-14 on the update leaves the nodes
/// accurate to the last bit after the final correction step.
pub const NODE_NEWTON: f64 = 1e-14;

/// Maximum Newton iterations for a single node solve. Generous: convergence
/// from Chebyshev seeds takes under ten iterations for every order we accept.
pub const NODE_NEWTON_MAX_ITER: usize = 100;

/// Distance below which an evaluation point is snapped to a basis node.
///
/// At a node the barycentric form is singular; within this distance of one,
/// the cardinal values are a Kronecker delta and the derivatives come from the
/// differentiation-matrix row. The snap error is O(|phi''| * 1e-12), far below
/// solver accuracy, while the barycentric derivative formula would lose ~1e-4
/// of relative accuracy at this distance to cancellation.
pub const NODE_SNAP: f64 = 1e-12;

/// Slack for containment and extremum comparisons in the maximum-principle
/// audits: a minimum is a violation only if it undershoots the admissible
/// bound by more than this.
pub const DMP: f64 = 1e-12;

/// Threshold below which a scanned value counts as negative when computing
/// the negative-sample fraction. Tighter than [`DMP`] so that the fraction
/// picks up marginal undershoots that the verdicts forgive.
pub const NEG_MASK: f64 = 1e-13;

/// Smallest admissible eigenvalue for a diffusivity that must be inverted
/// (LS2 weighting). At or below this the tensor is treated as degenerate.
pub const DEGENERATE_EIG: f64 = 1e-14;

/// Relative residual that a linear solve must reach for the run to count as
/// converged; checked after both the direct and the iterative path.
pub const SOLVE_RESIDUAL: f64 = 1e-10;

/// Convergence target for the conjugate-gradient fallback (relative to the
/// right-hand side norm). Tighter than [`SOLVE_RESIDUAL`] so the post-check
/// has margin.
pub const CG_TOL: f64 = 1e-12;
