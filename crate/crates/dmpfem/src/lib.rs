//! Spectral/hp finite elements for steady diffusion with linear decay,
//!
//! ```text
//!   alpha(x) c(x) - div[ D(x) grad c(x) ] = f(x)   in Omega
//! ```
//!
//! with Dirichlet and flux boundary conditions, discretized on quadrilateral
//! (2D) or interval (1D) meshes with Gauss-Lobatto-Legendre nodal bases.
//!
//! Three formulations are provided: the single-field Galerkin weak form and
//! two least-squares formulations of the first-order system `alpha c + div q
//! = f`, `q = -D grad c`, differing in how the residuals are weighted (`ls1`:
//! unweighted; `ls2`: decay residual scaled by `alpha^-1/2` and flux residual
//! by `D^-1/2`). None of these discretizations satisfies a discrete maximum
//! principle in general; the point of the harness is to measure when and how
//! badly non-negativity and maximum principles fail under p- and
//! h-refinement. See the module docs of [`analysis`] for the audit logic.
//!
//! Module map:
//! - [`basis`]: Legendre recurrences, GLL nodes, Lagrange cardinals, tensor bases
//! - [`quadrature`]: Gauss-Legendre rules and reference-domain integration
//! - [`mesh`]: structured interval/rectangle/hole meshes, jitter, refinement, DOF maps
//! - [`problem`]: coefficient fields, boundary data, the canonical problem catalog
//! - [`sparse`]: CSR storage and the row-map builder
//! - [`assembly`]: element matrices (Galerkin, least-squares, Voigt fast paths) and
//!   global assembly with Dirichlet elimination
//! - [`solver`]: RCM-ordered envelope Cholesky with a Jacobi-CG fallback
//! - [`analysis`]: field evaluation, extrema scans, maximum-principle audits,
//!   error norms, functional values, refinement sweeps
//! - [`export`]: visualization meshes, VTK legacy and CSV writers/readers
//! - [`run`]: run configurations and the orchestration used by the CLI
//!
//! Element-level work (assembly, scans, sweep rows) is data-parallel. With the
//! default `parallel` feature the crate uses rayon for those loops; results are
//! byte-identical to the sequential path because per-element outputs are
//! reduced in element order.

pub mod analysis;
pub mod assembly;
pub mod basis;
pub mod export;
pub mod mesh;
pub mod problem;
pub mod quadrature;
pub mod run;
pub mod solver;
pub mod sparse;
pub mod tol;

use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Variants mirror the failure classes surfaced to the
/// CLI: anything except `InvalidArgument` maps to a computation fault.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mesh error: {0}")]
    Mesh(String),
    #[error("degenerate coefficient: {0}")]
    Degenerate(String),
    #[error("linear solver: {0}")]
    Solver(String),
    #[error("computation failed: {0}")]
    Computation(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {}: {what}", path.display())]
    Parse { path: PathBuf, what: String },
}

impl Error {
    /// Usage errors exit with code 1; everything else is a computation fault
    /// and exits with code 2.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidArgument(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Execution mode for the element-parallel loops.
///
/// `Sequential` is always available and is the reference behavior; `Rayon`
/// exists only with the `parallel` feature. Both produce bit-identical
/// results: parallel loops compute independent per-element values and reduce
/// them in element order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    #[cfg(feature = "parallel")]
    Rayon,
}

impl Default for Parallelism {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        Parallelism::Rayon
    }
    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        Parallelism::Sequential
    }
}

/// Maps `f` over `0..n`, in parallel when requested, preserving index order.
pub(crate) fn map_indexed<T, F>(par: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match par {
        Parallelism::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
    }
}
