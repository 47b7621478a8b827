//! Direct and iterative solvers for the assembled symmetric
//! positive-definite systems.
//!
//! The default path is an envelope Cholesky factorization under a reverse
//! Cuthill-McKee ordering; systems above [`DIRECT_LIMIT`] unknowns fall back
//! to a Jacobi-preconditioned conjugate gradient loop. Every accepted
//! solution is residual-checked; both paths are deterministic.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::AssembledSystem;
use crate::sparse::CsrMatrix;
use crate::tol::{CG_TOL, SOLVE_RESIDUAL};
use crate::{Error, Result};

/// Largest system solved directly; beyond this the conjugate gradient
/// fallback takes over.
pub const DIRECT_LIMIT: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "cholesky")]
    Cholesky,
    #[serde(rename = "cg")]
    ConjugateGradient,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Cholesky => "cholesky",
            Method::ConjugateGradient => "cg",
        })
    }
}

/// How a solve went: the accepted solution's relative residual and, for the
/// iterative path, the iteration count. Wall time is measured but never
/// serialized, keeping reports byte-reproducible.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: Method,
    pub n: usize,
    pub iterations: usize,
    pub relative_residual: f64,
    #[serde(skip)]
    pub wall_seconds: f64,
}

/// Reverse Cuthill-McKee ordering: breadth-first search from a minimum-degree
/// start, visiting neighbors by (degree, index), then reversed. Returns
/// `perm` with `perm[new] = old`. Deterministic; handles disconnected graphs
/// by restarting from the lowest-degree unvisited node.
pub fn rcm_order(matrix: &CsrMatrix) -> Vec<usize> {
    let n = matrix.n;
    let degree: Vec<usize> = (0..n).map(|r| matrix.row_indices(r).len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::new();
    let mut neighbors = Vec::new();

    while order.len() < n {
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited node exists");
        visited[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            neighbors.clear();
            neighbors.extend(
                matrix
                    .row_indices(u)
                    .iter()
                    .copied()
                    .filter(|&v| v != u && !visited[v]),
            );
            neighbors.sort_unstable_by_key(|&v| (degree[v], v));
            for &v in &neighbors {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Lower-triangular envelope storage: row `i` packs columns
/// `first[i]..=i` contiguously. The Cholesky factor of a matrix fills only
/// inside the envelope, so the profile never grows during factorization.
struct Envelope {
    first: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

fn cholesky_envelope(matrix: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = matrix.n;
    let perm = rcm_order(matrix);
    let mut inv = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }

    let mut env = Envelope {
        first: vec![0; n],
        rows: Vec::with_capacity(n),
    };
    for i in 0..n {
        let old = perm[i];
        let mut first = i;
        for &c in matrix.row_indices(old) {
            let cn = inv[c];
            if cn < first {
                first = cn;
            }
        }
        env.first[i] = first;
        let mut row = vec![0.0; i - first + 1];
        for (&c, &v) in matrix
            .row_indices(old)
            .iter()
            .zip(matrix.row_values(old))
        {
            let cn = inv[c];
            if cn <= i {
                row[cn - first] = v;
            }
        }
        env.rows.push(row);
    }

    // In-place factorization A = L L^T on the envelope.
    for i in 0..n {
        let fi = env.first[i];
        for j in fi..i {
            let fj = env.first[j];
            let lo = fi.max(fj);
            let mut sum = env.rows[i][j - fi];
            for k in lo..j {
                sum -= env.rows[i][k - fi] * env.rows[j][k - fj];
            }
            env.rows[i][j - fi] = sum / env.rows[j][j - fj];
        }
        let mut diag = env.rows[i][i - fi];
        for k in fi..i {
            let l = env.rows[i][k - fi];
            diag -= l * l;
        }
        if !(diag > 0.0) {
            return Err(Error::Solver(format!(
                "matrix is not positive definite: pivot {diag:.3e} at dof {}",
                perm[i]
            )));
        }
        env.rows[i][i - fi] = diag.sqrt();
    }

    // Permute, forward- and back-substitute, permute back.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let fi = env.first[i];
        let mut sum = rhs[perm[i]];
        for k in fi..i {
            sum -= env.rows[i][k - fi] * y[k];
        }
        y[i] = sum / env.rows[i][i - fi];
    }
    for i in (0..n).rev() {
        let fi = env.first[i];
        y[i] /= env.rows[i][i - fi];
        let yi = y[i];
        for k in fi..i {
            y[k] -= env.rows[i][k - fi] * yi;
        }
    }
    let mut x = vec![0.0; n];
    for i in 0..n {
        x[perm[i]] = y[i];
    }
    Ok(x)
}

fn jacobi_pcg(matrix: &CsrMatrix, rhs: &[f64]) -> Result<(Vec<f64>, usize)> {
    let n = matrix.n;
    let mut diag = vec![0.0; n];
    for i in 0..n {
        let d = matrix.get(i, i);
        if !(d > 0.0) {
            return Err(Error::Solver(format!(
                "matrix is not positive definite: diagonal {d:.3e} at dof {i}"
            )));
        }
        diag[i] = d;
    }
    let norm_b = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if norm_b == 0.0 {
        return Ok((x, 0));
    }
    let mut r = rhs.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let max_iter = 50 * n;
    let mut history = std::collections::VecDeque::with_capacity(8);

    for it in 1..=max_iter {
        matrix.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Solver(format!(
                "matrix is not positive definite: p^T A p = {pap:.3e} at iteration {it}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let norm_r = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if history.len() == 8 {
            history.pop_front();
        }
        history.push_back(norm_r / norm_b);
        if norm_r <= CG_TOL * norm_b {
            return Ok((x, it));
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let tail: Vec<String> = history.iter().map(|r| format!("{r:.3e}")).collect();
    Err(Error::Computation(format!(
        "conjugate gradient stalled after {max_iter} iterations; last relative residuals [{}]",
        tail.join(", ")
    )))
}

fn relative_residual(matrix: &CsrMatrix, x: &[f64], rhs: &[f64]) -> f64 {
    let norm_b = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_b == 0.0 {
        return 0.0;
    }
    let mut ax = vec![0.0; matrix.n];
    matrix.matvec(x, &mut ax);
    let norm_r = ax
        .iter()
        .zip(rhs)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    norm_r / norm_b
}

/// Solves `matrix * x = rhs` with the requested method and verifies the
/// residual before accepting the solution.
pub fn solve_with(matrix: &CsrMatrix, rhs: &[f64], method: Method) -> Result<(Vec<f64>, SolveReport)> {
    if matrix.n != rhs.len() {
        return Err(Error::InvalidArgument(format!(
            "matrix of size {} vs load of size {}",
            matrix.n,
            rhs.len()
        )));
    }
    let start = Instant::now();
    let (x, iterations) = match method {
        Method::Cholesky => (cholesky_envelope(matrix, rhs)?, 0),
        Method::ConjugateGradient => jacobi_pcg(matrix, rhs)?,
    };
    let relative = relative_residual(matrix, &x, rhs);
    if !(relative <= SOLVE_RESIDUAL) {
        return Err(Error::Computation(format!(
            "solution rejected: relative residual {relative:.3e} exceeds {SOLVE_RESIDUAL:.1e}"
        )));
    }
    Ok((
        x,
        SolveReport {
            method,
            n: matrix.n,
            iterations,
            relative_residual: relative,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Solves an assembled, boundary-applied system: direct Cholesky up to
/// [`DIRECT_LIMIT`] unknowns, conjugate gradient beyond.
pub fn solve_spd(system: &AssembledSystem) -> Result<(Vec<f64>, SolveReport)> {
    let method = if system.rhs.len() <= DIRECT_LIMIT {
        Method::Cholesky
    } else {
        Method::ConjugateGradient
    };
    solve_with(&system.matrix, &system.rhs, method)
}
