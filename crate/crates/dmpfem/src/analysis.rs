//! Evaluation and auditing of solved fields: dense extrema scans, the two
//! maximum-principle checks plus the non-negativity check, error norms,
//! energy and least-squares functional diagnostics, and refinement sweeps.

use serde::{Deserialize, Serialize};

use crate::assembly::{
    apply_dirichlet, assemble_global, basis_table, edge_normal, edge_reference, neumann_load,
    Formulation,
};
use crate::basis::{gll_nodes, tensor_basis};
use crate::mesh::{edge_local_nodes, element_map, refine, DofMap, Mesh};
use crate::problem::{ProblemSpec, ScalarField, SignClass};
use crate::quadrature::{gauss_rule, ngp_for, QuadratureRule};
use crate::solver::{solve_spd, SolveReport};
use crate::tol::{DMP, NEG_MASK};
use crate::{map_indexed, Error, Parallelism, Result};

/// Default points per element per direction for extrema scans.
pub const SCAN_DENSITY: usize = 16;

/// A solved field: nodal concentration values, and nodal flux values for the
/// least-squares formulations. Serializable so audits can rerun on stored
/// solutions.
#[derive(Clone, Serialize, Deserialize)]
pub struct FieldSolution {
    pub mesh: Mesh,
    pub dofs: DofMap,
    pub formulation: Formulation,
    pub concentration: Vec<f64>,
    pub flux: Option<Vec<[f64; 2]>>,
}

impl FieldSolution {
    pub fn p(&self) -> usize {
        self.dofs.p
    }

    /// Splits an interleaved solve vector (`node * n_fields + field`) into
    /// per-field nodal values.
    pub fn from_dof_vector(
        mesh: Mesh,
        dofs: DofMap,
        formulation: Formulation,
        x: &[f64],
    ) -> Result<FieldSolution> {
        let nf = formulation.n_fields(mesh.dim);
        let n = dofs.n_nodes;
        if x.len() != n * nf {
            return Err(Error::Internal(format!(
                "dof vector of length {} for {} nodes x {} fields",
                x.len(),
                n,
                nf
            )));
        }
        let concentration: Vec<f64> = (0..n).map(|i| x[i * nf]).collect();
        let flux = if formulation.is_least_squares() {
            Some(
                (0..n)
                    .map(|i| {
                        if mesh.dim == 1 {
                            [x[i * nf + 1], 0.0]
                        } else {
                            [x[i * nf + 1], x[i * nf + 2]]
                        }
                    })
                    .collect(),
            )
        } else {
            None
        };
        Ok(FieldSolution {
            mesh,
            dofs,
            formulation,
            concentration,
            flux,
        })
    }
}

/// Assembles, applies boundary data, and solves one problem instance.
pub fn solve_problem(
    mesh: &Mesh,
    problem: &ProblemSpec,
    formulation: Formulation,
    p: usize,
    ngp: Option<usize>,
    par: Parallelism,
) -> Result<(FieldSolution, SolveReport)> {
    let basis = gll_nodes(p)?;
    let ngp = ngp.unwrap_or_else(|| ngp_for(p, problem.coefficients.varying));
    let rule = gauss_rule(ngp)?;
    let system = assemble_global(
        mesh,
        &problem.coefficients,
        &basis,
        formulation,
        &rule,
        par,
    )?;
    let system = neumann_load(system, mesh, &problem.boundary, &basis, &rule)?;
    let system = apply_dirichlet(system, &problem.boundary)?;
    let (x, report) = solve_spd(&system)?;
    let sol = FieldSolution::from_dof_vector(mesh.clone(), system.dofs, formulation, &x)?;
    Ok((sol, report))
}

/// Evaluates the solution inside one element at a reference point. Returns
/// the concentration and, for least-squares solutions, the flux.
pub fn evaluate(
    sol: &FieldSolution,
    element: usize,
    xi: &[f64],
) -> Result<(f64, Option<[f64; 2]>)> {
    if element >= sol.mesh.n_elements() {
        return Err(Error::InvalidArgument(format!(
            "element {element} out of range ({} elements)",
            sol.mesh.n_elements()
        )));
    }
    let basis = gll_nodes(sol.dofs.p)?;
    let eval = tensor_basis(&basis, sol.mesh.dim, xi)?;
    let nodes = &sol.dofs.element_nodes[element];
    let mut c = 0.0;
    for (m, &node) in nodes.iter().enumerate() {
        c += eval.values[m] * sol.concentration[node];
    }
    let flux = sol.flux.as_ref().map(|q| {
        let mut v = [0.0f64; 2];
        for (m, &node) in nodes.iter().enumerate() {
            v[0] += eval.values[m] * q[node][0];
            v[1] += eval.values[m] * q[node][1];
        }
        v
    });
    Ok((c, flux))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

impl Verdict {
    fn from_bool(ok: bool) -> Verdict {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::NotApplicable => "not-applicable",
        })
    }
}

impl std::str::FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Verdict> {
        match s {
            "pass" => Ok(Verdict::Pass),
            "fail" => Ok(Verdict::Fail),
            "not-applicable" => Ok(Verdict::NotApplicable),
            other => Err(Error::InvalidArgument(format!("unknown verdict `{other}`"))),
        }
    }
}

/// The three audited properties. Checks whose hypotheses the problem does
/// not satisfy are marked not-applicable rather than passed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub nonneg_ok: Verdict,
    pub mp_diffusion_ok: Verdict,
    pub mp_decay_ok: Verdict,
}

impl Verdicts {
    pub fn not_applicable() -> Verdicts {
        Verdicts {
            nonneg_ok: Verdict::NotApplicable,
            mp_diffusion_ok: Verdict::NotApplicable,
            mp_decay_ok: Verdict::NotApplicable,
        }
    }
}

/// Extrema scan of one solution: global and boundary extrema with
/// locations, the fraction of sample points below `-1e-13`, and the audit
/// verdicts once [`audit_dmp`] fills them in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmpReport {
    pub min_value: f64,
    pub min_location: [f64; 2],
    pub max_value: f64,
    pub max_location: [f64; 2],
    pub boundary_min: f64,
    pub boundary_max: f64,
    pub negative_fraction: f64,
    pub eval_density: usize,
    pub verdicts: Verdicts,
}

struct Candidate {
    value: f64,
    location: [f64; 2],
}

struct ElementScan {
    min: Candidate,
    max: Candidate,
    negative: usize,
    total: usize,
}

fn fold_min(best: &mut Option<Candidate>, value: f64, location: [f64; 2]) {
    let better = match best {
        None => true,
        Some(b) => value < b.value,
    };
    if better {
        *best = Some(Candidate { value, location });
    }
}

fn fold_max(best: &mut Option<Candidate>, value: f64, location: [f64; 2]) {
    let better = match best {
        None => true,
        Some(b) => value > b.value,
    };
    if better {
        *best = Some(Candidate { value, location });
    }
}

/// Scans the concentration on a `density`-point Gauss-Lobatto tensor grid
/// per element, plus the element nodes, recording extrema with their
/// locations and the negative fraction. Ties keep the first point in
/// element-then-point order, so results do not depend on the execution mode.
pub fn scan_extrema(sol: &FieldSolution, density: usize, par: Parallelism) -> Result<DmpReport> {
    let p = sol.dofs.p;
    if density < p + 1 {
        return Err(Error::InvalidArgument(format!(
            "scan density {density} below p + 1 = {}",
            p + 1
        )));
    }
    let dim = sol.mesh.dim;
    let basis = gll_nodes(p)?;
    let grid = gll_nodes(density - 1)?;
    // Reuse the assembly-side tabulation; the weights are not used.
    let fake_rule = QuadratureRule {
        points: grid.nodes.clone(),
        weights: vec![0.0; density],
    };
    let table = basis_table(&basis, dim, &fake_rule)?;

    let scans: Vec<ElementScan> = map_indexed(par, sol.mesh.n_elements(), |el| {
        let map = element_map(&sol.mesh, el);
        let nodes = &sol.dofs.element_nodes[el];
        let mut min = None;
        let mut max = None;
        let mut negative = 0usize;
        let mut total = 0usize;
        let mut consider = |value: f64, location: [f64; 2]| {
            fold_min(&mut min, value, location);
            fold_max(&mut max, value, location);
            if value < -NEG_MASK {
                negative += 1;
            }
            total += 1;
        };
        for (k, eval) in table.evals.iter().enumerate() {
            let mut c = 0.0;
            for (m, &node) in nodes.iter().enumerate() {
                c += eval.values[m] * sol.concentration[node];
            }
            consider(c, map.point(&table.points[k][..dim]));
        }
        for &node in nodes {
            consider(sol.concentration[node], sol.dofs.coords[node]);
        }
        ElementScan {
            min: min.expect("element scan saw at least one point"),
            max: max.expect("element scan saw at least one point"),
            negative,
            total,
        }
    });

    let mut min = None;
    let mut max = None;
    let mut negative = 0usize;
    let mut total = 0usize;
    for scan in scans {
        fold_min(&mut min, scan.min.value, scan.min.location);
        fold_max(&mut max, scan.max.value, scan.max.location);
        negative += scan.negative;
        total += scan.total;
    }
    let min = min.ok_or_else(|| Error::Internal("scan over an empty mesh".into()))?;
    let max = max.expect("min exists, so max exists");

    // Boundary samples: the same 1D grid along each boundary edge, plus the
    // edge nodes. Every such point also appears in the volume scan, so the
    // boundary extrema always lie inside the global range.
    let mut bmin = None;
    let mut bmax = None;
    for be in &sol.mesh.boundary {
        let nodes = &sol.dofs.element_nodes[be.element];
        if dim == 1 {
            let local = edge_local_nodes(1, p, be.local_edge)[0];
            let node = nodes[local];
            fold_min(&mut bmin, sol.concentration[node], sol.dofs.coords[node]);
            fold_max(&mut bmax, sol.concentration[node], sol.dofs.coords[node]);
            continue;
        }
        let map = element_map(&sol.mesh, be.element);
        for &s in &grid.nodes {
            let (xi, _) = edge_reference(be.local_edge, s);
            let eval = tensor_basis(&basis, 2, &xi[..])?;
            let mut c = 0.0;
            for (m, &node) in nodes.iter().enumerate() {
                c += eval.values[m] * sol.concentration[node];
            }
            let loc = map.point(&xi[..]);
            fold_min(&mut bmin, c, loc);
            fold_max(&mut bmax, c, loc);
        }
        for local in edge_local_nodes(2, p, be.local_edge) {
            let node = nodes[local];
            fold_min(&mut bmin, sol.concentration[node], sol.dofs.coords[node]);
            fold_max(&mut bmax, sol.concentration[node], sol.dofs.coords[node]);
        }
    }
    let bmin = bmin.ok_or_else(|| Error::Internal("mesh has no boundary edges".into()))?;
    let bmax = bmax.expect("boundary min exists, so max exists");

    Ok(DmpReport {
        min_value: min.value,
        min_location: min.location,
        max_value: max.value,
        max_location: max.location,
        boundary_min: bmin.value,
        boundary_max: bmax.value,
        negative_fraction: negative as f64 / total as f64,
        eval_density: density,
        verdicts: Verdicts::not_applicable(),
    })
}

/// Audits scanned extrema against the problem's hypotheses. A pure function
/// of the report and the problem metadata:
///
/// * no decay, one-signed forcing: interior extrema on the relevant side
///   must not escape the boundary extrema (classical maximum principle);
/// * with decay, one-signed forcing: the bound weakens to
///   `min(boundary min, 0)` (respectively `max(boundary max, 0)`);
/// * non-negative forcing and boundary data: the solution must stay above
///   `-1e-12`.
///
/// Mixed-sign forcing leaves every verdict not-applicable.
pub fn audit_dmp(report: &DmpReport, problem: &ProblemSpec) -> Verdicts {
    let f_nonneg = matches!(problem.forcing_sign, SignClass::NonNegative | SignClass::Zero);
    let f_nonpos = matches!(problem.forcing_sign, SignClass::NonPositive | SignClass::Zero);
    let one_signed = f_nonneg || f_nonpos;

    let mp_diffusion_ok = if problem.coefficients.alpha_is_zero && one_signed {
        let mut ok = true;
        if f_nonneg {
            ok &= report.min_value >= report.boundary_min - DMP;
        }
        if f_nonpos {
            ok &= report.max_value <= report.boundary_max + DMP;
        }
        Verdict::from_bool(ok)
    } else {
        Verdict::NotApplicable
    };

    let mp_decay_ok = if one_signed {
        let mut ok = true;
        if f_nonneg {
            ok &= report.min_value >= report.boundary_min.min(0.0) - DMP;
        }
        if f_nonpos {
            ok &= report.max_value <= report.boundary_max.max(0.0) + DMP;
        }
        Verdict::from_bool(ok)
    } else {
        Verdict::NotApplicable
    };

    let nonneg_ok = if f_nonneg && problem.dirichlet_nonneg {
        Verdict::from_bool(report.min_value >= -DMP)
    } else {
        Verdict::NotApplicable
    };

    Verdicts {
        nonneg_ok,
        mp_diffusion_ok,
        mp_decay_ok,
    }
}

/// L2 and max-norm errors against an exact solution: L2 by quadrature with
/// `p + 3` points per direction, the max norm over the default scan grid.
pub fn error_norms(
    sol: &FieldSolution,
    analytic: Option<&ScalarField>,
) -> Result<(f64, f64)> {
    let analytic = analytic.ok_or_else(|| {
        Error::InvalidArgument("error norms need an exact solution".into())
    })?;
    let p = sol.dofs.p;
    let dim = sol.mesh.dim;
    let basis = gll_nodes(p)?;
    let rule = gauss_rule((p + 3).min(crate::quadrature::MAX_NGP))?;
    let table = basis_table(&basis, dim, &rule)?;

    let mut l2sq = 0.0;
    for el in 0..sol.mesh.n_elements() {
        let map = element_map(&sol.mesh, el);
        let nodes = &sol.dofs.element_nodes[el];
        for (k, eval) in table.evals.iter().enumerate() {
            let xi = &table.points[k][..dim];
            let jac = map.jacobian(xi);
            let [x, y] = map.point(xi);
            let mut c = 0.0;
            for (m, &node) in nodes.iter().enumerate() {
                c += eval.values[m] * sol.concentration[node];
            }
            let diff = c - analytic(x, y);
            l2sq += table.weights[k] * jac.det * diff * diff;
        }
    }

    let density = SCAN_DENSITY.max(p + 1);
    let grid = gll_nodes(density - 1)?;
    let fake_rule = QuadratureRule {
        points: grid.nodes.clone(),
        weights: vec![0.0; density],
    };
    let scan_table = basis_table(&basis, dim, &fake_rule)?;
    let mut linf = 0.0f64;
    for el in 0..sol.mesh.n_elements() {
        let map = element_map(&sol.mesh, el);
        let nodes = &sol.dofs.element_nodes[el];
        for (k, eval) in scan_table.evals.iter().enumerate() {
            let [x, y] = map.point(&scan_table.points[k][..dim]);
            let mut c = 0.0;
            for (m, &node) in nodes.iter().enumerate() {
                c += eval.values[m] * sol.concentration[node];
            }
            linf = linf.max((c - analytic(x, y)).abs());
        }
        for &node in nodes {
            let [x, y] = sol.dofs.coords[node];
            linf = linf.max((sol.concentration[node] - analytic(x, y)).abs());
        }
    }
    Ok((l2sq.sqrt(), linf))
}

/// The single-field energy `J(c) = 1/2 B(c, c) - F(c)`, computed with the
/// same quadrature the solve used, so the discrete solution is its exact
/// minimizer over the constrained-zero perturbation space.
pub fn galerkin_energy(sol: &FieldSolution, problem: &ProblemSpec) -> Result<f64> {
    if sol.formulation != Formulation::SingleField {
        return Err(Error::InvalidArgument(
            "the energy functional applies to single-field solutions".into(),
        ));
    }
    let p = sol.dofs.p;
    let basis = gll_nodes(p)?;
    let rule = gauss_rule(ngp_for(p, problem.coefficients.varying))?;
    let system = assemble_global(
        &sol.mesh,
        &problem.coefficients,
        &basis,
        Formulation::SingleField,
        &rule,
        Parallelism::Sequential,
    )?;
    let system = neumann_load(system, &sol.mesh, &problem.boundary, &basis, &rule)?;
    let x = &sol.concentration;
    let mut ax = vec![0.0; x.len()];
    system.matrix.matvec(x, &mut ax);
    let quad: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
    let load: f64 = x.iter().zip(&system.rhs).map(|(a, b)| a * b).sum();
    Ok(0.5 * quad - load)
}

/// The least-squares functional of a concentration-flux pair, by direct
/// quadrature of the two residuals plus the prescribed-flux edge term, with
/// the same rules the solve used. Always non-negative.
pub fn ls_functional_value(sol: &FieldSolution, problem: &ProblemSpec) -> Result<f64> {
    if !sol.formulation.is_least_squares() {
        return Err(Error::InvalidArgument(
            "the least-squares functional needs a flux field".into(),
        ));
    }
    let flux = sol.flux.as_ref().ok_or_else(|| {
        Error::InvalidArgument("solution carries no flux values".into())
    })?;
    let p = sol.dofs.p;
    let dim = sol.mesh.dim;
    let basis = gll_nodes(p)?;
    let rule = gauss_rule(ngp_for(p, problem.coefficients.varying))?;
    let table = basis_table(&basis, dim, &rule)?;
    let coeff = &problem.coefficients;

    let mut value = 0.0;
    for el in 0..sol.mesh.n_elements() {
        let map = element_map(&sol.mesh, el);
        let nodes = &sol.dofs.element_nodes[el];
        for (k, eval) in table.evals.iter().enumerate() {
            let xi = &table.points[k][..dim];
            let jac = map.jacobian(xi);
            let [x, y] = map.point(xi);
            let alpha = (coeff.alpha)(x, y);
            let d = (coeff.diffusivity)(x, y);
            let f = (coeff.forcing)(x, y);

            let mut c = 0.0;
            let mut grad_c = [0.0f64; 2];
            let mut q = [0.0f64; 2];
            let mut div_q = 0.0;
            for (m, &node) in nodes.iter().enumerate() {
                let v = eval.values[m];
                let g = jac.apply_inv_t([eval.gradients[m][0], eval.gradients[m][1]]);
                c += v * sol.concentration[node];
                grad_c[0] += g[0] * sol.concentration[node];
                grad_c[1] += g[1] * sol.concentration[node];
                q[0] += v * flux[node][0];
                q[1] += v * flux[node][1];
                div_q += g[0] * flux[node][0] + g[1] * flux[node][1];
            }
            let (beta2, wmat) = match sol.formulation {
                Formulation::Ls2 => {
                    let b2 = if alpha > 0.0 { 1.0 / alpha } else { 1.0 };
                    let w = d.inverse().ok_or_else(|| {
                        Error::Degenerate(format!(
                            "diffusivity not invertible at ({x:.6}, {y:.6})"
                        ))
                    })?;
                    (b2, w)
                }
                _ => (1.0, crate::problem::SymMat2::identity()),
            };
            let r1 = alpha * c + div_q - f;
            let dg = d.mul_vec(grad_c);
            let r2 = [q[0] + dg[0], q[1] + dg[1]];
            let wr2 = wmat.mul_vec(r2);
            let w = table.weights[k] * jac.det;
            value += 0.5 * w * (beta2 * r1 * r1 + r2[0] * wr2[0] + r2[1] * wr2[1]);
        }
    }

    for be in &sol.mesh.boundary {
        if be.tag != crate::mesh::BoundaryTag::Neumann {
            continue;
        }
        let map = element_map(&sol.mesh, be.element);
        let nodes = &sol.dofs.element_nodes[be.element];
        if dim == 1 {
            let (xi, n) = if be.local_edge == 0 {
                (-1.0, -1.0)
            } else {
                (1.0, 1.0)
            };
            let [x, y] = map.point(&[xi]);
            let t = (problem.boundary.neumann)(x, y);
            let eval = tensor_basis(&basis, 1, &[xi])?;
            let mut qn = 0.0;
            for (m, &node) in nodes.iter().enumerate() {
                qn += eval.values[m] * flux[node][0] * n;
            }
            let r = qn + t;
            value += 0.5 * r * r;
        } else {
            for (kq, &s) in rule.points.iter().enumerate() {
                let (xi, dxi) = edge_reference(be.local_edge, s);
                let (nrm, len) = edge_normal(&map, &xi, &dxi);
                let [x, y] = map.point(&xi[..]);
                let t = (problem.boundary.neumann)(x, y);
                let eval = tensor_basis(&basis, 2, &xi[..])?;
                let mut qn = 0.0;
                for (m, &node) in nodes.iter().enumerate() {
                    qn += eval.values[m] * (flux[node][0] * nrm[0] + flux[node][1] * nrm[1]);
                }
                let r = qn + t;
                value += 0.5 * rule.weights[kq] * len * r * r;
            }
        }
    }
    Ok(value)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepMode {
    #[serde(rename = "p")]
    P,
    #[serde(rename = "h")]
    H,
}

impl std::fmt::Display for SweepMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepMode::P => "p",
            SweepMode::H => "h",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: usize,
    pub min_concentration: f64,
    pub min_x: f64,
    pub min_y: f64,
}

/// Refinement study results, one row per completed level. `aborted` records
/// the first failing level's error; earlier rows stay valid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub problem: String,
    pub formulation: Formulation,
    pub mode: SweepMode,
    pub rows: Vec<SweepRow>,
    pub aborted: Option<String>,
}

/// Runs a refinement sweep: in p-mode the level is the polynomial order on
/// the fixed base mesh; in h-mode the base mesh is split `level` times per
/// direction at fixed order `h_order`. Each row records the minimum from a
/// density-16 scan.
pub fn sweep(
    problem: &ProblemSpec,
    formulation: Formulation,
    mode: SweepMode,
    levels: &[usize],
    base_mesh: &Mesh,
    h_order: usize,
    par: Parallelism,
) -> Result<SweepTable> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one level".into()));
    }
    let mut table = SweepTable {
        problem: problem.name.clone(),
        formulation,
        mode,
        rows: Vec::with_capacity(levels.len()),
        aborted: None,
    };
    for &level in levels {
        let outcome = (|| -> Result<SweepRow> {
            let (mesh, p) = match mode {
                SweepMode::P => (base_mesh.clone(), level),
                SweepMode::H => (refine(base_mesh, level)?, h_order),
            };
            let (sol, _) = solve_problem(&mesh, problem, formulation, p, None, par)?;
            let report = scan_extrema(&sol, SCAN_DENSITY.max(p + 1), par)?;
            Ok(SweepRow {
                level,
                min_concentration: report.min_value,
                min_x: report.min_location[0],
                min_y: report.min_location[1],
            })
        })();
        match outcome {
            Ok(row) => table.rows.push(row),
            Err(err) => {
                table.aborted = Some(format!("level {level}: {err}"));
                break;
            }
        }
    }
    Ok(table)
}
