//! Run orchestration: resolved configurations, the solve/sweep/audit
//! pipelines behind the CLI, artifact writing, and the cross-module
//! verification suite. Every run directory receives the resolved
//! configuration that produced it; running that configuration again
//! regenerates every artifact byte for byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    audit_dmp, scan_extrema, solve_problem, sweep, DmpReport, FieldSolution, SweepMode,
    SweepTable, SCAN_DENSITY,
};
use crate::assembly::{
    apply_dirichlet, assemble_global, element_galerkin, element_ls, element_ls1_voigt,
    element_ls2_voigt, neumann_load, Formulation,
};
use crate::basis::{gll_nodes, tensor_basis};
use crate::export::{build_viz, write_dmp_csv, write_sweep_csv, write_vtk};
use crate::mesh::{
    build_mesh, build_rect_mesh, element_map, BoundaryTag, Mesh, MeshKind,
};
use crate::problem::{
    canonical_problem, BoundaryData, CoefficientField, ProblemId, ProblemSpec, SignClass, SymMat2,
};
use crate::quadrature::{gauss_rule, integrate_ref, ngp_for};
use crate::solver::{solve_spd, solve_with, Method, SolveReport};
use crate::{Error, Parallelism, Result};

/// Everything needed to reproduce one solve or sweep. Optional fields fall
/// back to per-problem defaults; the directory written by a run contains the
/// fully resolved copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub problem: String,
    /// Hole-problem diffusivities (ignored elsewhere).
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub formulation: Formulation,
    pub p: usize,
    /// Interval-mesh element count override.
    pub ne: Option<usize>,
    /// Rectangle-mesh subdivision overrides.
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    /// Hole-mesh refinement override.
    pub hole_n: Option<usize>,
    /// Wrapping the base mesh in a vertex jitter; amplitude defaults to 0.2
    /// when only a seed is given, the seed to 42.
    pub jitter_amplitude: Option<f64>,
    pub jitter_seed: Option<u64>,
    /// Quadrature override (points per direction).
    pub ngp: Option<usize>,
    /// Extrema-scan density (raised to p + 1 when too small).
    pub density: usize,
    /// Sweep runs only: refinement mode and levels.
    pub mode: Option<SweepMode>,
    pub levels: Vec<usize>,
    /// Treat a non-negativity failure as a run failure.
    pub expect_nonneg: bool,
    /// Also dump the constrained system in coordinate form.
    pub dump_matrix: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: String::new(),
            k1: None,
            k2: None,
            formulation: Formulation::SingleField,
            p: 4,
            ne: None,
            nx: None,
            ny: None,
            hole_n: None,
            jitter_amplitude: None,
            jitter_seed: None,
            ngp: None,
            density: SCAN_DENSITY,
            mode: None,
            levels: Vec::new(),
            expect_nonneg: false,
            dump_matrix: false,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn for_problem(problem: &str) -> RunConfig {
        RunConfig {
            problem: problem.into(),
            ..RunConfig::default()
        }
    }

    /// The problem instance and mesh this configuration describes.
    pub fn resolve(&self) -> Result<(ProblemSpec, Mesh)> {
        let id: ProblemId = self.problem.parse()?;
        let id = match id {
            ProblemId::Hole { k1, k2 } => ProblemId::Hole {
                k1: self.k1.unwrap_or(k1),
                k2: self.k2.unwrap_or(k2),
            },
            other => {
                if self.k1.is_some() || self.k2.is_some() {
                    return Err(Error::InvalidArgument(
                        "k1/k2 apply only to the hole problem".into(),
                    ));
                }
                other
            }
        };
        let mut spec = canonical_problem(id)?;
        let mut kind = spec.base_mesh.clone();
        match &mut kind {
            MeshKind::Interval { ne, .. } => {
                if self.nx.is_some() || self.ny.is_some() || self.hole_n.is_some() {
                    return Err(Error::InvalidArgument(
                        "nx/ny/hole-n do not apply to interval meshes".into(),
                    ));
                }
                if let Some(v) = self.ne {
                    *ne = v;
                }
            }
            MeshKind::Rect { nx, ny, .. } => {
                if self.ne.is_some() || self.hole_n.is_some() {
                    return Err(Error::InvalidArgument(
                        "ne/hole-n do not apply to rectangle meshes".into(),
                    ));
                }
                if let Some(v) = self.nx {
                    *nx = v;
                }
                if let Some(v) = self.ny {
                    *ny = v;
                }
            }
            MeshKind::Hole { n } => {
                if self.ne.is_some() || self.nx.is_some() || self.ny.is_some() {
                    return Err(Error::InvalidArgument(
                        "ne/nx/ny do not apply to the hole mesh".into(),
                    ));
                }
                if let Some(v) = self.hole_n {
                    *n = v;
                }
            }
            _ => {}
        }
        if self.jitter_amplitude.is_some() || self.jitter_seed.is_some() {
            if spec.dim == 1 {
                return Err(Error::InvalidArgument(
                    "jitter applies to 2D meshes only".into(),
                ));
            }
            kind = MeshKind::Jittered {
                base: Box::new(kind),
                amplitude: self.jitter_amplitude.unwrap_or(0.2),
                seed: self.jitter_seed.unwrap_or(42),
            };
        }
        let mesh = build_mesh(&kind)?;
        spec.base_mesh = kind;
        Ok((spec, mesh))
    }
}

/// Root for default output directories: `DMPFEM_OUT` or `./out`.
pub fn default_out_root() -> PathBuf {
    std::env::var_os("DMPFEM_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        what: e.to_string(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshSummary {
    pub kind: MeshKind,
    pub n_elements: usize,
    pub n_nodes: usize,
}

/// What one solve run produced, written as `report.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub formulation: Formulation,
    pub p: usize,
    pub mesh: MeshSummary,
    pub solve: SolveReport,
    pub dmp: DmpReport,
    /// Artifact names relative to the run directory.
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct DumpHeader {
    dimension: usize,
    formulation: Formulation,
    p: usize,
}

/// Solves one configured problem and writes the artifact set: the resolved
/// configuration, the report, the solution dump, the extrema CSV, the VTK
/// field, and optionally the constrained matrix.
pub fn run_solve(config: &RunConfig, par: Parallelism) -> Result<(RunReport, FieldSolution, PathBuf)> {
    let (problem, mesh) = config.resolve()?;
    let p = config.p;
    let basis = gll_nodes(p)?;
    let ngp = config.ngp.unwrap_or_else(|| ngp_for(p, problem.coefficients.varying));
    let rule = gauss_rule(ngp)?;
    let system = assemble_global(
        &mesh,
        &problem.coefficients,
        &basis,
        config.formulation,
        &rule,
        par,
    )?;
    let system = neumann_load(system, &mesh, &problem.boundary, &basis, &rule)?;
    let system = apply_dirichlet(system, &problem.boundary)?;

    let dir = config.out.clone().unwrap_or_else(|| {
        default_out_root().join(format!("{}-{}-p{}", problem.name, config.formulation, p))
    });
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;

    let mut files = vec![
        "config.json".to_string(),
        "dmp.csv".to_string(),
        "report.json".to_string(),
        "solution.json".to_string(),
        "viz.vtk".to_string(),
    ];
    if config.dump_matrix {
        let header = serde_json::to_string(&DumpHeader {
            dimension: mesh.dim,
            formulation: config.formulation,
            p,
        })
        .map_err(|e| Error::Internal(format!("serialization failed: {e}")))?;
        system.matrix.write_coordinate(&dir.join("matrix.txt"), &header)?;
        files.push("matrix.txt".to_string());
    }
    files.sort();

    let (x, solve_report) = solve_spd(&system)?;
    let sol = FieldSolution::from_dof_vector(mesh.clone(), system.dofs, config.formulation, &x)?;

    let density = config.density.max(p + 1);
    let mut dmp = scan_extrema(&sol, density, par)?;
    dmp.verdicts = audit_dmp(&dmp, &problem);

    let report = RunReport {
        problem: problem.name.clone(),
        formulation: config.formulation,
        p,
        mesh: MeshSummary {
            kind: problem.base_mesh.clone(),
            n_elements: mesh.n_elements(),
            n_nodes: sol.dofs.n_nodes,
        },
        solve: solve_report,
        dmp: dmp.clone(),
        files,
    };

    let mut resolved = config.clone();
    resolved.out = Some(dir.clone());
    write_text(&dir.join("config.json"), &to_pretty_json(&resolved)?)?;
    write_text(&dir.join("report.json"), &to_pretty_json(&report)?)?;
    let mut solution_json = serde_json::to_string(&sol)
        .map_err(|e| Error::Internal(format!("serialization failed: {e}")))?;
    solution_json.push('\n');
    write_text(&dir.join("solution.json"), &solution_json)?;
    write_dmp_csv(&dir.join("dmp.csv"), &dmp)?;
    write_vtk(&dir.join("viz.vtk"), &build_viz(&sol)?)?;

    Ok((report, sol, dir))
}

/// Runs a refinement sweep and writes `config.json`, `sweep.json`, and
/// `sweep.csv`. A partial table (solve fault at some level) is still
/// written; the flag travels in `sweep.json` and in the return value.
pub fn run_sweep(config: &RunConfig, par: Parallelism) -> Result<(SweepTable, PathBuf)> {
    let mode = config
        .mode
        .ok_or_else(|| Error::InvalidArgument("sweep needs a mode (p or h)".into()))?;
    let (problem, mesh) = config.resolve()?;
    let table = sweep(
        &problem,
        config.formulation,
        mode,
        &config.levels,
        &mesh,
        config.p,
        par,
    )?;

    let dir = config.out.clone().unwrap_or_else(|| {
        default_out_root().join(format!(
            "{}-{}-sweep-{}",
            problem.name, config.formulation, mode
        ))
    });
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let mut resolved = config.clone();
    resolved.out = Some(dir.clone());
    write_text(&dir.join("config.json"), &to_pretty_json(&resolved)?)?;
    write_text(&dir.join("sweep.json"), &to_pretty_json(&table)?)?;
    write_sweep_csv(&dir.join("sweep.csv"), &table)?;
    Ok((table, dir))
}

/// Re-runs the extrema scan and audit on a stored run directory, writing
/// `audit.csv` next to the original artifacts.
pub fn run_audit(dir: &Path, density: Option<usize>, par: Parallelism) -> Result<DmpReport> {
    let config: RunConfig = read_json(&dir.join("config.json"))?;
    let sol: FieldSolution = read_json(&dir.join("solution.json"))?;
    let (problem, _) = config.resolve()?;
    let density = density.unwrap_or(config.density).max(sol.dofs.p + 1);
    let mut dmp = scan_extrema(&sol, density, par)?;
    dmp.verdicts = audit_dmp(&dmp, &problem);
    write_dmp_csv(&dir.join("audit.csv"), &dmp)?;
    Ok(dmp)
}

/// One named cross-module consistency check.
#[derive(Clone, Debug)]
pub struct VerifyOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> VerifyOutcome {
    VerifyOutcome {
        name,
        passed,
        detail,
    }
}

fn check_partition_identities() -> VerifyOutcome {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    let mut rng = StdRng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for p in 1..=10 {
        let basis = match gll_nodes(p) {
            Ok(b) => b,
            Err(e) => return outcome("basis-partition", false, e.to_string()),
        };
        for _ in 0..100 {
            let x = rng.gen_range(-1.0..1.0);
            match tensor_basis(&basis, 1, &[x]) {
                Ok(eval) => {
                    let sum: f64 = eval.values.iter().sum();
                    let dsum: f64 = eval.gradients.iter().map(|g| g[0]).sum();
                    worst = worst.max((sum - 1.0).abs()).max(dsum.abs());
                }
                Err(e) => return outcome("basis-partition", false, e.to_string()),
            }
        }
    }
    outcome(
        "basis-partition",
        worst < 1e-12,
        format!("max identity residual {worst:.3e} over p <= 10"),
    )
}

fn check_gauss_exactness() -> VerifyOutcome {
    let mut worst: f64 = 0.0;
    for ngp in 1..=12usize {
        for k in 0..=(2 * ngp - 1) {
            let got = match integrate_ref(1, ngp, |x| x[0].powi(k as i32)) {
                Ok(v) => v,
                Err(e) => return outcome("gauss-exactness", false, e.to_string()),
            };
            let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
            worst = worst.max((got - exact).abs());
        }
    }
    outcome(
        "gauss-exactness",
        worst < 1e-12,
        format!("max moment error {worst:.3e} for ngp <= 12"),
    )
}

fn random_constant_element(rng: &mut impl rand::Rng) -> (Mesh, CoefficientField, f64) {
    let s = 0.15;
    let corners = [
        [rng.gen_range(-s..s), rng.gen_range(-s..s)],
        [1.0 + rng.gen_range(-s..s), rng.gen_range(-s..s)],
        [1.0 + rng.gen_range(-s..s), 1.0 + rng.gen_range(-s..s)],
        [rng.gen_range(-s..s), 1.0 + rng.gen_range(-s..s)],
    ];
    let alpha = if rng.gen_bool(0.5) {
        0.0
    } else {
        rng.gen_range(0.1..50.0)
    };
    // Random SPD tensor: positive eigenvalues rotated by a random angle.
    let (l1, l2) = (rng.gen_range(0.2..5.0), rng.gen_range(0.2..5.0));
    let t = rng.gen_range(0.0..std::f64::consts::PI);
    let (c, s2) = (t.cos(), t.sin());
    let d = SymMat2 {
        xx: l1 * c * c + l2 * s2 * s2,
        xy: (l1 - l2) * c * s2,
        yy: l1 * s2 * s2 + l2 * c * c,
    };
    let f = rng.gen_range(-2.0..2.0);
    let mesh = Mesh {
        dim: 2,
        vertices: corners.to_vec(),
        elements: vec![vec![0, 1, 2, 3]],
        boundary: Vec::new(),
        kind: MeshKind::Imported,
    };
    let coeff = CoefficientField {
        alpha: std::sync::Arc::new(move |_, _| alpha),
        diffusivity: std::sync::Arc::new(move |_, _| d),
        forcing: std::sync::Arc::new(move |_, _| f),
        alpha_bound: alpha.max(1.0),
        ellipticity: (l1.min(l2), l1.max(l2)),
        varying: false,
        alpha_is_zero: alpha == 0.0,
    };
    (mesh, coeff, alpha)
}

fn system_distance(
    a: &crate::assembly::ElementSystem,
    b: &crate::assembly::ElementSystem,
) -> f64 {
    let scale = a.max_abs().max(b.max_abs()).max(1.0);
    let mk = a
        .matrix
        .iter()
        .zip(&b.matrix)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    let mf = a
        .rhs
        .iter()
        .zip(&b.rhs)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    mk.max(mf) / scale
}

fn check_voigt(form: Formulation) -> VerifyOutcome {
    use rand::rngs::StdRng;
    use rand::SeedableRng;
    let name = match form {
        Formulation::Ls1 => "voigt-ls1",
        _ => "voigt-ls2",
    };
    let mut rng = StdRng::seed_from_u64(777);
    let basis = gll_nodes(3).expect("order-3 basis");
    let rule = gauss_rule(5).expect("5-point rule");
    let mut worst_exact: f64 = 0.0;
    let mut worst_logged: f64 = 0.0;
    for _ in 0..50 {
        let (mesh, coeff, alpha) = random_constant_element(&mut rng);
        let map = element_map(&mesh, 0);
        let variational = element_ls(&map, &coeff, &basis, &rule, form, &[]);
        let voigt = match form {
            Formulation::Ls1 => element_ls1_voigt(&map, &coeff, &basis, &rule),
            _ => element_ls2_voigt(&map, &coeff, &basis, &rule),
        };
        let (variational, voigt) = match (variational, voigt) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return outcome(name, false, e.to_string()),
        };
        let dist = system_distance(&variational, &voigt);
        if form == Formulation::Ls1 || alpha == 0.0 {
            worst_exact = worst_exact.max(dist);
        } else {
            worst_logged = worst_logged.max(dist);
        }
    }
    let tol = if form == Formulation::Ls1 { 1e-12 } else { 1e-10 };
    let mut detail = format!("max deviation {worst_exact:.3e} (tolerance {tol:.0e})");
    if form == Formulation::Ls2 && worst_logged > 0.0 {
        detail.push_str(&format!(
            "; decay-weighted discrepancy {worst_logged:.3e} with alpha > 0 \
             (fast path omits the 1/alpha residual weight; variational path is authoritative)"
        ));
    }
    outcome(name, worst_exact <= tol, detail)
}

fn check_execution_modes() -> VerifyOutcome {
    let name = "parallel-determinism";
    #[cfg(not(feature = "parallel"))]
    {
        return outcome(
            name,
            true,
            "built without the parallel feature; sequential path only".into(),
        );
    }
    #[cfg(feature = "parallel")]
    {
        let problem = match canonical_problem(ProblemId::BurmanErn) {
            Ok(p) => p,
            Err(e) => return outcome(name, false, e.to_string()),
        };
        let mesh = match build_mesh(&problem.base_mesh) {
            Ok(m) => m,
            Err(e) => return outcome(name, false, e.to_string()),
        };
        let run = |par: Parallelism| -> Result<(Vec<f64>, Vec<f64>, DmpReport)> {
            let basis = gll_nodes(3)?;
            let rule = gauss_rule(ngp_for(3, problem.coefficients.varying))?;
            let system = assemble_global(
                &mesh,
                &problem.coefficients,
                &basis,
                Formulation::Ls1,
                &rule,
                par,
            )?;
            let system = neumann_load(system, &mesh, &problem.boundary, &basis, &rule)?;
            let system = apply_dirichlet(system, &problem.boundary)?;
            let (x, _) = solve_spd(&system)?;
            let sol =
                FieldSolution::from_dof_vector(mesh.clone(), system.dofs, Formulation::Ls1, &x)?;
            let report = scan_extrema(&sol, 16, par)?;
            Ok((system.matrix.values.clone(), x, report))
        };
        match (run(Parallelism::Sequential), run(Parallelism::Rayon)) {
            (Ok((va, xa, ra)), Ok((vb, xb, rb))) => {
                let same = va == vb && xa == xb && ra == rb;
                outcome(
                    name,
                    same,
                    if same {
                        "assembled values, solution, and scan agree bitwise across modes".into()
                    } else {
                        "sequential and rayon paths disagree".into()
                    },
                )
            }
            (Err(e), _) | (_, Err(e)) => outcome(name, false, e.to_string()),
        }
    }
}

fn check_solve_residuals(par: Parallelism) -> VerifyOutcome {
    let name = "solve-residuals";
    let cases: Vec<(ProblemId, Formulation, usize)> = vec![
        (ProblemId::Decay1d, Formulation::SingleField, 6),
        (ProblemId::Forced1d, Formulation::Ls1, 4),
        (ProblemId::BurmanErn, Formulation::Ls2, 3),
        (ProblemId::Lepotier, Formulation::SingleField, 2),
        (
            ProblemId::Hole { k1: 1.0, k2: 100.0 },
            Formulation::SingleField,
            1,
        ),
    ];
    let mut worst: f64 = 0.0;
    for (id, form, p) in cases {
        let solved = canonical_problem(id)
            .and_then(|problem| {
                let mesh = build_mesh(&problem.base_mesh)?;
                solve_problem(&mesh, &problem, form, p, None, par)
            })
            .map(|(_, report)| report.relative_residual);
        match solved {
            Ok(r) => worst = worst.max(r),
            Err(e) => return outcome(name, false, e.to_string()),
        }
    }
    outcome(
        name,
        worst <= 1e-10,
        format!("worst relative residual {worst:.3e} over the catalog"),
    )
}

fn check_flux_boundary_patch() -> VerifyOutcome {
    let name = "flux-boundary-patch";
    let run = || -> Result<f64> {
        // Exact field c = 1 + x with unit diffusivity: the prescribed
        // conormal datum on the right edge (outward normal +x) is 1.
        let mut mesh = build_rect_mesh(0.0, 0.0, 1.0, 1.0, 2, 2)?;
        // Tag edges lying on x = 1 as flux edges.
        let mut tagged = 0;
        let elements = mesh.elements.clone();
        let vertices = mesh.vertices.clone();
        for be in &mut mesh.boundary {
            let e = &elements[be.element];
            let a = vertices[e[be.local_edge]];
            let b = vertices[e[(be.local_edge + 1) % 4]];
            if (a[0] - 1.0).abs() < 1e-12 && (b[0] - 1.0).abs() < 1e-12 {
                be.tag = BoundaryTag::Neumann;
                tagged += 1;
            }
        }
        if tagged == 0 {
            return Err(Error::Internal("no right-edge boundary found".into()));
        }
        let problem = ProblemSpec {
            name: "patch".into(),
            dim: 2,
            coefficients: CoefficientField {
                alpha: std::sync::Arc::new(|_, _| 0.0),
                diffusivity: std::sync::Arc::new(|_, _| SymMat2::identity()),
                forcing: std::sync::Arc::new(|_, _| 0.0),
                alpha_bound: 1.0,
                ellipticity: (1.0, 1.0),
                varying: false,
                alpha_is_zero: true,
            },
            boundary: BoundaryData {
                dirichlet: std::sync::Arc::new(|x, _, _| 1.0 + x),
                neumann: std::sync::Arc::new(|_, _| 1.0),
            },
            analytic: Some(std::sync::Arc::new(|x, _| 1.0 + x)),
            base_mesh: mesh.kind.clone(),
            forcing_sign: SignClass::Zero,
            dirichlet_nonneg: true,
        };
        let (sol, _) =
            solve_problem(&mesh, &problem, Formulation::SingleField, 2, None, Parallelism::Sequential)?;
        let (_, linf) = crate::analysis::error_norms(&sol, problem.analytic.as_ref())?;
        Ok(linf)
    };
    match run() {
        Ok(linf) => outcome(
            name,
            linf <= 1e-8,
            format!("prescribed-flux patch max error {linf:.3e}"),
        ),
        Err(e) => outcome(name, false, e.to_string()),
    }
}

fn check_direct_vs_iterative(par: Parallelism) -> VerifyOutcome {
    let name = "direct-vs-iterative";
    let run = || -> Result<f64> {
        let problem = canonical_problem(ProblemId::BurmanErn)?;
        let mesh = build_mesh(&problem.base_mesh)?;
        let basis = gll_nodes(4)?;
        let rule = gauss_rule(ngp_for(4, problem.coefficients.varying))?;
        let system = assemble_global(
            &mesh,
            &problem.coefficients,
            &basis,
            Formulation::SingleField,
            &rule,
            par,
        )?;
        let system = neumann_load(system, &mesh, &problem.boundary, &basis, &rule)?;
        let system = apply_dirichlet(system, &problem.boundary)?;
        let (xd, _) = solve_with(&system.matrix, &system.rhs, Method::Cholesky)?;
        let (xi, _) = solve_with(&system.matrix, &system.rhs, Method::ConjugateGradient)?;
        let scale = xd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        Ok(xd
            .iter()
            .zip(&xi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
            / scale)
    };
    match run() {
        Ok(diff) => outcome(
            name,
            diff <= 1e-8,
            format!("max relative disagreement {diff:.3e}"),
        ),
        Err(e) => outcome(name, false, e.to_string()),
    }
}

fn check_galerkin_voigt_free(par: Parallelism) -> VerifyOutcome {
    // Sanity anchor for the worked 1D example: one linear element of length
    // 0.4 with alpha = 3 has stiffness 2.5 and consistent mass h/3, h/6.
    let name = "element-worked-example";
    let _ = par;
    let run = || -> Result<f64> {
        let mesh = crate::mesh::build_interval_mesh(0.0, 0.4, 1)?;
        let basis = gll_nodes(1)?;
        let rule = gauss_rule(3)?;
        let coeff = CoefficientField {
            alpha: std::sync::Arc::new(|_, _| 3.0),
            diffusivity: std::sync::Arc::new(|_, _| SymMat2::scalar_1d(1.0)),
            forcing: std::sync::Arc::new(|_, _| 1.0),
            alpha_bound: 3.0,
            ellipticity: (1.0, 1.0),
            varying: false,
            alpha_is_zero: false,
        };
        let map = element_map(&mesh, 0);
        let sys = element_galerkin(&map, &coeff, &basis, &rule)?;
        let h = 0.4;
        let expect = [
            [1.0 / h + 3.0 * h / 3.0, -1.0 / h + 3.0 * h / 6.0],
            [-1.0 / h + 3.0 * h / 6.0, 1.0 / h + 3.0 * h / 3.0],
        ];
        let mut worst: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((sys.at(i, j) - expect[i][j]).abs());
            }
            worst = worst.max((sys.rhs[i] - h / 2.0).abs());
        }
        Ok(worst)
    };
    match run() {
        Ok(worst) => outcome(
            name,
            worst <= 1e-13,
            format!("max deviation from hand values {worst:.3e}"),
        ),
        Err(e) => outcome(name, false, e.to_string()),
    }
}

/// Runs the cross-module consistency suite. Every outcome carries a
/// human-readable detail line; the LS2 fast-path deviation with decay is
/// reported there rather than failing the check.
pub fn verify_all(par: Parallelism) -> Vec<VerifyOutcome> {
    vec![
        check_partition_identities(),
        check_gauss_exactness(),
        check_voigt(Formulation::Ls1),
        check_voigt(Formulation::Ls2),
        check_galerkin_voigt_free(par),
        check_execution_modes(),
        check_solve_residuals(par),
        check_flux_boundary_patch(),
        check_direct_vs_iterative(par),
    ]
}

#[cfg(test)]
mod tests {
    use tempfile::tempdir;

    use super::*;

    #[test]
    fn configs_resolve_overrides_and_reject_mismatches() {
        let mut config = RunConfig::for_problem("decay1d");
        config.ne = Some(8);
        let (problem, mesh) = config.resolve().unwrap();
        assert_eq!(problem.name, "decay1d");
        assert_eq!(mesh.n_elements(), 8);

        let mut config = RunConfig::for_problem("lepotier");
        config.nx = Some(3);
        config.ny = Some(2);
        let (_, mesh) = config.resolve().unwrap();
        assert_eq!(mesh.n_elements(), 6);

        config.jitter_seed = Some(42);
        let (problem, jittered) = config.resolve().unwrap();
        assert!(matches!(
            problem.base_mesh,
            MeshKind::Jittered { amplitude, seed: 42, .. } if amplitude == 0.2
        ));
        assert_eq!(jittered.n_elements(), 6);
        assert_ne!(jittered.vertices, mesh.vertices);

        let mut config = RunConfig::for_problem("hole");
        config.k2 = Some(10000.0);
        config.hole_n = Some(1);
        let (problem, mesh) = config.resolve().unwrap();
        let d = (problem.coefficients.diffusivity)(0.1, 0.1);
        // The trace is rotation-invariant: k1 + k2.
        assert!(d.xx + d.yy > 10000.0, "strong anisotropy expected, got {d:?}");
        assert!(mesh.n_elements() > 0);

        let mut config = RunConfig::for_problem("decay1d");
        config.nx = Some(2);
        assert!(matches!(config.resolve(), Err(e) if e.is_usage()));
        let mut config = RunConfig::for_problem("burman_ern");
        config.k1 = Some(2.0);
        assert!(matches!(config.resolve(), Err(e) if e.is_usage()));
        assert!(matches!(
            RunConfig::for_problem("unknown").resolve(),
            Err(e) if e.is_usage()
        ));
    }

    #[test]
    fn solve_runs_write_replayable_artifacts() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("run");
        let mut config = RunConfig::for_problem("decay1d");
        config.p = 3;
        config.dump_matrix = true;
        config.out = Some(out.clone());
        let (report, sol, where_to) = run_solve(&config, Parallelism::Sequential).unwrap();
        assert_eq!(where_to, out);
        assert_eq!(report.problem, "decay1d");
        assert_eq!(report.p, 3);
        assert_eq!(report.mesh.n_elements, 4);
        assert_eq!(sol.concentration.len(), report.mesh.n_nodes);
        assert_eq!(
            report.files,
            vec!["config.json", "dmp.csv", "matrix.txt", "report.json", "solution.json", "viz.vtk"]
        );
        for name in &report.files {
            assert!(out.join(name).is_file(), "{name} missing");
        }
        let matrix_head = std::fs::read_to_string(out.join("matrix.txt")).unwrap();
        assert!(matrix_head.starts_with(
            "# {\"dimension\":1,\"formulation\":\"single-field\",\"p\":3}\n"
        ));

        // Byte-identical replay of the stored resolved config.
        let stored: RunConfig =
            serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap())
                .unwrap();
        let before: Vec<(String, Vec<u8>)> = report
            .files
            .iter()
            .map(|f| (f.clone(), std::fs::read(out.join(f)).unwrap()))
            .collect();
        run_solve(&stored, Parallelism::Sequential).unwrap();
        for (name, bytes) in before {
            assert_eq!(
                std::fs::read(out.join(&name)).unwrap(),
                bytes,
                "{name} changed under replay"
            );
        }
    }

    #[test]
    fn audits_recover_the_stored_report() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("run");
        let mut config = RunConfig::for_problem("forced1d");
        config.p = 3;
        config.formulation = Formulation::Ls1;
        config.out = Some(out.clone());
        let (report, _, _) = run_solve(&config, Parallelism::Sequential).unwrap();
        let audited = run_audit(&out, None, Parallelism::Sequential).unwrap();
        assert_eq!(audited, report.dmp);
        assert!(out.join("audit.csv").is_file());
        // The forced problem dips negative at p = 3.
        assert!(audited.min_value < 0.0);
        assert_eq!(audited.verdicts.nonneg_ok, crate::analysis::Verdict::Fail);
    }

    #[test]
    fn sweeps_write_tables() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("sweep");
        let mut config = RunConfig::for_problem("decay1d");
        config.mode = Some(SweepMode::P);
        config.levels = vec![1, 2];
        config.out = Some(out.clone());
        let (table, where_to) = run_sweep(&config, Parallelism::Sequential).unwrap();
        assert_eq!(where_to, out);
        assert_eq!(table.rows.len(), 2);
        assert!(out.join("sweep.csv").is_file());
        assert!(out.join("sweep.json").is_file());
        let rows = crate::export::read_sweep_csv(&out.join("sweep.csv")).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].1, table.rows[0]);

        let mut bad = config.clone();
        bad.mode = None;
        assert!(run_sweep(&bad, Parallelism::Sequential).unwrap_err().is_usage());
    }

    #[test]
    fn verification_suite_passes() {
        for outcome in verify_all(Parallelism::default()) {
            assert!(
                outcome.passed,
                "{} failed: {}",
                outcome.name, outcome.detail
            );
        }
    }
}
