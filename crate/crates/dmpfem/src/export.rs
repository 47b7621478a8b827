//! Visualization and table output: per-element sample meshes, a legacy-VTK
//! writer with a matching reader, and sweep tables as CSV. Writers are
//! deterministic (identical input gives identical bytes) and floats are
//! written so that parsing them back recovers the exact values.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{DmpReport, FieldSolution, SweepRow, SweepTable, Verdict, Verdicts};
use crate::assembly::{basis_table, Formulation};
use crate::basis::gll_nodes;
use crate::mesh::element_map;
use crate::quadrature::QuadratureRule;
use crate::tol::NEG_MASK;
use crate::{Error, Result};

/// Sample points per element in 1D (uniform).
pub const VIZ_POINTS_1D: usize = 100;
/// Sample points per element per direction in 2D (Gauss-Lobatto).
pub const VIZ_GRID_2D: usize = 16;

/// A solution resampled for plotting: per-element point grids with cell
/// connectivity, concentration values, the negativity mask, and flux values
/// when the solution carries them. Elements are kept separate (no point
/// de-duplication), so discontinuities in derivatives stay visible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VizMesh {
    pub dim: usize,
    pub points: Vec<[f64; 2]>,
    pub values: Vec<f64>,
    pub flux: Option<Vec<[f64; 2]>>,
    /// Line segments (1D, two ids) or quads (2D, four ids, counterclockwise).
    pub cells: Vec<Vec<usize>>,
    /// 1 where the concentration is below `-1e-13`, else 0.
    pub violation: Vec<i32>,
}

/// Resamples a solution on the fixed per-element grids: 100 uniform points
/// per interval element, a 16x16 Gauss-Lobatto tensor grid per quad element.
/// The 2D grid is a subset of the extrema-scan sample set, and coincides
/// with it for order-15 elements.
pub fn build_viz(sol: &FieldSolution) -> Result<VizMesh> {
    let dim = sol.mesh.dim;
    let basis = gll_nodes(sol.dofs.p)?;
    let line: Vec<f64> = if dim == 1 {
        (0..VIZ_POINTS_1D)
            .map(|k| -1.0 + 2.0 * k as f64 / (VIZ_POINTS_1D - 1) as f64)
            .collect()
    } else {
        gll_nodes(VIZ_GRID_2D - 1)?.nodes
    };
    let fake_rule = QuadratureRule {
        weights: vec![0.0; line.len()],
        points: line,
    };
    let table = basis_table(&basis, dim, &fake_rule)?;
    let per_element = table.points.len();

    let mut viz = VizMesh {
        dim,
        points: Vec::new(),
        values: Vec::new(),
        flux: sol.flux.as_ref().map(|_| Vec::new()),
        cells: Vec::new(),
        violation: Vec::new(),
    };
    for el in 0..sol.mesh.n_elements() {
        let map = element_map(&sol.mesh, el);
        let nodes = &sol.dofs.element_nodes[el];
        let offset = viz.points.len();
        for (k, eval) in table.evals.iter().enumerate() {
            let mut c = 0.0;
            for (m, &node) in nodes.iter().enumerate() {
                c += eval.values[m] * sol.concentration[node];
            }
            viz.points.push(map.point(&table.points[k][..dim]));
            viz.violation.push(i32::from(c < -NEG_MASK));
            viz.values.push(c);
            if let (Some(out), Some(q)) = (viz.flux.as_mut(), sol.flux.as_ref()) {
                let mut v = [0.0f64; 2];
                for (m, &node) in nodes.iter().enumerate() {
                    v[0] += eval.values[m] * q[node][0];
                    v[1] += eval.values[m] * q[node][1];
                }
                out.push(v);
            }
        }
        if dim == 1 {
            for k in 0..per_element - 1 {
                viz.cells.push(vec![offset + k, offset + k + 1]);
            }
        } else {
            let n = VIZ_GRID_2D;
            for j in 0..n - 1 {
                for i in 0..n - 1 {
                    let k = offset + i + j * n;
                    viz.cells.push(vec![k, k + 1, k + n + 1, k + n]);
                }
            }
        }
    }
    Ok(viz)
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, what: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        what: what.into(),
    }
}

/// Writes a visualization mesh as a legacy-format ASCII VTK unstructured
/// grid with `concentration` (double) and `violation` (int) point data, plus
/// a `flux` vector field when present.
pub fn write_vtk(path: &Path, viz: &VizMesh) -> Result<()> {
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("dmpfem field export\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", viz.points.len());
    for p in &viz.points {
        let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", p[0], p[1], 0.0);
    }
    let arity = if viz.dim == 1 { 2 } else { 4 };
    let _ = writeln!(
        out,
        "CELLS {} {}",
        viz.cells.len(),
        viz.cells.len() * (arity + 1)
    );
    for cell in &viz.cells {
        let _ = write!(out, "{}", cell.len());
        for id in cell {
            let _ = write!(out, " {id}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "CELL_TYPES {}", viz.cells.len());
    let cell_type = if viz.dim == 1 { 3 } else { 9 };
    for _ in &viz.cells {
        let _ = writeln!(out, "{cell_type}");
    }
    let _ = writeln!(out, "POINT_DATA {}", viz.points.len());
    out.push_str("SCALARS concentration double 1\n");
    out.push_str("LOOKUP_TABLE default\n");
    for v in &viz.values {
        let _ = writeln!(out, "{v:.16e}");
    }
    out.push_str("SCALARS violation int 1\n");
    out.push_str("LOOKUP_TABLE default\n");
    for v in &viz.violation {
        let _ = writeln!(out, "{v}");
    }
    if let Some(flux) = &viz.flux {
        out.push_str("VECTORS flux double\n");
        for q in flux {
            let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", q[0], q[1], 0.0);
        }
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Token stream over a VTK body: whitespace-separated words with a cursor.
struct Tokens<'a> {
    words: Vec<&'a str>,
    at: usize,
    path: &'a Path,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Result<&'a str> {
        let w = self
            .words
            .get(self.at)
            .ok_or_else(|| parse_err(self.path, "unexpected end of file"))?;
        self.at += 1;
        Ok(w)
    }

    fn expect(&mut self, want: &str) -> Result<()> {
        let got = self.next()?;
        if got != want {
            return Err(parse_err(self.path, format!("expected '{want}', got '{got}'")));
        }
        Ok(())
    }

    fn number<T: FromStr>(&mut self) -> Result<T> {
        let w = self.next()?;
        w.parse()
            .map_err(|_| parse_err(self.path, format!("bad number '{w}'")))
    }

    fn peek(&self) -> Option<&'a str> {
        self.words.get(self.at).copied()
    }
}

/// Reads back a file written by [`write_vtk`]. Values round-trip exactly.
pub fn read_vtk(path: &Path) -> Result<VizMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    for want in ["# vtk DataFile Version 3.0", "dmpfem field export", "ASCII"] {
        let got = lines
            .next()
            .ok_or_else(|| parse_err(path, "missing header"))?;
        if got != want {
            return Err(parse_err(path, format!("expected '{want}', got '{got}'")));
        }
    }
    let body: String = lines.collect::<Vec<_>>().join("\n");
    let mut t = Tokens {
        words: body.split_whitespace().collect(),
        at: 0,
        path,
    };
    t.expect("DATASET")?;
    t.expect("UNSTRUCTURED_GRID")?;
    t.expect("POINTS")?;
    let n: usize = t.number()?;
    t.expect("double")?;
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = t.number()?;
        let y: f64 = t.number()?;
        let _z: f64 = t.number()?;
        points.push([x, y]);
    }
    t.expect("CELLS")?;
    let nc: usize = t.number()?;
    let _total: usize = t.number()?;
    let mut cells = Vec::with_capacity(nc);
    for _ in 0..nc {
        let arity: usize = t.number()?;
        let mut cell = Vec::with_capacity(arity);
        for _ in 0..arity {
            cell.push(t.number::<usize>()?);
        }
        cells.push(cell);
    }
    t.expect("CELL_TYPES")?;
    let ntypes: usize = t.number()?;
    if ntypes != nc {
        return Err(parse_err(path, "cell type count differs from cell count"));
    }
    let mut dim = 2;
    for _ in 0..nc {
        let ty: u32 = t.number()?;
        dim = match ty {
            3 => 1,
            9 => 2,
            other => return Err(parse_err(path, format!("unsupported cell type {other}"))),
        };
    }
    t.expect("POINT_DATA")?;
    let nd: usize = t.number()?;
    if nd != n {
        return Err(parse_err(path, "point data count differs from point count"));
    }
    t.expect("SCALARS")?;
    t.expect("concentration")?;
    t.expect("double")?;
    t.expect("1")?;
    t.expect("LOOKUP_TABLE")?;
    t.expect("default")?;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(t.number::<f64>()?);
    }
    t.expect("SCALARS")?;
    t.expect("violation")?;
    t.expect("int")?;
    t.expect("1")?;
    t.expect("LOOKUP_TABLE")?;
    t.expect("default")?;
    let mut violation = Vec::with_capacity(n);
    for _ in 0..n {
        violation.push(t.number::<i32>()?);
    }
    let flux = if t.peek() == Some("VECTORS") {
        t.expect("VECTORS")?;
        t.expect("flux")?;
        t.expect("double")?;
        let mut flux = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = t.number()?;
            let y: f64 = t.number()?;
            let _z: f64 = t.number()?;
            flux.push([x, y]);
        }
        Some(flux)
    } else {
        None
    };
    if t.peek().is_some() {
        return Err(parse_err(path, "trailing content after point data"));
    }
    Ok(VizMesh {
        dim,
        points,
        values,
        flux,
        cells,
        violation,
    })
}

const SWEEP_HEADER: &str = "level,formulation,min_concentration,min_x,min_y";

/// Writes a sweep table as CSV, one row per level. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_sweep_csv(path: &Path, table: &SweepTable) -> Result<()> {
    let mut out = String::new();
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for row in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.level, table.formulation, row.min_concentration, row.min_x, row.min_y
        );
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

const DMP_HEADER: &str = "min_value,min_x,min_y,max_value,max_x,max_y,boundary_min,boundary_max,\
                          negative_fraction,eval_density,nonneg_ok,mp_diffusion_ok,mp_decay_ok";

/// Writes an extrema report as a single-row CSV.
pub fn write_dmp_csv(path: &Path, report: &DmpReport) -> Result<()> {
    let mut out = String::new();
    out.push_str(DMP_HEADER);
    out.push('\n');
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        report.min_value,
        report.min_location[0],
        report.min_location[1],
        report.max_value,
        report.max_location[0],
        report.max_location[1],
        report.boundary_min,
        report.boundary_max,
        report.negative_fraction,
        report.eval_density,
        report.verdicts.nonneg_ok,
        report.verdicts.mp_diffusion_ok,
        report.verdicts.mp_decay_ok,
    );
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Reads back a report written by [`write_dmp_csv`].
pub fn read_dmp_csv(path: &Path) -> Result<DmpReport> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(DMP_HEADER) => {}
        other => {
            return Err(parse_err(
                path,
                format!("bad header {:?}", other.unwrap_or_default()),
            ))
        }
    }
    let line = lines
        .next()
        .ok_or_else(|| parse_err(path, "missing data row"))?;
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 13 {
        return Err(parse_err(path, format!("expected 13 fields, got {}", fields.len())));
    }
    let num = |k: usize| -> Result<f64> {
        fields[k]
            .parse()
            .map_err(|_| parse_err(path, format!("bad number '{}'", fields[k])))
    };
    let verdict = |k: usize| -> Result<Verdict> {
        fields[k]
            .parse()
            .map_err(|_| parse_err(path, format!("bad verdict '{}'", fields[k])))
    };
    Ok(DmpReport {
        min_value: num(0)?,
        min_location: [num(1)?, num(2)?],
        max_value: num(3)?,
        max_location: [num(4)?, num(5)?],
        boundary_min: num(6)?,
        boundary_max: num(7)?,
        negative_fraction: num(8)?,
        eval_density: fields[9]
            .parse()
            .map_err(|_| parse_err(path, format!("bad density '{}'", fields[9])))?,
        verdicts: Verdicts {
            nonneg_ok: verdict(10)?,
            mp_diffusion_ok: verdict(11)?,
            mp_decay_ok: verdict(12)?,
        },
    })
}

/// Reads rows written by [`write_sweep_csv`].
pub fn read_sweep_csv(path: &Path) -> Result<Vec<(Formulation, SweepRow)>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(SWEEP_HEADER) => {}
        other => {
            return Err(parse_err(
                path,
                format!("bad header {:?}", other.unwrap_or_default()),
            ))
        }
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(path, format!("row {} has {} fields", k + 2, fields.len())));
        }
        let bad = |what: &str| parse_err(path, format!("row {}: bad {what}", k + 2));
        let formulation: Formulation = fields[1].parse().map_err(|_| bad("formulation"))?;
        rows.push((
            formulation,
            SweepRow {
                level: fields[0].parse().map_err(|_| bad("level"))?,
                min_concentration: fields[2].parse().map_err(|_| bad("minimum"))?,
                min_x: fields[3].parse().map_err(|_| bad("x"))?,
                min_y: fields[4].parse().map_err(|_| bad("y"))?,
            },
        ));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use tempfile::tempdir;

    use super::*;
    use crate::analysis::{scan_extrema, SweepMode};
    use crate::mesh::{build_interval_mesh, build_rect_mesh, DofMap};
    use crate::Parallelism;

    fn random_solution(
        mesh: &crate::mesh::Mesh,
        p: usize,
        formulation: Formulation,
        seed: u64,
    ) -> FieldSolution {
        let basis = gll_nodes(p).unwrap();
        let dofs = DofMap::build(mesh, &basis).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let concentration = (0..dofs.n_nodes).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let flux = formulation.is_least_squares().then(|| {
            (0..dofs.n_nodes)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect()
        });
        FieldSolution {
            mesh: mesh.clone(),
            dofs,
            formulation,
            concentration,
            flux,
        }
    }

    #[test]
    fn viz_grids_have_the_documented_shape() {
        let mesh = build_rect_mesh(0.0, 0.0, 1.0, 1.0, 2, 2).unwrap();
        let sol = random_solution(&mesh, 2, Formulation::SingleField, 1);
        let viz = build_viz(&sol).unwrap();
        assert_eq!(viz.points.len(), 4 * 256);
        assert_eq!(viz.cells.len(), 4 * 225);
        assert!(viz.cells.iter().all(|c| c.len() == 4));
        assert_eq!(viz.values.len(), viz.points.len());
        assert_eq!(viz.violation.len(), viz.points.len());
        assert!(viz.flux.is_none());
        let negatives = viz.violation.iter().filter(|&&v| v == 1).count();
        assert!(negatives > 0, "random field should dip negative somewhere");
        for (v, &mask) in viz.values.iter().zip(&viz.violation) {
            assert_eq!(mask, i32::from(*v < -NEG_MASK));
        }

        let mesh1 = build_interval_mesh(0.0, 1.0, 2).unwrap();
        let line = random_solution(&mesh1, 3, Formulation::Ls1, 2);
        let viz1 = build_viz(&line).unwrap();
        assert_eq!(viz1.points.len(), 200);
        assert_eq!(viz1.cells.len(), 2 * 99);
        assert!(viz1.cells.iter().all(|c| c.len() == 2));
        assert_eq!(viz1.flux.as_ref().unwrap().len(), 200);
    }

    #[test]
    fn viz_samples_are_a_subset_of_the_scan_samples() {
        let mesh = build_rect_mesh(0.0, 0.0, 1.0, 1.0, 1, 1).unwrap();
        // At order 15 the element nodes coincide with the viz grid, so the
        // extrema agree exactly.
        let sol = random_solution(&mesh, 15, Formulation::SingleField, 3);
        let viz = build_viz(&sol).unwrap();
        let scan = scan_extrema(&sol, 16, Parallelism::Sequential).unwrap();
        let viz_min = viz.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let viz_max = viz.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(viz_min, scan.min_value);
        assert_eq!(viz_max, scan.max_value);

        // At lower orders the scan also samples the element nodes, so it can
        // only be more pessimistic.
        let sol = random_solution(&mesh, 3, Formulation::SingleField, 4);
        let viz = build_viz(&sol).unwrap();
        let scan = scan_extrema(&sol, 16, Parallelism::Sequential).unwrap();
        let viz_min = viz.values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(viz_min >= scan.min_value);
    }

    #[test]
    fn vtk_files_round_trip_bitwise() {
        let dir = tempdir().unwrap();
        let mesh = build_rect_mesh(0.0, 0.0, 2.0, 1.0, 2, 1).unwrap();
        let sol = random_solution(&mesh, 2, Formulation::Ls2, 5);
        let viz = build_viz(&sol).unwrap();

        let path = dir.path().join("field.vtk");
        write_vtk(&path, &viz).unwrap();
        let back = read_vtk(&path).unwrap();
        assert_eq!(back, viz);

        let again = dir.path().join("again.vtk");
        write_vtk(&again, &viz).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&again).unwrap(),
            "writer must be deterministic"
        );

        let mesh1 = build_interval_mesh(-1.0, 3.0, 3).unwrap();
        let line = random_solution(&mesh1, 4, Formulation::SingleField, 6);
        let viz1 = build_viz(&line).unwrap();
        let path1 = dir.path().join("line.vtk");
        write_vtk(&path1, &viz1).unwrap();
        assert_eq!(read_vtk(&path1).unwrap(), viz1);
    }

    #[test]
    fn sweep_tables_round_trip_through_csv() {
        let dir = tempdir().unwrap();
        let table = SweepTable {
            problem: "burman_ern".into(),
            formulation: Formulation::Ls1,
            mode: SweepMode::P,
            rows: vec![
                SweepRow {
                    level: 1,
                    min_concentration: 0.0,
                    min_x: 0.25,
                    min_y: 0.75,
                },
                SweepRow {
                    level: 2,
                    min_concentration: -1.1343e-4,
                    min_x: 0.1 + 0.2,
                    min_y: f64::MIN_POSITIVE,
                },
            ],
            aborted: None,
        };
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&path, &table).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("level,formulation,min_concentration,min_x,min_y\n"));
        assert!(text.contains("1,ls1,0,0.25,0.75\n"));

        let rows = read_sweep_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        for (k, (formulation, row)) in rows.iter().enumerate() {
            assert_eq!(*formulation, Formulation::Ls1);
            assert_eq!(row, &table.rows[k], "row {k} must round-trip exactly");
        }
    }

    #[test]
    fn dmp_reports_round_trip_through_csv() {
        let dir = tempdir().unwrap();
        let report = DmpReport {
            min_value: -3.171e-4,
            min_location: [0.918918918918919, 0.0],
            max_value: 1.0000000000000002,
            max_location: [0.1, 0.9],
            boundary_min: 0.0,
            boundary_max: 1.0,
            negative_fraction: 1.0 / 3.0,
            eval_density: 16,
            verdicts: Verdicts {
                nonneg_ok: Verdict::Fail,
                mp_diffusion_ok: Verdict::NotApplicable,
                mp_decay_ok: Verdict::Pass,
            },
        };
        let path = dir.path().join("dmp.csv");
        write_dmp_csv(&path, &report).unwrap();
        assert_eq!(read_dmp_csv(&path).unwrap(), report);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains("fail,not-applicable,pass"));
    }

    #[test]
    fn malformed_files_name_the_problem() {
        let dir = tempdir().unwrap();
        let missing = dir.path().join("absent.vtk");
        assert!(matches!(read_vtk(&missing), Err(Error::Io { .. })));

        let truncated = dir.path().join("short.vtk");
        std::fs::write(
            &truncated,
            "# vtk DataFile Version 3.0\ndmpfem field export\nASCII\nDATASET UNSTRUCTURED_GRID\nPOINTS 2 double\n0 0 0\n",
        )
        .unwrap();
        match read_vtk(&truncated) {
            Err(Error::Parse { what, .. }) => assert!(what.contains("end of file")),
            other => panic!("expected a parse error, got {other:?}"),
        }

        let badcsv = dir.path().join("bad.csv");
        std::fs::write(&badcsv, "level,min\n1,2\n").unwrap();
        assert!(matches!(read_sweep_csv(&badcsv), Err(Error::Parse { .. })));
    }
}
