//! Coefficient fields, boundary data, and the catalog of canonical problems.
//!
//! A problem bundles the PDE data `alpha`, `D`, `f`, the boundary values, an
//! optional exact solution, and the default mesh recipe, plus the sign
//! metadata the maximum-principle audits need (whether `f` keeps one sign,
//! whether `alpha` vanishes identically, whether the Dirichlet data is
//! non-negative).

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::mesh::{BoundaryRegion, MeshKind};
use crate::{tol, Error, Result};

/// Scalar coefficient as a function of position; 1D problems receive `y = 0`.
pub type ScalarField = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// Symmetric tensor coefficient as a function of position.
pub type TensorField = Arc<dyn Fn(f64, f64) -> SymMat2 + Send + Sync>;
/// Dirichlet data: position plus boundary region.
pub type DirichletField = Arc<dyn Fn(f64, f64, BoundaryRegion) -> f64 + Send + Sync>;

/// Symmetric 2x2 matrix; 1D diffusivities use `xx` with `xy = 0`, `yy = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMat2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl SymMat2 {
    pub fn identity() -> Self {
        SymMat2 {
            xx: 1.0,
            xy: 0.0,
            yy: 1.0,
        }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        SymMat2 {
            xx: a,
            xy: 0.0,
            yy: b,
        }
    }

    /// Scalar diffusivity embedded for a 1D problem.
    pub fn scalar_1d(a: f64) -> Self {
        SymMat2 {
            xx: a,
            xy: 0.0,
            yy: 1.0,
        }
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.xx * v[0] + self.xy * v[1],
            self.xy * v[0] + self.yy * v[1],
        ]
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Eigenvalues as `(min, max)`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.xx + self.yy);
        let r = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (mean - r, mean + r)
    }

    /// Inverse, or `None` when the determinant vanishes (caller attaches the
    /// evaluation point to the fault).
    pub fn inverse(&self) -> Option<SymMat2> {
        let det = self.det();
        let (lo, _) = self.eigenvalues();
        if lo <= tol::DEGENERATE_EIG {
            return None;
        }
        Some(SymMat2 {
            xx: self.yy / det,
            xy: -self.xy / det,
            yy: self.xx / det,
        })
    }
}

/// The inverse square root of an SPD matrix by closed-form 2x2
/// eigendecomposition: `M` with `M M D = I`.
pub fn d_inv_sqrt(d: SymMat2) -> Result<SymMat2> {
    let (lo, hi) = d.eigenvalues();
    if lo <= tol::DEGENERATE_EIG {
        return Err(Error::Degenerate(format!(
            "matrix [[{}, {}], [{}, {}]] has eigenvalue {lo} <= {}",
            d.xx, d.xy, d.xy, d.yy,
            tol::DEGENERATE_EIG
        )));
    }
    if d.xy == 0.0 {
        return Ok(SymMat2::diag(1.0 / d.xx.sqrt(), 1.0 / d.yy.sqrt()));
    }
    // eigenvector for the larger eigenvalue; pick the better-conditioned of
    // the two candidate forms
    let c1 = [d.xy, hi - d.xx];
    let c2 = [hi - d.yy, d.xy];
    let (n1, n2) = (
        c1[0] * c1[0] + c1[1] * c1[1],
        c2[0] * c2[0] + c2[1] * c2[1],
    );
    let v = if n1 >= n2 { c1 } else { c2 };
    let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
    let v = [v[0] / norm, v[1] / norm];
    let (s_lo, s_hi) = (1.0 / lo.sqrt(), 1.0 / hi.sqrt());
    // M = s_lo (I - v v^T) + s_hi v v^T
    Ok(SymMat2 {
        xx: s_lo + (s_hi - s_lo) * v[0] * v[0],
        xy: (s_hi - s_lo) * v[0] * v[1],
        yy: s_lo + (s_hi - s_lo) * v[1] * v[1],
    })
}

/// Sign classification of a forcing or boundary function, as used by the
/// maximum-principle audit: the one-sided bounds only apply when `f` keeps
/// one sign.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignClass {
    Zero,
    NonNegative,
    NonPositive,
    Mixed,
}

/// PDE coefficients with the bounds that the well-posedness assumptions
/// require (witnessed by sampling tests, not enforced pointwise).
#[derive(Clone)]
pub struct CoefficientField {
    pub alpha: ScalarField,
    pub diffusivity: TensorField,
    pub forcing: ScalarField,
    /// Strict upper bound for `alpha` over the domain.
    pub alpha_bound: f64,
    /// `(lambda_min, lambda_max)` bracketing the diffusivity eigenvalues on
    /// the (sampled) domain.
    pub ellipticity: (f64, f64),
    /// Whether `alpha` or `D` vary in space; drives the quadrature policy
    /// (one extra point when they do).
    pub varying: bool,
    /// Whether `alpha` vanishes identically (pure diffusion).
    pub alpha_is_zero: bool,
}

/// Dirichlet and flux boundary data.
#[derive(Clone)]
pub struct BoundaryData {
    pub dirichlet: DirichletField,
    pub neumann: ScalarField,
}

impl BoundaryData {
    pub fn constant_dirichlet(value: f64) -> Self {
        BoundaryData {
            dirichlet: Arc::new(move |_, _, _| value),
            neumann: Arc::new(|_, _| 0.0),
        }
    }
}

/// A fully specified model problem.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub dim: usize,
    pub coefficients: CoefficientField,
    pub boundary: BoundaryData,
    /// Exact solution where one is known (the 1D problems).
    pub analytic: Option<ScalarField>,
    /// Default mesh recipe; CLI overrides replace this wholesale.
    pub base_mesh: MeshKind,
    pub forcing_sign: SignClass,
    /// True when the Dirichlet data is non-negative everywhere.
    pub dirichlet_nonneg: bool,
}

/// Identifies a canonical problem from the catalog.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProblemId {
    Decay1d,
    Forced1d,
    BurmanErn,
    Lepotier,
    Hole { k1: f64, k2: f64 },
}

impl FromStr for ProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<ProblemId> {
        match s {
            "decay1d" => Ok(ProblemId::Decay1d),
            "forced1d" => Ok(ProblemId::Forced1d),
            "burman_ern" => Ok(ProblemId::BurmanErn),
            "lepotier" => Ok(ProblemId::Lepotier),
            "hole" => Ok(ProblemId::Hole { k1: 1.0, k2: 100.0 }),
            other => Err(Error::InvalidArgument(format!(
                "unknown problem `{other}` (try one of: {})",
                catalog()
                    .iter()
                    .map(|(n, _)| *n)
                    .collect::<Vec<_>>()
                    .join(", ")
            ))),
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProblemId::Decay1d => write!(f, "decay1d"),
            ProblemId::Forced1d => write!(f, "forced1d"),
            ProblemId::BurmanErn => write!(f, "burman_ern"),
            ProblemId::Lepotier => write!(f, "lepotier"),
            ProblemId::Hole { .. } => write!(f, "hole"),
        }
    }
}

/// Names and one-line descriptions for `list-problems`.
pub fn catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "decay1d",
            "1D, strong decay (alpha = 1000), no forcing, c = 1 at both ends of (0, 1); exact solution available",
        ),
        (
            "forced1d",
            "1D pure diffusion on (-1, 1), exponential source, homogeneous Dirichlet; exact solution available",
        ),
        (
            "burman_ern",
            "isotropic diffusion on (0,1) x (0,0.3) with an indicator source in the lower-left corner",
        ),
        (
            "lepotier",
            "strongly anisotropic position-dependent diffusivity on (0,0.5)^2 with an indicator source",
        ),
        (
            "hole",
            "unit square with a square hole, rotated anisotropic diffusivity (k1, k2 at pi/6), c = 0 outside / 2 on the hole",
        ),
    ]
}

/// The exact solution of the 1D decay problem `alpha c - c'' = 0`, `c(0) =
/// c(1) = 1`, in the overflow-safe form
/// `(1 - e^{-s}) (e^{-s(1-x)} + e^{-s x}) / (1 - e^{-2s})` with `s =
/// sqrt(alpha)`: every exponent is non-positive, so arbitrarily strong decay
/// stays finite.
pub fn analytic_decay1d(alpha: f64, x: f64) -> f64 {
    let s = alpha.sqrt();
    (1.0 - (-s).exp()) * ((-s * (1.0 - x)).exp() + (-s * x).exp()) / (1.0 - (-2.0 * s).exp())
}

/// The exact solution of the 1D forced problem `-c'' = 200 e^{-10(x+1)}` on
/// `(-1, 1)` with homogeneous Dirichlet ends.
pub fn analytic_forced1d(x: f64) -> f64 {
    -2.0 * (-10.0 * (x + 1.0)).exp() - (1.0 - (-20.0f64).exp()) * x + (1.0 + (-20.0f64).exp())
}

/// The anisotropic diffusivity of the `lepotier` problem.
pub fn lepotier_diffusivity(x: f64, y: f64, eps: f64) -> SymMat2 {
    SymMat2 {
        xx: y * y + eps * x * x,
        xy: -(1.0 - eps) * x * y,
        yy: x * x + eps * y * y,
    }
}

/// The rotated constant diffusivity of the `hole` problem:
/// `R(theta) diag(k1, k2) R(theta)^T` with `theta = pi/6`.
pub fn hole_diffusivity(k1: f64, k2: f64) -> SymMat2 {
    let theta = std::f64::consts::FRAC_PI_6;
    let (s, c) = theta.sin_cos();
    SymMat2 {
        xx: k1 * c * c + k2 * s * s,
        xy: s * c * (k2 - k1),
        yy: k1 * s * s + k2 * c * c,
    }
}

fn constant_coefficients(alpha: f64, d: SymMat2, forcing: ScalarField) -> CoefficientField {
    let (lo, hi) = d.eigenvalues();
    CoefficientField {
        alpha: Arc::new(move |_, _| alpha),
        diffusivity: Arc::new(move |_, _| d),
        forcing,
        alpha_bound: alpha + 1.0,
        ellipticity: (lo, hi),
        varying: false,
        alpha_is_zero: alpha == 0.0,
    }
}

/// Builds one of the catalog problems with the data fixed by its source.
pub fn canonical_problem(id: ProblemId) -> Result<ProblemSpec> {
    match id {
        ProblemId::Decay1d => Ok(ProblemSpec {
            name: "decay1d".into(),
            dim: 1,
            coefficients: constant_coefficients(
                1000.0,
                SymMat2::scalar_1d(1.0),
                Arc::new(|_, _| 0.0),
            ),
            boundary: BoundaryData::constant_dirichlet(1.0),
            analytic: Some(Arc::new(|x, _| analytic_decay1d(1000.0, x))),
            base_mesh: MeshKind::Interval {
                a: 0.0,
                b: 1.0,
                ne: 4,
            },
            forcing_sign: SignClass::Zero,
            dirichlet_nonneg: true,
        }),
        ProblemId::Forced1d => Ok(ProblemSpec {
            name: "forced1d".into(),
            dim: 1,
            coefficients: constant_coefficients(
                0.0,
                SymMat2::scalar_1d(1.0),
                Arc::new(|x, _| 200.0 * (-10.0 * (x + 1.0)).exp()),
            ),
            boundary: BoundaryData::constant_dirichlet(0.0),
            analytic: Some(Arc::new(|x, _| analytic_forced1d(x))),
            base_mesh: MeshKind::Interval {
                a: -1.0,
                b: 1.0,
                ne: 1,
            },
            forcing_sign: SignClass::NonNegative,
            dirichlet_nonneg: true,
        }),
        ProblemId::BurmanErn => Ok(ProblemSpec {
            name: "burman_ern".into(),
            dim: 2,
            coefficients: constant_coefficients(
                0.0,
                SymMat2::identity(),
                Arc::new(|x, y| {
                    if (0.0..=0.5).contains(&x) && (0.0..=0.075).contains(&y) {
                        1.0
                    } else {
                        0.0
                    }
                }),
            ),
            boundary: BoundaryData::constant_dirichlet(0.0),
            analytic: None,
            base_mesh: MeshKind::Rect {
                x0: 0.0,
                y0: 0.0,
                x1: 1.0,
                y1: 0.3,
                nx: 2,
                ny: 2,
            },
            forcing_sign: SignClass::NonNegative,
            dirichlet_nonneg: true,
        }),
        ProblemId::Lepotier => {
            let eps = 1e-3;
            Ok(ProblemSpec {
                name: "lepotier".into(),
                dim: 2,
                coefficients: CoefficientField {
                    alpha: Arc::new(|_, _| 0.0),
                    diffusivity: Arc::new(move |x, y| lepotier_diffusivity(x, y, eps)),
                    forcing: Arc::new(|x, y| {
                        if (0.125..=0.375).contains(&x) && (0.125..=0.375).contains(&y) {
                            1.0
                        } else {
                            0.0
                        }
                    }),
                    alpha_bound: 1.0,
                    // eigenvalues are eps (x^2 + y^2) and x^2 + y^2; the lower
                    // figure reflects the sampled domain minus the corner ball
                    ellipticity: (1e-16, 0.5),
                    varying: true,
                    alpha_is_zero: true,
                },
                boundary: BoundaryData::constant_dirichlet(0.0),
                analytic: None,
                base_mesh: MeshKind::Rect {
                    x0: 0.0,
                    y0: 0.0,
                    x1: 0.5,
                    y1: 0.5,
                    nx: 8,
                    ny: 8,
                },
                forcing_sign: SignClass::NonNegative,
                dirichlet_nonneg: true,
            })
        }
        ProblemId::Hole { k1, k2 } => {
            if k1 <= 0.0 || k2 <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "hole problem needs positive diffusivities, got k1 = {k1}, k2 = {k2}"
                )));
            }
            Ok(ProblemSpec {
                name: "hole".into(),
                dim: 2,
                coefficients: constant_coefficients(
                    0.0,
                    hole_diffusivity(k1, k2),
                    Arc::new(|_, _| 0.0),
                ),
                boundary: BoundaryData {
                    dirichlet: Arc::new(|_, _, region| match region {
                        BoundaryRegion::Outer => 0.0,
                        BoundaryRegion::Inner => 2.0,
                    }),
                    neumann: Arc::new(|_, _| 0.0),
                },
                analytic: None,
                base_mesh: MeshKind::Hole { n: 2 },
                forcing_sign: SignClass::Zero,
                dirichlet_nonneg: true,
            })
        }
    }
}

/// Loads a problem from the line-oriented text config (see the repository
/// README for the format): `name`, `domain`, constant `alpha`, constant `d`,
/// a `forcing` clause (constant, indicator box, or polynomial terms), and
/// constant `dirichlet` values.
pub fn load_problem_file(path: &Path) -> Result<ProblemSpec> {
    let parse_err = |what: String| Error::Parse {
        path: path.to_path_buf(),
        what,
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;

    let mut name: Option<String> = None;
    let mut base_mesh: Option<MeshKind> = None;
    let mut alpha = 0.0f64;
    let mut d: Option<SymMat2> = None;
    let mut forcing_kind: Option<ForcingKind> = None;
    let mut dirichlet_outer = 0.0f64;
    let mut dirichlet_inner: Option<f64> = None;

    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let key = tokens.next().unwrap();
        let rest: Vec<&str> = tokens.collect();
        let floats = |n: usize| -> Result<Vec<f64>> {
            if rest.len() < n {
                return Err(parse_err(format!("`{key}` needs {n} values: {line}")));
            }
            rest[..n]
                .iter()
                .map(|t| {
                    t.parse()
                        .map_err(|_| parse_err(format!("bad number `{t}` in: {line}")))
                })
                .collect()
        };
        match key {
            "name" => {
                name = Some(
                    rest.first()
                        .ok_or_else(|| parse_err("`name` needs a value".into()))?
                        .to_string(),
                )
            }
            "domain" => {
                base_mesh = Some(match rest.first().copied() {
                    Some("interval") => {
                        let v = rest[1..]
                            .iter()
                            .map(|t| t.parse::<f64>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| parse_err(format!("bad interval domain: {line}")))?;
                        if v.len() != 3 {
                            return Err(parse_err(format!(
                                "`domain interval` needs a b ne: {line}"
                            )));
                        }
                        MeshKind::Interval {
                            a: v[0],
                            b: v[1],
                            ne: v[2] as usize,
                        }
                    }
                    Some("rect") => {
                        let v = rest[1..]
                            .iter()
                            .map(|t| t.parse::<f64>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| parse_err(format!("bad rect domain: {line}")))?;
                        if v.len() != 6 {
                            return Err(parse_err(format!(
                                "`domain rect` needs x0 y0 x1 y1 nx ny: {line}"
                            )));
                        }
                        MeshKind::Rect {
                            x0: v[0],
                            y0: v[1],
                            x1: v[2],
                            y1: v[3],
                            nx: v[4] as usize,
                            ny: v[5] as usize,
                        }
                    }
                    _ => {
                        return Err(parse_err(format!(
                            "`domain` must be `interval` or `rect`: {line}"
                        )))
                    }
                });
            }
            "alpha" => alpha = floats(1)?[0],
            "d" => {
                d = Some(if rest.len() >= 3 {
                    let v = floats(3)?;
                    SymMat2 {
                        xx: v[0],
                        xy: v[1],
                        yy: v[2],
                    }
                } else {
                    SymMat2::scalar_1d(floats(1)?[0])
                });
            }
            "forcing" => {
                forcing_kind = Some(match rest.first().copied() {
                    Some("constant") => ForcingKind::Constant(
                        rest.get(1)
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| parse_err(format!("bad constant forcing: {line}")))?,
                    ),
                    Some("indicator") => {
                        let v = rest[1..]
                            .iter()
                            .map(|t| t.parse::<f64>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| parse_err(format!("bad indicator forcing: {line}")))?;
                        match v.len() {
                            3 => ForcingKind::Indicator {
                                x: (v[0], v[1]),
                                y: (f64::NEG_INFINITY, f64::INFINITY),
                                value: v[2],
                            },
                            5 => ForcingKind::Indicator {
                                x: (v[0], v[1]),
                                y: (v[2], v[3]),
                                value: v[4],
                            },
                            _ => {
                                return Err(parse_err(format!(
                                    "`forcing indicator` needs x0 x1 [y0 y1] value: {line}"
                                )))
                            }
                        }
                    }
                    Some("poly") => {
                        let mut terms = Vec::new();
                        for t in &rest[1..] {
                            let parts: Vec<&str> = t.split(':').collect();
                            if parts.len() < 2 || parts.len() > 3 {
                                return Err(parse_err(format!(
                                    "polynomial term must be coeff:i[:j], got `{t}`"
                                )));
                            }
                            let a: f64 = parts[0]
                                .parse()
                                .map_err(|_| parse_err(format!("bad coefficient in `{t}`")))?;
                            let i: u32 = parts[1]
                                .parse()
                                .map_err(|_| parse_err(format!("bad exponent in `{t}`")))?;
                            let j: u32 = parts
                                .get(2)
                                .map(|p| p.parse())
                                .transpose()
                                .map_err(|_| parse_err(format!("bad exponent in `{t}`")))?
                                .unwrap_or(0);
                            terms.push((a, i, j));
                        }
                        if terms.is_empty() {
                            return Err(parse_err("`forcing poly` needs at least one term".into()));
                        }
                        ForcingKind::Poly(terms)
                    }
                    _ => {
                        return Err(parse_err(format!(
                            "`forcing` must be constant, indicator, or poly: {line}"
                        )))
                    }
                });
            }
            "dirichlet" => {
                let v = floats(1)?;
                dirichlet_outer = v[0];
                dirichlet_inner = rest.get(1).and_then(|t| t.parse().ok());
            }
            other => return Err(parse_err(format!("unknown key `{other}`"))),
        }
    }

    let name = name.ok_or_else(|| parse_err("missing `name`".into()))?;
    let base_mesh = base_mesh.ok_or_else(|| parse_err("missing `domain`".into()))?;
    let dim = match base_mesh {
        MeshKind::Interval { .. } => 1,
        _ => 2,
    };
    if alpha < 0.0 {
        return Err(parse_err(format!("alpha must be non-negative, got {alpha}")));
    }
    let d = d.unwrap_or_else(SymMat2::identity);
    let (lo, _) = d.eigenvalues();
    if lo <= 0.0 {
        return Err(parse_err(format!(
            "diffusivity must be positive definite, eigenvalue {lo}"
        )));
    }
    let forcing_kind = forcing_kind.unwrap_or(ForcingKind::Constant(0.0));
    let forcing_sign = forcing_kind.sign_class(&base_mesh);
    let forcing = forcing_kind.into_field();

    let inner = dirichlet_inner.unwrap_or(dirichlet_outer);
    let dirichlet_nonneg = dirichlet_outer >= 0.0 && inner >= 0.0;
    Ok(ProblemSpec {
        name,
        dim,
        coefficients: constant_coefficients(alpha, d, forcing),
        boundary: BoundaryData {
            dirichlet: Arc::new(move |_, _, region| match region {
                BoundaryRegion::Outer => dirichlet_outer,
                BoundaryRegion::Inner => inner,
            }),
            neumann: Arc::new(|_, _| 0.0),
        },
        analytic: None,
        base_mesh,
        forcing_sign,
        dirichlet_nonneg,
    })
}

enum ForcingKind {
    Constant(f64),
    Indicator {
        x: (f64, f64),
        y: (f64, f64),
        value: f64,
    },
    Poly(Vec<(f64, u32, u32)>),
}

impl ForcingKind {
    fn sign_class(&self, domain: &MeshKind) -> SignClass {
        let classify = |lo: f64, hi: f64| {
            if lo == 0.0 && hi == 0.0 {
                SignClass::Zero
            } else if lo >= 0.0 {
                SignClass::NonNegative
            } else if hi <= 0.0 {
                SignClass::NonPositive
            } else {
                SignClass::Mixed
            }
        };
        match self {
            ForcingKind::Constant(v) => classify(*v, *v),
            ForcingKind::Indicator { value, .. } => classify(value.min(0.0), value.max(0.0)),
            ForcingKind::Poly(terms) => {
                // sample a dense grid of the domain's bounding box
                let ((x0, x1), (y0, y1)) = match domain {
                    MeshKind::Interval { a, b, .. } => ((*a, *b), (0.0, 0.0)),
                    MeshKind::Rect { x0, y0, x1, y1, .. } => ((*x0, *x1), (*y0, *y1)),
                    _ => ((0.0, 1.0), (0.0, 1.0)),
                };
                let eval = |x: f64, y: f64| {
                    terms
                        .iter()
                        .map(|(a, i, j)| a * x.powi(*i as i32) * y.powi(*j as i32))
                        .sum::<f64>()
                };
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                let n = 200;
                for gy in 0..=n {
                    for gx in 0..=n {
                        let x = x0 + (x1 - x0) * gx as f64 / n as f64;
                        let y = y0 + (y1 - y0) * gy as f64 / n as f64;
                        let v = eval(x, y);
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                classify(lo, hi)
            }
        }
    }

    fn into_field(self) -> ScalarField {
        match self {
            ForcingKind::Constant(v) => Arc::new(move |_, _| v),
            ForcingKind::Indicator { x, y, value } => Arc::new(move |px, py| {
                if (x.0..=x.1).contains(&px) && (y.0..=y.1).contains(&py) {
                    value
                } else {
                    0.0
                }
            }),
            ForcingKind::Poly(terms) => Arc::new(move |x, y| {
                terms
                    .iter()
                    .map(|(a, i, j)| a * x.powi(*i as i32) * y.powi(*j as i32))
                    .sum()
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn decay_solution_hits_boundary_and_midpoint() {
        assert_abs_diff_eq!(analytic_decay1d(1000.0, 0.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(analytic_decay1d(1000.0, 1.0), 1.0, epsilon = 1e-12);
        // approx 2 exp(-sqrt(1000)/2) at the midpoint
        assert_relative_eq!(
            analytic_decay1d(1000.0, 0.5),
            2.7178864306212946e-7,
            max_relative = 1e-10
        );
        // stabilized form survives much stronger decay
        assert!(analytic_decay1d(1e6, 0.5).is_finite());
        assert_abs_diff_eq!(analytic_decay1d(1e6, 1.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn decay_solution_satisfies_the_ode() {
        let (alpha, h) = (1000.0, 1e-5);
        for i in 1..100 {
            let x = i as f64 / 100.0;
            let c = |x: f64| analytic_decay1d(alpha, x);
            let second = (c(x + h) - 2.0 * c(x) + c(x - h)) / (h * h);
            let residual = alpha * c(x) - second;
            assert!(
                residual.abs() <= 1e-6 * alpha,
                "residual {residual} at x = {x}"
            );
        }
    }

    #[test]
    fn forced_solution_matches_closed_form() {
        assert_abs_diff_eq!(analytic_forced1d(-1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(analytic_forced1d(1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(analytic_forced1d(0.0), 0.9999092022016287, epsilon = 1e-15);
    }

    #[test]
    fn forced_solution_satisfies_the_ode() {
        let h = 1e-5;
        for i in 1..100 {
            let x = -1.0 + 2.0 * i as f64 / 100.0;
            let second =
                (analytic_forced1d(x + h) - 2.0 * analytic_forced1d(x) + analytic_forced1d(x - h))
                    / (h * h);
            let f = 200.0 * (-10.0 * (x + 1.0)).exp();
            assert!((-second - f).abs() <= 1e-4, "residual at x = {x}");
        }
    }

    #[test]
    fn lepotier_matrix_examples() {
        let z = lepotier_diffusivity(0.0, 0.0, 1e-3);
        assert_eq!((z.xx, z.xy, z.yy), (0.0, 0.0, 0.0));
        let m = lepotier_diffusivity(0.25, 0.25, 1e-3);
        assert_abs_diff_eq!(m.xx, 0.0625625, epsilon = 1e-15);
        assert_abs_diff_eq!(m.xy, -0.0624375, epsilon = 1e-15);
        assert_abs_diff_eq!(m.yy, 0.0625625, epsilon = 1e-15);
        let e = lepotier_diffusivity(0.5, 0.0, 1e-3);
        assert_abs_diff_eq!(e.xx, 2.5e-4, epsilon = 1e-18);
        assert_eq!(e.xy, 0.0);
        assert_abs_diff_eq!(e.yy, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn hole_matrix_example() {
        let d = hole_diffusivity(1.0, 100.0);
        assert_abs_diff_eq!(d.xx, 25.75, epsilon = 1e-4);
        assert_abs_diff_eq!(d.xy, 42.8683, epsilon = 1e-4);
        assert_abs_diff_eq!(d.yy, 75.25, epsilon = 1e-4);
        let (lo, hi) = d.eigenvalues();
        assert_abs_diff_eq!(lo, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 100.0, epsilon = 1e-12);
    }

    #[test]
    fn inv_sqrt_examples() {
        let m = d_inv_sqrt(SymMat2::identity()).unwrap();
        assert_eq!((m.xx, m.xy, m.yy), (1.0, 0.0, 1.0));
        let m = d_inv_sqrt(SymMat2::diag(4.0, 9.0)).unwrap();
        assert_abs_diff_eq!(m.xx, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.yy, 1.0 / 3.0, epsilon = 1e-15);
        assert!(d_inv_sqrt(SymMat2::diag(1.0, 0.0)).is_err());
        assert!(d_inv_sqrt(lepotier_diffusivity(0.0, 0.0, 1e-3)).is_err());
    }

    #[test]
    fn inv_sqrt_squares_to_the_inverse() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..200 {
            // random SPD: A = B^T B + small identity
            let b: [f64; 4] = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let d = SymMat2 {
                xx: b[0] * b[0] + b[2] * b[2] + 0.01,
                xy: b[0] * b[1] + b[2] * b[3],
                yy: b[1] * b[1] + b[3] * b[3] + 0.01,
            };
            let m = d_inv_sqrt(d).unwrap();
            // M M D should be the identity
            let mm = SymMat2 {
                xx: m.xx * m.xx + m.xy * m.xy,
                xy: m.xx * m.xy + m.xy * m.yy,
                yy: m.xy * m.xy + m.yy * m.yy,
            };
            let prod = [
                mm.xx * d.xx + mm.xy * d.xy,
                mm.xx * d.xy + mm.xy * d.yy,
                mm.xy * d.xx + mm.yy * d.xy,
                mm.xy * d.xy + mm.yy * d.yy,
            ];
            assert_abs_diff_eq!(prod[0], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(prod[1], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(prod[2], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(prod[3], 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn catalog_round_trips_ids() {
        for (name, _) in catalog() {
            let id: ProblemId = name.parse().unwrap();
            let spec = canonical_problem(id).unwrap();
            assert_eq!(spec.name, name);
        }
        assert!("warp_drive".parse::<ProblemId>().is_err());
        assert!(canonical_problem(ProblemId::Hole { k1: -1.0, k2: 2.0 }).is_err());
    }

    #[test]
    fn canonical_point_values() {
        let p = canonical_problem(ProblemId::Decay1d).unwrap();
        assert_eq!((p.coefficients.alpha)(0.3, 0.0), 1000.0);
        assert!(!p.coefficients.alpha_is_zero);

        let p = canonical_problem(ProblemId::BurmanErn).unwrap();
        assert_eq!((p.coefficients.forcing)(0.25, 0.05), 1.0);
        assert_eq!((p.coefficients.forcing)(0.6, 0.2), 0.0);
        assert!(p.coefficients.alpha_is_zero);
        assert_eq!(p.forcing_sign, SignClass::NonNegative);

        let p = canonical_problem(ProblemId::Hole { k1: 1.0, k2: 100.0 }).unwrap();
        let d = (p.coefficients.diffusivity)(0.77, 0.13);
        assert_abs_diff_eq!(d.xx, 25.75, epsilon = 1e-4);
        assert_eq!((p.boundary.dirichlet)(0.0, 0.0, BoundaryRegion::Outer), 0.0);
        assert_eq!((p.boundary.dirichlet)(4.0 / 9.0, 0.5, BoundaryRegion::Inner), 2.0);
    }

    #[test]
    fn coefficient_bounds_hold_at_random_samples() {
        let mut rng = StdRng::seed_from_u64(1234);
        let ids = [
            ProblemId::Decay1d,
            ProblemId::Forced1d,
            ProblemId::BurmanErn,
            ProblemId::Lepotier,
            ProblemId::Hole { k1: 1.0, k2: 100.0 },
        ];
        for id in ids {
            let p = canonical_problem(id).unwrap();
            let ((x0, x1), (y0, y1)) = match p.base_mesh {
                MeshKind::Interval { a, b, .. } => ((a, b), (0.0, 0.0)),
                MeshKind::Rect { x0, y0, x1, y1, .. } => ((x0, x1), (y0, y1)),
                MeshKind::Hole { .. } => ((0.0, 1.0), (0.0, 1.0)),
                _ => unreachable!(),
            };
            for _ in 0..1000 {
                let (mut x, mut y);
                loop {
                    x = rng.gen_range(x0..=x1);
                    y = if p.dim == 2 { rng.gen_range(y0..=y1) } else { 0.0 };
                    // lepotier: skip the known degenerate corner ball
                    if p.name != "lepotier" || x * x + y * y > 1e-12 {
                        break;
                    }
                }
                let a = (p.coefficients.alpha)(x, y);
                assert!(a >= 0.0 && a < p.coefficients.alpha_bound);
                let d = (p.coefficients.diffusivity)(x, y);
                let (lo, hi) = d.eigenvalues();
                let (l1, l2) = p.coefficients.ellipticity;
                assert!(
                    lo >= l1 - 1e-12 && hi <= l2 + 1e-12,
                    "{}: eigenvalues ({lo}, {hi}) outside ({l1}, {l2}) at ({x}, {y})",
                    p.name
                );
            }
        }
    }

    #[test]
    fn analytic_solutions_match_dirichlet_data() {
        for id in [ProblemId::Decay1d, ProblemId::Forced1d] {
            let p = canonical_problem(id).unwrap();
            let exact = p.analytic.as_ref().unwrap();
            let MeshKind::Interval { a, b, .. } = p.base_mesh else {
                unreachable!()
            };
            for x in [a, b] {
                let c = exact(x, 0.0);
                let g = (p.boundary.dirichlet)(x, 0.0, BoundaryRegion::Outer);
                assert_abs_diff_eq!(c, g, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn problem_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("well.problem");
        std::fs::write(
            &path,
            "# a sourced well\n\
             name well\n\
             domain rect 0 0 1 1 4 4\n\
             alpha 2.5\n\
             d 2 0.5 1 # anisotropic\n\
             forcing indicator 0.25 0.75 0.25 0.75 3.0\n\
             dirichlet 0\n",
        )
        .unwrap();
        let p = load_problem_file(&path).unwrap();
        assert_eq!(p.name, "well");
        assert_eq!(p.dim, 2);
        assert_eq!((p.coefficients.alpha)(0.1, 0.9), 2.5);
        assert_eq!((p.coefficients.forcing)(0.5, 0.5), 3.0);
        assert_eq!((p.coefficients.forcing)(0.1, 0.5), 0.0);
        assert_eq!(p.forcing_sign, SignClass::NonNegative);
        assert!(p.dirichlet_nonneg);

        std::fs::write(
            &path,
            "name poly1\ndomain interval -1 1 2\nforcing poly 1:0 -1:2\ndirichlet 0\n",
        )
        .unwrap();
        let p = load_problem_file(&path).unwrap();
        // 1 - x^2 on [-1, 1]: non-negative
        assert_eq!(p.forcing_sign, SignClass::NonNegative);
        assert_abs_diff_eq!((p.coefficients.forcing)(0.5, 0.0), 0.75, epsilon = 1e-15);

        std::fs::write(&path, "name bad\ndomain rect 0 0 1 1 2 2\nd 1 5 1\n").unwrap();
        assert!(load_problem_file(&path).is_err()); // indefinite D
        std::fs::write(&path, "domain rect 0 0 1 1 2 2\n").unwrap();
        assert!(load_problem_file(&path).is_err()); // missing name
    }
}
