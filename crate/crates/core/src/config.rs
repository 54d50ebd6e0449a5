//! Run configuration in TOML.
//!
//! ```toml
//! seed = 7
//! deterministic = false
//! output_dir = "out"
//!
//! [domain]
//! kind = "disk"          # or "interval" with a = .., b = ..
//! center = [0.0, 0.0]
//! radius = 1.0
//!
//! [container]            # Ω, strictly containing the closure of D
//! kind = "disk"
//! radius = 2.0
//!
//! [coefficients]         # expressions in x1, x2, or "@name" for a grid column
//! a = ["1", "0", "1"]    # a11, a12, a22 (a single entry in 1D)
//! b = ["0", "0"]
//! g = ["0", "0", "0"]
//! h = ["0", "0"]
//! # grid = "fields.csv"
//! # manufactured = "exp(-(x1^2 + x2^2))"   # sets G = ϱA and h = ϱb
//!
//! [boundary]
//! atoms = [{ param = 0.0, weight = 1.0 }]  # angle on a circle, endpoint in 1D
//! density = []           # samples at angles 2πk/m; [η_α, η_β] in 1D
//! # uniform = 1.0
//!
//! [solver]
//! h = 0.05
//! n_start = 4
//! n_max = 64
//! tol = 1e-4
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fields::{CoefficientSet, GridField, ScalarField};
use crate::geometry::{make_domain, Domain, DomainKind};
use crate::measures::{Atom, BoundaryMeasure};
use crate::mollify::{LevelOptions, MollifierKind, Smoothing};
use crate::par::Exec;
use crate::solver::{default_p, DirichletProblem, MeasureSolveOptions, Schedule, SolveOptions};
use crate::trace::TraceOptions;
use crate::weakform::{QuadOptions, DEFAULT_BANK_DEGREE, MAX_BANK_DEGREE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Interval {
        a: f64,
        b: f64,
    },
    Disk {
        #[serde(default)]
        center: [f64; 2],
        radius: f64,
    },
}

impl DomainSpec {
    pub fn kind(&self) -> DomainKind {
        match *self {
            DomainSpec::Interval { a, b } => DomainKind::Interval { a, b },
            DomainSpec::Disk { center, radius } => DomainKind::Disk { center, radius },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    pub a: Option<Vec<String>>,
    pub b: Option<Vec<String>>,
    pub g: Option<Vec<String>>,
    pub h: Option<Vec<String>>,
    pub grid: Option<PathBuf>,
    pub manufactured: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub param: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    #[serde(default)]
    pub atoms: Vec<AtomSpec>,
    #[serde(default)]
    pub density: Vec<f64>,
    pub uniform: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingChoice {
    /// Symbolic derivatives when every coefficient is a smooth expression.
    #[default]
    Auto,
    Exact,
    Mollify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub h: f64,
    pub p: Option<f64>,
    #[serde(default = "d_n_start")]
    pub n_start: usize,
    #[serde(default = "d_n_max")]
    pub n_max: usize,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_growth")]
    pub growth: f64,
    #[serde(default)]
    pub mollifier: MollifierKind,
    #[serde(default)]
    pub smoothing: SmoothingChoice,
    #[serde(default = "d_true")]
    pub supg: bool,
}

fn d_n_start() -> usize {
    4
}
fn d_n_max() -> usize {
    64
}
fn d_tol() -> f64 {
    1e-4
}
fn d_growth() -> f64 {
    2.0
}
fn d_true() -> bool {
    true
}
fn d_bank() -> usize {
    DEFAULT_BANK_DEGREE
}
fn d_verify_tol() -> f64 {
    1e-3
}
fn d_seed() -> u64 {
    7
}
fn d_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default = "d_bank")]
    pub bank_degree: usize,
    #[serde(default = "d_verify_tol")]
    pub tol: f64,
    #[serde(default)]
    pub quad: Option<QuadOptions>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec { bank_degree: d_bank(), tol: d_verify_tol(), quad: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSpec {
    /// `ϱ` on `Ω` as an expression.
    pub density: Option<String>,
    /// Or a solution CSV on a mesh of `Ω` of size `mesh_h`.
    pub solution: Option<PathBuf>,
    pub mesh_h: Option<f64>,
    pub delta: Option<f64>,
    pub levels: Option<usize>,
    pub nodes: Option<usize>,
    pub tol: Option<f64>,
    /// Radius sweep around `center`.
    #[serde(default)]
    pub radii: Vec<f64>,
    pub center: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    H,
    N,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSpec {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub sweep: SweepKind,
    pub values: Vec<f64>,
    /// Exact solution for error columns; defaults to the manufactured one.
    pub reference: Option<String>,
    pub harnack: Option<BallSpec>,
    pub modulus: Option<BallSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub container: DomainSpec,
    #[serde(default)]
    pub coefficients: CoefficientSpec,
    #[serde(default)]
    pub boundary: BoundarySpec,
    pub solver: SolverSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub trace: TraceSpec,
    pub study: Option<StudySpec>,
    #[serde(default = "d_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn cfg_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
            Error::ConfigSyntax { line, column, message: e.message().to_string() }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut c = Self::parse(&text)?;
        c.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        c.validate()?;
        Ok(c)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.solver;
        if !(s.h > 0.0) {
            return Err(cfg_err("solver.h", "mesh size must be positive"));
        }
        if s.n_start == 0 || s.n_max < s.n_start {
            return Err(cfg_err("solver.n_start", format!("need 1 ≤ n_start ≤ n_max (got {} and {})", s.n_start, s.n_max)));
        }
        if !(s.tol > 0.0) {
            return Err(cfg_err("solver.tol", "tolerance must be positive"));
        }
        if !(s.growth > 1.0) {
            return Err(cfg_err("solver.growth", "growth factor must exceed 1"));
        }
        if self.verify.bank_degree > MAX_BANK_DEGREE {
            return Err(cfg_err("verify.bank_degree", format!("at most {MAX_BANK_DEGREE}")));
        }
        if !(self.verify.tol > 0.0) {
            return Err(cfg_err("verify.tol", "tolerance must be positive"));
        }
        if let Some(g) = &self.coefficients.grid {
            if !self.resolve(g).exists() {
                return Err(cfg_err("coefficients.grid", format!("file {} does not exist", g.display())));
            }
        }
        if let Some(sol) = &self.trace.solution {
            if !self.resolve(sol).exists() {
                return Err(cfg_err("trace.solution", format!("file {} does not exist", sol.display())));
            }
            if self.trace.mesh_h.is_none() {
                return Err(cfg_err("trace.mesh_h", "a solution file needs the mesh size it was computed on"));
            }
        }
        if let Some(st) = &self.study {
            if st.values.iter().any(|v| !(*v > 0.0)) {
                return Err(cfg_err("study.values", "sweep values must be positive"));
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<Domain> {
        make_domain(self.domain.kind(), Some(self.container.kind()))
    }

    fn dim(&self) -> usize {
        self.domain.kind().dim()
    }

    pub fn p(&self) -> f64 {
        self.solver.p.unwrap_or_else(|| default_p(self.dim()))
    }

    fn grids(&self) -> Result<BTreeMap<String, GridField>> {
        match &self.coefficients.grid {
            Some(p) => GridField::load_csv(&self.resolve(p), self.dim()),
            None => Ok(BTreeMap::new()),
        }
    }

    fn fields<const N: usize>(&self, name: &str, src: Option<&Vec<String>>, default: [&str; N], grids: &BTreeMap<String, GridField>) -> Result<[ScalarField; N]> {
        let dim = self.dim();
        let strs: Vec<String> = match src {
            None => default.iter().map(|s| s.to_string()).collect(),
            Some(v) if v.len() == N => v.clone(),
            // 1D shorthand: only the first component
            Some(v) if dim == 1 && v.len() == 1 => {
                let mut out: Vec<String> = default.iter().map(|s| s.to_string()).collect();
                out[0] = v[0].clone();
                out
            }
            Some(v) => return Err(cfg_err(&format!("coefficients.{name}"), format!("expected {N} entries (got {})", v.len()))),
        };
        let mut out = Vec::with_capacity(N);
        for (k, s) in strs.iter().enumerate() {
            let field = format!("coefficients.{name}[{k}]");
            let f = if let Some(col) = s.strip_prefix('@') {
                ScalarField::Grid(grids.get(col).cloned().ok_or_else(|| cfg_err(&field, format!("no grid column named {col}")))?)
            } else {
                ScalarField::parse(s).map_err(|e| cfg_err(&field, e.to_string()))?
            };
            out.push(f);
        }
        Ok(out.try_into().unwrap_or_else(|_| unreachable!()))
    }

    pub fn coefficients(&self) -> Result<CoefficientSet> {
        let grids = self.grids()?;
        let c = &self.coefficients;
        let omega = self.container.kind();
        let a = self.fields("a", c.a.as_ref(), ["1", "0", "1"], &grids)?;
        let b = self.fields("b", c.b.as_ref(), ["0", "0"], &grids)?;
        if let Some(rho) = &c.manufactured {
            if c.g.is_some() || c.h.is_some() {
                return Err(cfg_err("coefficients.manufactured", "G and h are derived from the manufactured solution and must not be given"));
            }
            let rho = Expr::parse(rho).map_err(|e| cfg_err("coefficients.manufactured", e.to_string()))?;
            return CoefficientSet::manufactured(omega, &rho, a, b);
        }
        let g = self.fields("g", c.g.as_ref(), ["0", "0", "0"], &grids)?;
        let h = self.fields("h", c.h.as_ref(), ["0", "0"], &grids)?;
        let mut set = CoefficientSet::identity(omega);
        set.a = a;
        set.b = b;
        set.g = g;
        set.h = h;
        Ok(set)
    }

    pub fn boundary(&self) -> Result<BoundaryMeasure> {
        let d = self.domain.kind();
        let b = &self.boundary;
        let atoms: Vec<Atom> = b.atoms.iter().map(|a| Atom { param: a.param, weight: a.weight }).collect();
        let density = match (b.uniform, b.density.is_empty()) {
            (Some(_), false) => return Err(cfg_err("boundary.uniform", "give either uniform or density, not both")),
            (Some(c), true) => BoundaryMeasure::uniform(d, c).density,
            (None, false) => b.density.clone(),
            (None, true) => match d {
                DomainKind::Interval { .. } => vec![0.0, 0.0],
                DomainKind::Disk { .. } => Vec::new(),
            },
        };
        BoundaryMeasure::new(d, atoms, density).map_err(|e| cfg_err("boundary", e.to_string()))
    }

    pub fn problem(&self) -> Result<DirichletProblem> {
        DirichletProblem::new(self.domain()?, self.coefficients()?, self.boundary()?, self.p())
    }

    pub fn schedule(&self) -> Schedule {
        Schedule { n_start: self.solver.n_start, n_max: self.solver.n_max, tol: self.solver.tol, growth: self.solver.growth }
    }

    pub fn smoothing(&self, coeffs: &CoefficientSet) -> Smoothing {
        match self.solver.smoothing {
            SmoothingChoice::Exact => Smoothing::Exact,
            SmoothingChoice::Mollify => Smoothing::Mollify,
            SmoothingChoice::Auto if coeffs.is_smooth_closed_form() => Smoothing::Exact,
            SmoothingChoice::Auto => Smoothing::Mollify,
        }
    }

    pub fn solve_options(&self, coeffs: &CoefficientSet, exec: Exec) -> MeasureSolveOptions {
        MeasureSolveOptions {
            level: LevelOptions { smoothing: self.smoothing(coeffs), kind: self.solver.mollifier, p: self.p(), exec, ..Default::default() },
            solve: SolveOptions { exec, deterministic: self.deterministic, supg: self.solver.supg },
        }
    }

    pub fn quad(&self) -> QuadOptions {
        self.verify.quad.unwrap_or_default()
    }

    pub fn trace_options(&self, exec: Exec) -> TraceOptions {
        let d = TraceOptions::default();
        let t = &self.trace;
        TraceOptions {
            delta: t.delta,
            levels: t.levels.unwrap_or(d.levels),
            nodes: t.nodes.unwrap_or(d.nodes),
            tol: t.tol.unwrap_or(d.tol),
            kind: self.solver.mollifier,
            quad: self.quad(),
            bank_degree: self.verify.bank_degree,
            exec,
            ..d
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.chars().rev().take_while(|c| *c != '\n').count() + 1;
    (line, col)
}
