//! Smooth-coefficient Dirichlet solves in divergence form and the level
//! schedule for measure boundary data.
//!
//! With `b̃ = b − div A` and `r = div G − h`, the unknown satisfies
//! `div(A∇v − v b̃) = div r` with trace `η + κ`. It is discretised by
//! piecewise-linear Galerkin:
//! `∫ (A∇v − v b̃)·∇φ = ∫ r·∇φ` for interior hat functions `φ`.

use std::f64::consts::TAU;
use std::io::Write;
use std::sync::Arc;

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{sample_points, CoefficientSet, EllipticityCertificate};
use crate::geometry::{Cells, Domain, DomainKind, Mesh};
use crate::linalg::{dot, Point, Vec2};
use crate::measures::{bl_distance, kappa_at, mollify_measure, BoundaryMeasure};
use crate::mollify::{admissible_sequence, AdmissibleLevel, LevelDistances, LevelOptions, LevelSample};
use crate::par::{self, Exec};
use crate::quadrature::{gauss_legendre, QuadratureSet, TriangleRule};

/// `(D ⊂ Ω, A, b, G, h, η, p)`.
#[derive(Debug, Clone)]
pub struct DirichletProblem {
    pub domain: Domain,
    pub coeffs: CoefficientSet,
    pub eta: BoundaryMeasure,
    pub p: f64,
    pub certificate: Option<EllipticityCertificate>,
}

/// Default integrability exponent: 4 in 2D, 2.5 in 1D.
pub fn default_p(dim: usize) -> f64 {
    if dim == 1 {
        2.5
    } else {
        4.0
    }
}

impl DirichletProblem {
    pub fn new(domain: Domain, coeffs: CoefficientSet, eta: BoundaryMeasure, p: f64) -> Result<Self> {
        let dim = domain.dim();
        if !(p > dim as f64) {
            return Err(Error::Precondition(format!("p must exceed the dimension {dim} (got {p})")));
        }
        if !domain.gap.is_some_and(|g| g > 0.0) {
            return Err(Error::Precondition("the problem needs a container Ω with a positive gap".into()));
        }
        if coeffs.omega != domain.omega() {
            return Err(Error::Precondition("coefficients are defined on a different Ω than the container".into()));
        }
        if eta.domain != domain.kind {
            return Err(Error::Precondition("boundary measure lives on a different boundary".into()));
        }
        Ok(DirichletProblem { domain, coeffs, eta, p, certificate: None })
    }

    pub fn p_prime(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn with_data(&self, coeffs: CoefficientSet, eta: BoundaryMeasure) -> Result<Self> {
        DirichletProblem::new(self.domain.clone(), coeffs, eta, self.p)
    }

    /// Scales `(η, G, h)` by `λ`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        self.with_data(self.coeffs.scale_rhs(lambda), self.eta.scaled(lambda))
    }
}

/// Divergence-form data read from a level.
pub struct DivergenceFormData<'a> {
    pub level: &'a AdmissibleLevel,
    /// Largest mismatch between kernel-derivative `b̃` and `b − div A` by
    /// centred differences, over the sampled check points.
    pub identity_discrepancy: f64,
}

impl DivergenceFormData<'_> {
    pub fn sample(&self, x: Point) -> Result<LevelSample> {
        self.level.sample(x)
    }

    /// `b̃ = b − div A`
    pub fn drift(&self, x: Point) -> Result<Vec2> {
        Ok(self.level.sample(x)?.drift())
    }

    /// `r = div G − h`
    pub fn flux(&self, x: Point) -> Result<Vec2> {
        Ok(self.level.sample(x)?.flux())
    }
}

/// Builds the divergence-form data and checks `b̃` against centred
/// differences of `Aₙ` at 20 sampled interior points.
pub fn reformulate(level: &AdmissibleLevel) -> Result<DivergenceFormData<'_>> {
    let dim = level.dim;
    let region = level.region;
    let inner = match region {
        DomainKind::Interval { a, b } => {
            let m = 0.05 * (b - a);
            DomainKind::Interval { a: a + m, b: b - m }
        }
        DomainKind::Disk { center, radius } => DomainKind::Disk { center, radius: 0.95 * radius },
    };
    let step = 1e-4 * level.eps.min(region.diameter());
    let mut worst: f64 = 0.0;
    for x in sample_points(&inner, 20, 0x5eed) {
        let s = level.sample_direct(x)?;
        let mut fd = [0.0; 2];
        for j in 0..dim {
            let mut xp = x;
            let mut xm = x;
            xp[j] += step;
            xm[j] -= step;
            let (ap, am) = (level.sample_direct(xp)?.a, level.sample_direct(xm)?.a);
            let d = ap.minus(am).scaled(0.5 / step);
            // column j of ∂_j A contributes to every row i
            if j == 0 {
                fd[0] += d.xx;
                fd[1] += d.xy;
            } else {
                fd[0] += d.xy;
                fd[1] += d.yy;
            }
        }
        let b = s.b;
        let by_fd = [b[0] - fd[0], b[1] - if dim == 1 { 0.0 } else { fd[1] }];
        let tilde = s.drift();
        let scale = 1.0f64.max(fd[0].abs()).max(fd[1].abs());
        for k in 0..dim {
            worst = worst.max((tilde[k] - by_fd[k]).abs() / scale);
        }
    }
    Ok(DivergenceFormData { level, identity_discrepancy: worst })
}

/// Piecewise-linear field on a mesh.
#[derive(Debug, Clone)]
pub struct SolutionField {
    pub mesh: Arc<Mesh>,
    pub values: Vec<f64>,
}

impl SolutionField {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.vertices.len() {
            return Err(Error::Precondition(format!(
                "{} values for a mesh with {} vertices",
                values.len(),
                mesh.vertices.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!("nodal value {k} is not finite")));
        }
        Ok(SolutionField { mesh, values })
    }

    pub fn from_fn<F: Fn(Point) -> f64>(mesh: Arc<Mesh>, f: F) -> Result<Self> {
        let values = mesh.vertices.iter().map(|&x| f(x)).collect();
        Self::new(mesh, values)
    }

    fn interpolate(&self, cell: usize, l: [f64; 3]) -> f64 {
        let vs = self.mesh.cells.vertices_of(cell);
        vs.iter().zip(l).map(|(&v, li)| li * self.values[v]).sum()
    }

    /// Interpolated value, or `None` outside the mesh.
    pub fn eval(&self, x: Point) -> Option<f64> {
        self.mesh.locate(x).map(|(c, l)| self.interpolate(c, l))
    }

    /// Like [`Self::eval`], but points in the thin sliver between the
    /// polygon and the exact boundary are pulled radially onto the mesh.
    pub fn eval_near(&self, x: Point) -> Option<f64> {
        if let Some(v) = self.eval(x) {
            return Some(v);
        }
        let c = match self.mesh.domain {
            DomainKind::Disk { center, .. } => center,
            DomainKind::Interval { a, b } => [0.5 * (a + b), 0.0],
        };
        for k in 1..=8 {
            let t = 1.0 - self.mesh.h * self.mesh.h * 0.25 * k as f64;
            if let Some(v) = self.eval([c[0] + t * (x[0] - c[0]), c[1] + t * (x[1] - c[1])]) {
                return Some(v);
            }
        }
        None
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Degree-4 quadrature on triangles and boundary slivers, 4-point Gauss
    /// on segments.
    pub fn quadrature(&self) -> QuadratureSet {
        QuadratureSet::on_mesh_exact(&self.mesh, TriangleRule::Strang6, 4)
    }

    pub fn values_at(&self, quad: &QuadratureSet) -> Vec<f64> {
        let cells = quad.cells.as_ref().expect("mesh quadrature");
        cells.iter().map(|&(c, l)| self.interpolate(c, l)).collect()
    }

    /// `‖ϱ‖_{L^q}` with `q = ∞` giving the largest nodal magnitude.
    pub fn lq_norm(&self, q: f64) -> f64 {
        if q.is_infinite() {
            return self.values.iter().fold(0.0, |m, v| m.max(v.abs()));
        }
        let quad = self.quadrature();
        lq_of(&quad, &self.values_at(&quad), q)
    }

    /// `‖ϱ − f‖_{L^q}` for a pointwise reference.
    pub fn lq_error<F: Fn(Point) -> f64>(&self, f: F, q: f64) -> f64 {
        let quad = self.quadrature();
        let v = self.values_at(&quad);
        let d: Vec<f64> = v.iter().zip(&quad.points).map(|(a, &x)| a - f(x)).collect();
        lq_of(&quad, &d, q)
    }

    /// `‖ϱ − other‖_{L^q}` on a shared mesh.
    pub fn lq_distance(&self, other: &SolutionField, q: f64) -> Result<f64> {
        if self.mesh.signature() != other.mesh.signature() {
            return Err(Error::Precondition("solutions live on different meshes".into()));
        }
        let diff = SolutionField {
            mesh: self.mesh.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        };
        Ok(diff.lq_norm(q))
    }

    pub fn scaled_by(&self, lambda: f64) -> SolutionField {
        SolutionField { mesh: self.mesh.clone(), values: self.values.iter().map(|v| lambda * v).collect() }
    }

    /// `vertex id, x1, x2, rho` with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["vertex", "x1", "x2", "rho"])?;
        for (k, (x, v)) in self.mesh.vertices.iter().zip(&self.values).enumerate() {
            w.write_record([k.to_string(), fmt_f64(x[0]), fmt_f64(x[1]), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads values written by [`Self::write_csv`] onto `mesh`.
    pub fn read_csv(mesh: Arc<Mesh>, path: &std::path::Path) -> Result<SolutionField> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut values = vec![f64::NAN; mesh.vertices.len()];
        let mut seen = 0usize;
        for rec in rdr.records() {
            let rec = rec?;
            let bad = |m: &str| Error::Precondition(format!("solution file does not match the mesh: {m}"));
            let k: usize = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("vertex id"))?;
            let x1: f64 = rec.get(1).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("x1"))?;
            let x2: f64 = rec.get(2).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("x2"))?;
            let v: f64 = rec.get(3).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad("rho"))?;
            let Some(x) = mesh.vertices.get(k) else {
                return Err(bad(&format!("vertex {k} out of range")));
            };
            let tol = 1e-9 * (1.0 + mesh.domain.diameter());
            if (x[0] - x1).abs() > tol || (x[1] - x2).abs() > tol {
                return Err(bad(&format!("vertex {k} is at a different position")));
            }
            values[k] = v;
            seen += 1;
        }
        if seen != mesh.vertices.len() {
            return Err(Error::Precondition(format!(
                "solution file does not match the mesh: {seen} rows for {} vertices",
                mesh.vertices.len()
            )));
        }
        SolutionField::new(mesh, values)
    }
}

/// Shortest round-trip decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn lq_of(quad: &QuadratureSet, values: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        return values.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    let s: f64 = values.iter().zip(&quad.weights).map(|(v, w)| w * v.abs().powf(q)).sum();
    s.powf(1.0 / q)
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub exec: Exec,
    /// Serial accumulation in cell order for bit-reproducible output.
    pub deterministic: bool,
    /// Streamline-diffusion stabilisation on elements with Péclet number above 1.
    pub supg: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { exec: Exec::Parallel, deterministic: false, supg: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct SolveDiagnostics {
    pub unknowns: usize,
    pub nonzeros: usize,
    pub relative_residual: f64,
    pub condition_estimate: f64,
    pub refinement_steps: usize,
    pub stabilized_cells: usize,
    pub max_peclet: f64,
}

struct CellContribution {
    rows: [usize; 3],
    k: [[f64; 3]; 3],
    f: [f64; 3],
    nv: usize,
    stabilized: bool,
    peclet: f64,
}

fn cell_contribution(mesh: &Mesh, level: &AdmissibleLevel, c: usize, supg: bool, seg_rule: &[(f64, f64)]) -> Result<CellContribution> {
    let vs = mesh.cells.vertices_of(c);
    let nv = vs.len();
    let mut out = CellContribution { rows: [0; 3], k: [[0.0; 3]; 3], f: [0.0; 3], nv, stabilized: false, peclet: 0.0 };
    out.rows[..nv].copy_from_slice(vs);
    let p: Vec<Point> = vs.iter().map(|&v| mesh.vertices[v]).collect();
    // gradients of the hat functions and the quadrature rule on the cell
    let (grads, qp): (Vec<Vec2>, Vec<([f64; 3], f64)>) = match &mesh.cells {
        Cells::Segments(_) => {
            let len = p[1][0] - p[0][0];
            let g = vec![[-1.0 / len, 0.0], [1.0 / len, 0.0]];
            let q = seg_rule.iter().map(|&(t, w)| ([1.0 - t, t, 0.0], w * len.abs())).collect();
            (g, q)
        }
        Cells::Triangles(_) => {
            let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
            let g = vec![
                [(p[1][1] - p[2][1]) / det, (p[2][0] - p[1][0]) / det],
                [(p[2][1] - p[0][1]) / det, (p[0][0] - p[2][0]) / det],
                [(p[0][1] - p[1][1]) / det, (p[1][0] - p[0][0]) / det],
            ];
            let area = 0.5 * det.abs();
            let q = TriangleRule::Midpoint3.points().into_iter().map(|(l, w)| (l, w * area)).collect();
            (g, q)
        }
    };
    let h_cell = (0..nv).flat_map(|i| (i + 1..nv).map(move |j| (i, j))).fold(0.0f64, |m, (i, j)| {
        m.max(((p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2)).sqrt())
    });
    let samples: Vec<(Point, LevelSample, f64, [f64; 3])> = qp
        .iter()
        .map(|&(l, w)| {
            let x = [
                (0..nv).map(|i| l[i] * p[i][0]).sum::<f64>(),
                (0..nv).map(|i| l[i] * p[i][1]).sum::<f64>(),
            ];
            level.sample(x).map(|s| (x, s, w, l))
        })
        .collect::<Result<_>>()?;
    // element Péclet number from the centroid-averaged drift and the smallest eigenvalue
    let mut tau = 0.0;
    if supg {
        let mut bt = [0.0; 2];
        let mut lam = f64::INFINITY;
        let wsum: f64 = samples.iter().map(|s| s.2).sum();
        for (_, s, w, _) in &samples {
            let d = s.drift();
            bt[0] += w * d[0] / wsum;
            bt[1] += w * d[1] / wsum;
            lam = lam.min(s.a.eigenvalues(level.dim).0);
        }
        let bn = bt[0].hypot(bt[1]);
        if bn > 0.0 && lam > 0.0 {
            let pe = bn * h_cell / (2.0 * lam);
            out.peclet = pe;
            if pe > 1.0 {
                tau = h_cell / (2.0 * bn) * (1.0 / pe.tanh() - 1.0 / pe);
                out.stabilized = true;
            }
        }
    }
    for (_, s, w, l) in &samples {
        let bt = s.drift();
        let r = s.flux();
        for i in 0..nv {
            let ag_i = grads[i];
            let stream_i = dot(bt, grads[i]);
            for j in 0..nv {
                let a_gj = s.a.mul_vec(grads[j]);
                let mut kij = dot(a_gj, ag_i) - l[j] * dot(bt, ag_i);
                if tau > 0.0 {
                    let lphi = -dot(s.div_a, grads[j]) + dot(bt, grads[j]) + s.div_drift() * l[j];
                    kij += tau * lphi * stream_i;
                }
                out.k[i][j] += w * kij;
            }
            let mut fi = dot(r, ag_i);
            if tau > 0.0 {
                fi -= tau * s.div_flux() * stream_i;
            }
            out.f[i] += w * fi;
        }
    }
    if out.k.iter().flatten().chain(&out.f).any(|v| !v.is_finite()) {
        return Err(Error::Assembly(format!("cell {c}")));
    }
    Ok(out)
}

/// Compressed-row matrix for residual evaluation.
struct Csr {
    ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.ptr.len() - 1)
            .map(|i| (self.ptr[i]..self.ptr[i + 1]).map(|k| self.val[k] * x[self.col[k]]).sum())
            .collect()
    }

    fn inf_norm(&self) -> f64 {
        (0..self.ptr.len() - 1)
            .map(|i| (self.ptr[i]..self.ptr[i + 1]).map(|k| self.val[k].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Galerkin solve with Dirichlet values `trace` at boundary vertices
/// (entries at interior vertices are ignored).
pub fn solve_smooth(mesh: &Arc<Mesh>, level: &AdmissibleLevel, trace: &[f64], opts: &SolveOptions) -> Result<(SolutionField, SolveDiagnostics)> {
    if trace.len() != mesh.vertices.len() {
        return Err(Error::Precondition("trace must have one entry per mesh vertex".into()));
    }
    let nvert = mesh.vertices.len();
    let mut index = vec![usize::MAX; nvert];
    let mut n = 0usize;
    for v in 0..nvert {
        if !mesh.boundary[v] {
            index[v] = n;
            n += 1;
        } else if !trace[v].is_finite() {
            return Err(Error::Precondition(format!("boundary value at vertex {v} is not finite")));
        }
    }
    let (x_seg, w_seg) = gauss_legendre(3);
    let seg_rule: Vec<(f64, f64)> = x_seg.iter().zip(&w_seg).map(|(x, w)| (0.5 * (1.0 + x), 0.5 * w)).collect();
    let ncell = mesh.cells.len();
    let contribs: Vec<Result<CellContribution>> = if opts.deterministic || !opts.exec.is_parallel() {
        (0..ncell).map(|c| cell_contribution(mesh, level, c, opts.supg, &seg_rule)).collect()
    } else {
        par::flat_map_unordered(opts.exec, ncell, |c, acc| acc.push(cell_contribution(mesh, level, c, opts.supg, &seg_rule)))
    };
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(9 * ncell);
    let mut rhs = vec![0.0; n];
    let mut diag = SolveDiagnostics::default();
    for c in contribs {
        let c = c?;
        diag.stabilized_cells += c.stabilized as usize;
        diag.max_peclet = diag.max_peclet.max(c.peclet);
        for i in 0..c.nv {
            let gi = index[c.rows[i]];
            if gi == usize::MAX {
                continue;
            }
            rhs[gi] += c.f[i];
            for j in 0..c.nv {
                let vj = c.rows[j];
                let gj = index[vj];
                if gj == usize::MAX {
                    rhs[gi] -= c.k[i][j] * trace[vj];
                } else {
                    trip.push((gi, gj, c.k[i][j]));
                }
            }
        }
    }
    let mut values: Vec<f64> = (0..nvert).map(|v| if mesh.boundary[v] { trace[v] } else { 0.0 }).collect();
    if n == 0 {
        return Ok((SolutionField::new(mesh.clone(), values)?, diag));
    }
    trip.sort_by_key(|t| (t.0, t.1));
    let mut csr = Csr { ptr: vec![0; n + 1], col: Vec::with_capacity(trip.len()), val: Vec::with_capacity(trip.len()) };
    let mut last = None;
    for &(i, j, v) in &trip {
        if last == Some((i, j)) {
            *csr.val.last_mut().unwrap() += v;
        } else {
            csr.col.push(j);
            csr.val.push(v);
            last = Some((i, j));
        }
        csr.ptr[i + 1] = csr.col.len();
    }
    for i in 0..n {
        csr.ptr[i + 1] = csr.ptr[i + 1].max(csr.ptr[i]);
    }
    diag.unknowns = n;
    diag.nonzeros = csr.val.len();
    let triplets: Vec<Triplet<usize, usize, f64>> = (0..n)
        .flat_map(|i| (csr.ptr[i]..csr.ptr[i + 1]).map(move |k| (i, k)))
        .map(|(i, k)| Triplet::new(i, csr.col[k], csr.val[k]))
        .collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::Solver { message: format!("{e:?}"), condition: f64::NAN })?;
    let lu = mat
        .sp_lu()
        .map_err(|e| Error::Solver { message: format!("factorisation failed: {e:?}"), condition: f64::INFINITY })?;
    let solve = |b: &[f64]| -> Vec<f64> {
        let col = Col::<f64>::from_fn(n, |i| b[i]);
        let x = lu.solve(&col);
        (0..n).map(|i| x[i]).collect()
    };
    let mut x = solve(&rhs);
    let fnorm = inf_norm(&rhs).max(f64::MIN_POSITIVE);
    let knorm = csr.inf_norm();
    let residual = |x: &[f64]| -> Vec<f64> { csr.mul(x).iter().zip(&rhs).map(|(a, b)| b - a).collect() };
    let mut res = residual(&x);
    for _ in 0..3 {
        if inf_norm(&res) <= 1e-12 * knorm * inf_norm(&x) + 1e-300 || x.iter().any(|v| !v.is_finite()) {
            break;
        }
        let dx = solve(&res);
        for (a, d) in x.iter_mut().zip(&dx) {
            *a += d;
        }
        res = residual(&x);
        diag.refinement_steps += 1;
    }
    let cond = if inf_norm(&rhs) > 0.0 { knorm * inf_norm(&x) / fnorm } else { f64::NAN };
    diag.condition_estimate = cond;
    let scale = (knorm * inf_norm(&x)).max(inf_norm(&rhs));
    diag.relative_residual = if scale > 0.0 { inf_norm(&res) / scale } else { 0.0 };
    if x.iter().any(|v| !v.is_finite()) || diag.relative_residual > 1e-10 {
        return Err(Error::Solver {
            message: format!("system is singular or ill-conditioned (relative residual {:e})", diag.relative_residual),
            condition: cond,
        });
    }
    for v in 0..nvert {
        if index[v] != usize::MAX {
            values[v] = x[index[v]];
        }
    }
    Ok((SolutionField::new(mesh.clone(), values)?, diag))
}

/// Boundary vertices of a disk mesh sorted by angle, with their angles.
fn boundary_ring(mesh: &Mesh) -> Vec<(usize, f64)> {
    let DomainKind::Disk { center, .. } = mesh.domain else {
        return mesh.boundary_vertices().into_iter().map(|v| (v, mesh.vertices[v][0])).collect();
    };
    let mut ring: Vec<(usize, f64)> = mesh
        .boundary_vertices()
        .into_iter()
        .map(|v| {
            let d = [mesh.vertices[v][0] - center[0], mesh.vertices[v][1] - center[1]];
            (v, d[1].atan2(d[0]).rem_euclid(TAU))
        })
        .collect();
    ring.sort_by(|a, b| a.1.total_cmp(&b.1));
    ring
}

/// Lumped `L²` projection of a piecewise-linear boundary density onto the
/// boundary hat functions of the mesh: `g_j = ∫ η φ_j / ∫ φ_j`. Atoms are
/// split between the two nearest boundary vertices.
pub fn project_boundary_density(mesh: &Mesh, eta: &BoundaryMeasure) -> Vec<f64> {
    let mut g = vec![0.0; mesh.vertices.len()];
    match mesh.domain {
        DomainKind::Interval { .. } => {
            let m = eta.endpoint_masses();
            let bv = mesh.boundary_vertices();
            g[bv[0]] = m[0];
            g[bv[bv.len() - 1]] = m[1];
        }
        DomainKind::Disk { radius, .. } => {
            let ring = boundary_ring(mesh);
            let nb = ring.len();
            let dt = TAU / nb as f64;
            let mut num = vec![0.0; nb];
            let rule = gauss_on_unit(3);
            // integrate η·φ_j over the two segments adjacent to vertex j, using
            // the density breakpoints inside each segment
            let m = eta.density.len();
            for j in 0..nb {
                let mut s = 0.0;
                for side in [-1.0, 1.0] {
                    let (a, b) = if side < 0.0 { (j as f64 * dt - dt, j as f64 * dt) } else { (j as f64 * dt, j as f64 * dt + dt) };
                    let mut cuts = vec![a, b];
                    if m > 0 {
                        let dd = TAU / m as f64;
                        let k0 = (a / dd).ceil() as i64;
                        let k1 = (b / dd).floor() as i64;
                        for k in k0..=k1 {
                            cuts.push(k as f64 * dd);
                        }
                    }
                    cuts.sort_by(f64::total_cmp);
                    cuts.dedup();
                    for win in cuts.windows(2) {
                        let (u, v) = (win[0], win[1]);
                        for &(t, w) in &rule {
                            let sp = u + t * (v - u);
                            let hat = 1.0 - ((sp - j as f64 * dt).abs() / dt);
                            s += w * (v - u) * radius * eta.density_at(sp) * hat;
                        }
                    }
                }
                num[j] = s;
            }
            for at in &eta.atoms {
                let u = at.param.rem_euclid(TAU) / dt;
                let k = (u.floor() as usize).min(nb - 1);
                let t = u - k as f64;
                num[k] += at.weight * (1.0 - t);
                num[(k + 1) % nb] += at.weight * t;
            }
            for (j, &(v, _)) in ring.iter().enumerate() {
                g[v] = num[j] / (dt * radius);
            }
        }
    }
    g
}

fn gauss_on_unit(n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    x.iter().zip(&w).map(|(x, w)| (0.5 * (1.0 + x), 0.5 * w)).collect()
}

/// The lumped boundary datum seen by the mesh, as a measure with one atom
/// per boundary vertex. Used to measure how much the discrete boundary
/// condition still moves between levels.
pub fn discrete_boundary_measure(mesh: &Mesh, g: &[f64]) -> BoundaryMeasure {
    match mesh.domain {
        DomainKind::Interval { .. } => {
            let bv = mesh.boundary_vertices();
            BoundaryMeasure { domain: mesh.domain, atoms: Vec::new(), density: vec![g[bv[0]], g[bv[bv.len() - 1]]] }
        }
        DomainKind::Disk { .. } => {
            let ring = boundary_ring(mesh);
            BoundaryMeasure { domain: mesh.domain, atoms: Vec::new(), density: ring.iter().map(|&(v, _)| g[v]).collect() }
        }
    }
}

/// Level schedule `n_start, ⌈growth·n⌉, …, n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub n_start: usize,
    pub n_max: usize,
    pub tol: f64,
    pub growth: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { n_start: 4, n_max: 64, tol: 1e-4, growth: 2.0 }
    }
}

impl Schedule {
    pub fn levels(&self) -> Result<Vec<usize>> {
        if self.n_start == 0 || self.n_max < self.n_start {
            return Err(Error::Precondition(format!(
                "schedule needs 1 ≤ n_start ≤ n_max (got {} and {})",
                self.n_start, self.n_max
            )));
        }
        if !(self.growth > 1.0) || !(self.tol > 0.0) {
            return Err(Error::Precondition("schedule growth must exceed 1 and tol be positive".into()));
        }
        let mut out = vec![self.n_start];
        while *out.last().unwrap() < self.n_max {
            let last = *out.last().unwrap();
            let next = ((last as f64 * self.growth).ceil() as usize).max(last + 1).min(self.n_max);
            out.push(next);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceMode {
    /// `ηₙσ → η` in variation; stop on the `L^{p′}` increment.
    Norm,
    /// Atomic data: only weak convergence of `ηₙσ`. Stop when the increment
    /// is below tolerance and the discrete boundary datum has stagnated.
    WeakOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub n: usize,
    pub eps: f64,
    pub norm_lp_prime: f64,
    pub increment: Option<f64>,
    pub coefficient_distances: LevelDistances,
    pub eta_total_variation: f64,
    /// `bl(ηₙσ, η)`
    pub eta_bl_distance: f64,
    /// `bl` between consecutive discrete boundary data on the mesh.
    pub boundary_bl_increment: Option<f64>,
    pub identity_discrepancy: f64,
    pub solve: SolveDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub mode: ConvergenceMode,
    pub converged: bool,
    pub warning: Option<String>,
    pub p: f64,
    pub p_prime: f64,
    pub mesh_size: f64,
    pub vertices: usize,
    pub tol: f64,
    pub levels: Vec<LevelRecord>,
}

impl ConvergenceReport {
    pub fn last_increment(&self) -> Option<f64> {
        self.levels.last().and_then(|l| l.increment)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MeasureSolveOptions {
    pub level: LevelOptions,
    pub solve: SolveOptions,
}

/// Boundary values `ηₙ + κₙ` at the boundary vertices of `mesh`, and the
/// mollified measure `ηₙσ`.
pub fn level_trace(mesh: &Mesh, level: &AdmissibleLevel, eta: &BoundaryMeasure) -> Result<(Vec<f64>, BoundaryMeasure)> {
    let eta_n = match eta.domain {
        DomainKind::Interval { .. } => eta.clone(),
        DomainKind::Disk { radius, .. } => {
            let nb = mesh.boundary_vertices().len();
            let base = eta.density.len().max(1);
            let l = lcm(nb, base);
            let eps_angle = level.eps / radius;
            let m_min = ((8.0 * std::f64::consts::PI / eps_angle).ceil() as usize).max(nb);
            mollify_measure(eta, eps_angle, level.kind, l * m_min.div_ceil(l))?
        }
    };
    let mut g = project_boundary_density(mesh, &eta_n);
    for v in mesh.boundary_vertices() {
        let x = mesh.vertices[v];
        let nu = crate::geometry::outward_normal(&mesh.domain, x);
        g[v] += kappa_at(level, x, nu)?;
    }
    Ok((g, eta_n))
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

/// One level `n` of the scheme on `mesh`, without the schedule.
pub fn solve_level(problem: &DirichletProblem, mesh: &Arc<Mesh>, n: usize, opts: &MeasureSolveOptions) -> Result<(SolutionField, SolveDiagnostics)> {
    let mut lopts = opts.level;
    lopts.p = problem.p;
    let level = admissible_sequence(&problem.coeffs, &problem.domain, n, &lopts)?;
    let (g, _) = level_trace(mesh, &level, &problem.eta)?;
    solve_smooth(mesh, &level, &g, &opts.solve)
}

/// Runs the level schedule on a fixed mesh of size `h`.
pub fn solve_measure(problem: &DirichletProblem, h: f64, schedule: &Schedule, opts: &MeasureSolveOptions) -> Result<(SolutionField, ConvergenceReport)> {
    let mesh = Arc::new(crate::geometry::mesh_domain(&problem.domain.kind, h)?);
    solve_measure_on(problem, &mesh, schedule, opts)
}

pub fn solve_measure_on(problem: &DirichletProblem, mesh: &Arc<Mesh>, schedule: &Schedule, opts: &MeasureSolveOptions) -> Result<(SolutionField, ConvergenceReport)> {
    let levels = schedule.levels()?;
    let pp = problem.p_prime();
    let mode = if problem.eta.has_atoms() && problem.domain.dim() == 2 { ConvergenceMode::WeakOnly } else { ConvergenceMode::Norm };
    let mut report = ConvergenceReport {
        mode,
        converged: false,
        warning: None,
        p: problem.p,
        p_prime: pp,
        mesh_size: mesh.h,
        vertices: mesh.vertices.len(),
        tol: schedule.tol,
        levels: Vec::new(),
    };
    let mut prev: Option<(SolutionField, BoundaryMeasure)> = None;
    let mut lopts = opts.level;
    lopts.p = problem.p;
    for &n in &levels {
        let level = admissible_sequence(&problem.coeffs, &problem.domain, n, &lopts)?;
        let data = reformulate(&level)?;
        let (g, eta_n) = level_trace(mesh, &level, &problem.eta)?;
        let (sol, diag) = solve_smooth(mesh, &level, &g, &opts.solve)?;
        let discrete = discrete_boundary_measure(mesh, &g);
        let (increment, bl_inc) = match &prev {
            Some((p, d)) => (Some(sol.lq_distance(p, pp)?), Some(bl_distance(&discrete, d))),
            None => (None, None),
        };
        report.levels.push(LevelRecord {
            n,
            eps: level.eps,
            norm_lp_prime: sol.lq_norm(pp),
            increment,
            coefficient_distances: level.distances,
            eta_total_variation: eta_n.total_variation(),
            eta_bl_distance: bl_distance(&eta_n, &problem.eta),
            boundary_bl_increment: bl_inc,
            identity_discrepancy: data.identity_discrepancy,
            solve: diag,
        });
        let done = match (mode, increment, bl_inc) {
            (ConvergenceMode::Norm, Some(d), _) => d < schedule.tol,
            (ConvergenceMode::WeakOnly, Some(d), Some(b)) => d < schedule.tol && b < schedule.tol,
            _ => false,
        };
        prev = Some((sol, discrete));
        if done {
            report.converged = true;
            break;
        }
    }
    let incs: Vec<f64> = report.levels.iter().filter_map(|l| l.increment).collect();
    if incs.len() >= 3 && incs.windows(2).rev().take(2).all(|w| w[1] >= w[0]) && !report.converged {
        report.warning = Some("Cauchy increments did not decrease over the last 3 levels".into());
    } else if !report.converged {
        report.warning = Some(format!("schedule ended at n = {} before the increment fell below {}", levels.last().unwrap(), schedule.tol));
    }
    let (sol, _) = prev.expect("at least one level");
    Ok((sol, report))
}
