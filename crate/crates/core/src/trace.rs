//! Boundary traces of solutions given on a neighbourhood of `D̄`, obtained
//! by mollifying and restricting to `∂D`, together with the uniform mass
//! bound that makes the family of trace measures tight.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::Coefficients;
use crate::geometry::{boundary_grid, make_domain, mesh_domain, BoundaryGrid, Domain, DomainKind};
use crate::linalg::{Point, Sym2};
use crate::measures::{bl_distance, kappa_at, BoundaryMeasure};
use crate::mollify::{make_mollifier, MollifierKind};
use crate::par::{self, Exec};
use crate::quadrature::{gauss_on, QuadratureSet, TriangleRule};
use crate::solver::fmt_f64;
use crate::weakform::{dirichlet_residual, test_bank, Density, QuadOptions, ResidualReport, DEFAULT_BANK_DEGREE};

/// Values above this are treated as a sign of an unbounded density.
const UNBOUNDED: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    /// `δ`, with `D_{4δ} ⊂ Ω`. Defaults to a quarter of the gap.
    pub delta: Option<f64>,
    /// Schedule `ε = δ/2^k`, `k = 1..=levels`.
    pub levels: usize,
    /// Boundary nodes on a circle.
    pub nodes: usize,
    /// Stagnation tolerance on consecutive `bl` distances.
    pub tol: f64,
    pub kind: MollifierKind,
    /// Gauss points across the kernel radius.
    pub radial: usize,
    /// Angular points per radius of the kernel ball.
    pub angular: usize,
    pub quad: QuadOptions,
    pub bank_degree: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            delta: None,
            levels: 6,
            nodes: 256,
            tol: 1e-3,
            kind: MollifierKind::StandardBump,
            radial: 16,
            angular: 64,
            quad: QuadOptions::default(),
            bank_degree: DEFAULT_BANK_DEGREE,
            exec: Exec::Parallel,
        }
    }
}

/// `(weights, offsets)` of the normalised discrete kernel `ψ_ε`.
fn kernel_rule(kind: MollifierKind, eps: f64, dim: usize, radial: usize, angular: usize) -> Result<Vec<(f64, [f64; 2])>> {
    let m = make_mollifier(kind, eps, dim)?;
    let mut rule = Vec::new();
    if dim == 1 {
        for (lo, hi) in [(-eps, 0.0), (0.0, eps)] {
            for (z, w) in gauss_on(lo, hi, radial) {
                rule.push((w * m.value([z, 0.0]), [z, 0.0]));
            }
        }
    } else {
        let dt = std::f64::consts::TAU / angular as f64;
        for (r, w) in gauss_on(0.0, eps, radial) {
            let k = m.value([r, 0.0]);
            for j in 0..angular {
                let t = (j as f64 + 0.5) * dt;
                rule.push((w * r * dt * k, [r * t.cos(), r * t.sin()]));
            }
        }
    }
    let total: f64 = rule.iter().map(|r| r.0).sum();
    for r in &mut rule {
        r.0 /= total;
    }
    Ok(rule)
}

/// `(ϱ_ε, (Aϱ)_ε)` at each point.
fn convolve_points<C: Coefficients + ?Sized>(
    rho: &dyn Density,
    coeffs: Option<&C>,
    points: &[Point],
    rule: &[(f64, [f64; 2])],
    exec: Exec,
) -> Result<Vec<(f64, Sym2)>> {
    par::map_slice(exec, points, |x| -> Result<(f64, Sym2)> {
        let mut v = 0.0;
        let mut av = Sym2::ZERO;
        for (w, z) in rule {
            let y = [x[0] - z[0], x[1] - z[1]];
            let r = rho.value(y)?;
            v += w * r;
            if let Some(c) = coeffs {
                av = av.plus(c.a(y)?.scaled(w * r));
            }
        }
        Ok((v, av))
    })
    .into_iter()
    .collect()
}

/// `ϱ_ε` at the nodes of `grid`, with `ε` below the gap between `∂D` and `∂Ω`.
pub fn boundary_convolution(rho: &dyn Density, domain: &Domain, eps: f64, grid: &BoundaryGrid, opts: &TraceOptions) -> Result<Vec<f64>> {
    let gap = domain.gap.unwrap_or(0.0);
    if !(eps > 0.0 && eps < gap) {
        return Err(Error::Precondition(format!("ε = {eps} must lie in (0, δ) with δ = {gap} the gap between ∂D and ∂Ω")));
    }
    let rule = kernel_rule(opts.kind, eps, domain.dim(), opts.radial, opts.angular)?;
    Ok(convolve_points::<crate::fields::CoefficientSet>(rho, None, &grid.nodes, &rule, opts.exec)?.into_iter().map(|v| v.0).collect())
}

/// `C` from the mass bound with its three summands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProofConstant {
    pub delta: f64,
    pub theta: f64,
    /// `sup|φ| + sup|∇φ| + sup‖D²φ‖` on `D̄` for the quadratic bubble.
    pub phi_c2: f64,
    pub solution_term: f64,
    pub data_term: f64,
    pub boundary_term: f64,
    pub total: f64,
}

/// `δ`-neighbourhood of `D`.
pub fn neighbourhood(d: &DomainKind, delta: f64) -> DomainKind {
    d.offset(delta)
}

fn check_delta(domain: &Domain, delta: f64) -> Result<()> {
    let gap = domain.gap.unwrap_or(0.0);
    if !(delta > 0.0) || 4.0 * delta > gap * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("δ = {delta} must satisfy 0 < 4δ ≤ gap = {gap}")));
    }
    Ok(())
}

/// `‖φ‖_{C²(D̄)}` for `φ = (|x − c|²/R² − 1)·R/2`.
pub fn bubble_c2_norm(d: &DomainKind) -> f64 {
    let r = match *d {
        DomainKind::Interval { a, b } => 0.5 * (b - a),
        DomainKind::Disk { radius, .. } => radius,
    };
    0.5 * r + 1.0 + 1.0 / r
}

pub fn proof_constant<C: Coefficients + ?Sized>(rho: &dyn Density, coeffs: &C, domain: &Domain, delta: f64, q: &QuadOptions, exec: Exec) -> Result<ProofConstant> {
    check_delta(domain, delta)?;
    let dim = domain.dim();
    let region = neighbourhood(&domain.kind, 3.0 * delta);
    let (quad, values) = rho.samples(&region, q, exec)?;
    if let Some(k) = values.iter().position(|&v| v < 0.0) {
        return Err(Error::NegativeDensity(format!(
            "ϱ = {} at {:?}; use the signed bounded path for sign-changing solutions",
            values[k], quad.points[k]
        )));
    }
    let terms: Vec<Result<(f64, f64, f64, f64)>> = par::map_range(exec, quad.len(), |k| {
        let x = quad.points[k];
        let a = coeffs.a(x)?;
        let b = coeffs.b(x)?;
        let g = coeffs.g(x)?;
        let h = coeffs.h(x)?;
        let bn = if dim == 1 { b[0].abs() } else { b[0].hypot(b[1]) };
        let hn = if dim == 1 { h[0].abs() } else { h[0].hypot(h[1]) };
        let w = quad.weights[k];
        Ok((
            w * (dim as f64 * a.spectral_norm(dim) + bn) * values[k],
            w * (dim as f64 * g.spectral_norm(dim) + hn),
            g.spectral_norm(dim),
            a.eigenvalues(dim).0,
        ))
    });
    let (mut s1, mut s2, mut gsup, mut theta) = (0.0, 0.0, 0.0f64, f64::INFINITY);
    for t in terms {
        let (a, b, g, l) = t?;
        s1 += a;
        s2 += b;
        gsup = gsup.max(g);
        theta = theta.min(l);
    }
    if !(theta > 0.0) {
        return Err(Error::Ellipticity { point: domain.kind.bounding_box().0, lambda_min: theta });
    }
    let phi = bubble_c2_norm(&domain.kind);
    let solution_term = phi * s1 / theta;
    let data_term = phi * s2 / theta;
    let boundary_term = domain.kind.boundary_measure() * gsup / theta;
    Ok(ProofConstant {
        delta,
        theta,
        phi_c2: phi,
        solution_term,
        data_term,
        boundary_term,
        total: solution_term + data_term + boundary_term,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLevel {
    pub eps: f64,
    /// `∫_{∂D} ϱ_ε dσ`
    pub mass: f64,
    pub density: Vec<f64>,
    /// `bl` distance to the previous level's trace measure.
    pub bl_increment: Option<f64>,
    /// `max ‖(Aϱ)_ε − Aϱ_ε‖ / ϱ_ε` over nodes with `ϱ_ε > 0`.
    pub commutation_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDiagnostics {
    pub delta: f64,
    pub params: Vec<f64>,
    pub nodes: Vec<Point>,
    pub levels: Vec<TraceLevel>,
    pub signed: bool,
    /// `sup |ϱ|` over the sampled `D_{3δ}`.
    pub sup_abs: f64,
    pub proof_constant: Option<ProofConstant>,
    pub mass_bound_violations: usize,
    pub converged: bool,
    pub warning: Option<String>,
    pub kappa: Vec<f64>,
    /// `η̃`: the last-level trace measure.
    pub eta_tilde: BoundaryMeasure,
    /// `η = η̃ − κσ`
    pub eta: BoundaryMeasure,
    pub residual: Option<ResidualReport>,
}

impl TraceDiagnostics {
    /// `node, param, x1, x2, eta_tilde, kappa, eta` per boundary node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "param", "x1", "x2", "eta_tilde", "kappa", "eta"])?;
        let last = self.levels.last().map(|l| l.density.as_slice()).unwrap_or(&[]);
        for k in 0..self.nodes.len() {
            w.write_record([
                k.to_string(),
                fmt_f64(self.params[k]),
                fmt_f64(self.nodes[k][0]),
                fmt_f64(self.nodes[k][1]),
                fmt_f64(last[k]),
                fmt_f64(self.kappa[k]),
                fmt_f64(last[k] - self.kappa[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn measure_from_nodes(d: &DomainKind, values: Vec<f64>) -> Result<BoundaryMeasure> {
    BoundaryMeasure::new(*d, Vec::new(), values)
}

fn trace_grid(d: &DomainKind, nodes: usize) -> Result<BoundaryGrid> {
    match d {
        DomainKind::Interval { .. } => boundary_grid(d, 2),
        DomainKind::Disk { .. } => boundary_grid(d, nodes),
    }
}

struct Sampled {
    signed: bool,
    sup_abs: f64,
}

fn inspect(rho: &dyn Density, region: &DomainKind, boundary: &[Point], q: &QuadOptions, exec: Exec) -> Result<Sampled> {
    // evaluate pointwise so that non-finite values are seen rather than rejected;
    // the boundary nodes catch singularities sitting on ∂D
    let mut points = q.rule(region).points;
    points.extend_from_slice(boundary);
    let values: Vec<f64> = par::map_slice(exec, &points, |&x| rho.value(x).unwrap_or(f64::NAN));
    let signed = values.iter().any(|&v| v < 0.0);
    let unbounded = values.iter().any(|v| !v.is_finite() || v.abs() > UNBOUNDED);
    if signed && unbounded {
        return Err(Error::SignedUnbounded);
    }
    if unbounded {
        return Err(Error::Evaluation("density is not finite near ∂D".into()));
    }
    Ok(Sampled { signed, sup_abs: values.iter().fold(0.0, |m, v| m.max(v.abs())) })
}

/// Trace measures `ϱ_ε σ` along `ε = δ/2^k`; `η̃` is the last one and
/// `η = η̃ − κσ`. The Dirichlet residual of `(ϱ, η)` is the end-to-end check.
pub fn trace_limit<C: Coefficients + ?Sized>(rho: &dyn Density, coeffs: &C, domain: &Domain, opts: &TraceOptions) -> Result<TraceDiagnostics> {
    let gap = domain.gap.unwrap_or(0.0);
    let delta = opts.delta.unwrap_or(0.25 * gap);
    check_delta(domain, delta)?;
    if opts.levels == 0 {
        return Err(Error::Precondition("trace schedule needs at least one level".into()));
    }
    let dim = domain.dim();
    let region = neighbourhood(&domain.kind, 3.0 * delta);
    let grid = trace_grid(&domain.kind, opts.nodes)?;
    let sampled = inspect(rho, &region, &grid.nodes, &opts.quad, opts.exec)?;
    let pc = if sampled.signed { None } else { Some(proof_constant(rho, coeffs, domain, delta, &opts.quad, opts.exec)?) };
    let kappa: Vec<f64> = grid.nodes.iter().zip(&grid.normals).map(|(x, n)| kappa_at(coeffs, *x, *n)).collect::<Result<_>>()?;
    let mut levels: Vec<TraceLevel> = Vec::with_capacity(opts.levels);
    let mut prev: Option<BoundaryMeasure> = None;
    for k in 1..=opts.levels {
        let eps = delta / 2f64.powi(k as i32);
        let rule = kernel_rule(opts.kind, eps, dim, opts.radial, opts.angular)?;
        let conv = convolve_points(rho, Some(coeffs), &grid.nodes, &rule, opts.exec)?;
        let density: Vec<f64> = conv.iter().map(|c| c.0).collect();
        let mut ratio: f64 = 0.0;
        for (x, (v, av)) in grid.nodes.iter().zip(&conv) {
            if *v > 0.0 {
                let d = av.minus(coeffs.a(*x)?.scaled(*v));
                ratio = ratio.max(d.spectral_norm(dim) / v);
            }
        }
        let mass: f64 = density.iter().zip(&grid.weights).map(|(v, w)| v * w).sum();
        let m = measure_from_nodes(&domain.kind, density.clone())?;
        let inc = prev.as_ref().map(|p| bl_distance(&m, p));
        levels.push(TraceLevel { eps, mass, density, bl_increment: inc, commutation_ratio: ratio });
        prev = Some(m);
    }
    let violations = match &pc {
        Some(c) => levels.iter().filter(|l| l.mass > c.total + 1e-6).count(),
        None => 0,
    };
    let incs: Vec<f64> = levels.iter().filter_map(|l| l.bl_increment).collect();
    let converged = incs.last().is_some_and(|&d| d < opts.tol);
    let mut warning = None;
    if incs.len() >= 2 && incs.windows(2).all(|w| w[1] >= w[0]) {
        warning = Some("bl distances between consecutive trace measures did not decrease".into());
    } else if !converged {
        warning = Some(format!("trace measures did not stagnate below {}", opts.tol));
    }
    let last = levels.last().unwrap();
    let eta_tilde = measure_from_nodes(&domain.kind, last.density.clone())?;
    let eta = measure_from_nodes(&domain.kind, last.density.iter().zip(&kappa).map(|(v, k)| v - k).collect())?;
    let residual = if opts.bank_degree > 0 {
        let bank = test_bank(&domain.kind, opts.bank_degree)?;
        Some(dirichlet_residual(rho, coeffs, &eta, &bank, &opts.quad, opts.exec)?)
    } else {
        None
    };
    Ok(TraceDiagnostics {
        delta,
        params: grid.params.clone(),
        nodes: grid.nodes.clone(),
        levels,
        signed: sampled.signed,
        sup_abs: sampled.sup_abs,
        proof_constant: pc,
        mass_bound_violations: violations,
        converged,
        warning,
        kappa,
        eta_tilde,
        eta,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FubiniCheck {
    pub radius: f64,
    /// `∫₀^R ∫_{∂B_r} fϱ dσ dr`
    pub polar: f64,
    /// `∫_{B_R} fϱ dx` on a triangulation of the ball.
    pub cartesian: f64,
    pub relative_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusSample {
    pub radius: f64,
    pub eps: f64,
    /// `bl(η̃_R, ϱσ_R)`
    pub discrepancy: f64,
    pub converged: bool,
    pub fubini: FubiniCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusSweep {
    pub center: Point,
    pub samples: Vec<RadiusSample>,
    pub median_discrepancy: f64,
    pub max_fubini_difference: f64,
}

/// Test weight for the polar/cartesian comparison.
fn fubini_weight(x: Point, c: Point) -> f64 {
    1.0 + 0.5 * (x[0] - c[0]) - 0.25 * (x[1] - c[1]) + (x[0] - c[0]) * (x[1] - c[1])
}

/// Traces on `B(x₀, R)` for each `R` in `radii`, with `B(x₀, R₁) ⊂ Ω`
/// for `R₁ = max radii`.
pub fn radius_sweep(rho: &dyn Density, omega: &DomainKind, center: Point, radii: &[f64], opts: &TraceOptions) -> Result<RadiusSweep> {
    if radii.is_empty() {
        return Err(Error::Precondition("radius grid is empty".into()));
    }
    let mut samples = Vec::with_capacity(radii.len());
    for &r in radii {
        let ball = DomainKind::Disk { center, radius: r };
        let d = make_domain(ball, Some(*omega))?;
        let gap = d.gap.unwrap_or(0.0);
        let delta = opts.delta.unwrap_or(0.25 * gap).min(0.25 * gap);
        check_delta(&d, delta)?;
        let region = neighbourhood(&ball, 3.0 * delta);
        let grid = trace_grid(&ball, opts.nodes)?;
        let s = inspect(rho, &region, &grid.nodes, &opts.quad, opts.exec)?;
        if s.signed {
            return Err(Error::NegativeDensity("the radius sweep needs a nonnegative density".into()));
        }
        let mut prev: Option<BoundaryMeasure> = None;
        let mut last_inc = None;
        let mut eps = delta;
        let mut eta_tilde = None;
        for k in 1..=opts.levels {
            eps = delta / 2f64.powi(k as i32);
            let rule = kernel_rule(opts.kind, eps, 2, opts.radial, opts.angular)?;
            let conv = convolve_points::<crate::fields::CoefficientSet>(rho, None, &grid.nodes, &rule, opts.exec)?;
            let m = measure_from_nodes(&ball, conv.into_iter().map(|c| c.0).collect())?;
            last_inc = prev.as_ref().map(|p| bl_distance(&m, p));
            prev = Some(m.clone());
            eta_tilde = Some(m);
        }
        let restricted = measure_from_nodes(&ball, grid.nodes.iter().map(|&x| rho.value(x)).collect::<Result<_>>()?)?;
        let discrepancy = bl_distance(eta_tilde.as_ref().unwrap(), &restricted);
        // polar: Gauss in r, trapezoid in angle; cartesian: triangles plus boundary slivers
        let polar_rule = QuadratureSet::disk(center, r, opts.quad.panels, opts.quad.gauss);
        let polar: f64 = polar_rule
            .points
            .iter()
            .zip(&polar_rule.weights)
            .map(|(x, w)| rho.value(*x).map(|v| w * v * fubini_weight(*x, center)))
            .sum::<Result<f64>>()?;
        let mesh = mesh_domain(&ball, r / 40.0)?;
        let cart_rule = QuadratureSet::on_mesh_exact(&mesh, TriangleRule::Strang6, 4);
        let cartesian: f64 = cart_rule
            .points
            .iter()
            .zip(&cart_rule.weights)
            .map(|(x, w)| rho.value(*x).map(|v| w * v * fubini_weight(*x, center)))
            .sum::<Result<f64>>()?;
        let relative_difference = (polar - cartesian).abs() / polar.abs().max(cartesian.abs()).max(f64::MIN_POSITIVE);
        samples.push(RadiusSample {
            radius: r,
            eps,
            discrepancy,
            converged: last_inc.is_some_and(|d: f64| d < opts.tol),
            fubini: FubiniCheck { radius: r, polar, cartesian, relative_difference },
        });
    }
    let mut d: Vec<f64> = samples.iter().map(|s| s.discrepancy).collect();
    d.sort_by(f64::total_cmp);
    let median = if d.len() % 2 == 1 { d[d.len() / 2] } else { 0.5 * (d[d.len() / 2 - 1] + d[d.len() / 2]) };
    let max_fubini = samples.iter().fold(0.0, |m: f64, s| m.max(s.fubini.relative_difference));
    Ok(RadiusSweep { center, samples, median_discrepancy: median, max_fubini_difference: max_fubini })
}
