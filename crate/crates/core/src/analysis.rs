//! Post-processing checks of the qualitative theory: the a priori bound and
//! linearity, nonnegativity, the Harnack ratio, and equicontinuity of the
//! approximating sequence.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{sample_points, CoefficientSet, Coefficients};
use crate::geometry::{mesh_domain, DomainKind, Mesh};
use crate::linalg::{dist, Point};
use crate::mollify::admissible_sequence;
use crate::par;
use crate::solver::{level_trace, solve_measure_on, solve_smooth, DirichletProblem, MeasureSolveOptions, Schedule, SolutionField};
use crate::weakform::QuadOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriEntry {
    pub label: String,
    pub norm_lp_prime: f64,
    pub tv_eta: f64,
    pub h_l1: f64,
    pub g_lp_prime: f64,
    /// `‖ϱ‖ / (TV + ‖h‖ + ‖G‖)`, absent for zero data.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    pub p_prime: f64,
    pub entries: Vec<AprioriEntry>,
    /// Largest observed ratio: an empirical stand-in for the constant.
    pub envelope: f64,
    /// Zero-data members whose solution norm exceeded the tolerance.
    pub uniqueness_failures: usize,
}

/// `(‖h‖_{L¹(D)}, ‖G‖_{L^{p′}(D)})` with the max-entry matrix norm.
pub fn data_norms<C: Coefficients + ?Sized>(coeffs: &C, domain: &DomainKind, p_prime: f64, q: &QuadOptions) -> Result<(f64, f64)> {
    let dim = coeffs.dim();
    let quad = q.rule(domain);
    let (mut h1, mut g) = (0.0, 0.0);
    for (x, w) in quad.points.iter().zip(&quad.weights) {
        let h = coeffs.h(*x)?;
        h1 += w * if dim == 1 { h[0].abs() } else { h[0].hypot(h[1]) };
        g += w * coeffs.g(*x)?.max_entry(dim).powf(p_prime);
    }
    Ok((h1, g.powf(1.0 / p_prime)))
}

fn same_operator(a: &DirichletProblem, b: &DirichletProblem) -> bool {
    a.coeffs.a == b.coeffs.a && a.coeffs.b == b.coeffs.b && a.domain == b.domain && a.p == b.p
}

/// Implied constants over a family sharing `(A, b, D, p)`. `tol` bounds
/// the solution norm accepted for zero data.
pub fn apriori_check(family: &[(String, DirichletProblem, SolutionField)], tol: f64, q: &QuadOptions) -> Result<AprioriReport> {
    let Some((_, first, _)) = family.first() else {
        return Err(Error::Precondition("empty problem family".into()));
    };
    if family.iter().any(|(_, p, _)| !same_operator(first, p)) {
        return Err(Error::Precondition("family members must share A, b, D and p".into()));
    }
    let pp = first.p_prime();
    let mut entries = Vec::with_capacity(family.len());
    let mut failures = 0;
    for (label, problem, sol) in family {
        let norm = sol.lq_norm(pp);
        let tv = problem.eta.total_variation();
        let (h1, g) = data_norms(&problem.coeffs, &problem.domain.kind, pp, q)?;
        let denom = tv + h1 + g;
        let ratio = if denom > 0.0 {
            Some(norm / denom)
        } else {
            failures += (norm > tol) as usize;
            None
        };
        entries.push(AprioriEntry { label: label.clone(), norm_lp_prime: norm, tv_eta: tv, h_l1: h1, g_lp_prime: g, ratio });
    }
    let envelope = entries.iter().filter_map(|e| e.ratio).fold(0.0, f64::max);
    Ok(AprioriReport { p_prime: pp, entries, envelope, uniqueness_failures: failures })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub lambda: f64,
    /// `‖ϱ_λ − λϱ‖ / (|λ|·‖ϱ‖)` in `L^{p′}`; absolute when `λ = 0`.
    pub relative_error: f64,
}

/// Solves the problem with `(η, G, h)` scaled by each `λ` on a fixed mesh
/// and compares with the scaled base solution.
pub fn scaling_check(problem: &DirichletProblem, mesh: &Arc<Mesh>, schedule: &Schedule, opts: &MeasureSolveOptions, lambdas: &[f64]) -> Result<Vec<ScalingRecord>> {
    let pp = problem.p_prime();
    let (base, _) = solve_measure_on(problem, mesh, schedule, opts)?;
    let norm = base.lq_norm(pp);
    lambdas
        .iter()
        .map(|&l| {
            let (s, _) = solve_measure_on(&problem.scaled(l)?, mesh, schedule, opts)?;
            let d = s.lq_distance(&base.scaled_by(l), pp)?;
            let scale = l.abs() * norm;
            Ok(ScalingRecord { lambda: l, relative_error: if scale > 0.0 { d / scale } else { d } })
        })
        .collect()
}

/// `min ϱ ≥ −tol·max(1, max ϱ)`
pub fn is_almost_nonnegative(sol: &SolutionField, tol: f64) -> bool {
    sol.min() >= -tol * sol.max().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackRun {
    pub h: f64,
    pub n: usize,
    pub sup: f64,
    pub inf: f64,
    pub ratio: Option<f64>,
    pub argmax: Point,
    pub nodes_in_ball: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub center: Point,
    pub radius: f64,
    pub runs: Vec<HarnackRun>,
    /// `(max ratio − min ratio) / min ratio` over the runs.
    pub spread: Option<f64>,
    pub stable: bool,
    pub failure: Option<String>,
}

fn ball_extremes(sol: &SolutionField, center: Point, radius: f64) -> (f64, f64, Point, usize) {
    let (mut sup, mut inf, mut arg, mut count) = (f64::NEG_INFINITY, f64::INFINITY, center, 0);
    for (x, v) in sol.mesh.vertices.iter().zip(&sol.values) {
        if dist(*x, center) <= radius {
            count += 1;
            inf = inf.min(*v);
            if *v > sup {
                sup = *v;
                arg = *x;
            }
        }
    }
    (sup, inf, arg, count)
}

/// Sup/inf ratio over `B(x₀, R)` at mesh sizes `h, h/2` and levels
/// `levels[0], levels[1]`. Stable when all four ratios lie within 10%.
pub fn harnack_check(problem: &DirichletProblem, center: Point, radius: f64, h: f64, levels: [usize; 2], opts: &MeasureSolveOptions) -> Result<HarnackReport> {
    if !problem.coeffs.has_zero_rhs() {
        return Err(Error::Precondition("the Harnack check needs G = 0 and h = 0".into()));
    }
    if !problem.eta.is_nonnegative() || problem.eta.total_variation() == 0.0 {
        return Err(Error::Precondition("the Harnack check needs a nonnegative, nonzero boundary measure".into()));
    }
    let big = DomainKind::Disk { center, radius: 4.0 * radius };
    let DomainKind::Disk { center: c, radius: r } = problem.domain.kind else {
        return Err(Error::Unsupported("the Harnack check runs on disks".into()));
    };
    let DomainKind::Disk { radius: r4, .. } = big else { unreachable!() };
    if !(radius > 0.0) || dist(center, c) + r4 >= r {
        return Err(Error::Precondition("B(x₀, 4R) must lie inside D".into()));
    }
    let mut runs = Vec::with_capacity(4);
    let mut lopts = opts.level;
    lopts.p = problem.p;
    for &n in &levels {
        let level = admissible_sequence(&problem.coeffs, &problem.domain, n, &lopts)?;
        for hh in [h, 0.5 * h] {
            let mesh = Arc::new(mesh_domain(&problem.domain.kind, hh)?);
            let (g, _) = level_trace(&mesh, &level, &problem.eta)?;
            let (sol, _) = solve_smooth(&mesh, &level, &g, &opts.solve)?;
            let (sup, inf, argmax, count) = ball_extremes(&sol, center, radius);
            runs.push(HarnackRun { h: hh, n, sup, inf, ratio: (inf > 0.0).then(|| sup / inf), argmax, nodes_in_ball: count });
        }
    }
    let ratios: Vec<f64> = runs.iter().filter_map(|r| r.ratio).collect();
    if ratios.len() < runs.len() {
        let worst = runs.iter().map(|r| r.inf).fold(f64::INFINITY, f64::min);
        return Ok(HarnackReport {
            center,
            radius,
            runs,
            spread: None,
            stable: false,
            failure: Some(format!(
                "inf over the ball is {worst:e} ≤ 0; nonnegative data should give a nonnegative solution, so check the mesh size and the sign of η"
            )),
        });
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let spread = (hi - lo) / lo;
    Ok(HarnackReport { center, radius, runs, spread: Some(spread), stable: spread <= 0.1, failure: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulusOptions {
    pub points: usize,
    pub bins: usize,
    pub r_max: f64,
    pub seed: u64,
}

impl Default for ModulusOptions {
    fn default() -> Self {
        ModulusOptions { points: 600, bins: 12, r_max: 0.5, seed: 11 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusCurve {
    pub n: usize,
    pub sup_norm: f64,
    /// Cumulative maximum of `|ϱₙ(x) − ϱₙ(y)|` over pairs with `|x − y| ≤ r`.
    pub oscillation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusReport {
    /// Upper bin edges.
    pub radii: Vec<f64>,
    pub curves: Vec<ModulusCurve>,
    /// `w₀`: the pointwise maximum over levels.
    pub envelope: Vec<f64>,
    /// Every bin agrees across levels within 20% of its envelope value.
    pub level_independent: bool,
    /// Envelope extrapolated to `r = 0` from the first three bins.
    pub intercept: f64,
    pub sup_bounded: bool,
    /// `b = h = 0`, as the continuity result assumes.
    pub hypotheses_hold: bool,
    pub mean_oscillation: Option<Vec<(f64, f64)>>,
}

/// Oscillation curves of level solutions on `ball`.
pub fn modulus_check(coeffs: Option<&CoefficientSet>, solutions: &[(usize, SolutionField)], ball: &DomainKind, opts: &ModulusOptions) -> Result<ModulusReport> {
    if solutions.is_empty() || opts.bins == 0 || !(opts.r_max > 0.0) {
        return Err(Error::Precondition("modulus check needs solutions, bins and a positive radius".into()));
    }
    let pts = sample_points(ball, opts.points, opts.seed);
    let dr = opts.r_max / opts.bins as f64;
    let radii: Vec<f64> = (1..=opts.bins).map(|k| k as f64 * dr).collect();
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = dist(pts[i], pts[j]);
            if d > 0.0 && d <= opts.r_max {
                pairs.push((i, j, (((d / dr).ceil() as usize).max(1) - 1).min(opts.bins - 1)));
            }
        }
    }
    let curves: Vec<ModulusCurve> = par::map_slice(par::Exec::Parallel, solutions, |(n, sol)| -> Result<ModulusCurve> {
        let v: Vec<f64> = pts.iter().map(|&x| sol.eval_near(x).ok_or(Error::OutsideDomain(x))).collect::<Result<_>>()?;
        let mut osc = vec![0.0f64; opts.bins];
        for &(i, j, b) in &pairs {
            osc[b] = osc[b].max((v[i] - v[j]).abs());
        }
        for k in 1..osc.len() {
            osc[k] = osc[k].max(osc[k - 1]);
        }
        Ok(ModulusCurve { n: *n, sup_norm: sol.lq_norm(f64::INFINITY), oscillation: osc })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let envelope: Vec<f64> = (0..opts.bins).map(|k| curves.iter().map(|c| c.oscillation[k]).fold(0.0, f64::max)).collect();
    let level_independent = (0..opts.bins).all(|k| {
        let lo = curves.iter().map(|c| c.oscillation[k]).fold(f64::INFINITY, f64::min);
        envelope[k] <= 1e-12 || (envelope[k] - lo) <= 0.2 * envelope[k]
    });
    // least-squares line through the first three bin midpoints
    let m = opts.bins.min(3);
    let xs: Vec<f64> = (0..m).map(|k| (k as f64 + 0.5) * dr).collect();
    let ys = &envelope[..m];
    let intercept = if m >= 2 {
        let (mx, my) = (xs.iter().sum::<f64>() / m as f64, ys.iter().sum::<f64>() / m as f64);
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        (my - sxy / sxx * mx).max(0.0)
    } else {
        envelope[0]
    };
    let sups: Vec<f64> = curves.iter().map(|c| c.sup_norm).collect();
    let sup_bounded = sups.iter().all(|s| s.is_finite()) && sups.iter().copied().fold(0.0, f64::max) <= 2.0 * sups[0].max(f64::MIN_POSITIVE);
    let (hypotheses_hold, mean_oscillation) = match coeffs {
        Some(c) => {
            let zero_drift = c.b.iter().chain(&c.h).all(|f| f.as_const() == Some(0.0));
            let radii_mo: Vec<f64> = radii.iter().take(4).copied().collect();
            (zero_drift, Some(crate::fields::mean_oscillation_proxy(c, ball, &radii_mo, 32, opts.seed)?))
        }
        None => (false, None),
    };
    Ok(ModulusReport { radii, curves, envelope, level_independent, intercept, sup_bounded, hypotheses_hold, mean_oscillation })
}

/// Observed order from a least-squares fit of `log e` against `log h`.
pub fn observed_order(hs: &[f64], errors: &[f64]) -> Result<f64> {
    if hs.len() != errors.len() || hs.len() < 2 {
        return Err(Error::Precondition("an order fit needs at least two points".into()));
    }
    if errors.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Precondition("an order fit needs positive errors".into()));
    }
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}
