//! Coefficient fields `A, b, G, h`, sampled hypothesis certificates and the
//! manufactured-solution generator.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::geometry::DomainKind;
use crate::linalg::{dist, norm, Point, Sym2, Vec2};
use crate::par::{self, Exec};
use crate::quadrature::QuadratureSet;

/// Tensor-grid samples with (bi)linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub xs: Vec<f64>,
    /// A single `0.0` for one-dimensional data.
    pub ys: Vec<f64>,
    /// Row-major in `y`: `values[j * xs.len() + i]`.
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || ys.is_empty() || values.len() != xs.len() * ys.len() {
            return Err(Error::Evaluation("grid field dimensions do not match its values".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) || ys.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Evaluation("grid coordinates must be strictly increasing".into()));
        }
        Ok(GridField { xs, ys, values })
    }

    pub fn value(&self, x: Point) -> f64 {
        let (i, tx) = match locate_axis(&self.xs, x[0]) {
            Some(v) => v,
            None => return f64::NAN,
        };
        if self.ys.len() == 1 {
            let v0 = self.values[i];
            let v1 = if tx > 0.0 { self.values[i + 1] } else { v0 };
            return v0 + tx * (v1 - v0);
        }
        let (j, ty) = match locate_axis(&self.ys, x[1]) {
            Some(v) => v,
            None => return f64::NAN,
        };
        let nx = self.xs.len();
        let at = |ii: usize, jj: usize| self.values[jj * nx + ii];
        let i1 = (i + 1).min(nx - 1);
        let j1 = (j + 1).min(self.ys.len() - 1);
        let v00 = at(i, j);
        if tx == 0.0 && ty == 0.0 {
            return v00;
        }
        (1.0 - tx) * (1.0 - ty) * v00 + tx * (1.0 - ty) * at(i1, j) + (1.0 - tx) * ty * at(i, j1) + tx * ty * at(i1, j1)
    }

    /// Reads `x1[,x2],col...` columns from a CSV with a header row.
    pub fn load_csv(path: &Path, dim: usize) -> Result<BTreeMap<String, GridField>> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let coord_cols = if dim == 1 { vec!["x1"] } else { vec!["x1", "x2"] };
        for (k, c) in coord_cols.iter().enumerate() {
            if headers.get(k).map(String::as_str) != Some(*c) {
                return Err(Error::Config {
                    field: path.display().to_string(),
                    message: format!("column {} must be `{c}`", k + 1),
                });
            }
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Config { field: path.display().to_string(), message: e.to_string() })?;
            rows.push(row);
        }
        let uniq = |k: usize| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let xs = uniq(0);
        let ys = if dim == 1 { vec![0.0] } else { uniq(1) };
        if rows.len() != xs.len() * ys.len() {
            return Err(Error::Config {
                field: path.display().to_string(),
                message: "samples do not form a complete tensor grid".into(),
            });
        }
        let nd = coord_cols.len();
        let mut out = BTreeMap::new();
        for (col, name) in headers.iter().enumerate().skip(nd) {
            let mut values = vec![f64::NAN; rows.len()];
            for r in &rows {
                let i = xs.binary_search_by(|v| v.total_cmp(&r[0])).unwrap_or(0);
                let j = if dim == 1 { 0 } else { ys.binary_search_by(|v| v.total_cmp(&r[1])).unwrap_or(0) };
                values[j * xs.len() + i] = r[col];
            }
            out.insert(name.clone(), GridField::new(xs.clone(), ys.clone(), values)?);
        }
        Ok(out)
    }
}

fn locate_axis(axis: &[f64], x: f64) -> Option<(usize, f64)> {
    let n = axis.len();
    if n == 1 {
        return Some((0, 0.0));
    }
    let span = axis[n - 1] - axis[0];
    let tol = 1e-12 * span;
    if x < axis[0] - tol || x > axis[n - 1] + tol {
        return None;
    }
    let k = axis.partition_point(|v| *v <= x).clamp(1, n - 1) - 1;
    let t = ((x - axis[k]) / (axis[k + 1] - axis[k])).clamp(0.0, 1.0);
    if t >= 1.0 {
        return Some(if k + 1 < n - 1 { (k + 1, 0.0) } else { (k, 1.0) });
    }
    Some((k, t))
}

/// A scalar coefficient entry.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarField {
    Expr(Expr),
    Grid(GridField),
}

impl ScalarField {
    pub fn constant(c: f64) -> Self {
        ScalarField::Expr(Expr::Const(c))
    }

    pub fn parse(src: &str) -> Result<Self> {
        Ok(ScalarField::Expr(Expr::parse(src)?))
    }

    pub fn value(&self, x: Point) -> f64 {
        match self {
            ScalarField::Expr(e) => e.eval(x),
            ScalarField::Grid(g) => g.value(x),
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            ScalarField::Expr(e) => e.as_const(),
            ScalarField::Grid(_) => None,
        }
    }

    pub fn as_expr(&self) -> Option<&Expr> {
        match self {
            ScalarField::Expr(e) => Some(e),
            ScalarField::Grid(_) => None,
        }
    }
}

impl From<Expr> for ScalarField {
    fn from(e: Expr) -> Self {
        ScalarField::Expr(e)
    }
}

/// Anything that supplies `A, b, G, h` pointwise.
pub trait Coefficients: Sync {
    fn dim(&self) -> usize;
    fn a(&self, x: Point) -> Result<Sym2>;
    fn b(&self, x: Point) -> Result<Vec2>;
    fn g(&self, x: Point) -> Result<Sym2>;
    fn h(&self, x: Point) -> Result<Vec2>;
}

/// Coefficients on `Ω`. Entries are stored once per symmetric pair, so
/// evaluated matrices are exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub dim: usize,
    pub omega: DomainKind,
    pub a: [ScalarField; 3],
    pub b: [ScalarField; 2],
    pub g: [ScalarField; 3],
    pub h: [ScalarField; 2],
}

fn sym_from(f: &[ScalarField; 3], x: Point, dim: usize) -> Sym2 {
    if dim == 1 {
        Sym2::new(f[0].value(x), 0.0, 0.0)
    } else {
        Sym2::new(f[0].value(x), f[1].value(x), f[2].value(x))
    }
}

fn vec_from(f: &[ScalarField; 2], x: Point, dim: usize) -> Vec2 {
    if dim == 1 {
        [f[0].value(x), 0.0]
    } else {
        [f[0].value(x), f[1].value(x)]
    }
}

impl CoefficientSet {
    /// `A = I` and `b = G = h = 0`.
    pub fn identity(omega: DomainKind) -> Self {
        let z = || ScalarField::constant(0.0);
        CoefficientSet {
            dim: omega.dim(),
            omega,
            a: [ScalarField::constant(1.0), z(), ScalarField::constant(1.0)],
            b: [z(), z()],
            g: [z(), z(), z()],
            h: [z(), z()],
        }
    }

    /// Builds a set from expression strings `[a11, a12, a22]`, `[b1, b2]`, ...
    pub fn from_strs(omega: DomainKind, a: [&str; 3], b: [&str; 2], g: [&str; 3], h: [&str; 2]) -> Result<Self> {
        let p = |s: &str| ScalarField::parse(s);
        Ok(CoefficientSet {
            dim: omega.dim(),
            omega,
            a: [p(a[0])?, p(a[1])?, p(a[2])?],
            b: [p(b[0])?, p(b[1])?],
            g: [p(g[0])?, p(g[1])?, p(g[2])?],
            h: [p(h[0])?, p(h[1])?],
        })
    }

    fn check_inside(&self, x: Point) -> Result<()> {
        if self.omega.contains_closed(x, 1e-12 * self.omega.diameter()) {
            Ok(())
        } else {
            Err(Error::OutsideDomain(x))
        }
    }

    pub fn all_fields(&self) -> impl Iterator<Item = &ScalarField> {
        self.a.iter().chain(&self.b).chain(&self.g).chain(&self.h)
    }

    pub fn is_closed_form(&self) -> bool {
        self.all_fields().all(|f| f.as_expr().is_some())
    }

    pub fn is_smooth_closed_form(&self) -> bool {
        self.all_fields().all(|f| f.as_expr().is_some_and(Expr::is_smooth))
    }

    /// `(G, h) ≡ 0`
    pub fn has_zero_rhs(&self) -> bool {
        self.g.iter().chain(&self.h).all(|f| f.as_const() == Some(0.0))
    }

    /// Scales `G` and `h` by `s`.
    pub fn scale_rhs(&self, s: f64) -> Self {
        let sc = |f: &ScalarField| match f {
            ScalarField::Expr(e) => ScalarField::Expr(expr::mul(Expr::Const(s), e.clone())),
            ScalarField::Grid(g) => {
                ScalarField::Grid(GridField { values: g.values.iter().map(|v| s * v).collect(), ..g.clone() })
            }
        };
        let mut out = self.clone();
        out.g = [sc(&self.g[0]), sc(&self.g[1]), sc(&self.g[2])];
        out.h = [sc(&self.h[0]), sc(&self.h[1])];
        out
    }

    /// `A` extended by the identity outside `Ω`.
    pub fn a_extended(&self, x: Point) -> Sym2 {
        if self.omega.contains(x) {
            sym_from(&self.a, x, self.dim)
        } else {
            Sym2::IDENTITY
        }
    }
}

fn finite_sym(m: Sym2, what: &str, x: Point) -> Result<Sym2> {
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::Evaluation(format!("{what} is not finite at ({}, {})", x[0], x[1])))
    }
}

fn finite_vec(v: Vec2, what: &str, x: Point) -> Result<Vec2> {
    if v[0].is_finite() && v[1].is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation(format!("{what} is not finite at ({}, {})", x[0], x[1])))
    }
}

impl Coefficients for CoefficientSet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn a(&self, x: Point) -> Result<Sym2> {
        self.check_inside(x)?;
        finite_sym(sym_from(&self.a, x, self.dim), "A", x)
    }

    fn b(&self, x: Point) -> Result<Vec2> {
        self.check_inside(x)?;
        finite_vec(vec_from(&self.b, x, self.dim), "b", x)
    }

    fn g(&self, x: Point) -> Result<Sym2> {
        self.check_inside(x)?;
        finite_sym(sym_from(&self.g, x, self.dim), "G", x)
    }

    fn h(&self, x: Point) -> Result<Vec2> {
        self.check_inside(x)?;
        finite_vec(vec_from(&self.h, x, self.dim), "h", x)
    }
}

/// Given a smooth positive target `ρ*`, returns `G = ρ* A` and `h = ρ* b`.
/// With these, `ρ*` satisfies the equation identically.
pub fn manufacture(rho: &Expr, a: &[ScalarField; 3], b: &[ScalarField; 2]) -> Result<([ScalarField; 3], [ScalarField; 2])> {
    let e = |f: &ScalarField| {
        f.as_expr()
            .cloned()
            .ok_or_else(|| Error::Unsupported("manufactured solutions need closed-form A and b".into()))
    };
    let m = |f: &ScalarField| -> Result<ScalarField> { Ok(ScalarField::Expr(expr::mul(rho.clone(), e(f)?))) };
    Ok(([m(&a[0])?, m(&a[1])?, m(&a[2])?], [m(&b[0])?, m(&b[1])?]))
}

impl CoefficientSet {
    /// Coefficient set for which `rho` is an exact solution.
    pub fn manufactured(omega: DomainKind, rho: &Expr, a: [ScalarField; 3], b: [ScalarField; 2]) -> Result<Self> {
        let (g, h) = manufacture(rho, &a, &b)?;
        Ok(CoefficientSet { dim: omega.dim(), omega, a, b, g, h })
    }
}

/// Sampled `(θ, ω)` and the integrability exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityCertificate {
    pub theta: f64,
    /// `(r, ω(r))`, nondecreasing with `ω(0) = 0`.
    pub omega: Vec<(f64, f64)>,
    pub p: f64,
    pub p_prime: f64,
    /// Sampled mean-oscillation proxy; heuristic.
    pub omega_tilde: Option<Vec<(f64, f64)>>,
    pub sampled: bool,
}

impl EllipticityCertificate {
    pub fn new(theta: f64, omega: Vec<(f64, f64)>, p: f64, dim: usize) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(Error::Precondition(format!("θ must lie in (0, 1] (got {theta})")));
        }
        if !(p > dim as f64) {
            return Err(Error::Precondition(format!("p must exceed the dimension {dim} (got {p})")));
        }
        if omega.first().is_some_and(|&(r, w)| r != 0.0 || w != 0.0) {
            return Err(Error::Precondition("ω must start at ω(0) = 0".into()));
        }
        if omega.windows(2).any(|w| w[1].0 <= w[0].0 || w[1].1 < w[0].1) {
            return Err(Error::Precondition("ω must be nondecreasing on an increasing radius grid".into()));
        }
        Ok(EllipticityCertificate { theta, omega, p, p_prime: p / (p - 1.0), omega_tilde: None, sampled: true })
    }

    pub fn from_estimate(est: &H12Estimate, p: f64, dim: usize) -> Result<Self> {
        Self::new(est.theta.min(1.0), est.omega.clone(), p, dim)
    }

    pub fn omega_at(&self, r: f64) -> f64 {
        omega_lookup(&self.omega, r)
    }
}

/// Upper step-envelope lookup: value at the first bin radius `>= r`.
pub fn omega_lookup(omega: &[(f64, f64)], r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    for &(ri, wi) in omega {
        if ri >= r {
            return wi;
        }
    }
    omega.last().map_or(0.0, |w| w.1)
}

#[derive(Debug, Clone, Copy)]
pub struct CertifyOptions {
    pub samples: usize,
    pub seed: u64,
    /// Largest pair distance examined for the modulus.
    pub r_max: f64,
    pub bins: usize,
    pub exec: Exec,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { samples: 2000, seed: 7, r_max: 0.5, bins: 16, exec: Exec::Parallel }
    }
}

/// Sampled ellipticity bound and continuity modulus of `A`. These are
/// estimates, not proofs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H12Estimate {
    pub theta: f64,
    pub omega: Vec<(f64, f64)>,
    pub samples: usize,
    pub norm: String,
}

/// Deterministic sample stream in `D̄`; the first `n` points of a longer
/// stream equal the stream of length `n`.
pub fn sample_points(domain: &DomainKind, n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| match *domain {
            DomainKind::Interval { a, b } => [a + (b - a) * rng.random::<f64>(), 0.0],
            DomainKind::Disk { center, radius } => {
                let r = radius * rng.random::<f64>().sqrt();
                let t = std::f64::consts::TAU * rng.random::<f64>();
                [center[0] + r * t.cos(), center[1] + r * t.sin()]
            }
        })
        .collect()
}

pub fn certify_h1_h2<C: Coefficients + ?Sized>(coeffs: &C, domain: &DomainKind, opts: &CertifyOptions) -> Result<H12Estimate> {
    if opts.samples < 100 {
        return Err(Error::Precondition(format!("certification needs at least 100 samples (got {})", opts.samples)));
    }
    let dim = coeffs.dim();
    let pts = sample_points(domain, opts.samples, opts.seed);
    let mats = par::map_slice(opts.exec, &pts, |&x| coeffs.a(x));
    let mats: Vec<Sym2> = mats.into_iter().collect::<Result<_>>()?;
    let mut theta = f64::INFINITY;
    for (x, m) in pts.iter().zip(&mats) {
        let (lo, hi) = m.eigenvalues(dim);
        if lo <= 0.0 {
            return Err(Error::Ellipticity { point: *x, lambda_min: lo });
        }
        theta = theta.min(lo).min(1.0 / hi);
    }
    let omega = sampled_modulus(&pts, &mats, dim, opts);
    Ok(H12Estimate { theta, omega, samples: opts.samples, norm: "spectral".into() })
}

/// Binned `max ‖A(x) − A(y)‖` over sampled pairs with `|x − y| <= r`,
/// as a cumulative envelope starting at `(0, 0)`.
fn sampled_modulus(pts: &[Point], mats: &[Sym2], dim: usize, opts: &CertifyOptions) -> Vec<(f64, f64)> {
    let bins = opts.bins.max(1);
    let r_max = opts.r_max;
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    for p in pts {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let nx = (((hi[0] - lo[0]) / r_max).floor() as usize + 1).max(1);
    let ny = (((hi[1] - lo[1]) / r_max).floor() as usize + 1).max(1);
    let cell_of = |p: Point| {
        let i = (((p[0] - lo[0]) / r_max) as usize).min(nx - 1);
        let j = (((p[1] - lo[1]) / r_max) as usize).min(ny - 1);
        (i, j)
    };
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
    for (k, p) in pts.iter().enumerate() {
        let (i, j) = cell_of(*p);
        buckets[j * nx + i].push(k);
    }
    let chunk = 256;
    let n_chunks = pts.len().div_ceil(chunk);
    let partial = par::map_range(opts.exec, n_chunks, |c| {
        let mut local = vec![0.0f64; bins];
        for k in (c * chunk)..((c + 1) * chunk).min(pts.len()) {
            let (i, j) = cell_of(pts[k]);
            for jj in j.saturating_sub(1)..=(j + 1).min(ny - 1) {
                for ii in i.saturating_sub(1)..=(i + 1).min(nx - 1) {
                    for &l in &buckets[jj * nx + ii] {
                        if l >= k {
                            continue;
                        }
                        let d = dist(pts[k], pts[l]);
                        if d > r_max || d == 0.0 {
                            continue;
                        }
                        let bin = ((d / r_max * bins as f64).ceil() as usize).clamp(1, bins) - 1;
                        let diff = mats[k].minus(mats[l]).spectral_norm(dim);
                        if diff > local[bin] {
                            local[bin] = diff;
                        }
                    }
                }
            }
        }
        local
    });
    let mut env = vec![0.0f64; bins];
    for local in partial {
        for (e, v) in env.iter_mut().zip(local) {
            *e = e.max(v);
        }
    }
    let mut out = vec![(0.0, 0.0)];
    let mut running: f64 = 0.0;
    for (b, v) in env.iter().enumerate() {
        running = running.max(*v);
        out.push((r_max * (b + 1) as f64 / bins as f64, running));
    }
    out
}

/// Sampled mean-oscillation proxy: for each radius, the largest mean
/// deviation `avg_B ‖A − avg_B A‖` over balls centred at sample points.
pub fn mean_oscillation_proxy<C: Coefficients + ?Sized>(
    coeffs: &C,
    domain: &DomainKind,
    radii: &[f64],
    centers: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let dim = coeffs.dim();
    let cs = sample_points(domain, centers, seed);
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut worst: f64 = 0.0;
        for &c in &cs {
            let q = match dim {
                1 => QuadratureSet::interval(c[0] - r, c[0] + r, 4, 4),
                _ => QuadratureSet::disk(c, r, 2, 4),
            };
            let mats: Vec<Sym2> = q.points.iter().map(|&x| coeffs.a(x)).collect::<Result<_>>()?;
            let w = q.total_weight();
            let mut mean = Sym2::ZERO;
            for (m, wi) in mats.iter().zip(&q.weights) {
                mean = mean.plus(m.scaled(wi / w));
            }
            let dev: f64 = mats.iter().zip(&q.weights).map(|(m, wi)| wi * m.minus(mean).spectral_norm(dim)).sum::<f64>() / w;
            worst = worst.max(dev);
        }
        out.push((r, worst));
    }
    Ok(out)
}

/// `L^p` norms of `b`, `L¹` of `h`, `L^{p'}` of `G` over `D̄`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H3Norms {
    pub b_lp: f64,
    pub h_l1: f64,
    pub g_lp_prime: f64,
    pub p: f64,
    pub p_prime: f64,
    pub quadrature_order: usize,
    pub matrix_norm: String,
}

pub fn certify_h3<C: Coefficients + ?Sized>(coeffs: &C, domain: &DomainKind, p: f64, quad: &QuadratureSet) -> Result<H3Norms> {
    let dim = coeffs.dim();
    if !(p > dim as f64) {
        return Err(Error::Precondition(format!("p must exceed the dimension {dim} (got {p})")));
    }
    let _ = domain;
    let pp = p / (p - 1.0);
    let (mut sb, mut sh, mut sg) = (0.0, 0.0, 0.0);
    for (&x, &w) in quad.points.iter().zip(&quad.weights) {
        let b = coeffs.b(x)?;
        let h = coeffs.h(x)?;
        let g = coeffs.g(x)?;
        sb += w * norm(b).powf(p);
        sh += w * norm(h);
        sg += w * g.max_entry(dim).powf(pp);
    }
    let out = H3Norms {
        b_lp: sb.powf(1.0 / p),
        h_l1: sh,
        g_lp_prime: sg.powf(1.0 / pp),
        p,
        p_prime: pp,
        quadrature_order: quad.order,
        matrix_norm: "max-entry".into(),
    };
    if !(out.b_lp.is_finite() && out.h_l1.is_finite() && out.g_lp_prime.is_finite()) {
        return Err(Error::Evaluation("coefficient norms are not finite".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit_disk() -> DomainKind {
        DomainKind::Disk { center: [0.0, 0.0], radius: 1.0 }
    }

    #[test]
    fn evaluate_basics() {
        let c = CoefficientSet::from_strs(unit_disk(), ["1", "0", "1"], ["x1", "x2"], ["0", "0", "0"], ["0", "0"]).unwrap();
        assert_eq!(c.a([0.2, 0.1]).unwrap(), Sym2::IDENTITY);
        assert_eq!(c.b([0.3, 0.4]).unwrap(), [0.3, 0.4]);
        assert!(matches!(c.a([1.5, 0.0]), Err(Error::OutsideDomain(_))));
        let bad = CoefficientSet::from_strs(unit_disk(), ["1/x1", "0", "1"], ["0", "0"], ["0", "0", "0"], ["0", "0"]).unwrap();
        assert!(matches!(bad.a([0.0, 0.0]), Err(Error::Evaluation(_))));
    }

    #[test]
    fn grid_field_reproduces_nodes() {
        let xs = vec![0.0, 0.5, 1.0];
        let ys = vec![-1.0, 1.0];
        let vals = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let g = GridField::new(xs.clone(), ys.clone(), vals.clone()).unwrap();
        for j in 0..2 {
            for i in 0..3 {
                assert_eq!(g.value([xs[i], ys[j]]), vals[j * 3 + i]);
            }
        }
        assert!((g.value([0.25, 0.0]) - 3.0).abs() < 1e-15);
        assert!(g.value([2.0, 0.0]).is_nan());
    }

    #[test]
    fn grid_field_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        std::fs::write(&p, "x1,x2,a11,b1\n0,0,1,5\n1,0,2,6\n0,1,3,7\n1,1,4,8\n").unwrap();
        let m = GridField::load_csv(&p, 2).unwrap();
        assert_eq!(m["a11"].value([1.0, 1.0]), 4.0);
        assert_eq!(m["b1"].value([0.0, 1.0]), 7.0);
        assert!((m["a11"].value([0.5, 0.5]) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn certify_constant_matrix() {
        let c = CoefficientSet::from_strs(unit_disk(), ["2", "0", "2"], ["0", "0"], ["0", "0", "0"], ["0", "0"]).unwrap();
        let est = certify_h1_h2(&c, &unit_disk(), &CertifyOptions::default()).unwrap();
        assert_eq!(est.theta, 0.5);
        assert!(est.omega.iter().all(|w| w.1 == 0.0));
    }

    #[test]
    fn certify_rejects_degenerate() {
        let c = CoefficientSet::from_strs(unit_disk(), ["x1^2", "0", "1"], ["0", "0"], ["0", "0", "0"], ["0", "0"]).unwrap();
        // λ_min = x1² is tiny but positive almost surely; force an exact zero
        let d = CoefficientSet::from_strs(unit_disk(), ["0", "0", "1"], ["0", "0"], ["0", "0", "0"], ["0", "0"]).unwrap();
        assert!(certify_h1_h2(&c, &unit_disk(), &CertifyOptions::default()).is_ok());
        assert!(matches!(certify_h1_h2(&d, &unit_disk(), &CertifyOptions::default()), Err(Error::Ellipticity { .. })));
        let opts = CertifyOptions { samples: 50, ..Default::default() };
        assert!(certify_h1_h2(&c, &unit_disk(), &opts).is_err());
    }

    #[test]
    fn certify_sinusoidal_matrix() {
        let c = CoefficientSet::from_strs(unit_disk(), ["1 + 0.5*sin(x1)", "0", "1 + 0.5*sin(x1)"], ["0", "0"], ["0", "0", "0"], ["0", "0"]).unwrap();
        let opts = CertifyOptions { samples: 100_000, r_max: 0.05, bins: 5, ..Default::default() };
        let est = certify_h1_h2(&c, &unit_disk(), &opts).unwrap();
        assert!(est.theta >= 0.5 / 1.5 * (1.0 - 1e-9) && est.theta <= 1.0);
        // dense-sampling oracle: the exact infimum is 1 - 0.5 sin(1)
        let exact = 1.0 - 0.5 * 1f64.sin();
        assert!(est.theta >= exact - 1e-12 && est.theta < exact + 1e-3);
        for &(r, w) in &est.omega {
            assert!(w <= 0.5 * r + 1e-12, "ω({r}) = {w}");
        }
    }

    #[test]
    fn certify_monotone_in_samples() {
        let c = CoefficientSet::from_strs(unit_disk(), ["2 + x1*x2", "0.1*x1", "1.5 + cos(x2)"], ["0", "0"], ["0", "0", "0"], ["0", "0"]).unwrap();
        let mut prev: Option<H12Estimate> = None;
        for n in [200, 400, 800, 1600] {
            let est = certify_h1_h2(&c, &unit_disk(), &CertifyOptions { samples: n, ..Default::default() }).unwrap();
            if let Some(p) = prev {
                assert!(est.theta <= p.theta);
                for (a, b) in est.omega.iter().zip(&p.omega) {
                    assert!(a.1 >= b.1);
                }
            }
            prev = Some(est);
        }
    }

    #[test]
    fn h3_norms() {
        let d = unit_disk();
        let q = QuadratureSet::disk([0.0, 0.0], 1.0, 4, 4);
        let zero = CoefficientSet::identity(d);
        let n = certify_h3(&zero, &d, 4.0, &q).unwrap();
        assert_eq!((n.b_lp, n.h_l1, n.g_lp_prime), (0.0, 0.0, 0.0));
        let c = CoefficientSet::from_strs(d, ["1", "0", "1"], ["1", "0"], ["1", "0", "1"], ["0", "0"]).unwrap();
        let n = certify_h3(&c, &d, 4.0, &q).unwrap();
        assert!((n.b_lp - PI.powf(0.25)).abs() < 1e-12);
        let pp = 4.0 / 3.0;
        assert!((n.g_lp_prime - (1f64.powf(pp) * PI).powf(1.0 / pp)).abs() < 1e-12);
        assert!(certify_h3(&c, &d, 2.0, &q).is_err());
    }

    #[test]
    fn manufacture_products() {
        let d = unit_disk();
        let rho = Expr::parse("1 + x1^2").unwrap();
        let c = CoefficientSet::manufactured(d, &rho, [ScalarField::constant(1.0), ScalarField::constant(0.0), ScalarField::constant(1.0)], [ScalarField::constant(0.0), ScalarField::constant(0.0)]).unwrap();
        let x = [0.5, 0.2];
        assert_eq!(c.g(x).unwrap(), Sym2::new(1.25, 0.0, 1.25));
        assert_eq!(c.h(x).unwrap(), [0.0, 0.0]);
        let one = Expr::Const(1.0);
        let (g, h) = manufacture(&one, &CoefficientSet::identity(d).a, &CoefficientSet::identity(d).b).unwrap();
        assert_eq!(g[0].as_const(), Some(1.0));
        assert_eq!(h[0].as_const(), Some(0.0));
        let grid = ScalarField::Grid(GridField::new(vec![0.0, 1.0], vec![0.0], vec![1.0, 1.0]).unwrap());
        let a = [grid, ScalarField::constant(0.0), ScalarField::constant(1.0)];
        assert!(matches!(manufacture(&one, &a, &[ScalarField::constant(0.0), ScalarField::constant(0.0)]), Err(Error::Unsupported(_))));
    }

    #[test]
    fn certificate_invariants() {
        assert!(EllipticityCertificate::new(0.5, vec![(0.0, 0.0), (0.1, 0.2)], 4.0, 2).is_ok());
        assert!(EllipticityCertificate::new(1.5, vec![(0.0, 0.0)], 4.0, 2).is_err());
        assert!(EllipticityCertificate::new(0.5, vec![(0.0, 0.0)], 2.0, 2).is_err());
        assert!(EllipticityCertificate::new(0.5, vec![(0.0, 0.0), (0.1, 0.2), (0.2, 0.1)], 4.0, 2).is_err());
        let c = EllipticityCertificate::new(0.5, vec![(0.0, 0.0), (0.1, 0.2), (0.2, 0.3)], 4.0, 2).unwrap();
        assert!((c.p_prime - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.omega_at(0.05), 0.2);
        assert_eq!(c.omega_at(0.15), 0.3);
    }
}
