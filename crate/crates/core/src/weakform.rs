//! Test-function banks and residuals of the integral identities that define
//! interior and Dirichlet solutions:
//!
//! `∫ L_{A,b}u ϱ dx = ∫ L_{G,h}u dx + ∫_{∂D} ⟨A∇u, ν⟩ dη`
//!
//! with `L_{S,T}u = trace(S D²u) + ⟨T, ∇u⟩`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fields::Coefficients;
use crate::geometry::DomainKind;
use crate::linalg::{dot, Point, Sym2, Vec2};
use crate::measures::{pair_with_test, BoundaryMeasure};
use crate::oracle1d::Oracle1DSolution;
use crate::par::{self, Exec};
use crate::quadrature::QuadratureSet;
use crate::solver::{fmt_f64, SolutionField};

pub const MAX_BANK_DEGREE: usize = 6;
pub const DEFAULT_BANK_DEGREE: usize = 4;

/// Polar/Gauss panels used to integrate closed-form densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadOptions {
    pub panels: usize,
    pub gauss: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions { panels: 20, gauss: 6 }
    }
}

impl QuadOptions {
    pub fn rule(&self, region: &DomainKind) -> QuadratureSet {
        match *region {
            DomainKind::Interval { a, b } => QuadratureSet::interval(a, b, self.panels, self.gauss),
            DomainKind::Disk { center, radius } => QuadratureSet::disk(center, radius, self.panels, self.gauss),
        }
    }
}

/// Something that can be integrated against test functions.
pub trait Density: Sync {
    fn value(&self, x: Point) -> Result<f64>;

    /// Quadrature points on `region` with the density's values there.
    fn samples(&self, region: &DomainKind, q: &QuadOptions, exec: Exec) -> Result<(QuadratureSet, Vec<f64>)> {
        let quad = q.rule(region);
        let values = par::map_slice(exec, &quad.points, |&x| self.value(x)).into_iter().collect::<Result<Vec<_>>>()?;
        Ok((quad, values))
    }
}

impl Density for SolutionField {
    fn value(&self, x: Point) -> Result<f64> {
        self.eval_near(x).ok_or(Error::OutsideDomain(x))
    }

    fn samples(&self, region: &DomainKind, q: &QuadOptions, exec: Exec) -> Result<(QuadratureSet, Vec<f64>)> {
        if self.mesh.domain == *region {
            let quad = self.quadrature();
            let v = self.values_at(&quad);
            return Ok((quad, v));
        }
        let quad = q.rule(region);
        let values = par::map_slice(exec, &quad.points, |&x| self.value(x)).into_iter().collect::<Result<Vec<_>>>()?;
        Ok((quad, values))
    }
}

impl Density for Oracle1DSolution {
    fn value(&self, x: Point) -> Result<f64> {
        Ok(self.eval(x[0]))
    }
}

impl Density for Expr {
    fn value(&self, x: Point) -> Result<f64> {
        let v = self.eval(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Evaluation(format!("density is not finite at {x:?}")))
        }
    }
}

/// Wraps a closure as a density.
pub struct FnDensity<F>(pub F);

impl<F: Fn(Point) -> f64 + Sync> Density for FnDensity<F> {
    fn value(&self, x: Point) -> Result<f64> {
        Ok((self.0)(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Kind {
    /// `(1 − |y|²)^power · y₁^i y₂^j` with `y = (x − c)/r`, zero for `|y| > 1`.
    Bubble { i: u32, j: u32, power: u32 },
    /// `(|y|² − 1)·r/2`, whose normal derivative is 1 on the circle.
    Normal,
    /// 1D one-sided members with unit outward derivative at α or β.
    NormalLeft,
    NormalRight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub id: String,
    /// `D` itself, or the shrunken support for compactly supported members.
    pub support: DomainKind,
    kind: Kind,
    pub normal_derivative_one: bool,
    /// For the 1D one-sided members: 0 for α, 1 for β.
    pub endpoint: Option<usize>,
}

fn center_radius(d: &DomainKind) -> (Point, f64) {
    match *d {
        DomainKind::Interval { a, b } => ([0.5 * (a + b), 0.0], 0.5 * (b - a)),
        DomainKind::Disk { center, radius } => (center, radius),
    }
}

fn powi(x: f64, k: u32) -> f64 {
    x.powi(k as i32)
}

impl TestFunction {
    fn dim(&self) -> usize {
        self.support.dim()
    }

    /// `(u, ∇u, D²u)`
    pub fn jet(&self, x: Point) -> (f64, Vec2, Sym2) {
        let (c, r) = center_radius(&self.support);
        let dim = self.dim();
        match self.kind {
            Kind::Bubble { i, j, power } => {
                let y = [(x[0] - c[0]) / r, if dim == 1 { 0.0 } else { (x[1] - c[1]) / r }];
                let s = 1.0 - y[0] * y[0] - y[1] * y[1];
                if power > 1 && s <= 0.0 {
                    return (0.0, [0.0; 2], Sym2::ZERO);
                }
                let p = power as f64;
                let sp = s.powi(power as i32);
                let sp1 = p * s.powi(power as i32 - 1);
                let sp2 = if power >= 2 { p * (p - 1.0) * s.powi(power as i32 - 2) } else { 0.0 };
                let ds = [-2.0 * y[0], -2.0 * y[1]];
                // S = s^p
                let sg = [sp1 * ds[0], sp1 * ds[1]];
                let sh = Sym2::new(sp2 * ds[0] * ds[0] - 2.0 * sp1, sp2 * ds[0] * ds[1], sp2 * ds[1] * ds[1] - 2.0 * sp1);
                let (fi, fj) = (i as f64, j as f64);
                let q = powi(y[0], i) * powi(y[1], j);
                let qg = [
                    if i > 0 { fi * powi(y[0], i - 1) * powi(y[1], j) } else { 0.0 },
                    if j > 0 { fj * powi(y[0], i) * powi(y[1], j - 1) } else { 0.0 },
                ];
                let qh = Sym2::new(
                    if i > 1 { fi * (fi - 1.0) * powi(y[0], i - 2) * powi(y[1], j) } else { 0.0 },
                    if i > 0 && j > 0 { fi * fj * powi(y[0], i - 1) * powi(y[1], j - 1) } else { 0.0 },
                    if j > 1 { fj * (fj - 1.0) * powi(y[0], i) * powi(y[1], j - 2) } else { 0.0 },
                );
                let u = sp * q;
                let g = [(sg[0] * q + sp * qg[0]) / r, (sg[1] * q + sp * qg[1]) / r];
                let h = Sym2::new(
                    sh.xx * q + 2.0 * sg[0] * qg[0] + sp * qh.xx,
                    sh.xy * q + sg[0] * qg[1] + sg[1] * qg[0] + sp * qh.xy,
                    sh.yy * q + 2.0 * sg[1] * qg[1] + sp * qh.yy,
                )
                .scaled(1.0 / (r * r));
                if dim == 1 {
                    (u, [g[0], 0.0], Sym2::new(h.xx, 0.0, 0.0))
                } else {
                    (u, g, h)
                }
            }
            Kind::Normal => {
                let y = [(x[0] - c[0]) / r, if dim == 1 { 0.0 } else { (x[1] - c[1]) / r }];
                let u = (y[0] * y[0] + y[1] * y[1] - 1.0) * 0.5 * r;
                let h = if dim == 1 { Sym2::new(1.0 / r, 0.0, 0.0) } else { Sym2::IDENTITY.scaled(1.0 / r) };
                (u, y, h)
            }
            Kind::NormalLeft | Kind::NormalRight => {
                let DomainKind::Interval { a, b } = self.support else { unreachable!() };
                let l2 = (b - a) * (b - a);
                let (p, q) = (x[0] - a, b - x[0]);
                if self.kind == Kind::NormalLeft {
                    let u = -p * q * q / l2;
                    let du = -(q * q - 2.0 * p * q) / l2;
                    let d2 = (4.0 * q - 2.0 * p) / l2;
                    (u, [du, 0.0], Sym2::new(d2, 0.0, 0.0))
                } else {
                    let u = -p * p * q / l2;
                    let du = -(2.0 * p * q - p * p) / l2;
                    let d2 = -(2.0 * q - 4.0 * p) / l2;
                    (u, [du, 0.0], Sym2::new(d2, 0.0, 0.0))
                }
            }
        }
    }

    pub fn value(&self, x: Point) -> f64 {
        self.jet(x).0
    }

    pub fn grad(&self, x: Point) -> Vec2 {
        self.jet(x).1
    }

    pub fn hess(&self, x: Point) -> Sym2 {
        self.jet(x).2
    }
}

fn monomials(dim: usize, degree: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for d in 0..=degree as u32 {
        if dim == 1 {
            out.push((d, 0));
        } else {
            for j in 0..=d {
                out.push((d - j, j));
            }
        }
    }
    out
}

fn check_degree(degree: usize) -> Result<()> {
    if degree > MAX_BANK_DEGREE {
        return Err(Error::Precondition(format!("bank degree must be at most {MAX_BANK_DEGREE} (got {degree})")));
    }
    Ok(())
}

/// Bubble times every monomial up to `degree`, plus the members with unit
/// outward normal derivative. All vanish on `∂D`.
pub fn test_bank(domain: &DomainKind, degree: usize) -> Result<Vec<TestFunction>> {
    check_degree(degree)?;
    let dim = domain.dim();
    let mut bank: Vec<TestFunction> = monomials(dim, degree)
        .into_iter()
        .map(|(i, j)| TestFunction {
            id: if dim == 1 { format!("bubble_{i}") } else { format!("bubble_{i}_{j}") },
            support: *domain,
            kind: Kind::Bubble { i, j, power: 1 },
            normal_derivative_one: false,
            endpoint: None,
        })
        .collect();
    if dim == 1 {
        for (k, kind) in [Kind::NormalLeft, Kind::NormalRight].into_iter().enumerate() {
            bank.push(TestFunction {
                id: if k == 0 { "normal_left".into() } else { "normal_right".into() },
                support: *domain,
                kind,
                normal_derivative_one: true,
                endpoint: Some(k),
            });
        }
    } else {
        bank.push(TestFunction { id: "normal".into(), support: *domain, kind: Kind::Normal, normal_derivative_one: true, endpoint: None });
    }
    Ok(bank)
}

/// `C²` members supported in the concentric copy of `D` scaled by `shrink`.
pub fn compact_bank(domain: &DomainKind, degree: usize, shrink: f64) -> Result<Vec<TestFunction>> {
    check_degree(degree)?;
    if !(shrink > 0.0 && shrink < 1.0) {
        return Err(Error::Precondition(format!("support shrink factor must lie in (0, 1) (got {shrink})")));
    }
    let (c, r) = center_radius(domain);
    let support = match domain {
        DomainKind::Interval { .. } => DomainKind::Interval { a: c[0] - shrink * r, b: c[0] + shrink * r },
        DomainKind::Disk { .. } => DomainKind::Disk { center: c, radius: shrink * r },
    };
    let dim = domain.dim();
    Ok(monomials(dim, degree)
        .into_iter()
        .map(|(i, j)| TestFunction {
            id: if dim == 1 { format!("compact_{i}") } else { format!("compact_{i}_{j}") },
            support,
            kind: Kind::Bubble { i, j, power: 3 },
            normal_derivative_one: false,
            endpoint: None,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub id: String,
    /// `∫ L_{A,b}u ϱ dx`
    pub lhs: f64,
    /// `∫ L_{G,h}u dx`
    pub rhs_interior: f64,
    /// `∫_{∂D} ⟨A∇u, ν⟩ dη`, zero for the interior identity.
    pub boundary: f64,
    pub residual: f64,
    /// `|residual|` over the sum of the absolute sizes of all terms.
    pub relative: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub identity: String,
    pub quadrature_points: usize,
    pub entries: Vec<ResidualEntry>,
    pub max_relative: f64,
    pub median_relative: f64,
    pub max_abs: f64,
}

impl ResidualReport {
    fn new(identity: &str, quadrature_points: usize, entries: Vec<ResidualEntry>) -> Self {
        let mut rel: Vec<f64> = entries.iter().map(|e| e.relative).collect();
        rel.sort_by(f64::total_cmp);
        let median = if rel.is_empty() {
            0.0
        } else if rel.len() % 2 == 1 {
            rel[rel.len() / 2]
        } else {
            0.5 * (rel[rel.len() / 2 - 1] + rel[rel.len() / 2])
        };
        ResidualReport {
            identity: identity.into(),
            quadrature_points,
            max_relative: rel.last().copied().unwrap_or(0.0),
            median_relative: median,
            max_abs: entries.iter().fold(0.0, |m, e| m.max(e.residual.abs())),
            entries,
        }
    }

    /// The entry with the largest relative residual.
    pub fn worst(&self) -> Option<&ResidualEntry> {
        self.entries.iter().max_by(|a, b| a.relative.total_cmp(&b.relative))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["function", "residual", "relative"])?;
        for e in &self.entries {
            w.write_record([e.id.clone(), fmt_f64(e.residual), fmt_f64(e.relative)])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct PointData {
    a: Sym2,
    b: Vec2,
    g: Sym2,
    h: Vec2,
}

fn l_op(s: Sym2, t: Vec2, hess: Sym2, grad: Vec2, dim: usize) -> f64 {
    let drift = if dim == 1 { t[0] * grad[0] } else { dot(t, grad) };
    s.contract(hess, dim) + drift
}

/// Quadrature size and `(lhs, rhs, scale)` per bank member.
type VolumeTerms = (usize, Vec<(f64, f64, f64)>);

fn volume_terms<C: Coefficients + ?Sized>(
    rho: &dyn Density,
    coeffs: &C,
    region: &DomainKind,
    bank: &[TestFunction],
    q: &QuadOptions,
    exec: Exec,
) -> Result<VolumeTerms> {
    let dim = region.dim();
    let (quad, values) = rho.samples(region, q, exec)?;
    let data: Vec<PointData> = par::map_slice(exec, &quad.points, |&x| -> Result<PointData> {
        Ok(PointData { a: coeffs.a(x)?, b: coeffs.b(x)?, g: coeffs.g(x)?, h: coeffs.h(x)? })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let terms = par::map_slice(exec, bank, |u| {
        let (mut lhs, mut rhs, mut scale) = (0.0, 0.0, 0.0);
        for ((x, w), (d, v)) in quad.points.iter().zip(&quad.weights).zip(data.iter().zip(&values)) {
            let (_, g, h) = u.jet(*x);
            let l = w * l_op(d.a, d.b, h, g, dim) * v;
            let r = w * l_op(d.g, d.h, h, g, dim);
            lhs += l;
            rhs += r;
            scale += l.abs() + r.abs();
        }
        (lhs, rhs, scale)
    });
    Ok((quad.len(), terms))
}

fn entry(u: &TestFunction, lhs: f64, rhs: f64, boundary: f64, scale: f64) -> ResidualEntry {
    let residual = lhs - rhs - boundary;
    let scale = scale + boundary.abs();
    let relative = if scale > 0.0 { residual.abs() / scale } else { residual.abs() };
    ResidualEntry { id: u.id.clone(), lhs, rhs_interior: rhs, boundary, residual, relative, scale }
}

/// Interior identity on `region`, without boundary term. Meaningful for
/// members that vanish to first order at `∂(region)`, e.g. [`compact_bank`].
pub fn interior_residual<C: Coefficients + ?Sized>(
    rho: &dyn Density,
    coeffs: &C,
    region: &DomainKind,
    bank: &[TestFunction],
    q: &QuadOptions,
    exec: Exec,
) -> Result<ResidualReport> {
    let (n, terms) = volume_terms(rho, coeffs, region, bank, q, exec)?;
    let entries = bank.iter().zip(terms).map(|(u, (l, r, s))| entry(u, l, r, 0.0, s)).collect();
    Ok(ResidualReport::new("interior", n, entries))
}

/// Dirichlet identity on the domain of `eta`.
pub fn dirichlet_residual<C: Coefficients + ?Sized>(
    rho: &dyn Density,
    coeffs: &C,
    eta: &BoundaryMeasure,
    bank: &[TestFunction],
    q: &QuadOptions,
    exec: Exec,
) -> Result<ResidualReport> {
    let (n, terms) = volume_terms(rho, coeffs, &eta.domain, bank, q, exec)?;
    let mut entries = Vec::with_capacity(bank.len());
    for (u, (l, r, s)) in bank.iter().zip(terms) {
        let b = pair_with_test(eta, coeffs, |x| u.grad(x))?;
        entries.push(entry(u, l, r, b, s));
    }
    Ok(ResidualReport::new("dirichlet", n, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{CoefficientSet, ScalarField};
    use crate::geometry::boundary_grid;
    use proptest::prelude::*;

    const UNIT: DomainKind = DomainKind::Disk { center: [0.0, 0.0], radius: 1.0 };

    fn fd_check(u: &TestFunction, x: Point, dim: usize) {
        let e = 1e-5;
        let (_, g, h) = u.jet(x);
        for k in 0..dim {
            let mut xp = x;
            let mut xm = x;
            xp[k] += e;
            xm[k] -= e;
            let (up, gp, _) = u.jet(xp);
            let (um, gm, _) = u.jet(xm);
            assert!((g[k] - (up - um) / (2.0 * e)).abs() < 1e-6, "{} grad", u.id);
            let row = if k == 0 { [h.xx, h.xy] } else { [h.xy, h.yy] };
            for l in 0..dim {
                assert!((row[l] - (gp[l] - gm[l]) / (2.0 * e)).abs() < 1e-5, "{} hess", u.id);
            }
        }
    }

    #[test]
    fn bank_sizes() {
        assert_eq!(test_bank(&UNIT, 0).unwrap().len(), 2);
        assert_eq!(test_bank(&UNIT, 2).unwrap().len(), 7);
        assert_eq!(test_bank(&UNIT, 4).unwrap().len(), 16);
        assert_eq!(test_bank(&DomainKind::Interval { a: 0.0, b: 1.0 }, 3).unwrap().len(), 6);
        assert!(test_bank(&UNIT, 7).is_err());
    }

    #[test]
    fn jets_match_finite_differences() {
        let d = DomainKind::Disk { center: [0.2, -0.1], radius: 1.3 };
        for u in test_bank(&d, 4).unwrap().iter().chain(&compact_bank(&d, 3, 0.9).unwrap()) {
            for x in [[0.3, 0.4], [-0.5, 0.1], [0.9, -0.6]] {
                fd_check(u, x, 2);
            }
        }
        let i = DomainKind::Interval { a: -0.5, b: 1.5 };
        for u in test_bank(&i, 4).unwrap().iter().chain(&compact_bank(&i, 3, 0.9).unwrap()) {
            for x in [-0.3, 0.2, 1.1] {
                fd_check(u, [x, 0.0], 1);
            }
        }
    }

    #[test]
    fn bank_vanishes_with_unit_normal_derivative() {
        let d = DomainKind::Disk { center: [0.5, 0.5], radius: 2.0 };
        let grid = boundary_grid(&d, 64).unwrap();
        for u in test_bank(&d, 6).unwrap() {
            for (x, nu) in grid.nodes.iter().zip(&grid.normals) {
                let (v, g, _) = u.jet(*x);
                assert!(v.abs() < 1e-10);
                // ∇u = ⟨∇u, ν⟩ν on the boundary
                let gn = dot(g, *nu);
                assert!((g[0] - gn * nu[0]).abs() < 1e-10 && (g[1] - gn * nu[1]).abs() < 1e-10);
                if u.normal_derivative_one {
                    assert!((gn - 1.0).abs() < 1e-12);
                }
            }
        }
        let i = DomainKind::Interval { a: 0.0, b: 2.0 };
        for u in test_bank(&i, 4).unwrap() {
            assert!(u.value([0.0, 0.0]).abs() < 1e-12 && u.value([2.0, 0.0]).abs() < 1e-12);
            if let Some(k) = u.endpoint {
                let (x, nu) = if k == 0 { (0.0, -1.0) } else { (2.0, 1.0) };
                assert!((u.grad([x, 0.0])[0] * nu - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_density_dirichlet_identity() {
        let c = CoefficientSet::identity(DomainKind::Disk { center: [0.0, 0.0], radius: 2.0 });
        let eta = BoundaryMeasure::uniform(UNIT, 3.0);
        let rho = FnDensity(|_| 3.0);
        let bank = test_bank(&UNIT, 4).unwrap();
        let r = dirichlet_residual(&rho, &c, &eta, &bank, &QuadOptions::default(), Exec::Parallel).unwrap();
        assert!(r.max_relative < 1e-10, "{:?}", r.worst());
    }

    #[test]
    fn constant_density_interior_identity_on_compact_members() {
        let c = CoefficientSet::identity(DomainKind::Disk { center: [0.0, 0.0], radius: 2.0 });
        let bank = compact_bank(&UNIT, 4, 0.9).unwrap();
        let r = interior_residual(&FnDensity(|_| 1.0), &c, &UNIT, &bank, &QuadOptions::default(), Exec::Sequential).unwrap();
        assert!(r.max_abs < 1e-8, "{:?}", r.worst());
    }

    #[test]
    fn manufactured_interior_identity() {
        let omega = DomainKind::Disk { center: [0.0, 0.0], radius: 2.0 };
        let rho = Expr::parse("exp(-(x1^2 + x2^2))").unwrap();
        let c = CoefficientSet::manufactured(omega, &rho, [ScalarField::constant(1.0), ScalarField::constant(0.0), ScalarField::constant(1.0)], [ScalarField::constant(1.0), ScalarField::constant(1.0)]).unwrap();
        let r = interior_residual(&rho, &c, &UNIT, &test_bank(&UNIT, 4).unwrap(), &QuadOptions::default(), Exec::Parallel).unwrap();
        assert!(r.max_relative < 1e-10);
    }

    #[test]
    fn reciprocal_step_density() {
        let om = DomainKind::Interval { a: -1.0, b: 2.0 };
        let d = DomainKind::Interval { a: 0.0, b: 1.0 };
        for target in ["2", "1 + 0.5*sin(10*x1)", "1 + step(x1 - 0.37)"] {
            let c = crate::oracle1d::reciprocal_example(om, target).unwrap();
            let rho = Expr::parse(target).unwrap();
            let r = interior_residual(&rho, &c, &d, &compact_bank(&d, 4, 0.9).unwrap(), &QuadOptions { panels: 40, gauss: 8 }, Exec::Sequential).unwrap();
            assert!(r.max_abs < 1e-8, "{target}: {:?}", r.worst());
        }
    }

    #[test]
    fn quadrature_doubling_is_stable() {
        let omega = DomainKind::Disk { center: [0.0, 0.0], radius: 2.0 };
        let c = CoefficientSet::from_strs(omega, ["1 + 0.2*x1", "0", "1"], ["x2", "0"], ["0", "0", "0"], ["0", "0"]).unwrap();
        // not a solution, so residuals are of order one and the comparison is meaningful
        let rho = Expr::parse("1 + x1*x2").unwrap();
        let bank = test_bank(&UNIT, 3).unwrap();
        let eta = BoundaryMeasure::uniform(UNIT, 1.0);
        let r1 = dirichlet_residual(&rho, &c, &eta, &bank, &QuadOptions { panels: 10, gauss: 4 }, Exec::Parallel).unwrap();
        let r2 = dirichlet_residual(&rho, &c, &eta, &bank, &QuadOptions { panels: 10, gauss: 8 }, Exec::Parallel).unwrap();
        for (a, b) in r1.entries.iter().zip(&r2.entries) {
            if b.residual.abs() > 1e-4 {
                assert!((a.residual - b.residual).abs() < 0.1 * b.residual.abs());
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn residual_is_linear_in_the_density(s in -3.0f64..3.0, t in -3.0f64..3.0) {
            let omega = DomainKind::Disk { center: [0.0, 0.0], radius: 2.0 };
            let c = CoefficientSet::from_strs(omega, ["1", "0.1", "1"], ["0.5", "0"], ["0", "0", "0"], ["0", "0"]).unwrap();
            let q = QuadOptions { panels: 4, gauss: 4 };
            let bank = test_bank(&UNIT, 2).unwrap();
            let z = BoundaryMeasure::zero(UNIT);
            let f = |x: Point| 1.0 + x[0];
            let g = |x: Point| x[1] * x[1];
            let rf = dirichlet_residual(&FnDensity(f), &c, &z, &bank, &q, Exec::Sequential).unwrap();
            let rg = dirichlet_residual(&FnDensity(g), &c, &z, &bank, &q, Exec::Sequential).unwrap();
            let rc = dirichlet_residual(&FnDensity(|x| s * f(x) + t * g(x)), &c, &z, &bank, &q, Exec::Sequential).unwrap();
            for ((a, b), m) in rf.entries.iter().zip(&rg.entries).zip(&rc.entries) {
                prop_assert!((s * a.residual + t * b.residual - m.residual).abs() < 1e-12 * (1.0 + m.scale));
            }
        }
    }
}
