//! Signed measures on `∂D`: atoms plus a piecewise-linear density with
//! respect to surface measure.
//!
//! On a disk the boundary parameter is the angle in `[0, 2π)`. On an
//! interval `∂D = {α, β}`, `σ` is the counting measure, atoms sit at the
//! endpoint coordinates and the density is the pair of endpoint values, so
//! every measure reduces to two endpoint masses.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::Coefficients;
use crate::geometry::{BoundaryGrid, DomainKind};
use crate::linalg::{dot, Point, Vec2};
use crate::mollify::{make_mollifier, MollifierKind};
use crate::quadrature::gauss_on;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub param: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMeasure {
    pub domain: DomainKind,
    pub atoms: Vec<Atom>,
    /// Density values at equispaced parameters `2πk/m` (disk) or at
    /// `(α, β)` (interval). Empty means no density part.
    pub density: Vec<f64>,
}

fn wrap_angle(s: f64) -> f64 {
    let t = s.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Circular distance between two angles.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

impl BoundaryMeasure {
    pub fn new(domain: DomainKind, atoms: Vec<Atom>, density: Vec<f64>) -> Result<Self> {
        if atoms.iter().any(|a| !a.weight.is_finite() || !a.param.is_finite()) || density.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("boundary measure entries must be finite".into()));
        }
        let atoms = match domain {
            DomainKind::Interval { a, b } => {
                let tol = 1e-12 * (b - a);
                for at in &atoms {
                    if (at.param - a).abs() > tol && (at.param - b).abs() > tol {
                        return Err(Error::Precondition(format!("atom at {} is not an endpoint of ({a}, {b})", at.param)));
                    }
                }
                if !density.is_empty() && density.len() != 2 {
                    return Err(Error::Precondition("an interval density has exactly two endpoint values".into()));
                }
                atoms
            }
            DomainKind::Disk { .. } => {
                if density.len() == 1 || density.len() == 2 {
                    return Err(Error::Precondition("a circle density needs at least 3 nodes".into()));
                }
                atoms.into_iter().map(|a| Atom { param: wrap_angle(a.param), weight: a.weight }).collect()
            }
        };
        Ok(BoundaryMeasure { domain, atoms, density })
    }

    pub fn zero(domain: DomainKind) -> Self {
        BoundaryMeasure { domain, atoms: Vec::new(), density: Vec::new() }
    }

    /// `c·σ`
    pub fn uniform(domain: DomainKind, c: f64) -> Self {
        let density = match domain {
            DomainKind::Interval { .. } => vec![c, c],
            DomainKind::Disk { .. } => vec![c; 16],
        };
        BoundaryMeasure { domain, atoms: Vec::new(), density }
    }

    pub fn atom(domain: DomainKind, param: f64, weight: f64) -> Result<Self> {
        Self::new(domain, vec![Atom { param, weight }], Vec::new())
    }

    /// Density sampled from `f(s)` at `m` equispaced parameters.
    pub fn from_density_fn<F: Fn(f64) -> f64>(domain: DomainKind, m: usize, f: F) -> Result<Self> {
        let density = match domain {
            DomainKind::Interval { a, b } => vec![f(a), f(b)],
            DomainKind::Disk { .. } => (0..m).map(|k| f(TAU * k as f64 / m as f64)).collect(),
        };
        Self::new(domain, Vec::new(), density)
    }

    fn radius(&self) -> f64 {
        match self.domain {
            DomainKind::Disk { radius, .. } => radius,
            DomainKind::Interval { .. } => 1.0,
        }
    }

    /// Piecewise-linear density at parameter `s` (disk only).
    pub fn density_at(&self, s: f64) -> f64 {
        let m = self.density.len();
        if m == 0 {
            return 0.0;
        }
        if let DomainKind::Interval { a, .. } = self.domain {
            return if (s - a).abs() < 1e-12 { self.density[0] } else { self.density[1] };
        }
        let u = wrap_angle(s) / TAU * m as f64;
        let k = (u.floor() as usize).min(m - 1);
        let t = u - k as f64;
        (1.0 - t) * self.density[k] + t * self.density[(k + 1) % m]
    }

    /// `(m_α, m_β)` for an interval.
    pub fn endpoint_masses(&self) -> [f64; 2] {
        let DomainKind::Interval { a, .. } = self.domain else {
            return [f64::NAN; 2];
        };
        let mut out = [0.0; 2];
        if self.density.len() == 2 {
            out = [self.density[0], self.density[1]];
        }
        for at in &self.atoms {
            let k = if (at.param - a).abs() < (at.param - self.endpoint_b()).abs() { 0 } else { 1 };
            out[k] += at.weight;
        }
        out
    }

    fn endpoint_b(&self) -> f64 {
        match self.domain {
            DomainKind::Interval { b, .. } => b,
            _ => f64::NAN,
        }
    }

    pub fn total_mass(&self) -> f64 {
        if let DomainKind::Interval { .. } = self.domain {
            let m = self.endpoint_masses();
            return m[0] + m[1];
        }
        let atoms: f64 = self.atoms.iter().map(|a| a.weight).sum();
        let m = self.density.len();
        if m == 0 {
            return atoms;
        }
        atoms + self.density.iter().sum::<f64>() * TAU * self.radius() / m as f64
    }

    /// `Σ|mᵢ| + ∫|density| dσ`, exact for piecewise-linear densities.
    pub fn total_variation(&self) -> f64 {
        if let DomainKind::Interval { .. } = self.domain {
            let m = self.endpoint_masses();
            return m[0].abs() + m[1].abs();
        }
        let atoms: f64 = self.atoms.iter().map(|a| a.weight.abs()).sum();
        let m = self.density.len();
        if m == 0 {
            return atoms;
        }
        let len = TAU * self.radius() / m as f64;
        let mut tv = 0.0;
        for k in 0..m {
            let (a, b) = (self.density[k], self.density[(k + 1) % m]);
            tv += if a * b >= 0.0 {
                0.5 * len * (a.abs() + b.abs())
            } else {
                0.5 * len * (a * a + b * b) / (a.abs() + b.abs())
            };
        }
        atoms + tv
    }

    /// `∫ f dη` for `f` given as a function of the boundary parameter.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        if let DomainKind::Interval { a, b } = self.domain {
            let m = self.endpoint_masses();
            return m[0] * f(a) + m[1] * f(b);
        }
        let mut s: f64 = self.atoms.iter().map(|a| a.weight * f(a.param)).sum();
        let m = self.density.len();
        if m == 0 {
            return s;
        }
        let dt = TAU / m as f64;
        let r = self.radius();
        let rule = gauss_on(0.0, 1.0, 4);
        for k in 0..m {
            let (v0, v1) = (self.density[k], self.density[(k + 1) % m]);
            for &(t, w) in &rule {
                s += w * dt * r * ((1.0 - t) * v0 + t * v1) * f((k as f64 + t) * dt);
            }
        }
        s
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        BoundaryMeasure {
            domain: self.domain,
            atoms: self.atoms.iter().map(|a| Atom { param: a.param, weight: lambda * a.weight }).collect(),
            density: self.density.iter().map(|v| lambda * v).collect(),
        }
    }

    /// Sum of two measures. Densities must share a grid (or one be empty).
    pub fn plus(&self, other: &Self) -> Result<Self> {
        if self.domain != other.domain {
            return Err(Error::Precondition("measures live on different boundaries".into()));
        }
        let density = match (self.density.len(), other.density.len()) {
            (0, _) => other.density.clone(),
            (_, 0) => self.density.clone(),
            (a, b) if a == b => self.density.iter().zip(&other.density).map(|(x, y)| x + y).collect(),
            _ => return Err(Error::Precondition("density grids differ".into())),
        };
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        Ok(BoundaryMeasure { domain: self.domain, atoms, density })
    }

    pub fn is_nonnegative(&self) -> bool {
        self.atoms.iter().all(|a| a.weight >= 0.0) && self.density.iter().all(|v| *v >= 0.0)
    }

    pub fn has_atoms(&self) -> bool {
        self.atoms.iter().any(|a| a.weight != 0.0)
    }
}

/// `κ = ⟨Gν, ν⟩ / ⟨Aν, ν⟩` at boundary nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaDensity {
    pub values: Vec<f64>,
}

pub fn kappa_at<C: Coefficients + ?Sized>(coeffs: &C, x: Point, nu: Vec2) -> Result<f64> {
    let dim = coeffs.dim();
    let an = coeffs.a(x)?.mul_vec(nu);
    let gn = coeffs.g(x)?.mul_vec(nu);
    let den = if dim == 1 { an[0] * nu[0] } else { dot(an, nu) };
    let num = if dim == 1 { gn[0] * nu[0] } else { dot(gn, nu) };
    if !(den > 0.0) {
        return Err(Error::Ellipticity { point: x, lambda_min: den });
    }
    Ok(num / den)
}

pub fn kappa<C: Coefficients + ?Sized>(coeffs: &C, boundary: &BoundaryGrid) -> Result<KappaDensity> {
    let values = boundary
        .nodes
        .iter()
        .zip(&boundary.normals)
        .map(|(&x, &nu)| kappa_at(coeffs, x, nu))
        .collect::<Result<Vec<f64>>>()?;
    Ok(KappaDensity { values })
}

/// Smooth density approximating `η` by periodic convolution in the angle
/// with a kernel of angular half-width `eps`. The output grid has
/// `m_min` nodes rounded up to a multiple of the input density grid, so
/// the signed mass is conserved exactly. Intervals are returned unchanged.
pub fn mollify_measure(eta: &BoundaryMeasure, eps: f64, kind: MollifierKind, m_min: usize) -> Result<BoundaryMeasure> {
    if let DomainKind::Interval { .. } = eta.domain {
        return Ok(eta.clone());
    }
    if !(eps > 0.0) {
        return Err(Error::Precondition(format!("mollification width must be positive (got {eps})")));
    }
    if eps >= PI {
        return Err(Error::Precondition(format!("mollification width {eps} ≥ π wraps the circle")));
    }
    let base = eta.density.len().max(1);
    let m = base * m_min.max(base).div_ceil(base);
    let dt = TAU / m as f64;
    if eps < 2.0 * dt {
        return Err(Error::Precondition(format!(
            "mollification width {eps} is unresolved by {m} boundary nodes (needs at least 2 nodes per half-width)"
        )));
    }
    let psi = make_mollifier(kind, eps, 1)?;
    let r = eta.radius();
    let mut out = vec![0.0; m];
    if !eta.density.is_empty() {
        let fine: Vec<f64> = (0..m).map(|k| eta.density_at(k as f64 * dt)).collect();
        let half = (eps / dt).ceil() as usize;
        let mut c: Vec<(isize, f64)> = (-(half as isize)..=half as isize)
            .map(|j| (j, psi.value([j as f64 * dt, 0.0])))
            .filter(|(_, v)| *v > 0.0)
            .collect();
        let total: f64 = c.iter().map(|x| x.1).sum();
        c.iter_mut().for_each(|x| x.1 /= total);
        for (k, o) in out.iter_mut().enumerate() {
            for &(j, w) in &c {
                *o += w * fine[(k as isize - j).rem_euclid(m as isize) as usize];
            }
        }
    }
    for at in &eta.atoms {
        let vals: Vec<f64> = (0..m).map(|k| psi.value([angle_distance(k as f64 * dt, at.param), 0.0])).collect();
        let total: f64 = vals.iter().sum::<f64>() * dt * r;
        for (o, v) in out.iter_mut().zip(vals) {
            *o += at.weight * v / total;
        }
    }
    Ok(BoundaryMeasure { domain: eta.domain, atoms: Vec::new(), density: out })
}

/// Number of Fourier modes in the bounded-Lipschitz dictionary.
pub const BL_MODES: usize = 32;

/// Bounded-Lipschitz distance restricted to a fixed dictionary of test
/// functions, hence a lower bound of the true metric. On a circle the
/// dictionary is `1` and `min(1, R/k)·{cos, sin}(kθ)` for `k ≤ 32`, each
/// bounded by 1 and 1-Lipschitz in arc length. On an interval the
/// supremum over all admissible endpoint values is computed exactly.
pub fn bl_distance(eta1: &BoundaryMeasure, eta2: &BoundaryMeasure) -> f64 {
    if let DomainKind::Interval { a, b } = eta1.domain {
        let (m1, m2) = (eta1.endpoint_masses(), eta2.endpoint_masses());
        let d = [m1[0] - m2[0], m1[1] - m2[1]];
        let l = b - a;
        let mut cands = vec![[1.0, 1.0], [-1.0, -1.0]];
        if l >= 2.0 {
            cands.extend([[1.0, -1.0], [-1.0, 1.0]]);
        } else {
            cands.extend([[1.0, 1.0 - l], [1.0 - l, 1.0], [-1.0, l - 1.0], [l - 1.0, -1.0]]);
        }
        return cands.iter().map(|f| (f[0] * d[0] + f[1] * d[1]).abs()).fold(0.0, f64::max);
    }
    let r = eta1.radius();
    let diff = |f: &dyn Fn(f64) -> f64| (eta1.integrate(f) - eta2.integrate(f)).abs();
    let mut best = diff(&|_| 1.0);
    for k in 1..=BL_MODES {
        let amp = (r / k as f64).min(1.0);
        let kf = k as f64;
        best = best.max(diff(&|s| amp * (kf * s).cos()));
        best = best.max(diff(&|s| amp * (kf * s).sin()));
    }
    best
}

/// `∫_{∂D} ⟨A∇u, ν⟩ dη` with atoms summed exactly and the density part by
/// boundary quadrature.
pub fn pair_with_test<C, G>(eta: &BoundaryMeasure, coeffs: &C, grad_u: G) -> Result<f64>
where
    C: Coefficients + ?Sized,
    G: Fn(Point) -> Vec2,
{
    let dim = coeffs.dim();
    let flux = |x: Point, nu: Vec2| -> Result<f64> {
        let an = coeffs.a(x)?.mul_vec(grad_u(x));
        Ok(if dim == 1 { an[0] * nu[0] } else { dot(an, nu) })
    };
    let point = |s: f64| -> (Point, Vec2) {
        match eta.domain {
            DomainKind::Interval { a, b } => {
                if (s - a).abs() <= (s - b).abs() {
                    ([a, 0.0], [-1.0, 0.0])
                } else {
                    ([b, 0.0], [1.0, 0.0])
                }
            }
            DomainKind::Disk { center, radius } => {
                let (sn, cs) = s.sin_cos();
                ([center[0] + radius * cs, center[1] + radius * sn], [cs, sn])
            }
        }
    };
    let mut err = None;
    let total = eta.integrate(|s| {
        let (x, nu) = point(s);
        flux(x, nu).unwrap_or_else(|e| {
            err.get_or_insert(e);
            0.0
        })
    });
    match err {
        Some(e) => Err(e),
        None => Ok(total),
    }
}
