//! Exact 1D solutions by integrating the equation twice and shooting on
//! the integration constant.
//!
//! With `w = ϱA − G` the 1D equation reads `w′ = (b/A)(w + G) − h + c₁`.
//! The map `c₁ ↦ w(β)` is affine, so two linear solves fix `c₁`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::fields::{CoefficientSet, Coefficients, ScalarField};
use crate::geometry::DomainKind;
use crate::measures::BoundaryMeasure;
use crate::solver::fmt_f64;

pub const DEFAULT_STEPS: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Oracle1DSolution {
    pub alpha: f64,
    pub beta: f64,
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    /// Shooting constant `c₁`.
    pub c1: f64,
    pub eta: [f64; 2],
    pub kappa: [f64; 2],
}

impl Oracle1DSolution {
    /// Linear interpolation on the RK4 grid, clamped to `[α, β]`.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len() - 1;
        let t = ((x - self.alpha) / (self.beta - self.alpha) * n as f64).clamp(0.0, n as f64);
        let k = (t.floor() as usize).min(n - 1);
        let s = t - k as f64;
        (1.0 - s) * self.values[k] + s * self.values[k + 1]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "rho"])?;
        for (x, v) in self.xs.iter().zip(&self.values) {
            w.write_record([fmt_f64(*x), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Sample {
    a: f64,
    b: f64,
    g: f64,
    h: f64,
}

fn sample<C: Coefficients + ?Sized>(c: &C, x: f64) -> Result<Sample> {
    let a = c.a([x, 0.0])?.xx;
    if !(a > 0.0) {
        return Err(Error::Ellipticity { point: [x, 0.0], lambda_min: a });
    }
    Ok(Sample { a, b: c.b([x, 0.0])?[0], g: c.g([x, 0.0])?.xx, h: c.h([x, 0.0])?[0] })
}

/// Solves the 1D Dirichlet problem on `domain` with endpoint masses of
/// `eta`, using RK4 with `steps ≥ 10⁴` fixed steps.
pub fn exact_solve_1d<C: Coefficients + ?Sized>(coeffs: &C, domain: &DomainKind, eta: &BoundaryMeasure, steps: usize) -> Result<Oracle1DSolution> {
    let DomainKind::Interval { a: alpha, b: beta } = *domain else {
        return Err(Error::Unsupported("the 1D oracle needs an interval".into()));
    };
    if coeffs.dim() != 1 || eta.domain != *domain {
        return Err(Error::Precondition("1D oracle needs 1D coefficients and a measure on the same interval".into()));
    }
    let steps = steps.max(10_000);
    let dx = (beta - alpha) / steps as f64;
    let xs: Vec<f64> = (0..=steps).map(|k| alpha + k as f64 * dx).collect();
    // samples at nodes and midpoints
    let nodes: Vec<Sample> = xs.iter().map(|&x| sample(coeffs, x)).collect::<Result<_>>()?;
    let mids: Vec<Sample> = xs[..steps].iter().map(|&x| sample(coeffs, x + 0.5 * dx)).collect::<Result<_>>()?;
    let rhs = |s: &Sample, w: f64, c1: f64| s.b / s.a * (w + s.g) - s.h + c1;
    let [eta_a, eta_b] = eta.endpoint_masses();
    let w0 = nodes[0].a * eta_a;
    let shoot = |c1: f64| -> Vec<f64> {
        let mut w = Vec::with_capacity(steps + 1);
        w.push(w0);
        for k in 0..steps {
            let y = w[k];
            let (s0, sm, s1) = (&nodes[k], &mids[k], &nodes[k + 1]);
            let k1 = rhs(s0, y, c1);
            let k2 = rhs(sm, y + 0.5 * dx * k1, c1);
            let k3 = rhs(sm, y + 0.5 * dx * k2, c1);
            let k4 = rhs(s1, y + dx * k3, c1);
            w.push(y + dx / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
        }
        w
    };
    let wa = shoot(0.0);
    let wb = shoot(1.0);
    let slope = wb[steps] - wa[steps];
    assert!(slope.abs() > 0.0, "degenerate shooting map");
    let target = nodes[steps].a * eta_b;
    let c1 = (target - wa[steps]) / slope;
    let mut values: Vec<f64> = (0..=steps).map(|k| (wa[k] + c1 * (wb[k] - wa[k]) + nodes[k].g) / nodes[k].a).collect();
    // pin the endpoints exactly; the interior is untouched
    let kappa = [nodes[0].g / nodes[0].a, nodes[steps].g / nodes[steps].a];
    values[0] = eta_a + kappa[0];
    values[steps] = eta_b + kappa[1];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("oracle produced non-finite values".into()));
    }
    Ok(Oracle1DSolution { alpha, beta, xs, values, c1, eta: [eta_a, eta_b], kappa })
}

/// `A = 1/ϱ`, `b = G = h = 0` on `omega`, for a target density bounded
/// above and away from zero (checked on a fine sample).
pub fn reciprocal_example(omega: DomainKind, rho_target: &str) -> Result<CoefficientSet> {
    let DomainKind::Interval { a, b } = omega else {
        return Err(Error::Unsupported("the reciprocal example lives on an interval".into()));
    };
    let rho = Expr::parse(rho_target)?;
    let n = 8192;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..=n {
        let v = rho.eval([a + (b - a) * k as f64 / n as f64, 0.0]);
        lo = lo.min(v);
        hi = hi.max(if v.is_finite() { v } else { f64::INFINITY });
    }
    if !(lo > 0.0) || !hi.is_finite() {
        return Err(Error::Precondition(format!("target density must satisfy 0 < m ≤ ϱ ≤ M (sampled range [{lo}, {hi}])")));
    }
    let inv = ScalarField::parse(&format!("1/({rho_target})"))?;
    let mut c = CoefficientSet::identity(omega);
    c.a = [inv, ScalarField::constant(0.0), ScalarField::constant(1.0)];
    Ok(c)
}
