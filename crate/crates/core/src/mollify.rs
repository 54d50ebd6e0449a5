//! Mollifiers and admissible (smoothed) coefficient sequences.
//!
//! A level `n` replaces `A, b, G, h` by their convolutions with `ψ_{1/n}`:
//! `A` is extended by the identity outside `Ω`, the other fields by zero,
//! and `b, G, h` are cut off to `Ω_n` first. Derivatives come from
//! convolving with the differentiated kernel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::fields::{CoefficientSet, Coefficients};
use crate::geometry::{inner_cutoff, Domain, DomainKind, InnerCutoff};
use crate::linalg::{norm, Point, Sym2, Vec2};
use crate::par::{self, Exec};
use crate::quadrature::{gauss_on, QuadratureSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MollifierKind {
    #[default]
    StandardBump,
    PolynomialBump,
}

impl MollifierKind {
    /// Profile `F(s)` with `ψ(z) ∝ F(|z|²)`, and its first two derivatives.
    fn profile(self, s: f64) -> (f64, f64, f64) {
        if s >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let t = 1.0 - s;
        match self {
            MollifierKind::StandardBump => {
                let f = (-1.0 / t).exp();
                let f1 = -f / (t * t);
                let f2 = f * (1.0 / t.powi(4) - 2.0 / t.powi(3));
                (f, f1, f2)
            }
            MollifierKind::PolynomialBump => (t.powi(4), -4.0 * t.powi(3), 12.0 * t * t),
        }
    }
}

/// Radially symmetric unit-mass kernel supported in the ball of radius `ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub kind: MollifierKind,
    pub eps: f64,
    pub dim: usize,
    /// Integral of the unscaled profile over the unit ball.
    pub normalization: f64,
}

pub fn make_mollifier(kind: MollifierKind, eps: f64, dim: usize) -> Result<Mollifier> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Precondition(format!("mollifier width must be positive (got {eps})")));
    }
    if dim != 1 && dim != 2 {
        return Err(Error::Unsupported(format!("dimension {dim}")));
    }
    let panels = 64;
    let mut c = 0.0;
    for k in 0..panels {
        for (r, w) in gauss_on(k as f64 / panels as f64, (k + 1) as f64 / panels as f64, 10) {
            let f = kind.profile(r * r).0;
            c += if dim == 1 { 2.0 * w * f } else { 2.0 * std::f64::consts::PI * r * w * f };
        }
    }
    Ok(Mollifier { kind, eps, dim, normalization: c })
}

impl Mollifier {
    fn scale(&self) -> f64 {
        self.eps.powi(self.dim as i32) * self.normalization
    }

    pub fn value(&self, z: Vec2) -> f64 {
        let s = (z[0] * z[0] + z[1] * z[1]) / (self.eps * self.eps);
        self.kind.profile(s).0 / self.scale()
    }

    pub fn gradient(&self, z: Vec2) -> Vec2 {
        let u = [z[0] / self.eps, z[1] / self.eps];
        let (_, f1, _) = self.kind.profile(u[0] * u[0] + u[1] * u[1]);
        let c = 2.0 * f1 / (self.scale() * self.eps);
        [c * u[0], c * u[1]]
    }

    /// Second derivatives `(∂11, ∂12, ∂22)`.
    pub fn hessian(&self, z: Vec2) -> [f64; 3] {
        let u = [z[0] / self.eps, z[1] / self.eps];
        let (_, f1, f2) = self.kind.profile(u[0] * u[0] + u[1] * u[1]);
        let c = 1.0 / (self.scale() * self.eps * self.eps);
        [
            c * (2.0 * f1 + 4.0 * u[0] * u[0] * f2),
            c * 4.0 * u[0] * u[1] * f2,
            c * (2.0 * f1 + 4.0 * u[1] * u[1] * f2),
        ]
    }
}

/// Discrete convolution weights on a midpoint sub-grid of the kernel ball.
///
/// Weights are rescaled so the stencil reproduces constants and affine
/// functions exactly, first derivatives of quadratics exactly, and second
/// derivatives of quadratics exactly.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub offsets: Vec<Vec2>,
    pub w: Vec<f64>,
    pub dw: Vec<[f64; 2]>,
    /// `(∂11, ∂12, ∂22)`
    pub d2w: Vec<[f64; 3]>,
}

pub const DEFAULT_STENCIL_RES: usize = 8;

impl Stencil {
    /// `res` sub-grid points per kernel radius.
    pub fn new(m: &Mollifier, res: usize) -> Stencil {
        let res = res.max(2) as i64;
        let s = m.eps / res as f64;
        let cell = s.powi(m.dim as i32);
        let mut offsets = Vec::new();
        let jr = if m.dim == 1 { 0..1 } else { -res..res };
        for j in jr {
            for i in -res..res {
                let z = [(i as f64 + 0.5) * s, if m.dim == 1 { 0.0 } else { (j as f64 + 0.5) * s }];
                if norm(z) < m.eps {
                    offsets.push(z);
                }
            }
        }
        let mut w: Vec<f64> = offsets.iter().map(|&z| m.value(z) * cell).collect();
        let mut dw: Vec<[f64; 2]> = offsets
            .iter()
            .map(|&z| {
                let g = m.gradient(z);
                [g[0] * cell, g[1] * cell]
            })
            .collect();
        let mut d2w: Vec<[f64; 3]> = offsets
            .iter()
            .map(|&z| {
                let h = m.hessian(z);
                [h[0] * cell, h[1] * cell, h[2] * cell]
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        for j in 0..m.dim {
            let moment: f64 = offsets.iter().zip(&dw).map(|(z, d)| -z[j] * d[j]).sum();
            dw.iter_mut().for_each(|d| d[j] /= moment);
        }
        // diagonal second-derivative weights: add w·(α + β z1² + γ z2²) so the
        // moments against 1, z1²/2 and z2²/2 match those of ∂_jj
        let diag: &[(usize, usize)] = if m.dim == 1 { &[(0, 0)] } else { &[(0, 0), (2, 1)] };
        let basis = |z: &Vec2| [1.0, z[0] * z[0], z[1] * z[1]];
        let tests = |z: &Vec2| [1.0, 0.5 * z[0] * z[0], 0.5 * z[1] * z[1]];
        let nb = if m.dim == 1 { 2 } else { 3 };
        let mut gram = [[0.0; 3]; 3];
        for (z, wi) in offsets.iter().zip(&w) {
            let (b, t) = (basis(z), tests(z));
            for r in 0..nb {
                for c in 0..nb {
                    gram[r][c] += wi * t[r] * b[c];
                }
            }
        }
        for &(k, axis) in diag {
            let mut rhs = [0.0; 3];
            rhs[1 + axis] = 1.0;
            for (z, d) in offsets.iter().zip(&d2w) {
                let t = tests(z);
                for r in 0..nb {
                    rhs[r] -= t[r] * d[k];
                }
            }
            let coef = solve_small(&gram, &rhs, nb);
            for ((z, d), wi) in offsets.iter().zip(d2w.iter_mut()).zip(&w) {
                let b = basis(z);
                d[k] += wi * (0..nb).map(|c| coef[c] * b[c]).sum::<f64>();
            }
        }
        if m.dim == 2 {
            let moment: f64 = offsets.iter().zip(&d2w).map(|(z, d)| z[0] * z[1] * d[1]).sum();
            d2w.iter_mut().for_each(|d| d[1] /= moment);
        }
        Stencil { offsets, w, dw, d2w }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Gaussian elimination with partial pivoting on the leading `n×n` block.
fn solve_small(a: &[[f64; 3]; 3], b: &[f64; 3], n: usize) -> [f64; 3] {
    let mut m = *a;
    let mut x = *b;
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap_or(col);
        m.swap(col, piv);
        x.swap(col, piv);
        for r in (col + 1)..n {
            let f = m[r][col] / m[col][col];
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
            x[r] -= f * x[col];
        }
    }
    for r in (0..n).rev() {
        let mut v = x[r];
        for c in (r + 1)..n {
            v -= m[r][c] * x[c];
        }
        x[r] = v / m[r][r];
    }
    x
}

/// Value, gradient and `(∂11, ∂12, ∂22)` of `f * ψ` at `x`.
pub fn convolve<F: Fn(Point) -> f64>(f: F, stencil: &Stencil, x: Point) -> (f64, Vec2, [f64; 3]) {
    let mut v = 0.0;
    let mut g = [0.0; 2];
    let mut h = [0.0; 3];
    for k in 0..stencil.len() {
        let z = stencil.offsets[k];
        let fy = f([x[0] - z[0], x[1] - z[1]]);
        if fy == 0.0 {
            continue;
        }
        v += stencil.w[k] * fy;
        g[0] += stencil.dw[k][0] * fy;
        g[1] += stencil.dw[k][1] * fy;
        for c in 0..3 {
            h[c] += stencil.d2w[k][c] * fy;
        }
    }
    (v, g, h)
}

/// Everything the solver reads from a level at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LevelSample {
    pub a: Sym2,
    /// `(div A)_i = Σ_j ∂_j a^{ij}`
    pub div_a: Vec2,
    /// `Σ_ij ∂_i ∂_j a^{ij}`
    pub div2_a: f64,
    pub b: Vec2,
    pub div_b: f64,
    pub g: Sym2,
    pub div_g: Vec2,
    pub div2_g: f64,
    pub h: Vec2,
    pub div_h: f64,
}

const SAMPLE_LEN: usize = 18;

impl LevelSample {
    fn to_array(self) -> [f64; SAMPLE_LEN] {
        [
            self.a.xx, self.a.xy, self.a.yy, self.div_a[0], self.div_a[1], self.div2_a, self.b[0], self.b[1], self.div_b,
            self.g.xx, self.g.xy, self.g.yy, self.div_g[0], self.div_g[1], self.div2_g, self.h[0], self.h[1], self.div_h,
        ]
    }

    fn from_array(v: &[f64]) -> Self {
        LevelSample {
            a: Sym2::new(v[0], v[1], v[2]),
            div_a: [v[3], v[4]],
            div2_a: v[5],
            b: [v[6], v[7]],
            div_b: v[8],
            g: Sym2::new(v[9], v[10], v[11]),
            div_g: [v[12], v[13]],
            div2_g: v[14],
            h: [v[15], v[16]],
            div_h: v[17],
        }
    }

    fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// `b̃ = b − div A`
    pub fn drift(&self) -> Vec2 {
        [self.b[0] - self.div_a[0], self.b[1] - self.div_a[1]]
    }

    /// `div b̃ = div b − div² A`
    pub fn div_drift(&self) -> f64 {
        self.div_b - self.div2_a
    }

    /// `r = div G − h`
    pub fn flux(&self) -> Vec2 {
        [self.div_g[0] - self.h[0], self.div_g[1] - self.h[1]]
    }

    /// `div r = div² G − div h`
    pub fn div_flux(&self) -> f64 {
        self.div2_g - self.div_h
    }
}

/// How a level is obtained from the original coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Convolution with `ψ_{1/n}` on a tensor grid.
    #[default]
    Mollify,
    /// The constant sequence `Aₙ = A`, valid for smooth closed-form data;
    /// derivatives are symbolic.
    Exact,
}

/// Symbolic derivatives for [`Smoothing::Exact`].
#[derive(Debug, Clone)]
struct ExactFields {
    dim: usize,
    exprs: Vec<Expr>,
}

impl ExactFields {
    fn new(c: &CoefficientSet) -> Result<Self> {
        if !c.is_smooth_closed_form() {
            return Err(Error::Unsupported("exact smoothing needs smooth closed-form coefficients".into()));
        }
        let e = |f: &crate::fields::ScalarField| f.as_expr().cloned().unwrap_or(Expr::Const(0.0));
        let dim = c.dim;
        let zero = Expr::Const(0.0);
        let pick = |v: Expr| if dim == 1 { zero.clone() } else { v };
        let a = [e(&c.a[0]), pick(e(&c.a[1])), pick(e(&c.a[2]))];
        let b = [e(&c.b[0]), pick(e(&c.b[1]))];
        let g = [e(&c.g[0]), pick(e(&c.g[1])), pick(e(&c.g[2]))];
        let h = [e(&c.h[0]), pick(e(&c.h[1]))];
        let d = |f: &Expr, i: usize| if i >= dim { Expr::Const(0.0) } else { f.diff(i) };
        let div_m = |m: &[Expr; 3]| {
            [expr::add(d(&m[0], 0), d(&m[1], 1)), expr::add(d(&m[1], 0), d(&m[2], 1))]
        };
        let div2_m = |m: &[Expr; 3]| {
            let two = Expr::Const(2.0);
            expr::add(expr::add(d(&d(&m[0], 0), 0), expr::mul(two, d(&d(&m[1], 0), 1))), d(&d(&m[2], 1), 1))
        };
        let div_v = |v: &[Expr; 2]| expr::add(d(&v[0], 0), d(&v[1], 1));
        let da = div_m(&a);
        let dg = div_m(&g);
        let exprs = vec![
            a[0].clone(), a[1].clone(), a[2].clone(), da[0].clone(), da[1].clone(), div2_m(&a),
            b[0].clone(), b[1].clone(), div_v(&b),
            g[0].clone(), g[1].clone(), g[2].clone(), dg[0].clone(), dg[1].clone(), div2_m(&g),
            h[0].clone(), h[1].clone(), div_v(&h),
        ];
        Ok(ExactFields { dim, exprs })
    }

    fn sample(&self, x: Point) -> LevelSample {
        let _ = self.dim;
        let v: Vec<f64> = self.exprs.iter().map(|e| e.eval(x)).collect();
        LevelSample::from_array(&v)
    }
}

/// Convolved samples on a masked tensor grid, bilinearly interpolated.
#[derive(Debug, Clone)]
pub struct LevelGrid {
    pub origin: Point,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    values: Vec<f64>,
}

impl LevelGrid {
    fn at(&self, i: usize, j: usize) -> &[f64] {
        let k = (j * self.nx + i) * SAMPLE_LEN;
        &self.values[k..k + SAMPLE_LEN]
    }

    fn sample(&self, x: Point) -> LevelSample {
        let fx = ((x[0] - self.origin[0]) / self.spacing).clamp(0.0, (self.nx - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx.saturating_sub(2));
        let tx = if self.nx > 1 { fx - i as f64 } else { 0.0 };
        let mut out = [0.0; SAMPLE_LEN];
        if self.ny == 1 {
            let (v0, v1) = (self.at(i, 0), self.at((i + 1).min(self.nx - 1), 0));
            for k in 0..SAMPLE_LEN {
                out[k] = v0[k] + tx * (v1[k] - v0[k]);
            }
            return LevelSample::from_array(&out);
        }
        let fy = ((x[1] - self.origin[1]) / self.spacing).clamp(0.0, (self.ny - 1) as f64);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let ty = fy - j as f64;
        let (v00, v10, v01, v11) = (self.at(i, j), self.at(i + 1, j), self.at(i, j + 1), self.at(i + 1, j + 1));
        for k in 0..SAMPLE_LEN {
            out[k] = (1.0 - tx) * (1.0 - ty) * v00[k] + tx * (1.0 - ty) * v10[k] + (1.0 - tx) * ty * v01[k] + tx * ty * v11[k];
        }
        LevelSample::from_array(&out)
    }
}

#[derive(Debug, Clone)]
enum LevelFields {
    Exact(Box<ExactFields>),
    Grid(LevelGrid),
}

/// Distances between the smoothed and original coefficients on `D̄`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LevelDistances {
    pub a_sup: f64,
    pub b_lp: f64,
    pub g_lp_prime: f64,
    pub h_l1: f64,
}

/// Level `n` of an admissible approximation.
#[derive(Debug, Clone)]
pub struct AdmissibleLevel {
    pub n: usize,
    pub eps: f64,
    pub dim: usize,
    pub region: DomainKind,
    pub cutoff: InnerCutoff,
    pub smoothing: Smoothing,
    pub kind: MollifierKind,
    pub distances: LevelDistances,
    coeffs: CoefficientSet,
    stencil: Option<Stencil>,
    fields: LevelFields,
}

#[derive(Debug, Clone, Copy)]
pub struct LevelOptions {
    pub smoothing: Smoothing,
    pub kind: MollifierKind,
    /// Sub-grid points per kernel radius.
    pub stencil_res: usize,
    /// Grid spacing as a fraction of `ε`; at most 1/4.
    pub grid_fraction: f64,
    pub p: f64,
    pub exec: Exec,
}

impl Default for LevelOptions {
    fn default() -> Self {
        LevelOptions {
            smoothing: Smoothing::Mollify,
            kind: MollifierKind::StandardBump,
            stencil_res: DEFAULT_STENCIL_RES,
            grid_fraction: 0.25,
            p: 4.0,
            exec: Exec::Parallel,
        }
    }
}

/// Extended, cut-off coefficients at `y`: `(A, b, G, h)`.
fn extended(c: &CoefficientSet, cut: &InnerCutoff, y: Point) -> Result<[f64; 10]> {
    let mut out = [0.0; 10];
    if !c.omega.contains(y) {
        out[0] = 1.0;
        out[2] = if c.dim == 1 { 0.0 } else { 1.0 };
        return Ok(out);
    }
    let a = c.a(y)?;
    out[0] = a.xx;
    out[1] = a.xy;
    out[2] = a.yy;
    if cut.indicator(y) {
        let b = c.b(y)?;
        let g = c.g(y)?;
        let h = c.h(y)?;
        out[3..5].copy_from_slice(&b);
        out[5] = g.xx;
        out[6] = g.xy;
        out[7] = g.yy;
        out[8..10].copy_from_slice(&h);
    }
    Ok(out)
}

fn convolve_sample(c: &CoefficientSet, cut: &InnerCutoff, st: &Stencil, x: Point) -> Result<LevelSample> {
    // accumulators: value, ∂1, ∂2, ∂11, ∂12, ∂22 for each of the 10 components
    let mut acc = [[0.0f64; 6]; 10];
    for k in 0..st.len() {
        let z = st.offsets[k];
        let f = extended(c, cut, [x[0] - z[0], x[1] - z[1]])?;
        let wk = [st.w[k], st.dw[k][0], st.dw[k][1], st.d2w[k][0], st.d2w[k][1], st.d2w[k][2]];
        for (a, fv) in acc.iter_mut().zip(f) {
            if fv != 0.0 {
                for (ai, wi) in a.iter_mut().zip(wk) {
                    *ai += wi * fv;
                }
            }
        }
    }
    let [a11, a12, a22, b1, b2, g11, g12, g22, h1, h2] = acc;
    // a[0] value, a[1] ∂1, a[2] ∂2, a[3] ∂11, a[4] ∂12, a[5] ∂22
    let div_m = |m11: [f64; 6], m12: [f64; 6], m22: [f64; 6]| [m11[1] + m12[2], m12[1] + m22[2]];
    let div2_m = |m11: [f64; 6], m12: [f64; 6], m22: [f64; 6]| m11[3] + 2.0 * m12[4] + m22[5];
    let mut s = LevelSample {
        a: Sym2::new(a11[0], a12[0], a22[0]),
        div_a: div_m(a11, a12, a22),
        div2_a: div2_m(a11, a12, a22),
        b: [b1[0], b2[0]],
        div_b: b1[1] + b2[2],
        g: Sym2::new(g11[0], g12[0], g22[0]),
        div_g: div_m(g11, g12, g22),
        div2_g: div2_m(g11, g12, g22),
        h: [h1[0], h2[0]],
        div_h: h1[1] + h2[2],
    };
    if c.dim == 1 {
        s.a = Sym2::new(s.a.xx, 0.0, 0.0);
        s.div_a[1] = 0.0;
        s.b[1] = 0.0;
        s.g = Sym2::new(s.g.xx, 0.0, 0.0);
        s.div_g[1] = 0.0;
        s.h[1] = 0.0;
    }
    Ok(s)
}

fn build_grid(c: &CoefficientSet, cut: &InnerCutoff, st: &Stencil, region: &DomainKind, spacing: f64, exec: Exec) -> Result<LevelGrid> {
    let (lo, hi) = region.bounding_box();
    let pad = 2.0 * spacing;
    let origin = [lo[0] - pad, if c.dim == 1 { 0.0 } else { lo[1] - pad }];
    let nx = ((hi[0] + pad - origin[0]) / spacing).ceil() as usize + 1;
    let ny = if c.dim == 1 { 1 } else { ((hi[1] + pad - origin[1]) / spacing).ceil() as usize + 1 };
    if nx.saturating_mul(ny) > 20_000_000 {
        return Err(Error::Resource(format!("level grid of {nx}×{ny} points exceeds the budget")));
    }
    let rows = par::map_range(exec, ny, |j| -> Result<Vec<f64>> {
        let mut row = vec![f64::NAN; nx * SAMPLE_LEN];
        for i in 0..nx {
            let x = [origin[0] + i as f64 * spacing, origin[1] + j as f64 * spacing];
            if region.inner_distance(x) < -pad {
                continue;
            }
            let s = convolve_sample(c, cut, st, x)?;
            row[i * SAMPLE_LEN..(i + 1) * SAMPLE_LEN].copy_from_slice(&s.to_array());
        }
        Ok(row)
    });
    let mut values = Vec::with_capacity(nx * ny * SAMPLE_LEN);
    for r in rows {
        values.extend(r?);
    }
    Ok(LevelGrid { origin, spacing, nx, ny, values })
}

/// Builds level `n` on `D̄`. Requires `1/n` below the gap between `D̄` and `∂Ω`.
pub fn admissible_sequence(coeffs: &CoefficientSet, domain: &Domain, n: usize, opts: &LevelOptions) -> Result<AdmissibleLevel> {
    if n == 0 {
        return Err(Error::Precondition("level index n must be at least 1".into()));
    }
    let eps = 1.0 / n as f64;
    let gap = domain.gap.unwrap_or(0.0);
    if eps >= gap {
        return Err(Error::Precondition(format!("cutoff would touch D: 1/n = {eps} is not below the gap δ = {gap}")));
    }
    if coeffs.omega != domain.omega() {
        return Err(Error::Precondition("coefficients are defined on a different Ω than the problem container".into()));
    }
    let region = domain.kind;
    let cutoff = inner_cutoff(&coeffs.omega, n)?;
    let (fields, stencil) = match opts.smoothing {
        Smoothing::Exact => (LevelFields::Exact(Box::new(ExactFields::new(coeffs)?)), None),
        Smoothing::Mollify => {
            if !(opts.grid_fraction > 0.0 && opts.grid_fraction <= 0.25) {
                return Err(Error::Precondition(format!(
                    "unresolved kernel: grid spacing {}·ε is coarser than ε/4",
                    opts.grid_fraction
                )));
            }
            let m = make_mollifier(opts.kind, eps, coeffs.dim)?;
            let st = Stencil::new(&m, opts.stencil_res);
            let grid = build_grid(coeffs, &cutoff, &st, &region, opts.grid_fraction * eps, opts.exec)?;
            (LevelFields::Grid(grid), Some(st))
        }
    };
    let mut level = AdmissibleLevel {
        n,
        eps,
        dim: coeffs.dim,
        region,
        cutoff,
        smoothing: opts.smoothing,
        kind: opts.kind,
        distances: LevelDistances::default(),
        coeffs: coeffs.clone(),
        stencil,
        fields,
    };
    if opts.smoothing == Smoothing::Mollify {
        level.distances = level.distances_on(&QuadratureSet::on_domain(domain, 16, 4), opts.p)?;
    }
    Ok(level)
}

impl AdmissibleLevel {
    pub fn sample(&self, x: Point) -> Result<LevelSample> {
        if !self.region.contains_closed(x, 1e-9 * self.region.diameter()) {
            return Err(Error::OutsideDomain(x));
        }
        let s = match &self.fields {
            LevelFields::Exact(e) => e.sample(x),
            LevelFields::Grid(g) => g.sample(x),
        };
        if s.is_finite() {
            Ok(s)
        } else {
            Err(Error::Evaluation(format!("level {} is not finite at ({}, {})", self.n, x[0], x[1])))
        }
    }

    /// Direct convolution at `x`, bypassing the grid. For exact levels this
    /// is the symbolic sample.
    pub fn sample_direct(&self, x: Point) -> Result<LevelSample> {
        match (&self.fields, &self.stencil) {
            (LevelFields::Grid(_), Some(st)) => convolve_sample(&self.coeffs, &self.cutoff, st, x),
            _ => self.sample(x),
        }
    }

    pub fn original(&self) -> &CoefficientSet {
        &self.coeffs
    }

    fn distances_on(&self, quad: &QuadratureSet, p: f64) -> Result<LevelDistances> {
        let dim = self.dim;
        let pp = p / (p - 1.0);
        let mut d = LevelDistances::default();
        let (mut sb, mut sg, mut sh) = (0.0, 0.0, 0.0);
        for (&x, &w) in quad.points.iter().zip(&quad.weights) {
            let s = self.sample(x)?;
            let c = &self.coeffs;
            d.a_sup = d.a_sup.max(s.a.minus(c.a(x)?).spectral_norm(dim));
            let b = c.b(x)?;
            sb += w * norm([s.b[0] - b[0], s.b[1] - b[1]]).powf(p);
            sg += w * s.g.minus(c.g(x)?).max_entry(dim).powf(pp);
            let h = c.h(x)?;
            sh += w * norm([s.h[0] - h[0], s.h[1] - h[1]]);
        }
        d.b_lp = sb.powf(1.0 / p);
        d.g_lp_prime = sg.powf(1.0 / pp);
        d.h_l1 = sh;
        Ok(d)
    }
}

impl Coefficients for AdmissibleLevel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn a(&self, x: Point) -> Result<Sym2> {
        Ok(self.sample(x)?.a)
    }

    fn b(&self, x: Point) -> Result<Vec2> {
        Ok(self.sample(x)?.b)
    }

    fn g(&self, x: Point) -> Result<Sym2> {
        Ok(self.sample(x)?.g)
    }

    fn h(&self, x: Point) -> Result<Vec2> {
        Ok(self.sample(x)?.h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{certify_h1_h2, sample_points, CertifyOptions};
    use crate::geometry::make_domain;
    use proptest::prelude::*;

    fn disk(r: f64) -> DomainKind {
        DomainKind::Disk { center: [0.0, 0.0], radius: r }
    }

    #[test]
    fn mollifier_mass_support_moments() {
        for kind in [MollifierKind::StandardBump, MollifierKind::PolynomialBump] {
            for dim in [1, 2] {
                let m = make_mollifier(kind, 0.3, dim).unwrap();
                // independent check: fine tensor midpoint sum
                let n = 1200;
                let s = 0.6 / n as f64;
                let (mut mass, mut first) = (0.0, 0.0);
                let rows = if dim == 1 { 1 } else { n };
                for j in 0..rows {
                    for i in 0..n {
                        let z = [-0.3 + (i as f64 + 0.5) * s, if dim == 1 { 0.0 } else { -0.3 + (j as f64 + 0.5) * s }];
                        let v = m.value(z) * s.powi(dim as i32);
                        mass += v;
                        first += v * z[0];
                    }
                }
                assert!((mass - 1.0).abs() < 1e-8, "{kind:?} d={dim}: {mass}");
                assert!(first.abs() < 1e-10);
                assert_eq!(m.value([0.3, 0.0]), 0.0);
                assert_eq!(m.value([0.2, 0.25]), 0.0);
            }
        }
        assert!(make_mollifier(MollifierKind::StandardBump, 0.0, 2).is_err());
    }

    #[test]
    fn kernel_derivatives_match_differences() {
        for kind in [MollifierKind::StandardBump, MollifierKind::PolynomialBump] {
            let m = make_mollifier(kind, 0.5, 2).unwrap();
            let z = [0.12, -0.2];
            let e = 1e-5;
            let g = m.gradient(z);
            let h = m.hessian(z);
            let fd = |d: Vec2| (m.value([z[0] + d[0], z[1] + d[1]]) - m.value([z[0] - d[0], z[1] - d[1]])) / (2.0 * e);
            assert!((g[0] - fd([e, 0.0])).abs() < 1e-6 * g[0].abs().max(1.0));
            assert!((g[1] - fd([0.0, e])).abs() < 1e-6 * g[1].abs().max(1.0));
            let gd = |d: Vec2, k: usize| (m.gradient([z[0] + d[0], z[1] + d[1]])[k] - m.gradient([z[0] - d[0], z[1] - d[1]])[k]) / (2.0 * e);
            assert!((h[0] - gd([e, 0.0], 0)).abs() < 1e-5 * h[0].abs().max(1.0));
            assert!((h[1] - gd([0.0, e], 0)).abs() < 1e-5 * h[1].abs().max(1.0));
            assert!((h[2] - gd([0.0, e], 1)).abs() < 1e-5 * h[2].abs().max(1.0));
        }
    }

    #[test]
    fn convolution_reproduces_polynomials() {
        let m = make_mollifier(MollifierKind::StandardBump, 0.1, 2).unwrap();
        let st = Stencil::new(&m, 8);
        let x = [0.3, -0.2];
        let (v, g, _) = convolve(|_| 2.5, &st, x);
        assert!((v - 2.5).abs() < 1e-8 && g[0].abs() < 1e-8 && g[1].abs() < 1e-8);
        let aff = |y: Point| 1.0 + 2.0 * y[0] - 3.0 * y[1];
        let (v, g, h) = convolve(aff, &st, x);
        assert!((v - aff(x)).abs() < 1e-8);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] + 3.0).abs() < 1e-8);
        assert!(h.iter().all(|c| c.abs() < 1e-6));
        let quad = |y: Point| 0.5 * y[0] * y[0] + y[0] * y[1] - y[1] * y[1];
        let (_, g, h) = convolve(quad, &st, x);
        assert!((g[0] - (x[0] + x[1])).abs() < 1e-8);
        assert!((h[0] - 1.0).abs() < 1e-8 && (h[1] - 1.0).abs() < 1e-8 && (h[2] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn half_plane_indicator_gives_half() {
        for kind in [MollifierKind::StandardBump, MollifierKind::PolynomialBump] {
            let m = make_mollifier(kind, 0.2, 2).unwrap();
            let st = Stencil::new(&m, 8);
            let (v, _, _) = convolve(|y| if y[0] > 0.5 { 1.0 } else { 0.0 }, &st, [0.5, 0.1]);
            assert!((v - 0.5).abs() < 1e-6, "{v}");
        }
    }

    fn domain() -> Domain {
        make_domain(disk(1.0), Some(disk(2.0))).unwrap()
    }

    #[test]
    fn constant_coefficients_are_fixed() {
        let d = domain();
        let c = CoefficientSet::from_strs(disk(2.0), ["2", "0.3", "1"], ["1", "-1"], ["0.5", "0", "0.5"], ["0.2", "0"]).unwrap();
        let lvl = admissible_sequence(&c, &d, 4, &LevelOptions::default()).unwrap();
        for x in sample_points(&d.kind, 50, 3) {
            let s = lvl.sample(x).unwrap();
            assert!(s.a.minus(Sym2::new(2.0, 0.3, 1.0)).max_entry(2) < 1e-8);
            assert!((s.b[0] - 1.0).abs() < 1e-8 && (s.b[1] + 1.0).abs() < 1e-8);
            assert!(s.div_a[0].abs() < 1e-6 && s.div2_g.abs() < 1e-6);
        }
        assert!(lvl.distances.a_sup < 1e-8);
    }

    #[test]
    fn cutoff_precondition() {
        let d = make_domain(disk(1.0), Some(disk(1.25))).unwrap();
        let c = CoefficientSet::identity(disk(1.25));
        let err = admissible_sequence(&c, &d, 4, &LevelOptions::default()).unwrap_err();
        assert!(err.to_string().contains("cutoff would touch D"));
        assert!(admissible_sequence(&c, &d, 5, &LevelOptions::default()).is_ok());
    }

    #[test]
    fn exact_level_derivatives() {
        let d = domain();
        let c = CoefficientSet::from_strs(disk(2.0), ["1 + x1", "0", "1 + x1"], ["0", "0"], ["0", "0", "0"], ["0", "0"]).unwrap();
        let lvl = admissible_sequence(&c, &d, 2, &LevelOptions { smoothing: Smoothing::Exact, ..Default::default() }).unwrap();
        let s = lvl.sample([0.2, 0.3]).unwrap();
        assert_eq!(s.drift(), [-1.0, 0.0]);
        let m = admissible_sequence(&c, &d, 4, &LevelOptions::default()).unwrap();
        let s = m.sample([0.2, 0.3]).unwrap();
        assert!((s.drift()[0] + 1.0).abs() < 1e-6 && s.drift()[1].abs() < 1e-6);
    }

    #[test]
    fn grid_matches_direct_convolution() {
        let d = domain();
        let c = CoefficientSet::from_strs(disk(2.0), ["2 + sin(3*x1)*x2", "0.2*x1*x2", "1.5 + cos(x1)"], ["x1", "x2^2"], ["x1^2", "0", "1"], ["0", "x1"]).unwrap();
        let lvl = admissible_sequence(&c, &d, 8, &LevelOptions::default()).unwrap();
        for x in sample_points(&d.kind, 20, 11) {
            let a = lvl.sample(x).unwrap();
            let b = lvl.sample_direct(x).unwrap();
            assert!(a.a.minus(b.a).max_entry(2) < 1e-3);
            assert!((a.div_a[0] - b.div_a[0]).abs() < 1e-2);
        }
    }

    #[test]
    fn mollified_level_converges() {
        let d = domain();
        let c = CoefficientSet::from_strs(disk(2.0), ["1", "0", "1"], ["x1 + 1", "0"], ["0", "0", "0"], ["0", "0"]).unwrap();
        let step = CoefficientSet::from_strs(disk(2.0), ["1", "0", "1"], ["step(x1)", "0"], ["0", "0", "0"], ["0", "0"]).unwrap();
        let mut prev = f64::INFINITY;
        for n in [2, 4, 8, 16] {
            let l = admissible_sequence(&step, &d, n, &LevelOptions::default()).unwrap();
            assert!(l.distances.b_lp < prev);
            prev = l.distances.b_lp;
        }
        let l = admissible_sequence(&c, &d, 4, &LevelOptions::default()).unwrap();
        assert!(l.distances.b_lp < 1e-6);
    }

    #[test]
    fn ellipticity_and_modulus_preserved() {
        let d = domain();
        let c = CoefficientSet::from_strs(disk(2.0), ["1 + 0.5*sin(4*x1)", "0.2*cos(3*x2)", "1.2 + 0.3*x1*x2"], ["0", "0"], ["0", "0", "0"], ["0", "0"]).unwrap();
        let opts = CertifyOptions { samples: 3000, r_max: 0.4, bins: 8, ..Default::default() };
        let orig = certify_h1_h2(&c, &d.kind, &opts).unwrap();
        for n in [4, 8] {
            let l = admissible_sequence(&c, &d, n, &LevelOptions::default()).unwrap();
            let est = certify_h1_h2(&l, &d.kind, &opts).unwrap();
            // sampled θ is an upper bound of the true θ, so compare against a dense bracket
            for x in sample_points(&d.kind, 500, 99) {
                let (lo, hi) = l.a(x).unwrap().eigenvalues(2);
                assert!(lo >= orig.theta * 0.98 - 1e-8 && hi <= 1.0 / orig.theta * 1.02 + 1e-8);
            }
            let w_eps = crate::fields::omega_lookup(&orig.omega, 1.0 / n as f64);
            for (&(r, w), &(_, w0)) in est.omega.iter().zip(&orig.omega) {
                assert!(w <= w0 + 2.0 * w_eps + 1e-8, "r={r}: {w} vs {w0}");
            }
        }
    }

    #[test]
    fn one_dimensional_level() {
        let d = make_domain(DomainKind::Interval { a: 0.0, b: 1.0 }, Some(DomainKind::Interval { a: -1.0, b: 2.0 })).unwrap();
        let c = CoefficientSet::from_strs(DomainKind::Interval { a: -1.0, b: 2.0 }, ["1 + x1^2", "0", "0"], ["x1", "0"], ["0", "0", "0"], ["0", "0"]).unwrap();
        let l = admissible_sequence(&c, &d, 8, &LevelOptions::default()).unwrap();
        let s = l.sample([0.5, 0.0]).unwrap();
        // (1 + x²) * ψ = 1 + x² + ε² m₂ with a small second moment
        assert!((s.a.xx - 1.25).abs() < 5e-3);
        assert!((s.div_a[0] - 1.0).abs() < 1e-6);
        assert!((s.div2_a - 2.0).abs() < 1e-6);
        assert!((s.div_b - 1.0).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn stencil_preserves_affine(a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64, eps in 0.05..0.5f64) {
            let m = make_mollifier(MollifierKind::PolynomialBump, eps, 2).unwrap();
            let st = Stencil::new(&m, 6);
            let f = |y: Point| a + b * y[0] + c * y[1];
            let (v, g, _) = convolve(f, &st, [0.1, 0.2]);
            prop_assert!((v - f([0.1, 0.2])).abs() < 1e-9);
            prop_assert!((g[0] - b).abs() < 1e-8 && (g[1] - c).abs() < 1e-8);
        }
    }
}
