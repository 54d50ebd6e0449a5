//! Small fixed-size vector and symmetric-matrix helpers.
//!
//! Everything is stored in two components; one-dimensional problems only use
//! the first component and pass `dim = 1` to the dimension-aware methods.

use serde::{Deserialize, Serialize};

pub type Point = [f64; 2];
pub type Vec2 = [f64; 2];

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub fn sub(a: Point, b: Point) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Point, b: Vec2) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(s: f64, a: Vec2) -> Vec2 {
    [s * a[0], s * a[1]]
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 { xx: 0.0, xy: 0.0, yy: 0.0 };
    pub const IDENTITY: Sym2 = Sym2 { xx: 1.0, xy: 0.0, yy: 1.0 };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym2 { xx, xy, yy }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Sym2 { xx: a, xy: 0.0, yy: b }
    }

    pub fn scaled(self, s: f64) -> Self {
        Sym2 { xx: s * self.xx, xy: s * self.xy, yy: s * self.yy }
    }

    pub fn plus(self, o: Sym2) -> Self {
        Sym2 { xx: self.xx + o.xx, xy: self.xy + o.xy, yy: self.yy + o.yy }
    }

    pub fn minus(self, o: Sym2) -> Self {
        Sym2 { xx: self.xx - o.xx, xy: self.xy - o.xy, yy: self.yy - o.yy }
    }

    pub fn mul_vec(self, v: Vec2) -> Vec2 {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    /// `<M v, v>`
    pub fn quad(self, v: Vec2) -> f64 {
        dot(self.mul_vec(v), v)
    }

    /// Frobenius inner product `trace(M N)` for symmetric `N`, restricted to `dim`.
    pub fn contract(self, n: Sym2, dim: usize) -> f64 {
        if dim == 1 {
            self.xx * n.xx
        } else {
            self.xx * n.xx + 2.0 * self.xy * n.xy + self.yy * n.yy
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(self, dim: usize) -> (f64, f64) {
        if dim == 1 {
            return (self.xx, self.xx);
        }
        let mean = 0.5 * (self.xx + self.yy);
        let rad = (0.5 * (self.xx - self.yy)).hypot(self.xy);
        (mean - rad, mean + rad)
    }

    pub fn spectral_norm(self, dim: usize) -> f64 {
        let (lo, hi) = self.eigenvalues(dim);
        lo.abs().max(hi.abs())
    }

    pub fn max_entry(self, dim: usize) -> f64 {
        if dim == 1 {
            self.xx.abs()
        } else {
            self.xx.abs().max(self.xy.abs()).max(self.yy.abs())
        }
    }

    pub fn is_finite(self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }
}
