//! Quadrature rules: Gauss–Legendre on segments, fixed triangle rules, and
//! composite point sets over domains and meshes.

use std::f64::consts::PI;

use crate::geometry::{Cells, Domain, DomainKind, Mesh};
use crate::linalg::Point;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_on(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    x.iter().zip(&w).map(|(xi, wi)| (mid + half * xi, half * wi)).collect()
}

/// Triangle rule in barycentric coordinates with weights summing to one.
#[derive(Debug, Clone, Copy)]
pub enum TriangleRule {
    /// Edge midpoints, exact for degree 2. Used for assembly.
    Midpoint3,
    /// Six-point rule, exact for degree 4. Used for norms and residuals.
    Strang6,
}

impl TriangleRule {
    pub fn points(self) -> Vec<([f64; 3], f64)> {
        match self {
            TriangleRule::Midpoint3 => vec![
                ([0.5, 0.5, 0.0], 1.0 / 3.0),
                ([0.0, 0.5, 0.5], 1.0 / 3.0),
                ([0.5, 0.0, 0.5], 1.0 / 3.0),
            ],
            TriangleRule::Strang6 => {
                let (a1, b1, w1) = (0.816847572980459, 0.091576213509771, 0.109951743655322);
                let (a2, b2, w2) = (0.108103018168070, 0.445948490915965, 0.223381589678011);
                vec![
                    ([a1, b1, b1], w1),
                    ([b1, a1, b1], w1),
                    ([b1, b1, a1], w1),
                    ([a2, b2, b2], w2),
                    ([b2, a2, b2], w2),
                    ([b2, b2, a2], w2),
                ]
            }
        }
    }

    pub fn degree(self) -> usize {
        match self {
            TriangleRule::Midpoint3 => 2,
            TriangleRule::Strang6 => 4,
        }
    }
}

/// A flat list of quadrature points. When built from a mesh, each point
/// remembers its cell and barycentric coordinates so that piecewise-linear
/// fields on that mesh can be evaluated without point location.
#[derive(Debug, Clone, Default)]
pub struct QuadratureSet {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub cells: Option<Vec<(usize, [f64; 3])>>,
    pub mesh_signature: Option<(usize, usize)>,
    pub order: usize,
}

impl QuadratureSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Cell-wise rule over a mesh. `segment_points` is the Gauss count per 1D cell.
    pub fn on_mesh(mesh: &Mesh, rule: TriangleRule, segment_points: usize) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut cells = Vec::new();
        match &mesh.cells {
            Cells::Triangles(tris) => {
                let pts = rule.points();
                for (c, t) in tris.iter().enumerate() {
                    let area = mesh.cell_measure(c);
                    let [p0, p1, p2] = [mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]];
                    for (l, w) in &pts {
                        points.push([
                            l[0] * p0[0] + l[1] * p1[0] + l[2] * p2[0],
                            l[0] * p0[1] + l[1] * p1[1] + l[2] * p2[1],
                        ]);
                        weights.push(w * area);
                        cells.push((c, *l));
                    }
                }
            }
            Cells::Segments(segs) => {
                let (x, w) = gauss_legendre(segment_points);
                for (c, s) in segs.iter().enumerate() {
                    let (a, b) = (mesh.vertices[s[0]][0], mesh.vertices[s[1]][0]);
                    for (xi, wi) in x.iter().zip(&w) {
                        let t = 0.5 * (1.0 + xi);
                        points.push([a + t * (b - a), 0.0]);
                        weights.push(0.5 * wi * (b - a).abs());
                        cells.push((c, [1.0 - t, t, 0.0]));
                    }
                }
            }
        }
        let order = match mesh.cells {
            Cells::Triangles(_) => rule.degree(),
            Cells::Segments(_) => 2 * segment_points - 1,
        };
        QuadratureSet {
            points,
            weights,
            cells: Some(cells),
            mesh_signature: Some(mesh.signature()),
            order,
        }
    }

    /// [`Self::on_mesh`] plus the curved slivers between a disk mesh and
    /// the exact circle. Sliver points carry the barycentric coordinates of
    /// the adjacent boundary triangle, so fields are extrapolated linearly.
    pub fn on_mesh_exact(mesh: &Mesh, rule: TriangleRule, segment_points: usize) -> Self {
        let mut q = Self::on_mesh(mesh, rule, segment_points);
        let (DomainKind::Disk { center, radius }, Cells::Triangles(tris)) = (mesh.domain, &mesh.cells) else {
            return q;
        };
        let mut ring: Vec<(usize, f64)> = mesh
            .boundary_vertices()
            .into_iter()
            .map(|v| {
                let p = mesh.vertices[v];
                (v, (p[1] - center[1]).atan2(p[0] - center[0]).rem_euclid(2.0 * PI))
            })
            .collect();
        ring.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut edge_cell = std::collections::HashMap::new();
        for (c, t) in tris.iter().enumerate() {
            for k in 0..3 {
                let (u, v) = (t[k], t[(k + 1) % 3]);
                if mesh.boundary[u] && mesh.boundary[v] {
                    edge_cell.insert((u.min(v), u.max(v)), c);
                }
            }
        }
        let theta_rule = gauss_on(0.0, 1.0, 4);
        let r_rule = gauss_on(0.0, 1.0, 2);
        let nb = ring.len();
        for j in 0..nb {
            let (u, ta) = ring[j];
            let (v, mut tb) = ring[(j + 1) % nb];
            if tb <= ta {
                tb += 2.0 * PI;
            }
            let Some(&c) = edge_cell.get(&(u.min(v), u.max(v))) else {
                continue;
            };
            let t = tris[c];
            let (p0, p1, p2) = (mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]]);
            let half = 0.5 * (tb - ta);
            let mid = ta + half;
            let chord = radius * half.cos();
            for &(s, ws) in &theta_rule {
                let th = ta + s * (tb - ta);
                let rc = chord / (th - mid).cos();
                for &(z, wz) in &r_rule {
                    let r = rc + z * (radius - rc);
                    let x = [center[0] + r * th.cos(), center[1] + r * th.sin()];
                    q.points.push(x);
                    q.weights.push(ws * (tb - ta) * wz * (radius - rc) * r);
                    q.cells.as_mut().unwrap().push((c, crate::geometry::barycentric(x, p0, p1, p2)));
                }
            }
        }
        q
    }

    /// Composite rule on the exact domain: Gauss panels in the radius times
    /// the trapezoid rule in angle for disks, Gauss panels for intervals.
    /// `panels` controls refinement; the polynomial order per panel is `gauss`.
    pub fn on_domain(domain: &Domain, panels: usize, gauss: usize) -> Self {
        match domain.kind {
            DomainKind::Interval { a, b } => Self::interval(a, b, panels, gauss),
            DomainKind::Disk { center, radius } => Self::disk(center, radius, panels, gauss),
        }
    }

    pub fn interval(a: f64, b: f64, panels: usize, gauss: usize) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let h = (b - a) / panels as f64;
        for k in 0..panels {
            for (x, w) in gauss_on(a + k as f64 * h, a + (k + 1) as f64 * h, gauss) {
                points.push([x, 0.0]);
                weights.push(w);
            }
        }
        QuadratureSet { points, weights, cells: None, mesh_signature: None, order: 2 * gauss - 1 }
    }

    pub fn disk(center: Point, radius: f64, panels: usize, gauss: usize) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let n_theta = (8 * panels * gauss).max(32);
        let dtheta = 2.0 * PI / n_theta as f64;
        let h = radius / panels as f64;
        for k in 0..panels {
            for (r, w) in gauss_on(k as f64 * h, (k + 1) as f64 * h, gauss) {
                for j in 0..n_theta {
                    let t = (j as f64 + 0.5) * dtheta;
                    points.push([center[0] + r * t.cos(), center[1] + r * t.sin()]);
                    weights.push(w * r * dtheta);
                }
            }
        }
        QuadratureSet { points, weights, cells: None, mesh_signature: None, order: 2 * gauss - 1 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_polynomials_exactly() {
        for n in 1..12 {
            let rule = gauss_on(0.0, 2.0, n);
            for deg in 0..(2 * n) {
                let q: f64 = rule.iter().map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = 2f64.powi(deg as i32 + 1) / (deg as f64 + 1.0);
                assert!((q - exact).abs() < 1e-12 * exact.max(1.0), "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn triangle_rules_have_unit_weight() {
        for r in [TriangleRule::Midpoint3, TriangleRule::Strang6] {
            let s: f64 = r.points().iter().map(|p| p.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mesh_rule_with_slivers_covers_the_disk() {
        let d = DomainKind::Disk { center: [0.3, 0.1], radius: 1.5 };
        let mesh = crate::geometry::mesh_domain(&d, 0.2).unwrap();
        let plain = QuadratureSet::on_mesh(&mesh, TriangleRule::Strang6, 4);
        let full = QuadratureSet::on_mesh_exact(&mesh, TriangleRule::Strang6, 4);
        let area = PI * 1.5 * 1.5;
        assert!((plain.total_weight() - area).abs() > 1e-3);
        assert!((full.total_weight() - area).abs() < 1e-10 * area, "{}", full.total_weight() - area);
        let cells = full.cells.as_ref().unwrap();
        // linear fields are reproduced exactly through the extrapolated coordinates
        let lin = |p: Point| 2.0 + p[0] - 3.0 * p[1];
        for (k, &(c, l)) in cells.iter().enumerate() {
            let vs = mesh.cells.vertices_of(c);
            let v: f64 = vs.iter().zip(l).map(|(&i, li)| li * lin(mesh.vertices[i])).sum();
            assert!((v - lin(full.points[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn disk_rule_area_and_moment() {
        let q = QuadratureSet::disk([0.5, -0.25], 2.0, 4, 4);
        assert!((q.total_weight() - 4.0 * PI).abs() < 1e-12);
        let vals: Vec<f64> = q.points.iter().map(|p| (p[0] - 0.5).powi(2) + (p[1] + 0.25).powi(2)).collect();
        // ∫ r² over disk radius 2 = π R⁴ / 2
        assert!((q.integrate(&vals) - 8.0 * PI).abs() < 1e-10);
    }
}
