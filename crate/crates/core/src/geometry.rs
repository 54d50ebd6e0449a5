//! Domains (intervals and disks), boundary quadrature grids and meshes.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dist, norm, sub, Point, Vec2};

const MAX_VERTICES: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    Interval { a: f64, b: f64 },
    Disk { center: Point, radius: f64 },
}

impl DomainKind {
    pub fn dim(&self) -> usize {
        match self {
            DomainKind::Interval { .. } => 1,
            DomainKind::Disk { .. } => 2,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DomainKind::Interval { a, b } => {
                if !(a.is_finite() && b.is_finite()) || b <= a {
                    return Err(Error::Geometry(format!("interval requires b > a (got a={a}, b={b})")));
                }
            }
            DomainKind::Disk { center, radius } => {
                if !(center[0].is_finite() && center[1].is_finite()) || !(radius > 0.0) || !radius.is_finite() {
                    return Err(Error::Geometry(format!("disk requires radius > 0 (got {radius})")));
                }
            }
        }
        Ok(())
    }

    /// Signed distance to the boundary, positive inside.
    pub fn inner_distance(&self, x: Point) -> f64 {
        match *self {
            DomainKind::Interval { a, b } => (x[0] - a).min(b - x[0]),
            DomainKind::Disk { center, radius } => radius - dist(x, center),
        }
    }

    pub fn contains(&self, x: Point) -> bool {
        self.inner_distance(x) > 0.0
    }

    pub fn contains_closed(&self, x: Point, tol: f64) -> bool {
        self.inner_distance(x) >= -tol
    }

    /// Lebesgue measure (length or area).
    pub fn measure(&self) -> f64 {
        match *self {
            DomainKind::Interval { a, b } => b - a,
            DomainKind::Disk { radius, .. } => PI * radius * radius,
        }
    }

    /// Surface measure of the boundary: 2 for an interval (counting measure).
    pub fn boundary_measure(&self) -> f64 {
        match *self {
            DomainKind::Interval { .. } => 2.0,
            DomainKind::Disk { radius, .. } => 2.0 * PI * radius,
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            DomainKind::Interval { a, b } => b - a,
            DomainKind::Disk { radius, .. } => 2.0 * radius,
        }
    }

    pub fn inradius(&self) -> f64 {
        0.5 * self.diameter()
    }

    /// The open `t`-neighbourhood (t > 0) or inner parallel set (t < 0).
    pub fn offset(&self, t: f64) -> DomainKind {
        match *self {
            DomainKind::Interval { a, b } => DomainKind::Interval { a: a - t, b: b + t },
            DomainKind::Disk { center, radius } => DomainKind::Disk { center, radius: radius + t },
        }
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        match *self {
            DomainKind::Interval { a, b } => ([a, 0.0], [b, 0.0]),
            DomainKind::Disk { center, radius } => (
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ),
        }
    }
}

/// A validated domain `D`, optionally with an enclosing `Ω` and the gap
/// `δ = dist(D̄, ∂Ω) > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub kind: DomainKind,
    pub container: Option<DomainKind>,
    pub gap: Option<f64>,
}

/// Builds a domain, checking geometry and the strict inclusion `D̄ ⊂ Ω`.
pub fn make_domain(kind: DomainKind, container: Option<DomainKind>) -> Result<Domain> {
    kind.validate()?;
    let gap = match container {
        None => None,
        Some(outer) => {
            outer.validate()?;
            let gap = match (kind, outer) {
                (DomainKind::Interval { a, b }, DomainKind::Interval { a: oa, b: ob }) => (a - oa).min(ob - b),
                (
                    DomainKind::Disk { center, radius },
                    DomainKind::Disk { center: oc, radius: or },
                ) => or - dist(center, oc) - radius,
                _ => return Err(Error::Geometry("domain and container must have the same dimension".into())),
            };
            if !(gap > 0.0) {
                return Err(Error::Geometry(format!("no positive gap between D and its container (gap = {gap})")));
            }
            Some(gap)
        }
    };
    Ok(Domain { kind, container, gap })
}

impl Domain {
    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    /// The coefficient domain Ω (the container if present, else D itself).
    pub fn omega(&self) -> DomainKind {
        self.container.unwrap_or(self.kind)
    }

    pub fn interval(a: f64, b: f64) -> Result<Domain> {
        make_domain(DomainKind::Interval { a, b }, None)
    }

    pub fn disk(center: Point, radius: f64) -> Result<Domain> {
        make_domain(DomainKind::Disk { center, radius }, None)
    }

    pub fn with_container(self, container: DomainKind) -> Result<Domain> {
        make_domain(self.kind, Some(container))
    }
}

/// Boundary nodes with outward normals and surface-measure weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryGrid {
    pub kind: DomainKind,
    pub nodes: Vec<Point>,
    pub normals: Vec<Vec2>,
    pub weights: Vec<f64>,
    /// Angle in 2D, the endpoint coordinate in 1D.
    pub params: Vec<f64>,
}

pub fn boundary_grid(domain: &DomainKind, m: usize) -> Result<BoundaryGrid> {
    match *domain {
        DomainKind::Interval { a, b } => {
            if m != 2 {
                return Err(Error::Precondition(format!("an interval boundary has exactly 2 nodes (got {m})")));
            }
            Ok(BoundaryGrid {
                kind: *domain,
                nodes: vec![[a, 0.0], [b, 0.0]],
                normals: vec![[-1.0, 0.0], [1.0, 0.0]],
                weights: vec![1.0, 1.0],
                params: vec![a, b],
            })
        }
        DomainKind::Disk { center, radius } => {
            if m < 16 {
                return Err(Error::Precondition(format!("a circle boundary grid needs at least 16 nodes (got {m})")));
            }
            let w = 2.0 * PI * radius / m as f64;
            let mut g = BoundaryGrid {
                kind: *domain,
                nodes: Vec::with_capacity(m),
                normals: Vec::with_capacity(m),
                weights: vec![w; m],
                params: Vec::with_capacity(m),
            };
            for k in 0..m {
                let t = 2.0 * PI * k as f64 / m as f64;
                let (s, c) = t.sin_cos();
                g.nodes.push([center[0] + radius * c, center[1] + radius * s]);
                g.normals.push([c, s]);
                g.params.push(t);
            }
            Ok(g)
        }
    }
}

impl BoundaryGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Boundary point and outward normal at a parameter value.
    pub fn point_at(&self, s: f64) -> (Point, Vec2) {
        match self.kind {
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
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cells {
    Segments(Vec<[usize; 2]>),
    Triangles(Vec<[usize; 3]>),
}

impl Cells {
    pub fn len(&self) -> usize {
        match self {
            Cells::Segments(s) => s.len(),
            Cells::Triangles(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vertices_of(&self, c: usize) -> &[usize] {
        match self {
            Cells::Segments(s) => &s[c],
            Cells::Triangles(t) => &t[c],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub domain: DomainKind,
    pub vertices: Vec<Point>,
    pub cells: Cells,
    pub boundary: Vec<bool>,
    /// Largest edge length.
    pub h: f64,
    locator: Option<Locator>,
}

impl Mesh {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn signature(&self) -> (usize, usize) {
        (self.vertices.len(), self.cells.len())
    }

    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.vertices.len()).filter(|&i| self.boundary[i]).collect()
    }

    pub fn cell_measure(&self, c: usize) -> f64 {
        match &self.cells {
            Cells::Segments(s) => (self.vertices[s[c][1]][0] - self.vertices[s[c][0]][0]).abs(),
            Cells::Triangles(t) => signed_area(self.vertices[t[c][0]], self.vertices[t[c][1]], self.vertices[t[c][2]]),
        }
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.cells.len()).map(|c| self.cell_measure(c)).sum()
    }

    /// Cell containing `x` and its barycentric coordinates.
    pub fn locate(&self, x: Point) -> Option<(usize, [f64; 3])> {
        match &self.cells {
            Cells::Segments(segs) => {
                // uniform or not, vertices are sorted along the line
                let n = segs.len();
                let (lo, hi) = (self.vertices[segs[0][0]][0], self.vertices[segs[n - 1][1]][0]);
                let tol = 1e-12 * (hi - lo);
                if x[0] < lo - tol || x[0] > hi + tol {
                    return None;
                }
                let idx = segs.partition_point(|s| self.vertices[s[1]][0] < x[0]).min(n - 1);
                let (a, b) = (self.vertices[segs[idx][0]][0], self.vertices[segs[idx][1]][0]);
                let t = ((x[0] - a) / (b - a)).clamp(0.0, 1.0);
                Some((idx, [1.0 - t, t, 0.0]))
            }
            Cells::Triangles(tris) => {
                let loc = self.locator.as_ref()?;
                let bucket = loc.bucket_of(x)?;
                let mut best: Option<(usize, [f64; 3], f64)> = None;
                for &c in &loc.buckets[bucket] {
                    let t = tris[c as usize];
                    let l = barycentric(x, self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
                    let worst = l[0].min(l[1]).min(l[2]);
                    if worst >= -1e-12 {
                        return Some((c as usize, l));
                    }
                    if best.as_ref().is_none_or(|b| worst > b.2) {
                        best = Some((c as usize, l, worst));
                    }
                }
                best.filter(|b| b.2 >= -1e-9).map(|b| (b.0, b.1))
            }
        }
    }

    /// Writes the plain-text vertex/cell listing.
    pub fn write_listing<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "vertices {}", self.vertices.len())?;
        for (i, v) in self.vertices.iter().enumerate() {
            writeln!(out, "{} {:e} {:e} {}", i, v[0], v[1], u8::from(self.boundary[i]))?;
        }
        writeln!(out, "cells {}", self.cells.len())?;
        for c in 0..self.cells.len() {
            let vs: Vec<String> = self.cells.vertices_of(c).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", vs.join(" "))?;
        }
        Ok(())
    }

    fn finish(mut self) -> Self {
        self.h = max_edge(&self);
        if let Cells::Triangles(_) = self.cells {
            self.locator = Some(Locator::build(&self));
        }
        self
    }
}

fn max_edge(mesh: &Mesh) -> f64 {
    let mut h: f64 = 0.0;
    for c in 0..mesh.cells.len() {
        let vs = mesh.cells.vertices_of(c);
        for i in 0..vs.len() {
            for j in (i + 1)..vs.len() {
                h = h.max(dist(mesh.vertices[vs[i]], mesh.vertices[vs[j]]));
            }
        }
    }
    h
}

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub fn barycentric(x: Point, a: Point, b: Point, c: Point) -> [f64; 3] {
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (x[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Uniform bucket grid over the triangle bounding boxes.
#[derive(Debug, Clone, PartialEq)]
struct Locator {
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl Locator {
    fn build(mesh: &Mesh) -> Locator {
        let Cells::Triangles(tris) = &mesh.cells else { unreachable!() };
        let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
        for v in &mesh.vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let cell = mesh.h.max(1e-300);
        let nx = (((hi[0] - lo[0]) / cell).ceil() as usize).max(1);
        let ny = (((hi[1] - lo[1]) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        for (c, t) in tris.iter().enumerate() {
            let (mut blo, mut bhi) = ([f64::MAX; 2], [f64::MIN; 2]);
            for &v in t {
                for k in 0..2 {
                    blo[k] = blo[k].min(mesh.vertices[v][k]);
                    bhi[k] = bhi[k].max(mesh.vertices[v][k]);
                }
            }
            let i0 = (((blo[0] - lo[0]) / cell).floor() as usize).min(nx - 1);
            let i1 = (((bhi[0] - lo[0]) / cell).floor() as usize).min(nx - 1);
            let j0 = (((blo[1] - lo[1]) / cell).floor() as usize).min(ny - 1);
            let j1 = (((bhi[1] - lo[1]) / cell).floor() as usize).min(ny - 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(c as u32);
                }
            }
        }
        Locator { origin: lo, cell, nx, ny, buckets }
    }

    fn bucket_of(&self, x: Point) -> Option<usize> {
        let fx = (x[0] - self.origin[0]) / self.cell;
        let fy = (x[1] - self.origin[1]) / self.cell;
        let eps = 1e-9;
        if fx < -eps || fy < -eps || fx > self.nx as f64 + eps || fy > self.ny as f64 + eps {
            return None;
        }
        let i = (fx.max(0.0) as usize).min(self.nx - 1);
        let j = (fy.max(0.0) as usize).min(self.ny - 1);
        Some(j * self.nx + i)
    }
}

/// Uniform mesh of an interval with spacing at most `h`.
pub fn mesh_interval(domain: &DomainKind, h: f64) -> Result<Mesh> {
    let DomainKind::Interval { a, b } = *domain else {
        return Err(Error::Geometry("mesh_interval requires an interval".into()));
    };
    if !(h > 0.0) {
        return Err(Error::Precondition(format!("mesh size must be positive (got {h})")));
    }
    let n = ((b - a) / h).ceil().max(1.0) as usize;
    if n + 1 > MAX_VERTICES {
        return Err(Error::Resource(format!("{} vertices exceed the budget of {MAX_VERTICES}", n + 1)));
    }
    let vertices: Vec<Point> = (0..=n)
        .map(|i| {
            let x = if i == n { b } else { a + (b - a) * i as f64 / n as f64 };
            [x, 0.0]
        })
        .collect();
    let mut boundary = vec![false; n + 1];
    boundary[0] = true;
    boundary[n] = true;
    let segs = (0..n).map(|i| [i, i + 1]).collect();
    Ok(Mesh { domain: *domain, vertices, cells: Cells::Segments(segs), boundary, h: 0.0, locator: None }.finish())
}

/// Radial-layer triangulation: `K = ⌈2R/(√3·h)⌉` concentric rings, ring `k`
/// carrying `6k` equally spaced vertices, consecutive rings zipped into a
/// triangle strip by angle.
pub fn triangulate_disk(domain: &DomainKind, h: f64) -> Result<Mesh> {
    let DomainKind::Disk { center, radius } = *domain else {
        return Err(Error::Geometry("triangulate_disk requires a disk".into()));
    };
    if !(h > 0.0) || h >= 0.5 * radius {
        return Err(Error::Precondition(format!(
            "mesh size must satisfy 0 < h < R/2 (got h={h}, R={radius})"
        )));
    }
    // the ring layout has max edge √3·Δr, so Δr ≤ (√3/2)·h keeps it under 1.5·h
    let rings = (2.0 * radius / (3f64.sqrt() * h) * (1.0 + 1e-12)).ceil() as usize;
    let n_vertices = 1 + 3 * rings * (rings + 1);
    if n_vertices > MAX_VERTICES {
        return Err(Error::Resource(format!("{n_vertices} vertices exceed the budget of {MAX_VERTICES}")));
    }
    let mut vertices = Vec::with_capacity(n_vertices);
    let mut boundary = Vec::with_capacity(n_vertices);
    let mut ring_start = vec![0usize; rings + 1];
    vertices.push(center);
    boundary.push(false);
    for k in 1..=rings {
        ring_start[k] = vertices.len();
        let r = radius * k as f64 / rings as f64;
        let n = 6 * k;
        for j in 0..n {
            let t = 2.0 * PI * j as f64 / n as f64;
            let (s, c) = t.sin_cos();
            vertices.push([center[0] + r * c, center[1] + r * s]);
            boundary.push(k == rings);
        }
    }
    let mut tris = Vec::with_capacity(6 * rings * rings);
    for j in 0..6 {
        tris.push([0, ring_start[1] + j, ring_start[1] + (j + 1) % 6]);
    }
    for k in 2..=rings {
        let (ni, no) = (6 * (k - 1), 6 * k);
        let (si, so) = (ring_start[k - 1], ring_start[k]);
        let (mut i, mut o) = (0usize, 0usize);
        while i < ni || o < no {
            let ang_i = (i + 1) as f64 / ni as f64;
            let ang_o = (o + 1) as f64 / no as f64;
            if o < no && (i >= ni || ang_o <= ang_i) {
                tris.push([si + i % ni, so + o, so + (o + 1) % no]);
                o += 1;
            } else {
                tris.push([si + i % ni, so + o % no, si + (i + 1) % ni]);
                i += 1;
            }
        }
    }
    for t in &mut tris {
        if signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]) < 0.0 {
            t.swap(1, 2);
        }
    }
    Ok(Mesh { domain: *domain, vertices, cells: Cells::Triangles(tris), boundary, h: 0.0, locator: None }.finish())
}

/// Mesh for any supported domain.
pub fn mesh_domain(domain: &DomainKind, h: f64) -> Result<Mesh> {
    match domain {
        DomainKind::Interval { .. } => mesh_interval(domain, h),
        DomainKind::Disk { .. } => triangulate_disk(domain, h),
    }
}

/// `Ω_n = {x ∈ Ω : dist(x, ∂Ω) > 1/n}` as an indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerCutoff {
    pub omega: DomainKind,
    pub margin: f64,
}

pub fn inner_cutoff(omega: &DomainKind, n: usize) -> Result<InnerCutoff> {
    if n == 0 {
        return Err(Error::Precondition("cutoff index n must be at least 1".into()));
    }
    Ok(InnerCutoff { omega: *omega, margin: 1.0 / n as f64 })
}

impl InnerCutoff {
    pub fn indicator(&self, x: Point) -> bool {
        self.omega.inner_distance(x) > self.margin
    }

    pub fn is_empty(&self) -> bool {
        self.margin >= self.omega.inradius()
    }

    /// The region itself (None when empty).
    pub fn region(&self) -> Option<DomainKind> {
        (!self.is_empty()).then(|| self.omega.offset(-self.margin))
    }
}

/// Unit outward normal of a disk at `x` (or of an interval at an endpoint).
pub fn outward_normal(domain: &DomainKind, x: Point) -> Vec2 {
    match *domain {
        DomainKind::Interval { a, b } => {
            if (x[0] - a).abs() <= (x[0] - b).abs() {
                [-1.0, 0.0]
            } else {
                [1.0, 0.0]
            }
        }
        DomainKind::Disk { center, .. } => {
            let d = sub(x, center);
            let r = norm(d);
            [d[0] / r, d[1] / r]
        }
    }
}
