//! Triangle meshes of 2D domains, the flat ring triangulation of the unit
//! disk used by the screen solver, and boundary-edge splitting.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[inline]
pub fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Twice the signed area of (a, b, c).
#[inline]
pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// One closed boundary loop, traversed with the domain on the left.
///
/// Edge `i` joins `verts[i]` to `verts[(i + 1) % n]` and carries `labels[i]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BoundaryLoop {
    pub verts: Vec<usize>,
    pub labels: Vec<u32>,
    /// Cumulative arclength at each loop vertex, starting at 0.
    pub arclength: Vec<f64>,
    pub perimeter: f64,
}

impl BoundaryLoop {
    pub fn len(&self) -> usize {
        self.verts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verts.is_empty()
    }

    pub fn edge(&self, i: usize) -> (usize, usize) {
        (self.verts[i], self.verts[(i + 1) % self.verts.len()])
    }

    pub fn edge_length(&self, i: usize) -> f64 {
        let n = self.len();
        if i + 1 < n {
            self.arclength[i + 1] - self.arclength[i]
        } else {
            self.perimeter - self.arclength[i]
        }
    }

    /// Arclength at the end of edge `i` (wraps to the perimeter).
    pub fn edge_end_s(&self, i: usize) -> f64 {
        self.arclength[i] + self.edge_length(i)
    }

    /// Index of the edge containing arclength `s` (taken modulo the perimeter).
    pub fn edge_at(&self, s: f64) -> usize {
        let s = s.rem_euclid(self.perimeter);
        match self.arclength.binary_search_by(|a| a.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    /// Circular arclength distance between two coordinates.
    pub fn circ_dist(&self, a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(self.perimeter);
        d.min(self.perimeter - d)
    }

    fn recompute_arclength(&mut self, vertices: &[Point]) {
        let n = self.verts.len();
        let mut s = 0.0;
        self.arclength.clear();
        for i in 0..n {
            self.arclength.push(s);
            let (a, b) = (self.verts[i], self.verts[(i + 1) % n]);
            s += dist(vertices[a], vertices[b]);
        }
        self.perimeter = s;
    }
}

/// Handle on a boundary edge: loop index and position in the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeId {
    pub loop_id: usize,
    pub index: usize,
}

/// A boundary edge with its endpoints and label, in loop order.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryEdge {
    pub id: EdgeId,
    pub a: usize,
    pub b: usize,
    pub label: u32,
    pub length: f64,
}

/// Conforming triangle mesh of a 2D domain with labeled boundary loops.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Mesh2D {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub loops: Vec<BoundaryLoop>,
}

impl Mesh2D {
    /// Builds a mesh from vertices, triangles (any orientation) and loops given
    /// as (vertex list, labels). Triangles are reoriented counter-clockwise.
    pub fn new(
        vertices: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        loops: Vec<(Vec<usize>, Vec<u32>)>,
    ) -> Result<Self> {
        for t in &mut triangles {
            if orient(vertices[t[0]], vertices[t[1]], vertices[t[2]]) < 0.0 {
                t.swap(1, 2);
            }
        }
        let loops = loops
            .into_iter()
            .map(|(verts, labels)| {
                let mut l = BoundaryLoop {
                    verts,
                    labels,
                    arclength: Vec::new(),
                    perimeter: 0.0,
                };
                l.recompute_arclength(&vertices);
                l
            })
            .collect();
        let mesh = Mesh2D {
            vertices,
            triangles,
            loops,
        };
        mesh.audit()?;
        Ok(mesh)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_boundary_edges(&self) -> usize {
        self.loops.iter().map(|l| l.len()).sum()
    }

    pub fn tri_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn tri_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.tri_points(t);
        0.5 * orient(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.tri_area(t)).sum()
    }

    /// Polygon area enclosed by the boundary loops (shoelace, signed sum).
    pub fn polygon_area(&self) -> f64 {
        self.loops
            .iter()
            .map(|l| {
                let n = l.len();
                0.5 * (0..n)
                    .map(|i| {
                        let p = self.vertices[l.verts[i]];
                        let q = self.vertices[l.verts[(i + 1) % n]];
                        p[0] * q[1] - q[0] * p[1]
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn boundary_edges(&self) -> Vec<BoundaryEdge> {
        let mut out = Vec::with_capacity(self.n_boundary_edges());
        for (li, l) in self.loops.iter().enumerate() {
            for i in 0..l.len() {
                let (a, b) = l.edge(i);
                out.push(BoundaryEdge {
                    id: EdgeId { loop_id: li, index: i },
                    a,
                    b,
                    label: l.labels[i],
                    length: l.edge_length(i),
                });
            }
        }
        out
    }

    /// Flat index of a boundary edge in `boundary_edges()` order.
    pub fn edge_flat_index(&self, id: EdgeId) -> usize {
        self.loops[..id.loop_id].iter().map(|l| l.len()).sum::<usize>() + id.index
    }

    /// Edge lengths (min, max) over all triangle edges.
    pub fn edge_length_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for t in &self.triangles {
            for k in 0..3 {
                let l = dist(self.vertices[t[k]], self.vertices[t[(k + 1) % 3]]);
                lo = lo.min(l);
                hi = hi.max(l);
            }
        }
        (lo, hi)
    }

    pub fn mean_boundary_edge(&self, loop_id: usize) -> f64 {
        let l = &self.loops[loop_id];
        l.perimeter / l.len() as f64
    }

    /// Map from undirected edge to the triangles containing it.
    pub fn edge_incidence(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::with_capacity(3 * self.n_triangles());
        for (ti, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(ti);
            }
        }
        map
    }

    /// Checks every structural invariant of the mesh.
    pub fn audit(&self) -> Result<()> {
        let n = self.n_vertices();
        let (_, hmax) = if self.triangles.is_empty() {
            (0.0, 1.0)
        } else {
            self.edge_length_range()
        };
        for (ti, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(Error::geom(format!("triangle {ti} references a missing vertex")));
            }
            let a = self.tri_area(ti);
            if !(a > 1e-14 * hmax * hmax * 1e-12) || a <= 0.0 {
                return Err(Error::geom(format!("triangle {ti} has non-positive area {a:e}")));
            }
        }
        let inc = self.edge_incidence();
        let mut boundary = HashMap::new();
        for l in &self.loops {
            if l.verts.len() < 3 || l.labels.len() != l.verts.len() {
                return Err(Error::Topology("boundary loop is malformed".into()));
            }
            for i in 0..l.len() {
                let (a, b) = l.edge(i);
                if boundary.insert((a.min(b), a.max(b)), ()).is_some() {
                    return Err(Error::Topology(format!("boundary edge ({a},{b}) repeated")));
                }
                match inc.get(&(a.min(b), a.max(b))) {
                    Some(ts) if ts.len() == 1 => {
                        // domain on the left: (a, b) must appear in the triangle's CCW order
                        let t = self.triangles[ts[0]];
                        let ok = (0..3).any(|k| t[k] == a && t[(k + 1) % 3] == b);
                        if !ok {
                            return Err(Error::Topology(format!(
                                "boundary edge ({a},{b}) has the domain on its right"
                            )));
                        }
                    }
                    _ => {
                        return Err(Error::Topology(format!(
                            "boundary edge ({a},{b}) not owned by exactly one triangle"
                        )))
                    }
                }
                if i > 0 && !(l.arclength[i] > l.arclength[i - 1]) {
                    return Err(Error::Topology("arclength not strictly increasing".into()));
                }
            }
        }
        for (e, ts) in &inc {
            let on_boundary = boundary.contains_key(e);
            let expected = if on_boundary { 1 } else { 2 };
            if ts.len() != expected {
                return Err(Error::Topology(format!("edge {e:?} shared by {} triangles", ts.len())));
            }
        }
        Ok(())
    }

    /// Position on a loop at arclength `s` (modulo the perimeter).
    pub fn point_at(&self, loop_id: usize, s: f64) -> Point {
        let l = &self.loops[loop_id];
        let s = s.rem_euclid(l.perimeter);
        let i = l.edge_at(s);
        let (a, b) = l.edge(i);
        let t = ((s - l.arclength[i]) / l.edge_length(i)).clamp(0.0, 1.0);
        lerp(self.vertices[a], self.vertices[b], t)
    }

    /// Outward unit normal of boundary edge `i` of a loop.
    pub fn edge_normal(&self, loop_id: usize, i: usize) -> Point {
        let (a, b) = self.loops[loop_id].edge(i);
        let d = sub(self.vertices[b], self.vertices[a]);
        let l = d[0].hypot(d[1]);
        [d[1] / l, -d[0] / l]
    }

    /// Relabels loop edges through a function of the edge-midpoint arclength and current label.
    pub fn relabel(&mut self, loop_id: usize, f: impl Fn(f64, u32) -> u32) {
        let l = &mut self.loops[loop_id];
        for i in 0..l.verts.len() {
            let mid = l.arclength[i] + 0.5 * l.edge_length(i);
            l.labels[i] = f(mid, l.labels[i]);
        }
    }

    /// Inserts a vertex at fraction `t` of a boundary edge and splits the owning triangle.
    pub fn split_boundary_edge(&self, edge: EdgeId, t: f64) -> Result<Mesh2D> {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::param(format!("split fraction {t} outside (0,1)")));
        }
        let l = self
            .loops
            .get(edge.loop_id)
            .ok_or_else(|| Error::param("no such loop"))?;
        if edge.index >= l.len() {
            return Err(Error::param("no such boundary edge"));
        }
        let (a, b) = l.edge(edge.index);
        let owner = self
            .triangles
            .iter()
            .position(|tri| (0..3).any(|k| tri[k] == a && tri[(k + 1) % 3] == b))
            .ok_or_else(|| Error::Topology("boundary edge has no owning triangle".into()))?;
        let tri = self.triangles[owner];
        let c = tri.iter().copied().find(|&v| v != a && v != b).unwrap();
        let p = lerp(self.vertices[a], self.vertices[b], t);
        let mut mesh = self.clone();
        let m = mesh.vertices.len();
        mesh.vertices.push(p);
        let h = l.edge_length(edge.index);
        let t1 = [a, m, c];
        let t2 = [m, b, c];
        for tt in [t1, t2] {
            let area = 0.5 * orient(mesh.vertices[tt[0]], mesh.vertices[tt[1]], mesh.vertices[tt[2]]);
            if area < 1e-14 * h * h {
                return Err(Error::geom(format!(
                    "split produces a degenerate triangle (area {area:e})"
                )));
            }
        }
        mesh.triangles[owner] = t1;
        mesh.triangles.push(t2);
        let lm = &mut mesh.loops[edge.loop_id];
        let label = lm.labels[edge.index];
        lm.verts.insert(edge.index + 1, m);
        lm.labels.insert(edge.index + 1, label);
        let s_new = lm.arclength[edge.index] + t * h;
        lm.arclength.insert(edge.index + 1, s_new);
        Ok(mesh)
    }

    /// Triangle containing `p` (barycentric test with tolerance) and its barycentric coordinates.
    pub fn locate(&self, p: Point, tol: f64) -> Option<(usize, [f64; 3])> {
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for ti in 0..self.n_triangles() {
            let bc = self.barycentric(ti, p);
            let m = bc.iter().cloned().fold(f64::INFINITY, f64::min);
            if m >= -tol {
                return Some((ti, bc));
            }
            if best.as_ref().is_none_or(|b| m > b.2) {
                best = Some((ti, bc, m));
            }
        }
        None
    }

    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.tri_points(t);
        let d = orient(a, b, c);
        let l1 = orient(p, b, c) / d;
        let l2 = orient(a, p, c) / d;
        [l1, l2, 1.0 - l1 - l2]
    }
}

/// Flat triangulation of the unit disk in the plane z = 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiskSurfaceMesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub on_rim: Vec<bool>,
    /// Nominal mesh size (ring spacing); see [`DiskSurfaceMesh::max_edge`].
    pub h: f64,
}

impl DiskSurfaceMesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn tri_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn tri_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.tri_points(t);
        0.5 * orient(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.tri_area(t)).sum()
    }

    pub fn max_edge(&self) -> f64 {
        let mut h: f64 = 0.0;
        for t in &self.triangles {
            for k in 0..3 {
                h = h.max(dist(self.vertices[t[k]], self.vertices[t[(k + 1) % 3]]));
            }
        }
        h
    }

    pub fn audit(&self) -> Result<()> {
        for (i, v) in self.vertices.iter().enumerate() {
            let r = v[0].hypot(v[1]);
            if r > 1.0 + 1e-12 {
                return Err(Error::geom(format!("vertex {i} outside the unit disk")));
            }
            if self.on_rim[i] && (r - 1.0).abs() > 1e-10 {
                return Err(Error::geom(format!("rim vertex {i} off the unit circle")));
            }
        }
        let as_mesh = Mesh2D {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            loops: vec![],
        };
        for t in 0..self.triangles.len() {
            if as_mesh.tri_area(t) <= 0.0 {
                return Err(Error::geom(format!("triangle {t} has non-positive area")));
            }
        }
        let inc = as_mesh.edge_incidence();
        for (e, ts) in inc {
            let rim_edge = self.on_rim[e.0] && self.on_rim[e.1];
            if ts.len() != if rim_edge { 1 } else { 2 } {
                return Err(Error::Topology(format!("edge {e:?} shared by {} triangles", ts.len())));
            }
        }
        Ok(())
    }
}

/// Concentric-ring triangulation: ring `r` has `6 r` vertices at radius `r / n_rings`.
///
/// Vertices are hexagonal-lattice points projected radially onto their ring,
/// so triangles stay close to equilateral. `h` is the ring spacing.
pub fn gen_screen_disk(n_rings: usize) -> Result<DiskSurfaceMesh> {
    if n_rings == 0 {
        return Err(Error::param("n_rings must be at least 1"));
    }
    let n = n_rings;
    let corner = |k: usize| {
        let a = PI / 3.0 * k as f64;
        [a.cos(), a.sin()]
    };
    let mut vertices = vec![[0.0, 0.0]];
    let mut on_rim = vec![false];
    let mut ring_start = vec![0usize];
    for r in 1..=n {
        ring_start.push(vertices.len());
        let rad = r as f64 / n as f64;
        for k in 0..6 {
            let (c0, c1) = (corner(k), corner(k + 1));
            for j in 0..r {
                let (a, b) = ((r - j) as f64, j as f64);
                let q = [a * c0[0] + b * c1[0], a * c0[1] + b * c1[1]];
                let th = q[1].atan2(q[0]);
                vertices.push([rad * th.cos(), rad * th.sin()]);
                on_rim.push(r == n);
            }
        }
    }
    let mut triangles = Vec::with_capacity(6 * n * n);
    for r in 1..=n {
        let outer = |j: usize| ring_start[r] + j % (6 * r);
        if r == 1 {
            for j in 0..6 {
                triangles.push([0, outer(j), outer(j + 1)]);
            }
            continue;
        }
        let inner = |i: usize| ring_start[r - 1] + i % (6 * (r - 1));
        for k in 0..6 {
            let (i0, j0) = (k * (r - 1), k * r);
            for i in 0..r {
                triangles.push([inner(i0 + i), outer(j0 + i), outer(j0 + i + 1)]);
            }
            for i in 0..r - 1 {
                triangles.push([inner(i0 + i), outer(j0 + i + 1), inner(i0 + i + 1)]);
            }
        }
    }
    for t in &mut triangles {
        if orient(vertices[t[0]], vertices[t[1]], vertices[t[2]]) < 0.0 {
            t.swap(1, 2);
        }
    }
    let mesh = DiskSurfaceMesh {
        vertices,
        triangles,
        on_rim,
        h: 1.0 / n as f64,
    };
    mesh.audit()?;
    Ok(mesh)
}

/// Domain shapes handled by the generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Disk centered at the origin; arclength starts at (radius, 0), counter-clockwise.
    Disk { radius: f64 },
    /// Square [0, side]^2; arclength starts at the origin, counter-clockwise.
    /// Side labels: 1 bottom, 2 right, 3 top, 4 left.
    Square { side: f64 },
}

impl Shape {
    pub fn perimeter(&self) -> f64 {
        match *self {
            Shape::Disk { radius } => 2.0 * PI * radius,
            Shape::Square { side } => 4.0 * side,
        }
    }

    /// Point of the exact boundary curve at curve arclength `s`.
    pub fn curve_point(&self, s: f64) -> Point {
        let s = s.rem_euclid(self.perimeter());
        match *self {
            Shape::Disk { radius } => {
                let th = s / radius;
                [radius * th.cos(), radius * th.sin()]
            }
            Shape::Square { side } => {
                let k = (s / side).floor().min(3.0);
                let u = s - k * side;
                match k as i32 {
                    0 => [u, 0.0],
                    1 => [side, u],
                    2 => [side - u, side],
                    _ => [0.0, side - u],
                }
            }
        }
    }

    /// Signed distance to the boundary, positive inside.
    pub fn inner_distance(&self, p: Point) -> f64 {
        match *self {
            Shape::Disk { radius } => radius - p[0].hypot(p[1]),
            Shape::Square { side } => p[0].min(p[1]).min(side - p[0]).min(side - p[1]),
        }
    }

    fn corners(&self) -> Vec<f64> {
        match *self {
            Shape::Disk { .. } => vec![],
            Shape::Square { side } => vec![0.0, side, 2.0 * side, 3.0 * side],
        }
    }

    fn label_at(&self, s: f64) -> u32 {
        match *self {
            Shape::Disk { .. } => 0,
            Shape::Square { side } => 1 + ((s.rem_euclid(4.0 * side)) / side).floor().min(3.0) as u32,
        }
    }

    fn bbox(&self) -> (Point, f64) {
        match *self {
            Shape::Disk { radius } => ([-radius, -radius], 2.0 * radius),
            Shape::Square { side } => ([0.0, 0.0], side),
        }
    }
}

fn delaunay(points: &[Point]) -> Result<Vec<[usize; 3]>> {
    use spade::{DelaunayTriangulation, Point2, Triangulation};
    let pts: Vec<Point2<f64>> = points.iter().map(|p| Point2::new(p[0], p[1])).collect();
    let dt = DelaunayTriangulation::<Point2<f64>>::bulk_load_stable(pts)
        .map_err(|e| Error::geom(format!("triangulation failed: {e:?}")))?;
    if dt.num_vertices() != points.len() {
        return Err(Error::geom("duplicate points in triangulation input"));
    }
    Ok(dt
        .inner_faces()
        .map(|f| {
            let v = f.vertices();
            [v[0].fix().index(), v[1].fix().index(), v[2].fix().index()]
        })
        .collect())
}

fn assemble_from_points(shape: Shape, boundary_s: &[f64], interior: Vec<Point>) -> Result<Mesh2D> {
    let mut vertices: Vec<Point> = boundary_s.iter().map(|&s| shape.curve_point(s)).collect();
    let nb = vertices.len();
    vertices.extend(interior);
    let triangles = delaunay(&vertices)?;
    let labels = (0..nb)
        .map(|i| {
            let s0 = boundary_s[i];
            let s1 = if i + 1 < nb {
                boundary_s[i + 1]
            } else {
                shape.perimeter()
            };
            shape.label_at(0.5 * (s0 + s1))
        })
        .collect();
    Mesh2D::new(vertices, triangles, vec![((0..nb).collect(), labels)])
}

/// Disk mesh: `n_boundary` uniform boundary vertices and concentric interior rings.
///
/// `target_h` is the side of the equilateral triangle whose area matches the
/// area per vertex, so interior spacing is about `0.66 target_h`.
pub fn gen_disk_domain(radius: f64, n_boundary: usize, target_h: f64) -> Result<Mesh2D> {
    if !(radius > 0.0) || n_boundary < 8 || !(target_h > 0.0 && target_h <= radius) {
        return Err(Error::param(format!(
            "bad disk parameters ({radius}, {n_boundary}, {target_h})"
        )));
    }
    let shape = Shape::Disk { radius };
    let spacing = target_h * (3f64.sqrt() / 4.0).sqrt();
    let p = shape.perimeter();
    let boundary_s: Vec<f64> = (0..n_boundary).map(|i| p * i as f64 / n_boundary as f64).collect();
    let boundary_gap = p / n_boundary as f64;
    // First interior ring sits about one spacing inside the boundary polygon.
    let first = radius - 0.5 * (spacing + boundary_gap.min(2.0 * spacing)) * 3f64.sqrt() / 2.0 * 1.1;
    let mut interior = Vec::new();
    if first > 0.5 * spacing {
        let n_rings = (first / spacing).round().max(1.0) as usize;
        let dr = first / n_rings as f64;
        for k in 0..n_rings {
            let r = first - k as f64 * dr;
            let m = ((2.0 * PI * r / spacing).round() as usize).max(6);
            let offset = if k % 2 == 0 { 0.0 } else { 0.5 };
            for j in 0..m {
                let th = 2.0 * PI * (j as f64 + offset) / m as f64;
                interior.push([r * th.cos(), r * th.sin()]);
            }
        }
    }
    interior.push([0.0, 0.0]);
    let mut mesh = assemble_from_points(shape, &boundary_s, interior)?;
    laplacian_smooth(&mut mesh, shape, 3)?;
    Ok(mesh)
}

fn laplacian_smooth(mesh: &mut Mesh2D, shape: Shape, iterations: usize) -> Result<()> {
    let nb = mesh.loops[0].len();
    let boundary_s: Vec<f64> = mesh.loops[0]
        .verts
        .iter()
        .map(|&v| {
            let p = mesh.vertices[v];
            match shape {
                Shape::Disk { radius } => p[1].atan2(p[0]).rem_euclid(2.0 * PI) * radius,
                Shape::Square { .. } => 0.0,
            }
        })
        .collect();
    for _ in 0..iterations {
        let mut sum = vec![[0.0, 0.0]; mesh.n_vertices()];
        let mut cnt = vec![0usize; mesh.n_vertices()];
        // sorted so the sums do not depend on hash order
        let mut edges: Vec<(usize, usize)> = mesh.edge_incidence().into_keys().collect();
        edges.sort_unstable();
        for (a, b) in edges {
            for (u, v) in [(a, b), (b, a)] {
                sum[u][0] += mesh.vertices[v][0];
                sum[u][1] += mesh.vertices[v][1];
                cnt[u] += 1;
            }
        }
        let mut pts = mesh.vertices.clone();
        for v in nb..mesh.n_vertices() {
            if cnt[v] > 0 {
                pts[v] = [sum[v][0] / cnt[v] as f64, sum[v][1] / cnt[v] as f64];
            }
        }
        let interior = pts[nb..].to_vec();
        *mesh = assemble_from_points(shape, &boundary_s, interior)?;
    }
    Ok(())
}

/// Structured square mesh: cells of side at most `target_h`, each split into two triangles.
pub fn gen_square_domain(side: f64, target_h: f64) -> Result<Mesh2D> {
    if !(side > 0.0) || !(target_h > 0.0 && target_h <= side) {
        return Err(Error::param(format!("bad square parameters ({side}, {target_h})")));
    }
    let n = (side / target_h - 1e-9).ceil().max(1.0) as usize;
    let h = side / n as f64;
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 * h, j as f64 * h]);
        }
    }
    // Exact corner and side coordinates.
    for v in &mut vertices {
        for c in v.iter_mut() {
            if (*c - side).abs() < 1e-12 * side {
                *c = side;
            }
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let mut lv = Vec::with_capacity(4 * n);
    let mut labels = Vec::with_capacity(4 * n);
    for i in 0..n {
        lv.push(idx(i, 0));
        labels.push(1);
    }
    for j in 0..n {
        lv.push(idx(n, j));
        labels.push(2);
    }
    for i in (1..=n).rev() {
        lv.push(idx(i, n));
        labels.push(3);
    }
    for j in (1..=n).rev() {
        lv.push(idx(0, j));
        labels.push(4);
    }
    Mesh2D::new(vertices, triangles, vec![(lv, labels)])
}

/// Mesh with local sizes given by `sizing` (quadtree interior points plus Delaunay).
///
/// `forced_s` lists curve-arclength coordinates that must be boundary vertices.
pub fn gen_graded(shape: Shape, sizing: &dyn Fn(Point) -> f64, forced_s: &[f64]) -> Result<Mesh2D> {
    let p = shape.perimeter();
    let mut breaks: Vec<f64> = shape.corners();
    breaks.extend(forced_s.iter().map(|s| s.rem_euclid(p)));
    if breaks.is_empty() {
        breaks.push(0.0);
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * p);
    // Rotate so that arclength 0 is always a boundary vertex.
    if breaks[0] > 1e-14 * p {
        breaks.insert(0, 0.0);
    }
    let mut boundary_s = Vec::new();
    for k in 0..breaks.len() {
        let s0 = breaks[k];
        let s1 = if k + 1 < breaks.len() { breaks[k + 1] } else { p };
        boundary_s.push(s0);
        let mut steps = Vec::new();
        let mut s = s0;
        loop {
            let hloc = sizing(shape.curve_point(s));
            let hmid = sizing(shape.curve_point((s + 0.5 * hloc).min(s1)));
            let step = hloc.min(hmid).max(1e-12 * p);
            if s + step >= s1 - 0.3 * step {
                steps.push(s1 - s);
                break;
            }
            steps.push(step);
            s += step;
        }
        let total: f64 = steps.iter().sum();
        let scale = (s1 - s0) / total;
        let mut acc = s0;
        for st in &steps[..steps.len() - 1] {
            acc += st * scale;
            boundary_s.push(acc);
        }
    }
    let (origin, size) = shape.bbox();
    let mut interior = Vec::new();
    let mut stack = vec![(origin, size)];
    while let Some((o, cs)) = stack.pop() {
        let c = [o[0] + 0.5 * cs, o[1] + 0.5 * cs];
        let d = shape.inner_distance(c);
        if d < -0.75 * cs {
            continue;
        }
        let target = sizing(c);
        if cs > target {
            let hcs = 0.5 * cs;
            for (dx, dy) in [(0.0, 0.0), (hcs, 0.0), (0.0, hcs), (hcs, hcs)] {
                stack.push(([o[0] + dx, o[1] + dy], hcs));
            }
        } else if d >= 0.55 * cs.max(target.min(cs)) {
            interior.push(c);
        }
    }
    interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assemble_from_points(shape, &boundary_s, interior)
}

/// Sizing field that grows linearly away from a set of focus points.
pub fn focus_sizing(foci: Vec<Point>, h_min: f64, grading: f64, h_max: f64) -> impl Fn(Point) -> f64 {
    move |x| {
        let d = foci.iter().map(|&f| dist(f, x)).fold(f64::INFINITY, f64::min);
        if d.is_finite() {
            (h_min + grading * d).min(h_max)
        } else {
            h_max
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perimeter_by_edges(m: &Mesh2D) -> f64 {
        m.boundary_edges()
            .iter()
            .map(|e| dist(m.vertices[e.a], m.vertices[e.b]))
            .sum()
    }

    #[test]
    fn disk_perimeter_is_close_to_circle() {
        let m = gen_disk_domain(1.0, 64, 0.1).unwrap();
        let p = perimeter_by_edges(&m);
        assert!((p - 2.0 * PI).abs() < 0.01 * 2.0 * PI);
        assert_eq!(m.loops[0].len(), 64);
    }

    #[test]
    fn coarse_disk_is_valid() {
        let m = gen_disk_domain(1.0, 8, 1.0).unwrap();
        m.audit().unwrap();
        assert_eq!(m.loops[0].len(), 8);
    }

    #[test]
    fn disk_vertex_count_matches_density_estimate() {
        let (r, h) = (2.0, 0.05);
        let m = gen_disk_domain(r, 128, h).unwrap();
        let estimate = PI * r * r / (3f64.sqrt() / 4.0 * h * h);
        let ratio = m.n_vertices() as f64 / estimate;
        assert!((0.7..=1.3).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn disk_mesh_is_bitwise_reproducible() {
        let a = gen_disk_domain(1.0, 120, 0.1).unwrap();
        for _ in 0..3 {
            let b = gen_disk_domain(1.0, 120, 0.1).unwrap();
            assert_eq!(a.vertices, b.vertices);
            assert_eq!(a.triangles, b.triangles);
        }
    }

    #[test]
    fn disk_interior_edges_within_bounds() {
        let h = 0.1;
        let m = gen_disk_domain(1.0, 64, h).unwrap();
        let boundary: std::collections::HashSet<_> = m
            .boundary_edges()
            .iter()
            .map(|e| (e.a.min(e.b), e.a.max(e.b)))
            .collect();
        for &(a, b) in m.edge_incidence().keys() {
            if boundary.contains(&(a, b)) {
                continue;
            }
            let l = dist(m.vertices[a], m.vertices[b]);
            assert!(l >= h / 3.0 && l <= 2.0 * h, "edge length {l}");
        }
    }

    #[test]
    fn square_examples() {
        let m = gen_square_domain(1.0, 0.5).unwrap();
        assert!(m.n_triangles() >= 2 * 4);
        let m = gen_square_domain(1.0, 0.1).unwrap();
        assert!((m.total_area() - 1.0).abs() < 1e-12);
        let m = gen_square_domain(3.0, 0.2).unwrap();
        assert!((m.loops[0].perimeter - 12.0).abs() < 1e-12);
        let labels: std::collections::BTreeSet<_> = m.loops[0].labels.iter().copied().collect();
        assert_eq!(labels.into_iter().collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn screen_disk_examples() {
        let m = gen_screen_disk(1).unwrap();
        assert_eq!((m.n_vertices(), m.triangles.len()), (7, 6));
        let m = gen_screen_disk(4).unwrap();
        assert!((m.total_area() - PI).abs() < 0.02 * PI);
        let m = gen_screen_disk(25).unwrap();
        assert!((m.h - 0.04).abs() < 0.004, "h = {}", m.h);
        assert!(m.max_edge() < 1.4 * m.h);
        assert_eq!(m.n_vertices(), 1 + 3 * 25 * 26);
        assert_eq!(m.triangles.len(), 6 * 25 * 25);
        assert!(gen_screen_disk(0).is_err());
    }

    #[test]
    fn split_updates_counts_and_preserves_length() {
        let m = gen_disk_domain(1.0, 32, 0.3).unwrap();
        let e = EdgeId { loop_id: 0, index: 5 };
        let s = m.split_boundary_edge(e, 0.5).unwrap();
        assert_eq!(s.n_triangles(), m.n_triangles() + 1);
        assert_eq!(s.n_boundary_edges(), m.n_boundary_edges() + 1);
        assert!((s.loops[0].perimeter - m.loops[0].perimeter).abs() < 1e-12);
        assert!((s.total_area() - m.total_area()).abs() < 1e-12);
        assert!(m.split_boundary_edge(e, 1.0).is_err());
    }

    #[test]
    fn successive_adjacent_splits_stay_conforming() {
        let m = gen_disk_domain(1.0, 32, 0.3).unwrap();
        let s = m.split_boundary_edge(EdgeId { loop_id: 0, index: 3 }, 0.4).unwrap();
        // edge 5 of the new loop was edge 4 of the old one (adjacent to the split edge)
        let s = s.split_boundary_edge(EdgeId { loop_id: 0, index: 5 }, 0.6).unwrap();
        s.audit().unwrap();
        let inc = s.edge_incidence();
        let boundary: std::collections::HashSet<_> = s
            .boundary_edges()
            .iter()
            .map(|e| (e.a.min(e.b), e.a.max(e.b)))
            .collect();
        for (e, ts) in inc {
            assert_eq!(ts.len(), if boundary.contains(&e) { 1 } else { 2 });
        }
    }

    #[test]
    fn area_matches_shoelace() {
        for m in [
            gen_disk_domain(1.0, 40, 0.2).unwrap(),
            gen_square_domain(2.0, 0.3).unwrap(),
        ] {
            let rel = (m.total_area() - m.polygon_area()).abs() / m.polygon_area();
            assert!(rel < 1e-10);
        }
    }

    #[test]
    fn graded_mesh_resolves_focus() {
        let shape = Shape::Disk { radius: 1.0 };
        let x0 = [0.0, 1.0];
        let sizing = focus_sizing(vec![x0], 1e-4, 0.3, 0.1);
        let s0 = PI / 2.0;
        let forced = [s0 - 1e-3, s0 + 1e-3];
        let m = gen_graded(shape, &sizing, &forced).unwrap();
        m.audit().unwrap();
        let l = &m.loops[0];
        let has = |s: f64| {
            let p = shape.curve_point(s);
            l.verts.iter().any(|&v| dist(m.vertices[v], p) < 1e-13)
        };
        assert!(has(forced[0]) && has(forced[1]));
        let near = l.verts.iter().filter(|&&v| dist(m.vertices[v], x0) < 1e-3).count();
        assert!(near >= 8, "only {near} boundary vertices near the focus");
    }
}
