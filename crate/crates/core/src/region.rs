//! Level sets on a boundary loop: regions G made of arcs, their interface
//! points, transport, disk insertion and body fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh2d::{EdgeId, Mesh2D, Point};

const ZERO_SNAP: f64 = 1e-13;

/// Per-vertex level set on one boundary loop; negative on G.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLevelSet {
    pub phi: Vec<f64>,
    /// Arclength of each loop vertex.
    pub s: Vec<f64>,
    pub loop_id: usize,
    pub perimeter: f64,
}

/// An endpoint of G on the boundary curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfacePoint {
    pub s: f64,
    pub position: Point,
    /// +1 when increasing arclength leaves G, -1 otherwise.
    pub conormal_sign: f64,
}

#[inline]
pub fn circ_dist(a: f64, b: f64, perimeter: f64) -> f64 {
    let d = (a - b).rem_euclid(perimeter);
    d.min(perimeter - d)
}

/// Signed arclength distance from `s` to the region bounded by `interface`.
///
/// `interface` must be sorted by `s` with alternating conormal signs.
pub fn signed_distance(s: f64, interface: &[InterfacePoint], perimeter: f64) -> f64 {
    if interface.is_empty() {
        return 0.5 * perimeter;
    }
    let d = interface
        .iter()
        .map(|p| circ_dist(s, p.s, perimeter))
        .fold(f64::INFINITY, f64::min);
    if inside(s, interface, perimeter) {
        -d
    } else {
        d
    }
}

/// Whether `s` lies in G (strictly between an entering and a leaving point).
pub fn inside(s: f64, interface: &[InterfacePoint], perimeter: f64) -> bool {
    if interface.is_empty() {
        return false;
    }
    let s = s.rem_euclid(perimeter);
    // last interface point at or before s, circularly
    let k = interface.partition_point(|p| p.s <= s);
    let prev = if k == 0 { interface.len() - 1 } else { k - 1 };
    interface[prev].conormal_sign < 0.0
}

/// Arcs (start, end) of G with start in [0, perimeter) and end > start, possibly past the perimeter.
pub fn arcs_of(interface: &[InterfacePoint], perimeter: f64) -> Vec<(f64, f64)> {
    let n = interface.len();
    let mut out = Vec::with_capacity(n / 2);
    for i in 0..n {
        if interface[i].conormal_sign < 0.0 {
            let a = interface[i].s;
            let mut b = interface[(i + 1) % n].s;
            if b <= a {
                b += perimeter;
            }
            out.push((a, b));
        }
    }
    out
}

fn check_interface(interface: &[InterfacePoint]) -> Result<()> {
    if !interface.len().is_multiple_of(2) {
        return Err(Error::Topology(format!(
            "odd number of interface points ({})",
            interface.len()
        )));
    }
    for w in interface.windows(2) {
        if w[1].s < w[0].s {
            return Err(Error::Topology("interface points not sorted".into()));
        }
        if w[0].conormal_sign == w[1].conormal_sign {
            return Err(Error::Topology("interface conormal signs do not alternate".into()));
        }
    }
    Ok(())
}

impl BoundaryLevelSet {
    fn empty_like(mesh: &Mesh2D, loop_id: usize) -> Self {
        let l = &mesh.loops[loop_id];
        BoundaryLevelSet {
            phi: vec![0.0; l.len()],
            s: l.arclength.clone(),
            loop_id,
            perimeter: l.perimeter,
        }
    }

    /// Level set whose zero set bounds the given arcs (start, end) in arclength.
    pub fn from_arcs(mesh: &Mesh2D, loop_id: usize, arcs: &[(f64, f64)]) -> Result<Self> {
        let p = mesh.loops[loop_id].perimeter;
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for &(a, b) in arcs {
            let len = b - a;
            if !(len > 0.0) {
                return Err(Error::param(format!("arc ({a}, {b}) has non-positive length")));
            }
            if len >= p {
                return Err(Error::param("arc covers the whole loop"));
            }
            merged = union_arcs(&merged, (a.rem_euclid(p), a.rem_euclid(p) + len), p);
        }
        let interface = interface_from_arcs(mesh, loop_id, &merged);
        distance_to_region(mesh, loop_id, &interface)
    }

    pub fn values_at(&self, interface: &[InterfacePoint]) -> Vec<f64> {
        self.s
            .iter()
            .map(|&s| signed_distance(s, interface, self.perimeter))
            .collect()
    }

    /// Piecewise-linear interpolation of phi at arclength `s`.
    pub fn eval(&self, s: f64) -> f64 {
        let s = s.rem_euclid(self.perimeter);
        let n = self.s.len();
        let i = self.s.partition_point(|&x| x <= s).saturating_sub(1);
        let (s0, s1) = (self.s[i], if i + 1 < n { self.s[i + 1] } else { self.perimeter });
        let t = (s - s0) / (s1 - s0);
        self.phi[i] * (1.0 - t) + self.phi[(i + 1) % n] * t
    }

    fn edge_len(&self, i: usize) -> f64 {
        if i + 1 < self.s.len() {
            self.s[i + 1] - self.s[i]
        } else {
            self.perimeter - self.s[i]
        }
    }

    pub fn min_edge(&self) -> f64 {
        (0..self.s.len())
            .map(|i| self.edge_len(i))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mean_edge(&self) -> f64 {
        self.perimeter / self.s.len() as f64
    }
}

/// Interface points bounding disjoint arcs, sorted by arclength.
pub fn interface_from_arcs(mesh: &Mesh2D, loop_id: usize, arcs: &[(f64, f64)]) -> Vec<InterfacePoint> {
    let p = mesh.loops[loop_id].perimeter;
    let mut pts = Vec::with_capacity(2 * arcs.len());
    for &(a, b) in arcs {
        for (s, sign) in [(a, -1.0), (b, 1.0)] {
            let s = s.rem_euclid(p);
            pts.push(InterfacePoint {
                s,
                position: mesh.point_at(loop_id, s),
                conormal_sign: sign,
            });
        }
    }
    pts.sort_by(|x, y| x.s.partial_cmp(&y.s).unwrap());
    pts
}

/// Union of a set of disjoint circular arcs with one more arc.
pub fn union_arcs(arcs: &[(f64, f64)], new: (f64, f64), perimeter: f64) -> Vec<(f64, f64)> {
    let mut all: Vec<(f64, f64)> = arcs
        .iter()
        .chain(std::iter::once(&new))
        .map(|&(a, b)| {
            let a0 = a.rem_euclid(perimeter);
            (a0, a0 + (b - a))
        })
        .collect();
    all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in all {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    // The last arc may wrap past the perimeter onto the first ones.
    while merged.len() > 1 {
        let first = merged[0];
        let last = merged.last_mut().unwrap();
        if first.0 + perimeter <= last.1 {
            last.1 = last.1.max(first.1 + perimeter);
            merged.remove(0);
        } else {
            break;
        }
    }
    if merged.iter().any(|&(a, b)| b - a >= perimeter) {
        // the whole loop; kept as one arc just short of full
        return vec![(0.0, perimeter * (1.0 - 1e-12))];
    }
    merged
}

/// Signed distance level set of the region bounded by `interface`.
pub fn distance_to_region(mesh: &Mesh2D, loop_id: usize, interface: &[InterfacePoint]) -> Result<BoundaryLevelSet> {
    check_interface(interface)?;
    let mut ls = BoundaryLevelSet::empty_like(mesh, loop_id);
    ls.phi = ls.values_at(interface);
    Ok(ls)
}

/// Zero crossings of the piecewise-linear interpolant of phi, sorted by arclength.
pub fn extract_interface(ls: &BoundaryLevelSet, mesh: &Mesh2D) -> Vec<InterfacePoint> {
    let n = ls.phi.len();
    let sign = |x: f64| {
        if x.abs() < ZERO_SNAP {
            0
        } else if x < 0.0 {
            -1
        } else {
            1
        }
    };
    let nonzero: Vec<usize> = (0..n).filter(|&i| sign(ls.phi[i]) != 0).collect();
    let mut out = Vec::new();
    if nonzero.is_empty() {
        return out;
    }
    let m = nonzero.len();
    for k in 0..m {
        let i = nonzero[k];
        let j = nonzero[(k + 1) % m];
        let (si, sj) = (sign(ls.phi[i]), sign(ls.phi[j]));
        if si == sj {
            continue;
        }
        let gap = (j + n - i) % n;
        let s = if gap == 1 || (m == 1 && gap == 0) {
            let (a, b) = (ls.phi[i], ls.phi[j]);
            let t = a / (a - b);
            ls.s[i] + t * ls.edge_len(i)
        } else {
            // a run of zero vertices: snap to its first vertex
            ls.s[(i + 1) % n]
        };
        let s = s.rem_euclid(ls.perimeter);
        out.push(InterfacePoint {
            s,
            position: mesh.point_at(ls.loop_id, s),
            conormal_sign: if sj > si { 1.0 } else { -1.0 },
        });
    }
    out.sort_by(|a, b| a.s.partial_cmp(&b.s).unwrap());
    out
}

/// Exact redistancing: extract the zero set, then rebuild the signed distance.
pub fn redistance(ls: &BoundaryLevelSet, mesh: &Mesh2D) -> BoundaryLevelSet {
    let interface = extract_interface(ls, mesh);
    let mut out = ls.clone();
    if interface.is_empty() {
        // keep the sign of the constant region
        let neg = ls.phi.iter().any(|&x| x < -ZERO_SNAP);
        let v = 0.5 * ls.perimeter;
        out.phi = vec![if neg { -v } else { v }; ls.phi.len()];
        return out;
    }
    out.phi = ls.values_at(&interface);
    out
}

/// First-order upwind transport of phi along the loop with speed `velocity` (in +s direction).
pub fn advect(ls: &BoundaryLevelSet, velocity: &[f64], tau: f64, mesh: &Mesh2D) -> Result<BoundaryLevelSet> {
    if velocity.len() != ls.phi.len() {
        return Err(Error::param("velocity length does not match the level set"));
    }
    if velocity.iter().any(|v| !v.is_finite()) || !tau.is_finite() {
        return Err(Error::Numeric("non-finite velocity".into()));
    }
    if tau < 0.0 {
        return Err(Error::param("negative advection time"));
    }
    let vmax = velocity.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if tau == 0.0 || vmax == 0.0 {
        return Ok(ls.clone());
    }
    let n = ls.phi.len();
    let hmin = ls.min_edge();
    let n_sub = ((vmax * tau) / (0.9 * hmin)).ceil().max(1.0) as usize;
    let dt = tau / n_sub as f64;
    let mut phi = ls.phi.clone();
    let mut next = vec![0.0; n];
    for _ in 0..n_sub {
        for i in 0..n {
            let v = velocity[i];
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            let grad = if v > 0.0 {
                (phi[i] - phi[im]) / ls.edge_len(im)
            } else {
                (phi[ip] - phi[i]) / ls.edge_len(i)
            };
            next[i] = phi[i] - dt * v * grad;
        }
        std::mem::swap(&mut phi, &mut next);
    }
    let mut out = ls.clone();
    out.phi = phi;
    Ok(redistance(&out, mesh))
}

/// Adds the arc of half-length `eps` centered at `x0_s` to G.
pub fn insert_disk(ls: &BoundaryLevelSet, x0_s: f64, eps: f64, mesh: &Mesh2D) -> Result<BoundaryLevelSet> {
    if !(eps > 0.0 && eps < 0.25 * ls.perimeter) {
        return Err(Error::param(format!("insertion radius {eps} out of range")));
    }
    let interface = extract_interface(ls, mesh);
    let arcs = if interface.is_empty() && ls.phi.iter().all(|&x| x < 0.0) {
        return Ok(ls.clone());
    } else {
        arcs_of(&interface, ls.perimeter)
    };
    let arcs = union_arcs(&arcs, (x0_s - eps, x0_s + eps), ls.perimeter);
    if arcs.iter().any(|&(a, b)| b - a >= ls.perimeter * (1.0 - 1e-9)) {
        // G covers the whole loop: no interface left, keep the pointwise minimum
        let mut out = ls.clone();
        for (phi, &s) in out.phi.iter_mut().zip(&ls.s) {
            *phi = phi.min(circ_dist(s, x0_s, ls.perimeter) - eps).min(-f64::EPSILON);
        }
        return Ok(out);
    }
    let interface = interface_from_arcs(mesh, ls.loop_id, &arcs);
    distance_to_region(mesh, ls.loop_id, &interface)
}

/// Arclength of G under linear interpolation of phi.
pub fn area(ls: &BoundaryLevelSet) -> f64 {
    let n = ls.phi.len();
    let mut a = 0.0;
    for i in 0..n {
        let (p, q) = (ls.phi[i], ls.phi[(i + 1) % n]);
        let l = ls.edge_len(i);
        if p <= 0.0 && q <= 0.0 {
            if p < 0.0 || q < 0.0 {
                a += l;
            }
        } else if p < 0.0 {
            a += l * p / (p - q);
        } else if q < 0.0 {
            a += l * q / (q - p);
        }
    }
    a
}

/// Number of interface points.
pub fn cont(ls: &BoundaryLevelSet, mesh: &Mesh2D) -> usize {
    extract_interface(ls, mesh).len()
}

/// Body-fitted mesh: interface points become boundary vertices.
#[derive(Debug, Clone)]
pub struct FittedRegion {
    pub mesh: Mesh2D,
    /// Interface points after snapping, sorted by arclength.
    pub interface: Vec<InterfacePoint>,
    /// Per boundary edge of `loop_id` in the fitted mesh: true on G.
    pub in_region: Vec<bool>,
    pub loop_id: usize,
}

/// Splits (or snaps) the base mesh so that every interface point of `ls` is a vertex.
pub fn fit_mesh_to_region(mesh: &Mesh2D, ls: &BoundaryLevelSet) -> Result<FittedRegion> {
    let interface = extract_interface(ls, mesh);
    fit_mesh_to_interface(mesh, ls.loop_id, &interface)
}

/// Same as [`fit_mesh_to_region`] for an explicit interface list.
pub fn fit_mesh_to_interface(mesh: &Mesh2D, loop_id: usize, interface: &[InterfacePoint]) -> Result<FittedRegion> {
    check_interface(interface)?;
    let l = &mesh.loops[loop_id];
    let p = l.perimeter;
    // Snap or schedule splits on the base mesh.
    let mut snapped: Vec<(f64, f64)> = Vec::with_capacity(interface.len());
    let mut splits: Vec<(usize, f64, f64)> = Vec::new();
    for ip in interface {
        let i = l.edge_at(ip.s);
        let h = l.edge_length(i);
        let t = (ip.s - l.arclength[i]) / h;
        if t * h <= 0.25 * h {
            snapped.push((l.arclength[i], ip.conormal_sign));
        } else if (1.0 - t) * h <= 0.25 * h {
            snapped.push((l.edge_end_s(i).rem_euclid(p), ip.conormal_sign));
        } else {
            snapped.push((ip.s, ip.conormal_sign));
            splits.push((i, t, ip.s));
        }
    }
    // Drop pairs of points that snapped onto the same vertex.
    snapped.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for sp in snapped {
        match kept.last() {
            Some(last) if (last.0 - sp.0).abs() <= 1e-14 * p => {
                kept.pop();
            }
            _ => kept.push(sp),
        }
    }
    if kept.len() >= 2 {
        let (first, last) = (kept[0], kept[kept.len() - 1]);
        if circ_dist(first.0, last.0, p) <= 1e-14 * p {
            kept.remove(kept.len() - 1);
            kept.remove(0);
        }
    }
    // Splits in descending edge order keep lower edge indices valid.
    splits.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
    let mut out = mesh.clone();
    for (edge, t, s) in splits {
        if !kept.iter().any(|k| k.0 == s) {
            continue;
        }
        // Several points on the same base edge: the later (larger s) was split first,
        // so the remaining ones lie on the first sub-edge with a rescaled fraction.
        let lo = out.loops[loop_id].arclength[edge];
        let hi = out.loops[loop_id].edge_end_s(edge);
        let t_cur = if (hi - lo) > 0.0 { (s - lo) / (hi - lo) } else { t };
        out = out.split_boundary_edge(EdgeId { loop_id, index: edge }, t_cur)?;
    }
    let interface: Vec<InterfacePoint> = kept
        .iter()
        .map(|&(s, sign)| InterfacePoint {
            s,
            position: out.point_at(loop_id, s),
            conormal_sign: sign,
        })
        .collect();
    check_interface(&interface)?;
    let lf = &out.loops[loop_id];
    let in_region = (0..lf.len())
        .map(|i| inside(lf.arclength[i] + 0.5 * lf.edge_length(i), &interface, p))
        .collect();
    Ok(FittedRegion {
        mesh: out,
        interface,
        in_region,
        loop_id,
    })
}

/// Extends per-interface s-velocities to every loop vertex by exponential weights of width `w`.
pub fn extend_velocity(ls: &BoundaryLevelSet, points: &[(f64, f64)], w: f64) -> Vec<f64> {
    if points.is_empty() {
        return vec![0.0; ls.s.len()];
    }
    ls.s.iter()
        .map(|&s| {
            let ds: Vec<f64> = points.iter().map(|&(sk, _)| circ_dist(s, sk, ls.perimeter)).collect();
            let dmin = ds.iter().cloned().fold(f64::INFINITY, f64::min);
            let (mut num, mut den) = (0.0, 0.0);
            for (k, &(_, v)) in points.iter().enumerate() {
                let wk = (-(ds[k] - dmin) / w).exp();
                num += v * wk;
                den += wk;
            }
            num / den
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh2d::{gen_disk_domain, gen_square_domain};
    use proptest::prelude::*;

    fn disk() -> Mesh2D {
        gen_disk_domain(1.0, 256, 0.2).unwrap()
    }

    pub(crate) fn resolved_arcs(offset: f64, weights: &[f64], perimeter: f64, min_gap: f64) -> Vec<(f64, f64)> {
        let total: f64 = weights.iter().sum();
        let free = perimeter - min_gap * weights.len() as f64;
        let mut s = offset * perimeter;
        let mut arcs = Vec::new();
        for pair in weights.chunks(2) {
            let a = s;
            let b = a + min_gap + free * pair[0] / total;
            arcs.push((a, b));
            s = b + min_gap + free * pair[1] / total;
        }
        arcs
    }

    fn brute_sign_changes(phi: &[f64]) -> usize {
        let n = phi.len();
        (0..n).filter(|&i| (phi[i] < 0.0) != (phi[(i + 1) % n] < 0.0)).count()
    }

    #[test]
    fn distance_examples() {
        let m = disk();
        let l = m.loops[0].perimeter;
        let ls = BoundaryLevelSet::from_arcs(&m, 0, &[(0.0, l / 4.0)]).unwrap();
        assert!((ls.eval(l / 8.0) + l / 8.0).abs() < 1e-12);
        assert!((ls.eval(5.0 * l / 8.0) - 3.0 * l / 8.0).abs() < 1e-12);
        let empty = distance_to_region(&m, 0, &[]).unwrap();
        assert!(empty.phi.iter().all(|&x| x == l / 2.0));
        let odd = [InterfacePoint {
            s: 0.1,
            position: [0.0, 0.0],
            conormal_sign: 1.0,
        }];
        assert!(matches!(distance_to_region(&m, 0, &odd), Err(Error::Topology(_))));
    }

    #[test]
    fn extract_examples() {
        let m = gen_square_domain(4.0, 1.0).unwrap();
        let mut ls = BoundaryLevelSet::empty_like(&m, 0);
        ls.phi = vec![1.0; ls.s.len()];
        assert!(extract_interface(&ls, &m).is_empty());
        // vertices at s = 1 and s = 2
        ls.phi = ls.s.iter().map(|&s| if s < 8.0 { s - 1.5 } else { 1.0 }).collect();
        ls.phi[0] = -1.5;
        let pts = extract_interface(&ls, &m);
        let first = pts.iter().find(|p| (p.s - 1.5).abs() < 1e-12).unwrap();
        assert_eq!(first.conormal_sign, 1.0);
    }

    #[test]
    fn extract_matches_brute_force_on_smooth_phi() {
        let m = gen_disk_domain(1.0, 256, 0.3).unwrap();
        let mut ls = BoundaryLevelSet::empty_like(&m, 0);
        let p = ls.perimeter;
        ls.phi =
            ls.s.iter()
                .map(|&s| (7.0 * 2.0 * std::f64::consts::PI * s / p).sin() + 0.3 * (3.0 * s).cos() + 0.05)
                .collect();
        assert_eq!(extract_interface(&ls, &m).len(), brute_sign_changes(&ls.phi));
    }

    #[test]
    fn advect_examples() {
        let m = disk();
        let l = m.loops[0].perimeter;
        let ls = BoundaryLevelSet::from_arcs(&m, 0, &[(1.0, 2.0)]).unwrap();
        let zero = vec![0.0; ls.phi.len()];
        assert_eq!(advect(&ls, &zero, 1.0, &m).unwrap(), ls);
        let c = vec![0.5; ls.phi.len()];
        assert_eq!(advect(&ls, &c, 0.0, &m).unwrap(), ls);
        let tau = 0.2;
        let moved = advect(&ls, &c, tau, &m).unwrap();
        let before = extract_interface(&ls, &m);
        let after = extract_interface(&moved, &m);
        assert_eq!(before.len(), after.len());
        for (a, b) in before.iter().zip(&after) {
            let shift = (b.s - a.s).rem_euclid(l);
            assert!((shift - 0.5 * tau).abs() <= 0.02 * 0.5 * tau, "shift {shift}");
        }
        let bad = vec![f64::NAN; ls.phi.len()];
        assert!(matches!(advect(&ls, &bad, 1.0, &m), Err(Error::Numeric(_))));
    }

    #[test]
    fn insertion_covering_the_loop_keeps_the_minimum() {
        let m = disk();
        let p = m.loops[0].perimeter;
        let ls = BoundaryLevelSet::from_arcs(&m, 0, &[(1.6355, 1.6355 + 0.9999 * p - 0.1)]).unwrap();
        let out = insert_disk(&ls, 0.93, 0.77, &m).unwrap();
        assert!(extract_interface(&out, &m).is_empty());
        for (a, b) in ls.phi.iter().zip(&out.phi) {
            assert!(*b <= *a && *b < 0.0);
        }
    }

    #[test]
    fn insert_examples() {
        let m = disk();
        let l = m.loops[0].perimeter;
        let ls = BoundaryLevelSet::from_arcs(&m, 0, &[(0.0, 0.5)]).unwrap();
        let x0 = ls.s[100];
        let eps = 0.05;
        let out = insert_disk(&ls, x0, eps, &m).unwrap();
        assert!(out.phi[100] <= -eps + 1e-12);
        for i in 0..ls.phi.len() {
            assert!(out.phi[i] <= ls.phi[i] + 1e-12);
            let d = circ_dist(ls.s[i], x0, l);
            if d > eps && ls.phi[i] > d - eps {
                assert!((out.phi[i] - (d - eps)).abs() < 1e-12);
            }
        }
        let merged = insert_disk(&ls, 0.55, 0.1, &m).unwrap();
        assert!(cont(&merged, &m) <= cont(&ls, &m));
        assert!(insert_disk(&ls, x0, 0.0, &m).is_err());
        assert!(insert_disk(&ls, x0, l / 4.0, &m).is_err());
    }

    #[test]
    fn redistance_examples() {
        let m = disk();
        let ls = BoundaryLevelSet::from_arcs(&m, 0, &[(0.3, 1.7), (3.0, 4.1)]).unwrap();
        let r = redistance(&ls, &m);
        for (a, b) in ls.phi.iter().zip(&r.phi) {
            assert!((a - b).abs() < 1e-12 * ls.perimeter);
        }
        let mut scaled = ls.clone();
        scaled.phi.iter_mut().for_each(|x| *x *= 10.0);
        let r = redistance(&scaled, &m);
        for (a, b) in ls.phi.iter().zip(&r.phi) {
            assert!((a - b).abs() < 1e-12 * ls.perimeter);
        }
    }

    #[test]
    fn area_and_cont_examples() {
        let m = disk();
        let l = m.loops[0].perimeter;
        let ls = BoundaryLevelSet::from_arcs(&m, 0, &[(0.1, 0.1 + l / 4.0)]).unwrap();
        assert!((area(&ls) - l / 4.0).abs() < 1e-12);
        assert_eq!(cont(&ls, &m), 2);
        let empty = distance_to_region(&m, 0, &[]).unwrap();
        assert_eq!((area(&empty), cont(&empty, &m)), (0.0, 0));
        let two = BoundaryLevelSet::from_arcs(&m, 0, &[(0.1, 0.4), (2.0, 2.7)]).unwrap();
        assert!((area(&two) - 1.0).abs() < 1e-12);
        assert_eq!(cont(&two, &m), 4);
    }

    #[test]
    fn fit_examples() {
        let m = gen_disk_domain(1.0, 64, 0.2).unwrap();
        let empty = distance_to_region(&m, 0, &[]).unwrap();
        let f = fit_mesh_to_region(&m, &empty).unwrap();
        assert_eq!(f.mesh, m);
        assert!(f.in_region.iter().all(|&t| !t));

        let l = &m.loops[0];
        let mid = 0.5 * (l.arclength[10] + l.arclength[11]);
        let ls = BoundaryLevelSet::from_arcs(&m, 0, &[(mid, l.arclength[30])]).unwrap();
        let f = fit_mesh_to_region(&m, &ls).unwrap();
        assert_eq!(f.mesh.n_boundary_edges(), m.n_boundary_edges() + 1);
        let lf = &f.mesh.loops[0];
        let k = lf.arclength.iter().position(|&s| (s - mid).abs() < 1e-12).unwrap();
        assert!(!f.in_region[k - 1] && f.in_region[k]);

        let arcs: Vec<(f64, f64)> = (0..3).map(|i| (0.3 + 2.0 * i as f64, 1.1 + 2.0 * i as f64)).collect();
        let ls = BoundaryLevelSet::from_arcs(&m, 0, &arcs).unwrap();
        let f = fit_mesh_to_region(&m, &ls).unwrap();
        let n = f.in_region.len();
        let runs = (0..n).filter(|&i| f.in_region[i] != f.in_region[(i + 1) % n]).count();
        assert_eq!(runs, 6);
        f.mesh.audit().unwrap();
    }

    #[test]
    fn extension_is_a_weighted_average() {
        let m = disk();
        let ls = BoundaryLevelSet::from_arcs(&m, 0, &[(0.5, 1.5)]).unwrap();
        let v = extend_velocity(&ls, &[(0.5, 1.0), (1.5, -1.0)], 5.0 * ls.mean_edge());
        assert!(v.iter().all(|x| x.abs() <= 1.0 + 1e-12));
        assert!(v[ls.s.partition_point(|&s| s < 0.5)] > 0.9);
    }

    // Arcs and gaps at least three edge lengths long, so every feature is resolved.
    fn arcs_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
        (
            0.0..1.0f64,
            prop::collection::vec(0.05..1.0f64, 2..=8).prop_filter("even", |w| w.len() % 2 == 0),
        )
            .prop_map(|(offset, w)| resolved_arcs(offset, &w, 2.0 * std::f64::consts::PI * 0.9999, 3.0 * 0.0246))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn redistance_is_idempotent(arcs in arcs_strategy()) {
            let m = disk();
            let ls = BoundaryLevelSet::from_arcs(&m, 0, &arcs).unwrap();
            let r = redistance(&ls, &m);
            let rr = redistance(&r, &m);
            for (a, b) in r.phi.iter().zip(&rr.phi) {
                prop_assert!((a - b).abs() <= 1e-12 * ls.perimeter);
            }
            prop_assert!(r.phi.iter().all(|x| x.abs() <= ls.perimeter / 2.0 + 1e-9));
            prop_assert_eq!(extract_interface(&r, &m).len() % 2, 0);
        }

        #[test]
        fn area_complement(arcs in arcs_strategy()) {
            let m = disk();
            let ls = BoundaryLevelSet::from_arcs(&m, 0, &arcs).unwrap();
            let mut neg = ls.clone();
            neg.phi.iter_mut().for_each(|x| *x = -*x);
            prop_assert!((area(&ls) + area(&neg) - ls.perimeter).abs() <= 1e-10 * ls.perimeter);
        }

        #[test]
        fn insertion_never_raises_phi(arcs in arcs_strategy(), x0 in 0.0..std::f64::consts::TAU, eps in 0.01..1.0f64) {
            let m = disk();
            let ls = BoundaryLevelSet::from_arcs(&m, 0, &arcs).unwrap();
            let out = insert_disk(&ls, x0, eps, &m).unwrap();
            for (a, b) in ls.phi.iter().zip(&out.phi) {
                prop_assert!(*b <= *a + 1e-12);
            }
        }
        #[test]
        fn advect_round_trip(arcs in arcs_strategy(), v in prop::sample::select(vec![-1.0, 1.0])) {
            let m = disk();
            let ls = BoundaryLevelSet::from_arcs(&m, 0, &arcs).unwrap();
            let tau = ls.perimeter / 20.0;
            let there = advect(&ls, &vec![v; ls.phi.len()], tau, &m).unwrap();
            let back = advect(&there, &vec![-v; ls.phi.len()], tau, &m).unwrap();
            let a = extract_interface(&ls, &m);
            let b = extract_interface(&back, &m);
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(circ_dist(x.s, y.s, ls.perimeter) <= 4.0 * ls.mean_edge());
            }
        }
    }
}
