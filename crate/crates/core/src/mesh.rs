//! Triangulation of the site set and piecewise-linear basis evaluation.
//!
//! The initial triangulation is built by a left-to-right sweep followed by
//! Lawson edge flips, which gives a Delaunay triangulation covering exactly
//! the convex hull of the sites. Refinement then inserts circumcenters of
//! poorly shaped or oversized triangles (Ruppert's algorithm, with the hull
//! edges as the only segments) until every triangle satisfies the quality
//! constraints. Geometric predicates are exact.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use robust::{incircle, orient2d, Coord};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    fn coord(self) -> Coord<f64> {
        Coord { x: self.x, y: self.y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    /// Minimum interior angle in degrees, in (0, 34].
    pub min_angle: f64,
    /// Maximum edge length in km; `None` leaves edges unconstrained.
    pub max_edge: Option<f64>,
    /// Refinement may add at most this multiple of the input size in vertices.
    pub node_budget_factor: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            min_angle: 20.0,
            max_edge: None,
            node_budget_factor: 10,
        }
    }
}

/// Sites closer than this (km) are merged.
pub const DEDUP_TOLERANCE: f64 = 1e-9;

/// A conforming triangulation. Triangles are counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    /// Convex-hull edges, counter-clockwise.
    pub boundary: Vec<[usize; 2]>,
    /// Vertex index of each input site, after deduplication.
    pub site_vertex: Vec<usize>,
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    orient2d(a.coord(), b.coord(), c.coord())
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

fn circumcenter(a: Point, b: Point, c: Point) -> Point {
    let (bx, by) = (b.x - a.x, b.y - a.y);
    let (cx, cy) = (c.x - a.x, c.y - a.y);
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    Point::new(a.x + (cy * b2 - by * c2) / d, a.y + (bx * c2 - cx * b2) / d)
}

/// Interior angles of a triangle in degrees.
pub fn triangle_angles(a: Point, b: Point, c: Point) -> [f64; 3] {
    let angle = |p: Point, q: Point, r: Point| {
        let (ux, uy) = (q.x - p.x, q.y - p.y);
        let (vx, vy) = (r.x - p.x, r.y - p.y);
        (ux * vy - uy * vx).abs().atan2(ux * vx + uy * vy).to_degrees()
    };
    [angle(a, b, c), angle(b, c, a), angle(c, a, b)]
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        signed_area(a, b, c)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn min_angle(&self) -> f64 {
        (0..self.triangles.len())
            .flat_map(|t| {
                let [a, b, c] = self.corners(t);
                triangle_angles(a, b, c)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
            .map(|(a, b)| self.vertices[a].dist(self.vertices[b]))
            .fold(0.0, f64::max)
    }

    /// Triangle containing `point` and its barycentric weights, or `None`
    /// outside the hull. Points on shared edges go to the lowest-index triangle.
    pub fn locate(&self, point: Point) -> Option<(usize, [f64; 3])> {
        const EPS: f64 = 1e-12;
        self.triangles.iter().enumerate().find_map(|(t, _)| {
            let w = self.barycentric(t, point);
            (w.iter().all(|&v| v >= -EPS)).then(|| {
                let mut w = w.map(|v| v.max(0.0));
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                (t, w)
            })
        })
    }

    fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.corners(t);
        let det = (b.y - c.y) * (a.x - c.x) + (c.x - b.x) * (a.y - c.y);
        let l1 = ((b.y - c.y) * (p.x - c.x) + (c.x - b.x) * (p.y - c.y)) / det;
        let l2 = ((c.y - a.y) * (p.x - c.x) + (a.x - c.x) * (p.y - c.y)) / det;
        [l1, l2, 1.0 - l1 - l2]
    }

    /// Writes `{"vertices": [[x, y], ...], "triangles": [[i, j, k], ...]}`.
    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let doc = MeshJson {
            vertices: self.vertices.iter().map(|p| [p.x, p.y]).collect(),
            triangles: self.triangles.clone(),
        };
        serde_json::to_writer(writer, &doc)?;
        Ok(())
    }

    /// Reads the JSON layout of [`Mesh::write_json`]. Input sites are not
    /// recorded there, so `site_vertex` is empty.
    pub fn read_json<R: Read>(reader: R) -> Result<Mesh> {
        let doc: MeshJson = serde_json::from_reader(reader)?;
        let vertices: Vec<Point> = doc.vertices.iter().map(|v| Point::new(v[0], v[1])).collect();
        for (t, tri) in doc.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidArgument(format!("triangle {t} has an out-of-range vertex")));
            }
        }
        let mut mesh = Mesh {
            vertices,
            triangles: doc.triangles,
            boundary: Vec::new(),
            site_vertex: Vec::new(),
        };
        mesh.boundary = boundary_edges(&mesh.triangles);
        Ok(mesh)
    }
}

#[derive(Serialize, Deserialize)]
struct MeshJson {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
}

fn boundary_edges(triangles: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let directed: HashSet<(usize, usize)> = triangles
        .iter()
        .flat_map(|t| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
        .collect();
    let mut out: Vec<[usize; 2]> = directed
        .iter()
        .filter(|&&(a, b)| !directed.contains(&(b, a)))
        .map(|&(a, b)| [a, b])
        .collect();
    out.sort_unstable();
    out
}

/// Mutable triangulation with directed-edge adjacency.
struct Triangulation {
    pts: Vec<Point>,
    tris: Vec<[usize; 3]>,
    alive: Vec<bool>,
    /// Directed edge (a, b) -> triangle having it in counter-clockwise order.
    edges: HashMap<(usize, usize), usize>,
}

impl Triangulation {
    fn new(pts: Vec<Point>) -> Self {
        Triangulation {
            pts,
            tris: Vec::new(),
            alive: Vec::new(),
            edges: HashMap::new(),
        }
    }

    fn add(&mut self, tri: [usize; 3]) -> usize {
        debug_assert!(orient(self.pts[tri[0]], self.pts[tri[1]], self.pts[tri[2]]) > 0.0);
        let t = self.tris.len();
        for k in 0..3 {
            self.edges.insert((tri[k], tri[(k + 1) % 3]), t);
        }
        self.tris.push(tri);
        self.alive.push(true);
        t
    }

    fn remove(&mut self, t: usize) {
        let tri = self.tris[t];
        for k in 0..3 {
            self.edges.remove(&(tri[k], tri[(k + 1) % 3]));
        }
        self.alive[t] = false;
    }

    /// Vertex opposite the directed edge (a, b) in the triangle owning it.
    fn apex(&self, a: usize, b: usize) -> Option<usize> {
        self.edges.get(&(a, b)).map(|&t| {
            let tri = self.tris[t];
            tri[(0..3).find(|&k| tri[k] != a && tri[k] != b).unwrap()]
        })
    }

    fn alive_tris(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.tris.len()).filter(|&t| self.alive[t])
    }

    fn hull_edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .edges
            .keys()
            .filter(|&&(a, b)| !self.edges.contains_key(&(b, a)))
            .copied()
            .collect();
        out.sort_unstable();
        out
    }

    fn in_circle(&self, t: usize, p: Point) -> bool {
        let [a, b, c] = self.tris[t].map(|v| self.pts[v].coord());
        incircle(a, b, c, p.coord()) > 0.0
    }

    /// Restores the Delaunay property by edge flips, starting from `stack`.
    fn legalize(&mut self, mut stack: Vec<(usize, usize)>) {
        while let Some((a, b)) = stack.pop() {
            let (Some(&t1), Some(&t2)) = (self.edges.get(&(a, b)), self.edges.get(&(b, a))) else {
                continue;
            };
            let c = self.apex(a, b).unwrap();
            let d = self.apex(b, a).unwrap();
            if !self.in_circle(t1, self.pts[d]) {
                continue;
            }
            let (pa, pb, pc, pd) = (self.pts[a], self.pts[b], self.pts[c], self.pts[d]);
            if orient(pa, pd, pc) <= 0.0 || orient(pd, pb, pc) <= 0.0 {
                continue;
            }
            self.remove(t1);
            self.remove(t2);
            self.add([a, d, c]);
            self.add([d, b, c]);
            stack.extend([(a, d), (d, b), (b, c), (c, a)]);
        }
    }

    /// Bowyer-Watson insertion of a point inside the hull or on a hull edge.
    /// Returns `None` when the point lies outside every triangle.
    fn insert(&mut self, p: Point) -> Option<usize> {
        let start = self.alive_tris().collect::<Vec<_>>().into_iter().rev().find(|&t| {
            let [a, b, c] = self.tris[t].map(|v| self.pts[v]);
            orient(a, b, p) >= 0.0 && orient(b, c, p) >= 0.0 && orient(c, a, p) >= 0.0
        })?;
        Some(self.insert_from(start, p, None))
    }

    /// Splits the hull edge (a, b) at `p`, which lies on it up to rounding.
    fn insert_on_hull_edge(&mut self, a: usize, b: usize, p: Point) -> usize {
        let start = self.edges[&(a, b)];
        self.insert_from(start, p, Some((a, b)))
    }

    fn insert_from(&mut self, start: usize, p: Point, split: Option<(usize, usize)>) -> usize {
        let idx = self.pts.len();
        self.pts.push(p);

        let mut cavity = vec![start];
        let mut in_cavity: HashSet<usize> = HashSet::from([start]);
        let mut rim = Vec::new();
        let mut i = 0;
        while i < cavity.len() {
            let tri = self.tris[cavity[i]];
            i += 1;
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                match self.edges.get(&(b, a)) {
                    Some(&n) if in_cavity.contains(&n) => {}
                    Some(&n) if self.in_circle(n, p) => {
                        in_cavity.insert(n);
                        cavity.push(n);
                    }
                    _ => rim.push((a, b)),
                }
            }
        }
        for &t in &cavity {
            self.remove(t);
        }
        for (a, b) in rim {
            // a rim edge through p is a hull edge being split
            if Some((a, b)) != split && orient(self.pts[a], self.pts[b], p) > 0.0 {
                self.add([a, b, idx]);
            }
        }
        idx
    }

    fn into_mesh(self, site_vertex: Vec<usize>) -> Mesh {
        let triangles: Vec<[usize; 3]> = self.alive_tris().map(|t| self.tris[t]).collect();
        let boundary = boundary_edges(&triangles);
        Mesh {
            vertices: self.pts,
            triangles,
            boundary,
            site_vertex,
        }
    }
}

/// Merges sites closer than [`DEDUP_TOLERANCE`]; returns unique points in
/// first-appearance order and the vertex index of every input site.
fn dedup(sites: &[Point]) -> Result<(Vec<Point>, Vec<usize>)> {
    let mut unique: Vec<Point> = Vec::new();
    let mut map = Vec::with_capacity(sites.len());
    for (i, &p) in sites.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::InvalidArgument(format!("site {i} has non-finite coordinates")));
        }
        match unique.iter().position(|u| u.dist(p) <= DEDUP_TOLERANCE) {
            Some(v) => map.push(v),
            None => {
                map.push(unique.len());
                unique.push(p);
            }
        }
    }
    Ok((unique, map))
}

/// Delaunay triangulation of the sites, without refinement.
pub fn delaunay(sites: &[Point]) -> Result<Mesh> {
    let (pts, site_vertex) = dedup(sites)?;
    if pts.len() < 3 {
        return Err(Error::CollinearSites);
    }
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&i, &j| {
        pts[i]
            .x
            .total_cmp(&pts[j].x)
            .then(pts[i].y.total_cmp(&pts[j].y))
    });

    let first = order
        .iter()
        .position(|&k| orient(pts[order[0]], pts[order[1]], pts[k]) != 0.0)
        .ok_or(Error::CollinearSites)?;
    let apex = order[first];
    let mut tri = Triangulation::new(pts);
    // fan over the initial collinear run
    let side = orient(tri.pts[order[0]], tri.pts[order[1]], tri.pts[apex]);
    for w in order[..first].windows(2) {
        if side > 0.0 {
            tri.add([w[0], w[1], apex]);
        } else {
            tri.add([w[1], w[0], apex]);
        }
    }
    for &v in &order[first + 1..] {
        let p = tri.pts[v];
        let visible: Vec<(usize, usize)> = tri
            .hull_edges()
            .into_iter()
            .filter(|&(a, b)| orient(tri.pts[a], tri.pts[b], p) < 0.0)
            .collect();
        debug_assert!(!visible.is_empty());
        for &(a, b) in &visible {
            tri.add([b, a, v]);
        }
    }
    let all: Vec<(usize, usize)> = tri.edges.keys().copied().collect();
    let mut sorted = all;
    sorted.sort_unstable();
    tri.legalize(sorted);
    Ok(tri.into_mesh(site_vertex))
}

/// Builds a quality mesh whose vertices include every (deduplicated) site.
pub fn build_mesh(sites: &[Point], config: &MeshConfig) -> Result<Mesh> {
    if !(config.min_angle > 0.0 && config.min_angle <= 34.0) {
        return Err(Error::InvalidArgument(format!(
            "min_angle must lie in (0, 34], got {}",
            config.min_angle
        )));
    }
    if let Some(h) = config.max_edge {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument("max_edge must be positive".into()));
        }
    }
    let initial = delaunay(sites)?;
    let n_sites = initial.vertices.len();
    let budget = config.node_budget_factor.max(1) * sites.len().max(n_sites);
    let site_vertex = initial.site_vertex.clone();

    let mut tri = Triangulation::new(initial.vertices);
    for t in &initial.triangles {
        tri.add(*t);
    }
    let mut segments: HashSet<(usize, usize)> = tri.hull_edges().into_iter().collect();

    let is_bad = |tri: &Triangulation, t: usize| -> bool {
        let [a, b, c] = tri.tris[t].map(|v| tri.pts[v]);
        let min = triangle_angles(a, b, c).into_iter().fold(f64::INFINITY, f64::min);
        if min < config.min_angle {
            return true;
        }
        match config.max_edge {
            Some(h) => a.dist(b) > h || b.dist(c) > h || c.dist(a) > h,
            None => false,
        }
    };

    loop {
        if tri.pts.len() > budget {
            return Err(Error::NodeBudgetExceeded { budget });
        }
        // split encroached hull segments first
        let mut sorted: Vec<_> = segments.iter().copied().collect();
        sorted.sort_unstable();
        let encroached = sorted.into_iter().find(|&(a, b)| {
            tri.apex(a, b)
                .is_some_and(|w| encroaches(tri.pts[w], tri.pts[a], tri.pts[b]))
        });
        if let Some(seg) = encroached {
            split_segment(&mut tri, &mut segments, seg);
            continue;
        }

        let Some(bad) = tri.alive_tris().find(|&t| is_bad(&tri, t)) else {
            break;
        };
        let [a, b, c] = tri.tris[bad].map(|v| tri.pts[v]);
        let center = circumcenter(a, b, c);
        let mut hit: Vec<(usize, usize)> = segments
            .iter()
            .copied()
            .filter(|&(u, v)| encroaches(center, tri.pts[u], tri.pts[v]))
            .collect();
        if hit.is_empty() {
            if tri.insert(center).is_some() {
                continue;
            }
            // rounding put the circumcenter just outside: split the nearest segment
            let nearest = segments
                .iter()
                .copied()
                .min_by(|&(u, v), &(p, q)| {
                    let mid = |s: usize, t: usize| {
                        Point::new((tri.pts[s].x + tri.pts[t].x) / 2.0, (tri.pts[s].y + tri.pts[t].y) / 2.0)
                    };
                    center.dist(mid(u, v)).total_cmp(&center.dist(mid(p, q)))
                })
                .unwrap();
            hit.push(nearest);
        }
        hit.sort_unstable();
        for seg in hit {
            split_segment(&mut tri, &mut segments, seg);
        }
    }
    let mesh = tri.into_mesh(site_vertex);
    debug_assert!(mesh.triangles.iter().enumerate().all(|(t, _)| mesh.triangle_area(t) > 0.0));
    Ok(mesh)
}

/// Whether `p` lies strictly inside the diametral circle of segment (a, b).
fn encroaches(p: Point, a: Point, b: Point) -> bool {
    (a.x - p.x) * (b.x - p.x) + (a.y - p.y) * (b.y - p.y) < 0.0
}

fn split_segment(
    tri: &mut Triangulation,
    segments: &mut HashSet<(usize, usize)>,
    (a, b): (usize, usize),
) {
    let (pa, pb) = (tri.pts[a], tri.pts[b]);
    let mid = Point::new(0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y));
    let m = tri.insert_on_hull_edge(a, b, mid);
    segments.remove(&(a, b));
    segments.insert((a, m));
    segments.insert((m, b));
}

/// Sparse basis-evaluation matrix: row `i` holds the nonzero hat-function
/// values at query point `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub n_vertices: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl Projector {
    /// Evaluates the piecewise-linear field with vertex values `w`.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.n_vertices);
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(v, a)| a * w[v]).sum())
            .collect()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

pub fn projector(mesh: &Mesh, points: &[Point]) -> Result<Projector> {
    let mut rows = Vec::with_capacity(points.len());
    let mut outside = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        match mesh.locate(p) {
            Some((t, w)) => {
                let tri = mesh.triangles[t];
                rows.push(
                    (0..3)
                        .filter(|&k| w[k] > 0.0)
                        .map(|k| (tri[k], w[k]))
                        .collect(),
                );
            }
            None => outside.push(i),
        }
    }
    if !outside.is_empty() {
        return Err(Error::OutsideMesh(outside));
    }
    Ok(Projector {
        n_vertices: mesh.vertices.len(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)))
            .collect()
    }

    /// Monotone-chain hull area, independent of the triangulation code.
    fn hull_area(points: &[Point]) -> f64 {
        let mut p = points.to_vec();
        p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        let cross = |o: Point, a: Point, b: Point| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
        let mut hull: Vec<Point> = Vec::new();
        for pass in 0..2 {
            let start = hull.len();
            let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
                Box::new(p.iter())
            } else {
                Box::new(p.iter().rev())
            };
            for &q in iter {
                while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                    hull.pop();
                }
                hull.push(q);
            }
            hull.pop();
        }
        let n = hull.len();
        (0..n)
            .map(|i| hull[i].x * hull[(i + 1) % n].y - hull[(i + 1) % n].x * hull[i].y)
            .sum::<f64>()
            / 2.0
    }

    fn assert_valid(mesh: &Mesh, sites: &[Point]) {
        for (t, tri) in mesh.triangles.iter().enumerate() {
            assert!(tri.iter().all(|&v| v < mesh.vertices.len()));
            assert!(mesh.triangle_area(t) > 0.0);
        }
        let ha = hull_area(sites);
        assert!((mesh.area() - ha).abs() <= 1e-8 * ha, "{} vs {ha}", mesh.area());
        for (i, s) in sites.iter().enumerate() {
            assert!(mesh.vertices[mesh.site_vertex[i]].dist(*s) <= DEDUP_TOLERANCE);
        }
        // conforming: every interior edge is shared by exactly two triangles
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &mesh.triangles {
            for k in 0..3 {
                *count.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        assert!(count.values().all(|&c| c == 1));
    }

    #[test]
    fn single_triangle() {
        let sites = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.3, 1.0)];
        let cfg = MeshConfig { min_angle: 10.0, ..MeshConfig::default() };
        let mesh = build_mesh(&sites, &cfg).unwrap();
        assert_eq!(mesh.triangles.len(), 1);
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.boundary.len(), 3);
    }

    #[test]
    fn unit_square_is_split_by_a_diagonal() {
        let sites = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ];
        let mesh = build_mesh(&sites, &MeshConfig::default()).unwrap();
        assert_eq!(mesh.triangles.len(), 2);
        assert_eq!(mesh.vertices.len(), 4);
        assert_valid(&mesh, &sites);
    }

    #[test]
    fn collinear_sites_fail() {
        let sites: Vec<Point> = (0..5).map(|i| Point::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(delaunay(&sites), Err(Error::CollinearSites)));
        assert!(matches!(
            build_mesh(&sites[..2], &MeshConfig::default()),
            Err(Error::CollinearSites)
        ));
    }

    #[test]
    fn duplicates_are_merged() {
        let sites = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 0.0 + 1e-12),
        ];
        let mesh = delaunay(&sites).unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.site_vertex, vec![0, 1, 2, 1]);
    }

    #[test]
    fn collinear_prefix_is_handled() {
        let mut sites: Vec<Point> = (0..6).map(|i| Point::new(0.0, i as f64)).collect();
        sites.push(Point::new(3.0, 2.5));
        sites.push(Point::new(1.0, -4.0));
        let mesh = delaunay(&sites).unwrap();
        assert_valid(&mesh, &sites);
    }

    #[test]
    fn initial_triangulation_is_delaunay() {
        for seed in 0..5 {
            let sites = random_points(40, seed);
            let mesh = delaunay(&sites).unwrap();
            assert_valid(&mesh, &sites);
            for t in &mesh.triangles {
                let [a, b, c] = t.map(|v| mesh.vertices[v].coord());
                for (v, p) in mesh.vertices.iter().enumerate() {
                    if !t.contains(&v) {
                        assert!(incircle(a, b, c, p.coord()) <= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn refinement_meets_angle_bound() {
        for seed in 0..5 {
            let sites = random_points(30, 100 + seed);
            let mesh = build_mesh(&sites, &MeshConfig::default()).unwrap();
            assert_valid(&mesh, &sites);
            for t in 0..mesh.triangles.len() {
                let [a, b, c] = mesh.corners(t);
                let min = triangle_angles(a, b, c).into_iter().fold(f64::INFINITY, f64::min);
                assert!(min >= 20.0 - 1e-9, "seed {seed}: {min}");
            }
        }
    }

    #[test]
    fn max_edge_is_enforced() {
        let sites = random_points(20, 9);
        let cfg = MeshConfig { max_edge: Some(1.5), ..MeshConfig::default() };
        let mesh = build_mesh(&sites, &cfg).unwrap();
        assert!(mesh.max_edge_length() <= 1.5);
        assert_valid(&mesh, &sites);
    }

    #[test]
    fn budget_is_enforced() {
        let sites = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(0.5, 0.5 - 1e-6),
        ];
        let cfg = MeshConfig { max_edge: Some(0.01), ..MeshConfig::default() };
        assert!(matches!(build_mesh(&sites, &cfg), Err(Error::NodeBudgetExceeded { budget: 40 })));
        let bad = MeshConfig { min_angle: 40.0, ..MeshConfig::default() };
        assert!(build_mesh(&sites, &bad).is_err());
    }

    #[test]
    fn locate_special_points() {
        let sites = random_points(15, 3);
        let mesh = build_mesh(&sites, &MeshConfig::default()).unwrap();
        let (_, w) = mesh.locate(mesh.vertices[4]).unwrap();
        let t = mesh.locate(mesh.vertices[4]).unwrap().0;
        let k = mesh.triangles[t].iter().position(|&v| v == 4).unwrap();
        assert_eq!(w[k], 1.0);
        let [a, b, c] = mesh.corners(2);
        let centroid = Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
        let (t, w) = mesh.locate(centroid).unwrap();
        assert_eq!(t, 2);
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert!(mesh.locate(Point::new(-5.0, -5.0)).is_none());
    }

    #[test]
    fn shared_edge_goes_to_lowest_triangle() {
        let sites = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ];
        let mesh = delaunay(&sites).unwrap();
        let (t, w) = mesh.locate(Point::new(0.5, 0.5)).unwrap();
        assert_eq!(t, 0);
        let mut sorted = w;
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted[0], 0.0);
        assert!((sorted[1] - 0.5).abs() < 1e-15 && (sorted[2] - 0.5).abs() < 1e-15);
        let p = projector(&mesh, &[Point::new(0.5, 0.5)]).unwrap();
        assert_eq!(p.rows[0].len(), 2);
    }

    #[test]
    fn projector_interpolates_and_reproduces_affine_fields() {
        let sites = random_points(25, 5);
        let mesh = build_mesh(&sites, &MeshConfig::default()).unwrap();
        let p = projector(&mesh, &mesh.vertices).unwrap();
        for (i, row) in p.rows.iter().enumerate() {
            assert_eq!(row, &vec![(i, 1.0)]);
        }
        let f = |q: Point| 2.0 * q.x + 3.0 * q.y + 1.0;
        let w: Vec<f64> = mesh.vertices.iter().map(|&q| f(q)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let queries: Vec<Point> = (0..10)
            .map(|_| {
                let [a, b, c] = mesh.corners(rng.random_range(0..mesh.triangles.len()));
                let (u, v): (f64, f64) = (rng.random(), rng.random());
                let (u, v) = if u + v > 1.0 { (1.0 - u, 1.0 - v) } else { (u, v) };
                Point::new(a.x + u * (b.x - a.x) + v * (c.x - a.x), a.y + u * (b.y - a.y) + v * (c.y - a.y))
            })
            .collect();
        let proj = projector(&mesh, &queries).unwrap();
        for (q, val) in queries.iter().zip(proj.apply(&w)) {
            assert!((f(*q) - val).abs() < 1e-10);
        }
        for row in &proj.rows {
            assert!((row.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(row.iter().all(|e| e.1 >= 0.0));
        }
        assert!(matches!(
            projector(&mesh, &[Point::new(50.0, 50.0), queries[0]]),
            Err(Error::OutsideMesh(ref v)) if v == &vec![0]
        ));
    }

    #[test]
    fn json_round_trip() {
        let sites = random_points(10, 2);
        let mesh = build_mesh(&sites, &MeshConfig::default()).unwrap();
        let mut buf = Vec::new();
        mesh.write_json(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("{\"vertices\":[["));
        let back = Mesh::read_json(buf.as_slice()).unwrap();
        assert_eq!(back.vertices, mesh.vertices);
        assert_eq!(back.triangles, mesh.triangles);
        assert_eq!(back.boundary, mesh.boundary);
    }
}
