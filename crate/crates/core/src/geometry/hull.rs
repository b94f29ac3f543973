//! Incremental 3D convex hull with coplanar-face merging.

use super::GeometryError;
use crate::math::{Aabb, Vec3};
use std::collections::HashSet;

/// Planar hull face: `normal · x = offset`, outward normal, polygon vertices
/// counter-clockwise when viewed from outside.
#[derive(Debug, Clone, PartialEq)]
pub struct HullFace {
    pub normal: Vec3,
    pub offset: f64,
    pub polygon: Vec<Vec3>,
}

impl HullFace {
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.polygon.iter().enumerate() {
            for b in &self.polygon[i + 1..] {
                d = d.max((*a - *b).length());
            }
        }
        d
    }

    /// Signed distance of `p` (already in the face plane) to the nearest
    /// polygon edge; positive inside.
    pub fn inset_distance(&self, p: Vec3) -> f64 {
        let n = self.polygon.len();
        (0..n)
            .map(|i| {
                let a = self.polygon[i];
                let b = self.polygon[(i + 1) % n];
                let inward = self.normal.cross(b - a).normalized();
                (p - a).dot(inward)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct ConvexHull {
    pub faces: Vec<HullFace>,
    /// Triangulated boundary (outward winding), used for volume integrals.
    pub triangles: Vec<[Vec3; 3]>,
}

impl ConvexHull {
    /// Volume and centroid of the solid hull.
    pub fn volume_centroid(&self) -> (f64, Vec3) {
        let origin = self.triangles.iter().fold(Vec3::ZERO, |acc, t| acc + t[0]) / self.triangles.len() as f64;
        solid_volume_centroid(&self.triangles, origin)
    }

    pub fn vertices(&self) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = Vec::new();
        for f in &self.faces {
            for &p in &f.polygon {
                if !out.iter().any(|q| (*q - p).length_squared() == 0.0) {
                    out.push(p);
                }
            }
        }
        out
    }
}

/// Signed volume and centroid of a closed triangulated surface, integrated
/// as tetrahedra fanned from `origin`.
pub(crate) fn solid_volume_centroid(triangles: &[[Vec3; 3]], origin: Vec3) -> (f64, Vec3) {
    let mut vol = 0.0;
    let mut moment = Vec3::ZERO;
    for [a, b, c] in triangles {
        let (a, b, c) = (*a - origin, *b - origin, *c - origin);
        let v = a.dot(b.cross(c)) / 6.0;
        vol += v;
        moment += (a + b + c) * (v / 4.0);
    }
    if vol.abs() < 1e-300 {
        return (0.0, origin);
    }
    (vol, origin + moment / vol)
}

#[derive(Clone, Copy)]
struct Tri {
    v: [usize; 3],
    normal: Vec3,
    offset: f64,
    alive: bool,
}

fn make_tri(pts: &[Vec3], a: usize, b: usize, c: usize) -> Tri {
    let normal = (pts[b] - pts[a]).cross(pts[c] - pts[a]).normalized_or(Vec3::Z);
    Tri { v: [a, b, c], normal, offset: normal.dot(pts[a]), alive: true }
}

/// Convex hull of a point set. Fails when the points span less than a
/// tetrahedron (coplanar, collinear or coincident).
pub fn convex_hull(points: &[Vec3]) -> Result<ConvexHull, GeometryError> {
    if points.len() < 4 {
        return Err(GeometryError::DegenerateHull("fewer than 4 points".into()));
    }
    let bounds = Aabb::from_points(points.iter().copied());
    let scale = bounds.extent().max_component().max(1e-300);
    let eps = 1e-9 * scale;

    // dedupe exact duplicates to keep the incremental pass cheap
    let mut seen = HashSet::new();
    let pts: Vec<Vec3> = points
        .iter()
        .copied()
        .filter(|p| seen.insert((p.x.to_bits(), p.y.to_bits(), p.z.to_bits())))
        .collect();

    // initial simplex
    let i0 = (0..pts.len()).min_by(|&a, &b| pts[a].x.total_cmp(&pts[b].x)).unwrap();
    let i1 = (0..pts.len())
        .max_by(|&a, &b| (pts[a] - pts[i0]).length_squared().total_cmp(&(pts[b] - pts[i0]).length_squared()))
        .unwrap();
    let line = pts[i1] - pts[i0];
    if line.length() <= eps {
        return Err(GeometryError::DegenerateHull("all points coincide".into()));
    }
    let dist_line = |p: Vec3| (p - pts[i0]).cross(line).length() / line.length();
    let i2 = (0..pts.len()).max_by(|&a, &b| dist_line(pts[a]).total_cmp(&dist_line(pts[b]))).unwrap();
    if dist_line(pts[i2]) <= eps {
        return Err(GeometryError::DegenerateHull("points are collinear".into()));
    }
    let plane_n = line.cross(pts[i2] - pts[i0]).normalized();
    let dist_plane = |p: Vec3| (p - pts[i0]).dot(plane_n);
    let i3 = (0..pts.len())
        .max_by(|&a, &b| dist_plane(pts[a]).abs().total_cmp(&dist_plane(pts[b]).abs()))
        .unwrap();
    if dist_plane(pts[i3]).abs() <= eps {
        return Err(GeometryError::DegenerateHull("points are coplanar".into()));
    }

    let mut tris: Vec<Tri> = Vec::new();
    {
        let (a, b, c, d) = (i0, i1, i2, i3);
        let centroid = (pts[a] + pts[b] + pts[c] + pts[d]) * 0.25;
        for [x, y, z] in [[a, b, c], [a, c, d], [a, d, b], [b, d, c]] {
            let mut t = make_tri(&pts, x, y, z);
            if t.normal.dot(centroid) - t.offset > 0.0 {
                t = make_tri(&pts, x, z, y);
            }
            tris.push(t);
        }
    }

    for (pi, &p) in pts.iter().enumerate() {
        if [i0, i1, i2, i3].contains(&pi) {
            continue;
        }
        let visible: Vec<usize> = (0..tris.len())
            .filter(|&t| tris[t].alive && tris[t].normal.dot(p) - tris[t].offset > eps)
            .collect();
        if visible.is_empty() {
            continue;
        }
        let edges: HashSet<(usize, usize)> = visible
            .iter()
            .flat_map(|&t| {
                let [a, b, c] = tris[t].v;
                [(a, b), (b, c), (c, a)]
            })
            .collect();
        let horizon: Vec<(usize, usize)> = visible
            .iter()
            .flat_map(|&t| {
                let [a, b, c] = tris[t].v;
                [(a, b), (b, c), (c, a)]
            })
            .filter(|&(a, b)| !edges.contains(&(b, a)))
            .collect();
        for &t in &visible {
            tris[t].alive = false;
        }
        for (a, b) in horizon {
            tris.push(make_tri(&pts, a, b, pi));
        }
        // compact occasionally to bound the scan cost
        if tris.len() > 64 && tris.iter().filter(|t| !t.alive).count() * 2 > tris.len() {
            tris.retain(|t| t.alive);
        }
    }
    tris.retain(|t| t.alive);

    // merge coplanar triangles into polygonal faces
    let mut faces: Vec<HullFace> = Vec::new();
    for t in &tris {
        let existing = faces
            .iter_mut()
            .find(|f| f.normal.dot(t.normal) > 1.0 - 1e-9 && (f.offset - t.offset).abs() <= 10.0 * eps);
        if existing.is_none() {
            faces.push(HullFace { normal: t.normal, offset: t.offset, polygon: Vec::new() });
        }
    }
    for f in &mut faces {
        let on_plane: Vec<Vec3> =
            pts.iter().copied().filter(|p| (f.normal.dot(*p) - f.offset).abs() <= 10.0 * eps).collect();
        f.polygon = polygon_hull(&on_plane, f.normal);
    }
    faces.retain(|f| f.polygon.len() >= 3);

    let triangles = tris.iter().map(|t| t.v.map(|i| pts[i])).collect();
    Ok(ConvexHull { faces, triangles })
}

/// 2D convex hull (monotone chain) of coplanar points, CCW around `normal`.
fn polygon_hull(points: &[Vec3], normal: Vec3) -> Vec<Vec3> {
    let (u, v) = normal.orthonormal_basis();
    let mut p: Vec<(f64, f64, Vec3)> = points.iter().map(|&x| (x.dot(u), x.dot(v), x)).collect();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    p.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
    if p.len() < 3 {
        return p.into_iter().map(|x| x.2).collect();
    }
    let cross = |o: &(f64, f64, Vec3), a: &(f64, f64, Vec3), b: &(f64, f64, Vec3)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(f64, f64, Vec3)> = Vec::with_capacity(2 * p.len());
    for pt in &p {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], pt) <= 0.0 {
            hull.pop();
        }
        hull.push(*pt);
    }
    let lower = hull.len() + 1;
    for pt in p.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], pt) <= 0.0 {
            hull.pop();
        }
        hull.push(*pt);
    }
    hull.pop();
    // (u, v, normal) is right-handed, so CCW in (u, v) is CCW seen from outside
    hull.into_iter().map(|x| x.2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_points() -> Vec<Vec3> {
        (0..8).map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64)).collect()
    }

    #[test]
    fn cube_hull_has_six_square_faces() {
        let mut pts = cube_points();
        pts.push(Vec3::splat(0.5)); // interior
        pts.push(Vec3::new(0.5, 0.5, 1.0)); // on a face
        let h = convex_hull(&pts).unwrap();
        assert_eq!(h.faces.len(), 6);
        for f in &h.faces {
            assert_eq!(f.polygon.len(), 4);
            // CCW from outside
            let a = f.polygon[0];
            let turn = (f.polygon[1] - a).cross(f.polygon[2] - a);
            assert!(turn.dot(f.normal) > 0.0);
        }
        let (vol, c) = h.volume_centroid();
        assert!((vol - 1.0).abs() < 1e-12);
        assert!((c - Vec3::splat(0.5)).length() < 1e-12);
    }

    #[test]
    fn all_points_inside_every_face() {
        let mut s = crate::stream::RngStream::new(11, 0, "hull");
        let pts: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(s.normal(0.0, 1.0), s.normal(0.0, 1.0), s.normal(0.0, 1.0)).normalized())
            .collect();
        let h = convex_hull(&pts).unwrap();
        for f in &h.faces {
            for p in &pts {
                assert!(f.normal.dot(*p) - f.offset <= 1e-9);
            }
        }
        let (vol, _) = h.volume_centroid();
        // a 200-point sphere sample approaches 4/3 pi from below
        assert!(vol > 3.5 && vol < 4.0 * std::f64::consts::PI / 3.0);
    }

    #[test]
    fn coplanar_points_rejected() {
        let pts: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, (i * i) as f64 * 0.1, 0.0)).collect();
        assert!(matches!(convex_hull(&pts), Err(GeometryError::DegenerateHull(_))));
    }
}
