//! Triangle bounding-volume hierarchy with binned SAH construction.

use crate::math::{Aabb, Vec3};

#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub v0: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
}

impl Triangle {
    pub fn new(a: Vec3, b: Vec3, c: Vec3) -> Self {
        Self { v0: a, e1: b - a, e2: c - a }
    }

    fn bounds(&self) -> Aabb {
        Aabb::from_points([self.v0, self.v0 + self.e1, self.v0 + self.e2])
    }

    /// Möller-Trumbore; returns `(t, b1, b2)`.
    #[inline]
    pub fn intersect(&self, o: Vec3, d: Vec3, tmin: f64, tmax: f64) -> Option<(f64, f64, f64)> {
        let p = d.cross(self.e2);
        let det = self.e1.dot(p);
        if det.abs() < 1e-300 {
            return None;
        }
        let inv = 1.0 / det;
        let s = o - self.v0;
        let b1 = s.dot(p) * inv;
        if !(0.0..=1.0).contains(&b1) {
            return None;
        }
        let q = s.cross(self.e1);
        let b2 = d.dot(q) * inv;
        if b2 < 0.0 || b1 + b2 > 1.0 {
            return None;
        }
        let t = self.e2.dot(q) * inv;
        (t > tmin && t < tmax).then_some((t, b1, b2))
    }

    pub fn geometric_normal(&self) -> Vec3 {
        self.e1.cross(self.e2).normalized_or(Vec3::Z)
    }

    pub fn area(&self) -> f64 {
        0.5 * self.e1.cross(self.e2).length()
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    /// Leaf: first primitive index. Interior: index of the left child
    /// (the right child follows the whole left subtree).
    start: u32,
    /// Leaf: primitive count (> 0). Interior: 0, and `right` holds the right child.
    count: u32,
    right: u32,
}

#[derive(Debug, Clone, Copy)]
pub struct BvhHit {
    pub t: f64,
    pub prim: u32,
    pub b1: f64,
    pub b2: f64,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Primitive triangles in leaf order.
    pub tris: Vec<Triangle>,
    /// Original primitive index for each entry of `tris`.
    pub order: Vec<u32>,
}

const BINS: usize = 12;
const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(tris: &[Triangle]) -> Bvh {
        let mut items: Vec<(u32, Aabb, Vec3)> =
            tris.iter().enumerate().map(|(i, t)| (i as u32, t.bounds(), t.bounds().centroid())).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len().max(1));
        if !items.is_empty() {
            build_rec(&mut items, 0, &mut nodes);
        }
        let order: Vec<u32> = items.iter().map(|x| x.0).collect();
        let tris = order.iter().map(|&i| tris[i as usize]).collect();
        Bvh { nodes, tris, order }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Closest hit in `(tmin, tmax)` among primitives accepted by `accept`,
    /// which receives the original primitive index and the hit.
    pub fn closest<F: FnMut(u32, &BvhHit) -> bool>(
        &self,
        o: Vec3,
        d: Vec3,
        tmin: f64,
        mut tmax: f64,
        mut accept: F,
    ) -> Option<BvhHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut best: Option<BvhHit> = None;
        let mut stack = [0u32; 128];
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if slab(&node.bounds, o, inv, tmin, tmax).is_none() {
                continue;
            }
            if node.count > 0 {
                for i in node.start..node.start + node.count {
                    if let Some((t, b1, b2)) = self.tris[i as usize].intersect(o, d, tmin, tmax) {
                        let hit = BvhHit { t, prim: self.order[i as usize], b1, b2 };
                        if accept(hit.prim, &hit) {
                            tmax = t;
                            best = Some(hit);
                        }
                    }
                }
            } else {
                let (l, r) = (stack[sp] + 1, node.right);
                let tl = slab(&self.nodes[l as usize].bounds, o, inv, tmin, tmax);
                let tr = slab(&self.nodes[r as usize].bounds, o, inv, tmin, tmax);
                // push the farther child first so the nearer one is popped next
                match (tl, tr) {
                    (Some(a), Some(b)) => {
                        let (near, far) = if a <= b { (l, r) } else { (r, l) };
                        stack[sp] = far;
                        stack[sp + 1] = near;
                        sp += 2;
                    }
                    (Some(_), None) => {
                        stack[sp] = l;
                        sp += 1;
                    }
                    (None, Some(_)) => {
                        stack[sp] = r;
                        sp += 1;
                    }
                    (None, None) => {}
                }
            }
        }
        best
    }

    /// True if any accepted primitive is hit in `(tmin, tmax)`.
    pub fn any<F: FnMut(u32, &BvhHit) -> bool>(&self, o: Vec3, d: Vec3, tmin: f64, tmax: f64, mut accept: F) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let inv = Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut stack = [0u32; 128];
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let idx = stack[sp];
            let node = &self.nodes[idx as usize];
            if slab(&node.bounds, o, inv, tmin, tmax).is_none() {
                continue;
            }
            if node.count > 0 {
                for i in node.start..node.start + node.count {
                    if let Some((t, b1, b2)) = self.tris[i as usize].intersect(o, d, tmin, tmax) {
                        if accept(self.order[i as usize], &BvhHit { t, prim: self.order[i as usize], b1, b2 }) {
                            return true;
                        }
                    }
                }
            } else {
                stack[sp] = idx + 1;
                stack[sp + 1] = node.right;
                sp += 2;
            }
        }
        false
    }
}

#[inline]
fn slab(b: &Aabb, o: Vec3, inv: Vec3, tmin: f64, tmax: f64) -> Option<f64> {
    let mut t0 = tmin;
    let mut t1 = tmax;
    for k in 0..3 {
        let (mut a, mut c) = ((b.min[k] - o[k]) * inv[k], (b.max[k] - o[k]) * inv[k]);
        if a > c {
            std::mem::swap(&mut a, &mut c);
        }
        // NaN from 0 * inf compares false and leaves the interval untouched
        if a > t0 {
            t0 = a;
        }
        if c < t1 {
            t1 = c;
        }
        if t0 > t1 {
            return None;
        }
    }
    Some(t0)
}

fn build_rec(items: &mut [(u32, Aabb, Vec3)], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let index = nodes.len() as u32;
    let bounds = items.iter().fold(Aabb::EMPTY, |b, x| b.union(x.1));
    nodes.push(Node { bounds, start: offset as u32, count: items.len() as u32, right: 0 });
    if items.len() <= LEAF_SIZE {
        return index;
    }
    let cb = items.iter().fold(Aabb::EMPTY, |b, x| b.grow(x.2));
    let ext = cb.extent();
    let axis = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
    if ext[axis] <= 0.0 {
        // coincident centroids: split in the middle
        let mid = items.len() / 2;
        return split_at(items, offset, nodes, index, mid);
    }
    let bin_of = |c: Vec3| (((c[axis] - cb.min[axis]) / ext[axis] * BINS as f64) as usize).min(BINS - 1);
    let mut counts = [0usize; BINS];
    let mut boxes = [Aabb::EMPTY; BINS];
    for it in items.iter() {
        let b = bin_of(it.2);
        counts[b] += 1;
        boxes[b] = boxes[b].union(it.1);
    }
    let mut best = (f64::INFINITY, 0usize);
    for split in 1..BINS {
        let (mut lb, mut lc, mut rb, mut rc) = (Aabb::EMPTY, 0, Aabb::EMPTY, 0);
        for i in 0..split {
            lb = lb.union(boxes[i]);
            lc += counts[i];
        }
        for i in split..BINS {
            rb = rb.union(boxes[i]);
            rc += counts[i];
        }
        if lc == 0 || rc == 0 {
            continue;
        }
        let cost = lb.surface_area() * lc as f64 + rb.surface_area() * rc as f64;
        if cost < best.0 {
            best = (cost, split);
        }
    }
    let mid = if best.0.is_finite() {
        let split = best.1;
        let mut i = 0;
        for j in 0..items.len() {
            if bin_of(items[j].2) < split {
                items.swap(i, j);
                i += 1;
            }
        }
        i
    } else {
        items.sort_by(|a, b| a.2[axis].total_cmp(&b.2[axis]));
        items.len() / 2
    };
    split_at(items, offset, nodes, index, mid)
}

fn split_at(items: &mut [(u32, Aabb, Vec3)], offset: usize, nodes: &mut Vec<Node>, index: u32, mid: usize) -> u32 {
    let (left, right) = items.split_at_mut(mid);
    build_rec(left, offset, nodes);
    let r = build_rec(right, offset + mid, nodes);
    let n = &mut nodes[index as usize];
    n.count = 0;
    n.right = r;
    index
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::RngStream;

    #[test]
    fn matches_brute_force() {
        let mut s = RngStream::new(1, 0, "bvh");
        let mut rnd = || Vec3::new(s.uniform_in(-1.0, 1.0), s.uniform_in(-1.0, 1.0), s.uniform_in(-1.0, 1.0));
        let tris: Vec<Triangle> = (0..500)
            .map(|_| {
                let c = rnd();
                Triangle::new(c, c + rnd() * 0.1, c + rnd() * 0.1)
            })
            .collect();
        let bvh = Bvh::build(&tris);
        for _ in 0..2000 {
            let o = rnd() * 2.0;
            let d = rnd().normalized();
            let brute = tris
                .iter()
                .enumerate()
                .filter_map(|(i, t)| t.intersect(o, d, 0.0, f64::INFINITY).map(|h| (h.0, i as u32)))
                .min_by(|a, b| a.0.total_cmp(&b.0));
            let fast = bvh.closest(o, d, 0.0, f64::INFINITY, |_, _| true);
            assert_eq!(brute.map(|b| b.1), fast.map(|h| h.prim));
            assert_eq!(brute.is_some(), bvh.any(o, d, 0.0, f64::INFINITY, |_, _| true));
        }
    }

    #[test]
    fn axis_aligned_rays_hit_quads() {
        let tris = [Triangle::new(Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 0.0))];
        let bvh = Bvh::build(&tris);
        let h = bvh.closest(Vec3::new(0.5, 0.0, 1.0), -Vec3::Z, 0.0, f64::INFINITY, |_, _| true).unwrap();
        assert!((h.t - 1.0).abs() < 1e-12);
    }
}
