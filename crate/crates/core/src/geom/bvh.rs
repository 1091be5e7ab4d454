//! Bounding volume hierarchy over mesh triangles.
//!
//! One tree answers three queries: nearest ray hit, number of ray crossings
//! (used for inside/outside parity) and closest surface point.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::mesh::TriangleMesh;
use super::vec::{Aabb, Vec3};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEAF: usize = 4;

/// Tolerance on `|dir| − 1` accepted by [`Bvh::ray_cast`].
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    pub triangle: u32,
    /// Geometric normal of the hit triangle (winding order, not flipped towards the ray).
    pub normal: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPoint {
    pub point: Vec3,
    pub distance: f64,
    pub triangle: u32,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    /// Leaf: first index into `order`; inner: index of the left child (right is `first + 1`).
    first: u32,
    /// Zero for inner nodes.
    count: u32,
}

/// Immutable triangle BVH. Triangle positions are copied in at construction.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    tris: Vec<[Vec3; 3]>,
    watertight: bool,
}

/// Precomputed shear transform for the watertight ray/triangle test.
#[derive(Debug, Clone, Copy)]
struct ShearRay {
    origin: Vec3,
    kx: usize,
    ky: usize,
    kz: usize,
    sx: f64,
    sy: f64,
    sz: f64,
}

impl ShearRay {
    fn new(origin: Vec3, dir: Vec3) -> Self {
        let abs = Vec3::new(dir.x.abs(), dir.y.abs(), dir.z.abs());
        let kz = abs.max_axis();
        let mut kx = (kz + 1) % 3;
        let mut ky = (kx + 1) % 3;
        if dir[kz] < 0.0 {
            std::mem::swap(&mut kx, &mut ky);
        }
        ShearRay {
            origin,
            kx,
            ky,
            kz,
            sx: dir[kx] / dir[kz],
            sy: dir[ky] / dir[kz],
            sz: 1.0 / dir[kz],
        }
    }

    /// Ray parameter of the hit, if any, in `(0, t_max]`.
    ///
    /// Edge functions of a shared edge are exact negations of each other in the
    /// two incident triangles, so a top-left style rule on zero edge values makes
    /// a ray through an edge hit exactly one of two consistently oriented neighbours.
    #[inline]
    fn intersect(&self, tri: &[Vec3; 3], t_max: f64) -> Option<f64> {
        let (kx, ky, kz) = (self.kx, self.ky, self.kz);
        let a = tri[0] - self.origin;
        let b = tri[1] - self.origin;
        let c = tri[2] - self.origin;
        let ax = a[kx] - self.sx * a[kz];
        let ay = a[ky] - self.sy * a[kz];
        let bx = b[kx] - self.sx * b[kz];
        let by = b[ky] - self.sy * b[kz];
        let cx = c[kx] - self.sx * c[kz];
        let cy = c[ky] - self.sy * c[kz];

        let u = cx * by - cy * bx;
        let v = ax * cy - ay * cx;
        let w = bx * ay - by * ax;

        if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
            return None;
        }
        let det = u + v + w;
        if det == 0.0 {
            return None;
        }
        if u == 0.0 || v == 0.0 || w == 0.0 {
            let flip = det < 0.0;
            // edges: u is b→c, v is c→a, w is a→b
            let edges = [(u, (bx, by), (cx, cy)), (v, (cx, cy), (ax, ay)), (w, (ax, ay), (bx, by))];
            for (val, from, to) in edges {
                if val == 0.0 && !owns_edge(from, to, flip) {
                    return None;
                }
            }
        }
        let az = self.sz * a[kz];
        let bz = self.sz * b[kz];
        let cz = self.sz * c[kz];
        let t = (u * az + v * bz + w * cz) / det;
        if t > 0.0 && t <= t_max {
            Some(t)
        } else {
            None
        }
    }
}

#[inline]
fn owns_edge(from: (f64, f64), to: (f64, f64), flip: bool) -> bool {
    let (mut dx, mut dy) = (to.0 - from.0, to.1 - from.1);
    if flip {
        dx = -dx;
        dy = -dy;
    }
    dy > 0.0 || (dy == 0.0 && dx < 0.0)
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

fn tri_bounds(t: &[Vec3; 3]) -> Aabb {
    Aabb::new(t[0].min(t[1]).min(t[2]), t[0].max(t[1]).max(t[2]))
}

#[derive(PartialEq)]
struct HeapEntry {
    dist2: f64,
    node: u32,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance
        other
            .dist2
            .total_cmp(&self.dist2)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Result<Self> {
        Self::build_with_leaf_size(mesh, DEFAULT_MAX_LEAF)
    }

    pub fn build_with_leaf_size(mesh: &TriangleMesh, max_leaf: usize) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::Geometry("cannot build a BVH over an empty mesh".into()));
        }
        let max_leaf = max_leaf.max(1);
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangle_count()).map(|i| mesh.triangle(i)).collect();
        let boxes: Vec<Aabb> = tris.iter().map(tri_bounds).collect();
        let centroids: Vec<Vec3> = boxes.iter().map(|b| b.center()).collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / max_leaf + 1);
        nodes.push(Node {
            bounds: Aabb::EMPTY,
            first: 0,
            count: 0,
        });
        // explicit stack: (node index, range start, range end)
        let mut stack = vec![(0usize, 0usize, tris.len())];
        while let Some((node, start, end)) = stack.pop() {
            let bounds = order[start..end]
                .iter()
                .fold(Aabb::EMPTY, |b, &i| b.union(boxes[i as usize]));
            let count = end - start;
            if count <= max_leaf {
                nodes[node] = Node {
                    bounds,
                    first: start as u32,
                    count: count as u32,
                };
                continue;
            }
            let cbounds = order[start..end]
                .iter()
                .fold(Aabb::EMPTY, |b, &i| b.grow_point(centroids[i as usize]));
            let axis = cbounds.extent().max_axis();
            let mid = start + count / 2;
            order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                centroids[a as usize][axis]
                    .total_cmp(&centroids[b as usize][axis])
                    .then(a.cmp(&b))
            });
            let left = nodes.len();
            nodes.push(Node {
                bounds: Aabb::EMPTY,
                first: 0,
                count: 0,
            });
            nodes.push(Node {
                bounds: Aabb::EMPTY,
                first: 0,
                count: 0,
            });
            nodes[node] = Node {
                bounds,
                first: left as u32,
                count: 0,
            };
            stack.push((left + 1, mid, end));
            stack.push((left, start, mid));
        }
        Ok(Bvh {
            nodes,
            order,
            tris,
            watertight: mesh.is_watertight(),
        })
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    /// Whether the source mesh passed the two-triangles-per-edge check.
    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    /// Leaf triangle lists in tree order; used by structural tests.
    pub fn leaves(&self) -> Vec<Vec<u32>> {
        self.nodes
            .iter()
            .filter(|n| n.count > 0)
            .map(|n| self.order[n.first as usize..(n.first + n.count) as usize].to_vec())
            .collect()
    }

    /// Checks that every inner node's box contains its children's boxes.
    pub fn check_nesting(&self) -> bool {
        self.nodes.iter().all(|n| {
            n.count > 0
                || (n.bounds.contains_box(&self.nodes[n.first as usize].bounds)
                    && n.bounds.contains_box(&self.nodes[n.first as usize + 1].bounds))
        })
    }

    /// Nearest hit with `t ∈ (0, t_max]`. Equal distances resolve to the lower triangle id.
    pub fn ray_cast(&self, origin: Vec3, dir: Vec3, t_max: f64) -> Result<Option<RayHit>> {
        if (dir.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "ray direction must be unit length (|d| = {})",
                dir.norm()
            )));
        }
        Ok(self.ray_cast_unchecked(origin, dir, t_max))
    }

    pub(crate) fn ray_cast_unchecked(&self, origin: Vec3, dir: Vec3, t_max: f64) -> Option<RayHit> {
        let shear = ShearRay::new(origin, dir);
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<(f64, u32)> = None;
        let mut limit = t_max;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node.bounds.ray_interval(origin, inv, 0.0, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                for &tri in &self.order[node.first as usize..(node.first + node.count) as usize] {
                    if let Some(t) = shear.intersect(&self.tris[tri as usize], limit) {
                        let better = match best {
                            None => true,
                            Some((bt, bi)) => t < bt || (t == bt && tri < bi),
                        };
                        if better {
                            best = Some((t, tri));
                            limit = t;
                        }
                    }
                }
            } else {
                let (l, r) = (node.first, node.first + 1);
                let dl = self.nodes[l as usize].bounds.ray_interval(origin, inv, 0.0, limit);
                let dr = self.nodes[r as usize].bounds.ray_interval(origin, inv, 0.0, limit);
                match (dl, dr) {
                    (Some((tl, _)), Some((tr, _))) => {
                        if tl <= tr {
                            stack.push(r);
                            stack.push(l);
                        } else {
                            stack.push(l);
                            stack.push(r);
                        }
                    }
                    (Some(_), None) => stack.push(l),
                    (None, Some(_)) => stack.push(r),
                    (None, None) => {}
                }
            }
        }
        best.map(|(t, tri)| {
            let [a, b, c] = self.tris[tri as usize];
            RayHit {
                t,
                triangle: tri,
                normal: (b - a).cross(c - a).normalized(),
            }
        })
    }

    /// Number of triangles crossed by the half-line `origin + t·dir`, `t > 0`.
    pub fn count_crossings(&self, origin: Vec3, dir: Vec3) -> usize {
        let shear = ShearRay::new(origin, dir);
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut hits = 0;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if node
                .bounds
                .ray_interval(origin, inv, 0.0, f64::INFINITY)
                .is_none()
            {
                continue;
            }
            if node.count > 0 {
                for &tri in &self.order[node.first as usize..(node.first + node.count) as usize] {
                    if shear.intersect(&self.tris[tri as usize], f64::INFINITY).is_some() {
                        hits += 1;
                    }
                }
            } else {
                stack.push(node.first);
                stack.push(node.first + 1);
            }
        }
        hits
    }

    /// Closest point on the surface (best-first traversal).
    pub fn closest_point(&self, p: Vec3) -> ClosestPoint {
        let mut best = ClosestPoint {
            point: p,
            distance: f64::INFINITY,
            triangle: u32::MAX,
        };
        let mut best_d2 = f64::INFINITY;
        let mut heap = BinaryHeap::with_capacity(64);
        heap.push(HeapEntry {
            dist2: self.nodes[0].bounds.distance_squared(p),
            node: 0,
        });
        while let Some(HeapEntry { dist2, node }) = heap.pop() {
            if dist2 > best_d2 {
                break;
            }
            let n = &self.nodes[node as usize];
            if n.count > 0 {
                for &tri in &self.order[n.first as usize..(n.first + n.count) as usize] {
                    let [a, b, c] = self.tris[tri as usize];
                    let q = closest_point_on_triangle(p, a, b, c);
                    let d2 = (q - p).norm_squared();
                    if d2 < best_d2 || (d2 == best_d2 && tri < best.triangle) {
                        best_d2 = d2;
                        best = ClosestPoint {
                            point: q,
                            distance: d2.sqrt(),
                            triangle: tri,
                        };
                    }
                }
            } else {
                for child in [n.first, n.first + 1] {
                    let d2 = self.nodes[child as usize].bounds.distance_squared(p);
                    if d2 <= best_d2 {
                        heap.push(HeapEntry { dist2: d2, node: child });
                    }
                }
            }
        }
        best
    }

    /// Reference nearest hit by testing every triangle; used as a test oracle.
    pub fn ray_cast_brute_force(&self, origin: Vec3, dir: Vec3, t_max: f64) -> Option<RayHit> {
        let shear = ShearRay::new(origin, dir);
        let mut best: Option<(f64, u32)> = None;
        for (i, tri) in self.tris.iter().enumerate() {
            if let Some(t) = shear.intersect(tri, t_max) {
                if best.is_none_or(|(bt, bi)| t < bt || (t == bt && (i as u32) < bi)) {
                    best = Some((t, i as u32));
                }
            }
        }
        best.map(|(t, tri)| {
            let [a, b, c] = self.tris[tri as usize];
            RayHit {
                t,
                triangle: tri,
                normal: (b - a).cross(c - a).normalized(),
            }
        })
    }

    /// Reference closest point over all triangles; used as a test oracle.
    pub fn closest_point_brute_force(&self, p: Vec3) -> ClosestPoint {
        let mut best = ClosestPoint {
            point: p,
            distance: f64::INFINITY,
            triangle: u32::MAX,
        };
        let mut best_d2 = f64::INFINITY;
        for (i, &[a, b, c]) in self.tris.iter().enumerate() {
            let q = closest_point_on_triangle(p, a, b, c);
            let d2 = (q - p).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best = ClosestPoint {
                    point: q,
                    distance: d2.sqrt(),
                    triangle: i as u32,
                };
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn empty_mesh_is_rejected() {
        assert!(Bvh::build(&TriangleMesh::empty()).is_err());
    }

    #[test]
    fn single_triangle_is_one_leaf() {
        let mesh = TriangleMesh::new(
            vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 1.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let bvh = Bvh::build(&mesh).unwrap();
        assert_eq!(bvh.node_count(), 1);
        assert_eq!(bvh.leaves(), vec![vec![0]]);
        let hit = bvh
            .ray_cast(Vec3::new(0.2, 0.2, 0.0), Vec3::Z, 10.0)
            .unwrap()
            .unwrap();
        assert_eq!(hit.t, 1.0);
        assert_eq!(hit, bvh.ray_cast_brute_force(Vec3::new(0.2, 0.2, 0.0), Vec3::Z, 10.0).unwrap());
    }

    #[test]
    fn axis_ray_into_square() {
        let mesh = TriangleMesh::new(
            vec![
                Vec3::new(-0.5, -0.5, 2.0),
                Vec3::new(0.5, -0.5, 2.0),
                Vec3::new(0.5, 0.5, 2.0),
                Vec3::new(-0.5, 0.5, 2.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let bvh = Bvh::build(&mesh).unwrap();
        // straight through the shared diagonal: exactly one triangle owns it
        let hit = bvh.ray_cast(Vec3::ZERO, Vec3::Z, 10.0).unwrap().unwrap();
        assert_eq!(hit.t, 2.0);
        assert_eq!(bvh.count_crossings(Vec3::ZERO, Vec3::Z), 1);
        assert!(bvh.ray_cast(Vec3::ZERO, -Vec3::Z, 10.0).unwrap().is_none());
        assert!(bvh.ray_cast(Vec3::ZERO, Vec3::new(0.0, 0.0, 2.0), 10.0).is_err());
    }

    #[test]
    fn shared_edges_and_vertices_are_counted_once() {
        // rays through cube edges and corners must still see odd parity from inside
        let cube = TriangleMesh::cuboid(Vec3::splat(-0.5), Vec3::splat(0.5));
        let bvh = Bvh::build(&cube).unwrap();
        let dirs = [
            Vec3::new(1.0, 1.0, 0.0).normalized(),
            Vec3::new(1.0, 1.0, 1.0).normalized(),
            Vec3::new(0.0, 1.0, -1.0).normalized(),
            Vec3::X,
        ];
        for d in dirs {
            assert_eq!(bvh.count_crossings(Vec3::ZERO, d), 1, "dir {d:?}");
        }
        // outside, grazing through two opposite edges: even
        let origin = Vec3::new(-1.0, -1.0, 0.0);
        let c = bvh.count_crossings(origin, Vec3::new(1.0, 1.0, 0.0).normalized());
        assert_eq!(c % 2, 0);
    }

    #[test]
    fn two_boxes_split_and_gap_miss() {
        let mut mesh = TriangleMesh::cuboid(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0));
        mesh.append(&TriangleMesh::cuboid(Vec3::new(3.0, 0.0, 0.0), Vec3::new(4.0, 1.0, 1.0)));
        let bvh = Bvh::build(&mesh).unwrap();
        let root = &bvh.nodes[0];
        let l = bvh.nodes[root.first as usize].bounds;
        let r = bvh.nodes[root.first as usize + 1].bounds;
        assert!(l.separation(&r) >= 2.0 - 1e-12);
        assert!(bvh
            .ray_cast(Vec3::new(2.0, 0.5, -5.0), Vec3::Z, 100.0)
            .unwrap()
            .is_none());
        assert!(bvh.check_nesting());
    }

    #[test]
    fn sphere_hit_distance() {
        let r = 0.5;
        let d = 3.0;
        let mesh = TriangleMesh::icosphere(Vec3::new(0.0, 0.0, d), r, 5);
        let bvh = Bvh::build(&mesh).unwrap();
        let hit = bvh.ray_cast(Vec3::ZERO, Vec3::Z, 10.0).unwrap().unwrap();
        assert!((hit.t - (d - r)).abs() < 1e-4 * r, "t = {}", hit.t);
    }

    #[test]
    fn matches_brute_force_on_icosphere() {
        let mesh = TriangleMesh::icosphere(Vec3::ZERO, 1.0, 5); // 20480 triangles
        let bvh = Bvh::build(&mesh).unwrap();
        let mut leaf_tris: Vec<u32> = bvh.leaves().into_iter().flatten().collect();
        leaf_tris.sort_unstable();
        assert_eq!(leaf_tris, (0..mesh.triangle_count() as u32).collect::<Vec<_>>());
        assert!(bvh.check_nesting());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hits = 0;
        for _ in 0..1000 {
            let origin = random_unit(&mut rng) * 2.0;
            let target = random_unit(&mut rng) * 0.9;
            let dir = (target - origin).normalized();
            let a = bvh.ray_cast(origin, dir, 100.0).unwrap();
            let b = bvh.ray_cast_brute_force(origin, dir, 100.0);
            assert_eq!(a.map(|h| h.triangle), b.map(|h| h.triangle));
            if let (Some(a), Some(b)) = (a, b) {
                assert!((a.t - b.t).abs() <= 1e-9);
                hits += 1;
            }
        }
        assert!(hits > 900);
    }

    #[test]
    fn closest_point_matches_brute_force() {
        let mut mesh = TriangleMesh::icosphere(Vec3::ZERO, 1.0, 3);
        mesh.append(&TriangleMesh::cuboid(Vec3::new(1.5, -0.5, -0.5), Vec3::new(2.5, 0.5, 0.5)));
        let bvh = Bvh::build(&mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let p = Vec3::new(
                rng.gen_range(-2.0..3.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let a = bvh.closest_point(p);
            let b = bvh.closest_point_brute_force(p);
            assert!((a.distance - b.distance).abs() <= 1e-9);
        }
    }
}
