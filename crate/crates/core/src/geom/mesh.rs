use rustc_hash::FxHashMap;

use super::vec::{Aabb, Vec3};
use crate::error::{Error, Result};

/// Smallest triangle area (m²) considered non-degenerate.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Indexed triangle surface.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    normals: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    /// Creates a mesh, checking that every index refers to an existing vertex.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some((i, t)) = triangles
            .iter()
            .enumerate()
            .find(|(_, t)| t.iter().any(|&v| v as usize >= n))
        {
            return Err(Error::Geometry(format!(
                "triangle {i} references vertex {:?} but the mesh has {n} vertices",
                t
            )));
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
            normals: None,
        })
    }

    pub fn empty() -> Self {
        TriangleMesh::default()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Stores per-triangle normals computed from the winding order.
    pub fn with_face_normals(mut self) -> Self {
        let normals = (0..self.triangles.len())
            .map(|i| self.face_normal(i))
            .collect();
        self.normals = Some(normals);
        self
    }

    #[inline]
    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[i];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(c - a).norm()
    }

    /// Unit normal following the counter-clockwise winding convention.
    pub fn face_normal(&self, i: usize) -> Vec3 {
        let [a, b, c] = self.triangle(i);
        (b - a).cross(c - a).normalized()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Indices of triangles whose area is at most [`MIN_TRIANGLE_AREA`].
    pub fn degenerate_triangles(&self) -> Vec<usize> {
        (0..self.triangles.len())
            .filter(|&i| self.triangle_area(i) <= MIN_TRIANGLE_AREA)
            .collect()
    }

    /// Number of triangles incident to each undirected edge.
    pub fn edge_use_counts(&self) -> FxHashMap<(u32, u32), u32> {
        let mut counts: FxHashMap<(u32, u32), u32> = FxHashMap::default();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = if a < b { (a, b) } else { (b, a) };
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }

    /// True when the mesh is non-empty and every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_use_counts().values().all(|&c| c == 2)
    }

    /// V − E + F over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &v in t {
                used[v as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        let e = self.edge_use_counts().len() as i64;
        v - e + self.triangles.len() as i64
    }

    /// Disjoint union: vertices of `other` are appended and re-indexed.
    pub fn append(&mut self, other: &TriangleMesh) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles.extend(
            other
                .triangles
                .iter()
                .map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]),
        );
        self.normals = None;
    }

    pub fn translated(&self, offset: Vec3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|&v| v + offset).collect(),
            triangles: self.triangles.clone(),
            normals: self.normals.clone(),
        }
    }

    /// Reverses the winding of every triangle.
    pub fn flipped(&self) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
            normals: self.normals.as_ref().map(|n| n.iter().map(|&v| -v).collect()),
        }
    }

    /// Closed axis-aligned box with outward-facing triangles.
    pub fn cuboid(min: Vec3, max: Vec3) -> TriangleMesh {
        let v = |i: usize| {
            Vec3::new(
                if i & 1 == 0 { min.x } else { max.x },
                if i & 2 == 0 { min.y } else { max.y },
                if i & 4 == 0 { min.z } else { max.z },
            )
        };
        let vertices = (0..8).map(v).collect();
        let triangles = vec![
            [0, 2, 1],
            [1, 2, 3], // z = min
            [4, 5, 6],
            [5, 7, 6], // z = max
            [0, 1, 4],
            [1, 5, 4], // y = min
            [2, 6, 3],
            [3, 6, 7], // y = max
            [0, 4, 2],
            [2, 4, 6], // x = min
            [1, 3, 5],
            [3, 7, 5], // x = max
        ];
        TriangleMesh {
            vertices,
            triangles,
            normals: None,
        }
    }

    /// Closed vertical prism approximating a cylinder with `segments` sides.
    pub fn prism(center: Vec3, radius: f64, height: f64, segments: usize) -> TriangleMesh {
        let n = segments.max(3);
        let mut vertices = Vec::with_capacity(2 * n + 2);
        for k in 0..n {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            vertices.push(center + Vec3::new(radius * a.cos(), radius * a.sin(), 0.0));
        }
        for k in 0..n {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            vertices.push(center + Vec3::new(radius * a.cos(), radius * a.sin(), height));
        }
        let bottom = (2 * n) as u32;
        let top = bottom + 1;
        vertices.push(center);
        vertices.push(center + Vec3::new(0.0, 0.0, height));
        let mut triangles = Vec::with_capacity(4 * n);
        for k in 0..n {
            let (i, j) = (k as u32, ((k + 1) % n) as u32);
            let (ti, tj) = (i + n as u32, j + n as u32);
            triangles.push([bottom, j, i]);
            triangles.push([top, ti, tj]);
            triangles.push([i, j, tj]);
            triangles.push([i, tj, ti]);
        }
        TriangleMesh {
            vertices,
            triangles,
            normals: None,
        }
    }

    /// Geodesic sphere from `subdivisions` rounds of 4-to-1 splitting of an icosahedron
    /// (20·4ⁿ triangles), vertices projected onto the sphere.
    pub fn icosphere(center: Vec3, radius: f64, subdivisions: u32) -> TriangleMesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<Vec3> = [
            (-1.0, t, 0.0),
            (1.0, t, 0.0),
            (-1.0, -t, 0.0),
            (1.0, -t, 0.0),
            (0.0, -1.0, t),
            (0.0, 1.0, t),
            (0.0, -1.0, -t),
            (0.0, 1.0, -t),
            (t, 0.0, -1.0),
            (t, 0.0, 1.0),
            (-t, 0.0, -1.0),
            (-t, 0.0, 1.0),
        ]
        .iter()
        .map(|&(x, y, z)| Vec3::new(x, y, z).normalized())
        .collect();
        let mut tris: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut midpoint: FxHashMap<(u32, u32), u32> = FxHashMap::default();
            let mut mid = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
                let key = if a < b { (a, b) } else { (b, a) };
                *midpoint.entry(key).or_insert_with(|| {
                    let m = ((verts[a as usize] + verts[b as usize]) * 0.5).normalized();
                    verts.push(m);
                    (verts.len() - 1) as u32
                })
            };
            let mut next = Vec::with_capacity(tris.len() * 4);
            for &[a, b, c] in &tris {
                let ab = mid(a, b, &mut verts);
                let bc = mid(b, c, &mut verts);
                let ca = mid(c, a, &mut verts);
                next.push([a, ab, ca]);
                next.push([b, bc, ab]);
                next.push([c, ca, bc]);
                next.push([ab, bc, ca]);
            }
            tris = next;
        }
        TriangleMesh {
            vertices: verts.into_iter().map(|v| center + v * radius).collect(),
            triangles: tris,
            normals: None,
        }
    }
}
