//! Marching Cubes over a regular grid of signed distances.

use rustc_hash::FxHashMap;

use super::mc_tables::{CORNERS, EDGES, TRIANGLES};
use crate::error::{Error, Result};
use crate::geom::{Aabb, TriangleMesh, Vec3};

/// Offset applied to samples that are exactly zero, keeping every vertex strictly
/// inside an edge.
pub const ZERO_NUDGE: f64 = 1e-9;

/// Samples on the lattice `origin + spacing·(i, j, k)`, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl SdfGrid {
    /// Lattice covering `bounds` with at least one cell per axis.
    pub fn covering(bounds: &Aabb, spacing: f64) -> Result<SdfGrid> {
        if !(spacing > 0.0) || bounds.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "grid spacing {spacing} and bounds {bounds:?} do not define a grid"
            )));
        }
        let e = bounds.extent();
        let dims = [0, 1, 2].map(|a| ((e[a] / spacing).ceil() as usize).max(1) + 1);
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .filter(|&n| n <= 1 << 30)
            .ok_or_else(|| Error::InvalidArgument(format!("grid of {dims:?} points is too large")))?;
        Ok(SdfGrid {
            origin: bounds.min,
            spacing,
            dims,
            values: vec![0.0; n],
        })
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    /// All lattice points in storage order.
    pub fn points(&self) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.values.len());
        for k in 0..self.dims[2] {
            for j in 0..self.dims[1] {
                for i in 0..self.dims[0] {
                    out.push(self.point(i, j, k));
                }
            }
        }
        out
    }

    pub fn fill(&mut self, f: impl Fn(Vec3) -> f64) {
        let pts = self.points();
        for (v, p) in self.values.iter_mut().zip(pts) {
            *v = f(p);
        }
    }
}

/// Zero level set of `grid` with linear edge interpolation. Vertices are shared
/// between the cells that meet at an edge; triangles wind counter-clockwise seen
/// from the positive side.
pub fn marching_cubes(grid: &SdfGrid) -> Result<TriangleMesh> {
    let [nx, ny, nz] = grid.dims;
    if grid.values.len() != nx * ny * nz {
        return Err(Error::InvalidArgument(format!(
            "grid holds {} values for dims {:?}",
            grid.values.len(),
            grid.dims
        )));
    }
    if let Some(i) = grid.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("grid value {i} is {}", grid.values[i])));
    }
    let value = |idx: usize| {
        let v = grid.values[idx];
        if v == 0.0 {
            ZERO_NUDGE
        } else {
            v
        }
    };
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    // (lower lattice index, axis) → vertex
    let mut edge_vertex: FxHashMap<(usize, u8), u32> = FxHashMap::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return TriangleMesh::new(vertices, triangles);
    }
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut corner_idx = [0usize; 8];
                let mut vals = [0.0; 8];
                let mut case = 0usize;
                for c in 0..8 {
                    let o = CORNERS[c];
                    corner_idx[c] = grid.index(i + o[0], j + o[1], k + o[2]);
                    vals[c] = value(corner_idx[c]);
                    if vals[c] < 0.0 {
                        case |= 1 << c;
                    }
                }
                let row = &TRIANGLES[case];
                if row[0] < 0 {
                    continue;
                }
                let mut edge_ids = [u32::MAX; 12];
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    let mut ids = [0u32; 3];
                    for (slot, &e) in ids.iter_mut().zip(tri) {
                        let e = e as usize;
                        if edge_ids[e] == u32::MAX {
                            let [a, b] = EDGES[e];
                            let (ia, ib) = (corner_idx[a], corner_idx[b]);
                            let (lo, hi, vlo, vhi, olo) = if ia < ib {
                                (ia, ib, vals[a], vals[b], CORNERS[a])
                            } else {
                                (ib, ia, vals[b], vals[a], CORNERS[b])
                            };
                            let axis = match hi - lo {
                                1 => 0u8,
                                d if d == nx => 1,
                                _ => 2,
                            };
                            edge_ids[e] = *edge_vertex.entry((lo, axis)).or_insert_with(|| {
                                let t = vlo / (vlo - vhi);
                                let p = grid.point(i + olo[0], j + olo[1], k + olo[2]);
                                let mut q = p;
                                match axis {
                                    0 => q.x += t * grid.spacing,
                                    1 => q.y += t * grid.spacing,
                                    _ => q.z += t * grid.spacing,
                                }
                                vertices.push(q);
                                (vertices.len() - 1) as u32
                            });
                        }
                        *slot = edge_ids[e];
                    }
                    // table winding faces the negative side; flip to face outward
                    triangles.push([ids[0], ids[2], ids[1]]);
                }
            }
        }
    }
    TriangleMesh::new(vertices, triangles)
}
