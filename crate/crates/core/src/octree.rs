//! Sparse hierarchical feature volume.
//!
//! Level `i ∈ 0..=L` partitions the cube into `2^i` nodes per axis, each of side
//! `voxel_size · 2^(L−i)`. Every occupied node owns the feature vectors stored at
//! its 8 lattice corners; neighbouring nodes share corners. Levels `0..=j` are
//! the coarse stack, levels `j+1..=L` the fine stack.
//!
//! Checkpoint layout (little-endian): magic `OSOV`, `u32` version, origin
//! `3×f64`, voxel size `f64`, `u32` L, `u32` j, `u32` F, then per level: `u64`
//! node count and sorted node records (`3×i32`), `u64` corner count and sorted
//! corner records (`3×i32` + `F×f32`).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read_file, write_atomic};
use crate::geom::{Aabb, Vec3};

/// Half-width of the uniform distribution used to initialize corner features.
pub const FEATURE_INIT_RANGE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OctreeLayout {
    /// Minimum corner of the cube.
    pub origin: Vec3,
    /// Finest node side (m).
    pub voxel_size: f64,
    /// Index of the finest level, `L`.
    pub levels: u32,
    /// Last coarse level, `j`.
    pub split: u32,
    pub feature_dim: usize,
}

impl OctreeLayout {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.levels > 20 {
            return Err(Error::InvalidArgument(format!("L must lie in 1..=20, got {}", self.levels)));
        }
        if self.split >= self.levels {
            return Err(Error::InvalidArgument(format!(
                "split level j = {} must be below L = {}",
                self.split, self.levels
            )));
        }
        if !(self.voxel_size > 0.0) || !self.origin.is_finite() {
            return Err(Error::InvalidArgument(format!("bad voxel size {}", self.voxel_size)));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn side(&self) -> f64 {
        self.voxel_size * (1u64 << self.levels) as f64
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::new(self.origin, self.origin + Vec3::splat(self.side()))
    }

    #[inline]
    pub fn node_size(&self, level: u32) -> f64 {
        self.voxel_size * (1u64 << (self.levels - level)) as f64
    }

    pub fn level_count(&self) -> usize {
        self.levels as usize + 1
    }

    pub fn coarse_levels(&self) -> std::ops::RangeInclusive<u32> {
        0..=self.split
    }

    pub fn fine_levels(&self) -> std::ops::RangeInclusive<u32> {
        self.split + 1..=self.levels
    }

    pub fn coarse_width(&self) -> usize {
        (self.split as usize + 1) * self.feature_dim
    }

    pub fn fine_width(&self) -> usize {
        (self.levels - self.split) as usize * self.feature_dim
    }

    /// Maps the cube to `[−1, 1]³`.
    #[inline]
    pub fn normalize(&self, p: Vec3) -> Vec3 {
        let half = self.side() / 2.0;
        (p - self.origin) / half - Vec3::splat(1.0)
    }

    /// Node containing `p` at `level` and the local coordinate inside it, in `[0, 1]³`.
    #[inline]
    fn locate(&self, level: u32, p: Vec3) -> Option<([i32; 3], [f64; 3])> {
        let s = self.node_size(level);
        let n = 1i64 << level;
        let mut node = [0i32; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let x = (p[a] - self.origin[a]) / s;
            if !(x >= 0.0 && x <= n as f64) {
                return None;
            }
            let i = (x.floor() as i64).min(n - 1);
            node[a] = i as i32;
            t[a] = x - i as f64;
        }
        Some((node, t))
    }
}

/// The 8 corner slots and trilinear weights of the node containing a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub slots: [u32; 8],
    pub weights: [f64; 8],
}

/// Corner `k` sits at offset `(k & 1, (k >> 1) & 1, (k >> 2) & 1)` from the node origin.
#[inline]
pub fn corner_offset(k: usize) -> [i32; 3] {
    [(k & 1) as i32, ((k >> 1) & 1) as i32, ((k >> 2) & 1) as i32]
}

#[inline]
fn trilinear_weights(t: [f64; 3]) -> [f64; 8] {
    let mut w = [0.0; 8];
    for (k, wk) in w.iter_mut().enumerate() {
        let o = corner_offset(k);
        let mut v = 1.0;
        for a in 0..3 {
            v *= if o[a] == 1 { t[a] } else { 1.0 - t[a] };
        }
        *wk = v;
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
struct Level {
    /// Occupied node → its 8 corner slots.
    nodes: FxHashMap<[i32; 3], [u32; 8]>,
    /// Corner lattice coordinates by slot, sorted.
    corners: Vec<[i32; 3]>,
    /// `corners.len() × F` features.
    features: Vec<f64>,
}

/// Per-level dense buffers shaped like the volume's features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrads {
    pub levels: Vec<Vec<f64>>,
}

impl FeatureGrads {
    pub fn zero(&mut self) {
        for l in &mut self.levels {
            l.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn add(&mut self, other: &FeatureGrads) {
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }
}

/// Which levels answered a query; bit `i` set ⇔ level `i` present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Presence(pub u32);

impl Presence {
    #[inline]
    pub fn has(self, level: u32) -> bool {
        self.0 & (1 << level) != 0
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }
}

/// Result of [`OctreeFeatureVolume::query`].
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    /// `(j+1)·F` values, level ascending; `None` if no coarse level answered.
    pub coarse: Option<Vec<f64>>,
    /// `(L−j)·F` values, level ascending; `None` if no fine level answered.
    pub fine: Option<Vec<f64>>,
    pub missing_layers: u32,
    pub presence: Presence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OctreeFeatureVolume {
    layout: OctreeLayout,
    levels: Vec<Level>,
}

impl OctreeFeatureVolume {
    /// Marks the node containing each point at every level and initializes the
    /// corner features of occupied nodes uniformly in `±FEATURE_INIT_RANGE`.
    pub fn build(points: &[Vec3], layout: OctreeLayout, init_seed: u64) -> Result<Self> {
        layout.validate()?;
        let mut occupied: Vec<FxHashSet<[i32; 3]>> = vec![FxHashSet::default(); layout.level_count()];
        for (i, &p) in points.iter().enumerate() {
            for level in 0..=layout.levels {
                let (node, _) = layout.locate(level, p).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "point {i} at {p:?} lies outside the octree bounds {:?}",
                        layout.bounds()
                    ))
                })?;
                occupied[level as usize].insert(node);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let levels = occupied
            .into_iter()
            .map(|nodes| Level::from_nodes(nodes, layout.feature_dim, |_| rng.gen_range(-FEATURE_INIT_RANGE..=FEATURE_INIT_RANGE)))
            .collect();
        Ok(OctreeFeatureVolume { layout, levels })
    }

    pub fn layout(&self) -> &OctreeLayout {
        &self.layout
    }

    pub fn feature_dim(&self) -> usize {
        self.layout.feature_dim
    }

    pub fn node_count(&self, level: u32) -> usize {
        self.levels[level as usize].nodes.len()
    }

    pub fn corner_count(&self, level: u32) -> usize {
        self.levels[level as usize].corners.len()
    }

    pub fn is_occupied(&self, level: u32, node: [i32; 3]) -> bool {
        self.levels[level as usize].nodes.contains_key(&node)
    }

    /// Occupied node coordinates at `level`, sorted.
    pub fn nodes(&self, level: u32) -> Vec<[i32; 3]> {
        let mut v: Vec<[i32; 3]> = self.levels[level as usize].nodes.keys().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn corners(&self, level: u32) -> &[[i32; 3]] {
        &self.levels[level as usize].corners
    }

    pub fn features(&self, level: u32) -> &[f64] {
        &self.levels[level as usize].features
    }

    pub fn features_mut(&mut self, level: u32) -> &mut [f64] {
        &mut self.levels[level as usize].features
    }

    /// Slot of a corner, if it exists.
    pub fn corner_slot(&self, level: u32, corner: [i32; 3]) -> Option<u32> {
        self.levels[level as usize]
            .corners
            .binary_search(&corner)
            .ok()
            .map(|s| s as u32)
    }

    pub fn corner_feature(&self, level: u32, corner: [i32; 3]) -> Option<&[f64]> {
        let f = self.layout.feature_dim;
        self.corner_slot(level, corner)
            .map(|s| &self.levels[level as usize].features[s as usize * f..(s as usize + 1) * f])
    }

    pub fn zero_grads(&self) -> FeatureGrads {
        FeatureGrads {
            levels: self.levels.iter().map(|l| vec![0.0; l.features.len()]).collect(),
        }
    }

    /// Corner slots and weights of the occupied node containing `p` at `level`.
    #[inline]
    pub fn cell(&self, level: u32, p: Vec3) -> Option<Cell> {
        let (node, t) = self.layout.locate(level, p)?;
        let slots = *self.levels[level as usize].nodes.get(&node)?;
        Some(Cell {
            slots,
            weights: trilinear_weights(t),
        })
    }

    /// Blends `cell`'s corner features at `level` into `out` (length F).
    #[inline]
    pub fn blend(&self, level: u32, cell: &Cell, out: &mut [f64]) {
        let f = self.layout.feature_dim;
        let feats = &self.levels[level as usize].features;
        out.iter_mut().for_each(|o| *o = 0.0);
        for k in 0..8 {
            let w = cell.weights[k];
            let base = cell.slots[k] as usize * f;
            for (o, &c) in out.iter_mut().zip(&feats[base..base + f]) {
                *o += w * c;
            }
        }
    }

    /// Trilinear feature at `level`, or `None` when the containing node is unoccupied.
    pub fn interpolate(&self, level: u32, p: Vec3) -> Option<Vec<f64>> {
        let cell = self.cell(level, p)?;
        let mut out = vec![0.0; self.layout.feature_dim];
        self.blend(level, &cell, &mut out);
        Some(out)
    }

    /// Adds `weight_k · upstream` to the gradient of each corner of `p`'s node.
    pub fn accumulate_feature_gradient(
        &self,
        level: u32,
        p: Vec3,
        upstream: &[f64],
        grads: &mut FeatureGrads,
    ) -> Result<()> {
        let cell = self.cell(level, p).ok_or_else(|| {
            Error::InvalidArgument(format!("no occupied node at level {level} contains {p:?}"))
        })?;
        scatter(&cell, self.layout.feature_dim, upstream, &mut grads.levels[level as usize]);
        Ok(())
    }

    /// Fills `coarse` ((j+1)·F) and `fine` ((L−j)·F) buffers, zeros for absent levels.
    pub fn query_into(&self, p: Vec3, coarse: &mut [f64], fine: &mut [f64]) -> Presence {
        let f = self.layout.feature_dim;
        let mut mask = 0u32;
        for level in 0..=self.layout.levels {
            let out = if level <= self.layout.split {
                &mut coarse[level as usize * f..(level as usize + 1) * f]
            } else {
                let k = (level - self.layout.split - 1) as usize;
                &mut fine[k * f..(k + 1) * f]
            };
            match self.cell(level, p) {
                Some(cell) => {
                    self.blend(level, &cell, out);
                    mask |= 1 << level;
                }
                None => out.iter_mut().for_each(|o| *o = 0.0),
            }
        }
        Presence(mask)
    }

    pub fn query(&self, p: Vec3) -> QueryResult {
        let mut coarse = vec![0.0; self.layout.coarse_width()];
        let mut fine = vec![0.0; self.layout.fine_width()];
        let presence = self.query_into(p, &mut coarse, &mut fine);
        let coarse_mask = (1u32 << (self.layout.split + 1)) - 1;
        QueryResult {
            coarse: (presence.0 & coarse_mask != 0).then_some(coarse),
            fine: (presence.0 & !coarse_mask != 0).then_some(fine),
            missing_layers: self.layout.levels + 1 - presence.count(),
            presence,
        }
    }

    /// Number of levels at which `p` retrieves no feature.
    pub fn missing_layers(&self, p: Vec3) -> u32 {
        let mut missing = 0;
        for level in 0..=self.layout.levels {
            let present = self
                .layout
                .locate(level, p)
                .is_some_and(|(node, _)| self.levels[level as usize].nodes.contains_key(&node));
            if !present {
                missing += 1;
            }
        }
        missing
    }

    pub fn encode(&self) -> Vec<u8> {
        let l = &self.layout;
        let mut out = Vec::new();
        out.extend_from_slice(VOLUME_MAGIC);
        out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
        for c in l.origin.to_array() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&l.voxel_size.to_le_bytes());
        out.extend_from_slice(&l.levels.to_le_bytes());
        out.extend_from_slice(&l.split.to_le_bytes());
        out.extend_from_slice(&(l.feature_dim as u32).to_le_bytes());
        for (i, level) in self.levels.iter().enumerate() {
            let nodes = self.nodes(i as u32);
            out.extend_from_slice(&(nodes.len() as u64).to_le_bytes());
            for n in nodes {
                for c in n {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            out.extend_from_slice(&(level.corners.len() as u64).to_le_bytes());
            for (s, c) in level.corners.iter().enumerate() {
                for x in c {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                for &v in &level.features[s * l.feature_dim..(s + 1) * l.feature_dim] {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], name: &str) -> Result<Self> {
        let mut r = Reader { b: bytes, pos: 0, name };
        if r.take(4)? != VOLUME_MAGIC {
            return Err(Error::parse(name, "offset 0", "not a feature volume (bad magic)"));
        }
        let version = r.u32()?;
        if version != VOLUME_VERSION {
            return Err(Error::parse(name, "offset 4", format!("unsupported volume version {version}")));
        }
        let origin = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
        let voxel_size = r.f64()?;
        let layout = OctreeLayout {
            origin,
            voxel_size,
            levels: r.u32()?,
            split: r.u32()?,
            feature_dim: r.u32()? as usize,
        };
        layout
            .validate()
            .map_err(|e| Error::parse(name, "header", e.to_string()))?;
        let f = layout.feature_dim;
        let mut levels = Vec::with_capacity(layout.level_count());
        for _ in 0..layout.level_count() {
            let n = r.u64()? as usize;
            let mut nodes = FxHashSet::default();
            for _ in 0..n {
                nodes.insert([r.i32()?, r.i32()?, r.i32()?]);
            }
            let at = r.pos;
            let m = r.u64()? as usize;
            let mut corners = Vec::with_capacity(m.min(1 << 24));
            let mut features = Vec::with_capacity(m.min(1 << 24) * f);
            for _ in 0..m {
                corners.push([r.i32()?, r.i32()?, r.i32()?]);
                for _ in 0..f {
                    features.push(r.f32()? as f64);
                }
            }
            let level = Level::from_nodes(nodes, f, |_| 0.0);
            if level.corners != corners {
                return Err(Error::parse(
                    name,
                    format!("offset {at}"),
                    "corner records do not match the node set",
                ));
            }
            levels.push(Level { features, ..level });
        }
        if r.pos != bytes.len() {
            return Err(Error::parse(name, format!("offset {}", r.pos), "trailing bytes"));
        }
        Ok(OctreeFeatureVolume { layout, levels })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?, &path.display().to_string())
    }
}

/// Adds `weights[k] · upstream` into the F-wide rows of `grad` at each corner slot.
#[inline]
pub fn scatter(cell: &Cell, f: usize, upstream: &[f64], grad: &mut [f64]) {
    for k in 0..8 {
        let w = cell.weights[k];
        if w == 0.0 {
            continue;
        }
        let base = cell.slots[k] as usize * f;
        for (g, &u) in grad[base..base + f].iter_mut().zip(upstream) {
            *g += w * u;
        }
    }
}

impl Level {
    fn from_nodes(nodes: FxHashSet<[i32; 3]>, f: usize, mut init: impl FnMut(usize) -> f64) -> Level {
        let mut corner_set: FxHashSet<[i32; 3]> = FxHashSet::default();
        for n in &nodes {
            for k in 0..8 {
                let o = corner_offset(k);
                corner_set.insert([n[0] + o[0], n[1] + o[1], n[2] + o[2]]);
            }
        }
        let mut corners: Vec<[i32; 3]> = corner_set.into_iter().collect();
        corners.sort_unstable();
        let features = (0..corners.len() * f).map(&mut init).collect();
        let slot_of = |c: [i32; 3]| corners.binary_search(&c).expect("corner registered") as u32;
        let node_map = nodes
            .into_iter()
            .map(|n| {
                let mut slots = [0u32; 8];
                for (k, s) in slots.iter_mut().enumerate() {
                    let o = corner_offset(k);
                    *s = slot_of([n[0] + o[0], n[1] + o[1], n[2] + o[2]]);
                }
                (n, slots)
            })
            .collect();
        Level {
            nodes: node_map,
            corners,
            features,
        }
    }
}

const VOLUME_MAGIC: &[u8; 4] = b"OSOV";
const VOLUME_VERSION: u32 = 1;

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::parse(self.name, format!("offset {}", self.pos), "unexpected end of file"));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
