//! Procedural indoor rooms and Catmull-Rom camera paths.
//!
//! A room is an open-top shell (floor slab plus four walls) whose interior spans
//! `[0, x] × [0, y] × [0, height]`, with the floor's upper face at `z = 0`.
//! Furniture is a set of closed, axis-aligned solids resting on that face.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, MeshSdf, Pose, TriangleMesh, Vec3};

pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;
/// Gap kept between furniture items and between furniture and walls (m).
pub const PLACEMENT_GAP: f64 = 0.05;
/// Minimum distance from any surface for camera positions (m).
pub const CAMERA_CLEARANCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FurnitureKind {
    Box,
    Prism,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    /// Interior extent along x (m).
    pub size_x: f64,
    /// Interior extent along y (m).
    pub size_y: f64,
    pub height: f64,
    pub furniture_count: usize,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<FurnitureKind>,
    #[serde(default = "default_wall_thickness")]
    pub wall_thickness: f64,
}

fn default_kinds() -> Vec<FurnitureKind> {
    vec![FurnitureKind::Box, FurnitureKind::Prism, FurnitureKind::Table]
}

fn default_wall_thickness() -> f64 {
    0.02
}

impl SceneSpec {
    /// Draws room extents from the supported ranges.
    pub fn random(seed: u64, furniture_count: usize) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5CE7E);
        SceneSpec {
            seed,
            size_x: rng.gen_range(3.0..=8.0),
            size_y: rng.gen_range(3.0..=8.0),
            height: rng.gen_range(2.4..=3.0),
            furniture_count,
            kinds: default_kinds(),
            wall_thickness: default_wall_thickness(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::InvalidArgument(msg)) };
        check(
            (3.0..=8.0).contains(&self.size_x) && (3.0..=8.0).contains(&self.size_y),
            format!("room extents must lie in [3, 8] m, got {} × {}", self.size_x, self.size_y),
        )?;
        check(
            (2.4..=3.0).contains(&self.height),
            format!("room height must lie in [2.4, 3] m, got {}", self.height),
        )?;
        check(
            self.furniture_count <= 10,
            format!("at most 10 furniture items are supported, got {}", self.furniture_count),
        )?;
        check(
            self.furniture_count == 0 || !self.kinds.is_empty(),
            "furniture requested but no furniture kinds enabled".into(),
        )?;
        check(
            self.wall_thickness > 0.0 && self.wall_thickness <= 0.5,
            format!("wall thickness must lie in (0, 0.5] m, got {}", self.wall_thickness),
        )
    }

    pub fn interior(&self) -> Aabb {
        Aabb::new(Vec3::ZERO, Vec3::new(self.size_x, self.size_y, self.height))
    }
}

/// One placed furniture item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Furniture {
    pub kind: FurnitureKind,
    pub bounds: Aabb,
    /// Underside of the supported top surface; equals `bounds.max.z` for solid items.
    pub underside: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub spec: SceneSpec,
    pub complete: TriangleMesh,
    pub layout: TriangleMesh,
    pub furniture: Vec<Furniture>,
}

/// Open-top room shell as one closed solid (16 vertices, 28 triangles).
pub fn room_shell(size_x: f64, size_y: f64, height: f64, t: f64) -> TriangleMesh {
    // rings: outer bottom, outer top, inner bottom, inner top; corners CCW from (min, min)
    let ring = |x0: f64, y0: f64, x1: f64, y1: f64, z: f64| {
        [
            Vec3::new(x0, y0, z),
            Vec3::new(x1, y0, z),
            Vec3::new(x1, y1, z),
            Vec3::new(x0, y1, z),
        ]
    };
    let mut v = Vec::with_capacity(16);
    v.extend(ring(-t, -t, size_x + t, size_y + t, -t)); // 0..4
    v.extend(ring(-t, -t, size_x + t, size_y + t, height)); // 4..8
    v.extend(ring(0.0, 0.0, size_x, size_y, 0.0)); // 8..12
    v.extend(ring(0.0, 0.0, size_x, size_y, height)); // 12..16
    let mut tris: Vec<[u32; 3]> = Vec::with_capacity(28);
    let quad = |tris: &mut Vec<[u32; 3]>, a: u32, b: u32, c: u32, d: u32| {
        tris.push([a, b, c]);
        tris.push([a, c, d]);
    };
    // outer bottom, facing down
    quad(&mut tris, 0, 3, 2, 1);
    // floor, facing up into the room
    quad(&mut tris, 8, 9, 10, 11);
    for k in 0..4u32 {
        let n = (k + 1) % 4;
        // outer wall, facing out
        quad(&mut tris, k, n, 4 + n, 4 + k);
        // inner wall, facing the room
        quad(&mut tris, 8 + k, 12 + k, 12 + n, 8 + n);
        // rim at the top, facing up
        quad(&mut tris, 4 + k, 4 + n, 12 + n, 12 + k);
    }
    TriangleMesh::new(v, tris).expect("shell indices are in range")
}

fn draw_furniture(kind: FurnitureKind, rng: &mut ChaCha8Rng) -> (Vec3, f64, f64) {
    // (footprint extent xy with z = height, slab thickness, radius)
    match kind {
        FurnitureKind::Box => (
            Vec3::new(rng.gen_range(0.3..1.2), rng.gen_range(0.3..1.2), rng.gen_range(0.3..1.0)),
            0.0,
            0.0,
        ),
        FurnitureKind::Prism => {
            let r = rng.gen_range(0.15..0.4);
            (Vec3::new(2.0 * r, 2.0 * r, rng.gen_range(0.3..1.0)), 0.0, r)
        }
        FurnitureKind::Table => {
            let h = rng.gen_range(0.35..0.8);
            let slab = rng.gen_range(0.12f64..0.4).min(h - 0.15);
            (
                Vec3::new(rng.gen_range(0.6..1.6), rng.gen_range(0.5..1.0), h),
                slab,
                0.0,
            )
        }
    }
}

/// Closed solids of a table: one slab and four corner legs.
pub fn table_mesh(min: Vec3, max: Vec3, slab: f64) -> TriangleMesh {
    let leg = 0.05;
    let under = max.z - slab;
    let mut mesh = TriangleMesh::cuboid(Vec3::new(min.x, min.y, under), max);
    for (x, y) in [
        (min.x, min.y),
        (max.x - leg, min.y),
        (max.x - leg, max.y - leg),
        (min.x, max.y - leg),
    ] {
        mesh.append(&TriangleMesh::cuboid(
            Vec3::new(x, y, min.z),
            Vec3::new(x + leg, y + leg, under),
        ));
    }
    mesh
}

/// Builds the room shell and places furniture by seeded rejection sampling.
pub fn generate_scene(spec: &SceneSpec) -> Result<GeneratedScene> {
    spec.validate()?;
    let layout = room_shell(spec.size_x, spec.size_y, spec.height, spec.wall_thickness);
    let mut complete = layout.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut furniture: Vec<Furniture> = Vec::with_capacity(spec.furniture_count);
    for item in 0..spec.furniture_count {
        let kind = spec.kinds[rng.gen_range(0..spec.kinds.len())];
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let (size, slab, radius) = draw_furniture(kind, &mut rng);
            let lo_x = PLACEMENT_GAP;
            let hi_x = spec.size_x - PLACEMENT_GAP - size.x;
            let lo_y = PLACEMENT_GAP;
            let hi_y = spec.size_y - PLACEMENT_GAP - size.y;
            if hi_x <= lo_x || hi_y <= lo_y {
                continue;
            }
            let min = Vec3::new(rng.gen_range(lo_x..hi_x), rng.gen_range(lo_y..hi_y), 0.0);
            let bounds = Aabb::new(min, min + size);
            if furniture
                .iter()
                .any(|f| f.bounds.separation(&bounds) < PLACEMENT_GAP)
            {
                continue;
            }
            placed = Some((bounds, slab, radius));
            break;
        }
        let (bounds, slab, radius) = placed.ok_or_else(|| {
            Error::SceneGen(format!(
                "could not place furniture item {item} after {MAX_PLACEMENT_ATTEMPTS} attempts; \
                 try fewer furniture items or a larger room"
            ))
        })?;
        let (mesh, underside) = match kind {
            FurnitureKind::Box => (TriangleMesh::cuboid(bounds.min, bounds.max), bounds.max.z),
            FurnitureKind::Prism => {
                let c = bounds.center();
                (
                    TriangleMesh::prism(Vec3::new(c.x, c.y, 0.0), radius, bounds.max.z, 12),
                    bounds.max.z,
                )
            }
            FurnitureKind::Table => (table_mesh(bounds.min, bounds.max, slab), bounds.max.z - slab),
        };
        complete.append(&mesh);
        furniture.push(Furniture {
            kind,
            bounds,
            underside,
        });
    }
    Ok(GeneratedScene {
        spec: spec.clone(),
        complete,
        layout,
        furniture,
    })
}

/// Uniform Catmull-Rom interpolation between `p1` (t = 0) and `p2` (t = 1).
pub fn catmull_rom(p0: Vec3, p1: Vec3, p2: Vec3, p3: Vec3, t: f64) -> Vec3 {
    let t2 = t * t;
    let t3 = t2 * t;
    (p1 * 2.0
        + (p2 - p0) * t
        + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2
        + (-p0 + p1 * 3.0 - p2 * 3.0 + p3) * t3)
        * 0.5
}

/// Camera path: positions and look-at targets share one spline parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub positions: Vec<Vec3>,
    pub targets: Vec<Vec3>,
    pub samples_per_segment: usize,
}

impl Trajectory {
    /// Closed loop through `positions`: the control list is wrapped so every
    /// point starts one segment.
    pub fn closed_loop(positions: Vec<Vec3>, targets: Vec<Vec3>, samples_per_segment: usize) -> Self {
        let wrap = |v: &[Vec3]| {
            let n = v.len();
            let mut out = Vec::with_capacity(n + 3);
            if n > 0 {
                out.push(v[n - 1]);
                out.extend_from_slice(v);
                out.push(v[0]);
                out.push(v[1 % n]);
            }
            out
        };
        Trajectory {
            positions: wrap(&positions),
            targets: wrap(&targets),
            samples_per_segment,
        }
    }

    pub fn segment_count(&self) -> usize {
        self.positions.len().saturating_sub(3)
    }

    /// Position and target of sample `k` on segment `seg` (between control points `seg+1`, `seg+2`).
    fn eval(&self, seg: usize, k: usize) -> (Vec3, Vec3) {
        let t = (k as f64 + 0.5) / self.samples_per_segment as f64;
        let p = &self.positions;
        let q = &self.targets;
        (
            catmull_rom(p[seg], p[seg + 1], p[seg + 2], p[seg + 3], t),
            catmull_rom(q[seg], q[seg + 1], q[seg + 2], q[seg + 3], t),
        )
    }
}

/// One pose per sample at `t = (k + 0.5) / samples_per_segment` of every segment.
pub fn sample_trajectory(traj: &Trajectory) -> Result<Vec<Pose>> {
    if traj.positions.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "a trajectory needs at least 4 control points, got {}",
            traj.positions.len()
        )));
    }
    if traj.targets.len() != traj.positions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} positions but {} look-at targets",
            traj.positions.len(),
            traj.targets.len()
        )));
    }
    if traj.samples_per_segment == 0 {
        return Err(Error::InvalidArgument("samples_per_segment must be ≥ 1".into()));
    }
    let mut poses = Vec::with_capacity(traj.segment_count() * traj.samples_per_segment);
    for seg in 0..traj.segment_count() {
        for k in 0..traj.samples_per_segment {
            let (eye, target) = traj.eval(seg, k);
            let pose = Pose::look_at(eye, target).map_err(|e| {
                Error::InvalidArgument(format!("segment {seg}, sample {k}: {e}"))
            })?;
            poses.push(pose);
        }
    }
    Ok(poses)
}

/// Samples the trajectory and rejects positions closer than `clearance` to the
/// scene surface or outside the room interior.
pub fn sample_trajectory_in_scene(
    traj: &Trajectory,
    sdf: &MeshSdf,
    interior: &Aabb,
    clearance: f64,
) -> Result<Vec<Pose>> {
    let poses = sample_trajectory(traj)?;
    let room = interior.padded(-clearance);
    for (i, pose) in poses.iter().enumerate() {
        let p = pose.translation();
        let seg = i / traj.samples_per_segment;
        if !room.contains(p) || sdf.distance(p) < clearance {
            return Err(Error::SceneGen(format!(
                "camera sample {i} on segment {seg} at {p:?} is within {clearance} m of geometry \
                 or outside the room"
            )));
        }
    }
    Ok(poses)
}

/// Loop of eight control points around the room centre, looking inward and down.
pub fn default_trajectory(scene: &GeneratedScene, seed: u64, samples_per_segment: usize) -> Trajectory {
    let spec = &scene.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = Vec3::new(spec.size_x / 2.0, spec.size_y / 2.0, 0.0);
    let radius = 0.3 * spec.size_x.min(spec.size_y);
    let top = (spec.height - CAMERA_CLEARANCE - 0.05).min(2.0);
    let n = 8;
    let mut positions = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for k in 0..n {
        let a = std::f64::consts::TAU * (k as f64 + rng.gen_range(-0.2..0.2)) / n as f64;
        let r = radius * rng.gen_range(0.85..1.15);
        positions.push(Vec3::new(
            c.x + r * a.cos(),
            c.y + r * a.sin(),
            rng.gen_range(1.5..top),
        ));
        targets.push(Vec3::new(
            c.x + rng.gen_range(-0.15..0.15) * spec.size_x,
            c.y + rng.gen_range(-0.15..0.15) * spec.size_y,
            rng.gen_range(0.3..0.6),
        ));
    }
    Trajectory::closed_loop(positions, targets, samples_per_segment)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64, n: usize) -> SceneSpec {
        SceneSpec {
            seed,
            size_x: 5.0,
            size_y: 4.0,
            height: 2.6,
            furniture_count: n,
            kinds: default_kinds(),
            wall_thickness: 0.02,
        }
    }

    #[test]
    fn shell_is_closed_solid() {
        let shell = room_shell(4.0, 3.0, 2.5, 0.02);
        assert!(shell.is_watertight());
        assert_eq!(shell.euler_characteristic(), 2);
        assert!(shell.degenerate_triangles().is_empty());
        let sdf = MeshSdf::new(&shell).unwrap();
        assert!(sdf.distance(Vec3::new(2.0, 1.5, 1.0)) > 0.0);
        assert!(sdf.distance(Vec3::new(2.0, 1.5, -0.01)) < 0.0);
        assert!(sdf.distance(Vec3::new(-0.01, 1.5, 1.0)) < 0.0);
        assert!((sdf.distance(Vec3::new(2.0, 1.5, 0.3)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn empty_room_equals_layout() {
        let s = generate_scene(&spec(1, 0)).unwrap();
        assert_eq!(s.complete, s.layout);
    }

    #[test]
    fn deterministic() {
        let a = generate_scene(&spec(11, 6)).unwrap();
        let b = generate_scene(&spec(11, 6)).unwrap();
        assert_eq!(a.complete, b.complete);
        assert_eq!(a.furniture, b.furniture);
    }

    #[test]
    fn seed_seven_placement() {
        let s = generate_scene(&spec(7, 5)).unwrap();
        assert_eq!(s.furniture.len(), 5);
        let room = s.spec.interior();
        for (i, a) in s.furniture.iter().enumerate() {
            assert!(room.contains_box(&a.bounds));
            assert_eq!(a.bounds.min.z, 0.0);
            for b in &s.furniture[i + 1..] {
                assert!(a.bounds.separation(&b.bounds) >= -0.01);
            }
        }
        assert!(s.complete.is_watertight());
        assert!(s.layout.is_watertight());
    }

    #[test]
    fn contact_faces_exist() {
        let s = generate_scene(&spec(3, 4)).unwrap();
        let sdf = MeshSdf::new(&s.complete).unwrap();
        for f in &s.furniture {
            let c = f.bounds.center();
            // floor point under the item: on the floor surface and on the item's bottom (or leg gap)
            let d = sdf.distance(Vec3::new(c.x, c.y, 0.0));
            assert!(d.abs() < 1e-9, "{d}");
        }
    }

    #[test]
    fn placement_failure_suggests_fewer_items() {
        let mut sp = spec(5, 10);
        sp.size_x = 3.0;
        sp.size_y = 3.0;
        sp.kinds = vec![FurnitureKind::Table];
        let err = generate_scene(&sp).unwrap_err().to_string();
        assert!(err.contains("fewer furniture"), "{err}");
    }

    #[test]
    fn catmull_rom_endpoints_and_linear_precision() {
        let p = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 2.0, 0.5),
            Vec3::new(2.0, 1.0, -1.0),
            Vec3::new(4.0, 0.0, 0.0),
        ];
        assert_eq!(catmull_rom(p[0], p[1], p[2], p[3], 0.0), p[1]);
        assert!(catmull_rom(p[0], p[1], p[2], p[3], 1.0).distance(p[2]) < 1e-15);
        let l: Vec<Vec3> = (0..4).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 1.0)).collect();
        let m = catmull_rom(l[0], l[1], l[2], l[3], 0.5);
        assert!(m.distance((l[1] + l[2]) * 0.5) < 1e-15);
    }

    #[test]
    fn catmull_rom_polynomial_oracle() {
        // expanded by hand for p = (0,0,0),(1,0,0),(2,1,0),(3,1,0):
        // x(t) = 1 + t,  y(t) = 0.5·(t + 3t² − 2t³)
        let p = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 1.0, 0.0),
            Vec3::new(3.0, 1.0, 0.0),
        ];
        let got = catmull_rom(p[0], p[1], p[2], p[3], 0.5);
        assert!((got.x - 1.5).abs() < 1e-15);
        assert!((got.y - 0.5).abs() < 1e-15);
        assert_eq!(got.z, 0.0);
    }

    #[test]
    fn single_sample_is_middle_segment_midpoint() {
        let p: Vec<Vec3> = vec![
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 1.0),
            Vec3::new(2.0, 1.0, 1.0),
            Vec3::new(3.0, 1.0, 1.0),
        ];
        let t = vec![Vec3::new(1.5, 5.0, 0.0); 4];
        let traj = Trajectory {
            positions: p.clone(),
            targets: t,
            samples_per_segment: 1,
        };
        let poses = sample_trajectory(&traj).unwrap();
        assert_eq!(poses.len(), 1);
        let expect = catmull_rom(p[0], p[1], p[2], p[3], 0.5);
        assert!(poses[0].translation().distance(expect) < 1e-15);
        let fwd = (Vec3::new(1.5, 5.0, 0.0) - expect).normalized();
        assert!(poses[0].forward().distance(fwd) < 1e-12);
    }

    #[test]
    fn degenerate_look_at_is_rejected() {
        let p = vec![Vec3::new(1.0, 1.0, 1.0); 4];
        let traj = Trajectory {
            positions: p.clone(),
            targets: p,
            samples_per_segment: 2,
        };
        assert!(sample_trajectory(&traj).is_err());
    }

    #[test]
    fn corridor_forward_axes() {
        let positions: Vec<Vec3> = (0..6).map(|i| Vec3::new(i as f64, 0.0, 1.5)).collect();
        let targets: Vec<Vec3> = (0..6).map(|i| Vec3::new(i as f64 + 10.0, 0.0, 1.5)).collect();
        let traj = Trajectory {
            positions,
            targets,
            samples_per_segment: 4,
        };
        for pose in sample_trajectory(&traj).unwrap() {
            assert!(pose.forward().distance(Vec3::X) < 1e-6);
        }
    }

    #[test]
    fn default_trajectory_is_in_free_space() {
        for seed in 0..5 {
            let s = generate_scene(&SceneSpec::random(seed, 5)).unwrap();
            let sdf = MeshSdf::new(&s.complete).unwrap();
            let traj = default_trajectory(&s, seed, 5);
            let poses = sample_trajectory_in_scene(&traj, &sdf, &s.spec.interior(), CAMERA_CLEARANCE).unwrap();
            assert_eq!(poses.len(), 40);
        }
    }
}
