//! Signed distance to a watertight triangle mesh.

use super::bvh::Bvh;
use super::mesh::TriangleMesh;
use super::vec::Vec3;
use crate::error::{Error, Result};

/// Fixed, deliberately irrational-looking directions so parity rays avoid
/// running along axis-aligned faces and edges of procedural geometry.
#[allow(clippy::approx_constant)]
const PARITY_DIRS: [[f64; 3]; 3] = [
    [0.577_215_664_9, 0.618_033_988_7, 0.533_969_214_1],
    [-0.707_106_781_1, 0.301_029_995_6, 0.639_658_228_5],
    [0.141_421_356_2, -0.866_025_403_7, -0.479_425_538_6],
];

fn parity_dirs() -> [Vec3; 3] {
    PARITY_DIRS.map(|d| Vec3::from_array(d).normalized())
}

/// Inside test by majority vote of crossing parity along three directions.
pub fn is_inside(bvh: &Bvh, p: Vec3) -> Result<bool> {
    if !bvh.is_watertight() {
        return Err(Error::Geometry(
            "signed distance requires a watertight mesh (inside/outside undefined)".into(),
        ));
    }
    Ok(inside_unchecked(bvh, p))
}

fn inside_unchecked(bvh: &Bvh, p: Vec3) -> bool {
    let votes = parity_dirs()
        .iter()
        .filter(|&&d| bvh.count_crossings(p, d) % 2 == 1)
        .count();
    votes >= 2
}

/// Signed distance from `p` to the surface: negative inside, positive outside.
pub fn signed_distance(bvh: &Bvh, p: Vec3) -> Result<f64> {
    if !bvh.is_watertight() {
        return Err(Error::Geometry(
            "signed distance requires a watertight mesh (inside/outside undefined)".into(),
        ));
    }
    Ok(signed_distance_unchecked(bvh, p))
}

fn signed_distance_unchecked(bvh: &Bvh, p: Vec3) -> f64 {
    let d = bvh.closest_point(p).distance;
    if inside_unchecked(bvh, p) {
        -d
    } else {
        d
    }
}

/// A BVH over a mesh already verified to be watertight.
#[derive(Debug, Clone)]
pub struct MeshSdf {
    bvh: Bvh,
}

impl MeshSdf {
    pub fn new(mesh: &TriangleMesh) -> Result<Self> {
        let bvh = Bvh::build(mesh)?;
        Self::from_bvh(bvh)
    }

    pub fn from_bvh(bvh: Bvh) -> Result<Self> {
        if !bvh.is_watertight() {
            return Err(Error::Geometry(
                "signed distance requires a watertight mesh (inside/outside undefined)".into(),
            ));
        }
        Ok(MeshSdf { bvh })
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    pub fn distance(&self, p: Vec3) -> f64 {
        signed_distance_unchecked(&self.bvh, p)
    }

    pub fn is_inside(&self, p: Vec3) -> bool {
        inside_unchecked(&self.bvh, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_cube_values() {
        let cube = TriangleMesh::cuboid(Vec3::splat(-0.5), Vec3::splat(0.5));
        let bvh = Bvh::build(&cube).unwrap();
        assert!((signed_distance(&bvh, Vec3::ZERO).unwrap() + 0.5).abs() < 1e-9);
        assert!((signed_distance(&bvh, Vec3::new(2.0, 0.0, 0.0)).unwrap() - 1.5).abs() < 1e-9);
    }

    #[test]
    fn open_mesh_is_rejected() {
        let mesh = TriangleMesh::new(
            vec![Vec3::ZERO, Vec3::X, Vec3::Y],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let bvh = Bvh::build(&mesh).unwrap();
        assert!(signed_distance(&bvh, Vec3::Z).is_err());
        assert!(MeshSdf::new(&mesh).is_err());
    }

    #[test]
    fn matches_analytic_sphere() {
        let r = 1.0;
        let sdf = MeshSdf::new(&TriangleMesh::icosphere(Vec3::ZERO, r, 4)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = Vec3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let expect = p.norm() - r;
            let got = sdf.distance(p);
            assert!((got - expect).abs() <= 2e-3 * r, "p={p:?} got {got} expect {expect}");
        }
    }

    #[test]
    fn touching_solids_keep_parity() {
        // box resting on a slab: coplanar contact faces
        let mut mesh = TriangleMesh::cuboid(Vec3::new(-2.0, -2.0, -0.1), Vec3::new(2.0, 2.0, 0.0));
        mesh.append(&TriangleMesh::cuboid(Vec3::new(-0.5, -0.5, 0.0), Vec3::new(0.5, 0.5, 1.0)));
        let sdf = MeshSdf::new(&mesh).unwrap();
        assert!(sdf.distance(Vec3::new(0.0, 0.0, 0.5)) < 0.0);
        assert!(sdf.distance(Vec3::new(0.0, 0.0, -0.05)) < 0.0);
        assert!(sdf.distance(Vec3::new(1.0, 1.0, 0.5)) > 0.0);
        assert!(sdf.distance(Vec3::new(0.0, 0.0, -0.5)) > 0.0);
    }
}
