//! Signed-distance training samples.
//!
//! Two generators: mesh samples (near-surface plus balanced uniform) for training
//! scenes whose complete geometry is known, and truncation-band samples along
//! depth rays for scenes observed only through depth frames.
//!
//! Bank file layout (little-endian): magic `OSSB`, `u32` version, `u64` record
//! count, then per record `3×f32` position, `f32` signed distance, `u8` kind,
//! `u8` visibility (18 bytes).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::fsutil::{read_file, write_atomic};
use crate::geom::{Aabb, MeshSdf, Pose, TriangleMesh, Vec3};
use crate::render::{unproject, DepthFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SampleKind {
    NearSurface = 0,
    UniformFree = 1,
    UniformInterior = 2,
    RayBand = 3,
}

impl SampleKind {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => SampleKind::NearSurface,
            1 => SampleKind::UniformFree,
            2 => SampleKind::UniformInterior,
            3 => SampleKind::RayBand,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Visibility {
    Invisible = 0,
    Visible = 1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub p: Vec3,
    pub d_gt: f64,
    pub kind: SampleKind,
    pub visibility: Visibility,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSampling {
    pub n_near: usize,
    pub n_uniform: usize,
    /// Standard deviation of the normal-direction offset of near-surface samples (m).
    pub sigma_near: f64,
    /// Region for uniform samples.
    pub bounds: Aabb,
}

/// Candidate draws per requested uniform sample before falling back to resampling.
const MAX_UNIFORM_OVERSAMPLING: usize = 20;

/// Area-weighted surface sampler.
#[derive(Debug, Clone)]
pub struct SurfaceSampler<'a> {
    mesh: &'a TriangleMesh,
    cdf: Vec<f64>,
}

impl<'a> SurfaceSampler<'a> {
    pub fn new(mesh: &'a TriangleMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::Geometry("cannot sample an empty mesh".into()));
        }
        let mut acc = 0.0;
        let cdf: Vec<f64> = (0..mesh.triangle_count())
            .map(|i| {
                acc += mesh.triangle_area(i);
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(Error::Geometry("mesh has zero surface area".into()));
        }
        Ok(SurfaceSampler { mesh, cdf })
    }

    /// A uniformly distributed surface point and the index of its triangle.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (Vec3, usize) {
        let total = *self.cdf.last().unwrap();
        let x = rng.gen::<f64>() * total;
        let tri = self.cdf.partition_point(|&c| c <= x).min(self.cdf.len() - 1);
        let [a, b, c] = self.mesh.triangle(tri);
        let (mut r1, mut r2): (f64, f64) = (rng.gen(), rng.gen());
        if r1 + r2 > 1.0 {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        (a + (b - a) * r1 + (c - a) * r2, tri)
    }
}

/// Near-surface points with the offset drawn for each.
pub(crate) fn near_surface_points(
    mesh: &TriangleMesh,
    n: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Vec3, f64)>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let sampler = SurfaceSampler::new(mesh)?;
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidArgument(format!("near-surface sigma {sigma}: {e}")))?;
    Ok((0..n)
        .map(|_| {
            let (p, tri) = sampler.sample(rng);
            let off = normal.sample(rng);
            (p + mesh.face_normal(tri) * off, off)
        })
        .collect())
}

fn uniform_point<R: Rng>(b: &Aabb, rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.gen_range(b.min.x..=b.max.x),
        rng.gen_range(b.min.y..=b.max.y),
        rng.gen_range(b.min.z..=b.max.z),
    )
}

/// Near-surface and sign-balanced uniform samples; all labelled invisible until
/// [`label_visibility`] runs.
pub fn sample_mesh_sdf(sdf: &MeshSdf, mesh: &TriangleMesh, params: &MeshSampling, seed: u64) -> Result<Vec<SdfSample>> {
    if params.n_near + params.n_uniform == 0 {
        return Err(Error::InvalidArgument("at least one sample must be requested".into()));
    }
    if !(params.sigma_near > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "near-surface sigma must be positive, got {}",
            params.sigma_near
        )));
    }
    if params.bounds.is_empty() {
        return Err(Error::InvalidArgument("uniform sampling bounds are empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(params.n_near + params.n_uniform);
    for (p, _) in near_surface_points(mesh, params.n_near, params.sigma_near, &mut rng)? {
        out.push(SdfSample {
            p,
            d_gt: sdf.distance(p),
            kind: SampleKind::NearSurface,
            visibility: Visibility::Invisible,
        });
    }
    if params.n_uniform > 0 {
        out.extend(balanced_uniform(sdf, params.n_uniform, &params.bounds, &mut rng)?);
    }
    Ok(out)
}

/// Exactly `n/2` interior and `n − n/2` exterior samples; a short class is
/// topped up by resampling its own candidates with replacement.
fn balanced_uniform(sdf: &MeshSdf, n: usize, bounds: &Aabb, rng: &mut ChaCha8Rng) -> Result<Vec<SdfSample>> {
    let want_neg = n / 2;
    let want_pos = n - want_neg;
    let mut neg = Vec::with_capacity(want_neg);
    let mut pos = Vec::with_capacity(want_pos);
    let mut drawn = 0;
    while (neg.len() < want_neg || pos.len() < want_pos) && drawn < MAX_UNIFORM_OVERSAMPLING * n {
        let p = uniform_point(bounds, rng);
        drawn += 1;
        let d = sdf.distance(p);
        if d < 0.0 {
            if neg.len() < want_neg {
                neg.push(SdfSample {
                    p,
                    d_gt: d,
                    kind: SampleKind::UniformInterior,
                    visibility: Visibility::Invisible,
                });
            }
        } else if pos.len() < want_pos {
            pos.push(SdfSample {
                p,
                d_gt: d,
                kind: SampleKind::UniformFree,
                visibility: Visibility::Invisible,
            });
        }
    }
    for (class, want, label) in [(&mut neg, want_neg, "interior"), (&mut pos, want_pos, "free-space")] {
        if class.len() < want {
            if class.is_empty() {
                return Err(Error::Data(format!(
                    "no {label} points found among {drawn} uniform candidates; cannot balance signs"
                )));
            }
            log::debug!("resampling {} {label} uniform samples", want - class.len());
            let have = class.len();
            for _ in have..want {
                let s = class[rng.gen_range(0..have)];
                class.push(s);
            }
        }
    }
    neg.extend(pos);
    Ok(neg)
}

/// Marks a sample visible when some frame's depth at its projection lies within
/// `truncation` of the sample's camera-space depth.
pub fn label_visibility(samples: &mut [SdfSample], frames: &[DepthFrame], truncation: f64) {
    let views: Vec<(Pose, &DepthFrame)> = frames.iter().map(|f| (f.pose.inverse(), f)).collect();
    for s in samples.iter_mut() {
        if s.visibility == Visibility::Visible {
            continue;
        }
        if views.iter().any(|(inv, f)| observed(inv, f, s.p, truncation)) {
            s.visibility = Visibility::Visible;
        }
    }
}

#[inline]
fn observed(cam_from_world: &Pose, frame: &DepthFrame, p: Vec3, truncation: f64) -> bool {
    let q = cam_from_world.transform_point(p);
    if q.z <= 0.0 {
        return false;
    }
    let k = &frame.intrinsics;
    let (u, v) = k.project(q);
    let (u, v) = (u.round(), v.round());
    if u < 0.0 || v < 0.0 || u >= k.width as f64 || v >= k.height as f64 {
        return false;
    }
    let d = frame.at(u as u32, v as u32);
    d > 0.0 && (q.z - d as f64).abs() <= truncation
}

/// `per_ray` samples per valid pixel, uniform in ray length over
/// `[s − truncation, s + truncation]` around the observed endpoint `s`.
pub fn ray_band_samples(frame: &DepthFrame, per_ray: usize, truncation: f64, seed: u64) -> Result<Vec<SdfSample>> {
    if !(truncation > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "truncation must be positive, got {truncation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = frame.pose.translation();
    let obs = unproject(frame);
    let mut out = Vec::with_capacity(obs.len() * per_ray);
    for o in obs {
        for _ in 0..per_ray {
            let l = o.ray_length + rng.gen_range(-truncation..=truncation);
            out.push(SdfSample {
                p: origin + o.view_dir * l,
                d_gt: o.ray_length - l,
                kind: SampleKind::RayBand,
                visibility: Visibility::Visible,
            });
        }
    }
    Ok(out)
}

const BANK_MAGIC: &[u8; 4] = b"OSSB";
const BANK_VERSION: u32 = 1;
const RECORD_BYTES: usize = 18;

pub fn encode_bank(samples: &[SdfSample]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + RECORD_BYTES * samples.len());
    out.extend_from_slice(BANK_MAGIC);
    out.extend_from_slice(&BANK_VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        for c in s.p.to_array() {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        out.extend_from_slice(&(s.d_gt as f32).to_le_bytes());
        out.push(s.kind as u8);
        out.push(s.visibility as u8);
    }
    out
}

pub fn decode_bank(bytes: &[u8], name: &str) -> Result<Vec<SdfSample>> {
    if bytes.len() < 16 || &bytes[..4] != BANK_MAGIC {
        return Err(Error::parse(name, "offset 0", "not a sample bank (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != BANK_VERSION {
        return Err(Error::parse(name, "offset 4", format!("unsupported bank version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expect = count
        .checked_mul(RECORD_BYTES)
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| Error::parse(name, "offset 8", "record count overflows"))?;
    if bytes.len() != expect {
        return Err(Error::parse(
            name,
            format!("offset {}", bytes.len().min(expect)),
            format!("header announces {count} records ({expect} bytes) but file has {} bytes", bytes.len()),
        ));
    }
    let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    (0..count)
        .map(|i| {
            let o = 16 + i * RECORD_BYTES;
            let kind = SampleKind::from_u8(bytes[o + 16])
                .ok_or_else(|| Error::parse(name, format!("offset {}", o + 16), "unknown sample kind"))?;
            let visibility = match bytes[o + 17] {
                0 => Visibility::Invisible,
                1 => Visibility::Visible,
                _ => return Err(Error::parse(name, format!("offset {}", o + 17), "bad visibility flag")),
            };
            Ok(SdfSample {
                p: Vec3::new(f(o), f(o + 4), f(o + 8)),
                d_gt: f(o + 12),
                kind,
                visibility,
            })
        })
        .collect()
}

pub fn save_bank(path: &Path, samples: &[SdfSample]) -> Result<()> {
    write_atomic(path, &encode_bank(samples))
}

pub fn load_bank(path: &Path) -> Result<Vec<SdfSample>> {
    decode_bank(&read_file(path)?, &path.display().to_string())
}

/// Fisher-Yates shuffle under a fixed seed.
pub fn shuffle_samples(samples: &mut [SdfSample], seed: u64) {
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}
