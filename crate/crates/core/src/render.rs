//! Pinhole depth rendering by ray casting, plus PFM frame storage.
//!
//! Camera frame: x right, y down, z forward. Pixel `(u, v)` is sampled at its
//! centre with direction `((u − cx)/fx, (v − cy)/fy, 1)`. Stored depth is the
//! camera-space z of the hit (planar depth), `0` meaning no valid return.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read_file, read_string, write_atomic};
use crate::geom::{Bvh, Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square-pixel intrinsics from a horizontal field of view, principal point at the image centre.
    pub fn from_fov(width: u32, height: u32, fov_deg: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image size must be at least 1×1, got {width}×{height}"
            )));
        }
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::InvalidArgument(format!(
                "field of view must lie in (0°, 180°), got {fov_deg}"
            )));
        }
        let fx = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Ok(Intrinsics {
            width,
            height,
            fx,
            fy: fx,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be at least 1×1".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidArgument("principal point must be finite".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Unnormalized camera-space direction through the centre of pixel `(u, v)`.
    #[inline]
    pub fn pixel_direction(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Continuous pixel coordinates of a camera-space point with `z > 0`.
    #[inline]
    pub fn project(&self, p: Vec3) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    pub intrinsics: Intrinsics,
    /// World-from-camera.
    pub pose: Pose,
    /// Row-major, `depth[v * width + u]`.
    pub depth: Vec<f32>,
}

impl DepthFrame {
    #[inline]
    pub fn at(&self, u: u32, v: u32) -> f32 {
        self.depth[v as usize * self.intrinsics.width as usize + u as usize]
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|&&d| d > 0.0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.valid_count() == 0
    }
}

/// Renders planar depth; misses and returns with z beyond `max_range` are 0.
pub fn render_depth(bvh: &Bvh, pose: &Pose, intrinsics: &Intrinsics, max_range: f64) -> Result<DepthFrame> {
    intrinsics.validate()?;
    let origin = pose.translation();
    let mut depth = vec![0f32; intrinsics.pixel_count()];
    for v in 0..intrinsics.height {
        for u in 0..intrinsics.width {
            let d_cam = intrinsics.pixel_direction(u as f64, v as f64);
            let len = d_cam.norm();
            let dir = pose.transform_vector(d_cam / len);
            if let Some(hit) = bvh.ray_cast_unchecked(origin, dir, f64::INFINITY) {
                let z = hit.t / len;
                if z <= max_range {
                    depth[v as usize * intrinsics.width as usize + u as usize] = z as f32;
                }
            }
        }
    }
    Ok(DepthFrame {
        intrinsics: *intrinsics,
        pose: *pose,
        depth,
    })
}

/// A valid pixel lifted to world space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub point: Vec3,
    /// Unit direction from the camera centre towards `point`.
    pub view_dir: Vec3,
    /// Distance from the camera centre to `point` along the ray.
    pub ray_length: f64,
}

pub fn unproject(frame: &DepthFrame) -> Vec<Observation> {
    let k = &frame.intrinsics;
    let origin = frame.pose.translation();
    let mut out = Vec::with_capacity(frame.valid_count());
    for v in 0..k.height {
        for u in 0..k.width {
            let d = frame.at(u, v);
            if d <= 0.0 || !d.is_finite() {
                continue;
            }
            let cam = k.pixel_direction(u as f64, v as f64) * d as f64;
            let point = frame.pose.transform_point(cam);
            let ray = point - origin;
            let ray_length = ray.norm();
            out.push(Observation {
                point,
                view_dir: ray / ray_length,
                ray_length,
            });
        }
    }
    out
}

/// Little-endian greyscale PFM; rows stored bottom to top.
pub fn encode_pfm(width: u32, height: u32, data: &[f32]) -> Vec<u8> {
    let header = format!("Pf\n{width} {height}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + 4 * data.len());
    out.extend_from_slice(header.as_bytes());
    for v in (0..height as usize).rev() {
        for &d in &data[v * width as usize..(v + 1) * width as usize] {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8], name: &str) -> Result<(u32, u32, Vec<f32>)> {
    // three whitespace-terminated header tokens
    let mut tokens = Vec::with_capacity(4);
    let mut pos = 0;
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(name, format!("offset {pos}"), "truncated PFM header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace after the scale
    if tokens[0] != "Pf" {
        return Err(Error::parse(
            name,
            "offset 0",
            format!("expected greyscale PFM magic 'Pf', got {:?}", tokens[0]),
        ));
    }
    let parse_dim = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| Error::parse(name, "header", format!("bad dimension {s:?}")))
    };
    let width = parse_dim(&tokens[1])?;
    let height = parse_dim(&tokens[2])?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::parse(name, "header", format!("bad scale {:?}", tokens[3])))?;
    if scale >= 0.0 {
        return Err(Error::parse(name, "header", "big-endian PFM is not supported"));
    }
    let n = width as usize * height as usize;
    if bytes.len() < pos + 4 * n {
        return Err(Error::parse(
            name,
            format!("offset {}", bytes.len()),
            format!("expected {} bytes of raster data", 4 * n),
        ));
    }
    let mut data = vec![0f32; n];
    for row in 0..height as usize {
        let v = height as usize - 1 - row;
        for u in 0..width as usize {
            let o = pos + 4 * (row * width as usize + u);
            data[v * width as usize + u] = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        }
    }
    Ok((width, height, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameMeta {
    intrinsics: Intrinsics,
    pose: Pose,
    max_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub depth: String,
    pub meta: String,
}

/// Lists the frames of one scene in capture order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameManifest {
    pub scene: String,
    pub frame_count: usize,
    pub frames: Vec<FrameEntry>,
}

pub const MANIFEST_FILE: &str = "frames.toml";

/// Writes `frame_NNNN.pfm` + `frame_NNNN.toml` per frame and a manifest into `dir`.
pub fn write_frames(dir: &Path, scene: &str, frames: &[DepthFrame], max_range: f64) -> Result<()> {
    let mut entries = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let depth = format!("frame_{i:04}.pfm");
        let meta = format!("frame_{i:04}.toml");
        write_atomic(
            &dir.join(&depth),
            &encode_pfm(f.intrinsics.width, f.intrinsics.height, &f.depth),
        )?;
        let record = FrameMeta {
            intrinsics: f.intrinsics,
            pose: f.pose,
            max_range,
        };
        write_atomic(&dir.join(&meta), to_toml(&record)?.as_bytes())?;
        entries.push(FrameEntry { depth, meta });
    }
    let manifest = FrameManifest {
        scene: scene.to_string(),
        frame_count: frames.len(),
        frames: entries,
    };
    write_atomic(&dir.join(MANIFEST_FILE), to_toml(&manifest)?.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<FrameManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = read_string(&path)?;
    let m: FrameManifest = toml::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), "manifest", e.to_string()))?;
    if m.frame_count != m.frames.len() {
        return Err(Error::Data(format!(
            "{}: frame_count {} but {} entries",
            path.display(),
            m.frame_count,
            m.frames.len()
        )));
    }
    Ok(m)
}

pub fn read_frames(dir: &Path) -> Result<Vec<DepthFrame>> {
    let manifest = read_manifest(dir)?;
    manifest
        .frames
        .iter()
        .map(|e| {
            let meta_path: PathBuf = dir.join(&e.meta);
            let meta: FrameMeta = toml::from_str(&read_string(&meta_path)?).map_err(|err| {
                Error::parse(meta_path.display().to_string(), "frame record", err.to_string())
            })?;
            let depth_path = dir.join(&e.depth);
            let (w, h, depth) = decode_pfm(&read_file(&depth_path)?, &depth_path.display().to_string())?;
            if w != meta.intrinsics.width || h != meta.intrinsics.height {
                return Err(Error::Data(format!(
                    "{}: raster is {w}×{h} but intrinsics say {}×{}",
                    depth_path.display(),
                    meta.intrinsics.width,
                    meta.intrinsics.height
                )));
            }
            Ok(DepthFrame {
                intrinsics: meta.intrinsics,
                pose: meta.pose,
                depth,
            })
        })
        .collect()
}

pub(crate) fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(format!("serialization failed: {e}")))
}
