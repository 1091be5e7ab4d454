//! Run configuration: every tunable of the toolkit in one TOML document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read_string, write_atomic};
use crate::nn::{LossWeights, MlpArch, PositionalEncoding};
use crate::octree::OctreeLayout;
use crate::pipeline::{OptimizeParams, TrainSchedule};
use crate::scenegen::FurnitureKind;

/// File name of the resolved configuration written into output directories.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenesConfig {
    /// Number of training rooms; one further room is held out for testing.
    pub train_count: usize,
    pub furniture_count: usize,
    pub kinds: Vec<FurnitureKind>,
    /// Range of interior extents along x and y (m).
    pub room_min: f64,
    pub room_max: f64,
    pub height_min: f64,
    pub height_max: f64,
    pub wall_thickness: f64,
    /// Frames per trajectory segment; the loop has 8 segments.
    pub frames_per_segment: usize,
    /// Held-out rooms must contain at least this many tables.
    pub test_min_tables: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    pub max_range: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OctreeConfig {
    pub voxel_size: f64,
    pub levels: u32,
    pub split: u32,
    pub feature_dim: usize,
    /// Padding between the observed points and the cube's minimum corner (m).
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplesConfig {
    pub truncation: f64,
    pub n_near: usize,
    pub n_uniform: usize,
    pub sigma_near: f64,
    pub band_per_ray: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub skip_at: Option<usize>,
    pub weight_norm: bool,
    pub dropout: f64,
}

impl DecoderConfig {
    pub fn arch(&self, input_dim: usize) -> MlpArch {
        MlpArch {
            input_dim,
            hidden: self.hidden,
            layers: self.layers,
            skip_at: self.skip_at,
            weight_norm: self.weight_norm,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractConfig {
    pub grid_res: f64,
    pub alpha: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub samples: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenes: ScenesConfig,
    pub camera: CameraConfig,
    pub octree: OctreeConfig,
    pub samples: SamplesConfig,
    pub encoding: PositionalEncoding,
    pub loss: LossWeights,
    pub inpainter: DecoderConfig,
    pub geo: DecoderConfig,
    pub train: TrainSchedule,
    pub optimize: OptimizeParams,
    pub extract: ExtractConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::desk()
    }
}

impl RunConfig {
    /// Desk-scale defaults: small rooms, 4 cm voxels, narrow decoders.
    pub fn desk() -> Self {
        let seed = 7;
        RunConfig {
            seed,
            scenes: ScenesConfig {
                train_count: 4,
                furniture_count: 6,
                kinds: vec![FurnitureKind::Box, FurnitureKind::Prism, FurnitureKind::Table],
                room_min: 3.0,
                room_max: 4.0,
                height_min: 2.4,
                height_max: 2.7,
                wall_thickness: 0.15,
                frames_per_segment: 5,
                test_min_tables: 1,
            },
            camera: CameraConfig {
                width: 160,
                height: 120,
                fov_deg: 90.0,
                max_range: 12.0,
            },
            octree: OctreeConfig {
                voxel_size: 0.04,
                levels: 7,
                split: 3,
                feature_dim: 12,
                margin: 0.1,
            },
            samples: SamplesConfig {
                truncation: 0.1,
                n_near: 60_000,
                n_uniform: 60_000,
                sigma_near: 0.025,
                band_per_ray: 1,
            },
            encoding: PositionalEncoding::default(),
            loss: LossWeights {
                sigma: 0.025,
                lambda_eik: 0.1,
                lambda_smooth: 0.005,
                fd_h: 0.01,
                eps_mag: 0.01,
            },
            inpainter: DecoderConfig {
                hidden: 64,
                layers: 8,
                skip_at: Some(4),
                weight_norm: true,
                dropout: 0.3,
            },
            geo: DecoderConfig {
                hidden: 64,
                layers: 4,
                skip_at: None,
                weight_norm: false,
                dropout: 0.0,
            },
            train: TrainSchedule {
                epochs: 20,
                iterations_per_scene: 100,
                batch_size: 1024,
                reg_samples: 128,
                inpainter_lr: 1e-3,
                feature_lr: 1e-3,
                feature_decay: 0.5,
                seed,
            },
            optimize: OptimizeParams {
                iters: 3000,
                batch_size: 1024,
                reg_samples: 128,
                geo_lr: 1e-2,
                feature_lr: 1e-3,
                feature_decay: 0.5,
                seed,
            },
            extract: ExtractConfig {
                grid_res: 0.02,
                alpha: 2,
            },
            eval: EvalConfig {
                samples: 100_000,
                threshold: 0.025,
            },
        }
    }

    /// Full-resolution settings (2 cm voxels, L = 9, j = 4, 1024×768 at 120°,
    /// 128/256-wide decoders, 1 cm extraction). Far beyond a desktop CPU budget.
    pub fn large() -> Self {
        let mut c = RunConfig::desk();
        c.scenes.room_min = 3.0;
        c.scenes.room_max = 8.0;
        c.scenes.height_max = 3.0;
        c.camera = CameraConfig {
            width: 1024,
            height: 768,
            fov_deg: 120.0,
            max_range: 20.0,
        };
        c.octree.voxel_size = 0.02;
        c.octree.levels = 9;
        c.octree.split = 4;
        c.samples.n_near = 8_000_000;
        c.samples.n_uniform = 8_000_000;
        c.inpainter.hidden = 256;
        c.geo.hidden = 128;
        c.train.batch_size = 4096;
        c.train.reg_samples = 4096;
        c.optimize.batch_size = 4096;
        c.optimize.reg_samples = 4096;
        c.optimize.iters = 10_000;
        c.extract.grid_res = 0.01;
        c.extract.alpha = 3;
        c.loss.fd_h = 0.005;
        c
    }

    /// Tiny settings for smoke tests.
    pub fn toy() -> Self {
        let mut c = RunConfig::desk();
        c.scenes.train_count = 2;
        c.scenes.furniture_count = 3;
        c.scenes.frames_per_segment = 1;
        c.camera.width = 48;
        c.camera.height = 36;
        c.samples.n_near = 2000;
        c.samples.n_uniform = 2000;
        c.encoding.bands = 2;
        c.inpainter.hidden = 16;
        c.geo.hidden = 16;
        c.train.epochs = 1;
        c.train.iterations_per_scene = 100;
        c.train.batch_size = 64;
        c.train.reg_samples = 8;
        c.optimize.iters = 20;
        c.optimize.batch_size = 64;
        c.optimize.reg_samples = 8;
        c.extract.grid_res = 0.08;
        c.eval.samples = 2000;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "large" => Ok(RunConfig::large()),
            "toy" => Ok(RunConfig::toy()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected desk, large or toy)"))),
        }
    }

    pub fn layout_for(&self, origin: crate::geom::Vec3) -> OctreeLayout {
        OctreeLayout {
            origin,
            voxel_size: self.octree.voxel_size,
            levels: self.octree.levels,
            split: self.octree.split,
            feature_dim: self.octree.feature_dim,
        }
    }

    pub fn inpainter_arch(&self) -> MlpArch {
        let coarse = (self.octree.split as usize + 1) * self.octree.feature_dim;
        self.inpainter.arch(self.encoding.width() + coarse)
    }

    pub fn geo_arch(&self) -> MlpArch {
        let fine = (self.octree.levels - self.octree.split) as usize * self.octree.feature_dim;
        self.geo.arch(self.encoding.width() + fine)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        let s = &self.scenes;
        if !(3.0 <= s.room_min && s.room_min <= s.room_max && s.room_max <= 8.0) {
            return Err(Error::Config(format!("room extent range [{}, {}] outside [3, 8] m", s.room_min, s.room_max)));
        }
        if !(2.4 <= s.height_min && s.height_min <= s.height_max && s.height_max <= 3.0) {
            return Err(Error::Config(format!(
                "room height range [{}, {}] outside [2.4, 3] m",
                s.height_min, s.height_max
            )));
        }
        if s.frames_per_segment == 0 || s.train_count == 0 {
            return Err(Error::Config("need at least one training room and one frame per segment".into()));
        }
        if s.test_min_tables > s.furniture_count
            || (s.test_min_tables > 0 && !s.kinds.contains(&FurnitureKind::Table))
        {
            return Err(Error::Config("held-out table requirement cannot be met by the furniture mix".into()));
        }
        crate::render::Intrinsics::from_fov(self.camera.width, self.camera.height, self.camera.fov_deg).map_err(cfg)?;
        if !(self.camera.max_range > 0.0) {
            return Err(Error::Config("camera max_range must be positive".into()));
        }
        self.layout_for(crate::geom::Vec3::ZERO).validate().map_err(cfg)?;
        if !(self.octree.margin >= 0.0) {
            return Err(Error::Config("octree margin must be non-negative".into()));
        }
        let sm = &self.samples;
        if !(sm.truncation > 0.0 && sm.sigma_near > 0.0) || sm.n_near + sm.n_uniform == 0 || sm.band_per_ray == 0 {
            return Err(Error::Config(format!("invalid sample settings {sm:?}")));
        }
        self.loss.validate().map_err(cfg)?;
        self.inpainter_arch().validate().map_err(cfg)?;
        self.geo_arch().validate().map_err(cfg)?;
        self.train.validate().map_err(cfg)?;
        let o = &self.optimize;
        if o.batch_size == 0 || !(o.geo_lr > 0.0 && o.feature_lr > 0.0 && o.feature_decay > 0.0) {
            return Err(Error::Config(format!("invalid optimization settings {o:?}")));
        }
        if !(self.extract.grid_res > 0.0) {
            return Err(Error::Config("grid_res must be positive".into()));
        }
        if self.eval.samples == 0 || !(self.eval.threshold > 0.0) {
            return Err(Error::Config("evaluation needs samples ≥ 1 and a positive threshold".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_string(path)?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Writes the resolved config, stamped with the toolkit version, into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let text = format!("# occsurf {}\n{}", crate::VERSION, self.to_toml());
        write_atomic(&dir.join(CONFIG_FILE), text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in ["desk", "large", "toy"] {
            let c = RunConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        }
        assert!(RunConfig::preset("huge").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::desk().to_toml();
        text = text.replacen("seed = 7", "seed = 7\nbogus = 1", 1);
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn architecture_widths() {
        let c = RunConfig::desk();
        assert_eq!(c.inpainter_arch().input_dim, 39 + 4 * 12);
        assert_eq!(c.geo_arch().input_dim, 39 + 4 * 12);
        let p = RunConfig::large();
        assert_eq!(p.inpainter_arch().input_dim, 39 + 5 * 12);
        assert_eq!(p.geo_arch().input_dim, 39 + 5 * 12);
    }
}
