//! Desk-scale experiment: synthetic rooms through inpainter training,
//! test-time optimization, extraction and evaluation. Each stage is a plain
//! function so the command-line front end can run them one at a time.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{coverage, metrics_csv, metrics_from_samples, sample_surface, KdTree, MetricsReport};
use crate::fsutil::{read_string, write_atomic};
use crate::geom::io::{load_mesh, save_mesh};
use crate::geom::{Aabb, Bvh, MeshSdf, TriangleMesh, Vec3};
use crate::nn::{DecoderMeta, FeatureStack, Field, Mlp};
use crate::octree::OctreeFeatureVolume;
use crate::pipeline::{
    marching_cubes, optimize_scene, routed_sdf, routed_sdf_pair, train_inpainter, OptimizeRecord, RouteCounts,
    Routing, SdfGrid, TrainReport, TrainingScene,
};
use crate::render::{render_depth, unproject, write_frames, DepthFrame, Intrinsics};
use crate::samples::{label_visibility, ray_band_samples, sample_mesh_sdf, MeshSampling, SdfSample, SurfaceSampler};
use crate::scenegen::{
    default_trajectory, generate_scene, sample_trajectory, sample_trajectory_in_scene, Furniture, FurnitureKind,
    GeneratedScene, SceneSpec, Trajectory, CAMERA_CLEARANCE,
};

pub const SCENE_FILE: &str = "scene.toml";
pub const GT_MESH_FILE: &str = "complete.ply";
pub const LAYOUT_MESH_FILE: &str = "layout.ply";
pub const FRAMES_DIR: &str = "frames";
pub const SAMPLES_FILE: &str = "samples.bin";
pub const BAND_FILE: &str = "band.bin";
pub const INPAINTER_FILE: &str = "inpainter.bin";
pub const SCHEDULE_FILE: &str = "schedule.cfg";
pub const LOSS_FILE: &str = "loss.csv";

pub fn geo_file(scene: &str) -> String {
    format!("geo_{scene}.bin")
}

pub fn volume_file(scene: &str) -> String {
    format!("volume_{scene}.bin")
}

/// Offset of the evaluation crop beyond the room interior (m).
pub const EVAL_CROP_PAD: f64 = 0.01;
/// Step along the face normal used to decide whether a surface point borders free space (m).
pub const EXPOSURE_STEP: f64 = 0.005;

/// SplitMix64 finalizer; derives independent stage seeds from the run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

mod stream {
    pub const SCENE: u64 = 1;
    pub const TRAJECTORY: u64 = 2;
    pub const SAMPLES: u64 = 3;
    pub const BAND: u64 = 4;
    pub const VOLUME: u64 = 5;
    pub const INPAINTER: u64 = 6;
    pub const GEO: u64 = 7;
    pub const EVAL: u64 = 8;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneRole {
    Train,
    Test,
}

/// Everything needed to regenerate and re-render one synthetic room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub name: String,
    pub role: SceneRole,
    pub spec: SceneSpec,
    pub trajectory: Trajectory,
    pub furniture: Vec<Furniture>,
}

impl SceneRecord {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(format!("scene record: {e}")))?;
        write_atomic(&dir.join(SCENE_FILE), text.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SCENE_FILE);
        let text = read_string(&path)?;
        toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub record: SceneRecord,
    pub scene: GeneratedScene,
}

const SCENE_ATTEMPTS: u64 = 64;

fn table_count(scene: &GeneratedScene) -> usize {
    scene.furniture.iter().filter(|f| f.kind == FurnitureKind::Table).count()
}

/// One room whose furniture placement and camera loop both succeed; retries
/// with fresh seeds otherwise.
pub fn synthesize_scene(cfg: &RunConfig, name: &str, role: SceneRole, index: u64) -> Result<SynthScene> {
    let sc = &cfg.scenes;
    for attempt in 0..SCENE_ATTEMPTS {
        // stored in TOML, whose integers are signed
        let seed = derive_seed(cfg.seed, stream::SCENE + 16 * (index * SCENE_ATTEMPTS + attempt)) >> 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = SceneSpec {
            seed,
            size_x: rng.gen_range(sc.room_min..=sc.room_max),
            size_y: rng.gen_range(sc.room_min..=sc.room_max),
            height: rng.gen_range(sc.height_min..=sc.height_max),
            furniture_count: sc.furniture_count,
            kinds: sc.kinds.clone(),
            wall_thickness: sc.wall_thickness,
        };
        let scene = match generate_scene(&spec) {
            Ok(s) => s,
            Err(Error::SceneGen(msg)) => {
                log::debug!("{name}: attempt {attempt}: {msg}");
                continue;
            }
            Err(e) => return Err(e),
        };
        if role == SceneRole::Test && table_count(&scene) < sc.test_min_tables {
            continue;
        }
        let trajectory = default_trajectory(&scene, derive_seed(seed, stream::TRAJECTORY), sc.frames_per_segment);
        let sdf = MeshSdf::new(&scene.complete)?;
        if let Err(e) = sample_trajectory_in_scene(&trajectory, &sdf, &spec.interior(), CAMERA_CLEARANCE) {
            log::debug!("{name}: attempt {attempt}: {e}");
            continue;
        }
        return Ok(SynthScene {
            record: SceneRecord {
                name: name.to_string(),
                role,
                spec,
                trajectory,
                furniture: scene.furniture.clone(),
            },
            scene,
        });
    }
    Err(Error::SceneGen(format!(
        "{name}: no valid room after {SCENE_ATTEMPTS} attempts; relax the furniture count or room size"
    )))
}

/// Training rooms `train_00..` followed by one held-out room `test_00`.
pub fn synthesize_scenes(cfg: &RunConfig) -> Result<Vec<SynthScene>> {
    let mut out = Vec::with_capacity(cfg.scenes.train_count + 1);
    for i in 0..cfg.scenes.train_count {
        out.push(synthesize_scene(cfg, &format!("train_{i:02}"), SceneRole::Train, i as u64)?);
    }
    out.push(synthesize_scene(cfg, "test_00", SceneRole::Test, 1000)?);
    Ok(out)
}

/// Rebuilds the geometry of a stored room and checks it against the record.
pub fn regenerate(record: &SceneRecord) -> Result<GeneratedScene> {
    let scene = generate_scene(&record.spec)?;
    if scene.furniture != record.furniture {
        return Err(Error::Data(format!(
            "scene {}: regenerated furniture differs from the stored record",
            record.name
        )));
    }
    Ok(scene)
}

pub fn write_scene_dir(dir: &Path, synth: &SynthScene) -> Result<()> {
    synth.record.save(dir)?;
    save_mesh(&synth.scene.complete, &dir.join(GT_MESH_FILE))?;
    save_mesh(&synth.scene.layout, &dir.join(LAYOUT_MESH_FILE))
}

pub fn render_frames(cfg: &RunConfig, scene: &GeneratedScene, trajectory: &Trajectory) -> Result<Vec<DepthFrame>> {
    let bvh = Bvh::build(&scene.complete)?;
    let intr = Intrinsics::from_fov(cfg.camera.width, cfg.camera.height, cfg.camera.fov_deg)?;
    sample_trajectory(trajectory)?
        .iter()
        .map(|pose| render_depth(&bvh, pose, &intr, cfg.camera.max_range))
        .collect()
}

pub fn observed_points(frames: &[DepthFrame]) -> Vec<Vec3> {
    frames.iter().flat_map(|f| unproject(f).into_iter().map(|o| o.point)).collect()
}

/// Octree over all observed points, its cube anchored `margin` below their minimum.
pub fn build_volume(cfg: &RunConfig, frames: &[DepthFrame], seed: u64) -> Result<OctreeFeatureVolume> {
    let points = observed_points(frames);
    if points.is_empty() {
        return Err(Error::Data("no valid depth observations".into()));
    }
    let b = Aabb::from_points(points.iter());
    let layout = cfg.layout_for(b.min - Vec3::splat(cfg.octree.margin));
    let needed = b.extent().max_element() + cfg.octree.margin;
    if needed >= layout.side() {
        return Err(Error::Config(format!(
            "observed extent {needed:.2} m does not fit the octree cube of side {:.2} m; \
             raise octree.levels or octree.voxel_size",
            layout.side()
        )));
    }
    OctreeFeatureVolume::build(&points, layout, derive_seed(seed, stream::VOLUME))
}

/// Complete-mesh SDF samples, labelled visible where some frame observed them.
pub fn training_bank(cfg: &RunConfig, scene: &GeneratedScene, frames: &[DepthFrame], seed: u64) -> Result<Vec<SdfSample>> {
    let sdf = MeshSdf::new(&scene.complete)?;
    let params = MeshSampling {
        n_near: cfg.samples.n_near,
        n_uniform: cfg.samples.n_uniform,
        sigma_near: cfg.samples.sigma_near,
        bounds: scene.complete.bounds(),
    };
    let mut bank = sample_mesh_sdf(&sdf, &scene.complete, &params, derive_seed(seed, stream::SAMPLES))?;
    label_visibility(&mut bank, frames, cfg.samples.truncation);
    Ok(bank)
}

/// Ray-band samples from every frame.
pub fn band_bank(cfg: &RunConfig, frames: &[DepthFrame], seed: u64) -> Result<Vec<SdfSample>> {
    let base = derive_seed(seed, stream::BAND);
    let mut out = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        out.extend(ray_band_samples(
            f,
            cfg.samples.band_per_ray,
            cfg.samples.truncation,
            derive_seed(base, i as u64),
        )?);
    }
    Ok(out)
}

pub fn decoder_meta(cfg: &RunConfig, role: &str) -> DecoderMeta {
    DecoderMeta {
        role: role.to_string(),
        bands: cfg.encoding.bands,
        include_input: cfg.encoding.include_input,
        feature_dim: cfg.octree.feature_dim,
        levels: cfg.octree.levels,
        split: cfg.octree.split,
    }
}

/// Checks a loaded decoder against the configuration it will run under.
pub fn check_decoder(cfg: &RunConfig, mlp: &Mlp, meta: &DecoderMeta, role: &str) -> Result<()> {
    let expected = decoder_meta(cfg, role);
    let arch = if role == "inpainter" {
        cfg.inpainter_arch()
    } else {
        cfg.geo_arch()
    };
    if *meta != expected || *mlp.arch() != arch {
        return Err(Error::Data(format!(
            "{role} checkpoint does not match the configuration (checkpoint {meta:?}, expected {expected:?})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRecord {
    schedule: crate::pipeline::TrainSchedule,
    loss: crate::nn::LossWeights,
    feature_lrs: Vec<(u32, f64)>,
    scenes: Vec<String>,
}

/// `loss.csv`: `#` metadata lines, then one row per optimizer step.
pub fn loss_csv(report: &TrainReport, names: &[String], iterations_per_scene: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# iterations_per_scene,{iterations_per_scene}");
    let _ = writeln!(s, "# scenes,{}", names.join(";"));
    for (level, lr) in &report.feature_lrs {
        let _ = writeln!(s, "# feature_lr,{level},{lr:e}");
    }
    s.push_str("step,bce,eik,smooth,total,scene,visit\n");
    for r in &report.steps {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{},{}",
            r.step, r.stats.bce, r.stats.eik, r.stats.smooth, r.stats.total, names[r.scene], r.visit
        );
    }
    s
}

/// Trains the inpainter and writes `inpainter.bin`, the training volumes,
/// `schedule.cfg` and `loss.csv` into `ckpt`. Returns the decoder as stored.
pub fn train_stage(cfg: &RunConfig, scenes: &mut [TrainingScene], ckpt: &Path) -> Result<(Mlp, TrainReport)> {
    crate::fsutil::create_dir(ckpt)?;
    let mut inpainter = Mlp::new(cfg.inpainter_arch(), derive_seed(cfg.seed, stream::INPAINTER))?;
    let t0 = Instant::now();
    let report = train_inpainter(&mut inpainter, cfg.encoding, scenes, &cfg.train, &cfg.loss, |_, _, _| Ok(()))?;
    log::info!("trained inpainter: {} steps in {:.1}s", report.steps.len(), t0.elapsed().as_secs_f64());
    let meta = decoder_meta(cfg, "inpainter");
    let bytes = inpainter.encode(&meta);
    write_atomic(&ckpt.join(INPAINTER_FILE), &bytes)?;
    for s in scenes.iter() {
        s.volume.save(&ckpt.join(volume_file(&s.name)))?;
    }
    let names: Vec<String> = scenes.iter().map(|s| s.name.clone()).collect();
    let record = ScheduleRecord {
        schedule: cfg.train,
        loss: cfg.loss,
        feature_lrs: report.feature_lrs.clone(),
        scenes: names.clone(),
    };
    let text = toml::to_string(&record).map_err(|e| Error::Config(format!("schedule record: {e}")))?;
    write_atomic(&ckpt.join(SCHEDULE_FILE), text.as_bytes())?;
    write_atomic(
        &ckpt.join(LOSS_FILE),
        loss_csv(&report, &names, cfg.train.iterations_per_scene).as_bytes(),
    )?;
    cfg.write_resolved(ckpt)?;
    let (stored, _) = Mlp::decode(&bytes, INPAINTER_FILE)?;
    Ok((stored, report))
}

pub fn load_inpainter(cfg: &RunConfig, ckpt: &Path) -> Result<Mlp> {
    let path = ckpt.join(INPAINTER_FILE);
    if !path.exists() {
        return Err(Error::Data(format!("missing inpainter checkpoint {}", path.display())));
    }
    let (mlp, meta) = Mlp::load(&path)?;
    check_decoder(cfg, &mlp, &meta, "inpainter")?;
    Ok(mlp)
}

fn optimize_csv(log: &[OptimizeRecord]) -> String {
    let mut s = String::from("step,geo_bce,geo_total,inpainter_bce,inpainter_total\n");
    for r in log {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e}",
            r.step, r.geo.bce, r.geo.total, r.inpainter.bce, r.inpainter.total
        );
    }
    s
}

/// Test-time optimization of one scene from its frames. Writes
/// `geo_<name>.bin`, `volume_<name>.bin` and `optimize_<name>.csv` into `ckpt`
/// and returns the volume and decoder as stored.
pub fn optimize_stage(
    cfg: &RunConfig,
    name: &str,
    frames: &[DepthFrame],
    band: &[SdfSample],
    inpainter: &Mlp,
    ckpt: &Path,
    seed: u64,
) -> Result<(OctreeFeatureVolume, Mlp)> {
    crate::fsutil::create_dir(ckpt)?;
    let mut volume = build_volume(cfg, frames, seed)?;
    let mut geo = Mlp::new(cfg.geo_arch(), derive_seed(seed, stream::GEO))?;
    let mut params = cfg.optimize;
    params.seed = derive_seed(params.seed, seed);
    let t0 = Instant::now();
    let log = optimize_scene(&mut volume, &mut geo, inpainter, cfg.encoding, band, &cfg.loss, &params)?;
    log::info!(
        "optimized {name}: {} band samples, {} steps in {:.1}s, final geo loss {:.5}",
        band.len(),
        log.len(),
        t0.elapsed().as_secs_f64(),
        log.last().map_or(f64::NAN, |r| r.geo.total)
    );
    let geo_bytes = geo.encode(&decoder_meta(cfg, "geo"));
    let vol_bytes = volume.encode();
    write_atomic(&ckpt.join(geo_file(name)), &geo_bytes)?;
    write_atomic(&ckpt.join(volume_file(name)), &vol_bytes)?;
    write_atomic(&ckpt.join(format!("optimize_{name}.csv")), optimize_csv(&log).as_bytes())?;
    cfg.write_resolved(ckpt)?;
    Ok((
        OctreeFeatureVolume::decode(&vol_bytes, &volume_file(name))?,
        Mlp::decode(&geo_bytes, &geo_file(name))?.0,
    ))
}

/// Loads the optimized state of `name`; a missing geometry decoder is reported
/// as such so out-of-order runs fail clearly.
pub fn load_optimized(cfg: &RunConfig, name: &str, ckpt: &Path) -> Result<(OctreeFeatureVolume, Mlp)> {
    let geo_path = ckpt.join(geo_file(name));
    if !geo_path.exists() {
        return Err(Error::Data(format!(
            "missing geo checkpoint {} (run optimize first)",
            geo_path.display()
        )));
    }
    let (geo, meta) = Mlp::load(&geo_path)?;
    check_decoder(cfg, &geo, &meta, "geo")?;
    let volume = OctreeFeatureVolume::load(&ckpt.join(volume_file(name)))?;
    Ok((volume, geo))
}

/// Box around the occupied nodes of the last coarse level: the region where
/// the inpainter has input and can complete unobserved surfaces.
pub fn extraction_bounds(volume: &OctreeFeatureVolume) -> Result<Aabb> {
    let l = volume.layout();
    let nodes = volume.nodes(l.split);
    if nodes.is_empty() {
        return Err(Error::Data("feature volume has no occupied nodes".into()));
    }
    let mut lo = [i32::MAX; 3];
    let mut hi = [i32::MIN; 3];
    for n in &nodes {
        for a in 0..3 {
            lo[a] = lo[a].min(n[a]);
            hi[a] = hi[a].max(n[a] + 1);
        }
    }
    let s = l.node_size(l.split);
    let to_world = |c: [i32; 3]| l.origin + Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * s;
    Ok(Aabb::new(to_world(lo), to_world(hi)))
}

fn field<'a>(cfg: &RunConfig, mlp: &'a Mlp, stack: FeatureStack) -> Field<'a> {
    Field {
        mlp,
        encoding: cfg.encoding,
        stack,
    }
}

/// Meshes one routing of the optimized scene.
pub fn extract_stage(
    cfg: &RunConfig,
    volume: &OctreeFeatureVolume,
    geo: &Mlp,
    inpainter: &Mlp,
    routing: Routing,
) -> Result<(TriangleMesh, RouteCounts)> {
    let mut grid = SdfGrid::covering(&extraction_bounds(volume)?, cfg.extract.grid_res)?;
    let points = grid.points();
    let (values, counts) = routed_sdf(
        volume,
        &field(cfg, geo, FeatureStack::Fine),
        &field(cfg, inpainter, FeatureStack::Coarse),
        &points,
        cfg.extract.alpha,
        cfg.samples.truncation,
        routing,
    )?;
    grid.values = values;
    Ok((marching_cubes(&grid)?, counts))
}

/// Full and geometry-only meshes from one decoding pass.
pub fn extract_pair(
    cfg: &RunConfig,
    volume: &OctreeFeatureVolume,
    geo: &Mlp,
    inpainter: &Mlp,
) -> Result<(TriangleMesh, TriangleMesh, RouteCounts)> {
    let t0 = Instant::now();
    let mut grid = SdfGrid::covering(&extraction_bounds(volume)?, cfg.extract.grid_res)?;
    let points = grid.points();
    let (full, geo_only, counts) = routed_sdf_pair(
        volume,
        &field(cfg, geo, FeatureStack::Fine),
        &field(cfg, inpainter, FeatureStack::Coarse),
        &points,
        cfg.extract.alpha,
        cfg.samples.truncation,
    )?;
    grid.values = full;
    let full_mesh = marching_cubes(&grid)?;
    grid.values = geo_only;
    let geo_mesh = marching_cubes(&grid)?;
    log::info!(
        "extracted {} grid points ({counts:?}) in {:.1}s",
        points.len(),
        t0.elapsed().as_secs_f64()
    );
    Ok((full_mesh, geo_mesh, counts))
}

/// Room interior widened by [`EVAL_CROP_PAD`]; exterior wall faces, the floor
/// underside and wall tops fall outside and are never observable.
pub fn evaluation_region(spec: &SceneSpec) -> Aabb {
    let i = spec.interior();
    Aabb::new(
        i.min - Vec3::splat(EVAL_CROP_PAD),
        Vec3::new(i.max.x + EVAL_CROP_PAD, i.max.y + EVAL_CROP_PAD, i.max.z - EVAL_CROP_PAD),
    )
}

/// Triangles whose centroid lies in `region`.
pub fn crop_mesh(mesh: &TriangleMesh, region: &Aabb) -> Result<TriangleMesh> {
    let tris = (0..mesh.triangle_count())
        .filter(|&i| {
            let [a, b, c] = mesh.triangle(i);
            region.contains((a + b + c) / 3.0)
        })
        .map(|i| mesh.triangles()[i])
        .collect();
    TriangleMesh::new(mesh.vertices().to_vec(), tris)
}

/// Ground-truth evaluation samples of a room.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Exposed surface samples inside the evaluation region.
    pub samples: Vec<Vec3>,
    /// The subset beneath table tops.
    pub under_furniture: Vec<Vec3>,
}

/// Area-uniform samples of the cropped complete mesh, keeping only points
/// that border free space (contact faces between solids are dropped).
pub fn ground_truth(scene: &GeneratedScene, n: usize, seed: u64) -> Result<GroundTruth> {
    let cropped = crop_mesh(&scene.complete, &evaluation_region(&scene.spec))?;
    let sdf = MeshSdf::new(&scene.complete)?;
    let sampler = SurfaceSampler::new(&cropped)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, tri) = sampler.sample(&mut rng);
        if sdf.distance(p + cropped.face_normal(tri) * EXPOSURE_STEP) > 0.0 {
            samples.push(p);
        }
    }
    let under_furniture = samples
        .iter()
        .copied()
        .filter(|p| {
            scene.furniture.iter().any(|f| {
                f.kind == FurnitureKind::Table
                    && p.x > f.bounds.min.x
                    && p.x < f.bounds.max.x
                    && p.y > f.bounds.min.y
                    && p.y < f.bounds.max.y
                    && p.z <= f.underside + 1e-9
            })
        })
        .collect();
    Ok(GroundTruth {
        samples,
        under_furniture,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub name: String,
    pub metrics: MetricsReport,
    /// Completeness restricted to the under-furniture samples (percent).
    pub regional_completeness: f64,
    pub region_samples: usize,
    pub counts: RouteCounts,
}

/// Compares a predicted mesh, cropped like the ground truth, with `gt`.
pub fn evaluate_prediction(
    cfg: &RunConfig,
    name: &str,
    pred: &TriangleMesh,
    gt: &GroundTruth,
    region: &Aabb,
    counts: RouteCounts,
    seed: u64,
) -> Result<VariantResult> {
    let threshold = cfg.eval.threshold;
    let cropped = crop_mesh(pred, region)?;
    let zero = |mean: f64| VariantResult {
        name: name.to_string(),
        metrics: MetricsReport {
            accuracy: 0.0,
            completeness: 0.0,
            f1: 0.0,
            threshold,
            samples: cfg.eval.samples,
            seed,
            mean_pred_to_gt: mean,
            mean_gt_to_pred: mean,
        },
        regional_completeness: 0.0,
        region_samples: gt.under_furniture.len(),
        counts,
    };
    if cropped.is_empty() {
        return Ok(zero(f64::INFINITY));
    }
    let pred_pts = sample_surface(&cropped, cfg.eval.samples, seed)?;
    let metrics = metrics_from_samples(&pred_pts, &gt.samples, threshold, seed)?;
    let tree = KdTree::build(&pred_pts)?;
    let (regional, _) = coverage(&gt.under_furniture, &tree, threshold);
    Ok(VariantResult {
        name: name.to_string(),
        metrics,
        regional_completeness: regional,
        region_samples: gt.under_furniture.len(),
        counts,
    })
}

pub const VARIANTS: [&str; 4] = ["full", "geo-only", "full-half", "geo-only-half"];

/// Outcome of a criterion check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct E2eReport {
    pub variants: Vec<VariantResult>,
    pub out_dir: PathBuf,
}

impl E2eReport {
    pub fn variant(&self, name: &str) -> &VariantResult {
        self.variants
            .iter()
            .find(|v| v.name == name)
            .unwrap_or_else(|| panic!("variant {name} missing from report"))
    }

    fn comp(&self, name: &str) -> f64 {
        self.variant(name).metrics.completeness
    }

    /// Full pipeline vs. geometry-only ablation on all frames.
    pub fn occlusion_check(&self) -> Check {
        let gain = self.comp("full") - self.comp("geo-only");
        let regional = self.variant("full").regional_completeness - self.variant("geo-only").regional_completeness;
        let region_ok = self.variant("full").region_samples > 0;
        Check {
            label: "occlusion completion".into(),
            pass: gain >= 5.0 && regional >= 20.0 && region_ok,
            detail: format!(
                "completeness gain {gain:+.2} (need ≥ 5), under-furniture gain {regional:+.2} (need ≥ 20, {} samples)",
                self.variant("full").region_samples
            ),
        }
    }

    /// Effect of halving the held-out frames.
    pub fn sparsity_check(&self) -> Check {
        let full_drop = self.comp("full") - self.comp("full-half");
        let geo_drop = self.comp("geo-only") - self.comp("geo-only-half");
        Check {
            label: "frame sparsity".into(),
            pass: full_drop.abs() < 5.0 && geo_drop > full_drop,
            detail: format!(
                "full changes by {:+.2} (need |·| < 5), geo-only drops {geo_drop:.2} vs full {full_drop:.2}",
                -full_drop
            ),
        }
    }

    pub fn metrics_csv(&self) -> String {
        let rows: Vec<(String, MetricsReport)> = self.variants.iter().map(|v| (v.name.clone(), v.metrics)).collect();
        metrics_csv(&rows)
    }

    pub fn regional_csv(&self) -> String {
        let mut s = String::from("scene,region_samples,regional_completeness,visible,invisible,uncovered\n");
        for v in &self.variants {
            let _ = writeln!(
                s,
                "{},{},{:.4},{},{},{}",
                v.name, v.region_samples, v.regional_completeness, v.counts.visible, v.counts.invisible, v.counts.uncovered
            );
        }
        s
    }

    /// Human-readable summary: metric table plus one line per check.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<16} {:>8} {:>8} {:>8} {:>10}\n",
            "variant", "Accu.", "Comp.", "F1", "Comp.(UF)"
        );
        for v in &self.variants {
            let _ = writeln!(
                s,
                "{:<16} {:>8.2} {:>8.2} {:>8.2} {:>10.2}",
                v.name, v.metrics.accuracy, v.metrics.completeness, v.metrics.f1, v.regional_completeness
            );
        }
        for c in [self.occlusion_check(), self.sparsity_check()] {
            let _ = writeln!(s, "[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.label, c.detail);
        }
        s
    }
}

/// Runs the whole experiment into `out` and returns the evaluation.
pub fn run_e2e(cfg: &RunConfig, out: &Path) -> Result<E2eReport> {
    cfg.validate()?;
    let t_start = Instant::now();
    crate::fsutil::create_dir(out)?;
    cfg.write_resolved(out)?;
    let scenes_dir = out.join("scenes");
    let ckpt = out.join("ckpt");
    let meshes = out.join("meshes");
    crate::fsutil::create_dir(&meshes)?;

    let synth = synthesize_scenes(cfg)?;
    let mut training = Vec::new();
    let mut test = None;
    for s in synth {
        let dir = scenes_dir.join(&s.record.name);
        crate::fsutil::create_dir(&dir.join(FRAMES_DIR))?;
        write_scene_dir(&dir, &s)?;
        let frames = render_frames(cfg, &s.scene, &s.record.trajectory)?;
        write_frames(&dir.join(FRAMES_DIR), &s.record.name, &frames, cfg.camera.max_range)?;
        let scene_seed = s.record.spec.seed;
        match s.record.role {
            SceneRole::Train => {
                let bank = training_bank(cfg, &s.scene, &frames, scene_seed)?;
                crate::samples::save_bank(&dir.join(SAMPLES_FILE), &bank)?;
                let volume = build_volume(cfg, &frames, scene_seed)?;
                training.push(TrainingScene::new(s.record.name.clone(), volume, bank)?);
            }
            SceneRole::Test => test = Some((s, frames)),
        }
    }
    log::info!("synthesized and rendered scenes in {:.1}s", t_start.elapsed().as_secs_f64());
    let (test, frames) = test.expect("synthesize_scenes always adds a held-out room");

    let (inpainter, _) = train_stage(cfg, &mut training, &ckpt)?;
    drop(training);

    let eval_seed = derive_seed(cfg.seed, stream::EVAL);
    let gt = ground_truth(&test.scene, cfg.eval.samples, eval_seed)?;
    let region = evaluation_region(&test.record.spec);
    save_mesh(&crop_mesh(&test.scene.complete, &region)?, &meshes.join("gt.ply"))?;

    let half: Vec<DepthFrame> = frames.iter().step_by(2).cloned().collect();
    let mut variants = Vec::new();
    for (suffix, frame_set) in [("", &frames), ("-half", &half)] {
        let name = format!("{}{}", test.record.name, suffix.replace('-', "_"));
        let seed = test.record.spec.seed;
        let band = band_bank(cfg, frame_set, seed)?;
        if suffix.is_empty() {
            crate::samples::save_bank(&scenes_dir.join(&test.record.name).join(BAND_FILE), &band)?;
        }
        let (volume, geo) = optimize_stage(cfg, &name, frame_set, &band, &inpainter, &ckpt, seed)?;
        let (full, geo_only, counts) = extract_pair(cfg, &volume, &geo, &inpainter)?;
        for (variant, mesh) in [("full", &full), ("geo-only", &geo_only)] {
            let label = format!("{variant}{suffix}");
            save_mesh(mesh, &meshes.join(format!("{label}.ply")))?;
            variants.push(evaluate_prediction(cfg, &label, mesh, &gt, &region, counts, eval_seed)?);
        }
    }
    let report = E2eReport {
        variants,
        out_dir: out.to_path_buf(),
    };
    write_atomic(&out.join("metrics.csv"), report.metrics_csv().as_bytes())?;
    write_atomic(&out.join("regional.csv"), report.regional_csv().as_bytes())?;
    write_atomic(&out.join("summary.txt"), report.table().as_bytes())?;
    log::info!("e2e finished in {:.1}s", t_start.elapsed().as_secs_f64());
    Ok(report)
}

/// Reads a mesh written by any stage.
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    if !path.exists() {
        return Err(Error::Data(format!("missing mesh {}", path.display())));
    }
    load_mesh(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_per_stream() {
        let a: Vec<u64> = (0..8).map(|s| derive_seed(7, s)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(a.len(), b.len());
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn held_out_room_has_a_table() {
        let cfg = RunConfig::toy();
        let s = synthesize_scene(&cfg, "t", SceneRole::Test, 0).unwrap();
        assert!(table_count(&s.scene) >= 1);
        assert_eq!(regenerate(&s.record).unwrap().furniture, s.scene.furniture);
    }

    #[test]
    fn ground_truth_drops_contact_faces() {
        let mut spec = SceneSpec::random(3, 0);
        spec.size_x = 3.0;
        spec.size_y = 3.0;
        spec.height = 2.5;
        let mut scene = generate_scene(&spec).unwrap();
        let block = TriangleMesh::cuboid(Vec3::new(1.0, 1.0, 0.0), Vec3::new(2.0, 2.0, 1.0));
        scene.complete.append(&block);
        let gt = ground_truth(&scene, 20_000, 1).unwrap();
        // nothing sampled on the floor under the block or on its bottom face
        assert!(!gt
            .samples
            .iter()
            .any(|p| p.z.abs() < 1e-9 && p.x > 1.0 && p.x < 2.0 && p.y > 1.0 && p.y < 2.0));
        // the crop keeps only inward-facing shell faces
        let region = spec.interior().padded(EVAL_CROP_PAD);
        assert!(gt.samples.iter().all(|p| region.contains(*p)));
        assert!(gt.under_furniture.is_empty());
    }

    #[test]
    fn crop_keeps_centroids_inside() {
        let m = TriangleMesh::cuboid(Vec3::ZERO, Vec3::splat(1.0));
        let c = crop_mesh(&m, &Aabb::new(Vec3::splat(-0.1), Vec3::new(1.1, 1.1, 0.1))).unwrap();
        assert_eq!(c.triangle_count(), 2);
    }
}
