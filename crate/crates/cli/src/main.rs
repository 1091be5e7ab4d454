use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use occsurf_core::config::{RunConfig, CONFIG_FILE};
use occsurf_core::eval::{compute_metrics, metrics_csv, metrics_table};
use occsurf_core::experiment::{
    band_bank, build_volume, extract_stage, load_inpainter, load_optimized, optimize_stage, read_mesh, regenerate,
    render_frames, run_e2e, synthesize_scenes, train_stage, training_bank, write_scene_dir, SceneRecord, SceneRole,
    BAND_FILE, FRAMES_DIR, SAMPLES_FILE,
};
use occsurf_core::fsutil::{create_dir, write_atomic};
use occsurf_core::geom::io::save_mesh;
use occsurf_core::pipeline::{Routing, TrainingScene};
use occsurf_core::render::{read_frames, write_frames};
use occsurf_core::samples::{load_bank, save_bank};
use occsurf_core::{Error, Result};

/// Occlusion-completing indoor surface reconstruction from posed depth images.
#[derive(Parser, Debug)]
#[command(name = "occsurf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Built-in configuration (desk, large or toy) used when no file is given.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate training rooms and one held-out room.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render depth frames along the stored camera loop.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Draw SDF samples (training rooms) and ray-band samples (all rooms).
    Sample {
        #[arg(long)]
        scene: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the inpainter across rooms.
    TrainInpainter {
        #[arg(long, num_args = 1.., required = true)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fit the geometry decoder and features of one room.
    Optimize {
        #[arg(long)]
        scene: PathBuf,
        /// Checkpoint directory (or the inpainter file inside it).
        #[arg(long)]
        inpainter: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Extract a mesh from an optimized room.
    Extract {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint directory; defaults to `ckpt` next to the scene directory.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Answer invisible points with free space instead of the inpainter.
        #[arg(long)]
        geo_only: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Accuracy, completeness and F1 between two meshes.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0.025)]
        threshold: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the whole desk-scale experiment and print the acceptance table.
    E2e {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "e2e_out")]
        out: PathBuf,
    },
}

impl ConfigArgs {
    /// Explicit file, then preset, then the config stored in `fallback`, then desk.
    fn resolve(&self, fallback: Option<&Path>) -> Result<RunConfig> {
        if let Some(path) = &self.config {
            return RunConfig::load(path);
        }
        if let Some(name) = &self.preset {
            return RunConfig::preset(name);
        }
        if let Some(dir) = fallback {
            let stored = dir.join(CONFIG_FILE);
            if stored.exists() {
                return RunConfig::load(&stored);
            }
        }
        Ok(RunConfig::desk())
    }
}

fn scene_frames(scene: &Path) -> Result<Vec<occsurf_core::render::DepthFrame>> {
    let dir = scene.join(FRAMES_DIR);
    if !dir.exists() {
        return Err(Error::Data(format!("missing frames in {} (run render first)", dir.display())));
    }
    read_frames(&dir)
}

fn checkpoint_dir(path: &Path) -> PathBuf {
    if path.is_file() {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        path.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { cfg, out } => {
            let cfg = cfg.resolve(None)?;
            create_dir(&out)?;
            cfg.write_resolved(&out)?;
            for s in synthesize_scenes(&cfg)? {
                let dir = out.join(&s.record.name);
                create_dir(&dir)?;
                write_scene_dir(&dir, &s)?;
                cfg.write_resolved(&dir)?;
                println!("{}", dir.display());
            }
        }
        Command::Render { scene, cfg } => {
            let cfg = cfg.resolve(Some(&scene))?;
            let record = SceneRecord::load(&scene)?;
            let generated = regenerate(&record)?;
            let frames = render_frames(&cfg, &generated, &record.trajectory)?;
            write_frames(&scene.join(FRAMES_DIR), &record.name, &frames, cfg.camera.max_range)?;
            cfg.write_resolved(&scene.join(FRAMES_DIR))?;
            log::info!("rendered {} frames for {}", frames.len(), record.name);
        }
        Command::Sample { scene, cfg } => {
            let cfg = cfg.resolve(Some(&scene))?;
            let record = SceneRecord::load(&scene)?;
            let frames = scene_frames(&scene)?;
            if record.role == SceneRole::Train {
                let generated = regenerate(&record)?;
                let bank = training_bank(&cfg, &generated, &frames, record.spec.seed)?;
                save_bank(&scene.join(SAMPLES_FILE), &bank)?;
            }
            save_bank(&scene.join(BAND_FILE), &band_bank(&cfg, &frames, record.spec.seed)?)?;
            cfg.write_resolved(&scene)?;
        }
        Command::TrainInpainter { scenes, out, cfg } => {
            let cfg = cfg.resolve(scenes.first().map(PathBuf::as_path))?;
            let mut training = Vec::with_capacity(scenes.len());
            for dir in &scenes {
                let record = SceneRecord::load(dir)?;
                let bank_path = dir.join(SAMPLES_FILE);
                if !bank_path.exists() {
                    return Err(Error::Data(format!(
                        "missing sample bank {} (run sample on a training room first)",
                        bank_path.display()
                    )));
                }
                let frames = scene_frames(dir)?;
                let volume = build_volume(&cfg, &frames, record.spec.seed)?;
                training.push(TrainingScene::new(record.name, volume, load_bank(&bank_path)?)?);
            }
            train_stage(&cfg, &mut training, &out)?;
        }
        Command::Optimize { scene, inpainter, cfg } => {
            let cfg = cfg.resolve(Some(&scene))?;
            let ckpt = checkpoint_dir(&inpainter);
            let inp = load_inpainter(&cfg, &ckpt)?;
            let record = SceneRecord::load(&scene)?;
            let frames = scene_frames(&scene)?;
            let band_path = scene.join(BAND_FILE);
            if !band_path.exists() {
                return Err(Error::Data(format!(
                    "missing ray-band samples {} (run sample first)",
                    band_path.display()
                )));
            }
            optimize_stage(&cfg, &record.name, &frames, &load_bank(&band_path)?, &inp, &ckpt, record.spec.seed)?;
        }
        Command::Extract {
            scene,
            out,
            ckpt,
            geo_only,
            cfg,
        } => {
            let cfg = cfg.resolve(Some(&scene))?;
            let record = SceneRecord::load(&scene)?;
            let ckpt = ckpt.unwrap_or_else(|| scene.parent().unwrap_or(Path::new(".")).join("ckpt"));
            let (volume, geo) = load_optimized(&cfg, &record.name, &ckpt)?;
            let inp = load_inpainter(&cfg, &ckpt)?;
            let routing = if geo_only { Routing::GeoOnly } else { Routing::Full };
            let (mesh, counts) = extract_stage(&cfg, &volume, &geo, &inp, routing)?;
            log::info!("{counts:?}, {} triangles", mesh.triangle_count());
            save_mesh(&mesh, &out)?;
            let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            cfg.write_resolved(parent)?;
        }
        Command::Eval {
            pred,
            gt,
            samples,
            threshold,
            seed,
            out,
        } => {
            let p = read_mesh(&pred)?;
            let g = read_mesh(&gt)?;
            let report = compute_metrics(&p, &g, samples, threshold, seed)?;
            let name = pred.file_stem().map_or_else(|| "pred".into(), |s| s.to_string_lossy().into_owned());
            let rows = [(name, report)];
            let csv = metrics_csv(&rows);
            print!("{csv}");
            eprint!("{}", metrics_table(&rows));
            if let Some(path) = out {
                write_atomic(&path, csv.as_bytes())?;
            }
        }
        Command::E2e { cfg, out } => {
            let cfg = cfg.resolve(None)?;
            let report = run_e2e(&cfg, &out)?;
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
