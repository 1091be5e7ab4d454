//! Cross-scene inpainter training and per-scene joint optimization.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    random_offset, Adam, BatchItem, DropoutSpec, FeatureStack, Field, FieldGrads, LossStats, LossWeights, Mlp,
    PositionalEncoding,
};
use crate::octree::OctreeFeatureVolume;
use crate::samples::SdfSample;

/// Learning rate of feature level `level`: `base · decay^level`.
pub fn level_learning_rate(base: f64, decay: f64, level: u32) -> f64 {
    base * decay.powi(level as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub iterations_per_scene: usize,
    pub batch_size: usize,
    /// Leading items of each batch that also carry the gradient regularizers.
    pub reg_samples: usize,
    pub inpainter_lr: f64,
    pub feature_lr: f64,
    pub feature_decay: f64,
    pub seed: u64,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.iterations_per_scene >= 1
            && self.batch_size >= 1
            && self.inpainter_lr > 0.0
            && self.feature_lr > 0.0
            && self.feature_decay > 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid training schedule {self:?}")));
        }
        Ok(())
    }
}

/// A training scene: its feature volume, sample bank and feature optimizer state.
#[derive(Debug, Clone)]
pub struct TrainingScene {
    pub name: String,
    pub volume: OctreeFeatureVolume,
    pub bank: Vec<SdfSample>,
    feature_adam: Vec<Adam>,
}

impl TrainingScene {
    pub fn new(name: impl Into<String>, volume: OctreeFeatureVolume, bank: Vec<SdfSample>) -> Result<Self> {
        let name = name.into();
        if bank.is_empty() {
            return Err(Error::Data(format!("training scene {name} has an empty sample bank")));
        }
        let feature_adam = (0..volume.layout().level_count() as u32)
            .map(|l| Adam::new(volume.features(l).len()))
            .collect();
        Ok(TrainingScene {
            name,
            volume,
            bank,
            feature_adam,
        })
    }
}

/// One optimizer step of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub stats: LossStats,
    pub scene: usize,
    pub visit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    /// `(level, lr)` for each coarse level updated during training.
    pub feature_lrs: Vec<(u32, f64)>,
    /// Scene order of every visit.
    pub visits: Vec<usize>,
}

fn draw_batch(
    bank: &[SdfSample],
    batch: usize,
    reg: usize,
    eps_mag: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<BatchItem> {
    (0..batch)
        .map(|i| {
            let s = &bank[rng.gen_range(0..bank.len())];
            BatchItem {
                p: s.p,
                d_gt: s.d_gt,
                regularize: i < reg,
                eps: random_offset(rng, eps_mag),
            }
        })
        .collect()
}

/// Visits scenes in a seeded random order each epoch; each visit runs
/// `iterations_per_scene` Adam steps on the inpainter and that scene's coarse
/// features. `after_visit` runs after every visit (e.g. to persist the volume).
pub fn train_inpainter(
    inpainter: &mut Mlp,
    encoding: PositionalEncoding,
    scenes: &mut [TrainingScene],
    schedule: &TrainSchedule,
    weights: &LossWeights,
    mut after_visit: impl FnMut(usize, &TrainingScene, &Mlp) -> Result<()>,
) -> Result<TrainReport> {
    schedule.validate()?;
    weights.validate()?;
    if scenes.is_empty() {
        return Err(Error::Data("no training scenes".into()));
    }
    let layout = *scenes[0].volume.layout();
    if scenes.iter().any(|s| {
        let l = s.volume.layout();
        l.levels != layout.levels || l.split != layout.split || l.feature_dim != layout.feature_dim
    }) {
        return Err(Error::Data("training volumes disagree on L, j or F".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut adam = Adam::new(inpainter.params().len());
    let coarse: Vec<u32> = layout.coarse_levels().collect();
    let feature_lrs: Vec<(u32, f64)> = coarse
        .iter()
        .map(|&l| (l, level_learning_rate(schedule.feature_lr, schedule.feature_decay, l)))
        .collect();
    let mut report = TrainReport {
        steps: Vec::new(),
        feature_lrs: feature_lrs.clone(),
        visits: Vec::new(),
    };
    let mut step = 0;
    for _epoch in 0..schedule.epochs {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut rng);
        for &si in &order {
            let visit = report.visits.len();
            report.visits.push(si);
            let scene = &mut scenes[si];
            let mut grads = FieldGrads::new(inpainter, &scene.volume);
            for _ in 0..schedule.iterations_per_scene {
                let batch = draw_batch(
                    &scene.bank,
                    schedule.batch_size,
                    schedule.reg_samples,
                    weights.eps_mag,
                    &mut rng,
                );
                grads.zero();
                let field = Field {
                    mlp: inpainter,
                    encoding,
                    stack: FeatureStack::Coarse,
                };
                let stats = field.loss_and_grad(
                    &scene.volume,
                    &batch,
                    weights,
                    DropoutSpec::Sample(&mut rng),
                    Some(&mut grads),
                )?;
                adam.step(inpainter.params_mut(), &grads.params, schedule.inpainter_lr)?;
                for &(level, lr) in &feature_lrs {
                    let l = level as usize;
                    scene.feature_adam[l].step(scene.volume.features_mut(level), &grads.features.levels[l], lr)?;
                }
                report.steps.push(StepRecord {
                    step,
                    stats,
                    scene: si,
                    visit,
                });
                step += 1;
            }
            log::debug!(
                "visit {visit}: scene {} loss {:.5}",
                scene.name,
                report.steps.last().map_or(f64::NAN, |s| s.stats.total)
            );
            after_visit(si, scene, inpainter)?;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeParams {
    pub iters: usize,
    pub batch_size: usize,
    pub reg_samples: usize,
    pub geo_lr: f64,
    pub feature_lr: f64,
    pub feature_decay: f64,
    pub seed: u64,
}

/// Per-step losses of the two objectives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeRecord {
    pub step: usize,
    pub geo: LossStats,
    pub inpainter: LossStats,
}

/// Fits the geometry decoder and all feature levels of `volume` to visible
/// ray-band samples. Both decoders' objectives are summed; the inpainter only
/// passes gradients to the coarse features and is never modified.
pub fn optimize_scene(
    volume: &mut OctreeFeatureVolume,
    geo: &mut Mlp,
    inpainter: &Mlp,
    encoding: PositionalEncoding,
    band: &[SdfSample],
    weights: &LossWeights,
    params: &OptimizeParams,
) -> Result<Vec<OptimizeRecord>> {
    weights.validate()?;
    if band.is_empty() {
        return Err(Error::Data("no visible samples to optimize against".into()));
    }
    if params.batch_size == 0 || !(params.geo_lr > 0.0) || !(params.feature_lr > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid optimization parameters {params:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut geo_adam = Adam::new(geo.params().len());
    let levels = volume.layout().level_count() as u32;
    let mut feat_adam: Vec<Adam> = (0..levels).map(|l| Adam::new(volume.features(l).len())).collect();
    let lrs: Vec<f64> = (0..levels)
        .map(|l| level_learning_rate(params.feature_lr, params.feature_decay, l))
        .collect();
    let mut geo_grads = FieldGrads::new(geo, volume);
    let mut inp_grads = FieldGrads::new(inpainter, volume);
    let mut log = Vec::with_capacity(params.iters);
    for step in 0..params.iters {
        let batch = draw_batch(band, params.batch_size, params.reg_samples, weights.eps_mag, &mut rng);
        geo_grads.zero();
        inp_grads.zero();
        let g = Field {
            mlp: geo,
            encoding,
            stack: FeatureStack::Fine,
        }
        .loss_and_grad::<ChaCha8Rng>(volume, &batch, weights, DropoutSpec::Off, Some(&mut geo_grads))?;
        let i = Field {
            mlp: inpainter,
            encoding,
            stack: FeatureStack::Coarse,
        }
        .loss_and_grad::<ChaCha8Rng>(volume, &batch, weights, DropoutSpec::Off, Some(&mut inp_grads))?;
        geo_adam.step(geo.params_mut(), &geo_grads.params, params.geo_lr)?;
        geo_grads.features.add(&inp_grads.features);
        for l in 0..levels {
            let li = l as usize;
            feat_adam[li].step(volume.features_mut(l), &geo_grads.features.levels[li], lrs[li])?;
        }
        log.push(OptimizeRecord {
            step,
            geo: g,
            inpainter: i,
        });
    }
    Ok(log)
}
