//! Inpainter training, per-scene optimization and surface extraction.

mod extract;
pub mod mc;
mod mc_tables;
mod train;

pub use extract::{
    classify_point, extract_surface, routed_sdf, routed_sdf_pair, ExtractParams, FnDecoder, PointClass, RouteCounts, Routing,
    SdfDecoder,
};
pub use mc::{marching_cubes, SdfGrid};
pub use train::{
    level_learning_rate, optimize_scene, train_inpainter, OptimizeParams, OptimizeRecord, StepRecord, TrainReport,
    TrainSchedule, TrainingScene,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Aabb, Vec3};
    use crate::nn::{LossWeights, Mlp, MlpArch, PositionalEncoding};
    use crate::octree::{OctreeFeatureVolume, OctreeLayout};
    use crate::samples::{SampleKind, SdfSample, Visibility};

    fn layout() -> OctreeLayout {
        OctreeLayout {
            origin: Vec3::ZERO,
            voxel_size: 0.125,
            levels: 4,
            split: 1,
            feature_dim: 3,
        }
    }

    #[test]
    fn classification_threshold_is_strict() {
        let vol = OctreeFeatureVolume::build(&[Vec3::splat(0.3)], layout(), 0).unwrap();
        let inside = Vec3::splat(0.3);
        assert_eq!(vol.missing_layers(inside), 0);
        assert_eq!(classify_point(&vol, inside, 3), PointClass::Visible);
        // same level-0 node only: 4 missing layers
        let far = Vec3::splat(1.9);
        assert_eq!(vol.missing_layers(far), 4);
        assert_eq!(classify_point(&vol, far, 3), PointClass::Invisible);
        assert_eq!(classify_point(&vol, far, 4), PointClass::Visible);
        // shares the level-1 node: 3 missing
        let mid = Vec3::new(0.9, 0.9, 0.9);
        assert_eq!(vol.missing_layers(mid), 3);
        assert_eq!(classify_point(&vol, mid, 3), PointClass::Visible);
    }

    #[test]
    fn stub_sphere_extraction() {
        let vol = OctreeFeatureVolume::build(&[Vec3::splat(1.0)], layout(), 0).unwrap();
        let (r, h) = (0.5, 0.05);
        let sphere = FnDecoder(|p: Vec3| (p - Vec3::splat(1.0)).norm() - r);
        let params = ExtractParams {
            bounds: Aabb::new(Vec3::splat(0.3), Vec3::splat(1.7)),
            grid_res: h,
            alpha: 2,
            free_space: 0.1,
            routing: Routing::Full,
        };
        let (mesh, counts) = extract_surface(&vol, &sphere, &sphere, &params).unwrap();
        assert_eq!(counts.uncovered, 0);
        assert!(mesh.is_watertight());
        assert_eq!(mesh.euler_characteristic(), 2);
        for v in mesh.vertices() {
            assert!(((*v - Vec3::splat(1.0)).norm() - r).abs() <= h);
        }
        let geo_only = ExtractParams {
            routing: Routing::GeoOnly,
            ..params
        };
        let never = FnDecoder(|_| panic!("inpainter must not run"));
        let hollow = FnDecoder(|_| 1.0);
        let (empty, _) = extract_surface(&vol, &hollow, &never, &geo_only).unwrap();
        assert!(empty.is_empty());
    }

    fn toy_bank(n: usize) -> Vec<SdfSample> {
        (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                let p = Vec3::new(0.2 + 1.6 * t, 0.3 + 1.2 * ((7 * i) % n) as f64 / n as f64, 0.3 + t);
                SdfSample {
                    p,
                    d_gt: p.z - 0.8,
                    kind: SampleKind::UniformFree,
                    visibility: Visibility::Visible,
                }
            })
            .collect()
    }

    fn weights() -> LossWeights {
        LossWeights {
            sigma: 0.05,
            lambda_eik: 0.1,
            lambda_smooth: 0.005,
            fd_h: 0.03,
            eps_mag: 0.01,
        }
    }

    fn inpainter(enc: PositionalEncoding) -> Mlp {
        Mlp::new(
            MlpArch {
                input_dim: enc.width() + layout().coarse_width(),
                hidden: 16,
                layers: 4,
                skip_at: Some(2),
                weight_norm: true,
                dropout: 0.3,
            },
            1,
        )
        .unwrap()
    }

    fn schedule(epochs: usize) -> TrainSchedule {
        TrainSchedule {
            epochs,
            iterations_per_scene: 100,
            batch_size: 16,
            reg_samples: 4,
            inpainter_lr: 1e-3,
            feature_lr: 1e-3,
            feature_decay: 0.5,
            seed: 9,
        }
    }

    #[test]
    fn schedule_counts_steps_and_rates() {
        let enc = PositionalEncoding {
            bands: 2,
            include_input: true,
        };
        let bank = toy_bank(200);
        let pts: Vec<Vec3> = bank.iter().map(|s| s.p).collect();
        let vol = OctreeFeatureVolume::build(&pts, layout(), 3).unwrap();
        let mut scenes = vec![TrainingScene::new("a", vol.clone(), bank.clone()).unwrap()];
        let mut net = inpainter(enc);
        let before = net.clone();
        let r = train_inpainter(&mut net, enc, &mut scenes, &schedule(0), &weights(), |_, _, _| Ok(())).unwrap();
        assert!(r.steps.is_empty());
        assert_eq!(net, before);

        let mut visits = 0;
        let r = train_inpainter(&mut net, enc, &mut scenes, &schedule(1), &weights(), |_, _, _| {
            visits += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(r.steps.len(), 100);
        assert_eq!(visits, 1);
        assert_eq!(r.feature_lrs, vec![(0, 1e-3), (1, 5e-4)]);
        // fine levels untouched
        for l in layout().fine_levels() {
            assert_eq!(scenes[0].volume.features(l), vol.features(l));
        }
        assert_ne!(scenes[0].volume.features(0), vol.features(0));
    }

    #[test]
    fn optimization_keeps_inpainter_frozen() {
        let enc = PositionalEncoding {
            bands: 2,
            include_input: true,
        };
        let bank = toy_bank(300);
        let pts: Vec<Vec3> = bank.iter().map(|s| s.p).collect();
        let mut vol = OctreeFeatureVolume::build(&pts, layout(), 3).unwrap();
        let inp = inpainter(enc);
        let frozen = inp.params().to_vec();
        let mut geo = Mlp::new(
            MlpArch {
                input_dim: enc.width() + layout().fine_width(),
                hidden: 16,
                layers: 3,
                skip_at: None,
                weight_norm: false,
                dropout: 0.0,
            },
            2,
        )
        .unwrap();
        let mut params = OptimizeParams {
            iters: 0,
            batch_size: 32,
            reg_samples: 8,
            geo_lr: 1e-2,
            feature_lr: 1e-2,
            feature_decay: 0.5,
            seed: 4,
        };
        let (g0, v0) = (geo.clone(), vol.clone());
        optimize_scene(&mut vol, &mut geo, &inp, enc, &bank, &weights(), &params).unwrap();
        assert_eq!(geo, g0);
        assert_eq!(vol, v0);
        params.iters = 200;
        let log = optimize_scene(&mut vol, &mut geo, &inp, enc, &bank, &weights(), &params).unwrap();
        assert_eq!(inp.params(), &frozen[..]);
        let first = log[..20].iter().map(|r| r.geo.bce).sum::<f64>();
        let last = log[180..].iter().map(|r| r.geo.bce).sum::<f64>();
        assert!(last < first, "{first} → {last}");
    }
}
