//! SDF fields built from a decoder, a positional encoding and one stack of
//! octree features, with batched losses and gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::octree::{scatter, Cell, FeatureGrads, OctreeFeatureVolume, Presence};

use super::encoding::PositionalEncoding;
use super::loss::{loss_bce, loss_eikonal, loss_smooth};
use super::mlp::{Dropout, DropoutMasks, Mlp};

/// Which octree levels feed the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureStack {
    /// Levels `0..=j` (the inpainter).
    Coarse,
    /// Levels `j+1..=L` (the geometry decoder).
    Fine,
}

impl FeatureStack {
    pub fn levels(self, volume: &OctreeFeatureVolume) -> std::ops::RangeInclusive<u32> {
        match self {
            FeatureStack::Coarse => volume.layout().coarse_levels(),
            FeatureStack::Fine => volume.layout().fine_levels(),
        }
    }

    pub fn width(self, volume: &OctreeFeatureVolume) -> usize {
        match self {
            FeatureStack::Coarse => volume.layout().coarse_width(),
            FeatureStack::Fine => volume.layout().fine_width(),
        }
    }

    fn mask(self, volume: &OctreeFeatureVolume) -> u32 {
        self.levels(volume).fold(0, |m, l| m | (1 << l))
    }
}

/// Decoder plus the inputs it reads.
#[derive(Debug, Clone, Copy)]
pub struct Field<'a> {
    pub mlp: &'a Mlp,
    pub encoding: PositionalEncoding,
    pub stack: FeatureStack,
}

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// BCE flatness, meters.
    pub sigma: f64,
    pub lambda_eik: f64,
    pub lambda_smooth: f64,
    /// Finite-difference step for spatial gradients, meters.
    pub fd_h: f64,
    /// Magnitude of the smoothness perturbation, meters.
    pub eps_mag: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma > 0.0
            && self.fd_h > 0.0
            && self.eps_mag >= 0.0
            && self.lambda_eik >= 0.0
            && self.lambda_smooth >= 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

/// One supervised point. `eps` is the smoothness offset; regularizers are only
/// evaluated when `regularize` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchItem {
    pub p: Vec3,
    pub d_gt: f64,
    pub regularize: bool,
    pub eps: Vec3,
}

/// Uniform direction on the sphere scaled to `mag`.
pub fn random_offset<R: Rng>(rng: &mut R, mag: f64) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v * (mag / n);
        }
    }
}

/// Batch means of each term over the samples that had feature coverage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    pub bce: f64,
    pub eik: f64,
    pub smooth: f64,
    pub total: f64,
    /// Samples with coverage in the stack.
    pub used: usize,
    /// Samples whose spatial gradients were valid.
    pub regularized: usize,
}

/// Gradients of the batch loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrads {
    pub params: Vec<f64>,
    pub features: FeatureGrads,
}

impl FieldGrads {
    pub fn new(mlp: &Mlp, volume: &OctreeFeatureVolume) -> Self {
        FieldGrads {
            params: vec![0.0; mlp.params().len()],
            features: volume.zero_grads(),
        }
    }

    pub fn zero(&mut self) {
        self.params.iter_mut().for_each(|g| *g = 0.0);
        self.features.zero();
    }
}

/// Dropout policy for a batch.
pub enum DropoutSpec<'a, R: Rng> {
    Off,
    /// Fresh masks per sample from `rng`.
    Sample(&'a mut R),
    /// Caller-provided masks, one group per batch item.
    Fixed(&'a DropoutMasks),
}

/// Probes per regularized sample: centre, ±h along each axis at `p`, then at `p + ε`.
const PROBES: usize = 13;

fn probe_point(item: &BatchItem, k: usize, h: f64) -> Vec3 {
    match k {
        0 => item.p,
        1..=6 => item.p + Vec3::axis((k - 1) / 2) * if (k - 1).is_multiple_of(2) { h } else { -h },
        _ => item.p + item.eps + Vec3::axis((k - 7) / 2) * if (k - 7).is_multiple_of(2) { h } else { -h },
    }
}

/// Finite-difference gradient from the six probe outputs `[+x, −x, +y, −y, +z, −z]`.
fn fd_gradient(out: &[f64], h: f64) -> Vec3 {
    Vec3::new(out[0] - out[1], out[2] - out[3], out[4] - out[5]) / (2.0 * h)
}

struct Row {
    p: Vec3,
    cells: Vec<Option<Cell>>,
}

impl<'a> Field<'a> {
    pub fn input_width(&self, volume: &OctreeFeatureVolume) -> usize {
        self.encoding.width() + self.stack.width(volume)
    }

    fn check(&self, volume: &OctreeFeatureVolume) -> Result<()> {
        let want = self.input_width(volume);
        if self.mlp.arch().input_dim != want {
            return Err(Error::InvalidArgument(format!(
                "decoder expects {} inputs, encoding plus features give {want}",
                self.mlp.arch().input_dim
            )));
        }
        Ok(())
    }

    /// Writes the decoder input for `p` and returns the stack presence mask
    /// together with the cells used per stack level.
    fn build_row(&self, volume: &OctreeFeatureVolume, p: Vec3, out: &mut [f64]) -> (Presence, Row) {
        let ew = self.encoding.width();
        self.encoding.encode_into(volume.layout().normalize(p), &mut out[..ew]);
        let f = volume.feature_dim();
        let mut mask = 0;
        let mut cells = Vec::new();
        for (i, level) in self.stack.levels(volume).enumerate() {
            let slot = &mut out[ew + i * f..ew + (i + 1) * f];
            let cell = volume.cell(level, p);
            match &cell {
                Some(c) => {
                    volume.blend(level, c, slot);
                    mask |= 1 << level;
                }
                None => slot.iter_mut().for_each(|v| *v = 0.0),
            }
            cells.push(cell);
        }
        (Presence(mask), Row { p, cells })
    }

    /// Stack presence mask of `p`.
    pub fn presence(&self, volume: &OctreeFeatureVolume, p: Vec3) -> Presence {
        let m = self.stack.mask(volume);
        let mut bits = 0;
        for level in self.stack.levels(volume) {
            if m & (1 << level) != 0 && volume.cell(level, p).is_some() {
                bits |= 1 << level;
            }
        }
        Presence(bits)
    }

    /// SDF at each point (inference), `None` where the stack has no coverage.
    pub fn predict(&self, volume: &OctreeFeatureVolume, points: &[Vec3]) -> Result<Vec<Option<f64>>> {
        self.check(volume)?;
        const CHUNK: usize = 4096;
        let w = self.input_width(volume);
        let mut out = Vec::with_capacity(points.len());
        let mut x = Vec::with_capacity(CHUNK * w);
        let mut covered = Vec::with_capacity(CHUNK);
        for chunk in points.chunks(CHUNK) {
            x.clear();
            covered.clear();
            for &p in chunk {
                let start = x.len();
                x.resize(start + w, 0.0);
                let (presence, _) = self.build_row(volume, p, &mut x[start..]);
                covered.push(presence.0 != 0);
            }
            let tape = self.mlp.forward(&x, chunk.len(), Dropout::Off)?;
            out.extend(covered.iter().zip(&tape.output).map(|(&c, &d)| c.then_some(d)));
        }
        Ok(out)
    }

    /// Central-difference spatial gradient; `None` if `p` lacks coverage or a probe
    /// sees a different set of levels than `p`.
    pub fn spatial_gradient(&self, volume: &OctreeFeatureVolume, p: Vec3, h: f64) -> Result<Option<Vec3>> {
        if h <= 0.0 {
            return Err(Error::InvalidArgument(format!("finite-difference step {h} must be positive")));
        }
        self.check(volume)?;
        let w = self.input_width(volume);
        let mut x = vec![0.0; 7 * w];
        let item = BatchItem {
            p,
            d_gt: 0.0,
            regularize: true,
            eps: Vec3::ZERO,
        };
        let (centre, _) = self.build_row(volume, p, &mut x[..w]);
        if centre.0 == 0 {
            return Ok(None);
        }
        for k in 1..7 {
            let (pr, _) = self.build_row(volume, probe_point(&item, k, h), &mut x[k * w..(k + 1) * w]);
            if pr != centre {
                return Ok(None);
            }
        }
        let out = self.mlp.forward(&x, 7, Dropout::Off)?.output;
        Ok(Some(fd_gradient(&out[1..7], h)))
    }

    /// Mean loss over covered items; when `grads` is given, adds the gradient with
    /// respect to decoder parameters and the stack's corner features.
    pub fn loss_and_grad<R: Rng>(
        &self,
        volume: &OctreeFeatureVolume,
        items: &[BatchItem],
        weights: &LossWeights,
        dropout: DropoutSpec<'_, R>,
        grads: Option<&mut FieldGrads>,
    ) -> Result<LossStats> {
        self.check(volume)?;
        weights.validate()?;
        let w = self.input_width(volume);
        let h = weights.fd_h;

        // Assemble rows: each covered sample contributes its centre, plus 12 probes
        // when its spatial gradients are valid.
        let mut x: Vec<f64> = Vec::new();
        let mut rows: Vec<Row> = Vec::new();
        let mut groups: Vec<usize> = Vec::new();
        // (item index, first row, regularized)
        let mut used: Vec<(usize, usize, bool)> = Vec::new();
        let mut scratch = vec![0.0; w];
        for (i, item) in items.iter().enumerate() {
            let start = x.len();
            x.resize(start + w, 0.0);
            let (centre, row) = self.build_row(volume, item.p, &mut x[start..]);
            if centre.0 == 0 {
                x.truncate(start);
                continue;
            }
            let group = used.len();
            let first = rows.len();
            rows.push(row);
            groups.push(group);
            let mut valid = item.regularize;
            if valid {
                let mut probe_rows = Vec::with_capacity(PROBES - 1);
                let mut probe_x = Vec::with_capacity((PROBES - 1) * w);
                for k in 1..PROBES {
                    let (pr, row) = self.build_row(volume, probe_point(item, k, h), &mut scratch);
                    if pr != centre {
                        valid = false;
                        break;
                    }
                    probe_x.extend_from_slice(&scratch);
                    probe_rows.push(row);
                }
                if valid {
                    x.extend_from_slice(&probe_x);
                    rows.extend(probe_rows);
                    groups.extend(std::iter::repeat_n(group, PROBES - 1));
                }
            }
            used.push((i, first, valid));
        }
        let n_used = used.len();
        if n_used == 0 {
            return Ok(LossStats::default());
        }

        let sampled;
        let drop = match dropout {
            DropoutSpec::Off => Dropout::Off,
            DropoutSpec::Sample(rng) => {
                sampled = DropoutMasks::sample(self.mlp.arch(), n_used, rng);
                Dropout::Masks(&sampled, &groups)
            }
            DropoutSpec::Fixed(m) => Dropout::Masks(m, &groups),
        };
        let drop = if self.mlp.arch().dropout > 0.0 { drop } else { Dropout::Off };
        let tape = self.mlp.forward(&x, rows.len(), drop)?;
        let out = &tape.output;

        let inv_n = 1.0 / n_used as f64;
        let mut stats = LossStats {
            used: n_used,
            ..LossStats::default()
        };
        let mut d_out = vec![0.0; rows.len()];
        for &(i, first, valid) in &used {
            let item = &items[i];
            let (l, g) = loss_bce(out[first], item.d_gt, weights.sigma);
            stats.bce += l;
            d_out[first] += g * inv_n;
            if !valid {
                continue;
            }
            stats.regularized += 1;
            let g0 = fd_gradient(&out[first + 1..first + 7], h);
            let g1 = fd_gradient(&out[first + 7..first + 13], h);
            let (le, de) = loss_eikonal(g0);
            let (ls, ds0, ds1) = loss_smooth(g0, g1);
            stats.eik += le;
            stats.smooth += ls;
            let dg0 = (de * weights.lambda_eik + ds0 * weights.lambda_smooth) * inv_n;
            let dg1 = ds1 * (weights.lambda_smooth * inv_n);
            for a in 0..3 {
                let (u0, u1) = (dg0[a] / (2.0 * h), dg1[a] / (2.0 * h));
                d_out[first + 1 + 2 * a] += u0;
                d_out[first + 2 + 2 * a] -= u0;
                d_out[first + 7 + 2 * a] += u1;
                d_out[first + 8 + 2 * a] -= u1;
            }
        }
        stats.bce *= inv_n;
        stats.eik *= inv_n;
        stats.smooth *= inv_n;
        stats.total = stats.bce + weights.lambda_eik * stats.eik + weights.lambda_smooth * stats.smooth;
        if !stats.total.is_finite() {
            return Err(Error::NonFinite(format!("batch loss is {}", stats.total)));
        }

        if let Some(grads) = grads {
            let dx = self.mlp.backward(&tape, &d_out, &mut grads.params)?;
            let ew = self.encoding.width();
            let f = volume.feature_dim();
            for (r, row) in rows.iter().enumerate() {
                let drow = &dx[r * w..(r + 1) * w];
                for (i, level) in self.stack.levels(volume).enumerate() {
                    if let Some(cell) = &row.cells[i] {
                        let up = &drow[ew + i * f..ew + (i + 1) * f];
                        scatter(cell, f, up, &mut grads.features.levels[level as usize]);
                    }
                }
                debug_assert!(row.p.is_finite());
            }
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::mlp::MlpArch;
    use crate::octree::OctreeLayout;

    fn volume(seed: u64) -> OctreeFeatureVolume {
        let layout = OctreeLayout {
            origin: Vec3::ZERO,
            voxel_size: 0.25,
            levels: 3,
            split: 1,
            feature_dim: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3> = (0..60)
            .map(|_| Vec3::new(rng.gen_range(0.6..1.4), rng.gen_range(0.6..1.4), rng.gen_range(0.6..1.4)))
            .collect();
        let mut v = OctreeFeatureVolume::build(&pts, layout, seed).unwrap();
        // larger features so the decoder actually depends on them
        for l in 0..=3 {
            v.features_mut(l).iter_mut().for_each(|x| *x *= 50.0);
        }
        v
    }

    #[test]
    fn affine_decoder_gradient_is_exact() {
        let vol = volume(1);
        let enc = PositionalEncoding {
            bands: 0,
            include_input: true,
        };
        let arch = MlpArch {
            input_dim: 3 + vol.layout().fine_width(),
            hidden: 0,
            layers: 1,
            skip_at: None,
            weight_norm: false,
            dropout: 0.0,
        };
        let mut mlp = Mlp::zeros(arch).unwrap();
        // d = a · normalize(p) + b; normalize scales by 2/side
        let a = [0.3, -1.2, 0.7];
        mlp.params_mut()[..3].copy_from_slice(&a);
        *mlp.params_mut().last_mut().unwrap() = 0.25;
        let field = Field {
            mlp: &mlp,
            encoding: enc,
            stack: FeatureStack::Fine,
        };
        let scale = 2.0 / vol.layout().side();
        let g = field.spatial_gradient(&vol, Vec3::new(1.0, 1.0, 1.0), 0.01).unwrap().unwrap();
        for i in 0..3 {
            assert!((g[i] - a[i] * scale).abs() < 1e-9, "{g:?}");
        }
    }

    #[test]
    fn gradient_halving_converges_quadratically() {
        let vol = volume(2);
        let enc = PositionalEncoding::default();
        let arch = MlpArch {
            input_dim: enc.width() + vol.layout().coarse_width(),
            hidden: 16,
            layers: 3,
            skip_at: None,
            weight_norm: false,
            dropout: 0.0,
        };
        // h small enough that no ReLU kink or cell boundary falls inside the stencil
        let mlp = Mlp::new(arch, 3).unwrap();
        let field = Field {
            mlp: &mlp,
            encoding: enc,
            stack: FeatureStack::Coarse,
        };
        let p = Vec3::new(1.01, 0.97, 1.03);
        let h = 2e-4;
        let g1 = field.spatial_gradient(&vol, p, h).unwrap().unwrap();
        let g2 = field.spatial_gradient(&vol, p, h / 2.0).unwrap().unwrap();
        let g4 = field.spatial_gradient(&vol, p, h / 4.0).unwrap().unwrap();
        let (e1, e2) = ((g1 - g2).norm(), (g2 - g4).norm());
        // second-order error: halving h quarters the gap
        assert!(e1 > 1e-9);
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "{e1} {e2}");
    }

    fn fd_check(stack: FeatureStack, dropout: f64, seed: u64) {
        let vol = volume(seed + 10);
        let enc = PositionalEncoding {
            bands: 2,
            include_input: true,
        };
        let arch = MlpArch {
            input_dim: enc.width() + stack.width(&vol),
            hidden: 10,
            layers: 4,
            skip_at: Some(2),
            weight_norm: dropout > 0.0,
            dropout,
        };
        let mut mlp = Mlp::new(arch, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::nn::mlp::tests::jitter_biases(&mut mlp, &mut rng);
        let items: Vec<BatchItem> = (0..10)
            .map(|i| BatchItem {
                p: Vec3::new(rng.gen_range(0.7..1.3), rng.gen_range(0.7..1.3), rng.gen_range(0.7..1.3)),
                d_gt: rng.gen_range(-0.05..0.05),
                regularize: i % 3 != 2,
                eps: random_offset(&mut rng, 0.01),
            })
            .collect();
        let weights = LossWeights {
            sigma: 0.025,
            lambda_eik: 0.1,
            lambda_smooth: 0.05,
            fd_h: 0.01,
            eps_mag: 0.01,
        };
        let masks = DropoutMasks::sample(&arch, items.len(), &mut rng);
        let spec = || -> DropoutSpec<'_, ChaCha8Rng> {
            if dropout > 0.0 {
                DropoutSpec::Fixed(&masks)
            } else {
                DropoutSpec::Off
            }
        };
        let loss = |m: &Mlp, v: &OctreeFeatureVolume| {
            let f = Field {
                mlp: m,
                encoding: enc,
                stack,
            };
            f.loss_and_grad(v, &items, &weights, spec(), None).unwrap().total
        };
        let field = Field {
            mlp: &mlp,
            encoding: enc,
            stack,
        };
        let mut grads = FieldGrads::new(&mlp, &vol);
        let stats = field.loss_and_grad(&vol, &items, &weights, spec(), Some(&mut grads)).unwrap();
        assert_eq!(stats.used, items.len());
        assert!(stats.regularized > 0);

        // differences of an O(1) loss carry ~1e-10 roundoff, so tiny entries are
        // judged against a 1e-6 floor
        let eps = 1e-5;
        let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        let mut worst: f64 = 0.0;
        for i in 0..mlp.params().len() {
            let mut m = mlp.clone();
            m.params_mut()[i] += eps;
            let lp = loss(&m, &vol);
            m.params_mut()[i] -= 2.0 * eps;
            let lm = loss(&m, &vol);
            worst = worst.max(rel((lp - lm) / (2.0 * eps), grads.params[i]));
        }
        let other = match stack {
            FeatureStack::Coarse => FeatureStack::Fine,
            FeatureStack::Fine => FeatureStack::Coarse,
        };
        for level in stack.levels(&vol) {
            for j in 0..vol.features(level).len() {
                let mut v = vol.clone();
                v.features_mut(level)[j] += eps;
                let lp = loss(&mlp, &v);
                v.features_mut(level)[j] -= 2.0 * eps;
                let lm = loss(&mlp, &v);
                worst = worst.max(rel((lp - lm) / (2.0 * eps), grads.features.levels[level as usize][j]));
            }
        }
        for level in other.levels(&vol) {
            assert!(grads.features.levels[level as usize].iter().all(|&g| g == 0.0));
        }
        assert!(worst < 1e-4, "{stack:?} dropout {dropout} seed {seed}: worst relative error {worst}");
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        for seed in 0..3 {
            fd_check(FeatureStack::Fine, 0.0, seed);
            fd_check(FeatureStack::Coarse, 0.3, seed);
        }
    }

    #[test]
    fn zero_lambdas_give_mean_bce() {
        let vol = volume(4);
        let enc = PositionalEncoding::default();
        let arch = MlpArch {
            input_dim: enc.width() + vol.layout().fine_width(),
            hidden: 8,
            layers: 2,
            skip_at: None,
            weight_norm: false,
            dropout: 0.0,
        };
        let mlp = Mlp::new(arch, 1).unwrap();
        let field = Field {
            mlp: &mlp,
            encoding: enc,
            stack: FeatureStack::Fine,
        };
        let items: Vec<BatchItem> = (0..5)
            .map(|i| BatchItem {
                p: Vec3::new(0.8 + 0.1 * i as f64, 1.0, 1.0),
                d_gt: 0.01 * i as f64,
                regularize: true,
                eps: Vec3::new(0.01, 0.0, 0.0),
            })
            .collect();
        let w = LossWeights {
            sigma: 0.025,
            lambda_eik: 0.0,
            lambda_smooth: 0.0,
            fd_h: 0.01,
            eps_mag: 0.01,
        };
        let s = field.loss_and_grad::<ChaCha8Rng>(&vol, &items, &w, DropoutSpec::Off, None).unwrap();
        let preds = field.predict(&vol, &items.iter().map(|i| i.p).collect::<Vec<_>>()).unwrap();
        let mean: f64 = items
            .iter()
            .zip(&preds)
            .map(|(it, d)| loss_bce(d.unwrap(), it.d_gt, w.sigma).0)
            .sum::<f64>()
            / 5.0;
        assert!((s.total - mean).abs() < 1e-12);
        let doubled: Vec<BatchItem> = items.iter().chain(items.iter()).copied().collect();
        let s2 = field.loss_and_grad::<ChaCha8Rng>(&vol, &doubled, &w, DropoutSpec::Off, None).unwrap();
        assert!((s2.total - s.total).abs() < 1e-12);
    }

    #[test]
    fn uncovered_points_are_skipped() {
        let vol = volume(5);
        let enc = PositionalEncoding::default();
        let arch = MlpArch {
            input_dim: enc.width() + vol.layout().fine_width(),
            hidden: 8,
            layers: 2,
            skip_at: None,
            weight_norm: false,
            dropout: 0.0,
        };
        let mlp = Mlp::new(arch, 1).unwrap();
        let field = Field {
            mlp: &mlp,
            encoding: enc,
            stack: FeatureStack::Fine,
        };
        let out = field.predict(&vol, &[Vec3::new(0.01, 0.01, 0.01), Vec3::new(1.0, 1.0, 1.0)]).unwrap();
        assert!(out[0].is_none());
        assert!(out[1].is_some());
    }
}
