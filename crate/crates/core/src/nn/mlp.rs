//! Dense ReLU networks with optional weight normalization, dropout and an
//! input skip connection, plus their reverse-mode gradients.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{read_file, write_atomic};

/// Network shape. Layer `k` maps `in_k → hidden` except the last, which maps to 1.
/// With a skip at layer `s`, the input of layer `s` is `[h_{s−1}, x]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden: usize,
    /// Number of dense layers, output layer included.
    pub layers: usize,
    pub skip_at: Option<usize>,
    pub weight_norm: bool,
    /// Drop probability after each hidden activation (training mode only).
    pub dropout: f64,
}

impl MlpArch {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 || self.input_dim == 0 || (self.layers > 1 && self.hidden == 0) {
            return Err(Error::InvalidArgument(format!("degenerate network shape {self:?}")));
        }
        if let Some(s) = self.skip_at {
            if s == 0 || s >= self.layers {
                return Err(Error::InvalidArgument(format!(
                    "skip layer {s} must lie in 1..{}",
                    self.layers
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn layer_in(&self, k: usize) -> usize {
        let base = if k == 0 { self.input_dim } else { self.hidden };
        if self.skip_at == Some(k) {
            base + self.input_dim
        } else {
            base
        }
    }

    pub fn layer_out(&self, k: usize) -> usize {
        if k + 1 == self.layers {
            1
        } else {
            self.hidden
        }
    }

    fn layer_param_count(&self, k: usize) -> usize {
        let (i, o) = (self.layer_in(k), self.layer_out(k));
        o * i + o + if self.weight_norm { o } else { 0 }
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers).map(|k| self.layer_param_count(k)).sum()
    }
}

/// Offsets of one layer's parameter blocks in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSlots {
    n_in: usize,
    n_out: usize,
    /// `v` (weight-normalized) or `W`, `n_out × n_in` row-major.
    w: usize,
    /// Gain `g` (weight norm only), `n_out`.
    g: Option<usize>,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: MlpArch,
    slots: Vec<LayerSlots>,
    params: Vec<f64>,
}

/// Dropout masks, one row of `hidden` multipliers per group per hidden layer.
/// Rows of a batch sharing a group (e.g. finite-difference probes of one
/// sample) share a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    groups: usize,
    hidden: usize,
    /// `[layer][group * hidden + unit]`, values `0` or `1/(1−p)`.
    masks: Vec<Vec<f64>>,
}

impl DropoutMasks {
    pub fn sample<R: Rng>(arch: &MlpArch, groups: usize, rng: &mut R) -> Self {
        let keep = 1.0 - arch.dropout;
        let scale = 1.0 / keep;
        let masks = (0..arch.layers.saturating_sub(1))
            .map(|_| {
                (0..groups * arch.hidden)
                    .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
                    .collect()
            })
            .collect();
        DropoutMasks {
            groups,
            hidden: arch.hidden,
            masks,
        }
    }
}

/// How dropout is applied during a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum Dropout<'a> {
    /// Inference: no dropout.
    Off,
    /// Training with the given masks; `groups[row]` selects the mask row.
    Masks(&'a DropoutMasks, &'a [usize]),
}

/// Intermediates recorded by [`Mlp::forward`] for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    rows: usize,
    /// Effective weights per layer.
    weights: Vec<Vec<f64>>,
    /// Row norms of `v` per layer (weight norm only).
    norms: Vec<Vec<f64>>,
    /// Input matrix of each layer (`rows × n_in`).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations (`rows × n_out`).
    pre: Vec<Vec<f64>>,
    /// Per-row dropout multipliers for each hidden layer (empty when off).
    drop: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds views of `a` (m×k), `b` (k×n) and `c` (m×n, row-major).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    /// Kaiming-normal hidden weights, small output weights, zero biases; gains
    /// start at the row norms so the effective weights equal `v`.
    pub fn new(arch: MlpArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mlp = Mlp::zeros(arch)?;
        for k in 0..arch.layers {
            let s = mlp.slots[k];
            let last = k + 1 == arch.layers;
            let std = if last {
                1e-2 / (s.n_in as f64).sqrt()
            } else {
                (2.0 / s.n_in as f64).sqrt()
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            for w in &mut mlp.params[s.w..s.w + s.n_out * s.n_in] {
                *w = normal.sample(&mut rng);
            }
            if let Some(g) = s.g {
                for r in 0..s.n_out {
                    let row = &mlp.params[s.w + r * s.n_in..s.w + (r + 1) * s.n_in];
                    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    mlp.params[g + r] = norm;
                }
            }
        }
        Ok(mlp)
    }

    /// All parameters zero (gains too).
    pub fn zeros(arch: MlpArch) -> Result<Self> {
        arch.validate()?;
        let mut slots = Vec::with_capacity(arch.layers);
        let mut off = 0;
        for k in 0..arch.layers {
            let (n_in, n_out) = (arch.layer_in(k), arch.layer_out(k));
            let w = off;
            off += n_in * n_out;
            let g = if arch.weight_norm {
                let g = off;
                off += n_out;
                Some(g)
            } else {
                None
            };
            let b = off;
            off += n_out;
            slots.push(LayerSlots { n_in, n_out, w, g, b });
        }
        Ok(Mlp {
            arch,
            slots,
            params: vec![0.0; off],
        })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Mutable views of layer `k`'s `(W or v, g, b)` blocks.
    pub fn layer_mut(&mut self, k: usize) -> (&mut [f64], Option<&mut [f64]>, &mut [f64]) {
        let s = self.slots[k];
        let (head, bias) = self.params.split_at_mut(s.b);
        let bias = &mut bias[..s.n_out];
        let (w_part, g_part) = head.split_at_mut(s.w + s.n_out * s.n_in);
        let w = &mut w_part[s.w..];
        let g = s.g.map(|g| &mut g_part[g - (s.w + s.n_out * s.n_in)..][..s.n_out]);
        (w, g, bias)
    }

    /// Effective weight matrix of layer `k` and the row norms of `v`.
    fn effective_weights(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let s = self.slots[k];
        let v = &self.params[s.w..s.w + s.n_out * s.n_in];
        match s.g {
            None => (v.to_vec(), Vec::new()),
            Some(g) => {
                let mut w = v.to_vec();
                let mut norms = Vec::with_capacity(s.n_out);
                for r in 0..s.n_out {
                    let row = &mut w[r * s.n_in..(r + 1) * s.n_in];
                    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let scale = if norm > 0.0 { self.params[g + r] / norm } else { 0.0 };
                    row.iter_mut().for_each(|x| *x *= scale);
                    norms.push(norm);
                }
                (w, norms)
            }
        }
    }

    /// Batched forward over `rows` inputs stored row-major in `x`.
    pub fn forward(&self, x: &[f64], rows: usize, dropout: Dropout<'_>) -> Result<Tape> {
        let a = &self.arch;
        if x.len() != rows * a.input_dim {
            return Err(Error::InvalidArgument(format!(
                "input has {} values, expected {rows} rows × {} features",
                x.len(),
                a.input_dim
            )));
        }
        if let Dropout::Masks(m, groups) = dropout {
            if groups.len() != rows || m.hidden != a.hidden || groups.iter().any(|&g| g >= m.groups) {
                return Err(Error::InvalidArgument("dropout masks do not match the batch".into()));
            }
        }
        let mut tape = Tape {
            rows,
            weights: Vec::with_capacity(a.layers),
            norms: Vec::with_capacity(a.layers),
            inputs: Vec::with_capacity(a.layers),
            pre: Vec::with_capacity(a.layers),
            drop: Vec::new(),
            output: Vec::new(),
        };
        let mut h: Vec<f64> = x.to_vec();
        for k in 0..a.layers {
            let s = self.slots[k];
            let input = if a.skip_at == Some(k) {
                let prev = s.n_in - a.input_dim;
                let mut cat = vec![0.0; rows * s.n_in];
                for r in 0..rows {
                    cat[r * s.n_in..r * s.n_in + prev].copy_from_slice(&h[r * prev..(r + 1) * prev]);
                    cat[r * s.n_in + prev..(r + 1) * s.n_in]
                        .copy_from_slice(&x[r * a.input_dim..(r + 1) * a.input_dim]);
                }
                cat
            } else {
                h
            };
            let (w, norms) = self.effective_weights(k);
            let mut z = vec![0.0; rows * s.n_out];
            for r in 0..rows {
                z[r * s.n_out..(r + 1) * s.n_out].copy_from_slice(&self.params[s.b..s.b + s.n_out]);
            }
            // z += input · Wᵀ
            gemm(
                rows,
                s.n_in,
                s.n_out,
                &input,
                (s.n_in as isize, 1),
                &w,
                (1, s.n_in as isize),
                &mut z,
                1.0,
            );
            let last = k + 1 == a.layers;
            h = if last {
                z.clone()
            } else {
                let mut act: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
                if let Dropout::Masks(m, groups) = dropout {
                    let mut per_row = vec![0.0; rows * s.n_out];
                    for (r, &g) in groups.iter().enumerate() {
                        let mask = &m.masks[k][g * m.hidden..(g + 1) * m.hidden];
                        per_row[r * s.n_out..(r + 1) * s.n_out].copy_from_slice(mask);
                        for (v, &mk) in act[r * s.n_out..(r + 1) * s.n_out].iter_mut().zip(mask) {
                            *v *= mk;
                        }
                    }
                    tape.drop.push(per_row);
                }
                act
            };
            tape.weights.push(w);
            tape.norms.push(norms);
            tape.inputs.push(input);
            tape.pre.push(z);
        }
        tape.output = h;
        Ok(tape)
    }

    /// Single-input inference.
    pub fn forward_row(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x, 1, Dropout::Off)?.output[0])
    }

    /// Accumulates parameter gradients into `grad` (same layout as the parameters)
    /// and returns the input gradient (`rows × input_dim`).
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grad: &mut [f64]) -> Result<Vec<f64>> {
        let a = &self.arch;
        let rows = tape.rows;
        if tape.inputs.len() != a.layers || tape.output.len() != rows {
            return Err(Error::InvalidArgument("tape does not belong to this network".into()));
        }
        if d_out.len() != rows || grad.len() != self.params.len() {
            return Err(Error::InvalidArgument("gradient buffer shapes do not match".into()));
        }
        let mut dx = vec![0.0; rows * a.input_dim];
        let mut dz: Vec<f64> = d_out.to_vec();
        for k in (0..a.layers).rev() {
            let s = self.slots[k];
            // bias
            for r in 0..rows {
                for o in 0..s.n_out {
                    grad[s.b + o] += dz[r * s.n_out + o];
                }
            }
            // dW = dzᵀ · input
            let mut dw = vec![0.0; s.n_out * s.n_in];
            gemm(
                s.n_out,
                rows,
                s.n_in,
                &dz,
                (1, s.n_out as isize),
                &tape.inputs[k],
                (s.n_in as isize, 1),
                &mut dw,
                0.0,
            );
            match s.g {
                None => {
                    for (g, d) in grad[s.w..s.w + dw.len()].iter_mut().zip(&dw) {
                        *g += d;
                    }
                }
                Some(goff) => {
                    for r in 0..s.n_out {
                        let norm = tape.norms[k][r];
                        if norm == 0.0 {
                            continue;
                        }
                        let v = &self.params[s.w + r * s.n_in..s.w + (r + 1) * s.n_in];
                        let dwr = &dw[r * s.n_in..(r + 1) * s.n_in];
                        let dot: f64 = dwr.iter().zip(v).map(|(d, v)| d * v).sum::<f64>() / norm;
                        grad[goff + r] += dot;
                        let gain = self.params[goff + r];
                        for c in 0..s.n_in {
                            grad[s.w + r * s.n_in + c] += gain / norm * (dwr[c] - dot * v[c] / norm);
                        }
                    }
                }
            }
            // d input = dz · W
            let mut din = vec![0.0; rows * s.n_in];
            gemm(
                rows,
                s.n_out,
                s.n_in,
                &dz,
                (s.n_out as isize, 1),
                &tape.weights[k],
                (s.n_in as isize, 1),
                &mut din,
                0.0,
            );
            let prev_width = if a.skip_at == Some(k) {
                let prev = s.n_in - a.input_dim;
                for r in 0..rows {
                    for c in 0..a.input_dim {
                        dx[r * a.input_dim + c] += din[r * s.n_in + prev + c];
                    }
                }
                prev
            } else {
                s.n_in
            };
            if k == 0 {
                for r in 0..rows {
                    for c in 0..a.input_dim {
                        dx[r * a.input_dim + c] += din[r * s.n_in + c];
                    }
                }
                break;
            }
            // back through dropout and ReLU of layer k−1
            let pz = &tape.pre[k - 1];
            let mut next = vec![0.0; rows * prev_width];
            for r in 0..rows {
                for c in 0..prev_width {
                    let i = r * prev_width + c;
                    if pz[i] > 0.0 {
                        let mut d = din[r * s.n_in + c];
                        if let Some(drop) = tape.drop.get(k - 1) {
                            d *= drop[i];
                        }
                        next[i] = d;
                    }
                }
            }
            dz = next;
        }
        Ok(dx)
    }

    pub fn encode(&self, meta: &DecoderMeta) -> Vec<u8> {
        let header = toml::to_string(&CheckpointHeader {
            arch: self.arch,
            meta: meta.clone(),
            param_count: self.params.len(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.params.len());
        out.extend_from_slice(MLP_MAGIC);
        out.extend_from_slice(&MLP_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for &p in &self.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], name: &str) -> Result<(Mlp, DecoderMeta)> {
        if bytes.len() < 12 || &bytes[..4] != MLP_MAGIC {
            return Err(Error::parse(name, "offset 0", "not a decoder checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != MLP_VERSION {
            return Err(Error::parse(name, "offset 4", format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| Error::parse(name, "offset 12", "truncated header"))?;
        let text = std::str::from_utf8(body).map_err(|_| Error::parse(name, "offset 12", "header is not UTF-8"))?;
        let header: CheckpointHeader =
            toml::from_str(text).map_err(|e| Error::parse(name, "header", e.to_string()))?;
        let mut mlp = Mlp::zeros(header.arch).map_err(|e| Error::parse(name, "header", e.to_string()))?;
        if header.param_count != mlp.params.len() {
            return Err(Error::parse(
                name,
                "header",
                format!("{} parameters declared, architecture needs {}", header.param_count, mlp.params.len()),
            ));
        }
        let start = 12 + hlen;
        if bytes.len() != start + 4 * mlp.params.len() {
            return Err(Error::parse(
                name,
                format!("offset {start}"),
                format!("expected {} parameter bytes, found {}", 4 * mlp.params.len(), bytes.len() - start),
            ));
        }
        for (i, p) in mlp.params.iter_mut().enumerate() {
            let o = start + 4 * i;
            *p = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
        }
        Ok((mlp, header.meta))
    }

    pub fn save(&self, meta: &DecoderMeta, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode(meta))
    }

    pub fn load(path: &Path) -> Result<(Mlp, DecoderMeta)> {
        Self::decode(&read_file(path)?, &path.display().to_string())
    }
}

/// Context needed to rebuild a decoder's inputs from a feature volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderMeta {
    pub role: String,
    pub bands: u32,
    pub include_input: bool,
    pub feature_dim: usize,
    pub levels: u32,
    pub split: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    arch: MlpArch,
    meta: DecoderMeta,
    param_count: usize,
}

const MLP_MAGIC: &[u8; 4] = b"OSNN";
const MLP_VERSION: u32 = 1;

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn arch(weight_norm: bool, skip: Option<usize>, dropout: f64) -> MlpArch {
        MlpArch {
            input_dim: 5,
            hidden: 7,
            layers: 4,
            skip_at: skip,
            weight_norm,
            dropout,
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(arch(true, Some(2), 0.0)).unwrap();
        assert_eq!(m.forward_row(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), 0.0);
        assert!(m.forward_row(&[1.0]).is_err());
    }

    #[test]
    fn two_layer_hand_calculation() {
        let a = MlpArch {
            input_dim: 1,
            hidden: 1,
            layers: 2,
            skip_at: None,
            weight_norm: false,
            dropout: 0.0,
        };
        let mut m = Mlp::zeros(a).unwrap();
        // h = relu(2x − 1), y = 3h + 0.5
        m.params_mut().copy_from_slice(&[2.0, -1.0, 3.0, 0.5]);
        assert_eq!(m.forward_row(&[2.0]).unwrap(), 3.0 * 3.0 + 0.5);
        assert_eq!(m.forward_row(&[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn inference_is_deterministic() {
        let m = Mlp::new(arch(true, Some(2), 0.3), 4).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4, 0.5];
        assert_eq!(m.forward_row(&x).unwrap().to_bits(), m.forward_row(&x).unwrap().to_bits());
    }

    #[test]
    fn weight_norm_scale_invariance() {
        let a = arch(true, Some(2), 0.0);
        let m = Mlp::new(a, 5).unwrap();
        let mut scaled = m.clone();
        for k in 0..a.layers {
            let (v, _, _) = scaled.layer_mut(k);
            v.iter_mut().for_each(|x| *x *= 3.7);
        }
        let x = [0.3, -0.1, 0.7, 0.2, -0.9];
        let (y0, y1) = (m.forward_row(&x).unwrap(), scaled.forward_row(&x).unwrap());
        assert!((y0 - y1).abs() < 1e-12 * (1.0 + y0.abs()));
    }

    /// Nonzero biases keep pre-activations off the ReLU kink even when a whole
    /// upstream row is dropped.
    pub(crate) fn jitter_biases(m: &mut Mlp, rng: &mut ChaCha8Rng) {
        for k in 0..m.arch().layers {
            let (_, _, b) = m.layer_mut(k);
            b.iter_mut().for_each(|x| *x = rng.gen_range(-0.2..0.2));
        }
    }

    fn fd_check(a: MlpArch, seed: u64) {
        let mut m = Mlp::new(a, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        jitter_biases(&mut m, &mut rng);
        let rows = 6;
        let x: Vec<f64> = (0..rows * a.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let groups: Vec<usize> = (0..rows).map(|r| r / 2).collect();
        let masks = DropoutMasks::sample(&a, 3, &mut rng);
        let drop = if a.dropout > 0.0 { Dropout::Masks(&masks, &groups) } else { Dropout::Off };
        // loss = Σ w_r y_r²
        let loss = |m: &Mlp, x: &[f64]| -> f64 {
            let t = m.forward(x, rows, drop).unwrap();
            t.output.iter().zip(&w).map(|(y, w)| w * y * y).sum()
        };
        let t = m.forward(&x, rows, drop).unwrap();
        let d_out: Vec<f64> = t.output.iter().zip(&w).map(|(y, w)| 2.0 * w * y).collect();
        let mut grad = vec![0.0; m.params().len()];
        let dx = m.backward(&t, &d_out, &mut grad).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..m.params().len() {
            let mut p = m.clone();
            p.params_mut()[i] += h;
            let lp = loss(&p, &x);
            p.params_mut()[i] -= 2.0 * h;
            let lm = loss(&p, &x);
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - grad[i]).abs() / (fd.abs().max(grad[i].abs()).max(1e-6));
            worst = worst.max(err);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let lp = loss(&m, &xp);
            xp[i] -= 2.0 * h;
            let lm = loss(&m, &xp);
            let fd = (lp - lm) / (2.0 * h);
            let err = (fd - dx[i]).abs() / (fd.abs().max(dx[i].abs()).max(1e-6));
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            fd_check(arch(false, None, 0.0), seed);
            fd_check(arch(true, Some(2), 0.0), seed);
            fd_check(arch(true, Some(2), 0.3), seed);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Mlp::new(arch(true, Some(2), 0.3), 1).unwrap();
        let meta = DecoderMeta {
            role: "inpainter".into(),
            bands: 6,
            include_input: true,
            feature_dim: 12,
            levels: 7,
            split: 3,
        };
        let bytes = m.encode(&meta);
        let (back, meta2) = Mlp::decode(&bytes, "x").unwrap();
        assert_eq!(meta2, meta);
        for (a, b) in back.params().iter().zip(m.params()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(Mlp::decode(&bytes[..bytes.len() - 1], "x").is_err());
    }
}
