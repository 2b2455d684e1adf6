//! Tiny center-heatmap BEV detector.
//!
//! Architecture: `rasterize -> conv3x3(2->16) -> ReLU -> conv3x3(16->16) ->
//! ReLU -> {1x1 heatmap head (sigmoid), 1x1 regression head (w, l, dx, dy)}`.
//! Gradients are written out by hand; see `tests/gradient_check.rs` for the
//! finite-difference verification.
//!
//! Spatial layout is `[channel, row = y, column = x]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Scene;
use crate::error::{parse_json, Error, Result};
use crate::rng::Xoshiro256;
use crate::scalar::{sigmoid, softplus, Scalar};
use crate::tensor::{conv2d, conv2d_backward, ConvShape, Tensor, TensorRecord};

pub const IN_CHANNELS: usize = 2;
pub const HIDDEN: usize = 16;
pub const REG_CHANNELS: usize = 4;
/// Point counts saturate here in the occupancy channel.
pub const COUNT_CAP: f64 = 32.0;
pub const REG_WEIGHT: f64 = 1.0;
pub const FOCAL_ALPHA: i32 = 2;
pub const FOCAL_BETA: i32 = 4;
/// Heatmap bias init, `-ln((1 - 0.1) / 0.1)`.
pub const HEATMAP_PRIOR_BIAS: f64 = -2.19;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterSpec {
    pub grid: usize,
    pub extent: f64,
}

impl Default for RasterSpec {
    fn default() -> Self {
        Self {
            grid: 16,
            extent: 16.0,
        }
    }
}

impl RasterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 8 {
            return Err(Error::config(format!("grid {} below minimum of 8", self.grid)));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(Error::config("raster extent must be positive"));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> f64 {
        self.extent / self.grid as f64
    }

    /// Cell index along one axis, clamped into the grid.
    pub fn cell_of(&self, coord: f64) -> usize {
        let c = (coord / self.cell_size()).floor();
        if c < 0.0 {
            0
        } else {
            (c as usize).min(self.grid - 1)
        }
    }
}

/// Two-channel occupancy raster `[2, G, G]`: saturating log point count and
/// mean point distance to the cell center (in cell units).
pub fn rasterize<T: Scalar>(scene: &Scene, spec: &RasterSpec) -> Tensor<T> {
    let g = spec.grid;
    let cell = spec.cell_size();
    let mut count = vec![0usize; g * g];
    let mut dist = vec![0.0f64; g * g];
    for p in &scene.points {
        let (ix, iy) = (spec.cell_of(p[0]), spec.cell_of(p[1]));
        let (ccx, ccy) = ((ix as f64 + 0.5) * cell, (iy as f64 + 0.5) * cell);
        count[iy * g + ix] += 1;
        dist[iy * g + ix] += (p[0] - ccx).hypot(p[1] - ccy);
    }
    let norm = COUNT_CAP.ln_1p();
    let mut out = Tensor::zeros(&[IN_CHANNELS, g, g]);
    let data = out.data_mut();
    for i in 0..g * g {
        if count[i] == 0 {
            continue;
        }
        let c = count[i] as f64;
        data[i] = T::lit(c.min(COUNT_CAP).ln_1p() / norm);
        data[g * g + i] = T::lit(dist[i] / c / cell);
    }
    out
}

/// Detector weights. Conv weights are `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub conv1_w: Tensor<T>,
    pub conv1_b: Tensor<T>,
    pub conv2_w: Tensor<T>,
    pub conv2_b: Tensor<T>,
    pub hm_w: Tensor<T>,
    pub hm_b: Tensor<T>,
    pub reg_w: Tensor<T>,
    pub reg_b: Tensor<T>,
}

pub const PARAM_NAMES: [&str; 8] = [
    "conv1_w", "conv1_b", "conv2_w", "conv2_b", "hm_w", "hm_b", "reg_w", "reg_b",
];

impl<T: Scalar> ModelParams<T> {
    pub fn zeros() -> Self {
        Self {
            conv1_w: Tensor::zeros(&[HIDDEN, IN_CHANNELS, 3, 3]),
            conv1_b: Tensor::zeros(&[HIDDEN]),
            conv2_w: Tensor::zeros(&[HIDDEN, HIDDEN, 3, 3]),
            conv2_b: Tensor::zeros(&[HIDDEN]),
            hm_w: Tensor::zeros(&[1, HIDDEN, 1, 1]),
            hm_b: Tensor::zeros(&[1]),
            reg_w: Tensor::zeros(&[REG_CHANNELS, HIDDEN, 1, 1]),
            reg_b: Tensor::zeros(&[REG_CHANNELS]),
        }
    }

    /// He-uniform weights (`U(-b, b)`, `b = sqrt(6 / fan_in)`), zero biases
    /// except the heatmap prior.
    pub fn init(seed: u64) -> Self {
        let mut rng = Xoshiro256::seed_from_u64(seed);
        let mut p = Self::zeros();
        for w in [&mut p.conv1_w, &mut p.conv2_w, &mut p.hm_w, &mut p.reg_w] {
            let fan_in: usize = w.shape()[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in w.data_mut() {
                *v = T::lit((2.0 * rng.next_f64() - 1.0) * bound);
            }
        }
        p.hm_b.fill(T::lit(HEATMAP_PRIOR_BIAS));
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros()
    }

    pub fn tensors(&self) -> [&Tensor<T>; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.hm_w,
            &self.hm_b,
            &self.reg_w,
            &self.reg_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.hm_w,
            &mut self.hm_b,
            &mut self.reg_w,
            &mut self.reg_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    pub fn global_norm(&self) -> T {
        self.tensors().iter().map(|t| t.sum_squares()).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, alpha: T) {
        for t in self.tensors_mut() {
            t.scale(alpha);
        }
    }

    pub fn to_records(&self) -> BTreeMap<String, TensorRecord> {
        PARAM_NAMES
            .iter()
            .zip(self.tensors())
            .map(|(n, t)| (n.to_string(), TensorRecord::from(t)))
            .collect()
    }

    pub fn from_records(records: &BTreeMap<String, TensorRecord>) -> Result<Self> {
        let mut p = Self::zeros();
        for (name, slot) in PARAM_NAMES.iter().zip(p.tensors_mut()) {
            let rec = records
                .get(*name)
                .ok_or_else(|| Error::config(format!("checkpoint lacks tensor `{name}`")))?;
            if rec.shape != slot.shape() {
                return Err(Error::config(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    rec.shape,
                    slot.shape()
                )));
            }
            *slot = rec.to_tensor()?;
        }
        Ok(p)
    }
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    input: Vec<T>,
    z1: Vec<T>,
    a1: Vec<T>,
    z2: Vec<T>,
    a2: Vec<T>,
}

impl<T: Scalar> Tape<T> {
    /// Which hidden units of both layers passed their ReLU. The loss is
    /// smooth in the parameters only while this pattern is fixed.
    pub fn active_units(&self) -> Vec<bool> {
        self.z1.iter().chain(&self.z2).map(|&z| z > T::zero()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// Sigmoid probabilities `[1, G, G]`.
    pub heatmap: Tensor<T>,
    /// Pre-sigmoid heatmap scores `[1, G, G]`.
    pub logits: Tensor<T>,
    /// `(w, l, dx, dy)` per cell, `[4, G, G]`.
    pub reg: Tensor<T>,
    pub tape: Tape<T>,
}

fn relu<T: Scalar>(v: &[T]) -> Vec<T> {
    v.iter().map(|&x| x.max(T::zero())).collect()
}

fn shapes(g: usize) -> [ConvShape; 4] {
    [
        ConvShape {
            in_channels: IN_CHANNELS,
            out_channels: HIDDEN,
            kernel: 3,
            size: g,
        },
        ConvShape {
            in_channels: HIDDEN,
            out_channels: HIDDEN,
            kernel: 3,
            size: g,
        },
        ConvShape {
            in_channels: HIDDEN,
            out_channels: 1,
            kernel: 1,
            size: g,
        },
        ConvShape {
            in_channels: HIDDEN,
            out_channels: REG_CHANNELS,
            kernel: 1,
            size: g,
        },
    ]
}

fn grid_of<T: Scalar>(input: &Tensor<T>) -> usize {
    let s = input.shape();
    assert!(
        s.len() == 3 && s[0] == IN_CHANNELS && s[1] == s[2],
        "input must be [{IN_CHANNELS}, G, G], got {s:?}"
    );
    s[1]
}

pub fn forward<T: Scalar>(params: &ModelParams<T>, input: &Tensor<T>) -> ForwardOutput<T> {
    let g = grid_of(input);
    let [c1, c2, ch, cr] = shapes(g);
    let x = input.data().to_vec();
    let z1 = conv2d(c1, &x, params.conv1_w.data(), params.conv1_b.data());
    let a1 = relu(&z1);
    let z2 = conv2d(c2, &a1, params.conv2_w.data(), params.conv2_b.data());
    let a2 = relu(&z2);
    let logits = conv2d(ch, &a2, params.hm_w.data(), params.hm_b.data());
    let reg = conv2d(cr, &a2, params.reg_w.data(), params.reg_b.data());
    let heatmap = logits.iter().map(|&z| sigmoid(z)).collect();
    ForwardOutput {
        heatmap: Tensor::from_vec(&[1, g, g], heatmap).expect("shape"),
        logits: Tensor::from_vec(&[1, g, g], logits).expect("shape"),
        reg: Tensor::from_vec(&[REG_CHANNELS, g, g], reg).expect("shape"),
        tape: Tape {
            input: x,
            z1,
            a1,
            z2,
            a2,
        },
    }
}

/// Parameter gradients given upstream gradients on heatmap logits and the
/// regression map.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    tape: &Tape<T>,
    d_logits: &[T],
    d_reg: &[T],
) -> ModelParams<T> {
    let plane = d_logits.len();
    let g = (plane as f64).sqrt() as usize;
    let [c1, c2, ch, cr] = shapes(g);
    let mut grads = ModelParams::zeros();
    let d_a2_hm = conv2d_backward(
        ch,
        &tape.a2,
        params.hm_w.data(),
        d_logits,
        grads.hm_w.data_mut(),
        grads.hm_b.data_mut(),
        true,
    )
    .expect("input grad requested");
    let d_a2_reg = conv2d_backward(
        cr,
        &tape.a2,
        params.reg_w.data(),
        d_reg,
        grads.reg_w.data_mut(),
        grads.reg_b.data_mut(),
        true,
    )
    .expect("input grad requested");
    let d_z2: Vec<T> = d_a2_hm
        .iter()
        .zip(&d_a2_reg)
        .zip(&tape.z2)
        .map(|((&a, &b), &z)| if z > T::zero() { a + b } else { T::zero() })
        .collect();
    let d_a1 = conv2d_backward(
        c2,
        &tape.a1,
        params.conv2_w.data(),
        &d_z2,
        grads.conv2_w.data_mut(),
        grads.conv2_b.data_mut(),
        true,
    )
    .expect("input grad requested");
    let d_z1: Vec<T> = d_a1
        .iter()
        .zip(&tape.z1)
        .map(|(&a, &z)| if z > T::zero() { a } else { T::zero() })
        .collect();
    conv2d_backward(
        c1,
        &tape.input,
        params.conv1_w.data(),
        &d_z1,
        grads.conv1_w.data_mut(),
        grads.conv1_b.data_mut(),
        false,
    );
    grads
}

/// Supervision for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets<T> {
    /// Gaussian-splatted centers `[1, G, G]`, exactly 1 at center cells.
    pub heatmap: Tensor<T>,
    /// `(w, l, dx, dy)` at center cells, zero elsewhere.
    pub reg: Tensor<T>,
    /// Flat indices of center cells, each listed once, in first-seen order.
    pub mask: Vec<usize>,
}

/// Gaussian radius in cells for a box: `max(1, min(w, l) / (3 * cell))`.
pub fn gaussian_radius(w: f64, l: f64, cell: f64) -> f64 {
    (w.min(l) / (3.0 * cell)).max(1.0)
}

/// Targets for a scene. When several boxes share a center cell the cell is
/// masked once and the later box supplies the regression target.
pub fn make_targets<T: Scalar>(scene: &Scene, spec: &RasterSpec) -> Targets<T> {
    let g = spec.grid;
    let cell = spec.cell_size();
    let mut hm = vec![0.0f64; g * g];
    let mut reg = Tensor::zeros(&[REG_CHANNELS, g, g]);
    let mut mask = Vec::new();
    for b in &scene.boxes {
        let (ix, iy) = (spec.cell_of(b.cx), spec.cell_of(b.cy));
        let r = gaussian_radius(b.w, b.l, cell);
        let sigma = (2.0 * r + 1.0) / 6.0;
        let reach = r.ceil() as isize;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (x, y) = (ix as isize + dx, iy as isize + dy);
                if x < 0 || y < 0 || x >= g as isize || y >= g as isize {
                    continue;
                }
                let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                let idx = y as usize * g + x as usize;
                hm[idx] = hm[idx].max(v);
            }
        }
        let idx = iy * g + ix;
        if !mask.contains(&idx) {
            mask.push(idx);
        }
        let plane = g * g;
        let d = reg.data_mut();
        d[idx] = T::lit(b.w);
        d[plane + idx] = T::lit(b.l);
        d[2 * plane + idx] = T::lit(b.cx / cell - (ix as f64 + 0.5));
        d[3 * plane + idx] = T::lit(b.cy / cell - (iy as f64 + 0.5));
    }
    Targets {
        heatmap: Tensor::from_vec(&[1, g, g], hm.into_iter().map(T::lit).collect()).expect("shape"),
        reg,
        mask,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown<T> {
    pub heatmap: T,
    pub reg: T,
    pub total: T,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn is_finite(&self) -> bool {
        self.heatmap.is_finite() && self.reg.is_finite() && self.total.is_finite()
    }
}

/// Penalty-reduced focal loss of one pixel in probability space.
pub fn focal_loss_pixel<T: Scalar>(p: T, y: T) -> T {
    let one = T::one();
    if y == one {
        if p == one {
            return T::zero();
        }
        -(one - p).powi(FOCAL_ALPHA) * p.ln()
    } else {
        if p == T::zero() {
            return T::zero();
        }
        -(one - y).powi(FOCAL_BETA) * p.powi(FOCAL_ALPHA) * (one - p).ln()
    }
}

/// Per-scene loss plus its gradients with respect to heatmap logits and the
/// regression map.
pub fn scene_loss<T: Scalar>(out: &ForwardOutput<T>, targets: &Targets<T>) -> (LossBreakdown<T>, Vec<T>, Vec<T>) {
    let one = T::one();
    let alpha = T::from_usize_lossy(FOCAL_ALPHA as usize);
    let logits = out.logits.data();
    let y = targets.heatmap.data();
    let num_pos = y.iter().filter(|&&v| v == one).count().max(1);
    let norm = T::from_usize_lossy(num_pos);
    let mut hm_loss = T::zero();
    let mut d_logits = vec![T::zero(); logits.len()];
    for i in 0..logits.len() {
        let z = logits[i];
        let p = sigmoid(z);
        let log_p = -softplus(-z);
        let log_1mp = -softplus(z);
        if y[i] == one {
            let q = (one - p).powi(FOCAL_ALPHA);
            hm_loss = hm_loss - q * log_p;
            d_logits[i] = q * (alpha * p * log_p - (one - p)) / norm;
        } else {
            let w = (one - y[i]).powi(FOCAL_BETA);
            let pa = p.powi(FOCAL_ALPHA);
            hm_loss = hm_loss - w * pa * log_1mp;
            d_logits[i] = w * pa * (p - alpha * (one - p) * log_1mp) / norm;
        }
    }
    hm_loss = hm_loss / norm;

    let plane = logits.len();
    let reg = out.reg.data();
    let t = targets.reg.data();
    let mut d_reg = vec![T::zero(); reg.len()];
    let reg_norm = T::from_usize_lossy(targets.mask.len().max(1));
    let mut reg_loss = T::zero();
    for &idx in &targets.mask {
        for c in 0..REG_CHANNELS {
            let k = c * plane + idx;
            let diff = reg[k] - t[k];
            reg_loss = reg_loss + diff.abs();
            if diff != T::zero() {
                d_reg[k] = diff.signum() / reg_norm;
            }
        }
    }
    reg_loss = reg_loss / reg_norm;
    let lambda = T::lit(REG_WEIGHT);
    d_reg.iter_mut().for_each(|v| *v = *v * lambda);
    (
        LossBreakdown {
            heatmap: hm_loss,
            reg: reg_loss,
            total: hm_loss + lambda * reg_loss,
        },
        d_logits,
        d_reg,
    )
}

/// A scene rasterized and paired with its targets.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub input: Tensor<T>,
    pub targets: Targets<T>,
}

impl<T: Scalar> Sample<T> {
    pub fn from_scene(scene: &Scene, spec: &RasterSpec) -> Self {
        Self {
            input: rasterize(scene, spec),
            targets: make_targets(scene, spec),
        }
    }
}

pub fn prepare_samples<T: Scalar>(scenes: &[Scene], spec: &RasterSpec) -> Vec<Sample<T>> {
    scenes.iter().map(|s| Sample::from_scene(s, spec)).collect()
}

/// Batch-mean loss and gradients.
pub fn loss_and_gradients<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[&Sample<T>],
) -> Result<(LossBreakdown<T>, ModelParams<T>)> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let mut grads = ModelParams::zeros();
    let mut loss: LossBreakdown<T> = LossBreakdown::default();
    for sample in batch {
        let out = forward(params, &sample.input);
        let (l, d_logits, d_reg) = scene_loss(&out, &sample.targets);
        let g = backward(params, &out.tape, &d_logits, &d_reg);
        for (acc, part) in grads.tensors_mut().into_iter().zip(g.tensors()) {
            acc.axpy(T::one(), part);
        }
        loss.heatmap = loss.heatmap + l.heatmap;
        loss.reg = loss.reg + l.reg;
        loss.total = loss.total + l.total;
    }
    let inv = T::one() / T::from_usize_lossy(batch.len());
    grads.scale(inv);
    loss.heatmap = loss.heatmap * inv;
    loss.reg = loss.reg * inv;
    loss.total = loss.total * inv;
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::NonFiniteLoss(format!(
            "heatmap={} reg={} over {} samples",
            loss.heatmap,
            loss.reg,
            batch.len()
        )));
    }
    Ok((loss, grads))
}

/// Batch-mean loss without gradients.
pub fn batch_loss<T: Scalar>(params: &ModelParams<T>, batch: &[&Sample<T>]) -> LossBreakdown<T> {
    let mut loss: LossBreakdown<T> = LossBreakdown::default();
    for sample in batch {
        let (l, _, _) = scene_loss(&forward(params, &sample.input), &sample.targets);
        loss.heatmap = loss.heatmap + l.heatmap;
        loss.reg = loss.reg + l.reg;
        loss.total = loss.total + l.total;
    }
    let inv = T::one() / T::from_usize_lossy(batch.len().max(1));
    LossBreakdown {
        heatmap: loss.heatmap * inv,
        reg: loss.reg * inv,
        total: loss.total * inv,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<T> {
    pub scene_id: u32,
    pub cx: T,
    pub cy: T,
    pub w: T,
    pub l: T,
    pub score: T,
}

/// 3x3 local-maximum peaks above `score_threshold`, best `max_dets` first.
///
/// A cell survives when it is strictly greater than every neighbor with a
/// smaller flat index and no smaller than the others, so a plateau yields its
/// first cell only.
pub fn decode<T: Scalar>(
    heatmap: &Tensor<T>,
    reg: &Tensor<T>,
    spec: &RasterSpec,
    scene_id: u32,
    score_threshold: T,
    max_dets: usize,
) -> Vec<Detection<T>> {
    let g = spec.grid;
    let plane = g * g;
    let hm = heatmap.data();
    let r = reg.data();
    assert_eq!(hm.len(), plane, "heatmap does not match the raster grid");
    assert_eq!(r.len(), REG_CHANNELS * plane, "regression map does not match the raster grid");
    let cell = T::lit(spec.cell_size());
    let half = T::lit(0.5);
    let mut peaks: Vec<(usize, T)> = Vec::new();
    for y in 0..g {
        for x in 0..g {
            let idx = y * g + x;
            let v = hm[idx];
            if !(v > score_threshold) {
                continue;
            }
            let mut keep = true;
            'nb: for ny in y.saturating_sub(1)..=(y + 1).min(g - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(g - 1) {
                    let n = ny * g + nx;
                    if n == idx {
                        continue;
                    }
                    let beaten = if n < idx { hm[n] >= v } else { hm[n] > v };
                    if beaten {
                        keep = false;
                        break 'nb;
                    }
                }
            }
            if keep {
                peaks.push((idx, v));
            }
        }
    }
    peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores").then(a.0.cmp(&b.0)));
    peaks.truncate(max_dets);
    peaks
        .into_iter()
        .map(|(idx, score)| {
            let (x, y) = (idx % g, idx / g);
            Detection {
                scene_id,
                cx: (T::from_usize_lossy(x) + half + r[2 * plane + idx]) * cell,
                cy: (T::from_usize_lossy(y) + half + r[3 * plane + idx]) * cell,
                w: r[idx],
                l: r[plane + idx],
                score,
            }
        })
        .collect()
}

/// Forward pass and decode for one scene.
pub fn detect<T: Scalar>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    spec: &RasterSpec,
    scene_id: u32,
    score_threshold: T,
    max_dets: usize,
) -> Vec<Detection<T>> {
    let out = forward(params, input);
    decode(&out.heatmap, &out.reg, spec, scene_id, score_threshold, max_dets)
}

/// On-disk model: raster geometry plus shape-tagged tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub raster: RasterSpec,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl ModelCheckpoint {
    pub fn new<T: Scalar>(params: &ModelParams<T>, raster: RasterSpec) -> Self {
        Self {
            raster,
            tensors: params.to_records(),
        }
    }

    pub fn params<T: Scalar>(&self) -> Result<ModelParams<T>> {
        ModelParams::from_records(&self.tensors)
    }

    pub fn to_json(&self) -> Vec<u8> {
        crate::io::canonical_json(self)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let ckpt: Self = parse_json(bytes)?;
        ckpt.raster.validate()?;
        ckpt.params::<f64>()?;
        Ok(ckpt)
    }
}
