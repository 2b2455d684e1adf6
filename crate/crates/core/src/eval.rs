//! Center-distance average precision over pooled detections.
//!
//! Detections are ranked globally by score, then greedily matched to the
//! nearest unclaimed ground-truth center of the same scene within the
//! distance threshold. AP is 101-point interpolated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Scene;
use crate::detector::{decode, forward, Detection, ModelParams, RasterSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub score_threshold: f64,
    pub max_dets: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.25, 0.5, 1.0, 2.0],
            score_threshold: 0.1,
            max_dets: 50,
        }
    }
}

/// Formats a threshold as a map key: `0.25`, `0.5`, `1.0`, `2.0`.
pub fn threshold_key(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{t:.1}")
    } else {
        format!("{t}")
    }
}

/// Sorts by descending score; ties by scene id, then by original position.
pub fn rank_detections<T: Scalar>(dets: &mut Vec<Detection<T>>) {
    let mut indexed: Vec<(usize, Detection<T>)> = dets.drain(..).enumerate().collect();
    indexed.sort_by(|(ia, a), (ib, b)| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then(a.scene_id.cmp(&b.scene_id))
            .then(ia.cmp(ib))
    });
    dets.extend(indexed.into_iter().map(|(_, d)| d));
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// `true` for a true positive, in ranked order.
    pub labels: Vec<bool>,
    pub n_gt: usize,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn fp(&self) -> usize {
        self.labels.len() - self.tp()
    }

    pub fn fn_count(&self) -> usize {
        self.n_gt - self.tp()
    }
}

/// Ground-truth centers keyed by scene id.
pub type GroundTruth = BTreeMap<u32, Vec<[f64; 2]>>;

pub fn ground_truth(scenes: &[Scene]) -> GroundTruth {
    scenes
        .iter()
        .map(|s| (s.id, s.boxes.iter().map(|b| [b.cx, b.cy]).collect()))
        .collect()
}

/// Greedy matching of ranked detections. A detection claims the nearest
/// unclaimed center in its scene at distance strictly below `threshold`
/// (lowest index on exact ties).
pub fn match_detections<T: Scalar>(ranked: &[Detection<T>], gt: &GroundTruth, threshold: f64) -> MatchResult {
    let mut claimed: BTreeMap<u32, Vec<bool>> = gt.iter().map(|(&id, c)| (id, vec![false; c.len()])).collect();
    let n_gt = gt.values().map(Vec::len).sum();
    let labels = ranked
        .iter()
        .map(|d| {
            let (Some(centers), Some(taken)) = (gt.get(&d.scene_id), claimed.get_mut(&d.scene_id)) else {
                return false;
            };
            let (x, y) = (d.cx.to_f64_lossy(), d.cy.to_f64_lossy());
            let best = centers
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken[*i])
                .map(|(i, c)| (i, (x - c[0]).hypot(y - c[1])))
                .filter(|&(_, dist)| dist < threshold)
                .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite distance").then(a.0.cmp(&b.0)));
            match best {
                Some((i, _)) => {
                    taken[i] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    MatchResult { labels, n_gt }
}

/// 101-point interpolated AP: mean over `r = 0, 0.01, ..., 1` of the best
/// precision among ranks with recall `>= r`. Recall comparisons are exact
/// integer arithmetic. With no ground truth, AP is 1 if there are also no
/// detections and 0 otherwise.
pub fn average_precision<T: Scalar>(labels: &[bool], n_gt: usize) -> T {
    if n_gt == 0 {
        return if labels.is_empty() { T::one() } else { T::zero() };
    }
    let mut tp_at = Vec::with_capacity(labels.len());
    let mut tp = 0usize;
    for &l in labels {
        tp += usize::from(l);
        tp_at.push(tp);
    }
    let precision: Vec<T> = tp_at
        .iter()
        .enumerate()
        .map(|(k, &t)| T::from_usize_lossy(t) / T::from_usize_lossy(k + 1))
        .collect();
    let mut best_after = precision.clone();
    for k in (0..best_after.len().saturating_sub(1)).rev() {
        best_after[k] = best_after[k].max(best_after[k + 1]);
    }
    let mut sum = T::zero();
    let mut k = 0usize;
    for i in 0..=100usize {
        while k < tp_at.len() && tp_at[k] * 100 < i * n_gt {
            k += 1;
        }
        if k < tp_at.len() {
            sum = sum + best_after[k];
        }
    }
    sum / T::from_usize_lossy(101)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalResult {
    pub ap: BTreeMap<String, f64>,
    pub mean_ap: f64,
    pub counts: BTreeMap<String, Counts>,
}

impl EvalResult {
    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        self.ap.get(&threshold_key(threshold)).copied()
    }

    pub fn to_json(&self) -> Vec<u8> {
        crate::io::canonical_json(self)
    }
}

/// AP at every threshold for already-decoded detections.
pub fn evaluate_detections<T: Scalar>(mut dets: Vec<Detection<T>>, gt: &GroundTruth, thresholds: &[f64]) -> EvalResult {
    rank_detections(&mut dets);
    let mut ap = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut total = 0.0;
    for &t in thresholds {
        let m = match_detections(&dets, gt, t);
        let v: f64 = average_precision(&m.labels, m.n_gt);
        total += v;
        ap.insert(threshold_key(t), v);
        counts.insert(
            threshold_key(t),
            Counts {
                tp: m.tp(),
                fp: m.fp(),
                fn_: m.fn_count(),
            },
        );
    }
    EvalResult {
        ap,
        mean_ap: if thresholds.is_empty() { 0.0 } else { total / thresholds.len() as f64 },
        counts,
    }
}

/// Runs the detector on pre-rasterized inputs (`inputs[i]` belongs to
/// `scenes[i]`) and scores the pooled detections.
pub fn evaluate_inputs<T: Scalar>(
    params: &ModelParams<T>,
    spec: &RasterSpec,
    inputs: &[Tensor<T>],
    scenes: &[Scene],
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    if inputs.len() != scenes.len() {
        return Err(Error::config("one raster per validation scene is required"));
    }
    let mut dets = Vec::new();
    for (input, scene) in inputs.iter().zip(scenes) {
        let out = forward(params, input);
        if !out.heatmap.all_finite() || !out.reg.all_finite() {
            return Err(Error::NonFiniteLoss(format!("non-finite detector output on scene {}", scene.id)));
        }
        dets.extend(decode(
            &out.heatmap,
            &out.reg,
            spec,
            scene.id,
            T::lit(cfg.score_threshold),
            cfg.max_dets,
        ));
    }
    Ok(evaluate_detections(dets, &ground_truth(scenes), &cfg.thresholds))
}

pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    spec: &RasterSpec,
    scenes: &[Scene],
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    let inputs: Vec<Tensor<T>> = scenes.iter().map(|s| crate::detector::rasterize(s, spec)).collect();
    evaluate_inputs(params, spec, &inputs, scenes, cfg)
}
