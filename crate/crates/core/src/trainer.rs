//! Executes a [`SchedulePlan`] against the detector: one Adam step per plan
//! batch, in plan order, under a one-cycle learning rate.
//!
//! The trainer makes no data-ordering decisions of its own; alternation and
//! source reduction are entirely encoded in the plan.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detector::{loss_and_gradients, LossBreakdown, ModelCheckpoint, ModelParams, RasterSpec, Sample};
use crate::error::{parse_json, Error, Result};
use crate::scalar::Scalar;
use crate::schedule::{BatchAssignment, Domain, SchedulePlan};
use crate::tensor::TensorRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub max_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub final_lr_factor: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Model initialization seed.
    pub seed: u64,
    pub raster: RasterSpec,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            max_lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_fraction: 0.4,
            final_lr_factor: 1e-3,
            clip_norm: 10.0,
            seed: 0,
            raster: RasterSpec::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::config("max_lr must be positive"));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::config("warmup_fraction must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 || !(self.clip_norm > 0.0) {
            return Err(Error::config("eps and clip_norm must be positive, weight_decay non-negative"));
        }
        if !(self.final_lr_factor > 0.0 && self.final_lr_factor <= 1.0) {
            return Err(Error::config("final_lr_factor must lie in (0, 1]"));
        }
        self.raster.validate()
    }
}

/// One-cycle learning rate: linear ramp from `max_lr / 10` to `max_lr` over
/// the first `floor(warmup_fraction * total)` steps, then cosine decay to
/// `max_lr * final_lr_factor` at the last step.
pub fn lr_at(step: u64, total_steps: u64, cfg: &TrainerConfig) -> f64 {
    let max = cfg.max_lr;
    let start = max / 10.0;
    let end = max * cfg.final_lr_factor;
    let warmup = (cfg.warmup_fraction * total_steps as f64).floor() as u64;
    if step < warmup {
        return start + (max - start) * step as f64 / warmup as f64;
    }
    let span = total_steps.saturating_sub(1).saturating_sub(warmup);
    if span == 0 {
        return max;
    }
    let progress = (step - warmup).min(span) as f64 / span as f64;
    end + (max - end) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Bias-corrected Adam update on flat slices with decoupled weight decay.
/// `step` is the 1-based optimizer step.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: T,
    step: u64,
    cfg: &TrainerConfig,
) {
    let one = T::one();
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let eps = T::lit(cfg.eps);
    let wd = T::lit(cfg.weight_decay);
    let c1 = one - b1.powi(step as i32);
    let c2 = one - b2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] = param[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * param[i]);
    }
}

/// Model weights plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState<T> {
    pub params: ModelParams<T>,
    pub adam_m: ModelParams<T>,
    pub adam_v: ModelParams<T>,
    /// Optimizer steps taken so far in this run.
    pub global_step: u64,
    /// Last completed epoch (0 before training).
    pub epoch: u32,
}

impl<T: Scalar> TrainerState<T> {
    pub fn fresh(params: ModelParams<T>) -> Self {
        Self {
            params,
            adam_m: ModelParams::zeros(),
            adam_v: ModelParams::zeros(),
            global_step: 0,
            epoch: 0,
        }
    }

    pub fn init(seed: u64) -> Self {
        Self::fresh(ModelParams::init(seed))
    }

    fn apply(&mut self, grads: &ModelParams<T>, lr: T, cfg: &TrainerConfig) {
        let step = self.global_step + 1;
        let params = self.params.tensors_mut();
        let ms = self.adam_m.tensors_mut();
        let vs = self.adam_v.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
            adam_update(p.data_mut(), g.data(), m.data_mut(), v.data_mut(), lr, step, cfg);
        }
        self.global_step = step;
    }
}

/// On-disk trainer checkpoint: the model checkpoint plus optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerCheckpoint {
    pub model: ModelCheckpoint,
    pub adam_m: BTreeMap<String, TensorRecord>,
    pub adam_v: BTreeMap<String, TensorRecord>,
    pub global_step: u64,
    pub epoch: u32,
}

impl TrainerCheckpoint {
    pub fn new<T: Scalar>(state: &TrainerState<T>, raster: RasterSpec) -> Self {
        Self {
            model: ModelCheckpoint::new(&state.params, raster),
            adam_m: state.adam_m.to_records(),
            adam_v: state.adam_v.to_records(),
            global_step: state.global_step,
            epoch: state.epoch,
        }
    }

    pub fn state<T: Scalar>(&self) -> Result<TrainerState<T>> {
        Ok(TrainerState {
            params: self.model.params()?,
            adam_m: ModelParams::from_records(&self.adam_m)?,
            adam_v: ModelParams::from_records(&self.adam_v)?,
            global_step: self.global_step,
            epoch: self.epoch,
        })
    }

    pub fn to_json(&self) -> Vec<u8> {
        crate::io::canonical_json(self)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let ck: Self = parse_json(bytes)?;
        ck.state::<f64>()?;
        Ok(ck)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: u32,
    pub step: u64,
    pub stage: u32,
    pub domain: Domain,
    pub lr: f64,
    pub loss: LossBreakdown<f64>,
    pub clipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: u32,
    pub stage: u32,
    pub steps: usize,
    pub mean_total_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochSummary>,
    /// Epochs after which the stage changes, plus the final epoch.
    pub stage_boundaries: Vec<u32>,
}

pub const RUNLOG_HEADER: &str = "epoch,step,stage,domain,lr,heatmap_loss,reg_loss,total_loss";

impl RunLog {
    pub fn clip_count(&self) -> usize {
        self.steps.iter().filter(|s| s.clipped).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.steps.len() + 1));
        out.push_str(RUNLOG_HEADER);
        out.push('\n');
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.epoch,
                s.step,
                s.stage,
                s.domain,
                s.lr,
                s.loss.heatmap,
                s.loss.reg,
                s.loss.total
            )
            .unwrap();
        }
        out
    }
}

/// A snapshot taken after `epoch` completed.
#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    pub epoch: u32,
    pub stage: u32,
    pub state: TrainerState<T>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub state: TrainerState<T>,
    pub log: RunLog,
    /// One per stage boundary; the last one is the final state.
    pub checkpoints: Vec<Snapshot<T>>,
}

fn check_sizes<T>(plan: &SchedulePlan, source: &[Sample<T>], target: &[Sample<T>]) -> Result<()> {
    for (domain, have, want) in [
        (Domain::Source, source.len(), plan.source_size),
        (Domain::Target, target.len(), plan.target_size),
    ] {
        let used = plan.epochs.iter().any(|e| e.batches.iter().any(|b| b.domain == domain));
        if used && have != want {
            return Err(Error::Plan(format!(
                "plan expects {want} {domain} samples, {have} supplied"
            )));
        }
    }
    Ok(())
}

/// Runs the plan from `state` (resuming after `state.epoch`). The observer
/// sees every executed batch in order.
pub fn train_with_observer<T: Scalar>(
    plan: &SchedulePlan,
    source: &[Sample<T>],
    target: &[Sample<T>],
    mut state: TrainerState<T>,
    cfg: &TrainerConfig,
    observer: &mut dyn FnMut(&StepRecord, &BatchAssignment),
) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    plan.validate()?;
    check_sizes(plan, source, target)?;
    let total_steps = plan.total_batches() as u64;
    let boundaries = plan.stage_boundaries();
    let clip = T::lit(cfg.clip_norm);
    let mut log = RunLog {
        stage_boundaries: boundaries.clone(),
        ..RunLog::default()
    };
    let mut checkpoints = Vec::new();

    for ep in plan.epochs.iter().skip(state.epoch as usize) {
        let mut epoch_loss = 0.0;
        for batch in &ep.batches {
            let pool = match batch.domain {
                Domain::Source => source,
                Domain::Target => target,
            };
            let samples: Vec<&Sample<T>> = batch.ids.iter().map(|&id| &pool[id as usize]).collect();
            let (loss, mut grads) = loss_and_gradients(&state.params, &samples).map_err(|e| Error::NonFinite {
                epoch: ep.epoch,
                step: state.global_step,
                domain: batch.domain.to_string(),
                detail: e.to_string(),
            })?;
            let norm = grads.global_norm();
            let clipped = norm > clip;
            if clipped {
                grads.scale(clip / norm);
            }
            let lr = lr_at(state.global_step, total_steps, cfg);
            let record = StepRecord {
                epoch: ep.epoch,
                step: state.global_step,
                stage: ep.stage,
                domain: batch.domain,
                lr,
                loss: LossBreakdown {
                    heatmap: loss.heatmap.to_f64_lossy(),
                    reg: loss.reg.to_f64_lossy(),
                    total: loss.total.to_f64_lossy(),
                },
                clipped,
            };
            state.apply(&grads, T::lit(lr), cfg);
            if !state.params.all_finite() {
                return Err(Error::NonFinite {
                    epoch: ep.epoch,
                    step: record.step,
                    domain: batch.domain.to_string(),
                    detail: "parameters became non-finite after the update".into(),
                });
            }
            epoch_loss += record.loss.total;
            observer(&record, batch);
            log.steps.push(record);
        }
        state.epoch = ep.epoch;
        log.epochs.push(EpochSummary {
            epoch: ep.epoch,
            stage: ep.stage,
            steps: ep.batches.len(),
            mean_total_loss: if ep.batches.is_empty() {
                0.0
            } else {
                epoch_loss / ep.batches.len() as f64
            },
        });
        if boundaries.contains(&ep.epoch) {
            checkpoints.push(Snapshot {
                epoch: ep.epoch,
                stage: ep.stage,
                state: state.clone(),
            });
        }
    }
    Ok(TrainOutput {
        state,
        log,
        checkpoints,
    })
}

pub fn train<T: Scalar>(
    plan: &SchedulePlan,
    source: &[Sample<T>],
    target: &[Sample<T>],
    state: TrainerState<T>,
    cfg: &TrainerConfig,
) -> Result<TrainOutput<T>> {
    train_with_observer(plan, source, target, state, cfg, &mut |_, _| {})
}
