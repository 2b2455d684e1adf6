//! Experiment matrix: every method trained and evaluated per seed on shared
//! datasets, splits and validation scenes.
//!
//! Datasets depend only on the domain parameters. A seed selects the labeled
//! target split, the model initialization and the schedule shuffles, so all
//! methods sharing a seed see the same split and the same validation set.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{generate_scene, make_split, DomainParams, Scene, SplitSpec};
use crate::detector::{prepare_samples, rasterize, Sample};
use crate::error::{parse_json, Error, Result};
use crate::eval::{evaluate_inputs, EvalConfig, EvalResult};
use crate::io::{canonical_json, write_file};
use crate::rng::splitmix64;
use crate::schedule::{build_plan, DatasetRef, Domain, GbaConfig, ScheduleMode, SchedulePlan};
use crate::tensor::Tensor;
use crate::trainer::{train, TrainOutput, TrainerCheckpoint, TrainerConfig, TrainerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oracle,
    SourceOnly,
    TargetOnly,
    FineTune,
    Ba,
    Gba,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Oracle,
        Method::SourceOnly,
        Method::TargetOnly,
        Method::FineTune,
        Method::Ba,
        Method::Gba,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Oracle => "Oracle",
            Method::SourceOnly => "SourceOnly",
            Method::TargetOnly => "TargetOnly",
            Method::FineTune => "FineTune",
            Method::Ba => "BA",
            Method::Gba => "GBA",
        }
    }

    /// Whether the labeled target split affects this method.
    pub fn uses_split(self) -> bool {
        !matches!(self, Method::Oracle | Method::SourceOnly)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('_', "").to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

/// Shipped domain parameterizations. The target domain has sparser, noisier
/// objects and larger boxes; the source presets differ in how far they sit
/// from it.
pub mod presets {
    use super::DomainParams;
    use crate::error::{Error, Result};

    pub const SOURCE_NAMES: [&str; 3] = ["dense", "medium", "coarse"];
    pub const DEFAULT_SOURCE: &str = "dense";

    pub fn target() -> DomainParams {
        DomainParams {
            scene_extent: 16.0,
            objects_per_scene: [2, 6],
            points_per_object: 9.0,
            point_noise_sigma: 0.15,
            size_mean: [2.0, 4.4],
            size_std: [0.2, 0.4],
            clutter_points: 40.0,
            seed: 0x7A46_0001,
        }
    }

    pub fn source(name: &str) -> Result<DomainParams> {
        let base = DomainParams {
            scene_extent: 16.0,
            objects_per_scene: [3, 8],
            points_per_object: 28.0,
            point_noise_sigma: 0.05,
            size_mean: [1.6, 3.6],
            size_std: [0.15, 0.3],
            clutter_points: 15.0,
            seed: 0x5EC0_0001,
        };
        match name {
            "dense" => Ok(base),
            "medium" => Ok(DomainParams {
                points_per_object: 20.0,
                point_noise_sigma: 0.08,
                size_mean: [1.8, 4.0],
                clutter_points: 25.0,
                seed: 0x5EC0_0002,
                ..base
            }),
            "coarse" => Ok(DomainParams {
                points_per_object: 14.0,
                point_noise_sigma: 0.1,
                size_mean: [1.9, 4.2],
                clutter_points: 30.0,
                seed: 0x5EC0_0003,
                ..base
            }),
            other => Err(Error::config(format!(
                "unknown source preset {other:?}; expected one of {SOURCE_NAMES:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset name recorded for reporting; `source` holds the actual values.
    pub source_preset: String,
    pub source: DomainParams,
    pub target: DomainParams,
    pub source_scenes: usize,
    pub target_scenes: usize,
    pub val_scenes: usize,
    pub methods: Vec<Method>,
    /// Labeled target split, in percent.
    pub split_percent: u64,
    /// Smaller split for the label-budget ablation.
    pub ablation_percent: u64,
    pub ablation_methods: Vec<Method>,
    /// Shared schedule settings; `mode`, `seed` and `start_domain` are set
    /// per method and run.
    pub schedule: GbaConfig,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source_preset: presets::DEFAULT_SOURCE.into(),
            source: presets::source(presets::DEFAULT_SOURCE).expect("default preset exists"),
            target: presets::target(),
            source_scenes: 400,
            target_scenes: 150,
            val_scenes: 200,
            methods: Method::ALL.to_vec(),
            split_percent: 10,
            ablation_percent: 5,
            ablation_methods: vec![Method::FineTune, Method::Gba],
            schedule: GbaConfig {
                batch_size: 8,
                ..GbaConfig::default()
            },
            // a small labeled target pool tolerates a hotter schedule than the
            // trainer's own defaults
            trainer: TrainerConfig {
                max_lr: 3e-3,
                final_lr_factor: 0.1,
                ..TrainerConfig::default()
            },
            eval: EvalConfig::default(),
            seeds: (0..5).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = parse_json(bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Vec<u8> {
        canonical_json(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.target.validate()?;
        self.schedule.validate()?;
        self.trainer.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must be non-empty"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods must be non-empty"));
        }
        if self.source_scenes == 0 || self.target_scenes == 0 || self.val_scenes == 0 {
            return Err(Error::config("dataset sizes must be at least 1"));
        }
        SplitSpec::percent(self.split_percent, 0)?;
        SplitSpec::percent(self.ablation_percent, 0)?;
        for p in [&self.source, &self.target] {
            if p.scene_extent != self.trainer.raster.extent {
                return Err(Error::config(format!(
                    "raster extent {} differs from scene extent {}",
                    self.trainer.raster.extent, p.scene_extent
                )));
            }
        }
        if self.schedule.mode != ScheduleMode::Gba {
            return Err(Error::config("schedule.mode is set per method; leave it as \"gba\""));
        }
        Ok(())
    }

    /// Every `(method, split_percent)` cell of the matrix, in report order.
    pub fn cells(&self) -> Vec<(Method, u64)> {
        let mut cells: Vec<(Method, u64)> = self.methods.iter().map(|&m| (m, self.split_percent)).collect();
        for &m in &self.ablation_methods {
            if m.uses_split() && self.ablation_percent != self.split_percent {
                cells.push((m, self.ablation_percent));
            }
        }
        cells
    }
}

/// Formats a percent as a fraction with two decimals (`10` -> `0.10`).
pub fn split_fraction_label(percent: u64) -> String {
    format!("{}.{:02}", percent / 100, percent % 100)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub epoch: u32,
    pub stage: u32,
    pub source_pool_size: usize,
    pub eval: EvalResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub seed: u64,
    pub split_percent: u64,
    pub eval: EvalResult,
    pub steps: u64,
    pub wallclock_s: f64,
    pub checkpoint: Option<PathBuf>,
    pub stages: Vec<StageResult>,
}

/// Everything a run produced, kept in memory for determinism checks.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub row: ResultRow,
    pub checkpoint: Vec<u8>,
    /// One CSV per training phase.
    pub logs: Vec<String>,
}

/// Datasets and precomputed rasters shared by every run.
pub struct Experiment {
    pub config: ExperimentConfig,
    source: Vec<Sample<f64>>,
    target: Vec<Sample<f64>>,
    val_scenes: Vec<Scene>,
    val_inputs: Vec<Tensor<f64>>,
    pretrained: BTreeMap<u64, (TrainerState<f64>, u64, Vec<String>)>,
}

const INIT_TAG: u64 = 0x494E_4954_0000_0000;
const SCHEDULE_TAG: u64 = 0x5343_4845_0000_0000;
const SPLIT_TAG: u64 = 0x5350_4C49_0000_0000;

fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ tag)
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.trainer.raster;
        let gen = |p: &DomainParams, range: std::ops::Range<usize>| -> Vec<Scene> {
            range.map(|i| generate_scene(p, i as u32)).collect()
        };
        let source = gen(&config.source, 0..config.source_scenes);
        let target_end = config.target_scenes + config.val_scenes;
        let target_all = gen(&config.target, 0..target_end);
        let (target, val_scenes) = target_all.split_at(config.target_scenes);
        let val_inputs = val_scenes.iter().map(|s| rasterize(s, &spec)).collect();
        Ok(Self {
            source: prepare_samples(&source, &spec),
            target: prepare_samples(target, &spec),
            val_scenes: val_scenes.to_vec(),
            val_inputs,
            pretrained: BTreeMap::new(),
            config,
        })
    }

    pub fn val_scenes(&self) -> &[Scene] {
        &self.val_scenes
    }

    /// Labeled target ids for `seed`; equal seeds give nested splits.
    pub fn split(&self, seed: u64, percent: u64) -> Result<Vec<u32>> {
        let spec = SplitSpec::percent(percent, derive_seed(seed, SPLIT_TAG))?;
        Ok(make_split(self.target.len(), &spec))
    }

    pub fn evaluate(&self, state: &TrainerState<f64>) -> Result<EvalResult> {
        evaluate_inputs(
            &state.params,
            &self.config.trainer.raster,
            &self.val_inputs,
            &self.val_scenes,
            &self.config.eval,
        )
    }

    fn schedule(&self, seed: u64, mode: ScheduleMode, start: Domain) -> GbaConfig {
        GbaConfig {
            seed: derive_seed(seed, SCHEDULE_TAG),
            mode,
            start_domain: start,
            ..self.config.schedule.clone()
        }
    }

    fn trainer_config(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            seed: derive_seed(seed, INIT_TAG),
            ..self.config.trainer.clone()
        }
    }

    fn run_plan(
        &self,
        plan: &SchedulePlan,
        source: &[Sample<f64>],
        target: &[Sample<f64>],
        init: TrainerState<f64>,
        seed: u64,
    ) -> Result<TrainOutput<f64>> {
        train(plan, source, target, init, &self.trainer_config(seed))
    }

    /// Source-only training for `seed`, computed once and reused by
    /// fine-tuning.
    fn pretrain(&mut self, seed: u64) -> Result<(TrainerState<f64>, u64, Vec<String>)> {
        if let Some(hit) = self.pretrained.get(&seed) {
            return Ok(hit.clone());
        }
        let sched = self.schedule(seed, ScheduleMode::SingleDomain, Domain::Source);
        let plan = build_plan(&sched, DatasetRef::source(self.source.len()), DatasetRef::target(0))?;
        let init = TrainerState::init(self.trainer_config(seed).seed);
        let out = self.run_plan(&plan, &self.source, &[], init, seed)?;
        let steps = out.state.global_step;
        let entry = (out.state, steps, vec![out.log.to_csv()]);
        self.pretrained.insert(seed, entry.clone());
        Ok(entry)
    }

    /// Runs one `(method, seed, split)` cell.
    pub fn run(&mut self, method: Method, seed: u64, split_percent: u64) -> Result<RunOutcome> {
        let started = Instant::now();
        let split = self.split(seed, split_percent)?;
        let labeled: Vec<Sample<f64>> = split.iter().map(|&i| self.target[i as usize].clone()).collect();
        let init = || TrainerState::init(self.trainer_config(seed).seed);
        let mut stages = Vec::new();
        let (state, steps, logs) = match method {
            Method::SourceOnly => self.pretrain(seed)?,
            Method::Oracle | Method::TargetOnly => {
                let data: &[Sample<f64>] = if method == Method::Oracle { &self.target } else { &labeled };
                let sched = self.schedule(seed, ScheduleMode::SingleDomain, Domain::Target);
                let plan = build_plan(&sched, DatasetRef::source(0), DatasetRef::target(data.len()))?;
                let out = self.run_plan(&plan, &[], data, init(), seed)?;
                (out.state.clone(), out.state.global_step, vec![out.log.to_csv()])
            }
            Method::FineTune => {
                let (pre, pre_steps, mut logs) = self.pretrain(seed)?;
                let sched = self.schedule(seed, ScheduleMode::SingleDomain, Domain::Target);
                let plan = build_plan(&sched, DatasetRef::source(0), DatasetRef::target(labeled.len()))?;
                // fresh optimizer state and a new one-cycle
                let out = self.run_plan(&plan, &[], &labeled, TrainerState::fresh(pre.params), seed)?;
                logs.push(out.log.to_csv());
                (out.state.clone(), pre_steps + out.state.global_step, logs)
            }
            Method::Ba | Method::Gba => {
                let mode = if method == Method::Gba { ScheduleMode::Gba } else { ScheduleMode::Ba };
                let sched = self.schedule(seed, mode, self.config.schedule.start_domain);
                let plan = build_plan(
                    &sched,
                    DatasetRef::source(self.source.len()),
                    DatasetRef::target(labeled.len()),
                )?;
                let out = self.run_plan(&plan, &self.source, &labeled, init(), seed)?;
                if method == Method::Gba {
                    for snap in &out.checkpoints {
                        let ep = &plan.epochs[snap.epoch as usize - 1];
                        stages.push(StageResult {
                            epoch: snap.epoch,
                            stage: snap.stage,
                            source_pool_size: ep.source_pool_size,
                            eval: self.evaluate(&snap.state)?,
                        });
                    }
                }
                (out.state.clone(), out.state.global_step, vec![out.log.to_csv()])
            }
        };
        let eval = self.evaluate(&state)?;
        let checkpoint = TrainerCheckpoint::new(&state, self.config.trainer.raster).to_json();
        Ok(RunOutcome {
            row: ResultRow {
                method,
                seed,
                split_percent,
                eval,
                steps,
                wallclock_s: started.elapsed().as_secs_f64(),
                checkpoint: None,
                stages,
            },
            checkpoint,
            logs,
        })
    }
}

pub const RESULTS_HEADER: &str = "method,seed,split_fraction,mean_ap,ap_0.25,ap_0.5,ap_1.0,ap_2.0,steps,wallclock_s";
pub const STAGES_HEADER: &str = "method,seed,split_fraction,epoch,stage,source_pool_size,mean_ap";

fn ap_or_nan(eval: &EvalResult, key: &str) -> f64 {
    eval.ap.get(key).copied().unwrap_or(f64::NAN)
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:.3}\n",
            r.method,
            r.seed,
            split_fraction_label(r.split_percent),
            r.eval.mean_ap,
            ap_or_nan(&r.eval, "0.25"),
            ap_or_nan(&r.eval, "0.5"),
            ap_or_nan(&r.eval, "1.0"),
            ap_or_nan(&r.eval, "2.0"),
            r.steps,
            r.wallclock_s
        ));
    }
    out
}

pub fn stages_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("{STAGES_HEADER}\n");
    for r in rows {
        for s in &r.stages {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.method,
                r.seed,
                split_fraction_label(r.split_percent),
                s.epoch,
                s.stage,
                s.source_pool_size,
                s.eval.mean_ap
            ));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub method: Method,
    pub seed: u64,
    pub split_percent: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct MatrixResult {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<RunFailure>,
}

fn run_dir(out: &Path, method: Method, seed: u64, percent: u64) -> PathBuf {
    out.join("runs")
        .join(format!("{}_seed{}_da{}", method.name().to_lowercase(), seed, percent))
}

fn sort_rows(rows: &mut [ResultRow], cells: &[(Method, u64)]) {
    let pos = |r: &ResultRow| cells.iter().position(|&c| c == (r.method, r.split_percent));
    rows.sort_by_key(|r| (pos(r), r.seed));
}

/// Runs every cell for every seed. Individual failures are recorded and the
/// matrix continues; with `out`, results are rewritten after every run.
pub fn run_matrix(
    config: ExperimentConfig,
    out: Option<&Path>,
    progress: &mut dyn FnMut(&ResultRow),
) -> Result<MatrixResult> {
    let cells = config.cells();
    let seeds = config.seeds.clone();
    let mut exp = Experiment::prepare(config)?;
    let mut result = MatrixResult::default();
    if let Some(dir) = out {
        write_file(&dir.join("config.json"), &exp.config.to_json())?;
    }
    // source-only first so its training is shared with fine-tuning
    let mut order: Vec<(Method, u64)> = cells.clone();
    order.sort_by_key(|&(m, _)| m != Method::SourceOnly);
    for &seed in &seeds {
        for &(method, percent) in &order {
            match exp.run(method, seed, percent) {
                Ok(mut outcome) => {
                    if let Some(dir) = out {
                        let rd = run_dir(dir, method, seed, percent);
                        let ck = rd.join("checkpoint.json");
                        write_file(&ck, &outcome.checkpoint)?;
                        for (i, log) in outcome.logs.iter().enumerate() {
                            write_file(&rd.join(format!("log_phase{}.csv", i + 1)), log.as_bytes())?;
                        }
                        outcome.row.checkpoint = Some(ck);
                    }
                    progress(&outcome.row);
                    result.rows.push(outcome.row);
                }
                Err(e) => result.failures.push(RunFailure {
                    method,
                    seed,
                    split_percent: percent,
                    error: e.to_string(),
                }),
            }
            sort_rows(&mut result.rows, &cells);
            if let Some(dir) = out {
                persist(dir, &result)?;
            }
        }
    }
    Ok(result)
}

fn persist(dir: &Path, result: &MatrixResult) -> Result<()> {
    write_file(&dir.join("results.csv"), results_csv(&result.rows).as_bytes())?;
    write_file(&dir.join("stages.csv"), stages_csv(&result.rows).as_bytes())?;
    write_file(&dir.join("rows.json"), &canonical_json(&result.rows))?;
    write_file(&dir.join("failures.json"), &canonical_json(&result.failures))
}
