//! Deterministic batch schedules for gradual batch alternation (GBA),
//! vanilla batch alternation (BA) and single-domain training.
//!
//! A schedule is a pure function of the [`GbaConfig`] and the two dataset
//! sizes. Training loops consume it verbatim: every decision about which
//! samples are seen, in which order and in which domain is made here.
//!
//! Stage `k` starts at the first epoch `n` with `n / N == k`, so the source
//! pool is already reduced while training epoch `N`. The pool for stage `k`
//! is the length-`pool_size(k)` prefix of one master permutation of the
//! source ids, which makes successive pools nested.

use serde::{Deserialize, Serialize};

use crate::error::{parse_json, Error, Result};
use crate::rng::{splitmix64, Xoshiro256};

const SOURCE_TAG: u64 = 0x534F_5552_4345_0000;
const TARGET_TAG: u64 = 0x5441_5247_4554_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::Source => Domain::Target,
            Domain::Target => Domain::Source,
        }
    }

    fn tag(self) -> u64 {
        match self {
            Domain::Source => SOURCE_TAG,
            Domain::Target => TARGET_TAG,
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::config(format!("unknown domain `{other}`"))),
        }
    }
}

/// A dataset as the scheduler sees it: a domain and a sample count. Sample
/// ids are `0..size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetRef {
    pub domain: Domain,
    pub size: usize,
}

impl DatasetRef {
    pub fn source(size: usize) -> Self {
        Self {
            domain: Domain::Source,
            size,
        }
    }

    pub fn target(size: usize) -> Self {
        Self {
            domain: Domain::Target,
            size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Alternation with the source pool shrinking every `epoch_interval` epochs.
    Gba,
    /// Alternation over the full source set every epoch.
    Ba,
    /// Shuffled batches from the `start_domain` dataset only.
    SingleDomain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbaConfig {
    pub total_epochs: u32,
    pub epoch_interval: u32,
    pub reduce_percent: u32,
    pub batch_size: u32,
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_domain: Domain,
    pub mode: ScheduleMode,
}

fn default_start() -> Domain {
    Domain::Source
}

impl Default for GbaConfig {
    fn default() -> Self {
        Self {
            total_epochs: 80,
            epoch_interval: 18,
            reduce_percent: 25,
            batch_size: 48,
            seed: 0,
            start_domain: Domain::Source,
            mode: ScheduleMode::Gba,
        }
    }
}

impl GbaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::config("total_epochs must be at least 1"));
        }
        if self.epoch_interval == 0 {
            return Err(Error::config("epoch_interval must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.reduce_percent > 100 {
            return Err(Error::config("reduce_percent must lie in [0, 100]"));
        }
        Ok(())
    }

    /// Stage index of epoch `n` under this config's mode.
    pub fn stage_of(&self, n: u32) -> u32 {
        match self.mode {
            ScheduleMode::Gba => stage_index(n, self.epoch_interval),
            ScheduleMode::Ba | ScheduleMode::SingleDomain => 0,
        }
    }
}

/// Stage of 1-based epoch `n`: `n / N`. The reduction fires at the start of
/// every epoch divisible by `N`.
pub fn stage_index(n: u32, epoch_interval: u32) -> u32 {
    assert!(epoch_interval > 0, "epoch interval must be positive");
    n / epoch_interval
}

/// `floor(size * (100 - min(100, k * P)) / 100)` in exact integer arithmetic.
pub fn pool_size(source_size: usize, stage: u32, reduce_percent: u32) -> usize {
    let removed = u64::from(stage).saturating_mul(u64::from(reduce_percent)).min(100);
    let kept = (source_size as u128 * u128::from(100 - removed)) / 100;
    kept as usize
}

/// The source ids available at a stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourcePool {
    pub stage: u32,
    pub ids: Vec<u32>,
}

fn master_permutation(source_size: usize, seed: u64) -> Vec<u32> {
    Xoshiro256::seed_from_u64(seed).permutation(source_size)
}

/// Pool for stage `k`: the first `pool_size` entries of the seed's master
/// permutation of all source ids.
pub fn reduce_source(source: DatasetRef, stage: u32, reduce_percent: u32, seed: u64) -> SourcePool {
    let mut ids = master_permutation(source.size, seed);
    ids.truncate(pool_size(source.size, stage, reduce_percent));
    SourcePool { stage, ids }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchAssignment {
    pub domain: Domain,
    pub ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochPlan {
    pub epoch: u32,
    pub stage: u32,
    pub source_pool_size: usize,
    pub batches: Vec<BatchAssignment>,
}

impl EpochPlan {
    pub fn count(&self, domain: Domain) -> usize {
        self.batches.iter().filter(|b| b.domain == domain).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePlan {
    pub config: GbaConfig,
    pub source_size: usize,
    pub target_size: usize,
    pub epochs: Vec<EpochPlan>,
}

impl SchedulePlan {
    pub fn source(&self) -> DatasetRef {
        DatasetRef::source(self.source_size)
    }

    pub fn target(&self) -> DatasetRef {
        DatasetRef::target(self.target_size)
    }

    pub fn total_batches(&self) -> usize {
        self.epochs.iter().map(|e| e.batches.len()).sum()
    }

    /// Epochs after which the stage changes, plus the final epoch.
    pub fn stage_boundaries(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .epochs
            .windows(2)
            .filter(|w| w[0].stage != w[1].stage)
            .map(|w| w[0].epoch)
            .collect();
        if let Some(last) = self.epochs.last() {
            out.push(last.epoch);
        }
        out
    }

    /// Structural checks for plans read from disk.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.epochs.len() != self.config.total_epochs as usize {
            return Err(Error::Plan(format!(
                "expected {} epochs, found {}",
                self.config.total_epochs,
                self.epochs.len()
            )));
        }
        let b = self.config.batch_size as usize;
        for (i, ep) in self.epochs.iter().enumerate() {
            if ep.epoch as usize != i + 1 {
                return Err(Error::Plan(format!("epochs[{i}] numbered {}", ep.epoch)));
            }
            for (j, batch) in ep.batches.iter().enumerate() {
                let size = match batch.domain {
                    Domain::Source => self.source_size,
                    Domain::Target => self.target_size,
                };
                if batch.ids.is_empty() || batch.ids.len() > b {
                    return Err(Error::Plan(format!(
                        "epochs[{i}].batches[{j}] has {} ids (batch size {b})",
                        batch.ids.len()
                    )));
                }
                if let Some(&id) = batch.ids.iter().find(|&&id| id as usize >= size) {
                    return Err(Error::Plan(format!(
                        "epochs[{i}].batches[{j}] id {id} out of range for {} size {size}",
                        batch.domain
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-epoch, per-domain shuffle seed.
pub fn epoch_seed(seed: u64, epoch: u32, domain: Domain) -> u64 {
    splitmix64(seed ^ u64::from(epoch) ^ domain.tag())
}

fn shuffled_batches(mut ids: Vec<u32>, seed: u64, batch_size: u32, domain: Domain) -> Vec<BatchAssignment> {
    Xoshiro256::seed_from_u64(seed).shuffle(&mut ids);
    ids.chunks(batch_size as usize)
        .map(|chunk| BatchAssignment {
            domain,
            ids: chunk.to_vec(),
        })
        .collect()
}

/// Strict alternation starting with `start` while both lists last, then the
/// remainder of the longer list in order.
pub fn interleave(
    source_batches: Vec<BatchAssignment>,
    target_batches: Vec<BatchAssignment>,
    start: Domain,
) -> Vec<BatchAssignment> {
    let (first, second) = match start {
        Domain::Source => (source_batches, target_batches),
        Domain::Target => (target_batches, source_batches),
    };
    let mut out = Vec::with_capacity(first.len() + second.len());
    let mut a = first.into_iter();
    let mut b = second.into_iter();
    loop {
        match (a.next(), b.next()) {
            (Some(x), Some(y)) => {
                out.push(x);
                out.push(y);
            }
            (Some(x), None) => {
                out.push(x);
                out.extend(a);
                break;
            }
            (None, Some(y)) => {
                out.push(y);
                out.extend(b);
                break;
            }
            (None, None) => break,
        }
    }
    out
}

/// Lazily produces the epochs of a plan. Agrees exactly with [`build_plan`].
#[derive(Debug, Clone)]
pub struct EpochStream {
    config: GbaConfig,
    source_size: usize,
    target_size: usize,
    master: Vec<u32>,
    next_epoch: u32,
}

impl EpochStream {
    pub fn new(config: &GbaConfig, source: DatasetRef, target: DatasetRef) -> Result<Self> {
        config.validate()?;
        let master = match config.mode {
            ScheduleMode::SingleDomain => Vec::new(),
            _ => master_permutation(source.size, config.seed),
        };
        Ok(Self {
            config: config.clone(),
            source_size: source.size,
            target_size: target.size,
            master,
            next_epoch: 1,
        })
    }

    fn plan_epoch(&self, n: u32) -> EpochPlan {
        let cfg = &self.config;
        if cfg.mode == ScheduleMode::SingleDomain {
            let domain = cfg.start_domain;
            let size = match domain {
                Domain::Source => self.source_size,
                Domain::Target => self.target_size,
            };
            let ids = (0..size as u32).collect();
            let batches = shuffled_batches(ids, epoch_seed(cfg.seed, n, domain), cfg.batch_size, domain);
            return EpochPlan {
                epoch: n,
                stage: 0,
                source_pool_size: if domain == Domain::Source { size } else { 0 },
                batches,
            };
        }
        let stage = cfg.stage_of(n);
        let m = pool_size(self.source_size, stage, cfg.reduce_percent);
        let source_ids = self.master[..m].to_vec();
        let target_ids = (0..self.target_size as u32).collect();
        let sb = shuffled_batches(
            source_ids,
            epoch_seed(cfg.seed, n, Domain::Source),
            cfg.batch_size,
            Domain::Source,
        );
        let tb = shuffled_batches(
            target_ids,
            epoch_seed(cfg.seed, n, Domain::Target),
            cfg.batch_size,
            Domain::Target,
        );
        EpochPlan {
            epoch: n,
            stage,
            source_pool_size: m,
            batches: interleave(sb, tb, cfg.start_domain),
        }
    }
}

impl Iterator for EpochStream {
    type Item = EpochPlan;

    fn next(&mut self) -> Option<EpochPlan> {
        if self.next_epoch > self.config.total_epochs {
            return None;
        }
        let ep = self.plan_epoch(self.next_epoch);
        self.next_epoch += 1;
        Some(ep)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.config.total_epochs + 1 - self.next_epoch) as usize;
        (left, Some(left))
    }
}

/// Plan for a single epoch `n` (1-based).
pub fn epoch_plan(n: u32, config: &GbaConfig, source: DatasetRef, target: DatasetRef) -> Result<EpochPlan> {
    if n == 0 || n > config.total_epochs {
        return Err(Error::config(format!(
            "epoch {n} outside 1..={}",
            config.total_epochs
        )));
    }
    Ok(EpochStream::new(config, source, target)?.plan_epoch(n))
}

pub fn build_plan(config: &GbaConfig, source: DatasetRef, target: DatasetRef) -> Result<SchedulePlan> {
    let epochs = EpochStream::new(config, source, target)?.collect();
    Ok(SchedulePlan {
        config: config.clone(),
        source_size: source.size,
        target_size: target.size,
        epochs,
    })
}

/// Canonical compact JSON with sorted keys.
pub fn serialize_plan(plan: &SchedulePlan) -> Vec<u8> {
    // `serde_json::Value` objects are BTreeMap-backed, which sorts keys.
    let value = serde_json::to_value(plan).expect("plan is always representable");
    serde_json::to_vec(&value).expect("value serialization is infallible")
}

pub fn parse_plan(bytes: &[u8]) -> Result<SchedulePlan> {
    let plan: SchedulePlan = parse_json(bytes)?;
    plan.validate()?;
    Ok(plan)
}
