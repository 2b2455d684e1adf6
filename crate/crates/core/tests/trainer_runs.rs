mod common;

use gba_core::detector::{prepare_samples, Sample};
use gba_core::rng::Xoshiro256;
use gba_core::trainer::{train, train_with_observer, TrainerCheckpoint, TrainerConfig, TrainerState, RUNLOG_HEADER};
use gba_core::{build_plan, DatasetRef, Domain, GbaConfig, ScheduleMode};

fn samples(n: usize, seed: u64) -> Vec<Sample<f64>> {
    let mut rng = Xoshiro256::seed_from_u64(seed);
    let scenes: Vec<_> = (0..n).map(|i| common::random_scene(&mut rng, i as u32, 8.0)).collect();
    prepare_samples(&scenes, &common::small_spec())
}

fn config() -> TrainerConfig {
    TrainerConfig {
        raster: common::small_spec(),
        seed: 3,
        ..TrainerConfig::default()
    }
}

fn gba_config(epochs: u32) -> GbaConfig {
    GbaConfig {
        total_epochs: epochs,
        epoch_interval: 2,
        reduce_percent: 50,
        batch_size: 3,
        seed: 11,
        ..GbaConfig::default()
    }
}

#[test]
fn one_epoch_over_four_samples_takes_two_steps() {
    let sched = GbaConfig {
        total_epochs: 1,
        batch_size: 2,
        mode: ScheduleMode::SingleDomain,
        ..GbaConfig::default()
    };
    let plan = build_plan(&sched, DatasetRef::source(4), DatasetRef::target(0)).unwrap();
    let cfg = config();
    let out = train(&plan, &samples(4, 1), &[], TrainerState::init(cfg.seed), &cfg).unwrap();
    assert_eq!(out.log.steps.len(), 2);
    assert_eq!(out.state.global_step, 2);
    assert_eq!(out.state.epoch, 1);
    let csv = out.log.to_csv();
    assert_eq!(csv.lines().next().unwrap(), RUNLOG_HEADER);
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn consumed_batches_follow_the_plan_exactly() {
    let (src, tgt) = (samples(7, 2), samples(4, 3));
    let plan = build_plan(&gba_config(5), DatasetRef::source(7), DatasetRef::target(4)).unwrap();
    let cfg = config();
    let mut seen = Vec::new();
    let out = train_with_observer(&plan, &src, &tgt, TrainerState::init(cfg.seed), &cfg, &mut |rec, batch| {
        assert_eq!(rec.domain, batch.domain);
        seen.push((batch.domain, batch.ids.clone()));
    })
    .unwrap();
    let expected: Vec<_> = plan
        .epochs
        .iter()
        .flat_map(|e| e.batches.iter().map(|b| (b.domain, b.ids.clone())))
        .collect();
    assert_eq!(seen, expected);
    assert_eq!(out.log.steps.len(), plan.total_batches());
    // one snapshot per stage boundary
    let epochs: Vec<u32> = out.checkpoints.iter().map(|c| c.epoch).collect();
    assert_eq!(epochs, plan.stage_boundaries());
    assert!(out.log.steps.iter().any(|s| s.domain == Domain::Target));
}

#[test]
fn identical_runs_are_bit_identical() {
    let (src, tgt) = (samples(6, 4), samples(3, 5));
    let plan = build_plan(&gba_config(4), DatasetRef::source(6), DatasetRef::target(3)).unwrap();
    let cfg = config();
    let a = train(&plan, &src, &tgt, TrainerState::init(cfg.seed), &cfg).unwrap();
    let b = train(&plan, &src, &tgt, TrainerState::init(cfg.seed), &cfg).unwrap();
    assert_eq!(
        TrainerCheckpoint::new(&a.state, cfg.raster).to_json(),
        TrainerCheckpoint::new(&b.state, cfg.raster).to_json()
    );
    assert_eq!(a.log.to_csv(), b.log.to_csv());
}

#[test]
fn resuming_from_a_saved_checkpoint_matches_uninterrupted_training() {
    let (src, tgt) = (samples(6, 6), samples(3, 7));
    let plan = build_plan(&gba_config(6), DatasetRef::source(6), DatasetRef::target(3)).unwrap();
    let cfg = config();
    let full = train(&plan, &src, &tgt, TrainerState::init(cfg.seed), &cfg).unwrap();

    let first = full.checkpoints.first().expect("a stage boundary before the end");
    assert!(first.epoch < 6);
    let bytes = TrainerCheckpoint::new(&first.state, cfg.raster).to_json();
    let restored: TrainerState<f64> = TrainerCheckpoint::from_json(&bytes).unwrap().state().unwrap();
    assert_eq!(restored, first.state);

    let resumed = train(&plan, &src, &tgt, restored, &cfg).unwrap();
    assert_eq!(resumed.state, full.state);
    let tail: Vec<_> = full.log.steps.iter().filter(|s| s.epoch > first.epoch).cloned().collect();
    assert_eq!(resumed.log.steps, tail);
}

#[test]
fn plan_and_datasets_must_agree() {
    let plan = build_plan(&gba_config(2), DatasetRef::source(6), DatasetRef::target(3)).unwrap();
    let cfg = config();
    let err = train(&plan, &samples(5, 1), &samples(3, 2), TrainerState::init(cfg.seed), &cfg).unwrap_err();
    assert!(err.is_config(), "{err}");
}

#[test]
fn training_reduces_the_loss() {
    let src = samples(8, 8);
    let sched = GbaConfig {
        total_epochs: 30,
        batch_size: 4,
        mode: ScheduleMode::SingleDomain,
        ..GbaConfig::default()
    };
    let plan = build_plan(&sched, DatasetRef::source(8), DatasetRef::target(0)).unwrap();
    let cfg = TrainerConfig {
        max_lr: 1e-2,
        ..config()
    };
    let out = train(&plan, &src, &[], TrainerState::init(cfg.seed), &cfg).unwrap();
    let first = out.log.epochs.first().unwrap().mean_total_loss;
    let last = out.log.epochs.last().unwrap().mean_total_loss;
    assert!(last < 0.7 * first, "{first} -> {last}");
}
