//! Gradual batch alternation (GBA) training schedules together with a small,
//! fully deterministic bird's-eye-view detection testbed used to exercise
//! them: synthetic scene generation, a center-heatmap detector with
//! hand-written gradients, an Adam/one-cycle trainer, center-distance AP
//! evaluation and an experiment runner.
//!
//! Learned quantities are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the double-precision instantiation used everywhere in
//! the shipped tooling.

pub mod data;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod eval;
pub mod io;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod tensor;
pub mod trainer;

pub use error::{parse_json, Error, Result};
pub use scalar::Scalar;
pub use schedule::{
    build_plan, epoch_plan, interleave, parse_plan, pool_size, reduce_source, serialize_plan,
    stage_index, BatchAssignment, DatasetRef, Domain, EpochPlan, EpochStream, GbaConfig,
    ScheduleMode, SchedulePlan, SourcePool,
};

pub type Tensor64 = tensor::Tensor<f64>;
pub type Params64 = detector::ModelParams<f64>;
pub type Sample64 = detector::Sample<f64>;
pub type Detection64 = detector::Detection<f64>;
pub type TrainerState64 = trainer::TrainerState<f64>;
pub type TrainOutput64 = trainer::TrainOutput<f64>;
pub type Params32 = detector::ModelParams<f32>;
pub type TrainerState32 = trainer::TrainerState<f32>;
