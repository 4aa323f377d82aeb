//! Deterministic end-to-end sorting simulator: seeded scenes, an oracle
//! detector, the search/grasp/place state machine and result reporting.

mod config;
mod experiment;
mod pipeline;
mod report;
mod scene;
mod sensing;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{DatasetError, Lithology};
use crate::detection::DetectionError;
use crate::handeye::HandEyeError;
use crate::kinematics::KinematicsError;
use crate::sizing::SizingError;
use crate::stereo::StereoError;

pub use config::{parse_config, ConfigRefs};
pub use experiment::{
    parse_replay, run_experiment, run_experiment_observed, run_experiments, run_replay, ExperimentConfig,
    ExperimentOutcome, GraspModel, ReplayRecord,
};
pub use pipeline::{AttemptOutcome, AttemptRecord, Phase, PipelineState, Target};
pub use report::{parse_report_csv, render_report, LithologyRow, ReportFormat, SortReport};
pub use scene::{
    default_bins, generate_scene, grasp_orientation, AggregateSpec, Bin, PlacementRegion, Scene, SceneConfig,
};
pub use sensing::{
    render_stereo_roi, sense, stereo_depth, surface_depth, DepthFidelity, SensedObject, SensorConfig, StereoRoi,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("size range [{lo}, {hi}] cm outside the allowed [{min}, {max}] cm")]
    SizeRange { lo: f64, hi: f64, min: f64, max: f64 },
    #[error("could only place {placed} of {requested} aggregates without overlap")]
    Unplaceable { placed: usize, requested: usize },
    #[error("bin for {0} is unreachable")]
    BinUnreachable(Lithology),
    #[error("pipeline did not finish within {0} steps")]
    StepLimit(usize),
    #[error("pipeline is already done")]
    Finished,
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("replay line {line}: {message}")]
    Replay { line: usize, message: String },
    #[error("report parse line {line}: {message}")]
    Report { line: usize, message: String },
    #[error("invalid grasp model: {0}")]
    GraspModel(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Stereo(#[from] StereoError),
    #[error(transparent)]
    Sizing(#[from] SizingError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    HandEye(#[from] HandEyeError),
}

/// Independent random streams derived from one experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Scene,
    Detection,
    Grasp,
    Depth,
}

impl Stream {
    pub fn rng(self, seed: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(self as u64 + 1);
        rng
    }
}
