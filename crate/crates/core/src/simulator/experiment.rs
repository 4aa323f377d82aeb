//! Experiment configuration, grasp models, replay files and the harness.

use std::str::FromStr;

use rayon::prelude::*;

use super::pipeline::{AttemptRecord, Phase, PipelineState};
use super::report::SortReport;
use super::scene::{generate_scene, SceneConfig};
use super::sensing::SensorConfig;
use super::SimError;
use crate::dataset::Lithology;
use crate::detection::{ConfusionSpec, DetectorConfig};
use crate::geometry::strip_comment;
use crate::sizing::GradeBands;

/// Grasp success probability as a function of footprint diagonal (cm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraspModel {
    Always,
    /// `below` under `threshold_cm`, `above` at or over it.
    Step {
        threshold_cm: f64,
        below: f64,
        above: f64,
    },
    /// `floor + (ceiling − floor) / (1 + exp(−steepness · (size − midpoint)))`.
    Logistic {
        midpoint_cm: f64,
        steepness: f64,
        floor: f64,
        ceiling: f64,
    },
}

impl Default for GraspModel {
    fn default() -> Self {
        GraspModel::Step {
            threshold_cm: 1.5,
            below: 0.8,
            above: 1.0,
        }
    }
}

impl GraspModel {
    pub fn probability(&self, size_cm: f64) -> f64 {
        match *self {
            GraspModel::Always => 1.0,
            GraspModel::Step {
                threshold_cm,
                below,
                above,
            } => {
                if size_cm >= threshold_cm {
                    above
                } else {
                    below
                }
            }
            GraspModel::Logistic {
                midpoint_cm,
                steepness,
                floor,
                ceiling,
            } => floor + (ceiling - floor) / (1.0 + (-steepness * (size_cm - midpoint_cm)).exp()),
        }
    }

    /// Probabilities must lie in [0, 1] and never decrease with size.
    pub fn validate(&self) -> Result<(), SimError> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        let ok = match *self {
            GraspModel::Always => true,
            GraspModel::Step {
                threshold_cm,
                below,
                above,
            } => threshold_cm.is_finite() && unit(below) && unit(above) && below <= above,
            GraspModel::Logistic {
                midpoint_cm,
                steepness,
                floor,
                ceiling,
            } => {
                midpoint_cm.is_finite()
                    && steepness.is_finite()
                    && steepness >= 0.0
                    && unit(floor)
                    && unit(ceiling)
                    && floor <= ceiling
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::GraspModel(format!("{self:?}")))
        }
    }
}

impl FromStr for GraspModel {
    type Err = SimError;

    /// `always`, `step <threshold> <below> <above>` or
    /// `logistic <midpoint> <steepness> <floor> <ceiling>`.
    fn from_str(s: &str) -> Result<Self, SimError> {
        let mut it = s.split_whitespace();
        let kind = it.next().unwrap_or("");
        let nums = it
            .map(|t| t.parse::<f64>().map_err(|_| SimError::GraspModel(s.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let model = match (kind, nums.as_slice()) {
            ("always", []) => GraspModel::Always,
            ("step", &[threshold_cm, below, above]) => GraspModel::Step {
                threshold_cm,
                below,
                above,
            },
            ("logistic", &[midpoint_cm, steepness, floor, ceiling]) => GraspModel::Logistic {
                midpoint_cm,
                steepness,
                floor,
                ceiling,
            },
            _ => return Err(SimError::GraspModel(s.to_string())),
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Master seed; scene, detection, grasp and depth streams derive from it.
    pub seed: u64,
    pub scene: SceneConfig,
    pub sensor: SensorConfig,
    pub confusion: ConfusionSpec,
    pub detector: DetectorConfig,
    pub bands: GradeBands,
    pub grasp: GraspModel,
    /// Consecutive empty searches tolerated before giving up.
    pub max_idle_searches: usize,
    pub max_steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: SceneConfig::default(),
            sensor: SensorConfig::default(),
            confusion: ConfusionSpec::identity(),
            detector: DetectorConfig::default(),
            bands: GradeBands::default(),
            grasp: GraspModel::default(),
            max_idle_searches: 3,
            max_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub report: SortReport,
    pub state: PipelineState,
    /// Phase after every step, starting with `LoadEnv`.
    pub phases: Vec<Phase>,
}

/// Runs the pipeline from a fresh scene to `Done`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, SimError> {
    run_experiment_observed(cfg, |_| {})
}

/// Like [`run_experiment`], calling `observe` after loading and after every
/// step.
pub fn run_experiment_observed(
    cfg: &ExperimentConfig,
    mut observe: impl FnMut(&PipelineState),
) -> Result<ExperimentOutcome, SimError> {
    cfg.grasp.validate()?;
    let scene = generate_scene(cfg.seed, &cfg.scene)?;
    let mut state = PipelineState::new(scene, cfg)?;
    let mut phases = vec![state.phase];
    observe(&state);
    while !state.is_done() {
        if phases.len() > cfg.max_steps {
            return Err(SimError::StepLimit(cfg.max_steps));
        }
        phases.push(state.step(cfg)?);
        observe(&state);
    }
    Ok(ExperimentOutcome {
        report: SortReport::from_attempts(state.attempts.iter().map(attempt_tuple)),
        state,
        phases,
    })
}

fn attempt_tuple(a: &AttemptRecord) -> (Lithology, bool, Lithology) {
    (a.true_lithology, a.grasp_ok(), a.reported_lithology)
}

/// Independent experiments in parallel; results keep the input order.
pub fn run_experiments(cfgs: &[ExperimentConfig]) -> Vec<Result<ExperimentOutcome, SimError>> {
    cfgs.par_iter().map(run_experiment).collect()
}

/// One recorded attempt: true lithology, grasp outcome, reported lithology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayRecord {
    pub lithology: Lithology,
    pub grasp_ok: bool,
    pub reported: Lithology,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "ok" => Some(true),
        "0" | "false" | "no" | "fail" => Some(false),
        _ => None,
    }
}

/// Reported class may be a lithology code or name, or a class name such as
/// `S-2`.
fn parse_reported(s: &str) -> Option<Lithology> {
    s.parse::<Lithology>()
        .ok()
        .or_else(|| s.rsplit_once('-').and_then(|(l, _)| l.parse().ok()))
}

/// Lines of `lithology grasp_ok reported_class`; `#` starts a comment.
pub fn parse_replay(text: &str) -> Result<Vec<ReplayRecord>, SimError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| SimError::Replay { line: i + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [lith, ok, reported] = fields[..] else {
            return Err(err(format!("expected 3 fields, got {}", fields.len())));
        };
        out.push(ReplayRecord {
            lithology: lith.parse().map_err(|_| err(format!("unknown lithology `{lith}`")))?,
            grasp_ok: parse_bool(ok).ok_or_else(|| err(format!("bad grasp outcome `{ok}`")))?,
            reported: parse_reported(reported).ok_or_else(|| err(format!("unknown class `{reported}`")))?,
        });
    }
    Ok(out)
}

/// Tallies recorded outcomes without any stochastic model.
pub fn run_replay(records: &[ReplayRecord]) -> SortReport {
    SortReport::from_attempts(records.iter().map(|r| (r.lithology, r.grasp_ok, r.reported)))
}
