//! Search, detect, localize, measure, grasp and place, one phase per step.

use std::fmt;

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::experiment::ExperimentConfig;
use super::scene::{grasp_orientation, AggregateSpec, Bin, Scene};
use super::sensing::DepthFidelity;
use super::{SimError, Stream};
use crate::dataset::Lithology;
use crate::detection::{detect, Detection};
use crate::geometry::{Point3, RigidTransform};
use crate::handeye::{camera_to_base, FramePoint};
use crate::kinematics::{forward_kinematics, inverse_kinematics, select_solution, JointVector};
use crate::sizing::{mer_dimensions, pixel_to_metric, Grade, SizeEstimate};
use crate::stereo::locate_3d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    LoadEnv,
    Search,
    Detect,
    Localize,
    Measure,
    PlanGrasp,
    Grasp,
    Place,
    Done,
}

impl Phase {
    /// Phases allowed to follow this one.
    pub fn successors(self) -> &'static [Phase] {
        use Phase::*;
        match self {
            LoadEnv => &[Search, Done],
            Search => &[Search, Detect, Done],
            Detect => &[Localize],
            Localize => &[Measure, Search, Done],
            Measure => &[PlanGrasp],
            PlanGrasp => &[Grasp, Search, Done],
            Grasp => &[Place, Search, Done],
            Place => &[Search, Done],
            Done => &[],
        }
    }

    pub fn can_follow(self, previous: Phase) -> bool {
        previous.successors().contains(&self)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The aggregate currently being handled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub detection: Detection,
    pub depth: Option<f64>,
    /// Localized centroid in the base frame.
    pub position: Option<Point3>,
    /// Localized top-center in the base frame.
    pub top: Option<Point3>,
    pub size: Option<SizeEstimate>,
    pub joints: Option<JointVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttemptOutcome {
    Placed,
    Dropped,
}

/// One grasp attempt. Classification is judged here, whether or not the
/// grasp holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttemptRecord {
    pub aggregate: usize,
    pub true_lithology: Lithology,
    pub reported_lithology: Lithology,
    pub true_grade: Grade,
    pub measured_grade: Grade,
    pub outcome: AttemptOutcome,
}

impl AttemptRecord {
    pub fn grasp_ok(&self) -> bool {
        self.outcome == AttemptOutcome::Placed
    }

    pub fn correct(&self) -> bool {
        self.true_lithology == self.reported_lithology
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    /// Last completed phase.
    pub phase: Phase,
    next: Phase,
    /// Current arm configuration.
    pub q: JointVector,
    pub on_plane: Vec<AggregateSpec>,
    pub held: Option<AggregateSpec>,
    /// Contents per bin, indexed by [`Lithology::index`].
    pub bins: [Vec<AggregateSpec>; 4],
    pub dropped: Vec<AggregateSpec>,
    pub skipped: Vec<AggregateSpec>,
    pub detections: Vec<Detection>,
    pub target: Option<Target>,
    pub attempts: Vec<AttemptRecord>,
    pub log: Vec<String>,
    pub initial_count: usize,
    plane_z: f64,
    bin_poses: [Bin; 4],
    idle_searches: usize,
    rng_detection: ChaCha8Rng,
    rng_grasp: ChaCha8Rng,
    rng_depth: ChaCha8Rng,
}

impl PipelineState {
    /// Loads the environment: the arm starts at the search pose.
    pub fn new(scene: Scene, cfg: &ExperimentConfig) -> Result<Self, SimError> {
        scene.validate_bins(&cfg.sensor.chain)?;
        let initial_count = scene.aggregates.len();
        Ok(Self {
            phase: Phase::LoadEnv,
            next: Phase::Search,
            q: cfg.sensor.search_pose,
            on_plane: scene.aggregates,
            held: None,
            bins: Default::default(),
            dropped: Vec::new(),
            skipped: Vec::new(),
            detections: Vec::new(),
            target: None,
            attempts: Vec::new(),
            log: vec![format!("load: {initial_count} aggregates")],
            initial_count,
            plane_z: scene.plane_z,
            bin_poses: scene.bins,
            idle_searches: 0,
            rng_detection: Stream::Detection.rng(cfg.seed),
            rng_grasp: Stream::Grasp.rng(cfg.seed),
            rng_depth: Stream::Depth.rng(cfg.seed),
        })
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn binned(&self) -> usize {
        self.bins.iter().map(Vec::len).sum()
    }

    /// Every aggregate is on the plane, held, binned, dropped or skipped.
    pub fn conservation_holds(&self) -> bool {
        self.on_plane.len() + usize::from(self.held.is_some()) + self.binned() + self.dropped.len() + self.skipped.len()
            == self.initial_count
    }

    fn take(&mut self, id: usize) -> Option<AggregateSpec> {
        let i = self.on_plane.iter().position(|a| a.id == id)?;
        Some(self.on_plane.remove(i))
    }

    fn skip(&mut self, id: usize, why: &str) {
        if let Some(a) = self.take(id) {
            self.log.push(format!("skip: aggregate {id}, {why}"));
            self.skipped.push(a);
        }
        self.target = None;
        self.next = Phase::Search;
    }

    fn target(&self) -> Result<Target, SimError> {
        self.target.ok_or(SimError::Finished)
    }

    /// Executes exactly one phase and returns it.
    pub fn step(&mut self, cfg: &ExperimentConfig) -> Result<Phase, SimError> {
        if self.is_done() {
            return Err(SimError::Finished);
        }
        let phase = self.next;
        match phase {
            Phase::Search => self.search(cfg)?,
            Phase::Detect => self.select_target(cfg),
            Phase::Localize => self.localize(cfg)?,
            Phase::Measure => self.measure(cfg)?,
            Phase::PlanGrasp => self.plan_grasp(cfg)?,
            Phase::Grasp => self.grasp(cfg)?,
            Phase::Place => self.place(cfg)?,
            Phase::LoadEnv | Phase::Done => unreachable!("never scheduled"),
        }
        // Search may end the run instead.
        let done = self.next == Phase::Done;
        let performed = if done && phase == Phase::Search {
            Phase::Done
        } else {
            phase
        };
        debug_assert!(performed.can_follow(self.phase), "{:?} -> {:?}", self.phase, performed);
        self.phase = performed;
        Ok(performed)
    }

    fn search(&mut self, cfg: &ExperimentConfig) -> Result<(), SimError> {
        self.q = cfg.sensor.search_pose;
        self.target = None;
        if self.on_plane.is_empty() {
            self.log.push("done: work plane empty".into());
            self.next = Phase::Done;
            return Ok(());
        }
        let t_cb = cfg.sensor.camera_pose(&self.q)?;
        let view = cfg.sensor.view(&self.on_plane, &t_cb, &cfg.bands);
        let seed = self.rng_detection.next_u64();
        self.detections = detect(&view, &cfg.confusion, &cfg.detector, seed);
        self.log.push(format!("search: {} detections", self.detections.len()));
        if self.detections.is_empty() {
            self.idle_searches += 1;
            if self.idle_searches > cfg.max_idle_searches {
                self.log
                    .push(format!("done: {} aggregates never seen", self.on_plane.len()));
                self.next = Phase::Done;
            } else {
                self.next = Phase::Search;
            }
        } else {
            self.idle_searches = 0;
            self.next = Phase::Detect;
        }
        Ok(())
    }

    /// Highest confidence first, then nearest to the image center.
    fn select_target(&mut self, cfg: &ExperimentConfig) {
        let intr = cfg.sensor.intrinsics();
        let off_center = |d: &Detection| {
            let c = d.bbox.center();
            (c.x - intr.cx).hypot(c.y - intr.cy)
        };
        let best = self
            .detections
            .iter()
            .copied()
            .reduce(|a, b| {
                let better =
                    b.confidence > a.confidence || (b.confidence == a.confidence && off_center(&b) < off_center(&a));
                if better {
                    b
                } else {
                    a
                }
            })
            .expect("scheduled only with detections");
        self.log.push(format!(
            "detect: aggregate {} as {}-{} ({:.3})",
            best.source,
            best.lithology.code(),
            best.grade,
            best.confidence
        ));
        self.target = Some(Target {
            detection: best,
            depth: None,
            position: None,
            top: None,
            size: None,
            joints: None,
        });
        self.next = Phase::Localize;
    }

    fn localize(&mut self, cfg: &ExperimentConfig) -> Result<(), SimError> {
        let mut target = self.target()?;
        let det = target.detection;
        let t_eb = forward_kinematics(&cfg.sensor.chain, &self.q)?;
        let t_cb = t_eb.compose(&cfg.sensor.t_ce);
        let depth = cfg
            .sensor
            .depth_of(&det, &self.on_plane, self.plane_z, &t_cb, &mut self.rng_depth)?;
        let Some(depth) = depth else {
            self.skip(det.source, "no valid depth");
            return Ok(());
        };
        let cam = cfg.sensor.camera();
        let p_c = locate_3d(
            &det.center,
            depth,
            &cam.intrinsics,
            &cam.distortion,
            &cfg.sensor.depth_range,
        )?;
        let chained = camera_to_base(&cfg.sensor.t_ce, &t_eb, &FramePoint::camera(p_c))?;
        let p = chained.base.point;
        // A box resting on the plane has its top as far above the centroid
        // as the centroid is above the plane.
        let (centroid, top) = match cfg.sensor.fidelity {
            DepthFidelity::Analytic => (p, Point3::new(p.x, p.y, 2.0 * p.z - self.plane_z)),
            DepthFidelity::Stereo => (Point3::new(p.x, p.y, 0.5 * (p.z + self.plane_z)), p),
        };
        target.depth = Some(depth);
        target.position = Some(centroid);
        target.top = Some(top);
        self.log.push(format!(
            "localize: ({:.4}, {:.4}, {:.4}) m",
            centroid.x, centroid.y, centroid.z
        ));
        self.target = Some(target);
        self.next = Phase::Measure;
        Ok(())
    }

    /// Each box edge is scaled at the depth of the face that forms it:
    /// edges facing away from the optical axis come from the top face,
    /// edges facing toward it from the bottom face.
    fn measure(&mut self, cfg: &ExperimentConfig) -> Result<(), SimError> {
        let mut target = self.target()?;
        let b = target.detection.bbox;
        let (Some(c), Some(top)) = (target.position, target.top) else {
            return Err(SimError::Finished);
        };
        let to_cam = cfg.sensor.camera_pose(&self.q)?.inverse();
        let bottom = Point3::new(top.x, top.y, 2.0 * c.z - top.z);
        let z_top = to_cam.transform_point(&top).z;
        let z_bot = to_cam.transform_point(&bottom).z;
        let k = cfg.sensor.intrinsics();
        let edge = |px: f64, centre: f64, f: f64, outer: bool| {
            pixel_to_metric(px - centre, if outer { z_top } else { z_bot }, f)
        };
        let x1 = edge(b.x1, k.cx, k.fx, b.x1 < k.cx)?;
        let x2 = edge(b.x2, k.cx, k.fx, b.x2 > k.cx)?;
        let y1 = edge(b.y1, k.cy, k.fy, b.y1 < k.cy)?;
        let y2 = edge(b.y2, k.cy, k.fy, b.y2 > k.cy)?;
        let dimensions = mer_dimensions((x1, y1), (x2, y2));
        let size = SizeEstimate {
            dimensions,
            assessment: cfg.bands.assess(dimensions.c * 100.0),
        };
        self.log.push(format!(
            "measure: {:.2} cm, grade {}",
            size.dimensions.c * 100.0,
            size.assessment.grade
        ));
        target.size = Some(size);
        self.target = Some(target);
        self.next = Phase::PlanGrasp;
        Ok(())
    }

    fn plan_grasp(&mut self, cfg: &ExperimentConfig) -> Result<(), SimError> {
        let mut target = self.target()?;
        let top = target.top.ok_or(SimError::Finished)?;
        let pose = RigidTransform::new(grasp_orientation(), top.coords);
        let set = inverse_kinematics(&cfg.sensor.chain, &pose)?;
        if set.is_empty() {
            let why = format!("unreachable ({:?})", set.reason);
            self.skip(target.detection.source, &why);
            return Ok(());
        }
        target.joints = Some(select_solution(&set, &self.q, None)?);
        self.target = Some(target);
        self.next = Phase::Grasp;
        Ok(())
    }

    fn grasp(&mut self, cfg: &ExperimentConfig) -> Result<(), SimError> {
        let target = self.target()?;
        let det = target.detection;
        let agg = self.take(det.source).ok_or(SimError::Finished)?;
        let u: f64 = self.rng_grasp.random();
        let ok = u < cfg.grasp.probability(agg.footprint_diagonal_cm());
        self.q = target.joints.ok_or(SimError::Finished)?;
        self.attempts.push(AttemptRecord {
            aggregate: agg.id,
            true_lithology: agg.lithology,
            reported_lithology: det.lithology,
            true_grade: agg.true_grade(&cfg.bands),
            measured_grade: target.size.map_or(Grade::Rejected, |s| s.assessment.grade),
            outcome: if ok {
                AttemptOutcome::Placed
            } else {
                AttemptOutcome::Dropped
            },
        });
        if ok {
            self.log.push(format!("grasp: aggregate {} held", agg.id));
            self.held = Some(agg);
            self.next = Phase::Place;
        } else {
            self.log.push(format!("grasp: aggregate {} slipped", agg.id));
            self.dropped.push(agg);
            self.target = None;
            self.next = Phase::Search;
        }
        Ok(())
    }

    fn place(&mut self, cfg: &ExperimentConfig) -> Result<(), SimError> {
        let target = self.target()?;
        let lith = target.detection.lithology;
        let bin = self.bin_poses[lith.index()];
        let pose = RigidTransform::new(grasp_orientation(), bin.position.coords);
        let set = inverse_kinematics(&cfg.sensor.chain, &pose)?;
        self.q = select_solution(&set, &self.q, None)?;
        let agg = self.held.take().ok_or(SimError::Finished)?;
        self.log
            .push(format!("place: aggregate {} into {} bin", agg.id, lith.code()));
        self.bins[lith.index()].push(agg);
        self.target = None;
        self.next = Phase::Search;
        Ok(())
    }
}
