//! Episode driver: turns a grounded sub-action plan into target poses, moves a
//! simulated point effector along learned motion profiles under PD control,
//! and scores the outcome.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{norm, servo_to, sub, ControllerGains, Plant};
use crate::corpus::{segment_plan, ActionKind, SubAction, TaskKind};
use crate::datrn::{self, DatrnConfig, DatrnError, InputSignal, Trajectory};
use crate::embed::EmbedError;
use crate::seqmodel::predict::Predictor;
use crate::seqmodel::ModelError;
use crate::vision::{
    analyze_scene_noisy, locate, resolve_missing, DetectionNoise, HaltReason, NotFoundReason, ObjectKind,
    Prompter, Scene, SceneObject, WorkspaceBounds, DEFAULT_CONFIDENCE_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid episode config: {0}")]
    Config(String),
    #[error("cannot plan: {0}")]
    Plan(String),
    #[error("episode succeeded; there is no failure to classify")]
    NotAFailure,
    #[error(transparent)]
    Datrn(#[from] DatrnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub gains: ControllerGains,
    pub home: [f64; 3],
    /// Height of the pre-grasp approach pose above the object.
    pub approach_offset: f64,
    pub lift_offset: f64,
    /// Height of the pour pose above the container.
    pub pour_offset: f64,
    pub tilt_angle: f64,
    /// Tilt ramp duration in seconds, each way.
    pub tilt_seconds: f64,
    pub grasp_radius: f64,
    pub stir_radius: f64,
    pub stir_height: f64,
    pub wipe_height: f64,
    pub wipe_lane_spacing: f64,
    /// Spacing between consecutive sweep waypoints.
    pub path_spacing: f64,
    /// A sweep waypoint counts as visited when the effector comes this close.
    pub path_tolerance: f64,
    pub coverage: f64,
    /// Half extents used for surfaces that do not declare any.
    pub default_extent: [f64; 2],
    pub confidence_threshold: f64,
    pub noise: DetectionNoise,
    pub seed: u64,
    pub datrn: DatrnConfig,
    /// Name of the bundled demonstration that shapes every motion.
    pub demo: String,
    /// When set, a plan that does not decompose into this task is a
    /// prediction failure.
    pub expected_task: Option<TaskKind>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            gains: ControllerGains::default(),
            home: [0.3, 0.0, 0.4],
            approach_offset: 0.1,
            lift_offset: 0.15,
            pour_offset: 0.12,
            tilt_angle: FRAC_PI_2,
            tilt_seconds: 1.0,
            grasp_radius: 0.03,
            stir_radius: 0.05,
            stir_height: 0.05,
            wipe_height: 0.02,
            wipe_lane_spacing: 0.04,
            path_spacing: 0.01,
            path_tolerance: 0.01,
            coverage: 0.95,
            default_extent: [0.1, 0.1],
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            noise: DetectionNoise::default(),
            seed: 0,
            datrn: DatrnConfig { input: InputSignal::Ramp, ..DatrnConfig::default() },
            demo: "min_jerk_400".into(),
            expected_task: None,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), ExecError> {
        self.gains.validate().map_err(ExecError::Config)?;
        self.datrn.validate()?;
        let positive = [
            ("grasp_radius", self.grasp_radius),
            ("stir_radius", self.stir_radius),
            ("wipe_lane_spacing", self.wipe_lane_spacing),
            ("path_spacing", self.path_spacing),
            ("path_tolerance", self.path_tolerance),
            ("tilt_seconds", self.tilt_seconds),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ExecError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.coverage) {
            return Err(ExecError::Config("coverage must lie in [0, 1]".into()));
        }
        if datrn::demos::by_name(&self.demo).is_none() {
            return Err(ExecError::Config(format!("unknown demo `{}`", self.demo)));
        }
        Ok(())
    }

    /// Goal tolerance, twice the servo convergence radius.
    pub fn success_tolerance(&self) -> f64 {
        2.0 * self.gains.epsilon
    }
}

/// Normalized progress curve taken from a DATRN rollout of a demonstration.
/// Every point-to-point motion follows it: `p(t) = a + s(t)(b − a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub progress: Vec<f64>,
    pub dt: f64,
}

impl MotionProfile {
    pub fn from_demo(demo: &Trajectory, cfg: &DatrnConfig) -> Result<Self, DatrnError> {
        let model = datrn::fit(demo, cfg)?;
        let roll = datrn::rollout(&model, demo.first(), demo.last(), demo.len() - 1)?;
        let start = roll.first();
        let end = roll.last();
        let axes: Vec<usize> = (0..3).filter(|&a| (end[a] - start[a]).abs() > 1e-9).collect();
        if axes.is_empty() {
            return Err(DatrnError::Trajectory("demonstration does not move".into()));
        }
        let progress = roll
            .samples
            .iter()
            .map(|p| axes.iter().map(|&a| (p[a] - start[a]) / (end[a] - start[a])).sum::<f64>() / axes.len() as f64)
            .collect();
        Ok(MotionProfile { progress, dt: roll.dt })
    }

    /// Waypoints from `a` to `b`, one per control tick of length `tick`.
    pub fn waypoints(&self, a: [f64; 3], b: [f64; 3], tick: f64) -> Vec<[f64; 3]> {
        let stride = ((tick / self.dt).round() as usize).max(1);
        let last = self.progress.len() - 1;
        let mut idx: Vec<usize> = (0..=last).step_by(stride).collect();
        if idx.last() != Some(&last) {
            idx.push(last);
        }
        idx.into_iter()
            .skip(1)
            .map(|i| {
                let s = self.progress[i];
                std::array::from_fn(|k| a[k] + s * (b[k] - a[k]))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Target {
    /// Point-to-point motions through each pose in order.
    Via { poses: Vec<[f64; 3]> },
    Gripper,
    Tilt { pose: [f64; 3], angle: f64 },
    Sweep { path: Vec<[f64; 3]> },
}

impl Target {
    pub fn final_pose(&self) -> Option<[f64; 3]> {
        match self {
            Target::Via { poses } => poses.last().copied(),
            Target::Gripper => None,
            Target::Tilt { pose, .. } => Some(*pose),
            Target::Sweep { path } => path.last().copied(),
        }
    }
}

fn offset(p: [f64; 3], dz: f64) -> [f64; 3] {
    [p[0], p[1], p[2] + dz]
}

fn clamp_to(ws: &WorkspaceBounds, p: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|a| p[a].clamp(ws.min[a], ws.max[a]))
}

fn extent_of(obj: &SceneObject, cfg: &EpisodeConfig) -> [f64; 2] {
    obj.extent.unwrap_or(cfg.default_extent)
}

/// Serpentine path over a rectangle centered at `center`.
pub fn boustrophedon(center: [f64; 3], extent: [f64; 2], lane: f64, spacing: f64) -> Vec<[f64; 3]> {
    let lanes = ((2.0 * extent[1] / lane).floor() as usize).max(0) + 1;
    let per_lane = ((2.0 * extent[0] / spacing).ceil() as usize).max(1);
    let mut out = Vec::with_capacity(lanes * (per_lane + 1));
    for j in 0..lanes {
        let y = if lanes == 1 { center[1] } else { center[1] - extent[1] + 2.0 * extent[1] * j as f64 / (lanes - 1) as f64 };
        for i in 0..=per_lane {
            let f = i as f64 / per_lane as f64;
            let f = if j % 2 == 0 { f } else { 1.0 - f };
            out.push([center[0] - extent[0] + 2.0 * extent[0] * f, y, center[2]]);
        }
    }
    out
}

/// One closed loop of radius `r` around `center`, starting and ending at +x.
pub fn circle(center: [f64; 3], r: f64, spacing: f64) -> Vec<[f64; 3]> {
    let n = ((std::f64::consts::TAU * r / spacing).ceil() as usize).max(8);
    (0..=n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            [center[0] + r * a.cos(), center[1] + r * a.sin(), center[2]]
        })
        .collect()
}

fn label<'a>(slot: &'a Option<String>, what: &str, a: &SubAction) -> Result<&'a str, ExecError> {
    slot.as_deref().ok_or_else(|| ExecError::Plan(format!("`{a}` has no {what}")))
}

/// Every target of the plan, computed up front from the scene. Object poses
/// are propagated through the plan so later clauses see where earlier ones
/// left things.
pub fn plan_targets(plan: &[SubAction], scene: &Scene, cfg: &EpisodeConfig) -> Result<Vec<Target>, ExecError> {
    let mut poses: BTreeMap<String, [f64; 3]> = scene.objects.iter().map(|o| (o.label.clone(), o.pose)).collect();
    let pose = |poses: &BTreeMap<String, [f64; 3]>, l: &str| {
        poses.get(l).copied().ok_or_else(|| ExecError::Plan(format!("`{l}` is not in the scene")))
    };
    let ws = &scene.workspace;
    let mut out = Vec::with_capacity(plan.len());
    let mut hand = cfg.home;
    for a in plan {
        if !a.is_grounded() {
            return Err(ExecError::Plan(format!("`{a}` is not grounded")));
        }
        let t = match a.kind {
            ActionKind::Reach => {
                let p = pose(&poses, label(&a.object, "object", a)?)?;
                Target::Via { poses: vec![clamp_to(ws, offset(p, cfg.approach_offset)), p] }
            }
            ActionKind::Grasp | ActionKind::Release => Target::Gripper,
            ActionKind::Lift => Target::Via { poses: vec![clamp_to(ws, offset(hand, cfg.lift_offset))] },
            ActionKind::Move => {
                let d = pose(&poses, label(&a.destination, "destination", a)?)?;
                Target::Via { poses: vec![clamp_to(ws, offset(d, cfg.lift_offset))] }
            }
            ActionKind::Give | ActionKind::Place => {
                let d = pose(&poses, label(&a.destination, "destination", a)?)?;
                Target::Via { poses: vec![d] }
            }
            ActionKind::Tilt => {
                let d = pose(&poses, label(&a.destination, "destination", a)?)?;
                Target::Tilt { pose: clamp_to(ws, offset(d, cfg.pour_offset)), angle: cfg.tilt_angle }
            }
            ActionKind::Wipe => {
                let name = label(&a.destination, "destination", a)?;
                let surf = scene.get(name).ok_or_else(|| ExecError::Plan(format!("`{name}` is not in the scene")))?;
                let c = clamp_to(ws, offset(pose(&poses, name)?, cfg.wipe_height));
                let path = boustrophedon(c, extent_of(surf, cfg), cfg.wipe_lane_spacing, cfg.path_spacing);
                Target::Sweep { path: path.into_iter().map(|p| clamp_to(ws, p)).collect() }
            }
            ActionKind::Stir => {
                let d = pose(&poses, label(&a.destination, "destination", a)?)?;
                let path = circle(offset(d, cfg.stir_height), cfg.stir_radius, cfg.path_spacing);
                Target::Sweep { path: path.into_iter().map(|p| clamp_to(ws, p)).collect() }
            }
            ActionKind::Retract => Target::Via { poses: vec![cfg.home] },
            ActionKind::Pad => return Err(ExecError::Plan("pad is not executable".into())),
        };
        if let Some(p) = t.final_pose() {
            hand = p;
        }
        if a.kind == ActionKind::Release || a.kind == ActionKind::Place {
            if let Some(o) = &a.object {
                let dst = a.destination.as_ref().and_then(|d| poses.get(d).copied());
                poses.insert(o.clone(), dst.unwrap_or(hand));
            }
        }
        out.push(t);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gripper {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub ee_pose: [f64; 3],
    pub gripper: Gripper,
    pub held: Option<String>,
    pub tilt_angle: f64,
    pub scene: Scene,
    pub clock: f64,
    /// Resting height of the held object before it was picked up.
    pub held_rest_z: Option<f64>,
}

impl SimState {
    pub fn new(scene: Scene, home: [f64; 3]) -> Self {
        SimState {
            ee_pose: clamp_to(&scene.workspace, home),
            gripper: Gripper::Open,
            held: None,
            tilt_angle: 0.0,
            scene,
            clock: 0.0,
            held_rest_z: None,
        }
    }

    fn sync_held(&mut self) {
        if let Some(h) = self.held.clone() {
            let p = self.ee_pose;
            if let Some(o) = self.scene.get_mut(&h) {
                o.pose = p;
            }
        }
    }

    /// Highest supporting surface under `p`, ignoring `skip`.
    fn support_z(&self, p: [f64; 3], skip: &str, cfg: &EpisodeConfig) -> Option<f64> {
        self.scene
            .objects
            .iter()
            .filter(|o| o.label != skip && o.pose[2] <= p[2] + cfg.grasp_radius)
            .filter(|o| {
                let e = match o.kind {
                    ObjectKind::Item => [cfg.grasp_radius; 2],
                    _ => extent_of(o, cfg),
                };
                (p[0] - o.pose[0]).abs() <= e[0] && (p[1] - o.pose[1]).abs() <= e[1]
            })
            .map(|o| o.pose[2])
            .fold(None, |m: Option<f64>, z| Some(m.map_or(z, |m| m.max(z))))
    }
}

struct SimPlant<'a> {
    state: &'a mut SimState,
    sweep: Option<(&'a [[f64; 3]], &'a mut Vec<bool>, f64)>,
}

impl SimPlant<'_> {
    fn mark(&mut self) {
        let p = self.state.ee_pose;
        if let Some((path, visited, tol)) = &mut self.sweep {
            for (w, v) in path.iter().zip(visited.iter_mut()) {
                if !*v && norm(sub(*w, p)) <= *tol {
                    *v = true;
                }
            }
        }
    }
}

impl Plant for SimPlant<'_> {
    fn position(&self) -> [f64; 3] {
        self.state.ee_pose
    }

    fn advance(&mut self, v: [f64; 3], dt: f64) {
        let p = self.state.ee_pose;
        self.state.ee_pose = clamp_to(&self.state.scene.workspace, std::array::from_fn(|a| p[a] + v[a] * dt));
        self.state.clock += dt;
        self.state.sync_held();
        self.mark();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultStage {
    Prediction,
    Motion,
    Grasp,
    Servo,
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum Event {
    Predicted { actions: Vec<String> },
    SlotResolved { step: usize, role: String, label: String },
    TargetsPlanned { targets: Vec<Target> },
    TargetRefreshed { label: String, pose: [f64; 3] },
    Motion { step: usize, action: String, from: [f64; 3], to: [f64; 3], ticks: usize },
    Grasp { step: usize, label: String },
    Release { step: usize, label: String, pose: [f64; 3] },
    Tilt { step: usize, max_angle: f64, pose: [f64; 3] },
    Sweep { step: usize, coverage: f64 },
    Anomaly { step: usize, message: String },
    Fault { stage: FaultStage, message: String },
    Halted { reason: HaltReason },
}

impl Event {
    pub fn is_motion(&self) -> bool {
        matches!(self, Event::Motion { .. } | Event::Tilt { .. } | Event::Sweep { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Simulation clock in seconds.
    pub t: f64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    Halted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCause {
    RobotActionNetwork,
    SubactionPrediction,
    SystemFailure,
}

/// Wall-clock split of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub prediction_seconds: f64,
    pub execution_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub instruction: String,
    pub outcome: Outcome,
    pub failure_cause: Option<FailureCause>,
    pub plan: Vec<SubAction>,
    pub trace: Vec<TraceEntry>,
    /// Simulated seconds spent moving.
    pub sim_seconds: f64,
    pub timing: Timing,
}

impl EpisodeResult {
    pub fn motion_events(&self) -> usize {
        self.trace.iter().filter(|e| e.event.is_motion()).count()
    }

    /// Copy with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> EpisodeResult {
        EpisodeResult { timing: Timing::default(), ..self.clone() }
    }
}

/// Maps a failed trace to its cause.
pub fn classify_failure(trace: &[TraceEntry]) -> Result<FailureCause, ExecError> {
    for e in trace {
        if let Event::Fault { stage, .. } = &e.event {
            return Ok(match stage {
                FaultStage::Prediction => FailureCause::SubactionPrediction,
                FaultStage::Motion | FaultStage::Grasp | FaultStage::Servo => FailureCause::RobotActionNetwork,
                FaultStage::System => FailureCause::SystemFailure,
            });
        }
    }
    for e in trace {
        if let Event::Predicted { actions } = &e.event {
            let kinds: Option<Vec<ActionKind>> =
                actions.iter().map(|a| a.parse::<SubAction>().ok().map(|s| s.kind)).collect();
            if kinds.and_then(|k| segment_plan(&k)).is_none() {
                return Ok(FailureCause::SubactionPrediction);
            }
        }
    }
    Err(ExecError::NotAFailure)
}

/// Episode machinery shared across runs: the motion profile and the config.
#[derive(Debug, Clone)]
pub struct Executor {
    pub config: EpisodeConfig,
    pub profile: MotionProfile,
}

struct Run<'a> {
    cfg: &'a EpisodeConfig,
    profile: &'a MotionProfile,
    state: SimState,
    trace: Vec<TraceEntry>,
    rng: ChaCha8Rng,
    max_tilt: BTreeMap<usize, (f64, [f64; 3])>,
    coverage: BTreeMap<usize, f64>,
}

enum StepError {
    Fault(FaultStage, String),
}

impl Run<'_> {
    fn log(&mut self, event: Event) {
        self.trace.push(TraceEntry { t: self.state.clock, event });
    }

    fn fault(stage: FaultStage, msg: impl Into<String>) -> StepError {
        StepError::Fault(stage, msg.into())
    }

    /// Learned-profile motion to `to`, finished by a servo onto the exact pose.
    fn move_to(&mut self, step: usize, action: &str, to: [f64; 3], refresh: Option<&str>) -> Result<(), StepError> {
        let g = &self.cfg.gains;
        let from = self.state.ee_pose;
        let clock0 = self.state.clock;
        let waypoints = self.profile.waypoints(from, to, g.dt);
        let mut plant = SimPlant { state: &mut self.state, sweep: None };
        crate::control::track(g, &mut plant, &waypoints);
        let r = servo_to(g, &mut plant, to);
        let mut target = r.target;
        if !r.converged {
            return Err(Self::fault(FaultStage::Servo, format!("`{action}` did not converge within {} steps", g.max_steps)));
        }
        if let Some(l) = refresh {
            // Last look at the object before the gripper occludes it.
            if let Ok(det) = analyze_scene_noisy(&self.state.scene, l, self.cfg.confidence_threshold, self.cfg.noise, &mut self.rng) {
                let p = clamp_to(&self.state.scene.workspace, locate(&self.state.scene, &det));
                self.log(Event::TargetRefreshed { label: l.to_string(), pose: p });
                if p != target {
                    let mut plant = SimPlant { state: &mut self.state, sweep: None };
                    let r = servo_to(g, &mut plant, p);
                    if !r.converged {
                        return Err(Self::fault(FaultStage::Servo, format!("`{action}` refresh did not converge")));
                    }
                    target = p;
                }
            }
        }
        let ticks = ((self.state.clock - clock0) / g.dt).round() as usize;
        let end = self.state.ee_pose;
        self.log(Event::Motion { step, action: action.to_string(), from, to: target, ticks });
        if norm(sub(end, target)) >= g.epsilon {
            return Err(Self::fault(FaultStage::Motion, format!("`{action}` ended {:.4} m from target", norm(sub(end, target)))));
        }
        Ok(())
    }

    fn grasp(&mut self, step: usize, a: &SubAction) -> Result<(), StepError> {
        if let Some(h) = &self.state.held {
            let msg = format!("grasp while already holding `{h}`");
            self.log(Event::Anomaly { step, message: msg });
            return Ok(());
        }
        let p = self.state.ee_pose;
        let nearest = self
            .state
            .scene
            .objects
            .iter()
            .filter(|o| o.kind == ObjectKind::Item)
            .map(|o| (norm(sub(o.pose, p)), o))
            .filter(|(d, _)| *d <= self.cfg.grasp_radius)
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.label.cmp(&b.1.label)))
            .map(|(_, o)| (o.label.clone(), o.pose[2]));
        let Some((l, z)) = nearest else {
            self.state.gripper = Gripper::Closed;
            let want = a.object.as_deref().unwrap_or("?");
            return Err(Self::fault(FaultStage::Grasp, format!("no object within grasp radius (wanted `{want}`)")));
        };
        self.state.gripper = Gripper::Closed;
        self.state.held = Some(l.clone());
        self.state.held_rest_z = Some(z);
        self.state.sync_held();
        self.log(Event::Grasp { step, label: l });
        Ok(())
    }

    fn release(&mut self, step: usize) {
        self.state.gripper = Gripper::Open;
        let Some(l) = self.state.held.take() else {
            self.log(Event::Anomaly { step, message: "release with an empty gripper".into() });
            return;
        };
        let p = self.state.ee_pose;
        let rest = self.state.held_rest_z.take().unwrap_or(p[2]);
        let z = self.state.support_z(p, &l, self.cfg).unwrap_or(rest).min(p[2]);
        let pose = [p[0], p[1], z];
        if let Some(o) = self.state.scene.get_mut(&l) {
            o.pose = pose;
        }
        self.log(Event::Release { step, label: l, pose });
    }

    fn tilt(&mut self, step: usize, a: &SubAction, pose: [f64; 3], angle: f64) -> Result<(), StepError> {
        self.move_to(step, &a.to_string(), pose, None)?;
        let g = &self.cfg.gains;
        let n = ((self.cfg.tilt_seconds / g.dt).ceil() as usize).max(1);
        let mut max: f64 = 0.0;
        for i in (1..=n).chain((0..n).rev()) {
            self.state.tilt_angle = angle * i as f64 / n as f64;
            max = max.max(self.state.tilt_angle);
            self.state.clock += g.dt;
        }
        self.log(Event::Tilt { step, max_angle: max, pose: self.state.ee_pose });
        self.max_tilt.insert(step, (max, self.state.ee_pose));
        Ok(())
    }

    fn sweep(&mut self, step: usize, a: &SubAction, path: &[[f64; 3]]) -> Result<(), StepError> {
        let Some(&start) = path.first() else { return Ok(()) };
        self.move_to(step, &a.to_string(), start, None)?;
        let mut visited = vec![false; path.len()];
        let path_gains = ControllerGains { epsilon: self.cfg.path_tolerance * 0.5, ..self.cfg.gains.clone() };
        let mut plant = SimPlant {
            state: &mut self.state,
            sweep: Some((path, &mut visited, self.cfg.path_tolerance)),
        };
        plant.mark();
        for w in path {
            let r = servo_to(&path_gains, &mut plant, *w);
            if !r.converged {
                return Err(Self::fault(FaultStage::Servo, format!("`{a}` lost the path")));
            }
        }
        let coverage = visited.iter().filter(|v| **v).count() as f64 / path.len() as f64;
        self.log(Event::Sweep { step, coverage });
        self.coverage.insert(step, coverage);
        Ok(())
    }

    fn execute(&mut self, step: usize, a: &SubAction, target: &Target) -> Result<(), StepError> {
        match (a.kind, target) {
            (ActionKind::Grasp, _) => self.grasp(step, a),
            (ActionKind::Release, _) => {
                self.release(step);
                Ok(())
            }
            (_, Target::Via { poses }) => {
                let n = poses.len();
                for (i, p) in poses.iter().enumerate() {
                    let refresh = (a.kind == ActionKind::Reach && i + 1 == n).then_some(a.object.as_deref()).flatten();
                    self.move_to(step, &a.to_string(), *p, refresh)?;
                }
                if a.kind == ActionKind::Place && self.state.held.is_none() {
                    self.log(Event::Anomaly { step, message: "place with an empty gripper".into() });
                }
                Ok(())
            }
            (_, Target::Tilt { pose, angle }) => self.tilt(step, a, *pose, *angle),
            (_, Target::Sweep { path }) => self.sweep(step, a, path),
            (_, Target::Gripper) => Ok(()),
        }
    }
}

/// Checks the goal predicate of each clause of the plan against the final
/// state, with positional tolerance `tol`.
fn goal_holds(run: &Run, plan: &[SubAction], scene: &Scene, targets: &[Target], tol: f64) -> bool {
    let (state, cfg, cov, tilt) = (&run.state, run.cfg, &run.coverage, &run.max_tilt);
    let kinds: Vec<ActionKind> = plan.iter().map(|a| a.kind).collect();
    let Some(tasks) = segment_plan(&kinds) else { return false };
    let mut start = 0;
        for (ci, task) in tasks.iter().enumerate() {
        let last_clause = ci + 1 == tasks.len();
        let len = task.pattern().len();
        let clause = &plan[start..start + len];
        let obj = clause[0].object.as_deref().unwrap_or_default();
        let dest = clause.iter().find_map(|a| a.destination.clone());
        let dest_pose = dest.as_deref().and_then(|d| scene.get(d)).map(|o| o.pose);
        let obj_pose = state.scene.get(obj).map(|o| o.pose);
        let near = |a: Option<[f64; 3]>, b: Option<[f64; 3]>| matches!((a, b), (Some(a), Some(b)) if norm(sub(a, b)) <= tol);
        let step_of = |k: ActionKind| clause.iter().position(|a| a.kind == k).map(|i| i + start);
        let ok = match task {
            TaskKind::PickPlace | TaskKind::PickGive => {
                state.held.as_deref() != Some(obj) && near(obj_pose, dest_pose)
            }
            TaskKind::PickPour => step_of(ActionKind::Tilt).is_some_and(|s| {
                let want = targets.get(s).and_then(Target::final_pose);
                tilt.get(&s).is_some_and(|(a, p)| *a >= cfg.tilt_angle - 1e-12 && near(Some(*p), want))
            }),
            TaskKind::Stir => step_of(ActionKind::Stir).is_some_and(|s| cov.get(&s).is_some_and(|c| *c >= cfg.coverage)),
            TaskKind::Cleaning => step_of(ActionKind::Wipe).is_some_and(|s| cov.get(&s).is_some_and(|c| *c >= cfg.coverage)),
            TaskKind::PickUp => {
                let lift = step_of(ActionKind::Lift).and_then(|s| targets.get(s)).and_then(Target::final_pose);
                !last_clause || (state.held.as_deref() == Some(obj) && near(Some(state.ee_pose), lift))
            }
            TaskKind::Compositional => false,
        };
        if !ok {
            return false;
        }
        start += len;
    }
    if tasks.last().is_some_and(|t| *t != TaskKind::PickUp) && state.gripper != Gripper::Open {
        return false;
    }
    true
}

fn motion_profile(cfg: &EpisodeConfig) -> Result<MotionProfile, ExecError> {
    let demo = datrn::demos::by_name(&cfg.demo).ok_or_else(|| ExecError::Config(format!("unknown demo `{}`", cfg.demo)))?;
    Ok(MotionProfile::from_demo(&demo, &cfg.datrn)?)
}

impl Executor {
    pub fn new(config: EpisodeConfig) -> Result<Self, ExecError> {
        config.validate()?;
        let profile = motion_profile(&config)?;
        Ok(Executor { config, profile })
    }

    /// Runs a plan that is already predicted. `prompter` fills missing slots.
    pub fn execute_plan(
        &self,
        instruction: &str,
        plan: Vec<SubAction>,
        scene: &Scene,
        prompter: &mut dyn Prompter,
    ) -> EpisodeResult {
        let start = Instant::now();
        let cfg = &self.config;
        let mut run = Run {
            cfg,
            profile: &self.profile,
            state: SimState::new(scene.clone(), cfg.home),
            trace: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            max_tilt: BTreeMap::new(),
            coverage: BTreeMap::new(),
        };
        run.log(Event::Predicted { actions: plan.iter().map(|a| a.to_string()).collect() });
        let finish = |run: Run, plan: Vec<SubAction>, outcome: Outcome, cause: Option<FailureCause>| EpisodeResult {
            instruction: instruction.to_string(),
            outcome,
            failure_cause: cause,
            plan,
            sim_seconds: run.state.clock,
            trace: run.trace,
            timing: Timing { execution_seconds: start.elapsed().as_secs_f64(), ..Timing::default() },
        };
        let fail = |mut run: Run, plan: Vec<SubAction>, stage: FaultStage, msg: String| {
            run.log(Event::Fault { stage, message: msg });
            let cause = classify_failure(&run.trace).ok();
            finish(run, plan, Outcome::Failure, cause)
        };

        let kinds: Vec<ActionKind> = plan.iter().map(|a| a.kind).collect();
        let Some(tasks) = segment_plan(&kinds) else {
            return fail(run, plan, FaultStage::Prediction, "predicted sequence breaks the task ordering".into());
        };
        if let Some(want) = cfg.expected_task {
            if tasks != [want] {
                let got: Vec<&str> = tasks.iter().map(|t| t.name()).collect();
                return fail(run, plan, FaultStage::Prediction, format!("expected {want}, predicted {}", got.join("+")));
            }
        }

        let resolved = match resolve_missing(&plan, scene, prompter, cfg.confidence_threshold) {
            Ok(p) => p,
            Err(reason) => {
                run.log(Event::Halted { reason });
                return finish(run, plan, Outcome::Halted, None);
            }
        };
        for (i, (a, b)) in plan.iter().zip(&resolved).enumerate() {
            for (role, before, after) in [("object", &a.object, &b.object), ("destination", &a.destination, &b.destination)] {
                if before.is_none() {
                    if let Some(l) = after {
                        run.log(Event::SlotResolved { step: i, role: role.into(), label: l.clone() });
                    }
                }
            }
        }
        let plan = resolved;

        let mut labels: Vec<&str> = Vec::new();
        for a in &plan {
            for l in [&a.object, &a.destination].into_iter().flatten() {
                if !labels.contains(&l.as_str()) {
                    labels.push(l);
                }
            }
        }
        for l in labels {
            if let Err(r) = analyze_scene_noisy(scene, l, cfg.confidence_threshold, cfg.noise, &mut run.rng) {
                let why = match r {
                    NotFoundReason::Absent => "absent",
                    NotFoundReason::LowConfidence => "low confidence",
                    NotFoundReason::BehindCamera => "behind camera",
                };
                run.log(Event::Halted { reason: HaltReason::NotFound(format!("{l} ({why})")) });
                return finish(run, plan, Outcome::Halted, None);
            }
        }

        let targets = match plan_targets(&plan, scene, cfg) {
            Ok(t) => t,
            Err(e) => return fail(run, plan, FaultStage::System, e.to_string()),
        };
        run.log(Event::TargetsPlanned { targets: targets.clone() });

        for (i, (a, t)) in plan.iter().zip(&targets).enumerate() {
            if let Err(StepError::Fault(stage, msg)) = run.execute(i, a, t) {
                return fail(run, plan, stage, msg);
            }
        }
        let ok = goal_holds(&run, &plan, scene, &targets, cfg.success_tolerance());
        if ok {
            finish(run, plan, Outcome::Success, None)
        } else {
            fail(run, plan, FaultStage::Motion, "goal predicate does not hold".into())
        }
    }

    /// Predicts, resolves, plans and executes one instruction.
    pub fn run_episode(
        &self,
        instruction: &str,
        scene: &Scene,
        predictor: &Predictor,
        prompter: &mut dyn Prompter,
    ) -> EpisodeResult {
        let start = Instant::now();
        let pred = match predictor.predict(instruction) {
            Ok(p) => p,
            Err(e) => {
                let stage = match e {
                    ModelError::Embed(EmbedError::EmptyInput) => FaultStage::Prediction,
                    _ => FaultStage::System,
                };
                let trace = vec![TraceEntry { t: 0.0, event: Event::Fault { stage, message: e.to_string() } }];
                let cause = classify_failure(&trace).ok();
                let secs = start.elapsed().as_secs_f64();
                return EpisodeResult {
                    instruction: instruction.to_string(),
                    outcome: Outcome::Failure,
                    failure_cause: cause,
                    plan: Vec::new(),
                    trace,
                    sim_seconds: 0.0,
                    timing: Timing { prediction_seconds: secs, execution_seconds: 0.0, total_seconds: secs },
                };
            }
        };
        let prediction_seconds = start.elapsed().as_secs_f64();
        let mut r = self.execute_plan(instruction, pred.actions, scene, prompter);
        r.timing.prediction_seconds = prediction_seconds;
        r.timing.total_seconds = start.elapsed().as_secs_f64();
        r
    }
}

/// Tasks exercised by the evaluation suite.
pub const SUITE_TASKS: [TaskKind; 4] = [TaskKind::PickPlace, TaskKind::PickPour, TaskKind::Cleaning, TaskKind::PickGive];

/// Instruction, complete scene and key object for one suite trial. Object
/// positions get seeded jitter of up to 3 cm.
pub fn suite_trial(task: TaskKind, seed: u64) -> Result<(String, Scene, &'static str), ExecError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (task as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut jitter = |p: [f64; 3]| [p[0] + rng.random_range(-0.03..=0.03), p[1] + rng.random_range(-0.03..=0.03), p[2]];
    let surface = |label: &str, pose: [f64; 3], extent: [f64; 2]| SceneObject {
        label: label.into(),
        pose,
        confidence: 0.98,
        kind: ObjectKind::Surface,
        extent: Some(extent),
    };
    let mut objects = vec![surface("table", [0.4, 0.0, 0.0], [0.1, 0.1])];
    let (text, key) = match task {
        TaskKind::PickPlace => {
            objects.push(SceneObject::item("bottle", jitter([0.45, -0.1, 0.05])));
            objects.push(surface("tray", jitter([0.25, 0.3, 0.02]), [0.08, 0.06]));
            ("pick up the bottle and place it on the tray", "bottle")
        }
        TaskKind::PickPour => {
            objects.push(SceneObject::item("bottle", jitter([0.45, -0.1, 0.05])));
            objects.push(SceneObject::item("cup", jitter([0.3, 0.25, 0.04])));
            ("pick up the bottle and pour it into the cup", "bottle")
        }
        TaskKind::Cleaning => {
            objects.push(SceneObject::item("sponge", jitter([0.2, -0.3, 0.02])));
            ("wipe the table with the sponge", "sponge")
        }
        TaskKind::PickGive => {
            objects.push(SceneObject::item("apple", jitter([0.45, 0.1, 0.04])));
            let mut person = SceneObject::item("person", jitter([0.6, -0.35, 0.3]));
            person.kind = ObjectKind::Person;
            person.extent = Some([0.05, 0.05]);
            objects.push(person);
            ("pick up the apple and give it to me", "apple")
        }
        other => return Err(ExecError::Config(format!("no suite scene for {other}"))),
    };
    objects.push(SceneObject::item("book", jitter([0.65, 0.35, 0.03])));
    let scene = Scene::new(objects).map_err(|e| ExecError::Config(e.to_string()))?;
    Ok((text.to_string(), scene, key))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub task: TaskKind,
    pub seed: u64,
    /// True for the variant with the key object removed.
    pub absent: bool,
    pub result: EpisodeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: TaskKind,
    pub trials: usize,
    pub successes: usize,
    pub mean_prediction_seconds: f64,
    pub mean_execution_seconds: f64,
    pub mean_sim_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub summaries: Vec<TaskSummary>,
    pub successes: usize,
    pub trials: usize,
    pub absent_trials: usize,
    pub absent_halted: usize,
    pub absent_motion_events: usize,
    pub failures: BTreeMap<FailureCause, usize>,
    pub records: Vec<TrialRecord>,
}

impl SuiteReport {
    pub fn from_records(mut records: Vec<TrialRecord>) -> Self {
        records.sort_by_key(|r| r.index);
        let mut summaries = Vec::new();
        let mut tasks: Vec<TaskKind> = records.iter().map(|r| r.task).collect();
        tasks.sort();
        tasks.dedup();
        for task in tasks {
            let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.task == task && !r.absent).collect();
            if rs.is_empty() {
                continue;
            }
            let n = rs.len() as f64;
            summaries.push(TaskSummary {
                task,
                trials: rs.len(),
                successes: rs.iter().filter(|r| r.result.outcome == Outcome::Success).count(),
                mean_prediction_seconds: rs.iter().map(|r| r.result.timing.prediction_seconds).sum::<f64>() / n,
                mean_execution_seconds: rs.iter().map(|r| r.result.timing.execution_seconds).sum::<f64>() / n,
                mean_sim_seconds: rs.iter().map(|r| r.result.sim_seconds).sum::<f64>() / n,
            });
        }
        let mut failures = BTreeMap::new();
        for r in records.iter().filter(|r| !r.absent) {
            if let Some(c) = r.result.failure_cause {
                *failures.entry(c).or_insert(0) += 1;
            }
        }
        let absent: Vec<&TrialRecord> = records.iter().filter(|r| r.absent).collect();
        SuiteReport {
            successes: summaries.iter().map(|s| s.successes).sum(),
            trials: summaries.iter().map(|s| s.trials).sum(),
            absent_trials: absent.len(),
            absent_halted: absent.iter().filter(|r| r.result.outcome == Outcome::Halted).count(),
            absent_motion_events: absent.iter().map(|r| r.result.motion_events()).sum(),
            summaries,
            failures,
            records,
        }
    }
}

/// Runs `trials` seeded episodes per task, plus one absent-object variant
/// per trial when `with_absent` is set, on up to `jobs` threads.
pub fn run_suite(
    executor: &Executor,
    predictor: &Predictor,
    tasks: &[TaskKind],
    trials: usize,
    seed: u64,
    with_absent: bool,
    jobs: usize,
) -> Result<SuiteReport, ExecError> {
    let mut specs = Vec::new();
    for &task in tasks {
        for k in 0..trials {
            let s = seed.wrapping_add(k as u64);
            let (text, scene, key) = suite_trial(task, s)?;
            specs.push((task, s, false, text.clone(), scene.clone()));
            if with_absent {
                let mut gone = scene;
                gone.objects.retain(|o| o.label != key);
                specs.push((task, s, true, text, gone));
            }
        }
    }
    let jobs = jobs.max(1).min(specs.len().max(1));
    let run_one = |i: usize| {
        let (task, s, absent, text, scene) = &specs[i];
        let mut ex = executor.clone();
        ex.config.seed = *s;
        ex.config.expected_task = Some(*task);
        let mut prompter = crate::vision::ScriptedPrompter::default();
        let result = ex.run_episode(text, scene, predictor, &mut prompter);
        TrialRecord { index: i, task: *task, seed: *s, absent: *absent, result }
    };
    let records: Vec<TrialRecord> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let run_one = &run_one;
                let n = specs.len();
                scope.spawn(move || (j..n).step_by(jobs).map(run_one).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("suite worker panicked")).collect()
    });
    Ok(SuiteReport::from_records(records))
}
