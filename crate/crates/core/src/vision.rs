//! Pinhole camera geometry, scene files and the environment analyzer.
//!
//! Detections are synthesized from ground-truth scene poses: a pose is moved
//! into the camera frame, projected through the intrinsics and, optionally,
//! perturbed with Gaussian pixel and depth noise.

use std::collections::{BTreeSet, VecDeque};
use std::io::BufRead;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ActionKind, SubAction};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("depth must be positive, got {0}")]
    Depth(f64),
    #[error("invalid camera intrinsics: {0}")]
    Intrinsics(String),
    #[error("invalid transform: {0}")]
    Transform(String),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("point is behind the camera")]
    BehindCamera,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    /// Generic 640×480 sensor.
    fn default() -> Self {
        CameraIntrinsics { fx: 600.0, fy: 600.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), VisionError> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(VisionError::Intrinsics("focal lengths must be positive".into()));
        }
        Ok(())
    }
}

/// Camera-frame point from pixel coordinates and depth.
pub fn back_project(u: f64, v: f64, d: f64, intr: &CameraIntrinsics) -> Result<[f64; 3], VisionError> {
    if !(d > 0.0) {
        return Err(VisionError::Depth(d));
    }
    Ok([(u - intr.cx) / intr.fx * d, (v - intr.cy) / intr.fy * d, d])
}

/// Pixel coordinates and depth of a camera-frame point.
pub fn project(p: [f64; 3], intr: &CameraIntrinsics) -> Result<(f64, f64, f64), VisionError> {
    let z = p[2];
    if !(z > 0.0) {
        return Err(VisionError::BehindCamera);
    }
    Ok((intr.fx * p[0] / z + intr.cx, intr.fy * p[1] / z + intr.cy, z))
}

/// Homogeneous rigid transform, camera frame to base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    matrix: Matrix4<f64>,
}

impl RigidTransform {
    pub fn new(matrix: Matrix4<f64>) -> Result<Self, VisionError> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(VisionError::Transform("entries must be finite".into()));
        }
        let last = matrix.row(3);
        if (last[0], last[1], last[2], last[3]) != (0.0, 0.0, 0.0, 1.0) {
            return Err(VisionError::Transform("last row must be (0, 0, 0, 1)".into()));
        }
        let r: Matrix3<f64> = matrix.fixed_view::<3, 3>(0, 0).into_owned();
        let off = (r.transpose() * r - Matrix3::identity()).abs().max();
        if off > 1e-9 {
            return Err(VisionError::Transform(format!("rotation is not orthonormal (error {off:.2e})")));
        }
        if (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(VisionError::Transform("rotation determinant must be +1".into()));
        }
        Ok(RigidTransform { matrix })
    }

    pub fn identity() -> Self {
        RigidTransform { matrix: Matrix4::identity() }
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: [f64; 3]) -> Result<Self, VisionError> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&Vector3::from(translation));
        RigidTransform::new(m)
    }

    pub fn translation(t: [f64; 3]) -> Self {
        RigidTransform::from_parts(Matrix3::identity(), t).expect("identity rotation is valid")
    }

    /// Camera 0.8 m above the table looking straight down, image x along
    /// base −y and image y along base −x.
    pub fn overhead() -> Self {
        let r = Matrix3::from_columns(&[
            Vector3::new(0.0, -1.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, -1.0),
        ]);
        RigidTransform::from_parts(r, [0.35, 0.0, 0.8]).expect("overhead transform is valid")
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let h = self.matrix * Vector4::new(p[0], p[1], p[2], 1.0);
        [h[0], h[1], h[2]]
    }

    /// Closed-form inverse `[Rᵀ | −Rᵀt]`.
    pub fn inverse(&self) -> RigidTransform {
        let r: Matrix3<f64> = self.matrix.fixed_view::<3, 3>(0, 0).transpose();
        let t: Vector3<f64> = self.matrix.fixed_view::<3, 1>(0, 3).into_owned();
        let ti = -(r * t);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&ti);
        RigidTransform { matrix: m }
    }

    pub fn rows(&self) -> [[f64; 4]; 4] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.matrix[(i, j)]))
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = <[[f64; 4]; 4]>::deserialize(d)?;
        RigidTransform::new(Matrix4::from_fn(|i, j| rows[i][j])).map_err(serde::de::Error::custom)
    }
}

pub fn to_base(p_c: [f64; 3], t: &RigidTransform) -> [f64; 3] {
    t.apply(p_c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NotFoundReason {
    Absent,
    LowConfidence,
    BehindCamera,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    #[default]
    Item,
    Surface,
    Person,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub label: String,
    /// Base-frame position in meters.
    pub pose: [f64; 3],
    pub confidence: f64,
    #[serde(default)]
    pub kind: ObjectKind,
    /// Half extents along base x and y, used for surfaces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<[f64; 2]>,
}

impl SceneObject {
    pub fn item(label: &str, pose: [f64; 3]) -> Self {
        SceneObject { label: label.into(), pose, confidence: 0.95, kind: ObjectKind::Item, extent: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for WorkspaceBounds {
    fn default() -> Self {
        WorkspaceBounds { min: [0.0, -0.5, 0.0], max: [0.8, 0.5, 0.8] }
    }
}

impl WorkspaceBounds {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub intrinsics: CameraIntrinsics,
    pub camera_to_base: RigidTransform,
    pub workspace: WorkspaceBounds,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn new(objects: Vec<SceneObject>) -> Result<Self, VisionError> {
        let s = Scene {
            intrinsics: CameraIntrinsics::default(),
            camera_to_base: RigidTransform::overhead(),
            workspace: WorkspaceBounds::default(),
            objects,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), VisionError> {
        self.intrinsics.validate()?;
        let mut seen = BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(o.label.as_str()) {
                return Err(VisionError::Scene(format!("duplicate label `{}`", o.label)));
            }
            if !self.workspace.contains(o.pose) {
                return Err(VisionError::Scene(format!("`{}` lies outside the workspace", o.label)));
            }
            if !(0.0..=1.0).contains(&o.confidence) {
                return Err(VisionError::Scene(format!("`{}` confidence must lie in [0, 1]", o.label)));
            }
        }
        Ok(())
    }

    pub fn get(&self, label: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.label == label)
    }

    pub fn get_mut(&mut self, label: &str) -> Option<&mut SceneObject> {
        self.objects.iter_mut().find(|o| o.label == label)
    }

    pub fn from_json(text: &str) -> Result<Self, VisionError> {
        let s: Scene = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn load(path: &Path) -> Result<Self, VisionError> {
        Scene::from_json(&std::fs::read_to_string(path)?)
    }

    /// Bundled tabletop scene with a table, a tray, a few graspable items and
    /// a person.
    pub fn kitchen() -> Scene {
        Scene::from_json(include_str!("../data/scene_kitchen.json")).expect("bundled scene is valid")
    }
}

/// Optional detector noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionNoise {
    pub pixel_sigma: f64,
    pub depth_sigma: f64,
}

/// Looks up `label` and synthesizes its detection.
pub fn analyze_scene(scene: &Scene, label: &str, threshold: f64) -> Result<Detection, NotFoundReason> {
    analyze_scene_noisy(scene, label, threshold, DetectionNoise::default(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))
}

pub fn analyze_scene_noisy<R: Rng + ?Sized>(
    scene: &Scene,
    label: &str,
    threshold: f64,
    noise: DetectionNoise,
    rng: &mut R,
) -> Result<Detection, NotFoundReason> {
    let obj = scene.get(label).ok_or(NotFoundReason::Absent)?;
    if obj.confidence < threshold {
        return Err(NotFoundReason::LowConfidence);
    }
    let p_c = scene.camera_to_base.inverse().apply(obj.pose);
    let (mut u, mut v, mut depth) =
        project(p_c, &scene.intrinsics).map_err(|_| NotFoundReason::BehindCamera)?;
    if noise.pixel_sigma > 0.0 {
        let n = Normal::new(0.0, noise.pixel_sigma).expect("positive sigma");
        u += n.sample(rng);
        v += n.sample(rng);
    }
    if noise.depth_sigma > 0.0 {
        depth = (depth + Normal::new(0.0, noise.depth_sigma).expect("positive sigma").sample(rng)).max(1e-6);
    }
    Ok(Detection { label: obj.label.clone(), u, v, depth, confidence: obj.confidence })
}

/// Base-frame position recovered from a detection.
pub fn locate(scene: &Scene, det: &Detection) -> [f64; 3] {
    let p_c = back_project(det.u, det.v, det.depth, &scene.intrinsics).expect("detections have positive depth");
    to_base(p_c, &scene.camera_to_base)
}

/// Question posed to the user for a missing slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotQuery {
    pub step: usize,
    pub action: String,
    pub role: SlotRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotRole {
    Object,
    Destination,
}

impl SlotQuery {
    pub fn question(&self) -> String {
        match self.role {
            SlotRole::Object => format!("Which object should I use for `{}`?", self.action),
            SlotRole::Destination => format!("Where should `{}` go?", self.action),
        }
    }
}

pub trait Prompter {
    fn ask(&mut self, query: &SlotQuery) -> Result<String, String>;
}

/// Answers from a fixed list, in order.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPrompter {
    pub answers: VecDeque<String>,
    pub asked: Vec<SlotQuery>,
}

impl ScriptedPrompter {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(answers: I) -> Self {
        ScriptedPrompter { answers: answers.into_iter().map(Into::into).collect(), asked: Vec::new() }
    }
}

impl Prompter for ScriptedPrompter {
    fn ask(&mut self, query: &SlotQuery) -> Result<String, String> {
        self.asked.push(query.clone());
        self.answers.pop_front().ok_or_else(|| "no scripted answer left".to_string())
    }
}

/// Reads one answer per line from a reader, echoing questions to a writer.
pub struct LinePrompter<R: BufRead, W: std::io::Write> {
    pub input: R,
    pub output: W,
}

impl<R: BufRead, W: std::io::Write> Prompter for LinePrompter<R, W> {
    fn ask(&mut self, query: &SlotQuery) -> Result<String, String> {
        writeln!(self.output, "{}", query.question()).map_err(|e| e.to_string())?;
        self.output.flush().map_err(|e| e.to_string())?;
        let mut line = String::new();
        match self.input.read_line(&mut line) {
            Ok(0) => Err("input closed".into()),
            Ok(_) => Ok(line.trim().to_string()),
            Err(e) => Err(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason", content = "detail")]
pub enum HaltReason {
    NotFound(String),
    PromptError(String),
}

/// Fills every missing object or destination by asking the user, once per
/// role per clause, and checks that each answer is visible in the scene.
pub fn resolve_missing(
    plan: &[SubAction],
    scene: &Scene,
    prompter: &mut dyn Prompter,
    threshold: f64,
) -> Result<Vec<SubAction>, HaltReason> {
    let mut out = plan.to_vec();
    let mut start = 0;
    while start < out.len() {
        let end = (start + 1..out.len()).find(|&i| out[i].kind == ActionKind::Reach).unwrap_or(out.len());
        for role in [SlotRole::Object, SlotRole::Destination] {
            let missing: Vec<usize> = (start..end)
                .filter(|&i| match role {
                    SlotRole::Object => out[i].kind.takes_object() && out[i].object.is_none(),
                    SlotRole::Destination => out[i].kind.takes_destination() && out[i].destination.is_none(),
                })
                .collect();
            let Some(&first) = missing.first() else { continue };
            let query = SlotQuery { step: first, action: out[first].to_string(), role };
            let answer = prompter.ask(&query).map_err(HaltReason::PromptError)?;
            let label = answer.trim().to_lowercase();
            if analyze_scene(scene, &label, threshold).is_err() {
                return Err(HaltReason::NotFound(label));
            }
            for i in missing {
                match role {
                    SlotRole::Object => out[i].object = Some(label.clone()),
                    SlotRole::Destination => out[i].destination = Some(label.clone()),
                }
            }
        }
        start = end;
    }
    Ok(out)
}
