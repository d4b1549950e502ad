//! Domain types shared by every other module and the canonical default scenario.
//!
//! All lengths are metres, all angles radians unless a field says otherwise.
//! The lateral axis is `y` (positive to the right) and the vertical axis is `z`
//! (positive up), so a positive rotation is counterclockwise in the camera view.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scenario file schema version understood by this build.
pub const FORMAT_VERSION: u32 = 1;

const DEFAULT_SCENARIO_JSON: &str = include_str!("../../../configs/default_scenario.json");

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("unsupported scenario format_version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("failed to read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Commanded arm configuration. `(y, z)` is the tool-centre point, which sits at the
/// tip of an undeflected, perfectly grasped peg; `theta` rotates the tool about it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmPose {
    pub y: f64,
    pub z: f64,
    pub theta: f64,
}

impl ArmPose {
    pub const fn new(y: f64, z: f64, theta: f64) -> Self {
        Self { y, z, theta }
    }

    pub fn is_finite(&self) -> bool {
        self.y.is_finite() && self.z.is_finite() && self.theta.is_finite()
    }
}

/// A masked goal: absent dimensions inherit the goal of the previously executed skill.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GoalSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

impl GoalSpec {
    pub fn full(pose: ArmPose) -> Self {
        Self {
            y: Some(pose.y),
            z: Some(pose.z),
            theta: Some(pose.theta),
        }
    }

    pub fn y_only(y: f64) -> Self {
        Self {
            y: Some(y),
            ..Self::default()
        }
    }

    pub fn z_only(z: f64) -> Self {
        Self {
            z: Some(z),
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_none() && self.z.is_none() && self.theta.is_none()
    }

    /// Fills masked dimensions from `previous`.
    pub fn resolve(&self, previous: ArmPose) -> ArmPose {
        ArmPose {
            y: self.y.unwrap_or(previous.y),
            z: self.z.unwrap_or(previous.z),
            theta: self.theta.unwrap_or(previous.theta),
        }
    }

    /// Overwrites the dimensions present in `update`, keeping the rest.
    pub fn merged(&self, update: &GoalSpec) -> GoalSpec {
        GoalSpec {
            y: update.y.or(self.y),
            z: update.z.or(self.z),
            theta: update.theta.or(self.theta),
        }
    }
}

/// The five contact formations, in canonical execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactFormation {
    Approach,
    Contact,
    Fit,
    Align,
    Insert,
}

impl ContactFormation {
    pub const ALL: [ContactFormation; 5] = [
        ContactFormation::Approach,
        ContactFormation::Contact,
        ContactFormation::Fit,
        ContactFormation::Align,
        ContactFormation::Insert,
    ];

    /// Formations a recovery plan may schedule.
    pub const RECOVERABLE: [ContactFormation; 3] = [
        ContactFormation::Fit,
        ContactFormation::Align,
        ContactFormation::Insert,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn next(self) -> Option<Self> {
        Self::from_index(self.index() + 1)
    }

    pub fn is_recoverable(self) -> bool {
        self >= ContactFormation::Fit
    }

    /// Row/column of the recovery transition matrix.
    pub fn recovery_index(self) -> Option<usize> {
        self.is_recoverable().then(|| self.index() - 2)
    }

    pub fn name(self) -> &'static str {
        match self {
            ContactFormation::Approach => "approach",
            ContactFormation::Contact => "contact",
            ContactFormation::Fit => "fit",
            ContactFormation::Align => "align",
            ContactFormation::Insert => "insert",
        }
    }
}

impl fmt::Display for ContactFormation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PegShape {
    Circular,
    Square,
    Rectangular,
}

impl PegShape {
    pub const ALL: [PegShape; 3] = [PegShape::Circular, PegShape::Square, PegShape::Rectangular];

    pub fn name(self) -> &'static str {
        match self {
            PegShape::Circular => "circular",
            PegShape::Square => "square",
            PegShape::Rectangular => "rectangular",
        }
    }
}

impl fmt::Display for PegShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PegShape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "circular" | "circle" => Ok(PegShape::Circular),
            "square" => Ok(PegShape::Square),
            "rectangular" | "rectangle" => Ok(PegShape::Rectangular),
            other => Err(format!("unknown peg shape `{other}`")),
        }
    }
}

/// Side silhouette of the grasped peg. Circular and square pegs share the same
/// rectangle; the shape tag only selects the catalog entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PegSpec {
    pub shape: PegShape,
    pub width: f64,
    pub height: f64,
    /// In-grasp misalignment, positive counterclockwise.
    pub grasp_angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub board_surface_z: f64,
    pub hole_center_y: f64,
    pub hole_width: f64,
    pub hole_depth: f64,
    pub friction_coefficient: f64,
    pub peg: PegSpec,
}

impl SceneConfig {
    pub fn clearance(&self) -> f64 {
        self.hole_width - self.peg.width
    }

    pub fn hole_left(&self) -> f64 {
        self.hole_center_y - 0.5 * self.hole_width
    }

    pub fn hole_right(&self) -> f64 {
        self.hole_center_y + 0.5 * self.hole_width
    }

    pub fn hole_bottom(&self) -> f64 {
        self.board_surface_z - self.hole_depth
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let p = &self.peg;
        let finite = [
            self.board_surface_z,
            self.hole_center_y,
            self.hole_width,
            self.hole_depth,
            self.friction_coefficient,
            p.width,
            p.height,
            p.grasp_angle,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(SceneError::Invalid("non-finite value".into()));
        }
        if p.width <= 0.0 || p.height <= 0.0 {
            return Err(SceneError::Invalid("peg dimensions must be positive".into()));
        }
        if p.shape == PegShape::Rectangular && p.height <= p.width {
            return Err(SceneError::Invalid(
                "rectangular peg must be taller than wide".into(),
            ));
        }
        if self.clearance() <= 0.0 {
            return Err(SceneError::Invalid(format!(
                "hole ({}) must be wider than the peg ({})",
                self.hole_width, p.width
            )));
        }
        if self.hole_depth <= 0.0 {
            return Err(SceneError::Invalid("hole depth must be positive".into()));
        }
        if self.friction_coefficient <= 0.0 {
            return Err(SceneError::Invalid("friction coefficient must be positive".into()));
        }
        Ok(())
    }
}

/// Passive soft-wrist springs retained in the plane: vertical compression and roll.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WristParams {
    pub k_z: f64,
    pub k_theta: f64,
    pub compression_limit: f64,
}

/// Solver and motion settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub tol_pen: f64,
    pub tol_f: f64,
    pub max_iters: usize,
    pub step_y: f64,
    pub step_z: f64,
    pub step_theta: f64,
    pub step_budget: usize,
    /// Gap below which a feature pair is reported as a contact.
    pub detection_band: f64,
}

/// Fixed side-view camera, world aligned, orthographic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub width: u32,
    pub height: u32,
    /// Pixels per metre.
    pub scale: f64,
    /// World `y` of the left image border.
    pub origin_y: f64,
    /// World `z` of the top image border.
    pub origin_z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckParams {
    pub pose_threshold: f64,
    pub theta_threshold: f64,
    pub tilt_band_deg: f64,
    pub insertion_depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryLimits {
    pub max_update_y: f64,
    pub max_update_z: f64,
    pub workspace_y_min: f64,
    pub workspace_y_max: f64,
    pub workspace_z_max: f64,
    pub max_consecutive_failures: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalEntry {
    pub cf: ContactFormation,
    pub goal: GoalSpec,
}

/// Values that shaped the default goals; kept in the file for reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalDesign {
    pub approach_offset_y: f64,
    pub approach_height: f64,
    pub preload: f64,
    pub fit_overshoot: f64,
    pub insertion_depth_goal: f64,
}

/// The on-disk scenario: everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub format_version: u32,
    pub note: String,
    pub scene: SceneConfig,
    pub wrist: WristParams,
    pub home: ArmPose,
    pub goals: Vec<GoalEntry>,
    pub goal_design: GoalDesign,
    pub peg_catalog: Vec<PegSpec>,
    pub sim: SimParams,
    pub camera: CameraConfig,
    pub check: CheckParams,
    pub recovery: RecoveryLimits,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.format_version != FORMAT_VERSION {
            return Err(SceneError::FormatVersion {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        self.scene.validate()?;
        let w = &self.wrist;
        if !(w.k_z > 0.0 && w.k_theta > 0.0 && w.compression_limit > 0.0) {
            return Err(SceneError::Invalid("wrist parameters must be positive".into()));
        }
        if w.compression_limit <= self.goal_design.preload {
            return Err(SceneError::Invalid(
                "compression limit must exceed the contact preload".into(),
            ));
        }
        let order: Vec<_> = self.goals.iter().map(|g| g.cf).collect();
        if order != ContactFormation::ALL {
            return Err(SceneError::Invalid(
                "goals must list the five formations in canonical order".into(),
            ));
        }
        if self.goals.iter().any(|g| g.goal.is_empty()) {
            return Err(SceneError::Invalid("every goal needs at least one dimension".into()));
        }
        let first = self.goals[0].goal;
        if first.y.is_none() || first.z.is_none() || first.theta.is_none() {
            return Err(SceneError::Invalid("the approach goal must be a full pose".into()));
        }
        for peg in &self.peg_catalog {
            self.scene.with_peg(*peg).validate()?;
        }
        Ok(())
    }

    pub fn goals_array(&self) -> [GoalSpec; 5] {
        let mut out = [GoalSpec::default(); 5];
        for entry in &self.goals {
            out[entry.cf.index()] = entry.goal;
        }
        out
    }

    pub fn peg(&self, shape: PegShape) -> PegSpec {
        self.peg_catalog
            .iter()
            .copied()
            .find(|p| p.shape == shape)
            .unwrap_or(self.scene.peg)
    }

    /// Nominal scene for `shape`, with the hole resized to keep the clearance.
    pub fn scene_for(&self, shape: PegShape) -> SceneConfig {
        self.scene.with_peg(self.peg(shape))
    }
}

impl SceneConfig {
    /// Swaps the peg and keeps the current clearance.
    pub fn with_peg(&self, peg: PegSpec) -> SceneConfig {
        let clearance = self.clearance();
        SceneConfig {
            peg,
            hole_width: peg.width + clearance,
            ..*self
        }
    }
}

/// The canonical checked-in scenario (`configs/default_scenario.json`).
pub fn default_scenario_file() -> Scenario {
    Scenario::from_json(DEFAULT_SCENARIO_JSON).expect("embedded default scenario is valid")
}

/// Nominal scene, wrist and the five default goals.
pub fn default_scenario() -> (SceneConfig, WristParams, Vec<(ContactFormation, GoalSpec)>) {
    let s = default_scenario_file();
    let goals = s.goals.iter().map(|g| (g.cf, g.goal)).collect();
    (s.scene, s.wrist, goals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_clearance_is_two_millimetres() {
        let (scene, _, _) = default_scenario();
        assert!((scene.clearance() - 0.002).abs() < 1e-12);
        assert!((scene.hole_width - scene.peg.width - 0.002).abs() < 1e-12);
    }

    #[test]
    fn contact_goal_is_z_only() {
        let (_, _, goals) = default_scenario();
        let (cf, goal) = goals[1];
        assert_eq!(cf, ContactFormation::Contact);
        assert!(goal.y.is_none() && goal.theta.is_none());
        assert!(goal.z.is_some());
    }

    #[test]
    fn goal_masks_follow_formations() {
        let (scene, _, goals) = default_scenario();
        let file = default_scenario_file();
        let d = file.goal_design;
        let g: Vec<_> = goals.iter().map(|(_, g)| *g).collect();
        assert!(g[0].y.is_some() && g[0].z.is_some() && g[0].theta.is_some());
        let close = |a: Option<f64>, b: f64| a.is_some_and(|a| (a - b).abs() < 1e-12);
        assert!(g[1].y.is_none() && close(g[1].z, scene.board_surface_z - d.preload));
        assert!(g[2].z.is_none() && close(g[2].y, scene.hole_center_y + d.fit_overshoot));
        assert!(g[3].z.is_none() && close(g[3].y, scene.hole_center_y));
        assert!(g[4].y.is_none());
        assert!(close(g[4].z, scene.board_surface_z - d.insertion_depth_goal - d.preload));
    }

    #[test]
    fn default_scenario_is_pure() {
        assert_eq!(default_scenario(), default_scenario());
    }

    #[test]
    fn sequential_resolution_is_concrete() {
        let file = default_scenario_file();
        let mut pose = file.home;
        for entry in &file.goals {
            pose = entry.goal.resolve(pose);
            assert!(pose.is_finite());
        }
    }

    #[test]
    fn rejects_wrong_format_version() {
        let mut s = default_scenario_file();
        s.format_version = 99;
        let err = Scenario::from_json(&s.to_json_pretty()).unwrap_err();
        assert!(matches!(err, SceneError::FormatVersion { found: 99, .. }));
    }

    #[test]
    fn rejects_peg_wider_than_hole() {
        let (mut scene, _, _) = default_scenario();
        scene.hole_width = scene.peg.width;
        assert!(scene.validate().is_err());
    }

    #[test]
    fn shape_scene_keeps_clearance() {
        let file = default_scenario_file();
        for shape in PegShape::ALL {
            let scene = file.scene_for(shape);
            assert_eq!(scene.peg.shape, shape);
            assert!((scene.clearance() - 0.002).abs() < 1e-12);
        }
    }

    #[test]
    fn merged_overwrites_present_fields_only() {
        let base = GoalSpec::full(ArmPose::new(1.0, 2.0, 0.1));
        let merged = base.merged(&GoalSpec::y_only(5.0));
        assert_eq!(merged, GoalSpec::full(ArmPose::new(5.0, 2.0, 0.1)));
    }
}
