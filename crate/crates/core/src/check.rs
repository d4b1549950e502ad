//! Per-skill success checks and their aggregation into one verdict.

use serde::{Deserialize, Serialize};

use crate::perception::{OnHole, RasterImage, SceneObservation};
use crate::scene::{ArmPose, CheckParams, ContactFormation, GoalSpec};
use crate::sim::{MotionStatus, SimState};

/// The closed vocabulary of result messages.
pub mod messages {
    pub const FIT_SUCCESS: &str = "success";
    pub const FIT_TOO_SMALL: &str = "p_gy was too small.";
    pub const FIT_TOO_BIG: &str = "p_gy was too big.";
    pub const ALIGN_SUCCESS: &str = "Align success";
    pub const TILTED_LEFT: &str = "peg is tilted to the left.";
    pub const TILTED_RIGHT: &str = "peg is tilted to the right.";
    pub const EY_TOO_SMALL: &str = "p_ey was too small.";
    pub const EY_TOO_BIG: &str = "p_ey was too big.";
    pub const LEFT_TILTED_LEFT: &str = "peg is tilted to the left. p_gy was too small.";
    pub const RIGHT_TILTED_LEFT: &str = "p_gy was too big. also tilted to the left.";
    pub const LEFT_TILTED_RIGHT: &str = "p_gy was too small. also tilted to the right.";
    pub const RIGHT_TILTED_RIGHT: &str = "p_gy was too big. also tilted to the right.";
    pub const POSE_OK: &str = "success";
    pub const GOAL_NOT_REACHED: &str = "goal pose not reached";
    pub const COMPRESSION_LIMIT: &str = "compression limit reached";
    pub const INSERTION_SUCCESS: &str = "insertion success";
    pub const INSERTION_INCOMPLETE: &str = "insertion incomplete";
    pub const PERCEPTION_INVALID: &str = "perception invalid";
    pub const COMPRESSION_OK: &str = "compression within limit";

    pub const ALL: [&str; 18] = [
        FIT_SUCCESS,
        FIT_TOO_SMALL,
        FIT_TOO_BIG,
        ALIGN_SUCCESS,
        TILTED_LEFT,
        TILTED_RIGHT,
        EY_TOO_SMALL,
        EY_TOO_BIG,
        LEFT_TILTED_LEFT,
        RIGHT_TILTED_LEFT,
        LEFT_TILTED_RIGHT,
        RIGHT_TILTED_RIGHT,
        GOAL_NOT_REACHED,
        COMPRESSION_LIMIT,
        INSERTION_SUCCESS,
        INSERTION_INCOMPLETE,
        PERCEPTION_INVALID,
        COMPRESSION_OK,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    PoseCheck,
    VisionFit,
    VisionAlign,
    InsertCheck,
    CompressionMonitor,
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurements {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<SceneObservation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insertion_depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub success: bool,
    pub source: VerdictSource,
    pub message: String,
    #[serde(default)]
    pub measurements: Measurements,
}

impl Verdict {
    pub fn new(success: bool, source: VerdictSource, message: &str) -> Self {
        Self {
            success,
            source,
            message: message.to_string(),
            measurements: Measurements::default(),
        }
    }

    fn with_observation(mut self, obs: &SceneObservation) -> Self {
        self.measurements.observation = Some(*obs);
        self
    }
}

/// Position error over the goal's translational dimensions, plus the angle test
/// when the goal carries one.
pub fn check_pose(goal: &GoalSpec, terminal: &ArmPose, params: &CheckParams) -> Verdict {
    let mut sq = 0.0;
    if let Some(y) = goal.y {
        sq += (terminal.y - y).powi(2);
    }
    if let Some(z) = goal.z {
        sq += (terminal.z - z).powi(2);
    }
    let err = sq.sqrt();
    let angle_ok = goal
        .theta
        .is_none_or(|t| (terminal.theta - t).abs() <= params.theta_threshold);
    let ok = err <= params.pose_threshold && angle_ok;
    let mut v = Verdict::new(
        ok,
        VerdictSource::PoseCheck,
        if ok { messages::POSE_OK } else { messages::GOAL_NOT_REACHED },
    );
    v.measurements.pose_error = Some(err);
    v
}

pub fn check_fit(obs: &SceneObservation) -> Verdict {
    if !obs.valid() {
        return Verdict::new(false, VerdictSource::VisionFit, messages::PERCEPTION_INVALID).with_observation(obs);
    }
    let h = obs.hole_center_y;
    let (ok, msg) = if obs.peg_center.0 <= h {
        if obs.peg_bottom_edge_y > h {
            (true, messages::FIT_SUCCESS)
        } else {
            (false, messages::FIT_TOO_SMALL)
        }
    } else {
        (false, messages::FIT_TOO_BIG)
    };
    Verdict::new(ok, VerdictSource::VisionFit, msg).with_observation(obs)
}

/// Tilt classification: `0` within the band (inclusive), `1` left, `-1` right.
fn tilt_class(tilt: f64, band: f64) -> i8 {
    if tilt > band {
        1
    } else if tilt < -band {
        -1
    } else {
        0
    }
}

pub fn check_align(obs: &SceneObservation, params: &CheckParams) -> Verdict {
    use messages::*;
    if !obs.valid() {
        return Verdict::new(false, VerdictSource::VisionAlign, PERCEPTION_INVALID).with_observation(obs);
    }
    let msg = match (obs.peg_on_hole, tilt_class(obs.peg_tilt, params.tilt_band_deg)) {
        (OnHole::On, 0) => ALIGN_SUCCESS,
        (OnHole::On, 1) => TILTED_LEFT,
        (OnHole::On, _) => TILTED_RIGHT,
        (OnHole::Left, 0) => EY_TOO_SMALL,
        (OnHole::Right, 0) => EY_TOO_BIG,
        (OnHole::Left, 1) => LEFT_TILTED_LEFT,
        (OnHole::Right, 1) => RIGHT_TILTED_LEFT,
        (OnHole::Left, _) => LEFT_TILTED_RIGHT,
        (OnHole::Right, _) => RIGHT_TILTED_RIGHT,
    };
    Verdict::new(msg == ALIGN_SUCCESS, VerdictSource::VisionAlign, msg).with_observation(obs)
}

/// Ground truth depth test, with the image agreement against the goal image attached.
pub fn check_insert(state: &SimState, goal_image: &RasterImage, terminal_image: &RasterImage, params: &CheckParams) -> Verdict {
    let depth = state.insertion_depth();
    let ok = depth >= params.insertion_depth;
    let mut v = Verdict::new(
        ok,
        VerdictSource::InsertCheck,
        if ok { messages::INSERTION_SUCCESS } else { messages::INSERTION_INCOMPLETE },
    );
    v.measurements.insertion_depth = Some(depth);
    v.measurements.image_similarity = Some(goal_image.similarity(terminal_image));
    v
}

pub fn check_compression(status: MotionStatus) -> Verdict {
    match status {
        MotionStatus::Reached => Verdict::new(true, VerdictSource::CompressionMonitor, messages::COMPRESSION_OK),
        MotionStatus::CompressionLimit => {
            Verdict::new(false, VerdictSource::CompressionMonitor, messages::COMPRESSION_LIMIT)
        }
        MotionStatus::StepBudget => Verdict::new(false, VerdictSource::CompressionMonitor, messages::GOAL_NOT_REACHED),
    }
}

/// The check that decides each formation when nothing dominates it.
pub fn primary_source(cf: ContactFormation) -> VerdictSource {
    match cf {
        ContactFormation::Approach | ContactFormation::Contact => VerdictSource::PoseCheck,
        ContactFormation::Fit => VerdictSource::VisionFit,
        ContactFormation::Align => VerdictSource::VisionAlign,
        ContactFormation::Insert => VerdictSource::InsertCheck,
    }
}

/// Joins the messages of several failed checks.
pub const MESSAGE_SEPARATOR: &str = "; ";

/// Splits an aggregated message back into its canonical parts.
pub fn message_parts(message: &str) -> impl Iterator<Item = &str> {
    message.split(MESSAGE_SEPARATOR).filter(|m| !m.is_empty())
}

/// Compression failures dominate; otherwise the formation's own check decides (the
/// vision or depth check over the pose check). Failure messages are concatenated.
pub fn aggregate(cf: ContactFormation, verdicts: &[Verdict]) -> Verdict {
    let compression_failed = verdicts
        .iter()
        .any(|v| v.source == VerdictSource::CompressionMonitor && !v.success);
    let primary = primary_source(cf);
    let has_primary = verdicts.iter().any(|v| v.source == primary);
    let success = !compression_failed
        && verdicts
            .iter()
            .filter(|v| if has_primary { v.source == primary } else { true })
            .all(|v| v.success);
    let message = if success {
        verdicts
            .iter()
            .find(|v| v.source == primary)
            .or(verdicts.first())
            .map_or(String::new(), |v| v.message.clone())
    } else {
        // Compression messages lead, then the deciding check, then the rest.
        let mut failed: Vec<&Verdict> = verdicts.iter().filter(|v| !v.success).collect();
        failed.sort_by_key(|v| match v.source {
            VerdictSource::CompressionMonitor => 0,
            s if s == primary => 1,
            _ => 2,
        });
        let mut parts: Vec<&str> = Vec::new();
        for v in failed {
            if !parts.contains(&v.message.as_str()) {
                parts.push(&v.message);
            }
        }
        parts.join(MESSAGE_SEPARATOR)
    };
    let mut measurements = Measurements::default();
    for v in verdicts {
        let m = &v.measurements;
        measurements.observation = measurements.observation.or(m.observation);
        measurements.insertion_depth = measurements.insertion_depth.or(m.insertion_depth);
        measurements.image_similarity = measurements.image_similarity.or(m.image_similarity);
        measurements.pose_error = measurements.pose_error.or(m.pose_error);
    }
    Verdict {
        success,
        source: if compression_failed { VerdictSource::CompressionMonitor } else { primary },
        message,
        measurements,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::default_scenario_file;

    fn params() -> CheckParams {
        default_scenario_file().check
    }

    #[test]
    fn pose_masking_ignores_theta() {
        let v = check_pose(&GoalSpec::y_only(0.01), &ArmPose::new(0.01, 5.0, 1.0), &params());
        assert!(v.success);
    }

    #[test]
    fn pose_threshold_edges() {
        let g = GoalSpec::z_only(0.0);
        assert!(check_pose(&g, &ArmPose::new(0.0, 0.0009, 0.0), &params()).success);
        assert!(!check_pose(&g, &ArmPose::new(0.0, 0.0011, 0.0), &params()).success);
    }

    #[test]
    fn theta_goal_uses_angle_threshold() {
        let g = GoalSpec::full(ArmPose::new(0.0, 0.0, 0.0));
        assert!(check_pose(&g, &ArmPose::new(0.0, 0.0, 0.009), &params()).success);
        assert!(!check_pose(&g, &ArmPose::new(0.0, 0.0, 0.011), &params()).success);
    }

    #[test]
    fn compression_status_mapping() {
        assert!(check_compression(MotionStatus::Reached).success);
        let v = check_compression(MotionStatus::CompressionLimit);
        assert!(!v.success && v.message == messages::COMPRESSION_LIMIT);
        let v = check_compression(MotionStatus::StepBudget);
        assert!(!v.success && v.message == messages::GOAL_NOT_REACHED);
    }

    #[test]
    fn vision_dominates_pose() {
        let pose = Verdict::new(true, VerdictSource::PoseCheck, messages::POSE_OK);
        let fit = Verdict::new(false, VerdictSource::VisionFit, messages::FIT_TOO_SMALL);
        let agg = aggregate(ContactFormation::Fit, &[pose.clone(), fit]);
        assert!(!agg.success);
        assert_eq!(agg.message, messages::FIT_TOO_SMALL);
        let bad_pose = Verdict::new(false, VerdictSource::PoseCheck, messages::GOAL_NOT_REACHED);
        let good_fit = Verdict::new(true, VerdictSource::VisionFit, messages::FIT_SUCCESS);
        assert!(aggregate(ContactFormation::Fit, &[bad_pose, good_fit]).success);
    }

    #[test]
    fn compression_dominates_vision() {
        let comp = check_compression(MotionStatus::CompressionLimit);
        let align = Verdict::new(true, VerdictSource::VisionAlign, messages::ALIGN_SUCCESS);
        let agg = aggregate(ContactFormation::Align, &[comp, align]);
        assert!(!agg.success);
        assert_eq!(agg.message, messages::COMPRESSION_LIMIT);
        assert_eq!(agg.source, VerdictSource::CompressionMonitor);
    }

    #[test]
    fn failure_messages_are_concatenated() {
        let vs = [
            Verdict::new(false, VerdictSource::PoseCheck, messages::GOAL_NOT_REACHED),
            check_compression(MotionStatus::CompressionLimit),
            Verdict::new(false, VerdictSource::VisionFit, messages::FIT_TOO_SMALL),
        ];
        let agg = aggregate(ContactFormation::Fit, &vs);
        let parts: Vec<&str> = message_parts(&agg.message).collect();
        assert_eq!(parts, [messages::COMPRESSION_LIMIT, messages::FIT_TOO_SMALL, messages::GOAL_NOT_REACHED]);
    }

    #[test]
    fn all_success_aggregates_to_success() {
        let vs = [
            Verdict::new(true, VerdictSource::PoseCheck, messages::POSE_OK),
            check_compression(MotionStatus::Reached),
        ];
        let agg = aggregate(ContactFormation::Contact, &vs);
        assert!(agg.success);
        assert_eq!(agg.source, VerdictSource::PoseCheck);
    }
}
