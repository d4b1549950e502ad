//! Two-stage failure recovery: analyse what went wrong, then emit a short plan of
//! skills with bounded goal updates. Rule and remote backends share one validator.

mod remote;
mod rules;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{SkillResult, TaskContext};
use crate::perception::RasterImage;
use crate::scene::{ArmPose, CameraConfig, ContactFormation, GoalSpec, RecoveryLimits, Scenario, SceneConfig};

pub use remote::{RemoteBackend, RemoteConfig, RemoteProtocolError, RemoteRequest, RemoteResponse, TOKEN_ENV, URL_ENV};
pub use rules::RuleBackend;

/// Slack on the update caps so a move of exactly the cap survives rounding.
const CAP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureAnalysis {
    pub what: String,
    pub why: String,
    pub how: String,
    /// Suggested relative motion, metres.
    #[serde(default)]
    pub dy: f64,
    #[serde(default)]
    pub dz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub cf: ContactFormation,
    /// Absolute values for the dimensions to change; absent ones keep the current goal.
    #[serde(default)]
    pub goal: GoalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPlan {
    pub steps: Vec<PlanStep>,
    pub rationale: String,
}

/// What a backend hands back to the executor.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResponse {
    pub analysis: FailureAnalysis,
    pub plan: RecoveryPlan,
    pub backend: String,
    /// Why the primary backend was bypassed, when it was.
    pub fallback: Option<String>,
}

/// Fixed facts about the task that backends and the validator rely on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryEnv {
    pub limits: RecoveryLimits,
    pub camera: CameraConfig,
    pub surface_z: f64,
    pub hole_depth: f64,
    pub preload: f64,
    /// The trial scene, used only to re-render terminal images on demand.
    pub scene: SceneConfig,
}

impl RecoveryEnv {
    pub fn new(s: &Scenario, scene: SceneConfig) -> Self {
        Self {
            limits: s.recovery,
            camera: s.camera,
            surface_z: scene.board_surface_z,
            hole_depth: scene.hole_depth,
            preload: s.goal_design.preload,
            scene,
        }
    }

    pub fn from_scenario(s: &Scenario) -> Self {
        Self::new(s, s.scene)
    }

    /// Lowest commandable z: anything at or below the hole bottom is refused.
    pub fn z_floor(&self) -> f64 {
        self.surface_z - self.hole_depth
    }
}

pub trait RecoveryBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Never fails: backends that can fail fall back to something that cannot.
    fn recover(
        &self,
        ctx: &TaskContext,
        failed: &SkillResult,
        goal_image: &RasterImage,
        env: &RecoveryEnv,
    ) -> RecoveryResponse;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("plan has no steps")]
    Empty,
    #[error("{0} cannot be part of a recovery plan")]
    NotRecoverable(ContactFormation),
    #[error("steps out of canonical order: {before} before {after}")]
    Order {
        before: ContactFormation,
        after: ContactFormation,
    },
    #[error("{0} step updates theta, only y and z may change")]
    ThetaUpdate(ContactFormation),
    #[error("{cf} step has a non-finite goal")]
    NonFinite { cf: ContactFormation },
    #[error("{cf} step moves {dim} by {delta:.4} m, cap is {cap:.4} m")]
    CapExceeded {
        cf: ContactFormation,
        dim: char,
        delta: f64,
        cap: f64,
    },
    #[error("{cf} step commands {dim} = {value:.4} m outside [{min:.4}, {max:.4}]")]
    Workspace {
        cf: ContactFormation,
        dim: char,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("recovery from {from} cannot {what} {to}")]
    Transition {
        from: ContactFormation,
        what: &'static str,
        to: ContactFormation,
    },
    #[error("suggested {dim} move of {delta:.4} m exceeds the {cap:.4} m cap")]
    Suggestion { dim: char, delta: f64, cap: f64 },
}

/// Checks a plan against the goals it would modify. Each step's update is measured
/// against the goal that step would otherwise have executed, in sequence.
///
/// `from` is the formation that failed: a Fit failure has to be retried from Fit, and
/// an Insert failure never goes back as far as Fit.
pub fn validate_plan(
    plan: &RecoveryPlan,
    from: ContactFormation,
    ctx: &TaskContext,
    env: &RecoveryEnv,
) -> Result<(), ValidationError> {
    let first = plan.steps.first().ok_or(ValidationError::Empty)?;
    let lim = &env.limits;
    let mut goals = ctx.goals;
    let mut prev: ArmPose = ctx.last_goal;
    let mut last_cf = first.cf;
    for step in &plan.steps {
        let cf = step.cf;
        if !cf.is_recoverable() {
            return Err(ValidationError::NotRecoverable(cf));
        }
        if cf < last_cf {
            return Err(ValidationError::Order { before: last_cf, after: cf });
        }
        last_cf = cf;
        if step.goal.theta.is_some() {
            return Err(ValidationError::ThetaUpdate(cf));
        }
        if step.goal.y.is_some_and(|v| !v.is_finite()) || step.goal.z.is_some_and(|v| !v.is_finite()) {
            return Err(ValidationError::NonFinite { cf });
        }
        let reference = goals[cf.index()].resolve(prev);
        goals[cf.index()] = goals[cf.index()].merged(&step.goal);
        let target = goals[cf.index()].resolve(prev);
        for (dim, delta, cap) in [
            ('y', target.y - reference.y, lim.max_update_y),
            ('z', target.z - reference.z, lim.max_update_z),
        ] {
            if delta.abs() > cap + CAP_SLACK {
                return Err(ValidationError::CapExceeded { cf, dim, delta, cap });
            }
        }
        if target.y < lim.workspace_y_min || target.y > lim.workspace_y_max {
            return Err(ValidationError::Workspace {
                cf,
                dim: 'y',
                value: target.y,
                min: lim.workspace_y_min,
                max: lim.workspace_y_max,
            });
        }
        if target.z <= env.z_floor() || target.z > lim.workspace_z_max {
            return Err(ValidationError::Workspace {
                cf,
                dim: 'z',
                value: target.z,
                min: env.z_floor(),
                max: lim.workspace_z_max,
            });
        }
        prev = target;
    }
    if from == ContactFormation::Fit && first.cf != ContactFormation::Fit {
        return Err(ValidationError::Transition {
            from,
            what: "start with",
            to: first.cf,
        });
    }
    if from == ContactFormation::Insert && plan.steps.iter().any(|s| s.cf == ContactFormation::Fit) {
        return Err(ValidationError::Transition {
            from,
            what: "include",
            to: ContactFormation::Fit,
        });
    }
    Ok(())
}

pub fn validate_analysis(analysis: &FailureAnalysis, env: &RecoveryEnv) -> Result<(), ValidationError> {
    for (dim, delta, cap) in [
        ('y', analysis.dy, env.limits.max_update_y),
        ('z', analysis.dz, env.limits.max_update_z),
    ] {
        if !delta.is_finite() || delta.abs() > cap + CAP_SLACK {
            return Err(ValidationError::Suggestion { dim, delta, cap });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ContactFormation::{Align, Contact, Fit, Insert};
    use crate::scene::default_scenario_file;

    fn setup() -> (TaskContext, RecoveryEnv) {
        let s = default_scenario_file();
        let mut ctx = TaskContext::new("t", 0, &s);
        ctx.last_goal = ArmPose::new(-0.0035, -0.003, 0.0);
        (ctx, RecoveryEnv::from_scenario(&s))
    }

    fn plan(steps: &[(ContactFormation, GoalSpec)]) -> RecoveryPlan {
        RecoveryPlan {
            steps: steps.iter().map(|&(cf, goal)| PlanStep { cf, goal }).collect(),
            rationale: String::new(),
        }
    }

    #[test]
    fn accepts_small_fit_update() {
        let (ctx, env) = setup();
        let p = plan(&[(Fit, GoalSpec::y_only(0.0))]);
        assert_eq!(validate_plan(&p, Fit, &ctx, &env), Ok(()));
    }

    #[test]
    fn rejects_update_over_cap() {
        let (ctx, env) = setup();
        let p = plan(&[(Fit, GoalSpec::y_only(-0.0035 + 0.05))]);
        assert!(matches!(validate_plan(&p, Fit, &ctx, &env), Err(ValidationError::CapExceeded { dim: 'y', .. })));
    }

    #[test]
    fn rejects_backward_order() {
        let (ctx, env) = setup();
        let p = plan(&[
            (Insert, GoalSpec::default()),
            (Fit, GoalSpec::default()),
        ]);
        assert!(matches!(validate_plan(&p, Align, &ctx, &env), Err(ValidationError::Order { .. })));
    }

    #[test]
    fn rejects_theta_and_contact_steps() {
        let (ctx, env) = setup();
        let p = plan(&[(Align, GoalSpec { theta: Some(0.0), ..GoalSpec::default() })]);
        assert_eq!(validate_plan(&p, Align, &ctx, &env), Err(ValidationError::ThetaUpdate(ContactFormation::Align)));
        let p = plan(&[(Contact, GoalSpec::default())]);
        assert_eq!(
            validate_plan(&p, Align, &ctx, &env),
            Err(ValidationError::NotRecoverable(ContactFormation::Contact))
        );
        assert_eq!(validate_plan(&plan(&[]), Align, &ctx, &env), Err(ValidationError::Empty));
    }

    #[test]
    fn rejects_commands_below_hole_bottom() {
        let (mut ctx, env) = setup();
        ctx.goals[ContactFormation::Insert.index()] = GoalSpec::z_only(-0.025);
        ctx.last_goal.z = -0.025;
        let p = plan(&[(Insert, GoalSpec::z_only(-0.031))]);
        assert!(matches!(validate_plan(&p, Insert, &ctx, &env), Err(ValidationError::Workspace { dim: 'z', .. })));
    }

    #[test]
    fn repeated_formation_is_measured_step_by_step() {
        let (mut ctx, env) = setup();
        ctx.last_goal = ArmPose::new(0.0, -0.013, 0.0);
        // Lift by the full cap, then push back down by the full cap.
        let p = plan(&[
            (Insert, GoalSpec::z_only(-0.003)),
            (Insert, GoalSpec::z_only(-0.013)),
        ]);
        assert_eq!(validate_plan(&p, Insert, &ctx, &env), Ok(()));
    }

    #[test]
    fn enforces_transition_zeros() {
        let (ctx, env) = setup();
        let p = plan(&[(Align, GoalSpec::default()), (Insert, GoalSpec::default())]);
        assert!(matches!(
            validate_plan(&p, Fit, &ctx, &env),
            Err(ValidationError::Transition { from: Fit, to: Align, .. })
        ));
        assert_eq!(validate_plan(&p, Insert, &ctx, &env), Ok(()));
        let p = plan(&[(Fit, GoalSpec::default()), (Align, GoalSpec::default())]);
        assert_eq!(validate_plan(&p, Align, &ctx, &env), Ok(()));
        assert!(matches!(
            validate_plan(&p, Insert, &ctx, &env),
            Err(ValidationError::Transition { from: Insert, to: Fit, .. })
        ));
    }
}
