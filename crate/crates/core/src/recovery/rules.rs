//! Deterministic rule backend keyed on the canonical check messages.

use super::{FailureAnalysis, PlanStep, RecoveryBackend, RecoveryEnv, RecoveryPlan, RecoveryResponse};
use crate::check::{message_parts, messages};
use crate::executor::{SkillResult, TaskContext};
use crate::perception::{px_to_m, OnHole, RasterImage};
use crate::scene::{ContactFormation, GoalSpec};

/// Smallest lateral correction worth commanding, metres.
const MIN_SHIFT: f64 = 0.002;
/// Smallest correction when re-aligning after repeated insertion failures.
const MIN_INSERT_SHIFT: f64 = 0.001;
/// Lateral nudge for a peg that sits over the hole but leans.
const TILT_SHIFT: f64 = 0.002;
/// Lift applied after the compression monitor trips.
const LIFT: f64 = 0.002;
/// Clearance kept above the lowest commandable z.
const Z_MARGIN: f64 = 1e-4;
/// Consecutive insertion failures before the backend re-aligns instead of retrying.
const INSERT_RETRIES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Diagnosis {
    Compression,
    Retry,
    FitShort { gap: f64 },
    FitLong { gap: f64 },
    AlignTilt { tilt: f64 },
    AlignOffset { offset: f64 },
    AlignOffsetTilt { offset: f64, tilt: f64 },
    InsertRetry,
    InsertRealign { offset: f64 },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBackend;

fn capped(v: f64, min: f64, cap: f64) -> f64 {
    v.signum() * v.abs().max(min).min(cap)
}

fn diagnose(ctx: &TaskContext, failed: &SkillResult, env: &RecoveryEnv) -> Diagnosis {
    let msgs: Vec<&str> = message_parts(&failed.verdict.message).collect();
    let has = |m: &str| msgs.contains(&m);
    let obs = &failed.observation;
    let m = |px: f64| px_to_m(&env.camera, px);
    match failed.cf {
        ContactFormation::Insert => {
            if ctx.consecutive_failures(ContactFormation::Insert) >= INSERT_RETRIES && obs.valid() {
                Diagnosis::InsertRealign {
                    offset: m(obs.hole_center_y - obs.peg_bottom_center_y),
                }
            } else {
                Diagnosis::InsertRetry
            }
        }
        _ if has(messages::COMPRESSION_LIMIT) => Diagnosis::Compression,
        _ if has(messages::PERCEPTION_INVALID) => Diagnosis::Retry,
        ContactFormation::Fit if has(messages::FIT_TOO_SMALL) => Diagnosis::FitShort {
            gap: m(obs.hole_center_y - obs.peg_bottom_edge_y).abs(),
        },
        ContactFormation::Fit if has(messages::FIT_TOO_BIG) => Diagnosis::FitLong {
            gap: m(obs.peg_center.0 - obs.hole_center_y).abs(),
        },
        ContactFormation::Align if obs.valid() && msgs.iter().any(|s| s.contains("tilt") || s.contains("p_")) => {
            let offset = m(obs.hole_center_y - obs.peg_bottom_center_y);
            let tilted = !has(messages::EY_TOO_SMALL) && !has(messages::EY_TOO_BIG);
            match (obs.peg_on_hole, tilted) {
                (OnHole::On, _) => Diagnosis::AlignTilt { tilt: obs.peg_tilt },
                (_, false) => Diagnosis::AlignOffset { offset },
                (_, true) => Diagnosis::AlignOffsetTilt {
                    offset,
                    tilt: obs.peg_tilt,
                },
            }
        }
        _ => Diagnosis::Retry,
    }
}

fn side(v: f64) -> &'static str {
    if v >= 0.0 {
        "right"
    } else {
        "left"
    }
}

impl RuleBackend {
    pub fn analyze(&self, ctx: &TaskContext, failed: &SkillResult, env: &RecoveryEnv) -> FailureAnalysis {
        let lim = &env.limits;
        let cf = failed.cf;
        let what = format!("{} failed: {}", cf, failed.verdict.message);
        let (why, how, dy, dz) = match diagnose(ctx, failed, env) {
            Diagnosis::Compression => (
                "the wrist hit its compression limit before the goal was reached".to_string(),
                format!("raise z by {LIFT} m and repeat {cf}"),
                0.0,
                LIFT,
            ),
            Diagnosis::Retry => (
                format!("the check reported '{}' without a usable measurement", failed.verdict.message),
                format!("repeat {cf} at the same goal"),
                0.0,
                0.0,
            ),
            Diagnosis::FitShort { gap } => {
                let dy = capped(gap, MIN_SHIFT, lim.max_update_y);
                (
                    format!("the peg's bottom-right corner stopped {gap:.4} m short of the hole centre"),
                    format!("increase y by {dy:.4} m and repeat Fit"),
                    dy,
                    0.0,
                )
            }
            Diagnosis::FitLong { gap } => {
                let dy = -capped(gap, MIN_SHIFT, lim.max_update_y);
                (
                    format!("the peg centre passed the hole centre by {gap:.4} m"),
                    format!("decrease y by {:.4} m and repeat Fit", -dy),
                    dy,
                    0.0,
                )
            }
            Diagnosis::AlignTilt { tilt } => {
                let dy = TILT_SHIFT * tilt.signum();
                (
                    format!("the peg is over the hole but leans {tilt:.1} degrees"),
                    format!("move y {} by {TILT_SHIFT} m and repeat Align", side(dy)),
                    dy,
                    0.0,
                )
            }
            Diagnosis::AlignOffset { offset } => {
                let dy = capped(offset, MIN_SHIFT, lim.max_update_y);
                (
                    format!("the peg bottom is {:.4} m off the hole centre", offset.abs()),
                    format!("move y {} by {:.4} m and repeat Align", side(dy), dy.abs()),
                    dy,
                    0.0,
                )
            }
            Diagnosis::AlignOffsetTilt { offset, tilt } => {
                let dy = capped(offset, MIN_SHIFT, lim.max_update_y);
                (
                    format!(
                        "the peg bottom is {:.4} m off the hole centre and leans {tilt:.1} degrees",
                        offset.abs()
                    ),
                    format!("shift the Fit and Align goals {} by {:.4} m and redo both", side(dy), dy.abs()),
                    dy,
                    0.0,
                )
            }
            Diagnosis::InsertRetry => (
                "the peg did not reach the insertion depth".to_string(),
                "retry the insertion at the same goal".to_string(),
                0.0,
                0.0,
            ),
            Diagnosis::InsertRealign { offset } => {
                let dy = capped(offset, MIN_INSERT_SHIFT, lim.max_update_y);
                let lift_to = env.surface_z - env.preload;
                let dz = (lift_to - failed.goal.z.unwrap_or(lift_to)).clamp(0.0, lim.max_update_z);
                (
                    format!(
                        "insertion failed {INSERT_RETRIES} times in a row with the peg bottom {:.4} m off the hole centre",
                        offset.abs()
                    ),
                    format!("lift by {dz:.4} m, move y {} by {:.4} m, re-align and insert", side(dy), dy.abs()),
                    dy,
                    dz,
                )
            }
        };
        FailureAnalysis { what, why, how, dy, dz }
    }

    pub fn plan(&self, analysis: &FailureAnalysis, ctx: &TaskContext, failed: &SkillResult, env: &RecoveryEnv) -> RecoveryPlan {
        use ContactFormation::*;
        let cf = failed.cf;
        let executed = failed.goal.resolve(ctx.last_goal);
        let goal_y = |c: ContactFormation| ctx.goal(c).y.unwrap_or(executed.y);
        let shift = |c: ContactFormation| GoalSpec::y_only(goal_y(c) + analysis.dy);
        let (steps, rationale) = match diagnose(ctx, failed, env) {
            Diagnosis::Compression => (
                vec![(cf, GoalSpec::z_only(executed.z + analysis.dz))],
                "back off the compression and repeat",
            ),
            Diagnosis::Retry | Diagnosis::InsertRetry => (vec![(cf, GoalSpec::default())], "repeat the skill"),
            Diagnosis::FitShort { .. } | Diagnosis::FitLong { .. } => (vec![(Fit, shift(Fit))], "correct the fit goal"),
            Diagnosis::AlignTilt { .. } | Diagnosis::AlignOffset { .. } => {
                (vec![(Align, shift(Align))], "correct the align goal")
            }
            Diagnosis::AlignOffsetTilt { .. } => (
                vec![(Fit, shift(Fit)), (Align, shift(Align))],
                "catch the hole edge again, then align",
            ),
            Diagnosis::InsertRealign { .. } => {
                let align = GoalSpec {
                    y: Some(executed.y + analysis.dy),
                    z: Some(executed.z + analysis.dz),
                    theta: None,
                };
                (vec![(Align, align), (Insert, GoalSpec::default())], "re-align, then insert")
            }
        };
        // Clamp each update against the goal the step would otherwise run, in sequence,
        // the same way the validator measures it, then into the workspace.
        let lim = &env.limits;
        let mut goals = ctx.goals;
        let mut prev = ctx.last_goal;
        let mut bounded = Vec::with_capacity(steps.len());
        for (cf, goal) in steps {
            let reference = goals[cf.index()].resolve(prev);
            let goal = GoalSpec {
                y: goal.y.map(|y| {
                    y.clamp(reference.y - lim.max_update_y, reference.y + lim.max_update_y)
                        .clamp(lim.workspace_y_min, lim.workspace_y_max)
                }),
                z: goal.z.map(|z| {
                    z.clamp(reference.z - lim.max_update_z, reference.z + lim.max_update_z)
                        .clamp(env.z_floor() + Z_MARGIN, lim.workspace_z_max)
                }),
                theta: goal.theta,
            };
            goals[cf.index()] = goals[cf.index()].merged(&goal);
            prev = goals[cf.index()].resolve(prev);
            bounded.push(PlanStep { cf, goal });
        }
        RecoveryPlan {
            steps: bounded,
            rationale: rationale.to_string(),
        }
    }
}

impl RecoveryBackend for RuleBackend {
    fn name(&self) -> &str {
        "rule"
    }

    fn recover(&self, ctx: &TaskContext, failed: &SkillResult, _goal_image: &RasterImage, env: &RecoveryEnv) -> RecoveryResponse {
        let analysis = self.analyze(ctx, failed, env);
        let plan = self.plan(&analysis, ctx, failed, env);
        debug_assert_eq!(super::validate_plan(&plan, failed.cf, ctx, env), Ok(()));
        RecoveryResponse {
            analysis,
            plan,
            backend: self.name().to_string(),
            fallback: None,
        }
    }
}
