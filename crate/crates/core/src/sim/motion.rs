//! Position-controlled arm motion in small steps, with the compression monitor.

use serde::{Deserialize, Serialize};

use super::{SimError, SimState, Simulator};
use crate::scene::{ArmPose, GoalSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionStatus {
    Reached,
    CompressionLimit,
    StepBudget,
}

/// Arm tolerance for declaring a commanded pose reached.
const REACH_EPS: f64 = 1e-12;
const LIMIT_BISECTIONS: usize = 40;

fn clamp_step(from: f64, to: f64, max: f64) -> f64 {
    if (to - from).abs() <= max {
        to
    } else {
        from + max.copysign(to - from)
    }
}

impl Simulator {
    /// Moves the arm one bounded step toward `target` and re-settles the wrist.
    pub fn step_arm(&self, state: &SimState, target: ArmPose) -> Result<SimState, SimError> {
        let p = &self.params;
        let arm = ArmPose {
            y: clamp_step(state.arm.y, target.y, p.step_y),
            z: clamp_step(state.arm.z, target.z, p.step_z),
            theta: clamp_step(state.arm.theta, target.theta, p.step_theta),
        };
        if arm == state.arm {
            return Ok(state.clone());
        }
        self.settle_from(state, arm)
    }

    fn settle_from(&self, state: &SimState, arm: ArmPose) -> Result<SimState, SimError> {
        let (deflection, contacts) = self.resolve_equilibrium(arm, state)?;
        Ok(SimState {
            arm,
            deflection,
            contacts,
            scene: state.scene,
        })
    }

    pub fn execute_motion(
        &self,
        state: &SimState,
        goal: &GoalSpec,
    ) -> Result<(SimState, MotionStatus), SimError> {
        self.execute_motion_observed(state, goal, &mut |_| {})
    }

    /// Like [`Simulator::execute_motion`], calling `observer` after every arm step.
    pub fn execute_motion_observed(
        &self,
        state: &SimState,
        goal: &GoalSpec,
        observer: &mut dyn FnMut(&SimState),
    ) -> Result<(SimState, MotionStatus), SimError> {
        let target = goal.resolve(state.arm);
        let limit = self.wrist.compression_limit;
        let mut cur = state.clone();
        for _ in 0..self.params.step_budget {
            if reached(&cur.arm, &target) {
                return Ok((cur, MotionStatus::Reached));
            }
            let next = self.step_arm(&cur, target)?;
            if next.deflection.dz.abs() >= limit {
                let halted = self.land_on_limit(&cur, &next)?;
                observer(&halted);
                return Ok((halted, MotionStatus::CompressionLimit));
            }
            observer(&next);
            cur = next;
        }
        let status = if reached(&cur.arm, &target) {
            MotionStatus::Reached
        } else {
            MotionStatus::StepBudget
        };
        Ok((cur, status))
    }

    /// Bisects the last step so the halt happens where the compression meets the limit.
    fn land_on_limit(&self, before: &SimState, after: &SimState) -> Result<SimState, SimError> {
        let limit = self.wrist.compression_limit;
        let lerp = |t: f64| ArmPose {
            y: before.arm.y + (after.arm.y - before.arm.y) * t,
            z: before.arm.z + (after.arm.z - before.arm.z) * t,
            theta: before.arm.theta + (after.arm.theta - before.arm.theta) * t,
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut best = after.clone();
        for _ in 0..LIMIT_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let s = self.settle_from(before, lerp(mid))?;
            if s.deflection.dz.abs() >= limit {
                hi = mid;
                best = s;
            } else {
                lo = mid;
            }
        }
        Ok(best)
    }
}

fn reached(arm: &ArmPose, target: &ArmPose) -> bool {
    (arm.y - target.y).abs() <= REACH_EPS
        && (arm.z - target.z).abs() <= REACH_EPS
        && (arm.theta - target.theta).abs() <= REACH_EPS
}
