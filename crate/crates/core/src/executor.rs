//! Sequential skill execution with per-skill checks and hand-off to recovery.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::check::{
    aggregate, check_align, check_compression, check_fit, check_insert, check_pose, Verdict,
};
use crate::perception::{observe, render, render_scene, RasterImage, SceneObservation};
use crate::recovery::{FailureAnalysis, RecoveryBackend, RecoveryEnv, RecoveryPlan};
use crate::scene::{ArmPose, ContactFormation, GoalSpec, PegSpec, Scenario, SceneConfig};
use crate::sim::{peg_polygon, MotionStatus, SimError, SimState, Simulator, WristDeflection};

/// Hard stop on executions per trial, in case successes keep resetting the retry
/// counter while the task makes no progress.
pub const MAX_EXECUTIONS: u32 = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkillResult {
    pub cf: ContactFormation,
    /// Fully resolved goal as commanded.
    pub goal: GoalSpec,
    pub terminal_pose: ArmPose,
    pub deflection: WristDeflection,
    #[serde(skip)]
    pub terminal_image: Option<RasterImage>,
    pub observation: SceneObservation,
    pub status: MotionStatus,
    pub verdict: Verdict,
    pub insertion_depth: f64,
    /// True when this execution came from a recovery plan.
    pub recovery: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectory: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub arm: ArmPose,
    pub deflection: WristDeflection,
    pub contacts: usize,
    pub normal_force: f64,
}

#[derive(Debug, Clone)]
pub struct TaskContext {
    pub trial_id: String,
    pub rng_seed: u64,
    pub goals: [GoalSpec; 5],
    pub history: Vec<SkillResult>,
    /// Consecutive failed executions since recovery first kicked in.
    pub retry_count: u32,
    /// Resolved goal of the most recent execution; masked dimensions inherit from it.
    pub last_goal: ArmPose,
}

impl TaskContext {
    pub fn new(trial_id: impl Into<String>, rng_seed: u64, scenario: &Scenario) -> Self {
        Self {
            trial_id: trial_id.into(),
            rng_seed,
            goals: scenario.goals_array(),
            history: Vec::new(),
            retry_count: 0,
            last_goal: scenario.home,
        }
    }

    pub fn goal(&self, cf: ContactFormation) -> GoalSpec {
        self.goals[cf.index()]
    }

    /// Number of trailing history entries that are failed executions of `cf`.
    pub fn consecutive_failures(&self, cf: ContactFormation) -> usize {
        self.history
            .iter()
            .rev()
            .take_while(|r| r.cf == cf && !r.verdict.success)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: ContactFormation,
    pub to: ContactFormation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub framework_success: bool,
    pub ground_truth_success: bool,
    pub timed_out: bool,
    pub executions: [u32; 5],
    pub extra_executions: [u32; 5],
    pub transitions: Vec<Transition>,
    pub recovery_invocations: u32,
    pub fallbacks: u32,
    pub final_depth: f64,
    pub final_pose: ArmPose,
}

impl TaskOutcome {
    pub fn total_executions(&self) -> u32 {
        self.executions.iter().sum()
    }
}

/// One line of a trial log.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrialEvent {
    Skill(Box<SkillResult>),
    Recovery {
        from: ContactFormation,
        backend: String,
        analysis: FailureAnalysis,
        plan: RecoveryPlan,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fallback: Option<String>,
    },
    Outcome(TaskOutcome),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("trial aborted during {cf} (execution {execution}): {source}")]
pub struct TrialAbort {
    pub cf: ContactFormation,
    pub execution: u32,
    pub source: SimError,
}

#[derive(Debug, Clone)]
pub struct TaskRecord {
    pub outcome: TaskOutcome,
    pub events: Vec<TrialEvent>,
    pub final_state: SimState,
}

/// Replaces the verdict of an execution, for fault injection in tests and tooling.
pub type VerdictHook<'h> = dyn Fn(ContactFormation, &Verdict) -> Option<Verdict> + Send + Sync + 'h;

pub struct Executor<'a> {
    pub scenario: &'a Scenario,
    pub sim: Simulator,
    pub env: RecoveryEnv,
    pub goal_image: RasterImage,
    recovery: Option<&'a dyn RecoveryBackend>,
    verdict_hook: Option<&'a VerdictHook<'a>>,
    record_trajectory: bool,
    keep_images: bool,
}

/// Image of the task done right: an upright peg centred in the hole at the insertion
/// goal depth.
pub fn goal_image(scenario: &Scenario, scene: &SceneConfig) -> RasterImage {
    let upright = PegSpec {
        grasp_angle: 0.0,
        ..scene.peg
    };
    let depth = scenario.goal_design.insertion_depth_goal;
    let arm = ArmPose::new(scene.hole_center_y, scene.board_surface_z - depth, 0.0);
    let poly = peg_polygon(arm, WristDeflection::ZERO, &upright);
    render_scene(scene, Some(&poly), &scenario.camera)
}

impl<'a> Executor<'a> {
    /// Executor for one trial scene (possibly randomized away from `scenario.scene`).
    pub fn new(scenario: &'a Scenario, scene: SceneConfig) -> Self {
        Self {
            scenario,
            sim: Simulator::new(scene, scenario.wrist, scenario.sim),
            env: RecoveryEnv::new(scenario, scene),
            goal_image: goal_image(scenario, &scene),
            recovery: None,
            verdict_hook: None,
            record_trajectory: false,
            keep_images: false,
        }
    }

    pub fn with_recovery(mut self, backend: &'a dyn RecoveryBackend) -> Self {
        self.recovery = Some(backend);
        self
    }

    pub fn with_verdict_hook(mut self, hook: &'a VerdictHook<'a>) -> Self {
        self.verdict_hook = Some(hook);
        self
    }

    pub fn record_trajectory(mut self, on: bool) -> Self {
        self.record_trajectory = on;
        self
    }

    /// Keep each terminal image in the results (otherwise dropped after checking).
    pub fn keep_images(mut self, on: bool) -> Self {
        self.keep_images = on;
        self
    }

    pub fn initial_state(&self) -> SimState {
        SimState::at_rest(self.scenario.home, self.sim.scene)
    }

    /// Runs one skill toward its current goal, checks the result and appends it to the
    /// history.
    pub fn run_skill(
        &self,
        ctx: &mut TaskContext,
        cf: ContactFormation,
        state: &SimState,
        recovery: bool,
    ) -> Result<(SkillResult, SimState), SimError> {
        let masked = ctx.goal(cf);
        let target = masked.resolve(ctx.last_goal);
        let mut trajectory = Vec::new();
        let (next, status) = if self.record_trajectory {
            self.sim
                .execute_motion_observed(state, &GoalSpec::full(target), &mut |s: &SimState| {
                    trajectory.push(TrajectoryPoint {
                        arm: s.arm,
                        deflection: s.deflection,
                        contacts: s.contacts.len(),
                        normal_force: s.total_normal_force(),
                    })
                })?
        } else {
            self.sim.execute_motion(state, &GoalSpec::full(target))?
        };
        let image = render(&next, &self.scenario.camera);
        let obs = observe(&image);
        let params = &self.scenario.check;
        let mut verdicts = vec![check_pose(&masked, &next.arm, params), check_compression(status)];
        match cf {
            ContactFormation::Fit => verdicts.push(check_fit(&obs)),
            ContactFormation::Align => verdicts.push(check_align(&obs, params)),
            ContactFormation::Insert => verdicts.push(check_insert(&next, &self.goal_image, &image, params)),
            ContactFormation::Approach | ContactFormation::Contact => {}
        }
        let mut verdict = aggregate(cf, &verdicts);
        verdict.measurements.observation = Some(obs);
        if let Some(hook) = self.verdict_hook {
            if let Some(v) = hook(cf, &verdict) {
                verdict = v;
            }
        }
        let result = SkillResult {
            cf,
            goal: GoalSpec::full(target),
            terminal_pose: next.arm,
            deflection: next.deflection,
            terminal_image: self.keep_images.then_some(image),
            observation: obs,
            status,
            verdict,
            insertion_depth: next.insertion_depth(),
            recovery,
            trajectory,
        };
        ctx.last_goal = target;
        ctx.history.push(result.clone());
        Ok((result, next))
    }

    /// Runs the whole task. Without a recovery backend every formation runs once
    /// (the open-loop baseline); with one, failures of Fit, Align and Insert are handed
    /// to it and its plans executed until Insert succeeds or retries run out.
    pub fn run_task(&self, ctx: &mut TaskContext) -> Result<TaskRecord, TrialAbort> {
        let mut state = self.initial_state();
        let mut events = Vec::new();
        let mut executions = [0u32; 5];
        let mut transitions = Vec::new();
        let mut invocations = 0;
        let mut fallbacks = 0;
        let mut timed_out = false;
        let mut framework_success = false;
        let mut in_recovery = false;
        // Pending executions; plan steps carry their goal update, applied when they run.
        let mut queue: VecDeque<(ContactFormation, Option<GoalSpec>)> =
            ContactFormation::ALL.iter().map(|&cf| (cf, None)).collect();
        while let Some((cf, update)) = queue.pop_front() {
            if executions.iter().sum::<u32>() >= MAX_EXECUTIONS {
                timed_out = true;
                break;
            }
            let n = executions.iter().sum::<u32>();
            if let Some(u) = &update {
                ctx.goals[cf.index()] = ctx.goals[cf.index()].merged(u);
            }
            let (result, next) = self
                .run_skill(ctx, cf, &state, update.is_some())
                .map_err(|source| TrialAbort { cf, execution: n, source })?;
            state = next;
            executions[cf.index()] += 1;
            let success = result.verdict.success;
            events.push(TrialEvent::Skill(Box::new(result.clone())));
            if success {
                ctx.retry_count = 0;
                if cf == ContactFormation::Insert && self.recovery.is_some() {
                    framework_success = true;
                    break;
                }
                continue;
            }
            let Some(backend) = self.recovery else {
                if !cf.is_recoverable() {
                    break;
                }
                continue;
            };
            if !cf.is_recoverable() {
                break;
            }
            if in_recovery {
                ctx.retry_count += 1;
                if ctx.retry_count >= self.scenario.recovery.max_consecutive_failures {
                    timed_out = true;
                    break;
                }
            }
            in_recovery = true;
            let response = backend.recover(ctx, &result, &self.goal_image, &self.env);
            invocations += 1;
            if response.fallback.is_some() {
                fallbacks += 1;
            }
            let first = response.plan.steps[0].cf;
            transitions.push(Transition { from: cf, to: first });
            queue.clear();
            for step in &response.plan.steps {
                queue.push_back((step.cf, Some(step.goal)));
            }
            let last = response.plan.steps.last().map(|s| s.cf).unwrap_or(first);
            let mut resume = last.next();
            while let Some(c) = resume {
                queue.push_back((c, None));
                resume = c.next();
            }
            events.push(TrialEvent::Recovery {
                from: cf,
                backend: response.backend,
                analysis: response.analysis,
                plan: response.plan,
                fallback: response.fallback,
            });
        }
        if self.recovery.is_none() {
            framework_success = ctx
                .history
                .last()
                .is_some_and(|r| r.cf == ContactFormation::Insert && r.verdict.success);
        }
        let final_depth = state.insertion_depth();
        let outcome = TaskOutcome {
            framework_success,
            ground_truth_success: final_depth >= self.scenario.check.insertion_depth,
            timed_out,
            executions,
            extra_executions: executions.map(|n| n.saturating_sub(1)),
            transitions,
            recovery_invocations: invocations,
            fallbacks,
            final_depth,
            final_pose: state.arm,
        };
        events.push(TrialEvent::Outcome(outcome.clone()));
        Ok(TaskRecord {
            outcome,
            events,
            final_state: state,
        })
    }
}
