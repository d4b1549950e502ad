//! Seeded randomized benchmark suites.

mod report;
mod rng;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::executor::{Executor, TaskContext, TaskRecord, TrialAbort};
use crate::recovery::{RecoveryBackend, RemoteBackend, RemoteConfig, RuleBackend};
use crate::scene::{ContactFormation, PegShape, Scenario, SceneConfig};
use crate::trial_log::{write_trial_log, TrialHeader};

pub use report::{emit_reports, metrics_json, write_plot_data, ReportError, ReportPaths};
pub use rng::{seeded, trial_seeds, unit_f64, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    None,
    Friction,
    PoseAndAngle,
    All,
}

impl Condition {
    pub const ALL: [Condition; 4] = [Condition::None, Condition::PoseAndAngle, Condition::Friction, Condition::All];

    pub fn name(self) -> &'static str {
        match self {
            Condition::None => "none",
            Condition::Friction => "friction",
            Condition::PoseAndAngle => "pose",
            Condition::All => "all",
        }
    }

    fn pose(self) -> bool {
        matches!(self, Condition::PoseAndAngle | Condition::All)
    }

    fn friction(self) -> bool {
        matches!(self, Condition::Friction | Condition::All)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Condition::None),
            "friction" => Ok(Condition::Friction),
            "pose" | "pose_and_angle" | "pose-and-angle" => Ok(Condition::PoseAndAngle),
            "all" => Ok(Condition::All),
            other => Err(format!("unknown condition `{other}` (none, friction, pose, all)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    Off,
    Rule,
    Remote,
}

impl RecoveryMode {
    pub fn name(self) -> &'static str {
        match self {
            RecoveryMode::Off => "off",
            RecoveryMode::Rule => "rule",
            RecoveryMode::Remote => "remote",
        }
    }
}

impl fmt::Display for RecoveryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RecoveryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "off" | "none" => Ok(RecoveryMode::Off),
            "rule" | "rules" => Ok(RecoveryMode::Rule),
            "remote" => Ok(RecoveryMode::Remote),
            other => Err(format!("unknown recovery mode `{other}` (off, rule, remote)")),
        }
    }
}

/// Randomization ranges. Grasp angle and hole shift are symmetric; friction is scaled
/// by a factor in `(1, max_friction_factor]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranges {
    pub grasp_angle_deg: f64,
    pub hole_shift: f64,
    pub max_friction_factor: f64,
}

impl Default for Ranges {
    fn default() -> Self {
        Self {
            grasp_angle_deg: 5.0,
            hole_shift: 0.020,
            max_friction_factor: 5.0,
        }
    }
}

/// The three draws behind a randomized scene, whether or not the condition uses them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draws {
    pub grasp_angle_deg: f64,
    pub hole_shift: f64,
    pub friction_factor: f64,
}

impl Draws {
    pub fn sample(rng: &mut SplitMix64, ranges: &Ranges) -> Self {
        let (u1, u2, u3) = (unit_f64(rng), unit_f64(rng), unit_f64(rng));
        Self {
            grasp_angle_deg: ranges.grasp_angle_deg * (2.0 * u1 - 1.0),
            hole_shift: ranges.hole_shift * (2.0 * u2 - 1.0),
            // u3 in [0, 1) maps onto (1, max].
            friction_factor: 1.0 + (ranges.max_friction_factor - 1.0) * (1.0 - u3),
        }
    }
}

/// Applies the draws enabled by `condition`.
pub fn apply_draws(base: &SceneConfig, condition: Condition, draws: &Draws) -> SceneConfig {
    let mut s = *base;
    if condition.pose() {
        s.peg.grasp_angle += draws.grasp_angle_deg.to_radians();
        s.hole_center_y += draws.hole_shift;
    }
    if condition.friction() {
        s.friction_coefficient *= draws.friction_factor;
    }
    s
}

pub fn randomize(base: &SceneConfig, condition: Condition, rng: &mut SplitMix64) -> SceneConfig {
    let draws = Draws::sample(rng, &Ranges::default());
    apply_draws(base, condition, &draws)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub condition: Condition,
    pub shape: PegShape,
    pub trials: usize,
    pub seed: u64,
    pub recovery: RecoveryMode,
    pub ranges: Ranges,
    /// Required for [`RecoveryMode::Remote`]; rules are used when it is missing.
    pub remote: Option<RemoteConfig>,
    /// When set, one JSONL log per trial is written here.
    pub log_dir: Option<PathBuf>,
}

impl BenchConfig {
    pub fn new(condition: Condition, shape: PegShape, recovery: RecoveryMode) -> Self {
        Self {
            condition,
            shape,
            trials: 30,
            seed: DEFAULT_SEED,
            recovery,
            ranges: Ranges::default(),
            remote: None,
            log_dir: None,
        }
    }
}

pub const DEFAULT_SEED: u64 = 20250101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub index: usize,
    pub trial_id: String,
    pub seed: u64,
    pub draws: Draws,
    pub framework_success: bool,
    pub ground_truth_success: bool,
    pub timed_out: bool,
    pub aborted: Option<String>,
    pub executions: [u32; 5],
    pub extra_executions: [u32; 5],
    pub recovery_invocations: u32,
    pub fallbacks: u32,
    pub final_depth: f64,
    pub transitions: Vec<(ContactFormation, ContactFormation)>,
}

/// Formations that can fail into recovery, as matrix rows and columns.
pub const RECOVERABLE: [ContactFormation; 3] = ContactFormation::RECOVERABLE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteMetrics {
    pub condition: Condition,
    pub shape: PegShape,
    pub recovery: RecoveryMode,
    pub trials: usize,
    pub seed: u64,
    /// Percentages.
    pub success_f: f64,
    pub success_g: f64,
    /// Mean extra executions per formation, canonical order.
    pub avg_extra: [f64; 5],
    /// Rows: failed formation (Fit, Align, Insert); columns: first step of the plan.
    pub transition_counts: [[u32; 3]; 3],
    /// Row-normalized percentages; all-zero rows had no samples.
    pub transition_matrix: [[f64; 3]; 3],
    pub abort_count: usize,
    pub timeout_count: usize,
    pub fallback_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub metrics: SuiteMetrics,
    pub trials: Vec<TrialSummary>,
}

/// Scene of trial `seed` under `condition`, with the draws that produced it.
pub fn trial_scene(scenario: &Scenario, cfg: &BenchConfig, seed: u64) -> (SceneConfig, Draws) {
    let mut rng = seeded(seed);
    let draws = Draws::sample(&mut rng, &cfg.ranges);
    (apply_draws(&scenario.scene_for(cfg.shape), cfg.condition, &draws), draws)
}

pub fn trial_id(cfg: &BenchConfig, index: usize) -> String {
    format!("{}-{}-{}-{:04}", cfg.shape, cfg.condition, cfg.recovery, index)
}

/// Runs one trial scene with the given backend.
pub fn run_scene(
    scenario: &Scenario,
    scene: SceneConfig,
    trial_id: &str,
    seed: u64,
    backend: Option<&dyn RecoveryBackend>,
) -> Result<TaskRecord, TrialAbort> {
    let mut exec = Executor::new(scenario, scene);
    if let Some(b) = backend {
        exec = exec.with_recovery(b);
    }
    let mut ctx = TaskContext::new(trial_id, seed, scenario);
    exec.run_task(&mut ctx)
}

/// Builds the backend for a recovery mode. Remote without a usable endpoint degrades
/// to rules with a warning.
pub fn make_backend(mode: RecoveryMode, remote: Option<&RemoteConfig>) -> Option<Box<dyn RecoveryBackend>> {
    match mode {
        RecoveryMode::Off => None,
        RecoveryMode::Rule => Some(Box::new(RuleBackend)),
        RecoveryMode::Remote => match remote.map(|c| RemoteBackend::new(c.clone())) {
            Some(Ok(b)) => Some(Box::new(b)),
            Some(Err(e)) => {
                log::warn!("remote planner unavailable ({e}); using rules");
                Some(Box::new(RuleBackend))
            }
            None => {
                log::warn!("no remote planner configured; using rules");
                Some(Box::new(RuleBackend))
            }
        },
    }
}

fn summarize(index: usize, id: String, seed: u64, draws: Draws, result: &Result<TaskRecord, TrialAbort>) -> TrialSummary {
    let mut t = TrialSummary {
        index,
        trial_id: id,
        seed,
        draws,
        framework_success: false,
        ground_truth_success: false,
        timed_out: false,
        aborted: None,
        executions: [0; 5],
        extra_executions: [0; 5],
        recovery_invocations: 0,
        fallbacks: 0,
        final_depth: f64::NAN,
        transitions: Vec::new(),
    };
    match result {
        Ok(rec) => {
            let o = &rec.outcome;
            t.framework_success = o.framework_success;
            t.ground_truth_success = o.ground_truth_success;
            t.timed_out = o.timed_out;
            t.executions = o.executions;
            t.extra_executions = o.extra_executions;
            t.recovery_invocations = o.recovery_invocations;
            t.fallbacks = o.fallbacks;
            t.final_depth = o.final_depth;
            t.transitions = o.transitions.iter().map(|tr| (tr.from, tr.to)).collect();
        }
        Err(e) => t.aborted = Some(e.to_string()),
    }
    t
}

/// Aggregates trial summaries; order-independent apart from the listing itself.
pub fn aggregate_metrics(cfg: &BenchConfig, trials: &[TrialSummary]) -> SuiteMetrics {
    let n = trials.len().max(1) as f64;
    let pct = |k: usize| 100.0 * k as f64 / n;
    let completed: Vec<&TrialSummary> = trials.iter().filter(|t| t.aborted.is_none()).collect();
    let mut avg_extra = [0.0; 5];
    if !completed.is_empty() {
        for (i, a) in avg_extra.iter_mut().enumerate() {
            *a = completed.iter().map(|t| t.extra_executions[i] as f64).sum::<f64>() / completed.len() as f64;
        }
    }
    let mut counts = [[0u32; 3]; 3];
    for t in trials {
        for &(from, to) in &t.transitions {
            if let (Some(r), Some(c)) = (from.recovery_index(), to.recovery_index()) {
                counts[r][c] += 1;
            }
        }
    }
    let mut matrix = [[0.0; 3]; 3];
    for (row, out) in counts.iter().zip(matrix.iter_mut()) {
        let total: u32 = row.iter().sum();
        if total > 0 {
            for (c, o) in row.iter().zip(out.iter_mut()) {
                *o = 100.0 * *c as f64 / total as f64;
            }
        }
    }
    SuiteMetrics {
        condition: cfg.condition,
        shape: cfg.shape,
        recovery: cfg.recovery,
        trials: trials.len(),
        seed: cfg.seed,
        success_f: pct(trials.iter().filter(|t| t.framework_success).count()),
        success_g: pct(trials.iter().filter(|t| t.ground_truth_success).count()),
        avg_extra,
        transition_counts: counts,
        transition_matrix: matrix,
        abort_count: trials.len() - completed.len(),
        timeout_count: trials.iter().filter(|t| t.timed_out).count(),
        fallback_count: trials.iter().map(|t| t.fallbacks).sum(),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error("writing trial log {path}: {source}")]
    Log {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Runs every trial (in parallel) and aggregates. Aborted trials count as failures.
pub fn run_suite(scenario: &Scenario, cfg: &BenchConfig) -> Result<SuiteResult, BenchError> {
    if cfg.trials == 0 {
        return Err(BenchError::NoTrials);
    }
    let backend = make_backend(cfg.recovery, cfg.remote.as_ref());
    let backend_ref = backend.as_deref();
    let seeds = trial_seeds(cfg.seed, cfg.trials);
    let trials: Vec<Result<TrialSummary, BenchError>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let (scene, draws) = trial_scene(scenario, cfg, seed);
            let id = trial_id(cfg, i);
            let result = run_scene(scenario, scene, &id, seed, backend_ref);
            if let Some(dir) = &cfg.log_dir {
                let header = TrialHeader::new(&id, i, seed, cfg, scenario, scene);
                let path = dir.join(format!("{id}.jsonl"));
                write_trial_log(&path, &header, &result).map_err(|source| BenchError::Log {
                    path: path.display().to_string(),
                    source,
                })?;
            }
            Ok(summarize(i, id, seed, draws, &result))
        })
        .collect();
    let trials = trials.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(SuiteResult {
        metrics: aggregate_metrics(cfg, &trials),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::default_scenario_file;

    #[test]
    fn condition_none_is_identity() {
        let s = default_scenario_file();
        let mut rng = seeded(7);
        assert_eq!(randomize(&s.scene, Condition::None, &mut rng), s.scene);
    }

    #[test]
    fn friction_factor_stays_in_range() {
        let s = default_scenario_file();
        let mut rng = seeded(11);
        for _ in 0..1000 {
            let r = randomize(&s.scene, Condition::Friction, &mut rng);
            let f = r.friction_coefficient / s.scene.friction_coefficient;
            assert!(f > 1.0 && f <= 5.0, "{f}");
            assert_eq!(r.hole_center_y, s.scene.hole_center_y);
        }
    }

    #[test]
    fn pose_draws_respect_ranges() {
        let s = default_scenario_file();
        let mut rng = seeded(3);
        for _ in 0..1000 {
            let r = randomize(&s.scene, Condition::PoseAndAngle, &mut rng);
            assert!(r.peg.grasp_angle.abs() <= 5f64.to_radians() + 1e-15);
            assert!((r.hole_center_y - s.scene.hole_center_y).abs() <= 0.020);
            assert_eq!(r.friction_coefficient, s.scene.friction_coefficient);
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let s = default_scenario_file();
        let a = randomize(&s.scene, Condition::All, &mut seeded(99));
        let b = randomize(&s.scene, Condition::All, &mut seeded(99));
        assert_eq!(a, b);
    }

    #[test]
    fn matrix_rows_are_normalized() {
        let cfg = BenchConfig::new(Condition::All, PegShape::Circular, RecoveryMode::Rule);
        let mk = |tr: Vec<(ContactFormation, ContactFormation)>| TrialSummary {
            index: 0,
            trial_id: String::new(),
            seed: 0,
            draws: Draws { grasp_angle_deg: 0.0, hole_shift: 0.0, friction_factor: 1.0 },
            framework_success: true,
            ground_truth_success: true,
            timed_out: false,
            aborted: None,
            executions: [1; 5],
            extra_executions: [0; 5],
            recovery_invocations: tr.len() as u32,
            fallbacks: 0,
            final_depth: 0.013,
            transitions: tr,
        };
        use ContactFormation::*;
        let m = aggregate_metrics(
            &cfg,
            &[mk(vec![(Align, Fit), (Align, Align), (Align, Align)]), mk(vec![(Insert, Insert)])],
        );
        for row in &m.transition_matrix {
            let s: f64 = row.iter().sum();
            assert!(s == 0.0 || (s - 100.0).abs() < 0.1);
        }
        assert_eq!(m.transition_counts[1], [1, 2, 0]);
    }
}
