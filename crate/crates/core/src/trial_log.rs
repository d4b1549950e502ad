//! One JSONL file per trial: a header line, one line per event, and either an outcome
//! or an abort line at the end. Logs carry everything needed to replay the trial.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchConfig, Condition, RecoveryMode};
use crate::executor::{SkillResult, TaskContext, TaskRecord, TrialAbort, TrialEvent};
use crate::perception::RasterImage;
use crate::recovery::{RecoveryBackend, RecoveryEnv, RecoveryResponse, RuleBackend};
use crate::scene::{PegShape, Scenario, SceneConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "header")]
pub struct TrialHeader {
    pub trial_id: String,
    pub index: usize,
    pub seed: u64,
    pub condition: Condition,
    pub shape: PegShape,
    pub recovery: RecoveryMode,
    /// Scenario with `scene` replaced by the trial's randomized scene.
    pub scenario: Scenario,
}

impl TrialHeader {
    pub fn new(id: &str, index: usize, seed: u64, cfg: &BenchConfig, scenario: &Scenario, scene: SceneConfig) -> Self {
        Self {
            trial_id: id.to_string(),
            index,
            seed,
            condition: cfg.condition,
            shape: cfg.shape,
            recovery: cfg.recovery,
            scenario: Scenario {
                scene,
                ..scenario.clone()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "abort")]
struct AbortLine {
    error: String,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}: empty log")]
    Empty(String),
}

#[derive(Debug, Clone)]
pub struct TrialLog {
    pub header: TrialHeader,
    pub events: Vec<TrialEvent>,
    pub abort: Option<String>,
}

impl TrialLog {
    pub fn skills(&self) -> impl Iterator<Item = &SkillResult> {
        self.events.iter().filter_map(|e| match e {
            TrialEvent::Skill(s) => Some(s.as_ref()),
            _ => None,
        })
    }
}

/// Serialized lines for a trial result, header first.
pub fn log_lines(header: &TrialHeader, result: &Result<TaskRecord, TrialAbort>) -> Vec<String> {
    let mut lines = vec![serde_json::to_string(header).expect("header serializes")];
    match result {
        Ok(rec) => lines.extend(rec.events.iter().map(|e| serde_json::to_string(e).expect("event serializes"))),
        Err(e) => lines.push(serde_json::to_string(&AbortLine { error: e.to_string() }).expect("abort serializes")),
    }
    lines
}

pub fn write_trial_log(path: &Path, header: &TrialHeader, result: &Result<TaskRecord, TrialAbort>) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    for line in log_lines(header, result) {
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_trial_log(path: &Path) -> Result<TrialLog, LogError> {
    let p = path.display().to_string();
    let f = fs::File::open(path).map_err(|source| LogError::Io { path: p.clone(), source })?;
    let mut lines = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|source| LogError::Io { path: p.clone(), source })?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    let first = lines.first().ok_or_else(|| LogError::Empty(p.clone()))?;
    let parse_err = |line: usize| {
        let p = p.clone();
        move |source| LogError::Parse { path: p, line, source }
    };
    let header: TrialHeader = serde_json::from_str(first).map_err(parse_err(1))?;
    let mut events = Vec::new();
    let mut abort = None;
    for (i, line) in lines.iter().enumerate().skip(1) {
        if let Ok(a) = serde_json::from_str::<AbortLine>(line) {
            abort = Some(a.error);
            continue;
        }
        events.push(serde_json::from_str(line).map_err(parse_err(i + 1))?);
    }
    Ok(TrialLog { header, events, abort })
}

/// Serves the recovery decisions recorded in a log, in order. Used to replay trials
/// whose plans came from a remote planner.
pub struct RecordedBackend {
    responses: Mutex<std::vec::IntoIter<RecoveryResponse>>,
}

impl RecordedBackend {
    pub fn from_events(events: &[TrialEvent]) -> Self {
        let responses: Vec<RecoveryResponse> = events
            .iter()
            .filter_map(|e| match e {
                TrialEvent::Recovery {
                    backend,
                    analysis,
                    plan,
                    fallback,
                    ..
                } => Some(RecoveryResponse {
                    analysis: analysis.clone(),
                    plan: plan.clone(),
                    backend: backend.clone(),
                    fallback: fallback.clone(),
                }),
                _ => None,
            })
            .collect();
        Self {
            responses: Mutex::new(responses.into_iter()),
        }
    }
}

impl RecoveryBackend for RecordedBackend {
    fn name(&self) -> &str {
        "recorded"
    }

    fn recover(&self, ctx: &TaskContext, failed: &SkillResult, goal_image: &RasterImage, env: &RecoveryEnv) -> RecoveryResponse {
        let next = self.responses.lock().unwrap_or_else(|p| p.into_inner()).next();
        next.unwrap_or_else(|| {
            let mut r = RuleBackend.recover(ctx, failed, goal_image, env);
            r.fallback = Some("log has no further recorded plans".into());
            r
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub lines_compared: usize,
    /// First differing line number (1-based, header is line 1) with both versions.
    pub mismatch: Option<(usize, String, String)>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.mismatch.is_none()
    }
}

/// Normalizes a JSON line through the same parser on both sides of a comparison.
fn canonical(line: &str) -> serde_json::Value {
    serde_json::from_str(line).unwrap_or(serde_json::Value::Null)
}

/// Re-executes a logged trial and compares the fresh log line by line.
pub fn replay(log: &TrialLog, original_lines: &[String]) -> ReplayReport {
    let header = &log.header;
    let scenario = &header.scenario;
    let recorded;
    let rule = RuleBackend;
    let backend: Option<&dyn RecoveryBackend> = match header.recovery {
        RecoveryMode::Off => None,
        RecoveryMode::Rule => Some(&rule),
        RecoveryMode::Remote => {
            recorded = RecordedBackend::from_events(&log.events);
            Some(&recorded)
        }
    };
    let result = crate::bench::run_scene(scenario, scenario.scene, &header.trial_id, header.seed, backend);
    let fresh = log_lines(header, &result);
    let n = fresh.len().max(original_lines.len());
    for i in 0..n {
        let a = original_lines.get(i).map(String::as_str).unwrap_or("");
        let b = fresh.get(i).map(String::as_str).unwrap_or("");
        if canonical(a) != canonical(b) {
            return ReplayReport {
                lines_compared: i + 1,
                mismatch: Some((i + 1, a.to_string(), b.to_string())),
            };
        }
    }
    ReplayReport {
        lines_compared: n,
        mismatch: None,
    }
}

/// Reads and replays a log file.
pub fn replay_file(path: &Path) -> Result<ReplayReport, LogError> {
    let log = read_trial_log(path)?;
    let text = fs::read_to_string(path).map_err(|source| LogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let lines: Vec<String> = text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect();
    Ok(replay(&log, &lines))
}
