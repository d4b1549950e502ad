//! HTTP client for a remote vision-language planner, with rule fallback.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    validate_analysis, validate_plan, FailureAnalysis, RecoveryBackend, RecoveryEnv, RecoveryPlan, RecoveryResponse,
    RuleBackend, ValidationError,
};
use crate::check::message_parts;
use crate::executor::{SkillResult, TaskContext};
use crate::perception::{render_pose, RasterImage};
use crate::scene::{ArmPose, ContactFormation};

pub const URL_ENV: &str = "SOFTPEG_PLANNER_URL";
pub const TOKEN_ENV: &str = "SOFTPEG_PLANNER_TOKEN";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub url: String,
    pub token: Option<String>,
    pub timeout: Duration,
    /// JSONL file receiving every request/response pair.
    pub transcript: Option<PathBuf>,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token: None,
            timeout: Duration::from_secs(30),
            transcript: None,
        }
    }

    /// Reads the endpoint and token from the environment; `None` without a URL.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(URL_ENV).ok().filter(|u| !u.is_empty())?;
        let mut c = Self::new(url);
        c.token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Some(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub trial_id: String,
    pub cf: ContactFormation,
    pub goal_pose: ArmPose,
    pub terminal_pose: ArmPose,
    pub messages: Vec<String>,
    pub goal_image_b64: String,
    pub terminal_image_b64: String,
    pub history_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub analysis: FailureAnalysis,
    pub plan: RecoveryPlan,
}

#[derive(Debug, Error)]
pub enum RemoteProtocolError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("planner answered HTTP {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid plan: {0}")]
    Validation(#[from] ValidationError),
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
    fallback: RuleBackend,
    transcript: Option<Mutex<BufWriter<File>>>,
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    trial_id: &'a str,
    request: &'a RemoteRequest,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    accepted: bool,
}

fn png_b64(image: &RasterImage) -> String {
    let bytes = image.to_png().unwrap_or_default();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

/// One token per executed skill, oldest first, e.g. `fit:fail(p_gy was too small.)`.
pub fn history_digest(ctx: &TaskContext) -> String {
    ctx.history
        .iter()
        .map(|r| {
            if r.verdict.success {
                format!("{}:ok", r.cf)
            } else {
                format!("{}:fail({})", r.cf, r.verdict.message)
            }
        })
        .collect::<Vec<_>>()
        .join(",")
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> std::io::Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let transcript = match &config.transcript {
            Some(path) => {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                let f = OpenOptions::new().create(true).append(true).open(path)?;
                Some(Mutex::new(BufWriter::new(f)))
            }
            None => None,
        };
        Ok(Self {
            config,
            agent,
            fallback: RuleBackend,
            transcript,
        })
    }

    pub fn build_request(
        &self,
        ctx: &TaskContext,
        failed: &SkillResult,
        goal_image: &RasterImage,
        env: &RecoveryEnv,
    ) -> RemoteRequest {
        let terminal = match &failed.terminal_image {
            Some(img) => png_b64(img),
            None => png_b64(&render_pose(&env.scene, failed.terminal_pose, failed.deflection, &env.camera)),
        };
        RemoteRequest {
            trial_id: ctx.trial_id.clone(),
            cf: failed.cf,
            goal_pose: failed.goal.resolve(ctx.last_goal),
            terminal_pose: failed.terminal_pose,
            messages: message_parts(&failed.verdict.message).map(str::to_string).collect(),
            goal_image_b64: png_b64(goal_image),
            terminal_image_b64: terminal,
            history_digest: history_digest(ctx),
        }
    }

    fn post(&self, request: &RemoteRequest) -> Result<String, RemoteProtocolError> {
        let mut call = self.agent.post(&self.config.url);
        if let Some(token) = &self.config.token {
            call = call.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = call
            .send_json(request)
            .map_err(|e| RemoteProtocolError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(RemoteProtocolError::Status(status));
        }
        response
            .body_mut()
            .read_to_string()
            .map_err(|e| RemoteProtocolError::Transport(e.to_string()))
    }

    fn log(&self, line: &TranscriptLine) {
        if let Some(t) = &self.transcript {
            let mut w = t.lock().unwrap_or_else(|p| p.into_inner());
            let written = serde_json::to_writer(&mut *w, line)
                .map_err(std::io::Error::other)
                .and_then(|_| w.write_all(b"\n"))
                .and_then(|_| w.flush());
            if let Err(e) = written {
                log::warn!("could not write planner transcript: {e}");
            }
        }
    }

    /// Parses and validates a raw planner reply.
    pub fn parse_response(
        body: &str,
        from: ContactFormation,
        ctx: &TaskContext,
        env: &RecoveryEnv,
    ) -> Result<(FailureAnalysis, RecoveryPlan), RemoteProtocolError> {
        let parsed: RemoteResponse =
            serde_json::from_str(body).map_err(|e| RemoteProtocolError::Malformed(e.to_string()))?;
        validate_analysis(&parsed.analysis, env)?;
        validate_plan(&parsed.plan, from, ctx, env)?;
        Ok((parsed.analysis, parsed.plan))
    }

    /// One round trip to the planner; every attempt lands in the transcript.
    pub fn remote_request(
        &self,
        ctx: &TaskContext,
        failed: &SkillResult,
        goal_image: &RasterImage,
        env: &RecoveryEnv,
    ) -> Result<(FailureAnalysis, RecoveryPlan), RemoteProtocolError> {
        let request = self.build_request(ctx, failed, goal_image, env);
        let (raw, result) = match self.post(&request) {
            Ok(body) => {
                let parsed = Self::parse_response(&body, failed.cf, ctx, env);
                (Some(body), parsed)
            }
            Err(e) => (None, Err(e)),
        };
        self.log(&TranscriptLine {
            trial_id: &ctx.trial_id,
            request: &request,
            response: raw.as_deref(),
            error: result.as_ref().err().map(|e| e.to_string()),
            accepted: result.is_ok(),
        });
        result
    }
}

impl RecoveryBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn recover(&self, ctx: &TaskContext, failed: &SkillResult, goal_image: &RasterImage, env: &RecoveryEnv) -> RecoveryResponse {
        match self.remote_request(ctx, failed, goal_image, env) {
            Ok((analysis, plan)) => RecoveryResponse {
                analysis,
                plan,
                backend: self.name().to_string(),
                fallback: None,
            },
            Err(e) => {
                log::warn!("trial {}: remote planner failed ({e}), using rules", ctx.trial_id);
                let mut r = self.fallback.recover(ctx, failed, goal_image, env);
                r.fallback = Some(e.to_string());
                r
            }
        }
    }
}
