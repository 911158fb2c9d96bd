//! Resource allocation between the two populations.
//!
//! Every coordination point the engine hands a [`OptimizationSummary`] to a
//! [`Coordinator`] and receives the exploitation share `alpha`. Two policies
//! are provided: a deterministic rule cascade and a chat-completion client
//! that falls back to the rule cascade whenever the model cannot be reached
//! or answers with anything other than a valid allocation.

use std::cell::Cell;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ObjectiveVector;

const SYSTEM_PROMPT: &str = include_str!("../assets/coordinator_system_v1.txt");
const USER_TEMPLATE: &str = include_str!("../assets/coordinator_user_v1.txt");

pub const ENV_LLM_URL: &str = "DUALAGENT_LLM_URL";
pub const ENV_LLM_MODEL: &str = "DUALAGENT_LLM_MODEL";
pub const ENV_LLM_API_KEY: &str = "DUALAGENT_LLM_API_KEY";

/// State snapshot handed to the coordinator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationSummary {
    pub generation: usize,
    pub t_max: usize,
    pub epsilon: f64,
    /// Strict feasibility over both populations.
    pub feasibility_rate: f64,
    pub hv_exploit: f64,
    pub hv_explore: f64,
    /// Relative exploitation hypervolume gain over the last coordination window.
    pub hv_improvement: f64,
    pub avg_violation: f64,
    pub best_objectives: ObjectiveVector,
    pub current_alpha: f64,
}

impl OptimizationSummary {
    pub fn progress(&self) -> f64 {
        self.generation as f64 / self.t_max.max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionSource {
    Rule,
    Llm,
    LlmFallback,
}

impl std::fmt::Display for DecisionSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rule => "rule",
            Self::Llm => "llm",
            Self::LlmFallback => "llm-fallback",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub alpha: f64,
    pub rationale: String,
    pub source: DecisionSource,
    /// Why the model answer was discarded, for fallback decisions.
    pub fallback_reason: Option<String>,
}

/// Admissible range for `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for AlphaBounds {
    fn default() -> Self {
        Self { min: 0.3, max: 0.9 }
    }
}

impl AlphaBounds {
    pub fn clamp(&self, alpha: f64) -> f64 {
        alpha.clamp(self.min, self.max)
    }
}

pub trait Coordinator {
    fn decide(&mut self, summary: &OptimizationSummary) -> AllocationDecision;
}

/// Feasibility below which exploration is boosted.
const FEASIBILITY_FLOOR: f64 = 0.8;
const VIOLATION_ALPHA: f64 = 0.55;
const STAGNATION_THRESHOLD: f64 = 0.01;
const STAGNATION_STEP: f64 = 0.15;

/// Rule cascade: violation response, then late stagnation response, then
/// the phase schedule.
pub fn rule_based_alpha(summary: &OptimizationSummary) -> AllocationDecision {
    rule_based_alpha_within(summary, &AlphaBounds::default())
}

pub fn rule_based_alpha_within(
    summary: &OptimizationSummary,
    bounds: &AlphaBounds,
) -> AllocationDecision {
    let progress = summary.progress();
    let (alpha, rationale) = if summary.feasibility_rate < FEASIBILITY_FLOOR {
        (
            VIOLATION_ALPHA,
            "Prioritizing exploration to discover constraint-satisfying regions.",
        )
    } else if summary.hv_improvement < STAGNATION_THRESHOLD && progress > 0.5 {
        (
            summary.current_alpha - STAGNATION_STEP,
            "Increasing exploration to escape potential local optima.",
        )
    } else if progress <= 0.3 {
        (0.60, "Early phase: keeping a broad exploration budget.")
    } else if progress <= 0.7 {
        (
            0.72,
            "Shifting toward exploitation as constraint satisfaction has stabilized.",
        )
    } else {
        (
            0.80,
            "Late phase: concentrating on refinement of feasible lists.",
        )
    };
    AllocationDecision {
        alpha: bounds.clamp(alpha),
        rationale: rationale.to_string(),
        source: DecisionSource::Rule,
        fallback_reason: None,
    }
}

#[derive(Debug, Clone, Default)]
pub struct RuleCoordinator {
    pub bounds: AlphaBounds,
}

impl Coordinator for RuleCoordinator {
    fn decide(&mut self, summary: &OptimizationSummary) -> AllocationDecision {
        rule_based_alpha_within(summary, &self.bounds)
    }
}

/// Chat-completion endpoint settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: f64,
    /// Extra attempts after a transport error.
    pub retries: u32,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            url: "http://localhost:11434/v1/chat/completions".into(),
            model: "qwen2.5:14b".into(),
            temperature: 0.0,
            max_tokens: 256,
            timeout_secs: 10.0,
            retries: 1,
        }
    }
}

impl LlmConfig {
    /// Applies the URL and model environment overrides.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_LLM_URL) {
            self.url = url;
        }
        if let Ok(model) = std::env::var(ENV_LLM_MODEL) {
            self.model = model;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("request failed: {0}")]
    Http(String),
    #[error("unexpected response envelope: {0}")]
    Envelope(String),
    #[error("scripted transport failure")]
    Scripted,
}

#[derive(Debug, Error)]
pub enum ReplyError {
    #[error("reply is not the expected JSON object: {0}")]
    Malformed(String),
    #[error("alpha {0} is outside [0, 1]")]
    OutOfRange(f64),
}

/// Sends one chat request and returns the first choice's message content.
pub trait ChatTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// JSON-over-HTTP chat-completion client.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(config: &LlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .build()
            .into();
        Self {
            agent,
            url: config.url.clone(),
            api_key: std::env::var(ENV_LLM_API_KEY).ok(),
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

/// Extracts the first choice's content from a chat-completion body.
pub fn parse_chat_response(body: &str) -> Result<String, TransportError> {
    let response: ChatResponse =
        serde_json::from_str(body).map_err(|e| TransportError::Envelope(e.to_string()))?;
    response
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| TransportError::Envelope("no choices".into()))
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let body =
            serde_json::to_string(request).map_err(|e| TransportError::Http(e.to_string()))?;
        let mut builder = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = builder
            .send(body.as_str())
            .map_err(|e| TransportError::Http(e.to_string()))?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Http(e.to_string()))?;
        parse_chat_response(&text)
    }
}

/// Replays canned message contents in order, cycling when exhausted.
/// `None` entries simulate a transport failure.
#[derive(Debug, Clone)]
pub struct ScriptedTransport {
    responses: Vec<Option<String>>,
    cursor: Cell<usize>,
}

impl ScriptedTransport {
    pub fn new(responses: Vec<Option<String>>) -> Self {
        Self {
            responses,
            cursor: Cell::new(0),
        }
    }

    /// Parses a script file: a JSON array whose entries are strings
    /// (message contents) or `null` (transport failure).
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn calls(&self) -> usize {
        self.cursor.get()
    }
}

impl ChatTransport for ScriptedTransport {
    fn complete(&self, _request: &ChatRequest) -> Result<String, TransportError> {
        if self.responses.is_empty() {
            return Err(TransportError::Scripted);
        }
        let i = self.cursor.get();
        self.cursor.set(i + 1);
        self.responses[i % self.responses.len()]
            .clone()
            .ok_or(TransportError::Scripted)
    }
}

fn fmt_value(x: f64) -> String {
    format!("{x:.4}")
}

/// Renders the user prompt for a summary.
pub fn render_prompt(summary: &OptimizationSummary) -> String {
    let best = summary.best_objectives;
    [
        ("{generation}", summary.generation.to_string()),
        ("{t_max}", summary.t_max.to_string()),
        ("{progress}", fmt_value(summary.progress())),
        ("{epsilon}", fmt_value(summary.epsilon)),
        ("{feasibility_rate}", fmt_value(summary.feasibility_rate)),
        ("{avg_violation}", fmt_value(summary.avg_violation)),
        ("{hv_exploit}", fmt_value(summary.hv_exploit)),
        ("{hv_explore}", fmt_value(summary.hv_explore)),
        ("{hv_improvement}", fmt_value(summary.hv_improvement)),
        ("{best_relevance}", fmt_value(best.relevance)),
        ("{best_diversity}", fmt_value(best.diversity)),
        ("{best_novelty}", fmt_value(best.novelty)),
        ("{current_alpha}", fmt_value(summary.current_alpha)),
    ]
    .iter()
    .fold(USER_TEMPLATE.to_string(), |text, (key, value)| {
        text.replace(key, value)
    })
}

pub fn build_request(summary: &OptimizationSummary, config: &LlmConfig) -> ChatRequest {
    ChatRequest {
        model: config.model.clone(),
        messages: vec![
            ChatMessage {
                role: "system".into(),
                content: SYSTEM_PROMPT.to_string(),
            },
            ChatMessage {
                role: "user".into(),
                content: render_prompt(summary),
            },
        ],
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Reply {
    alpha: f64,
    rationale: String,
}

/// Strictly parses `{"alpha": number, "rationale": string}`; alpha must lie in `[0, 1]`.
pub fn parse_reply(content: &str) -> Result<(f64, String), ReplyError> {
    let reply: Reply = serde_json::from_str(content.trim())
        .map_err(|e| ReplyError::Malformed(e.to_string()))?;
    if !(0.0..=1.0).contains(&reply.alpha) {
        return Err(ReplyError::OutOfRange(reply.alpha));
    }
    Ok((reply.alpha, reply.rationale))
}

/// Asks the model for an allocation, retrying transport errors, and falls
/// back to the rule cascade on any failure.
pub fn llm_alpha(
    summary: &OptimizationSummary,
    transport: &dyn ChatTransport,
    config: &LlmConfig,
    bounds: &AlphaBounds,
) -> AllocationDecision {
    let request = build_request(summary, config);
    let mut last_error = String::new();
    let mut content = None;
    for attempt in 0..=config.retries {
        match transport.complete(&request) {
            Ok(text) => {
                content = Some(text);
                break;
            }
            Err(e) => {
                warn!("coordinator attempt {} failed: {e}", attempt + 1);
                last_error = e.to_string();
            }
        }
    }
    let outcome = match content {
        Some(text) => parse_reply(&text).map_err(|e| e.to_string()),
        None => Err(last_error),
    };
    match outcome {
        Ok((alpha, rationale)) => AllocationDecision {
            alpha: bounds.clamp(alpha),
            rationale,
            source: DecisionSource::Llm,
            fallback_reason: None,
        },
        Err(reason) => {
            warn!("coordinator falling back to rule policy: {reason}");
            AllocationDecision {
                source: DecisionSource::LlmFallback,
                fallback_reason: Some(reason),
                ..rule_based_alpha_within(summary, bounds)
            }
        }
    }
}

pub struct LlmCoordinator<T: ChatTransport> {
    pub transport: T,
    pub config: LlmConfig,
    pub bounds: AlphaBounds,
}

impl<T: ChatTransport> LlmCoordinator<T> {
    pub fn new(transport: T, config: LlmConfig) -> Self {
        Self {
            transport,
            config,
            bounds: AlphaBounds::default(),
        }
    }
}

impl<T: ChatTransport> Coordinator for LlmCoordinator<T> {
    fn decide(&mut self, summary: &OptimizationSummary) -> AllocationDecision {
        llm_alpha(summary, &self.transport, &self.config, &self.bounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn summary(generation: usize, feasibility: f64, hv_improvement: f64, alpha: f64) -> OptimizationSummary {
        OptimizationSummary {
            generation,
            t_max: 50,
            epsilon: 0.1,
            feasibility_rate: feasibility,
            hv_exploit: 0.12,
            hv_explore: 0.1,
            hv_improvement,
            avg_violation: 0.05,
            best_objectives: ObjectiveVector::new(0.7, 0.3, 0.8),
            current_alpha: alpha,
        }
    }

    #[test]
    fn rule_examples() {
        let d = rule_based_alpha(&summary(8, 0.62, 0.2, 0.7));
        assert_eq!(d.alpha, 0.55);
        assert_eq!(d.source, DecisionSource::Rule);
        assert_eq!(rule_based_alpha(&summary(25, 0.94, 0.05, 0.6)).alpha, 0.72);
        let d = rule_based_alpha(&summary(45, 0.95, 0.002, 0.80));
        assert!((d.alpha - 0.65).abs() < 1e-12);
        // Stagnation step never leaves the admissible range.
        assert_eq!(rule_based_alpha(&summary(45, 0.95, 0.0, 0.35)).alpha, 0.3);
    }

    #[test]
    fn rule_is_pure() {
        let s = summary(30, 0.9, 0.0, 0.72);
        assert_eq!(rule_based_alpha(&s), rule_based_alpha(&s));
    }

    #[test]
    fn prompt_contains_every_field() {
        let text = render_prompt(&summary(10, 0.9, 0.05, 0.7));
        assert!(!text.contains('{'), "unfilled placeholder in {text}");
        assert!(text.contains("generation: 10"));
        assert!(text.contains("current_alpha: 0.7000"));
    }

    fn run_script(responses: Vec<Option<&str>>) -> (AllocationDecision, usize) {
        let transport = ScriptedTransport::new(responses.into_iter().map(|r| r.map(String::from)).collect());
        let d = llm_alpha(&summary(20, 0.9, 0.05, 0.7), &transport, &LlmConfig::default(), &AlphaBounds::default());
        (d, transport.calls())
    }

    #[test]
    fn valid_reply_passes_through() {
        let (d, calls) = run_script(vec![Some(r#"{"alpha": 0.75, "rationale": "Stable feasibility."}"#)]);
        assert_eq!(d.alpha, 0.75);
        assert_eq!(d.source, DecisionSource::Llm);
        assert_eq!(d.rationale, "Stable feasibility.");
        assert_eq!(calls, 1);
    }

    #[test]
    fn reply_is_clamped_to_bounds() {
        let (d, _) = run_script(vec![Some(r#"{"alpha": 0.95, "rationale": "x"}"#)]);
        assert_eq!(d.alpha, 0.9);
        assert_eq!(d.source, DecisionSource::Llm);
    }

    #[test]
    fn malformed_and_out_of_range_fall_back() {
        let rule = rule_based_alpha(&summary(20, 0.9, 0.05, 0.7));
        for bad in ["sure, use 0.7", r#"{"alpha": 1.5}"#, r#"{"alpha": "high", "rationale": "x"}"#, r#"{"alpha": -0.1, "rationale": "x"}"#] {
            let (d, calls) = run_script(vec![Some(bad)]);
            assert_eq!(d.source, DecisionSource::LlmFallback, "{bad}");
            assert_eq!(d.alpha, rule.alpha);
            assert_eq!(d.rationale, rule.rationale);
            assert!(d.fallback_reason.is_some());
            assert_eq!(calls, 1, "parse failures are not retried");
        }
    }

    #[test]
    fn transport_error_is_retried_once() {
        let (d, calls) = run_script(vec![None, Some(r#"{"alpha": 0.5, "rationale": "ok"}"#)]);
        assert_eq!(d.source, DecisionSource::Llm);
        assert_eq!(calls, 2);
        let (d, calls) = run_script(vec![None]);
        assert_eq!(d.source, DecisionSource::LlmFallback);
        assert_eq!(calls, 2);
    }

    #[test]
    fn envelope_parsing() {
        let body = r#"{"id":"x","choices":[{"index":0,"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(parse_chat_response(body).unwrap(), "hi");
        assert!(parse_chat_response(r#"{"choices":[]}"#).is_err());
        assert!(parse_chat_response("nope").is_err());
    }
}
