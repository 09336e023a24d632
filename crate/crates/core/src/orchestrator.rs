//! Routes a user goal through the web, analysis and chat agents.
//!
//! Stages run strictly in order (web, then analysis, then chat). The web and
//! analysis agents are bounded ReAct loops; the chat agent makes a single
//! answer completion whose hidden reasoning is logged but never returned.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::llm::{AgentPrompt, Completion, LlmProvider, PromptMode, ProviderError};
use crate::observation::render_observation;
use crate::registry::{validate_call, FunctionSpec, NAVIGATE};
use crate::session::{ChatTurn, SessionView};
use crate::tools::{ToolBus, ToolError, ToolResult, ToolStatus};
use crate::wire::{ActionResultPayload, ActionStatus, AgentName, AgentStatusPayload, StatusState};

pub const WEB_SYSTEM: &str = "You operate a web application on behalf of the user. \
Each turn, pick exactly one of the listed functions (they are the only actions valid on the current page) \
or answer with a short final message once the UI part of the goal is done. \
Use navigate to change pages; its url must be one of the listed targets.";

pub const ANALYSIS_SYSTEM: &str = "You are an analysis agent. Call the listed domain tools to answer the goal \
and finish with a short final message once you have the results you need.";

pub const CHAT_SYSTEM: &str = "You are the assistant's voice. Think step by step about the progress and tool results, \
then reply to the user with a concise, factual summary. Do not mention internal reasoning.";

pub const ROUTER_SYSTEM: &str = "Decide which agents must work on the goal. Reply with a comma-separated subset of \
`web` (operate the UI) and `analysis` (call domain tools), or `none` for a pure question.";

pub const APOLOGY: &str = "Sorry, I could not complete that request right now. Please try again.";

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub max_steps: u32,
    pub max_invalid: u32,
    pub action_timeout: Duration,
    /// How long to wait for an observation after a non-navigation action.
    pub observation_settle: Duration,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_steps: 8,
            max_invalid: 2,
            action_timeout: Duration::from_secs(10),
            observation_settle: Duration::from_millis(100),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Web,
    Analysis,
}

/// Ordered agent stages; the chat agent always runs afterwards.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub stages: Vec<Stage>,
    /// True when the provider answer could not be parsed and the keyword rule
    /// decided.
    pub fallback: bool,
}

impl RoutePlan {
    pub fn has(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRef {
    pub name: String,
    pub args: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub agent: AgentName,
    pub thought: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ActionRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<String>,
    pub snapshot_seq: u64,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum AgentError {
    #[error("{agent} agent exceeded {max} steps")]
    MaxStepsExceeded { agent: AgentName, max: u32 },
    #[error("{agent} agent made {count} consecutive invalid calls, last `{name}`: {reason}")]
    InvalidToolCall {
        agent: AgentName,
        name: String,
        reason: String,
        count: u32,
    },
    #[error("no result for action `{name}` within {timeout_ms} ms")]
    ActionTimeout { name: String, timeout_ms: u64 },
    #[error("frontend connection closed")]
    ConnectionClosed,
    #[error("tool `{tool}` failed: {reason}")]
    ToolFailure { tool: String, reason: String },
    #[error("{agent} agent: {message}")]
    Provider { agent: AgentName, message: String },
}

impl AgentError {
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::MaxStepsExceeded { .. } => "max_steps_exceeded",
            AgentError::InvalidToolCall { .. } => "invalid_tool_call",
            AgentError::ActionTimeout { .. } => "action_timeout",
            AgentError::ConnectionClosed => "connection_closed",
            AgentError::ToolFailure { .. } => "tool_failure",
            AgentError::Provider { .. } => "provider_error",
        }
    }

    fn provider(agent: AgentName, e: ProviderError) -> Self {
        AgentError::Provider {
            agent,
            message: e.to_string(),
        }
    }
}

/// Result of one agent loop: the steps taken, and how it ended.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRun {
    pub steps: Vec<TraceStep>,
    pub outcome: Result<(), AgentError>,
}

impl AgentRun {
    fn done(steps: Vec<TraceStep>) -> Self {
        Self { steps, outcome: Ok(()) }
    }

    fn failed(steps: Vec<TraceStep>, err: AgentError) -> Self {
        Self {
            steps,
            outcome: Err(err),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.outcome.is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchError {
    #[error("connection closed")]
    ConnectionClosed,
    #[error("no action result before the deadline")]
    Timeout,
    #[error("another action is still pending")]
    Busy,
}

/// The orchestrator's view of one session's live frontend.
#[async_trait]
pub trait UiBridge: Send + Sync {
    /// Immutable copy of the grounding state, taken at call time.
    fn view(&self) -> SessionView;

    /// Number of observation frames received so far, including duplicates.
    fn observations_received(&self) -> u64;

    /// Waits until more than `seen` observations have been received. Returns
    /// false on timeout.
    async fn wait_for_observation(&self, seen: u64, timeout: Duration) -> bool;

    /// Sends an action request and awaits its result.
    async fn dispatch_action(
        &self,
        agent: AgentName,
        function_name: &str,
        args: &Map<String, Value>,
        snapshot_seq: u64,
        timeout: Duration,
    ) -> Result<ActionResultPayload, DispatchError>;

    fn status(&self, status: AgentStatusPayload);

    fn append_chat(&self, turn: ChatTurn);

    /// Structured trace event for the JSON-lines log.
    fn log(&self, event: Value);
}

/// Everything one goal produced.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalReport {
    pub plan: RoutePlan,
    pub web: Option<AgentRun>,
    pub analysis: Option<AgentRun>,
    pub tool_results: Vec<ToolResult>,
    pub reply: String,
}

impl GoalReport {
    pub fn errors(&self) -> Vec<&AgentError> {
        [&self.web, &self.analysis]
            .into_iter()
            .flatten()
            .filter_map(|r| r.outcome.as_ref().err())
            .collect()
    }

    pub fn trace(&self) -> Vec<&TraceStep> {
        [&self.web, &self.analysis]
            .into_iter()
            .flatten()
            .flat_map(|r| r.steps.iter())
            .collect()
    }
}

pub struct Orchestrator {
    provider: Arc<dyn LlmProvider>,
    tools: Arc<ToolBus>,
    config: AgentConfig,
}

fn status(agent: AgentName, step: u32, state: StatusState, action: Option<&str>, detail: Option<String>) -> AgentStatusPayload {
    AgentStatusPayload {
        agent,
        step,
        state,
        action: action.map(str::to_owned),
        detail,
    }
}

fn compact(v: &impl Serialize) -> String {
    serde_json::to_string(v).unwrap_or_default()
}

impl Orchestrator {
    pub fn new(provider: Arc<dyn LlmProvider>, tools: Arc<ToolBus>, config: AgentConfig) -> Self {
        Self { provider, tools, config }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn provider(&self) -> &Arc<dyn LlmProvider> {
        &self.provider
    }

    pub fn tools(&self) -> &ToolBus {
        &self.tools
    }

    /// Full pipeline for one chat request.
    pub async fn handle_goal(&self, ui: &dyn UiBridge, goal: &str) -> GoalReport {
        let plan = self.route_goal(ui, goal).await;
        ui.log(json!({"event": "route", "session": ui.view().id, "goal": goal, "plan": plan}));

        let web = if plan.has(Stage::Web) {
            Some(self.run_web_agent(ui, goal).await)
        } else {
            None
        };
        let (analysis, tool_results) = if plan.has(Stage::Analysis) {
            let (run, results) = self
                .run_analysis_agent(ui, goal, web.as_ref().map_or(&[][..], |w| &w.steps))
                .await;
            (Some(run), results)
        } else {
            (None, Vec::new())
        };

        let steps: Vec<&TraceStep> = [&web, &analysis].into_iter().flatten().flat_map(|r| &r.steps).collect();
        let errors: Vec<&AgentError> = [&web, &analysis]
            .into_iter()
            .flatten()
            .filter_map(|r| r.outcome.as_ref().err())
            .collect();
        let reply = self.run_chat_agent(ui, goal, &steps, &tool_results, &errors).await;

        GoalReport {
            plan,
            web,
            analysis,
            tool_results,
            reply,
        }
    }

    pub async fn route_goal(&self, ui: &dyn UiBridge, goal: &str) -> RoutePlan {
        let view = ui.view();
        let tool_fns: Vec<FunctionSpec> = self.tools.specs().map(|t| t.as_function()).collect();
        let mut prompt = AgentPrompt::new(PromptMode::Route, ROUTER_SYSTEM, goal);
        prompt.turns = view.chat_history.clone();
        prompt.tools = view.active_functions.iter().chain(&tool_fns).cloned().collect();
        ui.status(status(AgentName::Router, 0, StatusState::Started, None, None));

        let parsed = match self.provider.complete(&view.id, &prompt).await {
            Ok(Completion::Final { text, .. }) => parse_plan(&text),
            Ok(Completion::ToolCall { .. }) => None,
            Err(e) => {
                ui.log(json!({"event": "provider_error", "session": view.id, "agent": "router", "error": e.to_string()}));
                None
            }
        };
        let plan = parsed.unwrap_or_else(|| fallback_plan(goal, &view.active_functions, &tool_fns));
        ui.status(status(AgentName::Router, 0, StatusState::Finished, None, Some(compact(&plan.stages))));
        plan
    }

    pub async fn run_web_agent(&self, ui: &dyn UiBridge, goal: &str) -> AgentRun {
        let agent = AgentName::Web;
        let mut steps = Vec::new();
        let mut context = Vec::new();
        let mut invalid_streak = 0u32;
        ui.status(status(agent, 0, StatusState::Started, None, None));

        for step in 1..=self.config.max_steps {
            // One consistent snapshot per step; later observations are picked
            // up by the next step.
            let view = ui.view();
            let snapshot_seq = view.snapshot_seq();
            let mut prompt = AgentPrompt::new(PromptMode::ReactStep, WEB_SYSTEM, goal);
            prompt.turns = view.chat_history.clone();
            prompt.observation_text = view.snapshot.as_ref().map(render_observation).unwrap_or_default();
            prompt.tools = view.active_functions.clone();
            prompt.context = context.clone();

            let completion = match self.provider.complete(&view.id, &prompt).await {
                Ok(c) => c,
                Err(e) => return self.finish(ui, agent, step, steps, Err(AgentError::provider(agent, e))),
            };
            let (name, args, thought) = match completion {
                Completion::Final { text, reasoning } => {
                    if let Some(r) = reasoning {
                        ui.log(json!({"event": "reasoning", "session": view.id, "agent": agent, "text": r}));
                    }
                    let s = TraceStep {
                        agent,
                        thought: text,
                        action: None,
                        result: None,
                        snapshot_seq,
                        url: view.current_url.clone(),
                    };
                    self.log_step(ui, &view.id, &s);
                    steps.push(s);
                    return self.finish(ui, agent, step, steps, Ok(()));
                }
                Completion::ToolCall { name, args, thought } => (name, args, thought.unwrap_or_default()),
            };

            let check = match view.active(&name) {
                None => Err(format!("function `{name}` is not available on {}", view.current_url)),
                Some(spec) => validate_call(spec, &args).map_err(|e| e.to_string()),
            };
            let mut trace_step = TraceStep {
                agent,
                thought,
                action: Some(ActionRef {
                    name: name.clone(),
                    args: args.clone(),
                }),
                result: None,
                snapshot_seq,
                url: view.current_url.clone(),
            };

            if let Err(reason) = check {
                invalid_streak += 1;
                trace_step.result = Some(format!("invalid: {reason}"));
                context.push(format!("{name} {} -> invalid: {reason}", compact(&args)));
                self.log_step(ui, &view.id, &trace_step);
                steps.push(trace_step);
                if invalid_streak >= self.config.max_invalid {
                    let err = AgentError::InvalidToolCall {
                        agent,
                        name,
                        reason,
                        count: invalid_streak,
                    };
                    return self.finish(ui, agent, step, steps, Err(err));
                }
                continue;
            }
            invalid_streak = 0;

            ui.status(status(agent, step, StatusState::Step, Some(&name), None));
            let seen = ui.observations_received();
            let outcome = ui
                .dispatch_action(agent, &name, &args, snapshot_seq, self.config.action_timeout)
                .await;
            let result = match outcome {
                Ok(r) => r,
                Err(DispatchError::Timeout) => {
                    trace_step.result = Some("timeout".into());
                    self.log_step(ui, &view.id, &trace_step);
                    steps.push(trace_step);
                    let err = AgentError::ActionTimeout {
                        name,
                        timeout_ms: self.config.action_timeout.as_millis() as u64,
                    };
                    return self.finish(ui, agent, step, steps, Err(err));
                }
                Err(DispatchError::ConnectionClosed | DispatchError::Busy) => {
                    trace_step.result = Some("not sent: connection closed".into());
                    self.log_step(ui, &view.id, &trace_step);
                    steps.push(trace_step);
                    return self.finish(ui, agent, step, steps, Err(AgentError::ConnectionClosed));
                }
            };

            let summary = match result.status {
                ActionStatus::Ok => "ok".to_owned(),
                ActionStatus::Failed => format!("failed: {}", result.detail.as_deref().unwrap_or("")),
            };
            context.push(format!("{name} {} -> {summary}", compact(&args)));
            trace_step.result = Some(summary);
            self.log_step(ui, &view.id, &trace_step);
            steps.push(trace_step);

            if result.status == ActionStatus::Ok {
                let wait = if name == NAVIGATE {
                    self.config.action_timeout
                } else {
                    self.config.observation_settle
                };
                if !ui.wait_for_observation(seen, wait).await && name == NAVIGATE {
                    ui.log(json!({"event": "navigation_unobserved", "session": view.id, "step": step}));
                }
            }
        }

        let err = AgentError::MaxStepsExceeded {
            agent,
            max: self.config.max_steps,
        };
        self.finish(ui, agent, self.config.max_steps, steps, Err(err))
    }

    pub async fn run_analysis_agent(
        &self,
        ui: &dyn UiBridge,
        goal: &str,
        web_trace: &[TraceStep],
    ) -> (AgentRun, Vec<ToolResult>) {
        let agent = AgentName::Analysis;
        let mut results = Vec::new();
        if self.tools.is_empty() {
            return (AgentRun::done(Vec::new()), results);
        }
        let tool_fns: Vec<FunctionSpec> = self.tools.specs().map(|t| t.as_function()).collect();
        let mut steps = Vec::new();
        let mut context: Vec<String> = web_trace.iter().filter_map(describe_step).collect();
        let mut invalid_streak = 0u32;
        let mut last_failed: Option<String> = None;
        ui.status(status(agent, 0, StatusState::Started, None, None));

        for step in 1..=self.config.max_steps {
            let view = ui.view();
            let mut prompt = AgentPrompt::new(PromptMode::ReactStep, ANALYSIS_SYSTEM, goal);
            prompt.turns = view.chat_history.clone();
            prompt.observation_text = view.snapshot.as_ref().map(render_observation).unwrap_or_default();
            prompt.tools = tool_fns.clone();
            prompt.context = context.clone();

            let completion = match self.provider.complete(&view.id, &prompt).await {
                Ok(c) => c,
                Err(e) => {
                    let run = self.finish(ui, agent, step, steps, Err(AgentError::provider(agent, e)));
                    return (run, results);
                }
            };
            let base = |thought: String, action: Option<ActionRef>| TraceStep {
                agent,
                thought,
                action,
                result: None,
                snapshot_seq: view.snapshot_seq(),
                url: view.current_url.clone(),
            };
            let (name, args, thought) = match completion {
                Completion::Final { text, .. } => {
                    let s = base(text, None);
                    self.log_step(ui, &view.id, &s);
                    steps.push(s);
                    return (self.finish(ui, agent, step, steps, Ok(())), results);
                }
                Completion::ToolCall { name, args, thought } => (name, args, thought.unwrap_or_default()),
            };
            let mut trace_step = base(
                thought,
                Some(ActionRef {
                    name: name.clone(),
                    args: args.clone(),
                }),
            );

            ui.status(status(agent, step, StatusState::Step, Some(&name), None));
            let invoked = self.tools.invoke_tool(&name, &args).await;
            let failure = match invoked {
                Err(e @ (ToolError::UnknownTool(_) | ToolError::ArgsInvalid { .. })) => {
                    invalid_streak += 1;
                    let reason = e.to_string();
                    trace_step.result = Some(format!("invalid: {reason}"));
                    context.push(format!("{name} {} -> invalid: {reason}", compact(&args)));
                    self.log_step(ui, &view.id, &trace_step);
                    steps.push(trace_step);
                    if invalid_streak >= self.config.max_invalid {
                        let err = AgentError::InvalidToolCall {
                            agent,
                            name,
                            reason,
                            count: invalid_streak,
                        };
                        return (self.finish(ui, agent, step, steps, Err(err)), results);
                    }
                    continue;
                }
                Err(e) => Some(e.to_string()),
                Ok(r) if r.status == ToolStatus::Failed => {
                    let reason = r.error().unwrap_or("tool failed").to_owned();
                    results.push(r);
                    Some(reason)
                }
                Ok(r) => {
                    trace_step.result = Some(format!("ok: {}", compact(&r.body)));
                    context.push(format!("{name} {} -> ok: {}", compact(&args), compact(&r.body)));
                    results.push(r);
                    None
                }
            };
            invalid_streak = 0;

            match failure {
                None => {
                    last_failed = None;
                    self.log_step(ui, &view.id, &trace_step);
                    steps.push(trace_step);
                }
                Some(reason) => {
                    trace_step.result = Some(format!("failed: {reason}"));
                    context.push(format!("{name} {} -> failed: {reason}", compact(&args)));
                    self.log_step(ui, &view.id, &trace_step);
                    steps.push(trace_step);
                    // one retry of a failing tool, then give up
                    if last_failed.as_deref() == Some(name.as_str()) {
                        let err = AgentError::ToolFailure { tool: name, reason };
                        return (self.finish(ui, agent, step, steps, Err(err)), results);
                    }
                    last_failed = Some(name);
                }
            }
        }

        let err = AgentError::MaxStepsExceeded {
            agent,
            max: self.config.max_steps,
        };
        (self.finish(ui, agent, self.config.max_steps, steps, Err(err)), results)
    }

    pub async fn run_chat_agent(
        &self,
        ui: &dyn UiBridge,
        goal: &str,
        traces: &[&TraceStep],
        tool_results: &[ToolResult],
        errors: &[&AgentError],
    ) -> String {
        let view = ui.view();
        let mut prompt = AgentPrompt::new(PromptMode::CotAnswer, CHAT_SYSTEM, goal);
        prompt.turns = view.chat_history.clone();
        prompt.observation_text = view.snapshot.as_ref().map(render_observation).unwrap_or_default();
        prompt.context = traces.iter().copied().filter_map(describe_step).collect();
        prompt
            .context
            .extend(tool_results.iter().map(|r| format!("tool {} -> {}", r.tool, compact(&r.body))));
        prompt.context.extend(errors.iter().map(|e| format!("error: {e}")));
        ui.status(status(AgentName::Chat, 0, StatusState::Started, None, None));

        let text = match self.provider.complete(&view.id, &prompt).await {
            Ok(Completion::Final { text, reasoning }) if !text.trim().is_empty() => {
                if let Some(r) = reasoning {
                    ui.log(json!({"event": "reasoning", "session": view.id, "agent": "chat", "text": r}));
                }
                text
            }
            Ok(other) => {
                ui.log(json!({"event": "provider_error", "session": view.id, "agent": "chat",
                    "error": format!("unusable answer completion: {}", compact(&other))}));
                APOLOGY.to_owned()
            }
            Err(e) => {
                ui.log(json!({"event": "provider_error", "session": view.id, "agent": "chat", "error": e.to_string()}));
                APOLOGY.to_owned()
            }
        };
        ui.append_chat(ChatTurn::user(goal));
        ui.append_chat(ChatTurn::agent(text.clone()));
        ui.status(status(AgentName::Chat, 1, StatusState::Finished, None, None));
        text
    }

    fn finish(
        &self,
        ui: &dyn UiBridge,
        agent: AgentName,
        step: u32,
        steps: Vec<TraceStep>,
        outcome: Result<(), AgentError>,
    ) -> AgentRun {
        let session = ui.view().id;
        match &outcome {
            Ok(()) => {
                ui.status(status(agent, step, StatusState::Finished, None, None));
                ui.log(json!({"event": "agent_finished", "session": session, "agent": agent, "steps": steps.len()}));
                AgentRun::done(steps)
            }
            Err(e) => {
                ui.status(status(agent, step, StatusState::Failed, None, Some(e.to_string())));
                ui.log(json!({"event": "agent_failed", "session": session, "agent": agent,
                    "steps": steps.len(), "code": e.code(), "error": e.to_string()}));
                AgentRun::failed(steps, outcome.unwrap_err())
            }
        }
    }

    fn log_step(&self, ui: &dyn UiBridge, session: &str, step: &TraceStep) {
        ui.log(json!({"event": "trace_step", "session": session, "step": step}));
    }
}

fn describe_step(s: &TraceStep) -> Option<String> {
    let action = s.action.as_ref()?;
    Some(format!(
        "{} {} {} -> {}",
        s.agent,
        action.name,
        compact(&action.args),
        s.result.as_deref().unwrap_or("pending")
    ))
}

/// Accepts answers such as `web, analysis`, `["analysis"]` or `none`.
pub fn parse_plan(text: &str) -> Option<RoutePlan> {
    let cleaned: String = text
        .chars()
        .map(|c| if matches!(c, '[' | ']' | '"' | '\'' | ',' | '.' | '`') { ' ' } else { c })
        .collect();
    let mut web = false;
    let mut analysis = false;
    let mut any = false;
    for token in cleaned.split_whitespace() {
        match token.to_ascii_lowercase().as_str() {
            "web" => web = true,
            "analysis" => analysis = true,
            "none" | "chat" => {}
            _ => return None,
        }
        any = true;
    }
    if !any {
        return None;
    }
    let mut stages = Vec::new();
    if web {
        stages.push(Stage::Web);
    }
    if analysis {
        stages.push(Stage::Analysis);
    }
    Some(RoutePlan { stages, fallback: false })
}

const STOPWORDS: &[&str] = &[
    "this", "that", "with", "from", "into", "onto", "page", "pages", "then", "than", "them", "they", "there",
    "their", "what", "when", "where", "which", "while", "will", "would", "could", "should", "have", "your",
    "about", "after", "before", "other", "another", "labeled", "return", "returns", "field", "current",
];

fn normalize_word(w: &str) -> Option<String> {
    let w = w.to_lowercase();
    if w.chars().count() < 4 || STOPWORDS.contains(&w.as_str()) {
        return None;
    }
    Some(w.strip_suffix('s').map(str::to_owned).unwrap_or(w))
}

fn keywords(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter_map(normalize_word)
}

fn mentions_any(goal: &std::collections::HashSet<String>, specs: &[FunctionSpec]) -> bool {
    specs
        .iter()
        .flat_map(|f| keywords(&f.description).chain(keywords(&f.name)).collect::<Vec<_>>())
        .any(|k| goal.contains(&k))
}

/// Keyword rule used when the router completion is unusable: a goal sharing a
/// keyword with an active function's description routes to web, one sharing a
/// keyword with a tool description routes to analysis.
pub fn fallback_plan(goal: &str, active: &[FunctionSpec], tools: &[FunctionSpec]) -> RoutePlan {
    let words: std::collections::HashSet<String> = keywords(goal).collect();
    let mut stages = Vec::new();
    if mentions_any(&words, active) {
        stages.push(Stage::Web);
    }
    if mentions_any(&words, tools) {
        stages.push(Stage::Analysis);
    }
    RoutePlan { stages, fallback: true }
}
