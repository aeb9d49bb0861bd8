//! HTTP session service. One episode per server: mutations go through a
//! single command queue owned by a session task, reads work on the latest
//! published snapshot.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gridguard::actions::{ActionKind, Illegal, ManifestEntry};
use gridguard::agents::top_q_actions;
use gridguard::dqn::QNetwork;
use gridguard::env::{EnvError, TraceRow};
use gridguard::metrics::{aggregate, EpisodeRecord, EvalMetrics, StepRecord};
use gridguard::{ActionId, EnvConfig, Environment, StepOutcome, SystemState};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{mpsc, oneshot, watch};

use crate::config::Workbench;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    reason: Option<Illegal>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            reason: None,
        }
    }

    fn illegal(reason: Illegal) -> Self {
        let status = match reason {
            Illegal::UnknownAction { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::CONFLICT,
        };
        let code = match reason {
            Illegal::UnknownAction { .. } => "unknown_action",
            _ => "illegal_action",
        };
        Self {
            status,
            code,
            message: reason.to_string(),
            reason: Some(reason),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl From<EnvError> for ApiError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Illegal(r) => Self::illegal(r),
            EnvError::Done => Self::new(StatusCode::CONFLICT, "episode_done", e.to_string()),
            other => Self::internal(other),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(r) = self.reason {
            body["reason"] = serde_json::to_value(r).expect("reason serializes");
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// What read endpoints see.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub env: Environment,
    pub completed: Vec<EpisodeRecord>,
    pub current: EpisodeRecord,
}

impl Snapshot {
    fn metrics(&self) -> EvalMetrics {
        let mut all = self.completed.clone();
        if !self.current.steps.is_empty() {
            all.push(self.current.clone());
        }
        aggregate("session", &all, self.env.catalog().len())
    }
}

enum Command {
    Step {
        id: ActionId,
        reply: oneshot::Sender<Result<StepOutcome, ApiError>>,
    },
    Reset {
        scenario_id: Option<String>,
        reply: oneshot::Sender<Result<(), ApiError>>,
    },
}

struct Session {
    bench: Workbench,
    config: EnvConfig,
    env: Environment,
    completed: Vec<EpisodeRecord>,
    current: EpisodeRecord,
    published: watch::Sender<Arc<Snapshot>>,
}

fn empty_record(env: &Environment) -> EpisodeRecord {
    EpisodeRecord {
        scenario_id: env.scenario().id.clone(),
        survival_time: 0,
        blackout: false,
        total_reward: 0.0,
        steps: Vec::new(),
    }
}

fn fresh_env(bench: &Workbench, config: &EnvConfig, idx: usize) -> Result<Environment, ApiError> {
    let mut env = Environment::reset(
        Arc::clone(&bench.grid),
        Arc::clone(&bench.catalog),
        config.clone(),
        Arc::clone(&bench.scenarios[idx]),
    )
    .map_err(ApiError::internal)?;
    let _ = env.sensitivity();
    Ok(env)
}

impl Session {
    fn publish(&self) {
        self.published.send_replace(Arc::new(Snapshot {
            env: self.env.clone(),
            completed: self.completed.clone(),
            current: self.current.clone(),
        }));
    }

    fn step(&mut self, id: ActionId) -> Result<StepOutcome, ApiError> {
        let critical = self.env.is_critical();
        let out = self.env.step(id)?;
        let _ = self.env.sensitivity();
        self.current.steps.push(StepRecord {
            action: id,
            kind: out.info.action.kind(),
            critical,
        });
        self.current.total_reward += out.reward;
        self.current.survival_time = self.env.survival_time();
        self.current.blackout = self.env.blackout();
        if out.done {
            self.completed.push(self.current.clone());
        }
        self.publish();
        Ok(out)
    }

    fn reset(&mut self, scenario_id: Option<String>) -> Result<(), ApiError> {
        let idx = match scenario_id {
            None => 0,
            Some(id) => self
                .bench
                .scenarios
                .iter()
                .position(|s| s.id == id)
                .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_scenario", format!("no scenario {id}")))?,
        };
        if !self.env.is_done() && !self.current.steps.is_empty() {
            self.current.survival_time = self.env.state().step;
            self.completed.push(self.current.clone());
        }
        self.env = fresh_env(&self.bench, &self.config, idx)?;
        self.current = empty_record(&self.env);
        self.publish();
        Ok(())
    }
}

/// Cheap handle shared by the request handlers.
#[derive(Clone)]
pub struct SessionHandle {
    commands: mpsc::Sender<Command>,
    snapshot: watch::Receiver<Arc<Snapshot>>,
    scenarios: Arc<[String]>,
    network: Option<Arc<QNetwork>>,
}

impl SessionHandle {
    /// Starts the session task on the current tokio runtime, with the first
    /// scenario loaded.
    pub fn spawn(bench: Workbench, config: EnvConfig, network: Option<Arc<QNetwork>>) -> anyhow::Result<Self> {
        let env = fresh_env(&bench, &config, 0).map_err(|e| anyhow::anyhow!(e.message))?;
        let current = empty_record(&env);
        let scenarios: Arc<[String]> = bench.scenarios.iter().map(|s| s.id.clone()).collect();
        let first = Arc::new(Snapshot {
            env: env.clone(),
            completed: Vec::new(),
            current: current.clone(),
        });
        let (published, snapshot) = watch::channel(first);
        let mut session = Session {
            bench,
            config,
            env,
            completed: Vec::new(),
            current,
            published,
        };
        let (commands, mut rx) = mpsc::channel::<Command>(64);
        tokio::spawn(async move {
            while let Some(cmd) = rx.recv().await {
                match cmd {
                    Command::Step { id, reply } => {
                        let _ = reply.send(session.step(id));
                    }
                    Command::Reset { scenario_id, reply } => {
                        let _ = reply.send(session.reset(scenario_id));
                    }
                }
            }
        });
        Ok(Self {
            commands,
            snapshot,
            scenarios,
            network,
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.borrow().clone()
    }

    async fn send<T>(&self, make: impl FnOnce(oneshot::Sender<Result<T, ApiError>>) -> Command) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.commands
            .send(make(tx))
            .await
            .map_err(|_| ApiError::internal("session stopped"))?;
        rx.await.map_err(|_| ApiError::internal("session dropped the request"))?
    }
}

#[derive(Debug, Serialize)]
pub struct StateView {
    pub scenario_id: String,
    pub scenarios: Vec<String>,
    pub step: usize,
    pub horizon: usize,
    pub done: bool,
    pub blackout: bool,
    pub survival_time: usize,
    pub critical: bool,
    pub calm: bool,
    pub eta: f64,
    pub nu: f64,
    pub max_margin: f64,
    /// Id of the most loaded line.
    pub max_margin_line: Option<usize>,
    pub line_ids: Vec<usize>,
    pub cooldowns: Vec<u32>,
    pub state: SystemState,
    pub window: Vec<Vec<f64>>,
}

fn state_view(env: &Environment, scenarios: Vec<String>) -> StateView {
    let (max_margin, line) = env.state().max_margin();
    StateView {
        scenario_id: env.scenario().id.clone(),
        scenarios,
        step: env.state().step,
        horizon: env.horizon(),
        done: env.is_done(),
        blackout: env.blackout(),
        survival_time: env.survival_time(),
        critical: env.is_critical(),
        calm: env.is_calm(),
        eta: env.config().eta,
        nu: env.config().nu,
        max_margin,
        max_margin_line: line.map(|l| env.grid().lines[l].id),
        line_ids: env.grid().lines.iter().map(|l| l.id).collect(),
        cooldowns: env.state().cooldown.clone(),
        state: env.state().clone(),
        window: env.window().cloned().collect(),
    }
}

#[derive(Debug, Serialize)]
pub struct ActionView {
    pub id: usize,
    pub kind: Option<ActionKind>,
    pub description: String,
}

#[derive(Debug, Serialize)]
pub struct EffectiveView {
    #[serde(flatten)]
    pub action: ActionView,
    pub predicted_max_line_margin: Option<f64>,
}

#[derive(Debug, Deserialize)]
pub struct ActionRequest {
    pub action_id: usize,
}

#[derive(Debug, Default, Deserialize)]
pub struct ResetRequest {
    pub scenario_id: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct WhatIf {
    pub action_id: usize,
    pub description: String,
    pub predicted_flows: Vec<f64>,
    pub predicted_margins: Vec<f64>,
    pub reward_estimate: f64,
}

#[derive(Debug, Serialize)]
pub struct SuggestionView {
    pub action_id: usize,
    pub description: String,
    pub q: f64,
    pub reward_estimate: f64,
}

#[derive(Debug, Serialize)]
pub struct SessionMetrics {
    pub step: usize,
    pub episodes_completed: usize,
    pub total_reward: f64,
    pub critical_steps: usize,
    pub summary: EvalMetrics,
}

fn action_view(env: &Environment, id: ActionId) -> ActionView {
    let kind = env.catalog().decode(id).map(|a| a.kind());
    ActionView {
        id: id.0,
        kind,
        description: env.catalog().describe(env.grid(), id),
    }
}

async fn get_state(State(h): State<SessionHandle>) -> Json<StateView> {
    let snap = h.snapshot();
    Json(state_view(&snap.env, h.scenarios.to_vec()))
}

async fn get_legal(State(h): State<SessionHandle>) -> Json<Vec<ActionView>> {
    let snap = h.snapshot();
    Json(
        snap.env
            .legal_actions()
            .into_iter()
            .map(|id| action_view(&snap.env, id))
            .collect(),
    )
}

async fn get_effective(State(h): State<SessionHandle>) -> ApiResult<Vec<EffectiveView>> {
    let mut env = h.snapshot().env.clone();
    let cands = env.effective_candidates().map_err(ApiError::internal)?;
    Ok(Json(
        cands
            .into_iter()
            .map(|c| EffectiveView {
                action: action_view(&env, c.id),
                predicted_max_line_margin: c.predicted_max_line_margin,
            })
            .collect(),
    ))
}

async fn post_whatif(
    State(h): State<SessionHandle>,
    body: Result<Json<ActionRequest>, JsonRejection>,
) -> ApiResult<WhatIf> {
    let Json(req) = body?;
    let mut env = h.snapshot().env.clone();
    if env.is_done() {
        return Err(ApiError::new(StatusCode::CONFLICT, "episode_done", "episode is over"));
    }
    let id = ActionId(req.action_id);
    let action = env.check_legal(id).map_err(ApiError::illegal)?;
    let p = env.predict(action).map_err(ApiError::internal)?;
    let r = env.reward_estimate(id).map_err(ApiError::internal)?;
    Ok(Json(WhatIf {
        action_id: id.0,
        description: env.catalog().describe(env.grid(), id),
        predicted_flows: p.flows,
        predicted_margins: p.margins,
        reward_estimate: r,
    }))
}

async fn post_step(
    State(h): State<SessionHandle>,
    body: Result<Json<ActionRequest>, JsonRejection>,
) -> ApiResult<StepOutcome> {
    let Json(req) = body?;
    let id = ActionId(req.action_id);
    Ok(Json(h.send(|reply| Command::Step { id, reply }).await?))
}

async fn post_reset(
    State(h): State<SessionHandle>,
    body: Option<Json<ResetRequest>>,
) -> ApiResult<StateView> {
    let scenario_id = body.and_then(|Json(b)| b.scenario_id);
    h.send(|reply| Command::Reset { scenario_id, reply }).await?;
    let snap = h.snapshot();
    Ok(Json(state_view(&snap.env, h.scenarios.to_vec())))
}

async fn get_suggest(State(h): State<SessionHandle>) -> ApiResult<Vec<SuggestionView>> {
    let net = h
        .network
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no_agent", "no checkpoint loaded"))?;
    let mut env = h.snapshot().env.clone();
    let top = top_q_actions(&mut env, &net).map_err(ApiError::internal)?;
    Ok(Json(
        top.into_iter()
            .map(|s| SuggestionView {
                action_id: s.action_id.0,
                description: env.catalog().describe(env.grid(), s.action_id),
                q: s.q,
                reward_estimate: s.reward_estimate,
            })
            .collect(),
    ))
}

async fn get_metrics(State(h): State<SessionHandle>) -> Json<SessionMetrics> {
    let snap = h.snapshot();
    Json(SessionMetrics {
        step: snap.env.state().step,
        episodes_completed: snap.completed.len(),
        total_reward: snap.current.total_reward,
        critical_steps: snap.current.steps.iter().filter(|s| s.critical).count(),
        summary: snap.metrics(),
    })
}

async fn get_manifest(State(h): State<SessionHandle>) -> Json<Vec<ManifestEntry>> {
    let snap = h.snapshot();
    Json(snap.env.catalog().manifest(snap.env.grid()))
}

async fn get_trace(State(h): State<SessionHandle>) -> Json<Vec<TraceRow>> {
    Json(h.snapshot().env.trace().to_vec())
}

pub fn router(handle: SessionHandle, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/state", get(get_state))
        .route("/actions/legal", get(get_legal))
        .route("/actions/effective", get(get_effective))
        .route("/actions/manifest", get(get_manifest))
        .route("/whatif", post(post_whatif))
        .route("/step", post(post_step))
        .route("/reset", post(post_reset))
        .route("/agent/suggest", get(get_suggest))
        .route("/metrics", get(get_metrics))
        .route("/trace", get(get_trace))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") });
    let app = Router::new().nest("/api", api).with_state(handle);
    match static_dir {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app,
    }
}

pub async fn serve(addr: SocketAddr, app: Router) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
