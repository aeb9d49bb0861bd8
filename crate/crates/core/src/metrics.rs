//! Episode rollouts and evaluation metrics: survival time, the action split
//! over critical-state decisions, and action diversity.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{ActionCatalog, ActionId, ActionKind};
use crate::agents::{AgentError, Policy};
use crate::env::{EnvConfig, EnvError, Environment};
use crate::grid::Grid;
use crate::par::Exec;
use crate::scenario::Scenario;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: ActionId,
    pub kind: ActionKind,
    pub critical: bool,
}

/// What happened in one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scenario_id: String,
    pub survival_time: usize,
    pub blackout: bool,
    pub total_reward: f64,
    pub steps: Vec<StepRecord>,
}

/// Drives `env` to the end of its episode with `choose`.
pub fn run_episode<E>(
    env: &mut Environment,
    mut choose: impl FnMut(&mut Environment) -> Result<ActionId, E>,
) -> Result<EpisodeRecord, E>
where
    E: From<EnvError>,
{
    let mut steps = Vec::new();
    let mut total = 0.0;
    while !env.is_done() {
        let critical = env.is_critical();
        let action = choose(env)?;
        let out = env.step(action)?;
        total += out.reward;
        steps.push(StepRecord {
            action,
            kind: out.info.action.kind(),
            critical,
        });
    }
    Ok(EpisodeRecord {
        scenario_id: env.scenario().id.clone(),
        survival_time: env.survival_time(),
        blackout: env.blackout(),
        total_reward: total,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub scenario_id: String,
    pub survival_time: usize,
    pub blackout: bool,
    pub total_reward: f64,
    pub steps: usize,
    pub critical_steps: usize,
    pub pct_do_nothing: f64,
    pub pct_reconnect: f64,
    pub pct_removal: f64,
    pub pct_redispatch: f64,
    pub unique_actions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub policy: String,
    pub scenarios: usize,
    pub catalog_size: usize,
    pub avg_survival_time: f64,
    pub pct_do_nothing: f64,
    pub pct_reconnect: f64,
    pub pct_removal: f64,
    pub pct_redispatch: f64,
    /// Mean number of distinct action ids used per scenario.
    pub action_diversity: f64,
    /// `action_diversity` as a percentage of the catalog size.
    pub action_diversity_pct: f64,
    pub per_scenario: Vec<ScenarioMetrics>,
}

fn scenario_metrics(r: &EpisodeRecord) -> ScenarioMetrics {
    let critical: Vec<&StepRecord> = r.steps.iter().filter(|s| s.critical).collect();
    let n = critical.len();
    let pct = |k: ActionKind| {
        if n == 0 {
            if k == ActionKind::DoNothing {
                100.0
            } else {
                0.0
            }
        } else {
            100.0 * critical.iter().filter(|s| s.kind == k).count() as f64 / n as f64
        }
    };
    let unique: BTreeSet<ActionId> = r.steps.iter().map(|s| s.action).collect();
    ScenarioMetrics {
        scenario_id: r.scenario_id.clone(),
        survival_time: r.survival_time,
        blackout: r.blackout,
        total_reward: r.total_reward,
        steps: r.steps.len(),
        critical_steps: n,
        pct_do_nothing: pct(ActionKind::DoNothing),
        pct_reconnect: pct(ActionKind::Reconnect),
        pct_removal: pct(ActionKind::Removal),
        pct_redispatch: pct(ActionKind::Redispatch),
        unique_actions: unique.len(),
    }
}

/// Per-scenario split over critical-state decisions, averaged over
/// scenarios; a scenario without critical steps counts as all do-nothing.
/// Diversity counts distinct ids over every step of a scenario.
pub fn aggregate(policy: &str, records: &[EpisodeRecord], catalog_size: usize) -> EvalMetrics {
    let per: Vec<ScenarioMetrics> = records.iter().map(scenario_metrics).collect();
    let n = per.len().max(1) as f64;
    let mean = |f: &dyn Fn(&ScenarioMetrics) -> f64| per.iter().map(f).sum::<f64>() / n;
    let diversity = mean(&|m| m.unique_actions as f64);
    EvalMetrics {
        policy: policy.to_string(),
        scenarios: per.len(),
        catalog_size,
        avg_survival_time: mean(&|m| m.survival_time as f64),
        pct_do_nothing: mean(&|m| m.pct_do_nothing),
        pct_reconnect: mean(&|m| m.pct_reconnect),
        pct_removal: mean(&|m| m.pct_removal),
        pct_redispatch: mean(&|m| m.pct_redispatch),
        action_diversity: diversity,
        action_diversity_pct: 100.0 * diversity / catalog_size.max(1) as f64,
        per_scenario: per,
    }
}

/// Greedy rollout of `policy` over every scenario. Each scenario gets its
/// own random stream, so results do not depend on the execution mode.
pub fn evaluate(
    policy: &Policy,
    grid: &Arc<Grid>,
    catalog: &Arc<ActionCatalog>,
    scenarios: &[Arc<Scenario>],
    config: &EnvConfig,
    seed: u64,
    exec: Exec,
) -> Result<EvalMetrics, EvalError> {
    let records = exec.map_range(scenarios.len(), |i| -> Result<EpisodeRecord, EvalError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let mut env = Environment::reset(
            Arc::clone(grid),
            Arc::clone(catalog),
            config.clone(),
            Arc::clone(&scenarios[i]),
        )?;
        run_episode(&mut env, |env| -> Result<ActionId, EvalError> {
            Ok(policy.act(env, 0.0, &mut rng)?.action)
        })
    });
    let records = records.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(&policy.kind.to_string(), &records, catalog.len()))
}
