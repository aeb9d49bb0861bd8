//! Deep Q-learning loop: critical-state transitions feed a prioritized
//! buffer; each critical step triggers one Adam update and a soft target
//! update. Everything random is drawn from named streams of one seed.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::ActionCatalog;
use crate::agents::{epsilon, AgentError, Policy, PolicyKind};
use crate::dqn::network::param_count;
use crate::dqn::replay::ReplayError;
use crate::dqn::{
    sgd_update, td_target, Adam, Checkpoint, Dims, NetError, QNetwork, ReplayBuffer, ReplayConfig,
    Sample, Transition,
};
use crate::env::{EnvConfig, EnvError, Environment};
use crate::grid::Grid;
use crate::par::Exec;
use crate::scenario::Scenario;
use crate::state::feature_len;

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    Scenario = 1,
    Init = 2,
    Exploration = 3,
    Replay = 4,
}

pub fn rng_stream(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training scenarios")]
    NoScenarios,
    #[error("exploration must be random-explore or physics-guided, got {0}")]
    Exploration(PolicyKind),
    #[error("initial network has {found:?}, environment needs {expected:?}")]
    Mismatch { found: Dims, expected: Dims },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub exploration: PolicyKind,
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub tau_soft: f64,
    pub replay_capacity: usize,
    pub alpha_prio: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub eps_prio: f64,
    pub importance_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            exploration: PolicyKind::PhysicsGuided,
            gamma: 0.99,
            batch_size: 64,
            learning_rate: 5e-4,
            lr_decay: 0.05,
            lr_decay_every: 1024,
            tau_soft: 0.005,
            replay_capacity: 1 << 17,
            alpha_prio: 0.6,
            beta_start: 0.4,
            beta_end: 1.0,
            eps_prio: 1e-3,
            importance_weights: true,
        }
    }
}

/// Inputs to a training run.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub grid: Arc<Grid>,
    pub catalog: Arc<ActionCatalog>,
    pub scenarios: Vec<Arc<Scenario>>,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub exec: Exec,
}

impl TrainSetup {
    pub fn dims(&self) -> Dims {
        Dims {
            kappa: self.env.kappa,
            features: feature_len(&self.grid),
            actions: self.catalog.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub scenario_id: String,
    pub survival_time: usize,
    pub total_reward: f64,
    /// Mean weighted TD loss over this episode's updates; NaN without any.
    pub mean_loss: f64,
    pub epsilon: f64,
    pub unique_actions: usize,
    pub steps: usize,
    pub critical_steps: usize,
    /// False when the step budget ran out mid-episode.
    pub complete: bool,
}

pub fn log_csv(log: &[EpisodeLog]) -> String {
    let mut out = String::from(
        "episode,scenario_id,survival_time,total_reward,mean_loss,epsilon,unique_actions,steps,critical_steps,complete\n",
    );
    for e in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            e.episode,
            e.scenario_id,
            e.survival_time,
            e.total_reward,
            e.mean_loss,
            e.epsilon,
            e.unique_actions,
            e.steps,
            e.critical_steps,
            e.complete
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpisodeLog>,
    pub env_steps: u64,
    pub critical_steps: u64,
    pub updates: u64,
    pub epsilon: f64,
    pub beta: f64,
}

/// Runs `budget` environment steps of training. Episodes cycle through the
/// scenarios in order.
pub fn train(setup: &TrainSetup, budget: u64) -> Result<TrainOutput, TrainError> {
    train_from(setup, budget, None)
}

/// State carried over from an earlier run.
#[derive(Debug, Clone)]
pub struct Resume {
    pub checkpoint: Checkpoint,
    pub critical_steps: u64,
}

/// Like [`train`], optionally continuing from saved networks and optimizer.
/// The replay buffer starts empty.
pub fn train_from(setup: &TrainSetup, budget: u64, init: Option<Resume>) -> Result<TrainOutput, TrainError> {
    if setup.scenarios.is_empty() {
        return Err(TrainError::NoScenarios);
    }
    let tc = &setup.train;
    if !tc.exploration.is_trained() {
        return Err(TrainError::Exploration(tc.exploration));
    }
    let dims = setup.dims();
    let (init_ck, critical_start) = match init {
        Some(r) => (Some(r.checkpoint), r.critical_steps),
        None => (None, 0),
    };
    let Checkpoint {
        online,
        mut target,
        mut adam,
    } = match init_ck {
        Some(ck) => {
            if ck.dims() != dims {
                return Err(TrainError::Mismatch {
                    found: ck.dims(),
                    expected: dims,
                });
            }
            ck
        }
        None => {
            let online = QNetwork::xavier(dims, &mut rng_stream(setup.seed, RngStream::Init));
            let mut adam = Adam::new(param_count(dims), tc.learning_rate);
            adam.decay = tc.lr_decay;
            adam.decay_every = tc.lr_decay_every;
            Checkpoint {
                target: online.clone(),
                online,
                adam,
            }
        }
    };
    let mut online = Arc::new(online);
    let mut explore_rng = rng_stream(setup.seed, RngStream::Exploration);
    let mut replay_rng = rng_stream(setup.seed, RngStream::Replay);
    let mut buffer = ReplayBuffer::new(ReplayConfig {
        capacity: tc.replay_capacity,
        alpha: tc.alpha_prio,
        beta_start: tc.beta_start,
        beta_end: tc.beta_end,
        eps: tc.eps_prio,
        block: dims.features,
    });

    let mut log = Vec::new();
    let mut env_steps = 0u64;
    let mut critical_steps = critical_start;
    let mut updates = 0u64;
    let mut beta = buffer.beta(0.0);
    let mut episode = 0usize;

    while env_steps < budget {
        let scenario = Arc::clone(&setup.scenarios[episode % setup.scenarios.len()]);
        let mut env = Environment::reset(
            Arc::clone(&setup.grid),
            Arc::clone(&setup.catalog),
            setup.env.clone(),
            scenario,
        )?;
        let mut total_reward = 0.0;
        let mut losses = Vec::new();
        let mut used = std::collections::BTreeSet::new();
        let mut ep_steps = 0usize;
        let mut ep_critical = 0usize;

        while !env.is_done() && env_steps < budget {
            let policy = Policy::trained(tc.exploration, Arc::clone(&online));
            let eps = epsilon(critical_steps);
            let s = env.observation();
            let decision = policy.act(&mut env, eps, &mut explore_rng)?;
            let out = env.step(decision.action)?;
            env_steps += 1;
            ep_steps += 1;
            total_reward += out.reward;
            used.insert(decision.action);

            if decision.critical {
                critical_steps += 1;
                ep_critical += 1;
                buffer.push(Transition {
                    s,
                    a: decision.action.0,
                    r: out.reward,
                    s_next: env.observation(),
                    end: out.done,
                })?;
                if buffer.len() >= tc.batch_size {
                    beta = buffer.beta(env_steps as f64 / budget as f64);
                    let batch = buffer.sample_batch(tc.batch_size, beta, &mut replay_rng)?;
                    let rewards: Vec<f64> = batch.transitions.iter().map(|t| t.r).collect();
                    let ends: Vec<bool> = batch.transitions.iter().map(|t| t.end).collect();
                    let next: Vec<&[f64]> = batch.transitions.iter().map(|t| t.s_next.as_slice()).collect();
                    let targets = td_target(&rewards, &ends, &next, &target, tc.gamma, setup.exec)?;
                    let samples: Vec<Sample<'_>> = batch
                        .transitions
                        .iter()
                        .zip(&targets)
                        .zip(&batch.weights)
                        .map(|((t, &target), &w)| Sample {
                            state: &t.s,
                            action: t.a,
                            target,
                            weight: if tc.importance_weights { w } else { 1.0 },
                        })
                        .collect();
                    let net = Arc::make_mut(&mut online);
                    let td = sgd_update(net, &mut adam, &samples, setup.exec)?;
                    let loss = samples
                        .iter()
                        .zip(&td)
                        .map(|(s, d)| s.weight * d * d)
                        .sum::<f64>()
                        / td.len() as f64;
                    losses.push(loss);
                    buffer.update_priorities(&batch.indices, &td)?;
                    target.soft_update_from(net, tc.tau_soft);
                    updates += 1;
                }
            }
        }

        log.push(EpisodeLog {
            episode,
            scenario_id: env.scenario().id.clone(),
            survival_time: if env.is_done() { env.survival_time() } else { env.state().step },
            total_reward,
            mean_loss: if losses.is_empty() {
                f64::NAN
            } else {
                losses.iter().sum::<f64>() / losses.len() as f64
            },
            epsilon: epsilon(critical_steps),
            unique_actions: used.len(),
            steps: ep_steps,
            critical_steps: ep_critical,
            complete: env.is_done(),
        });
        episode += 1;
    }

    let online = Arc::try_unwrap(online).unwrap_or_else(|a| (*a).clone());
    Ok(TrainOutput {
        checkpoint: Checkpoint {
            online,
            target,
            adam,
        },
        log,
        env_steps,
        critical_steps,
        updates,
        epsilon: epsilon(critical_steps),
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn setup(seed: u64) -> TrainSetup {
        let grid = Arc::new(fixtures::stress_triangle());
        let catalog = Arc::new(ActionCatalog::line_only(&grid));
        TrainSetup {
            grid,
            catalog,
            scenarios: vec![Arc::new(fixtures::stress_ramp_scenario(30))],
            env: EnvConfig {
                horizon: 30,
                ..EnvConfig::default()
            },
            train: TrainConfig {
                batch_size: 4,
                ..TrainConfig::default()
            },
            seed,
            exec: Exec::Parallel,
        }
    }

    #[test]
    fn zero_budget_returns_initial_params() {
        let s = setup(7);
        let out = train(&s, 0).unwrap();
        let init = QNetwork::xavier(s.dims(), &mut rng_stream(7, RngStream::Init));
        assert_eq!(out.checkpoint.online, init);
        assert_eq!(out.checkpoint.target, init);
        assert!(out.log.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let a = train(&setup(3), 200).unwrap();
        let mut seq = setup(3);
        seq.exec = Exec::Sequential;
        let b = train(&seq, 200).unwrap();
        assert_eq!(log_csv(&a.log), log_csv(&b.log));
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert!(a.updates > 0);
        assert_eq!(a.env_steps, 200);
    }

    #[test]
    fn baseline_exploration_rejected() {
        let mut s = setup(1);
        s.train.exploration = PolicyKind::DoNothing;
        assert!(matches!(train(&s, 10), Err(TrainError::Exploration(_))));
    }
}
