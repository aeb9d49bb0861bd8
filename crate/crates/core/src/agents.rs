//! Decision rules: baselines, sensitivity-guided exploration, Q-guided
//! exploitation and the exploration schedule.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{Action, ActionId};
use crate::dqn::{NetError, QNetwork};
use crate::env::Environment;
use crate::sensitivity::SensError;

pub const EPS_START: f64 = 0.99;
pub const EPS_END: f64 = 0.05;
pub const EPS_DECAY_STEPS: f64 = 26_000.0;
pub const TOP_K: usize = 5;

/// `max(0.05, 0.99 exp(-n / λ))` with `λ = 26000 / ln(0.99 / 0.05)`.
pub fn epsilon(n: u64) -> f64 {
    let lambda = EPS_DECAY_STEPS / (EPS_START / EPS_END).ln();
    (EPS_START * (-(n as f64) / lambda).exp()).max(EPS_END)
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("sensitivity: {0}")]
    Sensitivity(#[from] SensError),
    #[error("network: {0}")]
    Network(#[from] NetError),
    #[error("policy {0} needs a trained network")]
    MissingNetwork(PolicyKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    DoNothing,
    Reconnection,
    RandomExplore,
    PhysicsGuided,
}

impl PolicyKind {
    pub fn is_trained(self) -> bool {
        matches!(self, PolicyKind::RandomExplore | PolicyKind::PhysicsGuided)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::DoNothing => "do-nothing",
            PolicyKind::Reconnection => "reconnection",
            PolicyKind::RandomExplore => "random-explore",
            PolicyKind::PhysicsGuided => "physics-guided",
        })
    }
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "do-nothing" => Ok(PolicyKind::DoNothing),
            "reconnection" => Ok(PolicyKind::Reconnection),
            "random-explore" => Ok(PolicyKind::RandomExplore),
            "physics-guided" => Ok(PolicyKind::PhysicsGuided),
            other => Err(format!(
                "unknown policy `{other}` (expected do-nothing, reconnection, random-explore or physics-guided)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub kind: PolicyKind,
    pub network: Option<Arc<QNetwork>>,
}

/// Which branch produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Baseline,
    NonCritical,
    Explore,
    Exploit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub action: ActionId,
    pub critical: bool,
    pub branch: Branch,
}

fn estimate(env: &mut Environment, id: ActionId) -> Result<f64, SensError> {
    env.reward_estimate(id)
}

/// Highest estimate among `ids` (strictly greater wins, so the earliest id
/// keeps ties); `None` when empty or every estimate is `-inf`.
fn best_by_estimate(env: &mut Environment, ids: &[ActionId]) -> Result<Option<ActionId>, SensError> {
    let mut best: Option<(ActionId, f64)> = None;
    for &id in ids {
        let r = estimate(env, id)?;
        if r > best.map_or(f64::NEG_INFINITY, |b| b.1) {
            best = Some((id, r));
        }
    }
    Ok(best.map(|b| b.0))
}

/// Reconnects the legal disconnected line with the best estimate, else
/// does nothing.
pub fn reconnect_or_nothing(env: &mut Environment) -> Result<ActionId, SensError> {
    let catalog = Arc::clone(env.catalog());
    let st = env.state();
    let ids: Vec<ActionId> = (0..st.line_status.len())
        .filter(|&l| !st.line_status[l] && st.cooldown[l] == 0)
        .filter_map(|l| catalog.encode(Action::Reconnect(l)))
        .collect();
    Ok(best_by_estimate(env, &ids)?.unwrap_or(ActionId(0)))
}

/// Candidates for sensitivity-guided exploration: the effective line set
/// and every legal redispatch combo, ascending by id.
pub fn exploration_set(env: &mut Environment) -> Result<Vec<ActionId>, SensError> {
    let catalog = Arc::clone(env.catalog());
    let mut ids = env.effective_line_set()?;
    ids.extend(
        env.legal_actions()
            .into_iter()
            .filter(|&id| id.0 >= catalog.n_line_actions()),
    );
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

/// Best-estimate member of [`exploration_set`], DoNothing if it is empty.
pub fn physics_explore(env: &mut Environment) -> Result<ActionId, SensError> {
    let ids = exploration_set(env)?;
    Ok(best_by_estimate(env, &ids)?.unwrap_or(ActionId(0)))
}

/// Uniform choice over all legal actions.
pub fn random_explore(env: &Environment, rng: &mut impl Rng) -> ActionId {
    let legal = env.legal_actions();
    legal[rng.random_range(0..legal.len())]
}

/// One of the top legal actions by Q, with its estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub action_id: ActionId,
    pub q: f64,
    pub reward_estimate: f64,
}

/// The `TOP_K` legal actions with the highest Q, highest first; equal Q
/// values keep ascending id order.
pub fn top_q_actions(env: &mut Environment, net: &QNetwork) -> Result<Vec<Suggestion>, AgentError> {
    let q = net.q_values(&env.observation())?;
    let mut legal = env.legal_actions();
    legal.sort_by(|a, b| q[b.0].total_cmp(&q[a.0]));
    legal.truncate(TOP_K);
    let mut out = Vec::with_capacity(legal.len());
    for id in legal {
        out.push(Suggestion {
            action_id: id,
            q: q[id.0],
            reward_estimate: estimate(env, id)?,
        });
    }
    Ok(out)
}

/// Among the top-Q legal actions, the one with the best estimate; lowest id
/// on ties. Falls back to the highest-Q action if no estimate is finite.
pub fn q_exploit(env: &mut Environment, net: &QNetwork) -> Result<ActionId, AgentError> {
    let top = top_q_actions(env, net)?;
    let mut by_id = top.clone();
    by_id.sort_by_key(|s| s.action_id);
    let mut best: Option<Suggestion> = None;
    for s in by_id {
        if s.reward_estimate > best.map_or(f64::NEG_INFINITY, |b| b.reward_estimate) {
            best = Some(s);
        }
    }
    Ok(best.or(top.first().copied()).map_or(ActionId(0), |s| s.action_id))
}

impl Policy {
    pub fn baseline(kind: PolicyKind) -> Self {
        Self { kind, network: None }
    }

    pub fn trained(kind: PolicyKind, network: Arc<QNetwork>) -> Self {
        Self {
            kind,
            network: Some(network),
        }
    }

    /// Chooses an action for the current state. `eps` is the exploration
    /// probability for trained kinds; randomness is drawn only for those,
    /// and only in critical states.
    pub fn act(&self, env: &mut Environment, eps: f64, rng: &mut impl Rng) -> Result<Decision, AgentError> {
        let critical = env.is_critical();
        let (action, branch) = match self.kind {
            PolicyKind::DoNothing => (ActionId(0), Branch::Baseline),
            PolicyKind::Reconnection => (reconnect_or_nothing(env)?, Branch::Baseline),
            _ if !critical => (reconnect_or_nothing(env)?, Branch::NonCritical),
            kind => {
                if rng.random::<f64>() < eps {
                    let a = match kind {
                        PolicyKind::PhysicsGuided => {
                            let a = physics_explore(env)?;
                            debug_assert!(a.0 == 0 || exploration_set(env)?.contains(&a));
                            a
                        }
                        _ => random_explore(env, rng),
                    };
                    (a, Branch::Explore)
                } else {
                    let net = self
                        .network
                        .as_deref()
                        .ok_or(AgentError::MissingNetwork(kind))?;
                    (q_exploit(env, net)?, Branch::Exploit)
                }
            }
        };
        Ok(Decision {
            action,
            critical,
            branch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::ActionCatalog;
    use crate::dqn::Dims;
    use crate::env::EnvConfig;
    use crate::fixtures;
    use crate::scenario::Scenario;
    use crate::state::feature_len;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env(grid: crate::grid::Grid, scenario: Scenario) -> Environment {
        let catalog = Arc::new(ActionCatalog::line_only(&grid));
        Environment::reset(Arc::new(grid), catalog, EnvConfig::default(), Arc::new(scenario)).unwrap()
    }

    /// Triangle with limits (0.5, 1.1, 1.1): line 1-2 at margin 2/3, so
    /// critical with eta = 0.6.
    fn overload_env() -> Environment {
        let g = fixtures::triangle_with_limits([0.5, 1.1, 1.1]);
        let catalog = Arc::new(ActionCatalog::line_only(&g));
        let cfg = EnvConfig {
            eta: 0.6,
            ..EnvConfig::default()
        };
        Environment::reset(Arc::new(g), catalog, cfg, Arc::new(fixtures::flat_triangle_scenario(5))).unwrap()
    }

    #[test]
    fn epsilon_schedule() {
        assert_eq!(epsilon(0), 0.99);
        assert!((epsilon(26_000) - 0.05).abs() < 1e-6);
        assert_eq!(epsilon(1_000_000), 0.05);
        let lambda = 26_000.0 / (0.99f64 / 0.05).ln();
        assert!((lambda - 8708.2).abs() < 0.1);
        let mut prev = epsilon(0);
        for n in (0..40_000).step_by(97) {
            let e = epsilon(n);
            assert!(e <= prev && (0.05..=0.99).contains(&e));
            prev = e;
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for k in [
            PolicyKind::DoNothing,
            PolicyKind::Reconnection,
            PolicyKind::RandomExplore,
            PolicyKind::PhysicsGuided,
        ] {
            assert_eq!(k.to_string().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("greedy".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn baselines() {
        let mut e = env(fixtures::triangle_with_limits([2.0; 3]), fixtures::flat_triangle_scenario(10));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dn = Policy::baseline(PolicyKind::DoNothing);
        assert_eq!(dn.act(&mut e, 1.0, &mut rng).unwrap().action, ActionId(0));
        e.step(ActionId(3)).unwrap();
        for _ in 0..3 {
            e.step(ActionId(0)).unwrap();
        }
        assert_eq!(e.state().cooldown[2], 0);
        let rc = Policy::baseline(PolicyKind::Reconnection);
        assert_eq!(rc.act(&mut e, 1.0, &mut rng).unwrap().action, ActionId(6));
    }

    #[test]
    fn physics_guided_explore_removes_line_1_3() {
        let mut e = overload_env();
        assert!(e.is_critical());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Policy::baseline(PolicyKind::PhysicsGuided);
        let d = p.act(&mut e, 1.0, &mut rng).unwrap();
        assert_eq!(d.branch, Branch::Explore);
        assert_eq!(d.action, ActionId(3));
    }

    #[test]
    fn empty_exploration_set_does_nothing() {
        let mut e = overload_env();
        e.step(ActionId(3)).unwrap();
        // line 1-3 out on cooldown; the rest are either the loaded line or
        // bridges, and there are no generator actions
        assert!(exploration_set(&mut e).unwrap().is_empty());
        assert_eq!(physics_explore(&mut e).unwrap(), ActionId(0));
    }

    #[test]
    fn zero_network_exploit_picks_by_estimate() {
        let mut e = overload_env();
        let g = e.grid().clone();
        let dims = Dims {
            kappa: 6,
            features: feature_len(&g),
            actions: e.catalog().len(),
        };
        let net = QNetwork::zeros(dims);
        let top = top_q_actions(&mut e, &net).unwrap();
        let ids: Vec<usize> = top.iter().map(|s| s.action_id.0).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
        // removing 1-2 or 1-3 both leave one line at 1/1.1; the lower id wins
        assert_eq!(top[1].reward_estimate, top[3].reward_estimate);
        assert_eq!(q_exploit(&mut e, &net).unwrap(), ActionId(1));
        let p = Policy::trained(PolicyKind::PhysicsGuided, Arc::new(net));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = p.act(&mut e, 0.0, &mut rng).unwrap();
        assert_eq!((d.action, d.branch), (ActionId(1), Branch::Exploit));
    }

    #[test]
    fn exploit_prefers_best_estimate_among_top_q() {
        // stress triangle at full load: removing 1-3 is the only removal
        // that keeps every line within its limit
        let g = fixtures::stress_triangle();
        let catalog = Arc::new(ActionCatalog::line_only(&g));
        let sc = Scenario::new("full", vec![(vec![1.0, 2.5], vec![0.5, 3.0]); 4]);
        let mut e = Environment::reset(Arc::new(g.clone()), catalog, EnvConfig::default(), Arc::new(sc)).unwrap();
        let dims = Dims {
            kappa: 6,
            features: feature_len(&g),
            actions: 7,
        };
        let net = QNetwork::seeded(dims, 42);
        assert_eq!(q_exploit(&mut e, &net).unwrap(), ActionId(3));
    }

    #[test]
    fn exploit_without_network_is_an_error() {
        let mut e = overload_env();
        let p = Policy::baseline(PolicyKind::PhysicsGuided);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(p.act(&mut e, 0.0, &mut rng), Err(AgentError::MissingNetwork(_))));
    }

    #[test]
    fn random_explore_stays_legal() {
        let mut e = overload_env();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let legal = e.legal_actions();
        for _ in 0..50 {
            assert!(legal.contains(&random_explore(&e, &mut rng)));
        }
        let p = Policy::baseline(PolicyKind::RandomExplore);
        let d = p.act(&mut e, 1.0, &mut rng).unwrap();
        assert!(legal.contains(&d.action));
    }
}
