//! Episodic environment: scenario-driven stepping, action application,
//! overflow cascades, blackout detection and the per-step reward.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{
    action_cost, check_legal, effective_candidates, margin_reward, predict_action, Action,
    ActionCatalog, ActionId, EffectiveCandidate, Illegal, Prediction,
};
use crate::grid::{Grid, GridError};
use crate::scenario::{Scenario, ScenarioError};
use crate::sensitivity::{SensError, SensitivitySet};
use crate::state::{encode_features, feature_len, risk_margins, FeatureScale, SystemState};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("scenario rejected: {0}")]
    Scenario(#[from] ScenarioError),
    #[error("initial power flow failed: {0}")]
    Initial(GridError),
    #[error("illegal action: {0}")]
    Illegal(Illegal),
    #[error("episode is over")]
    Done,
    #[error("scenario exhausted at step {0}")]
    Exhausted(usize),
    #[error("sensitivity: {0}")]
    Sensitivity(#[from] SensError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Critical threshold on the largest risk margin.
    pub eta: f64,
    /// Calm threshold.
    pub nu: f64,
    /// State window length.
    pub kappa: usize,
    /// Cooldown after an agent switch.
    pub tau_d: u32,
    /// Cooldown after a natural failure.
    pub tau_f: u32,
    /// Consecutive overloaded steps before a line trips.
    pub tau_ov: u32,
    /// Margin at which a line trips immediately.
    pub rho_hard: f64,
    pub mu_line: f64,
    pub mu_gen: f64,
    /// Reward on blackout; `None` means `-L`.
    pub blackout_penalty: Option<f64>,
    pub horizon: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            eta: 0.95,
            nu: 0.0,
            kappa: 6,
            tau_d: 3,
            tau_f: 12,
            tau_ov: 3,
            rho_hard: 2.0,
            mu_line: 0.0,
            mu_gen: 0.0,
            blackout_penalty: None,
            horizon: 8062,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if !(self.nu >= 0.0 && self.nu < self.eta) {
            return bad("need 0 <= nu < eta");
        }
        if !(self.tau_d >= 1 && self.tau_f > self.tau_d) {
            return bad("need tau_f > tau_d >= 1");
        }
        if self.tau_ov < 1 {
            return bad("need tau_ov >= 1");
        }
        if !(self.rho_hard > 1.0) {
            return bad("need rho_hard > 1");
        }
        if self.kappa < 1 {
            return bad("need kappa >= 1");
        }
        if self.horizon < 1 {
            return bad("need horizon >= 1");
        }
        if self.mu_line < 0.0 || self.mu_gen < 0.0 {
            return bad("cost weights must be non-negative");
        }
        if let Some(p) = self.blackout_penalty {
            if !p.is_finite() {
                return bad("blackout penalty must be finite");
            }
        }
        Ok(())
    }

    pub fn penalty(&self, grid: &Grid) -> f64 {
        self.blackout_penalty.unwrap_or(-(grid.n_lines() as f64))
    }

    pub fn feature_scale(&self) -> FeatureScale {
        FeatureScale {
            overflow_cap: self.tau_ov as f64,
            cooldown_cap: self.tau_f as f64,
        }
    }
}

/// True iff the largest margin over operational lines reaches `eta`.
pub fn is_critical(state: &SystemState, config: &EnvConfig) -> bool {
    match state.max_margin() {
        (rho, Some(_)) => rho >= config.eta,
        (_, None) => false,
    }
}

/// True iff the largest margin over operational lines is at most `nu`.
pub fn is_calm(state: &SystemState, config: &EnvConfig) -> bool {
    state.max_margin().0 <= config.nu
}

/// Reward of landing in `state_after` by way of `action`, ignoring blackout.
pub fn compute_reward(
    state_after: &SystemState,
    action: Action,
    config: &EnvConfig,
    grid: &Grid,
    catalog: &ActionCatalog,
) -> f64 {
    margin_reward(&state_after.risk_margin)
        - action_cost(grid, catalog, action, config.mu_line, config.mu_gen)
}

/// Extra per-step information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub action_id: ActionId,
    pub action: Action,
    pub critical_before: bool,
    pub critical_after: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: SystemState,
    pub reward: f64,
    pub done: bool,
    pub blackout: bool,
    /// Ids of lines that failed during this step.
    pub cascade_failures: Vec<usize>,
    pub info: StepInfo,
}

/// One row of the episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Step index of the state the action led to.
    pub step: usize,
    pub action_id: usize,
    pub reward: f64,
    pub max_rho: f64,
    pub failures: Vec<usize>,
    pub blackout: bool,
    pub critical: bool,
}

/// First blackout step in a trace, or `horizon` when none occurred.
pub fn survival_time(trace: &[TraceRow], horizon: usize) -> usize {
    trace
        .iter()
        .find(|r| r.blackout)
        .map(|r| r.step)
        .unwrap_or(horizon)
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,action_id,reward,max_rho,failures,blackout\n");
    for r in trace {
        let failures = r
            .failures
            .iter()
            .map(|f| f.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.action_id, r.reward, r.max_rho, failures, r.blackout
        );
    }
    out
}

/// A single episode over one scenario.
#[derive(Debug, Clone)]
pub struct Environment {
    grid: Arc<Grid>,
    catalog: Arc<ActionCatalog>,
    config: EnvConfig,
    scenario: Arc<Scenario>,
    horizon: usize,
    state: SystemState,
    /// Accumulated redispatch per generator, MW.
    offsets: Vec<f64>,
    window: VecDeque<Vec<f64>>,
    done: bool,
    blackout: bool,
    trace: Vec<TraceRow>,
    sens: Option<SensitivitySet>,
}

impl Environment {
    pub fn reset(
        grid: Arc<Grid>,
        catalog: Arc<ActionCatalog>,
        config: EnvConfig,
        scenario: Arc<Scenario>,
    ) -> Result<Self, EnvError> {
        config.validate()?;
        scenario.validate(&grid)?;
        let horizon = config.horizon.min(scenario.len());
        let offsets = vec![0.0; grid.n_generators()];
        let l = grid.n_lines();
        let row = scenario.step(1).expect("validated scenario is non-empty");
        let gen = dispatch(&grid, &row.gens, &row.loads, &offsets);
        let status = vec![true; l];
        let p = grid.injections(&gen, &row.loads).map_err(EnvError::Initial)?;
        let sol = grid.solve_dc(&p, &status).map_err(EnvError::Initial)?;
        let risk_margin = risk_margins(&grid, &sol.flows, &status);
        let state = SystemState {
            step: 1,
            gen_output: gen,
            load_demand: row.loads.clone(),
            line_flow: sol.flows,
            risk_margin,
            line_status: status,
            overflow_steps: vec![0; l],
            cooldown: vec![0; l],
        };
        let o = feature_len(&grid);
        let mut window: VecDeque<Vec<f64>> = (0..config.kappa).map(|_| vec![0.0; o]).collect();
        window.pop_front();
        window.push_back(encode_features(&grid, &state, config.feature_scale()));
        Ok(Self {
            grid,
            catalog,
            config,
            scenario,
            horizon,
            state,
            offsets,
            window,
            done: false,
            blackout: false,
            trace: Vec::new(),
            sens: None,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn catalog(&self) -> &Arc<ActionCatalog> {
        &self.catalog
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn blackout(&self) -> bool {
        self.blackout
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn is_critical(&self) -> bool {
        is_critical(&self.state, &self.config)
    }

    pub fn is_calm(&self) -> bool {
        is_calm(&self.state, &self.config)
    }

    pub fn survival_time(&self) -> usize {
        survival_time(&self.trace, self.horizon)
    }

    pub fn window(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.window.iter()
    }

    /// The state window flattened oldest first, length `kappa * O`.
    pub fn observation(&self) -> Vec<f64> {
        self.window.iter().flatten().copied().collect()
    }

    /// PTDF/LODF for the current topology, recomputed when it changes.
    pub fn sensitivity(&mut self) -> Result<&SensitivitySet, SensError> {
        let stale = match &self.sens {
            Some(s) => s.check_topology(&self.state.line_status).is_err(),
            None => true,
        };
        if stale {
            self.sens = Some(SensitivitySet::compute(&self.grid, &self.state.line_status)?);
        }
        Ok(self.sens.as_ref().expect("just filled"))
    }

    /// One-step reward estimate of `id` under the current topology.
    pub fn reward_estimate(&mut self, id: ActionId) -> Result<f64, SensError> {
        self.sensitivity()?;
        let sens = self.sens.as_ref().expect("filled above");
        Ok(crate::actions::reward_estimate(
            id,
            &self.state,
            &self.grid,
            sens,
            &self.catalog,
            self.config.mu_line,
            self.config.mu_gen,
        ))
    }

    pub fn effective_candidates(&mut self) -> Result<Vec<EffectiveCandidate>, SensError> {
        self.sensitivity()?;
        let sens = self.sens.as_ref().expect("filled above");
        effective_candidates(&self.state, &self.grid, sens, &self.catalog)
    }

    pub fn effective_line_set(&mut self) -> Result<Vec<ActionId>, SensError> {
        Ok(self.effective_candidates()?.into_iter().map(|c| c.id).collect())
    }

    /// Predicted flows and margins after `action`, without stepping.
    pub fn predict(&mut self, action: Action) -> Result<Prediction, SensError> {
        self.sensitivity()?;
        let sens = self.sens.as_ref().expect("filled above");
        predict_action(action, &self.state, &self.grid, sens, &self.catalog)
    }

    pub fn legal_actions(&self) -> Vec<ActionId> {
        crate::actions::legal_actions(&self.state, &self.catalog, &self.grid)
    }

    pub fn check_legal(&self, id: ActionId) -> Result<Action, Illegal> {
        check_legal(id, &self.state, &self.catalog, &self.grid)
    }

    pub fn trace_csv(&self) -> String {
        trace_csv(&self.trace)
    }

    pub fn step(&mut self, id: ActionId) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::Done);
        }
        let action = self.check_legal(id).map_err(EnvError::Illegal)?;
        let n = self.state.step + 1;
        let row = self.scenario.step(n).ok_or(EnvError::Exhausted(n))?.clone();
        let critical_before = self.is_critical();
        let grid = Arc::clone(&self.grid);
        let l = grid.n_lines();

        let mut status = self.state.line_status.clone();
        let mut cooldown = self.state.cooldown.clone();
        let mut fresh = vec![false; l];
        match action {
            Action::DoNothing => {}
            Action::Remove(k) | Action::Reconnect(k) => {
                assert_eq!(cooldown[k], 0, "switching a line on cooldown");
                status[k] = matches!(action, Action::Reconnect(_));
                cooldown[k] = self.config.tau_d;
                fresh[k] = true;
            }
            Action::Redispatch(c) => {
                for (j, mw) in self.catalog.combo_legs(c) {
                    self.offsets[j] += mw;
                }
            }
        }

        let gen = dispatch(&grid, &row.gens, &row.loads, &self.offsets);
        let p = grid.injections(&gen, &row.loads).expect("validated scenario");
        let mut overflow = self.state.overflow_steps.clone();
        let mut failures = Vec::new();
        let mut blackout = false;
        let mut flows = vec![0.0; l];

        for _ in 0..=l {
            if load_islanded(&grid, &status) {
                blackout = true;
                break;
            }
            let sol = match grid.solve_dc(&p, &status) {
                Ok(s) => s,
                Err(_) => {
                    blackout = true;
                    break;
                }
            };
            let rho = risk_margins(&grid, &sol.flows, &status);
            let mut tentative = vec![0u32; l];
            let mut tripped = false;
            for k in 0..l {
                if !status[k] {
                    continue;
                }
                tentative[k] = if rho[k] >= 1.0 { overflow[k] + 1 } else { 0 };
                if rho[k] >= self.config.rho_hard || tentative[k] >= self.config.tau_ov {
                    status[k] = false;
                    cooldown[k] = self.config.tau_f;
                    fresh[k] = true;
                    tentative[k] = 0;
                    failures.push(grid.lines[k].id);
                    tripped = true;
                }
            }
            if !tripped {
                for k in 0..l {
                    overflow[k] = if status[k] { tentative[k] } else { 0 };
                }
                flows = sol.flows;
                break;
            }
            for k in 0..l {
                if !status[k] {
                    overflow[k] = 0;
                }
            }
        }
        if !blackout {
            let slack = &grid.generators[grid.slack_generator()];
            let out = gen[grid.slack_generator()];
            if out < slack.p_min || out > slack.p_max {
                blackout = true;
            }
        }
        if blackout {
            flows = vec![0.0; l];
        }

        for k in 0..l {
            if !fresh[k] {
                cooldown[k] = cooldown[k].saturating_sub(1);
            }
        }
        let risk_margin = if blackout {
            vec![0.0; l]
        } else {
            risk_margins(&grid, &flows, &status)
        };
        let next = SystemState {
            step: n,
            gen_output: gen,
            load_demand: row.loads,
            line_flow: flows,
            risk_margin,
            line_status: status,
            overflow_steps: overflow,
            cooldown,
        };
        let reward = if blackout {
            self.config.penalty(&grid)
        } else {
            compute_reward(&next, action, &self.config, &grid, &self.catalog)
        };
        let critical_after = is_critical(&next, &self.config);
        self.window.pop_front();
        self.window
            .push_back(encode_features(&grid, &next, self.config.feature_scale()));
        self.state = next;
        self.blackout = blackout;
        self.done = blackout || n >= self.horizon;
        self.trace.push(TraceRow {
            step: n,
            action_id: id.0,
            reward,
            max_rho: self.state.max_margin().0,
            failures: failures.clone(),
            blackout,
            critical: critical_before,
        });
        Ok(StepOutcome {
            next_state: self.state.clone(),
            reward,
            done: self.done,
            blackout,
            cascade_failures: failures,
            info: StepInfo {
                action_id: id,
                action,
                critical_before,
                critical_after,
            },
        })
    }
}

/// Generator outputs for one step: non-slack units follow their setpoint
/// plus accumulated redispatch, clamped to their bounds; the slack unit
/// covers the remainder of the demand.
fn dispatch(grid: &Grid, setpoints: &[f64], loads: &[f64], offsets: &[f64]) -> Vec<f64> {
    let slack = grid.slack_generator();
    let mut out: Vec<f64> = grid
        .generators
        .iter()
        .enumerate()
        .map(|(j, g)| {
            if j == slack {
                0.0
            } else {
                let off = if g.dispatchable { offsets[j] } else { 0.0 };
                (setpoints[j] + off).clamp(g.p_min, g.p_max)
            }
        })
        .collect();
    let demand: f64 = loads.iter().sum();
    let others: f64 = out.iter().sum();
    out[slack] = demand - others;
    out
}

fn load_islanded(grid: &Grid, status: &[bool]) -> bool {
    let island = grid.slack_island(status);
    grid.loads
        .iter()
        .any(|d| !island[grid.bus_index(d.bus).expect("validated grid")])
}
