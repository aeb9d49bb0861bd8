//! The hybrid action space: line switching plus zero-sum generator
//! redispatch combos, legality filtering, LODF screening of removal
//! candidates and the one-step reward estimate used to rank actions.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::sensitivity::{predict_reconnect, SensError, SensitivitySet};
use crate::state::{max_margin, risk_margins, SystemState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionError {
    #[error("redispatch needs at least two generators, got {0}")]
    TooFewGenerators(usize),
    #[error("redispatch step {delta} MW exceeds the ramp limit {ramp} MW of generator index {gen}")]
    RampViolation { gen: usize, delta: f64, ramp: f64 },
    #[error("redispatch step must be positive, got {0}")]
    BadDelta(f64),
}

/// Integer handle of an action in an [`ActionCatalog`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Decoded action. Line payloads are line indices; the redispatch payload
/// indexes [`ActionCatalog::combos`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "snake_case")]
pub enum Action {
    DoNothing,
    Remove(usize),
    Reconnect(usize),
    Redispatch(usize),
}

/// Coarse action category used for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    DoNothing,
    Reconnect,
    Removal,
    Redispatch,
}

impl Action {
    pub fn kind(&self) -> ActionKind {
        match self {
            Action::DoNothing => ActionKind::DoNothing,
            Action::Remove(_) => ActionKind::Removal,
            Action::Reconnect(_) => ActionKind::Reconnect,
            Action::Redispatch(_) => ActionKind::Redispatch,
        }
    }

    pub fn switched_line(&self) -> Option<usize> {
        match *self {
            Action::Remove(l) | Action::Reconnect(l) => Some(l),
            _ => None,
        }
    }
}

/// DoNothing, then Remove for every line, then Reconnect for every line.
pub fn enumerate_line_actions(grid: &Grid) -> Vec<Action> {
    let l = grid.n_lines();
    std::iter::once(Action::DoNothing)
        .chain((0..l).map(Action::Remove))
        .chain((0..l).map(Action::Reconnect))
        .collect()
}

/// Every vector in `{-1, 0, +1}^k` with zero sum except the all-zero one,
/// in lexicographic order with `-1 < 0 < +1`. Each entry scales `delta`.
pub fn enumerate_gen_combos(ramp_limits: &[f64], delta: f64) -> Result<Vec<Vec<i8>>, ActionError> {
    let k = ramp_limits.len();
    if k < 2 {
        return Err(ActionError::TooFewGenerators(k));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(ActionError::BadDelta(delta));
    }
    if let Some((gen, &ramp)) = ramp_limits.iter().enumerate().find(|(_, &r)| delta > r) {
        return Err(ActionError::RampViolation { gen, delta, ramp });
    }
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(k: usize, sum: i32, cur: &mut Vec<i8>, out: &mut Vec<Vec<i8>>) {
        let left = (k - cur.len()) as i32;
        if sum.abs() > left {
            return;
        }
        if left == 0 {
            if cur.iter().any(|&s| s != 0) {
                out.push(cur.clone());
            }
            return;
        }
        for s in [-1i8, 0, 1] {
            cur.push(s);
            rec(k, sum + s as i32, cur, out);
            cur.pop();
        }
    }
    rec(k, 0, &mut cur, &mut out);
    Ok(out)
}

/// Number of non-trivial zero-sum combos over `k` generators, by dynamic
/// programming over the running sum.
pub fn gen_combo_count(k: usize) -> usize {
    // ways[s + k] = number of prefixes with running sum s
    let mut ways = vec![0usize; 2 * k + 1];
    ways[k] = 1;
    for _ in 0..k {
        let mut next = vec![0usize; 2 * k + 1];
        for (i, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for d in [-1i64, 0, 1] {
                let j = i as i64 + d;
                if (0..=2 * k as i64).contains(&j) {
                    next[j as usize] += w;
                }
            }
        }
        ways = next;
    }
    ways[k] - 1
}

/// Which generators take part in redispatch, and by how much.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenActionSpec {
    /// Number of dispatchable non-slack generators (largest ramp first).
    /// Values below 2 disable redispatch.
    pub count: usize,
    /// Step size in MW; defaults to the smallest ramp among the selected.
    pub delta: Option<f64>,
}

/// Immutable id ↔ action mapping for one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionCatalog {
    n_lines: usize,
    /// Generator indices taking part in redispatch, ascending.
    gen_subset: Vec<usize>,
    delta: f64,
    combos: Vec<Vec<i8>>,
}

impl ActionCatalog {
    pub fn new(grid: &Grid, spec: GenActionSpec) -> Result<Self, ActionError> {
        let n_lines = grid.n_lines();
        if spec.count < 2 {
            return Ok(Self::line_only(grid));
        }
        let slack = grid.slack_generator();
        let mut eligible: Vec<usize> = (0..grid.n_generators())
            .filter(|&j| j != slack && grid.generators[j].dispatchable)
            .collect();
        if eligible.len() < spec.count {
            return Err(ActionError::TooFewGenerators(eligible.len()));
        }
        // largest ramp first, lower index on ties
        eligible.sort_by(|&a, &b| {
            grid.generators[b]
                .ramp_limit
                .total_cmp(&grid.generators[a].ramp_limit)
                .then(a.cmp(&b))
        });
        let mut gen_subset = eligible[..spec.count].to_vec();
        gen_subset.sort_unstable();
        let ramps: Vec<f64> = gen_subset.iter().map(|&j| grid.generators[j].ramp_limit).collect();
        let delta = spec
            .delta
            .unwrap_or_else(|| ramps.iter().copied().fold(f64::INFINITY, f64::min));
        let combos = enumerate_gen_combos(&ramps, delta).map_err(|e| match e {
            ActionError::RampViolation { gen, delta, ramp } => ActionError::RampViolation {
                gen: gen_subset[gen],
                delta,
                ramp,
            },
            other => other,
        })?;
        Ok(Self {
            n_lines,
            gen_subset,
            delta,
            combos,
        })
    }

    pub fn line_only(grid: &Grid) -> Self {
        Self {
            n_lines: grid.n_lines(),
            gen_subset: Vec::new(),
            delta: 0.0,
            combos: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.n_line_actions() + self.combos.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_line_actions(&self) -> usize {
        2 * self.n_lines + 1
    }

    pub fn n_gen_actions(&self) -> usize {
        self.combos.len()
    }

    pub fn n_lines(&self) -> usize {
        self.n_lines
    }

    pub fn gen_subset(&self) -> &[usize] {
        &self.gen_subset
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn combos(&self) -> &[Vec<i8>] {
        &self.combos
    }

    pub fn decode(&self, id: ActionId) -> Option<Action> {
        let l = self.n_lines;
        match id.0 {
            0 => Some(Action::DoNothing),
            i if i <= l => Some(Action::Remove(i - 1)),
            i if i <= 2 * l => Some(Action::Reconnect(i - l - 1)),
            i if i < self.len() => Some(Action::Redispatch(i - 2 * l - 1)),
            _ => None,
        }
    }

    pub fn encode(&self, action: Action) -> Option<ActionId> {
        let l = self.n_lines;
        let id = match action {
            Action::DoNothing => 0,
            Action::Remove(k) if k < l => k + 1,
            Action::Reconnect(k) if k < l => l + k + 1,
            Action::Redispatch(c) if c < self.combos.len() => 2 * l + 1 + c,
            _ => return None,
        };
        Some(ActionId(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ActionId> {
        (0..self.len()).map(ActionId)
    }

    pub fn gen_action_ids(&self) -> impl Iterator<Item = ActionId> {
        (self.n_line_actions()..self.len()).map(ActionId)
    }

    /// `(generator index, MW change)` for each leg of a combo.
    pub fn combo_legs(&self, combo: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.gen_subset
            .iter()
            .zip(&self.combos[combo])
            .filter(|(_, &s)| s != 0)
            .map(move |(&j, &s)| (j, s as f64 * self.delta))
    }

    /// Redispatch expressed as per-bus injection change.
    pub fn combo_bus_delta(&self, grid: &Grid, combo: usize) -> Vec<f64> {
        let mut d = vec![0.0; grid.n_buses()];
        for (j, mw) in self.combo_legs(combo) {
            let bus = grid.bus_index(grid.generators[j].bus).expect("validated grid");
            d[bus] += mw;
        }
        d
    }

    pub fn describe(&self, grid: &Grid, id: ActionId) -> String {
        match self.decode(id) {
            None => format!("unknown action {id}"),
            Some(a) => describe_action(grid, self, a),
        }
    }

    /// `actions.csv` manifest: `id,kind,detail`.
    pub fn manifest_csv(&self, grid: &Grid) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "kind", "detail"]).expect("in-memory write");
        for entry in self.manifest(grid) {
            w.write_record([entry.id.to_string(), entry.kind, entry.detail])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn manifest(&self, grid: &Grid) -> Vec<ManifestEntry> {
        self.ids()
            .map(|id| {
                let a = self.decode(id).expect("id in range");
                let kind = match a {
                    Action::DoNothing => "do_nothing",
                    Action::Remove(_) => "remove",
                    Action::Reconnect(_) => "reconnect",
                    Action::Redispatch(_) => "redispatch",
                };
                let detail = match a {
                    Action::DoNothing => String::new(),
                    Action::Remove(l) | Action::Reconnect(l) => line_label(grid, l),
                    Action::Redispatch(c) => self
                        .combo_legs(c)
                        .map(|(j, mw)| format!("gen {}:{:+}", grid.generators[j].id, mw))
                        .collect::<Vec<_>>()
                        .join(";"),
                };
                ManifestEntry {
                    id: id.0,
                    kind: kind.to_string(),
                    detail,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub kind: String,
    pub detail: String,
}

fn line_label(grid: &Grid, l: usize) -> String {
    let line = &grid.lines[l];
    format!("line {} ({}-{})", line.id, line.from_bus, line.to_bus)
}

pub fn describe_action(grid: &Grid, catalog: &ActionCatalog, a: Action) -> String {
    match a {
        Action::DoNothing => "do-nothing".to_string(),
        Action::Remove(l) => format!("remove {}", line_label(grid, l)),
        Action::Reconnect(l) => format!("reconnect {}", line_label(grid, l)),
        Action::Redispatch(c) => format!(
            "redispatch {}",
            catalog
                .combo_legs(c)
                .map(|(j, mw)| format!("gen {} {:+}", grid.generators[j].id, mw))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

/// Why an action is not currently allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Illegal {
    UnknownAction { id: usize },
    LineCooldown { line: usize, remaining: u32 },
    AlreadyDisconnected { line: usize },
    AlreadyConnected { line: usize },
    GeneratorBound { generator: usize, output: f64, change: f64 },
}

impl fmt::Display for Illegal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Illegal::UnknownAction { id } => write!(f, "action {id} does not exist"),
            Illegal::LineCooldown { line, remaining } => {
                write!(f, "line index {line} is on cooldown for {remaining} more steps")
            }
            Illegal::AlreadyDisconnected { line } => write!(f, "line index {line} is already disconnected"),
            Illegal::AlreadyConnected { line } => write!(f, "line index {line} is already connected"),
            Illegal::GeneratorBound { generator, output, change } => write!(
                f,
                "generator index {generator} at {output} MW cannot move by {change:+} MW within its bounds"
            ),
        }
    }
}

/// Checks one action against cooldowns, line status and generator bounds.
pub fn check_legal(
    id: ActionId,
    state: &SystemState,
    catalog: &ActionCatalog,
    grid: &Grid,
) -> Result<Action, Illegal> {
    let a = catalog
        .decode(id)
        .ok_or(Illegal::UnknownAction { id: id.0 })?;
    match a {
        Action::DoNothing => {}
        Action::Remove(l) | Action::Reconnect(l) => {
            let on = state.line_status[l];
            match (a, on) {
                (Action::Remove(_), false) => return Err(Illegal::AlreadyDisconnected { line: l }),
                (Action::Reconnect(_), true) => return Err(Illegal::AlreadyConnected { line: l }),
                _ => {}
            }
            if state.cooldown[l] > 0 {
                return Err(Illegal::LineCooldown {
                    line: l,
                    remaining: state.cooldown[l],
                });
            }
        }
        Action::Redispatch(c) => {
            for (j, mw) in catalog.combo_legs(c) {
                let g = &grid.generators[j];
                let out = state.gen_output[j] + mw;
                if out < g.p_min || out > g.p_max {
                    return Err(Illegal::GeneratorBound {
                        generator: j,
                        output: state.gen_output[j],
                        change: mw,
                    });
                }
            }
        }
    }
    Ok(a)
}

/// Ids of all currently legal actions, ascending. DoNothing is always legal.
pub fn legal_actions(state: &SystemState, catalog: &ActionCatalog, grid: &Grid) -> Vec<ActionId> {
    catalog
        .ids()
        .filter(|&id| check_legal(id, state, catalog, grid).is_ok())
        .collect()
}

/// Removal and reconnection candidates screened with the LODF: removals of
/// lines other than the most loaded one that bring it back within its limit
/// without pushing any other operational line over its own, plus every
/// legal reconnection. Bridges are never candidates.
pub fn effective_line_set(
    state: &SystemState,
    grid: &Grid,
    sens: &SensitivitySet,
    catalog: &ActionCatalog,
) -> Result<Vec<ActionId>, SensError> {
    Ok(effective_candidates(state, grid, sens, catalog)?
        .into_iter()
        .map(|c| c.id)
        .collect())
}

/// A member of the effective set together with the predicted margin of the
/// currently most loaded line after applying it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCandidate {
    pub id: ActionId,
    pub predicted_max_line_margin: Option<f64>,
}

pub fn effective_candidates(
    state: &SystemState,
    grid: &Grid,
    sens: &SensitivitySet,
    catalog: &ActionCatalog,
) -> Result<Vec<EffectiveCandidate>, SensError> {
    sens.check_topology(&state.line_status)?;
    let status = &state.line_status;
    let flows = &state.line_flow;
    let (_, l_max) = state.max_margin();
    let mut out = Vec::new();

    if let Some(l_max) = l_max {
        let limit_max = grid.lines[l_max].flow_limit;
        let candidates = (0..grid.n_lines())
            .filter(|&k| status[k] && state.cooldown[k] == 0 && k != l_max && !sens.is_bridge(k));
        'cand: for k in candidates {
            let f_max_after = flows[l_max] + sens.lodf(l_max, k)? * flows[k];
            if f_max_after.abs() > limit_max {
                continue;
            }
            for l in 0..grid.n_lines() {
                if l == l_max || !status[l] {
                    continue;
                }
                let after = if l == k { 0.0 } else { flows[l] + sens.lodf(l, k)? * flows[k] };
                if after.abs() > grid.lines[l].flow_limit {
                    continue 'cand;
                }
            }
            out.push(EffectiveCandidate {
                id: catalog.encode(Action::Remove(k)).expect("line in range"),
                predicted_max_line_margin: Some(f_max_after.abs() / limit_max),
            });
        }
    }

    let injections = state.injections(grid);
    for l in 0..grid.n_lines() {
        if !status[l] && state.cooldown[l] == 0 {
            let margin = l_max.and_then(|m| {
                predict_reconnect(grid, status, &injections, l)
                    .ok()
                    .map(|f| f[m].abs() / grid.lines[m].flow_limit)
            });
            out.push(EffectiveCandidate {
                id: catalog.encode(Action::Reconnect(l)).expect("line in range"),
                predicted_max_line_margin: margin,
            });
        }
    }
    Ok(out)
}

/// `Σ (1 - ρ²)` over all lines; disconnected lines contribute 1.
pub fn margin_reward(margins: &[f64]) -> f64 {
    margins.iter().map(|r| 1.0 - r * r).sum()
}

/// Weighted cost of executing `action`: `μ_gen Σ c_j |ΔG_j| + μ_line c_ℓ`.
pub fn action_cost(grid: &Grid, catalog: &ActionCatalog, action: Action, mu_line: f64, mu_gen: f64) -> f64 {
    match action {
        Action::DoNothing => 0.0,
        Action::Remove(l) | Action::Reconnect(l) => mu_line * grid.lines[l].switch_cost,
        Action::Redispatch(c) => {
            mu_gen
                * catalog
                    .combo_legs(c)
                    .map(|(j, mw)| grid.generators[j].cost_per_mw * mw.abs())
                    .sum::<f64>()
        }
    }
}

/// Predicted operating point after an action, from the sensitivity models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub flows: Vec<f64>,
    pub status: Vec<bool>,
    pub margins: Vec<f64>,
}

pub fn predict_action(
    action: Action,
    state: &SystemState,
    grid: &Grid,
    sens: &SensitivitySet,
    catalog: &ActionCatalog,
) -> Result<Prediction, SensError> {
    sens.check_topology(&state.line_status)?;
    let mut status = state.line_status.clone();
    let flows = match action {
        Action::DoNothing => state.line_flow.clone(),
        Action::Remove(k) => {
            let f = sens.predict_removal(&state.line_flow, k)?;
            status[k] = false;
            f
        }
        Action::Reconnect(k) => {
            let f = predict_reconnect(grid, &state.line_status, &state.injections(grid), k)?;
            status[k] = true;
            f
        }
        Action::Redispatch(c) => {
            sens.predict_gen_adjust(&state.line_flow, &catalog.combo_bus_delta(grid, c))?
        }
    };
    let margins = risk_margins(grid, &flows, &status);
    Ok(Prediction {
        flows,
        status,
        margins,
    })
}

/// One-step reward estimate of `id`, or `-inf` when the flow models have
/// no answer (bridge removals, islanding reconnects).
pub fn reward_estimate(
    id: ActionId,
    state: &SystemState,
    grid: &Grid,
    sens: &SensitivitySet,
    catalog: &ActionCatalog,
    mu_line: f64,
    mu_gen: f64,
) -> f64 {
    let Some(action) = catalog.decode(id) else {
        return f64::NEG_INFINITY;
    };
    match predict_action(action, state, grid, sens, catalog) {
        Ok(p) => margin_reward(&p.margins) - action_cost(grid, catalog, action, mu_line, mu_gen),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Largest margin of a prediction over operational lines.
pub fn predicted_max_margin(p: &Prediction) -> f64 {
    max_margin(&p.margins, &p.status).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::state::make_system_state;

    fn binom(n: usize, k: usize) -> usize {
        if k > n {
            return 0;
        }
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn line_action_counts() {
        let g = fixtures::triangle();
        let acts = enumerate_line_actions(&g);
        assert_eq!(acts.len(), 7);
        assert_eq!(acts[0], Action::DoNothing);
        assert_eq!(acts[1], Action::Remove(0));
        assert_eq!(acts[4], Action::Reconnect(0));
    }

    #[test]
    fn combo_counts_match_closed_form() {
        for k in 2..=8 {
            let closed: usize = (0..=k / 2).map(|m| binom(k, m) * binom(k - m, m)).sum::<usize>() - 1;
            assert_eq!(gen_combo_count(k), closed, "k={k}");
            let combos = enumerate_gen_combos(&vec![10.0; k], 2.0).unwrap();
            assert_eq!(combos.len(), closed, "k={k}");
        }
        assert_eq!(gen_combo_count(5), 50);
        assert_eq!(gen_combo_count(6), 140);
    }

    #[test]
    fn two_generator_combos() {
        let combos = enumerate_gen_combos(&[1.0, 1.0], 1.0).unwrap();
        assert_eq!(combos, vec![vec![-1, 1], vec![1, -1]]);
    }

    #[test]
    fn combo_errors() {
        assert_eq!(enumerate_gen_combos(&[5.0], 1.0), Err(ActionError::TooFewGenerators(1)));
        assert!(matches!(
            enumerate_gen_combos(&[5.0, 1.5], 2.0),
            Err(ActionError::RampViolation { gen: 1, .. })
        ));
    }

    #[test]
    fn catalog_ids_round_trip() {
        let g = fixtures::triangle();
        let c = ActionCatalog::line_only(&g);
        assert_eq!(c.len(), 7);
        for id in c.ids() {
            assert_eq!(c.encode(c.decode(id).unwrap()), Some(id));
        }
        assert_eq!(c.decode(ActionId(7)), None);
        let manifest = c.manifest_csv(&g);
        assert!(manifest.starts_with("id,kind,detail\n0,do_nothing,\n1,remove,line 1 (1-2)\n"));
    }

    fn fixture_state(limits: [f64; 3], status: Vec<bool>, cooldown: Vec<u32>) -> (crate::grid::Grid, SystemState) {
        let g = fixtures::triangle_with_limits(limits);
        let s = make_system_state(&g, vec![0.0, 1.0], vec![1.0], status, vec![0; 3], cooldown, 1).unwrap();
        (g, s)
    }

    #[test]
    fn legality_rules() {
        let (g, s) = fixture_state([1.0; 3], vec![true; 3], vec![0; 3]);
        let c = ActionCatalog::line_only(&g);
        let legal = legal_actions(&s, &c, &g);
        assert_eq!(legal, vec![ActionId(0), ActionId(1), ActionId(2), ActionId(3)]);

        let (g, s) = fixture_state([1.0; 3], vec![true, true, false], vec![2, 0, 0]);
        let legal = legal_actions(&s, &c, &g);
        assert!(!legal.contains(&ActionId(1)), "cooldown blocks removal");
        assert!(legal.contains(&ActionId(6)), "line 3 reconnect");
        assert_eq!(
            check_legal(ActionId(1), &s, &c, &g),
            Err(Illegal::LineCooldown { line: 0, remaining: 2 })
        );
    }

    #[test]
    fn generator_at_max_blocks_upward_legs() {
        let mut g = fixtures::triangle();
        // two extra generators on bus 3 so redispatch has a pair to work with
        for id in [3, 4] {
            g.generators.push(crate::grid::Generator {
                id,
                bus: 3,
                p_min: 0.0,
                p_max: 1.0,
                ramp_limit: 0.5,
                cost_per_mw: 10.0,
                dispatchable: true,
            });
        }
        let g = crate::grid::Grid::parse(&g.to_json()).unwrap();
        let c = ActionCatalog::new(&g, GenActionSpec { count: 3, delta: Some(0.5) }).unwrap();
        assert_eq!(c.n_gen_actions(), gen_combo_count(3));
        // generator index 2 (id 3) at its max
        let s = make_system_state(&g, vec![0.0, 0.0, 1.0, 0.0], vec![1.0], vec![true; 3], vec![0; 3], vec![0; 3], 1).unwrap();
        for id in legal_actions(&s, &c, &g) {
            if let Some(Action::Redispatch(k)) = c.decode(id) {
                for (j, mw) in c.combo_legs(k) {
                    let out = s.gen_output[j] + mw;
                    assert!(out <= g.generators[j].p_max && out >= g.generators[j].p_min);
                }
            }
        }
        let up_on_full = c
            .gen_action_ids()
            .filter(|&id| match c.decode(id) {
                Some(Action::Redispatch(k)) => c.combo_legs(k).any(|(j, mw)| j == 2 && mw > 0.0),
                _ => false,
            })
            .collect::<Vec<_>>();
        assert!(!up_on_full.is_empty());
        let legal = legal_actions(&s, &c, &g);
        assert!(up_on_full.iter().all(|id| !legal.contains(id)));
    }

    #[test]
    fn effective_set_on_fixture() {
        let (g, s) = fixture_state([0.5, 1.1, 1.1], vec![true; 3], vec![0; 3]);
        let c = ActionCatalog::line_only(&g);
        let sens = SensitivitySet::compute(&g, &s.line_status).unwrap();
        assert_eq!(s.max_margin().1, Some(0));
        let eff = effective_line_set(&s, &g, &sens, &c).unwrap();
        assert_eq!(eff, vec![c.encode(Action::Remove(2)).unwrap()]);

        let (g, s) = fixture_state([0.5, 1.1, 1.1], vec![true; 3], vec![3; 3]);
        assert!(effective_line_set(&s, &g, &sens, &c).unwrap().is_empty());

        let (g, s) = fixture_state([0.5, 1.1, 1.1], vec![true, true, false], vec![0; 3]);
        let sens = SensitivitySet::compute(&g, &s.line_status).unwrap();
        let eff = effective_line_set(&s, &g, &sens, &c).unwrap();
        assert!(eff.contains(&c.encode(Action::Reconnect(2)).unwrap()));
    }

    #[test]
    fn reward_estimates_on_fixture() {
        let (g, s) = fixture_state([0.5, 1.1, 1.1], vec![true; 3], vec![0; 3]);
        let c = ActionCatalog::line_only(&g);
        let sens = SensitivitySet::compute(&g, &s.line_status).unwrap();
        let remove13 = c.encode(Action::Remove(2)).unwrap();
        let est = reward_estimate(remove13, &s, &g, &sens, &c, 0.0, 0.0);
        let want = 1.0 + (1.0 - (1.0f64 / 1.1).powi(2)) + 1.0;
        assert!((est - want).abs() < 1e-12);
        assert!((est - 2.1736).abs() < 1e-4);
        let with_cost = reward_estimate(remove13, &s, &g, &sens, &c, 1.0, 0.0);
        assert!((est - with_cost - 1.0).abs() < 1e-12);

        let nothing = reward_estimate(ActionId(0), &s, &g, &sens, &c, 1.0, 1.0);
        assert!((nothing - margin_reward(&s.risk_margin)).abs() < 1e-15);
    }

    #[test]
    fn bridge_estimate_is_neg_infinity() {
        let g = fixtures::chain();
        let s = make_system_state(&g, vec![1.0], vec![1.0], vec![true; 2], vec![0; 2], vec![0; 2], 1).unwrap();
        let c = ActionCatalog::line_only(&g);
        let sens = SensitivitySet::compute(&g, &s.line_status).unwrap();
        assert_eq!(reward_estimate(ActionId(1), &s, &g, &sens, &c, 0.0, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn redispatch_cost_uses_magnitudes() {
        let mut g = fixtures::triangle();
        g.generators[0].cost_per_mw = 36.0;
        g.generators.push(crate::grid::Generator {
            id: 3,
            bus: 3,
            p_min: 0.0,
            p_max: 10.0,
            ramp_limit: 2.0,
            cost_per_mw: 40.0,
            dispatchable: true,
        });
        g.generators[1].cost_per_mw = 36.0;
        g.generators[1].ramp_limit = 2.0;
        let g = crate::grid::Grid::parse(&g.to_json()).unwrap();
        let c = ActionCatalog::new(&g, GenActionSpec { count: 2, delta: Some(2.0) }).unwrap();
        let cost = action_cost(&g, &c, Action::Redispatch(0), 0.0, 1.0);
        assert_eq!(cost, 2.0 * 36.0 + 2.0 * 40.0);
    }
}
