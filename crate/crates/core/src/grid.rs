//! Static network model, grid-file parsing and the DC power-flow solver.
//!
//! All quantities exposed by this module are in MW; reactances are per-unit on
//! the grid's `base_mva`. Positive line flow is from `from_bus` to `to_bus`.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("malformed grid file: {0}")]
    Syntax(String),
    #[error("dangling bus reference: {location} references bus {bus}")]
    DanglingBus { location: String, bus: usize },
    #[error("duplicate id: {location}")]
    DuplicateId { location: String },
    #[error("invalid value: {location}: {reason}")]
    InvalidValue { location: String, reason: String },
    #[error("disconnected topology: bus {bus} unreachable from slack with all lines in service")]
    Disconnected { bus: usize },
    #[error("slack bus {0} does not host a generator")]
    SlackWithoutGenerator(usize),
    #[error("island detected: bus {bus} carries {injection} MW but is not connected to the slack bus")]
    IslandDetected { bus: usize, injection: f64 },
    #[error("solve failed: {0}")]
    SolveFailed(String),
    #[error("dimension mismatch: expected {expected} {what}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: usize,
    #[serde(rename = "from")]
    pub from_bus: usize,
    #[serde(rename = "to")]
    pub to_bus: usize,
    /// Series reactance, per-unit.
    #[serde(rename = "x")]
    pub reactance: f64,
    /// Thermal limit in MW. Under the DC model this doubles as the current limit.
    #[serde(rename = "f_max")]
    pub flow_limit: f64,
    #[serde(default = "one")]
    pub switch_cost: f64,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: usize,
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    /// Maximum change in output per step, MW.
    #[serde(rename = "ramp")]
    pub ramp_limit: f64,
    #[serde(rename = "cost")]
    pub cost_per_mw: f64,
    #[serde(default = "yes")]
    pub dispatchable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: usize,
    pub bus: usize,
}

/// Raw document layout of a grid file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    base_mva: f64,
    slack_bus: usize,
    buses: Vec<usize>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
    loads: Vec<Load>,
}

/// Immutable network description. Lines, generators and loads are stored
/// sorted by id; "line index" everywhere in the crate means position in
/// [`Grid::lines`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub base_mva: f64,
    pub buses: Vec<usize>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub slack_bus: usize,
    bus_index: HashMap<usize, usize>,
    slack_gen: usize,
}

/// Solution of a DC power flow.
#[derive(Debug, Clone, PartialEq)]
pub struct DcSolution {
    /// Bus voltage angles in radians, slack fixed at 0. Buses outside the
    /// slack island carry no injection and are reported at angle 0.
    pub angles: Vec<f64>,
    /// Line flows in MW, zero on disconnected lines.
    pub flows: Vec<f64>,
}

impl Grid {
    /// Parses and validates a grid document.
    pub fn parse(text: &str) -> Result<Self, GridError> {
        let file: GridFile = serde_json::from_str(text).map_err(|e| {
            GridError::Syntax(format!("line {} column {}: {}", e.line(), e.column(), e))
        })?;
        Self::from_parts(
            file.base_mva,
            file.slack_bus,
            file.buses,
            file.lines,
            file.generators,
            file.loads,
        )
    }

    pub fn from_parts(
        base_mva: f64,
        slack_bus: usize,
        buses: Vec<usize>,
        mut lines: Vec<Line>,
        mut generators: Vec<Generator>,
        mut loads: Vec<Load>,
    ) -> Result<Self, GridError> {
        if !(base_mva.is_finite() && base_mva > 0.0) {
            return Err(GridError::InvalidValue {
                location: "base_mva".into(),
                reason: "must be positive".into(),
            });
        }
        let mut bus_index = HashMap::with_capacity(buses.len());
        for (i, &b) in buses.iter().enumerate() {
            if b == 0 {
                return Err(GridError::InvalidValue {
                    location: format!("buses[{i}]"),
                    reason: "ids must be positive".into(),
                });
            }
            if bus_index.insert(b, i).is_some() {
                return Err(GridError::DuplicateId {
                    location: format!("buses[{i}] = {b}"),
                });
            }
        }
        let check_bus = |location: String, bus: usize| -> Result<(), GridError> {
            if bus_index.contains_key(&bus) {
                Ok(())
            } else {
                Err(GridError::DanglingBus { location, bus })
            }
        };
        check_bus("slack_bus".into(), slack_bus)?;

        let mut seen = HashSet::new();
        for (i, l) in lines.iter().enumerate() {
            let loc = format!("lines[{i}] (id {})", l.id);
            if l.id == 0 || !seen.insert(l.id) {
                return Err(GridError::DuplicateId { location: loc });
            }
            check_bus(format!("{loc}.from"), l.from_bus)?;
            check_bus(format!("{loc}.to"), l.to_bus)?;
            if l.from_bus == l.to_bus {
                return Err(invalid(&loc, "from and to bus coincide"));
            }
            if !(l.reactance.is_finite() && l.reactance > 0.0) {
                return Err(invalid(&loc, "reactance must be positive"));
            }
            if !(l.flow_limit.is_finite() && l.flow_limit > 0.0) {
                return Err(invalid(&loc, "f_max must be positive"));
            }
            if !(l.switch_cost.is_finite() && l.switch_cost >= 0.0) {
                return Err(invalid(&loc, "switch_cost must be non-negative"));
            }
        }
        seen.clear();
        for (i, g) in generators.iter().enumerate() {
            let loc = format!("generators[{i}] (id {})", g.id);
            if g.id == 0 || !seen.insert(g.id) {
                return Err(GridError::DuplicateId { location: loc });
            }
            check_bus(format!("{loc}.bus"), g.bus)?;
            if !(g.p_min >= 0.0 && g.p_min <= g.p_max && g.p_max.is_finite()) {
                return Err(invalid(&loc, "requires 0 <= p_min <= p_max"));
            }
            if !(g.ramp_limit.is_finite() && g.ramp_limit > 0.0) {
                return Err(invalid(&loc, "ramp must be positive"));
            }
            if !(g.cost_per_mw.is_finite() && g.cost_per_mw >= 0.0) {
                return Err(invalid(&loc, "cost must be non-negative"));
            }
        }
        seen.clear();
        for (i, d) in loads.iter().enumerate() {
            let loc = format!("loads[{i}] (id {})", d.id);
            if d.id == 0 || !seen.insert(d.id) {
                return Err(GridError::DuplicateId { location: loc });
            }
            check_bus(format!("{loc}.bus"), d.bus)?;
        }

        lines.sort_by_key(|l| l.id);
        generators.sort_by_key(|g| g.id);
        loads.sort_by_key(|d| d.id);

        let slack_gen = generators
            .iter()
            .position(|g| g.bus == slack_bus)
            .ok_or(GridError::SlackWithoutGenerator(slack_bus))?;

        let grid = Grid {
            base_mva,
            buses,
            lines,
            generators,
            loads,
            slack_bus,
            bus_index,
            slack_gen,
        };
        let all_on = vec![true; grid.lines.len()];
        let comps = grid.islands(&all_on);
        if comps.len() > 1 {
            let stray = comps
                .iter()
                .find(|c| !c.contains(&slack_bus))
                .and_then(|c| c.first().copied())
                .unwrap_or(slack_bus);
            return Err(GridError::Disconnected { bus: stray });
        }
        Ok(grid)
    }

    pub fn to_json(&self) -> String {
        let file = GridFile {
            base_mva: self.base_mva,
            slack_bus: self.slack_bus,
            buses: self.buses.clone(),
            lines: self.lines.clone(),
            generators: self.generators.clone(),
            loads: self.loads.clone(),
        };
        serde_json::to_string_pretty(&file).expect("grid serializes")
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn n_loads(&self) -> usize {
        self.loads.len()
    }

    /// Position of a bus id in [`Grid::buses`].
    pub fn bus_index(&self, bus: usize) -> Option<usize> {
        self.bus_index.get(&bus).copied()
    }

    pub fn slack_index(&self) -> usize {
        self.bus_index[&self.slack_bus]
    }

    /// Index of the generator that balances the system.
    pub fn slack_generator(&self) -> usize {
        self.slack_gen
    }

    pub fn line_index(&self, id: usize) -> Option<usize> {
        self.lines.binary_search_by_key(&id, |l| l.id).ok()
    }

    /// `(from, to)` bus positions of line `l`.
    pub fn line_ends(&self, l: usize) -> (usize, usize) {
        let line = &self.lines[l];
        (
            self.bus_index[&line.from_bus],
            self.bus_index[&line.to_bus],
        )
    }

    /// Net bus injections in MW: generation minus demand.
    pub fn injections(&self, gen_output: &[f64], load_demand: &[f64]) -> Result<Vec<f64>, GridError> {
        expect_len("generator outputs", self.n_generators(), gen_output.len())?;
        expect_len("load demands", self.n_loads(), load_demand.len())?;
        let mut p = vec![0.0; self.n_buses()];
        for (g, out) in self.generators.iter().zip(gen_output) {
            p[self.bus_index[&g.bus]] += out;
        }
        for (d, dem) in self.loads.iter().zip(load_demand) {
            p[self.bus_index[&d.bus]] -= dem;
        }
        Ok(p)
    }

    /// Connected components over operational lines, as lists of bus ids.
    /// Components are ordered by their first bus position; members likewise.
    pub fn islands(&self, status: &[bool]) -> Vec<Vec<usize>> {
        let labels = self.component_labels(status);
        let n_comp = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut comps = vec![Vec::new(); n_comp];
        for (i, &c) in labels.iter().enumerate() {
            comps[c].push(self.buses[i]);
        }
        comps
    }

    /// Component label per bus position; labels are assigned in order of
    /// first appearance so the slack-free ordering is deterministic.
    pub fn component_labels(&self, status: &[bool]) -> Vec<usize> {
        let n = self.n_buses();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (l, on) in status.iter().enumerate().take(self.n_lines()) {
            if *on {
                let (a, b) = self.line_ends(l);
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut out = vec![0; n];
        let mut next = 0;
        for i in 0..n {
            let r = find(&mut parent, i);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            out[i] = label[r];
        }
        out
    }

    /// Boolean mask over bus positions: true for buses in the slack island.
    pub fn slack_island(&self, status: &[bool]) -> Vec<bool> {
        let labels = self.component_labels(status);
        let s = labels[self.slack_index()];
        labels.iter().map(|&c| c == s).collect()
    }

    /// Reduced susceptance matrix over the slack island, slack row/column
    /// removed. Returns the matrix and the bus position of each row.
    pub(crate) fn reduced_susceptance(&self, status: &[bool]) -> (DMatrix<f64>, Vec<usize>) {
        let in_island = self.slack_island(status);
        let slack = self.slack_index();
        let mut row_of = vec![usize::MAX; self.n_buses()];
        let mut buses = Vec::new();
        for (i, &inside) in in_island.iter().enumerate() {
            if inside && i != slack {
                row_of[i] = buses.len();
                buses.push(i);
            }
        }
        let m = buses.len();
        let mut b = DMatrix::<f64>::zeros(m, m);
        for (l, line) in self.lines.iter().enumerate() {
            if !status[l] {
                continue;
            }
            let (f, t) = self.line_ends(l);
            if !in_island[f] {
                continue;
            }
            let y = 1.0 / line.reactance;
            let (rf, rt) = (row_of[f], row_of[t]);
            if rf != usize::MAX {
                b[(rf, rf)] += y;
            }
            if rt != usize::MAX {
                b[(rt, rt)] += y;
            }
            if rf != usize::MAX && rt != usize::MAX {
                b[(rf, rt)] -= y;
                b[(rt, rf)] -= y;
            }
        }
        (b, buses)
    }

    /// DC power flow. Solves `B·θ = P` over the slack island with the slack
    /// angle pinned at zero; the slack bus absorbs any residual imbalance.
    ///
    /// Buses outside the slack island must carry zero injection, otherwise
    /// the system has an island without a reference and the solve fails.
    pub fn solve_dc(&self, injections: &[f64], status: &[bool]) -> Result<DcSolution, GridError> {
        expect_len("bus injections", self.n_buses(), injections.len())?;
        expect_len("line statuses", self.n_lines(), status.len())?;
        if let Some(i) = injections.iter().position(|p| !p.is_finite()) {
            return Err(GridError::SolveFailed(format!(
                "non-finite injection at bus {}",
                self.buses[i]
            )));
        }
        let in_island = self.slack_island(status);
        for (i, (&p, &inside)) in injections.iter().zip(&in_island).enumerate() {
            if !inside && p.abs() > 1e-9 {
                return Err(GridError::IslandDetected {
                    bus: self.buses[i],
                    injection: p,
                });
            }
        }
        let (b, rows) = self.reduced_susceptance(status);
        let mut angles = vec![0.0; self.n_buses()];
        if !rows.is_empty() {
            let rhs = DVector::from_iterator(
                rows.len(),
                rows.iter().map(|&i| injections[i] / self.base_mva),
            );
            let theta = b
                .lu()
                .solve(&rhs)
                .ok_or_else(|| GridError::SolveFailed("singular susceptance matrix".into()))?;
            if theta.iter().any(|t| !t.is_finite()) {
                return Err(GridError::SolveFailed("non-finite angles".into()));
            }
            for (k, &i) in rows.iter().enumerate() {
                angles[i] = theta[k];
            }
        }
        let flows = self.flows_from_angles(&angles, status);
        Ok(DcSolution { angles, flows })
    }

    pub fn flows_from_angles(&self, angles: &[f64], status: &[bool]) -> Vec<f64> {
        self.lines
            .iter()
            .enumerate()
            .map(|(l, line)| {
                if status[l] {
                    let (f, t) = self.line_ends(l);
                    self.base_mva * (angles[f] - angles[t]) / line.reactance
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Net power leaving each bus through its lines.
    pub fn bus_outflow(&self, flows: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_buses()];
        for (l, &f) in flows.iter().enumerate() {
            let (a, b) = self.line_ends(l);
            out[a] += f;
            out[b] -= f;
        }
        out
    }
}

fn invalid(location: &str, reason: &str) -> GridError {
    GridError::InvalidValue {
        location: location.to_string(),
        reason: reason.to_string(),
    }
}

pub(crate) fn expect_len(what: &'static str, expected: usize, got: usize) -> Result<(), GridError> {
    if expected == got {
        Ok(())
    } else {
        Err(GridError::Dimension { what, expected, got })
    }
}
