//! Per-step system state record and its feature encoding.

use serde::{Deserialize, Serialize};

use crate::grid::{expect_len, Grid, GridError};

/// Snapshot of the grid at step `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub step: usize,
    /// Generator outputs in MW, slack included.
    pub gen_output: Vec<f64>,
    pub load_demand: Vec<f64>,
    pub line_flow: Vec<f64>,
    /// `|flow| / limit` on operational lines, exactly 0 on disconnected ones.
    pub risk_margin: Vec<f64>,
    pub line_status: Vec<bool>,
    /// Consecutive steps each line has spent at or above its limit.
    pub overflow_steps: Vec<u32>,
    /// Steps remaining before a line may be switched again.
    pub cooldown: Vec<u32>,
}

/// Risk margins for a flow vector under a given topology.
pub fn risk_margins(grid: &Grid, flows: &[f64], status: &[bool]) -> Vec<f64> {
    grid.lines
        .iter()
        .zip(flows)
        .zip(status)
        .map(|((line, f), &on)| if on { f.abs() / line.flow_limit } else { 0.0 })
        .collect()
}

/// Largest risk margin over operational lines and its line index. An empty
/// operational set yields `(0.0, None)`.
pub fn max_margin(margins: &[f64], status: &[bool]) -> (f64, Option<usize>) {
    let mut best = (0.0, None);
    for (l, (&rho, &on)) in margins.iter().zip(status).enumerate() {
        if on && (best.1.is_none() || rho > best.0) {
            best = (rho, Some(l));
        }
    }
    best
}

/// Solves the power flow for the given operating point and assembles the
/// state record.
#[allow(clippy::too_many_arguments)]
pub fn make_system_state(
    grid: &Grid,
    gen_output: Vec<f64>,
    load_demand: Vec<f64>,
    status: Vec<bool>,
    overflow_steps: Vec<u32>,
    cooldown: Vec<u32>,
    step: usize,
) -> Result<SystemState, GridError> {
    expect_len("overflow counters", grid.n_lines(), overflow_steps.len())?;
    expect_len("cooldowns", grid.n_lines(), cooldown.len())?;
    let p = grid.injections(&gen_output, &load_demand)?;
    let sol = grid.solve_dc(&p, &status)?;
    let risk_margin = risk_margins(grid, &sol.flows, &status);
    Ok(SystemState {
        step,
        gen_output,
        load_demand,
        line_flow: sol.flows,
        risk_margin,
        line_status: status,
        overflow_steps,
        cooldown,
    })
}

impl SystemState {
    pub fn injections(&self, grid: &Grid) -> Vec<f64> {
        grid.injections(&self.gen_output, &self.load_demand)
            .expect("state dimensions match its grid")
    }

    pub fn max_margin(&self) -> (f64, Option<usize>) {
        max_margin(&self.risk_margin, &self.line_status)
    }

    pub fn n_operational(&self) -> usize {
        self.line_status.iter().filter(|s| **s).count()
    }
}

/// Normalisation constants for the feature encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScale {
    /// Divisor for overflow counters (the soft-trip step count).
    pub overflow_cap: f64,
    /// Divisor for cooldowns (the longest cooldown).
    pub cooldown_cap: f64,
}

/// Feature-vector length: generators, loads, then five blocks of per-line
/// quantities.
pub fn feature_len(grid: &Grid) -> usize {
    grid.n_generators() + grid.n_loads() + 5 * grid.n_lines()
}

/// Layout: gen_output/p_max (G), load/base_mva (D), flow/limit (L),
/// risk margin (L), status (L), overflow/cap (L), cooldown/cap (L).
pub fn encode_features(grid: &Grid, state: &SystemState, scale: FeatureScale) -> Vec<f64> {
    let mut x = Vec::with_capacity(feature_len(grid));
    for (g, out) in grid.generators.iter().zip(&state.gen_output) {
        x.push(if g.p_max > 0.0 { out / g.p_max } else { 0.0 });
    }
    x.extend(state.load_demand.iter().map(|d| d / grid.base_mva));
    x.extend(
        grid.lines
            .iter()
            .zip(&state.line_flow)
            .map(|(l, f)| f / l.flow_limit),
    );
    x.extend_from_slice(&state.risk_margin);
    x.extend(state.line_status.iter().map(|&s| if s { 1.0 } else { 0.0 }));
    x.extend(
        state
            .overflow_steps
            .iter()
            .map(|&c| c as f64 / scale.overflow_cap.max(1.0)),
    );
    x.extend(
        state
            .cooldown
            .iter()
            .map(|&c| c as f64 / scale.cooldown_cap.max(1.0)),
    );
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn triangle_state(status: Vec<bool>) -> SystemState {
        let g = fixtures::triangle();
        make_system_state(&g, vec![0.0, 1.0], vec![1.0], status, vec![0; 3], vec![0; 3], 1).unwrap()
    }

    #[test]
    fn margins_follow_flows() {
        let s = triangle_state(vec![true; 3]);
        let want = [1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0];
        for (r, w) in s.risk_margin.iter().zip(want) {
            assert!((r - w).abs() < 1e-12);
        }
        assert_eq!(s.max_margin().1, Some(1));
    }

    #[test]
    fn disconnected_line_has_zero_margin() {
        let s = triangle_state(vec![true, true, false]);
        assert_eq!(s.line_flow[2], 0.0);
        assert_eq!(s.risk_margin[2], 0.0);
        assert!((s.risk_margin[1] - 1.0).abs() < 1e-12, "flow at limit gives margin 1");
    }

    #[test]
    fn empty_operational_set_has_no_max() {
        assert_eq!(max_margin(&[0.0, 0.0], &[false, false]), (0.0, None));
    }

    #[test]
    fn feature_layout_length() {
        let g = fixtures::triangle();
        let s = triangle_state(vec![true; 3]);
        let x = encode_features(&g, &s, FeatureScale { overflow_cap: 3.0, cooldown_cap: 12.0 });
        assert_eq!(x.len(), feature_len(&g));
        assert_eq!(x.len(), 2 + 1 + 15);
    }
}
