//! Small hand-checkable networks and the scripted stress scenario used by
//! tests, benches and the CLI examples.

use crate::grid::Grid;
use crate::scenario::Scenario;

/// Equal-reactance triangle, slack at bus 1, generator at bus 2, load at bus 3.
/// Lines: 1 = 1→2, 2 = 2→3, 3 = 1→3, all limits 1.0 MW on a 1 MVA base.
pub const TRIANGLE_JSON: &str = r#"{
  "base_mva": 1.0,
  "slack_bus": 1,
  "buses": [1, 2, 3],
  "lines": [
    {"id": 1, "from": 1, "to": 2, "x": 1.0, "f_max": 1.0, "switch_cost": 1.0},
    {"id": 2, "from": 2, "to": 3, "x": 1.0, "f_max": 1.0, "switch_cost": 1.0},
    {"id": 3, "from": 1, "to": 3, "x": 1.0, "f_max": 1.0, "switch_cost": 1.0}
  ],
  "generators": [
    {"id": 1, "bus": 1, "p_min": 0.0, "p_max": 10.0, "ramp": 1.0, "cost": 36.0, "dispatchable": true},
    {"id": 2, "bus": 2, "p_min": 0.0, "p_max": 10.0, "ramp": 1.0, "cost": 40.0, "dispatchable": true}
  ],
  "loads": [
    {"id": 1, "bus": 3}
  ]
}"#;

pub const CHAIN_JSON: &str = r#"{
  "base_mva": 1.0,
  "slack_bus": 1,
  "buses": [1, 2, 3],
  "lines": [
    {"id": 1, "from": 1, "to": 2, "x": 1.0, "f_max": 1.0, "switch_cost": 1.0},
    {"id": 2, "from": 2, "to": 3, "x": 1.0, "f_max": 1.0, "switch_cost": 1.0}
  ],
  "generators": [
    {"id": 1, "bus": 1, "p_min": 0.0, "p_max": 10.0, "ramp": 1.0, "cost": 36.0, "dispatchable": true}
  ],
  "loads": [
    {"id": 1, "bus": 3}
  ]
}"#;

/// Triangle used for the cascade scenario: loads at buses 1 and 3, limits
/// (1.0, 2.75, 1.0). At full stress (gen 3.0, loads 1.0 / 2.5) line 1-2 is
/// overloaded; removing line 1-3 relieves it, while letting line 1-2 trip
/// overloads line 2-3 and strands the bus-2 generator.
pub const STRESS_TRIANGLE_JSON: &str = r#"{
  "base_mva": 1.0,
  "slack_bus": 1,
  "buses": [1, 2, 3],
  "lines": [
    {"id": 1, "from": 1, "to": 2, "x": 1.0, "f_max": 1.0, "switch_cost": 1.0},
    {"id": 2, "from": 2, "to": 3, "x": 1.0, "f_max": 2.75, "switch_cost": 1.0},
    {"id": 3, "from": 1, "to": 3, "x": 1.0, "f_max": 1.0, "switch_cost": 1.0}
  ],
  "generators": [
    {"id": 1, "bus": 1, "p_min": 0.0, "p_max": 10.0, "ramp": 1.0, "cost": 36.0, "dispatchable": true},
    {"id": 2, "bus": 2, "p_min": 0.0, "p_max": 10.0, "ramp": 1.0, "cost": 40.0, "dispatchable": true}
  ],
  "loads": [
    {"id": 1, "bus": 1},
    {"id": 2, "bus": 3}
  ]
}"#;

pub fn triangle() -> Grid {
    Grid::parse(TRIANGLE_JSON).expect("triangle fixture parses")
}

/// Triangle with custom limits for lines (1-2, 2-3, 1-3).
pub fn triangle_with_limits(limits: [f64; 3]) -> Grid {
    let mut g = triangle();
    for (line, lim) in g.lines.iter_mut().zip(limits) {
        line.flow_limit = lim;
    }
    g
}

pub fn chain() -> Grid {
    Grid::parse(CHAIN_JSON).expect("chain fixture parses")
}

pub fn stress_triangle() -> Grid {
    Grid::parse(STRESS_TRIANGLE_JSON).expect("stress triangle fixture parses")
}

/// Load scale per step of the scripted ramp: three calm steps, a four-step
/// ramp up, full stress on steps 8 to 12, then back down to calm.
pub fn stress_ramp_scale(step: usize) -> f64 {
    match step {
        1..=3 => 0.5,
        4 => 0.6,
        5 => 0.7,
        6 => 0.8,
        7 => 0.9,
        8..=12 => 1.0,
        13 => 0.8,
        14 => 0.6,
        _ => 0.5,
    }
}

/// Scripted stress-ramp scenario on [`stress_triangle`], `len` steps long.
/// Full-stress setpoints: loads (1.0, 2.5) MW, generator 2 at 3.0 MW.
pub fn stress_ramp_scenario(len: usize) -> Scenario {
    let steps = (1..=len)
        .map(|n| {
            let s = stress_ramp_scale(n);
            (vec![1.0 * s, 2.5 * s], vec![0.5 * s, 3.0 * s])
        })
        .collect();
    Scenario::new("stress-ramp", steps)
}

/// Constant-demand triangle scenario: 1.0 MW at bus 3 met by generator 2.
pub fn flat_triangle_scenario(len: usize) -> Scenario {
    Scenario::new("flat", vec![(vec![1.0], vec![0.0, 1.0]); len])
}
