//! Demand/generation time series that drive an episode, their CSV form and
//! a synthetic generator.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::state::{max_margin, risk_margins};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario header: {0}")]
    Header(String),
    #[error("scenario row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("scenario is empty")]
    Empty,
    #[error("unknown stress profile `{0}` (expected calm, daily or stress-ramp)")]
    Profile(String),
}

/// One step of setpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStep {
    /// Demand per load, MW, in grid load order.
    pub loads: Vec<f64>,
    /// Setpoint per generator, MW, in grid generator order. The slack
    /// generator's entry is informational; it is overridden by balancing.
    pub gens: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub steps: Vec<ScenarioStep>,
}

impl Scenario {
    pub fn new(id: impl Into<String>, steps: Vec<(Vec<f64>, Vec<f64>)>) -> Self {
        Self {
            id: id.into(),
            steps: steps
                .into_iter()
                .map(|(loads, gens)| ScenarioStep { loads, gens })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Setpoints for 1-based step `n`.
    pub fn step(&self, n: usize) -> Option<&ScenarioStep> {
        n.checked_sub(1).and_then(|i| self.steps.get(i))
    }

    pub fn validate(&self, grid: &Grid) -> Result<(), ScenarioError> {
        if self.steps.is_empty() {
            return Err(ScenarioError::Empty);
        }
        for (i, s) in self.steps.iter().enumerate() {
            let row = i + 1;
            if s.loads.len() != grid.n_loads() || s.gens.len() != grid.n_generators() {
                return Err(ScenarioError::Row {
                    row,
                    reason: format!(
                        "expected {} loads and {} generators, got {} and {}",
                        grid.n_loads(),
                        grid.n_generators(),
                        s.loads.len(),
                        s.gens.len()
                    ),
                });
            }
            if s.loads.iter().chain(&s.gens).any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(ScenarioError::Row {
                    row,
                    reason: "values must be finite and non-negative".into(),
                });
            }
        }
        Ok(())
    }

    /// Parses `step,load_<id>...,gen_<id>...` CSV text.
    pub fn from_csv(grid: &Grid, id: impl Into<String>, text: &str) -> Result<Self, ScenarioError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = rdr.headers()?.clone();
        if header.get(0) != Some("step") {
            return Err(ScenarioError::Header("first column must be `step`".into()));
        }
        // map each column to (is_load, index)
        let mut cols = Vec::with_capacity(header.len() - 1);
        let mut seen_load = vec![false; grid.n_loads()];
        let mut seen_gen = vec![false; grid.n_generators()];
        for name in header.iter().skip(1) {
            let (is_load, id) = if let Some(rest) = name.strip_prefix("load_") {
                (true, rest)
            } else if let Some(rest) = name.strip_prefix("gen_") {
                (false, rest)
            } else {
                return Err(ScenarioError::Header(format!("unexpected column `{name}`")));
            };
            let id: usize = id
                .parse()
                .map_err(|_| ScenarioError::Header(format!("bad id in column `{name}`")))?;
            let pos = if is_load {
                grid.loads.iter().position(|d| d.id == id)
            } else {
                grid.generators.iter().position(|g| g.id == id)
            }
            .ok_or_else(|| ScenarioError::Header(format!("column `{name}` matches no grid element")))?;
            let seen = if is_load { &mut seen_load[pos] } else { &mut seen_gen[pos] };
            if std::mem::replace(seen, true) {
                return Err(ScenarioError::Header(format!("duplicate column `{name}`")));
            }
            cols.push((is_load, pos));
        }
        if seen_load.iter().chain(&seen_gen).any(|s| !s) {
            return Err(ScenarioError::Header(
                "every load and generator needs a column".into(),
            ));
        }

        let mut steps = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let step: usize = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ScenarioError::Row {
                    row,
                    reason: "bad step index".into(),
                })?;
            if step != row {
                return Err(ScenarioError::Row {
                    row,
                    reason: format!("step index {step} out of sequence"),
                });
            }
            let mut s = ScenarioStep {
                loads: vec![0.0; grid.n_loads()],
                gens: vec![0.0; grid.n_generators()],
            };
            for (field, &(is_load, pos)) in rec.iter().skip(1).zip(&cols) {
                let v: f64 = field.parse().map_err(|_| ScenarioError::Row {
                    row,
                    reason: format!("bad number `{field}`"),
                })?;
                if is_load {
                    s.loads[pos] = v;
                } else {
                    s.gens[pos] = v;
                }
            }
            steps.push(s);
        }
        let sc = Scenario { id: id.into(), steps };
        sc.validate(grid)?;
        Ok(sc)
    }

    pub fn to_csv(&self, grid: &Grid) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["step".to_string()];
        header.extend(grid.loads.iter().map(|d| format!("load_{}", d.id)));
        header.extend(grid.generators.iter().map(|g| format!("gen_{}", g.id)));
        w.write_record(&header).expect("in-memory write");
        for (i, s) in self.steps.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(s.loads.iter().chain(&s.gens).map(|v| v.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn load(grid: &Grid, path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_csv(grid, id, &text)
    }
}

/// Loads every `*.csv` in `dir` (sorted by file name), or a single file.
pub fn load_scenarios(grid: &Grid, path: &Path) -> Result<Vec<Scenario>, ScenarioError> {
    if path.is_file() {
        return Ok(vec![Scenario::load(grid, path)?]);
    }
    let io = |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files.iter().map(|p| Scenario::load(grid, p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StressProfile {
    /// Mild daily swing scaled so peak margins stay below 0.8·η.
    Calm,
    /// Larger daily swing with peaks reaching just past η.
    Daily,
    /// Calm for the first 60% of the horizon, then a linear ramp that drives
    /// the final step to a margin of 1.25 under the base topology.
    StressRamp,
}

impl FromStr for StressProfile {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "calm" => Ok(Self::Calm),
            "daily" => Ok(Self::Daily),
            "stress-ramp" => Ok(Self::StressRamp),
            other => Err(ScenarioError::Profile(other.to_string())),
        }
    }
}

impl fmt::Display for StressProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Calm => "calm",
            Self::Daily => "daily",
            Self::StressRamp => "stress-ramp",
        })
    }
}

/// Steps per simulated day at 5-minute resolution.
pub const STEPS_PER_DAY: usize = 288;

/// Generates `count` scenarios of `length` steps. Deterministic in `seed`;
/// `eta` is the critical threshold the profiles are calibrated against.
pub fn generate_scenarios(
    grid: &Grid,
    count: usize,
    length: usize,
    profile: StressProfile,
    eta: f64,
    seed: u64,
) -> Result<Vec<Scenario>, ScenarioError> {
    if length == 0 {
        return Err(ScenarioError::Empty);
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            generate_one(grid, &mut rng, format!("{profile}-{i:04}"), length, profile, eta)
        })
        .collect()
}

fn generate_one(
    grid: &Grid,
    rng: &mut ChaCha8Rng,
    id: String,
    length: usize,
    profile: StressProfile,
    eta: f64,
) -> Result<Scenario, ScenarioError> {
    let (amp, noise) = match profile {
        StressProfile::Calm => (0.10, 0.01),
        StressProfile::Daily | StressProfile::StressRamp => (0.25, 0.02),
    };
    let capacity: f64 = grid.generators.iter().map(|g| g.p_max).sum();
    let weights: Vec<f64> = (0..grid.n_loads()).map(|_| rng.random_range(0.5..1.5)).collect();
    let wsum: f64 = weights.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let base: Vec<f64> = weights.iter().map(|w| 0.5 * capacity * w / wsum).collect();
    let phase = rng.random_range(0.0..2.0 * PI);

    let mut steps: Vec<ScenarioStep> = (0..length)
        .map(|t| {
            let daily = 1.0 + amp * (2.0 * PI * t as f64 / STEPS_PER_DAY as f64 + phase).sin();
            let loads: Vec<f64> = base
                .iter()
                .map(|b| (b * (daily + noise * standard_normal(rng))).max(0.0))
                .collect();
            let total: f64 = loads.iter().sum();
            ScenarioStep {
                gens: dispatch(grid, total),
                loads,
            }
        })
        .collect();

    let target = match profile {
        StressProfile::Calm | StressProfile::StressRamp => 0.8 * eta,
        StressProfile::Daily => eta + 0.02,
    };
    // flows scale linearly with a common factor on all setpoints, up to the
    // generator clamps; a few passes absorb those
    for _ in 0..4 {
        let peak = steps
            .iter()
            .map(|s| step_max_margin(grid, s))
            .fold(0.0, f64::max);
        if peak <= 0.0 {
            break;
        }
        let c = target / peak;
        if profile != StressProfile::Daily && c >= 1.0 {
            break;
        }
        rescale(grid, &mut steps, c);
    }
    if profile == StressProfile::StressRamp {
        let t0 = (length * 6) / 10;
        let last = step_max_margin(grid, &steps[length - 1]);
        if last > 0.0 {
            let end_factor = 1.25 / last;
            let span = (length - t0).max(1) as f64;
            for (t, s) in steps.iter_mut().enumerate().skip(t0) {
                let r = 1.0 + (end_factor - 1.0) * ((t - t0 + 1) as f64 / span);
                for v in s.loads.iter_mut() {
                    *v *= r;
                }
                let total: f64 = s.loads.iter().sum();
                s.gens = dispatch(grid, total);
            }
        }
    }
    Ok(Scenario { id, steps })
}

/// Non-slack generators cover 90% of their capacity share of `demand`.
fn dispatch(grid: &Grid, demand: f64) -> Vec<f64> {
    let capacity: f64 = grid.generators.iter().map(|g| g.p_max).sum();
    let slack = grid.slack_generator();
    let mut gens: Vec<f64> = grid
        .generators
        .iter()
        .enumerate()
        .map(|(j, g)| {
            if j == slack || capacity <= 0.0 {
                0.0
            } else {
                (0.9 * demand * g.p_max / capacity).clamp(g.p_min, g.p_max)
            }
        })
        .collect();
    let others: f64 = gens.iter().sum();
    gens[slack] = (demand - others).max(0.0);
    gens
}

fn rescale(grid: &Grid, steps: &mut [ScenarioStep], c: f64) {
    for s in steps.iter_mut() {
        for v in s.loads.iter_mut() {
            *v *= c;
        }
        let total: f64 = s.loads.iter().sum();
        s.gens = dispatch(grid, total);
    }
}

/// Max margin of a step with every line in service and the slack balancing.
fn step_max_margin(grid: &Grid, s: &ScenarioStep) -> f64 {
    let mut gens = s.gens.clone();
    let slack = grid.slack_generator();
    let total: f64 = s.loads.iter().sum();
    let others: f64 = gens.iter().enumerate().filter(|(j, _)| *j != slack).map(|(_, v)| v).sum();
    gens[slack] = total - others;
    let status = vec![true; grid.n_lines()];
    let p = match grid.injections(&gens, &s.loads) {
        Ok(p) => p,
        Err(_) => return f64::INFINITY,
    };
    match grid.solve_dc(&p, &status) {
        Ok(sol) => max_margin(&risk_margins(grid, &sol.flows, &status), &status).0,
        Err(_) => f64::INFINITY,
    }
}

/// Box-Muller draw.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}
