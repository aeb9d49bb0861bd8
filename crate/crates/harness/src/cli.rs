//! `gridguard` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gridguard::agents::{Policy, PolicyKind};
use gridguard::dqn::checkpoint::{load_meta, sha256_hex, FORMAT_VERSION};
use gridguard::dqn::{Checkpoint, CheckpointMeta, Dims};
use gridguard::metrics::evaluate;
use gridguard::scenario::{generate_scenarios, StressProfile};
use gridguard::state::feature_len;
use gridguard::train::{log_csv, train_from, Resume, TrainOutput};
use gridguard::{ActionId, EnvConfig, Environment, Exec, Grid, SensitivitySet};
use serde::Serialize;

use crate::config::{RunConfig, Workbench};
use crate::service::{self, SessionHandle};

#[derive(Debug, Parser)]
#[command(name = "gridguard", version, about = "Blackout-mitigation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a dueling DQN agent.
    Train(TrainArgs),
    /// Evaluate a policy over a scenario set and print metrics JSON.
    Eval(EvalArgs),
    /// Write synthetic scenario CSV files.
    GenScenarios(GenArgs),
    /// Dump PTDF and LODF matrices as CSV.
    Sens(SensArgs),
    /// Preview one action without applying it.
    Whatif(WhatifArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Environment steps; defaults to `train_steps` in the config.
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory; defaults to `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train once per `mu_line_sweep` value, each into its own subdirectory.
    #[arg(long)]
    sweep: bool,
    /// Continue from a saved checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Run config supplying defaults for grid, scenarios and env settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Scenario CSV files or directories.
    #[arg(long, num_args = 1..)]
    scenarios: Vec<PathBuf>,
    /// do-nothing, reconnection, physics-guided or random-explore.
    #[arg(long)]
    policy: PolicyKind,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the metrics JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of redispatchable units in the action catalog.
    #[arg(long)]
    redispatch_units: Option<usize>,
    /// Redispatch step in MW.
    #[arg(long)]
    redispatch_delta: Option<f64>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    length: usize,
    /// calm, daily or stress-ramp.
    #[arg(long)]
    profile: StressProfile,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    eta: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SensArgs {
    #[arg(long)]
    grid: PathBuf,
    /// CSV of `line,status` rows; lines not listed stay in service.
    #[arg(long)]
    status: Option<PathBuf>,
    /// Write ptdf.csv and lodf.csv here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WhatifArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    action: usize,
    /// Scenario id; the first loaded scenario by default.
    #[arg(long)]
    scenario: Option<String>,
    /// Advance this many do-nothing steps before previewing.
    #[arg(long, default_value_t = 0)]
    step: usize,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory of console assets served at `/`.
    #[arg(long)]
    static_dir: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the subcommand. Usage errors
/// exit with 2, runtime failures with 1.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::GenScenarios(a) => cmd_gen(a),
        Command::Sens(a) => cmd_sens(a),
        Command::Whatif(a) => cmd_whatif(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn dims_for(grid: &Grid, env: &EnvConfig, actions: usize) -> Dims {
    Dims {
        kappa: env.kappa,
        features: feature_len(grid),
        actions,
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let bench = Workbench::from_config(&cfg)?;
    let steps = a.steps.unwrap_or(cfg.train_steps);
    let out = a.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let resume = match &a.resume {
        Some(p) => {
            let meta = load_meta(p).with_context(|| format!("reading metadata of {}", p.display()))?;
            let checkpoint = Checkpoint::load(p, None).with_context(|| format!("loading {}", p.display()))?;
            Some(Resume {
                checkpoint,
                critical_steps: meta.critical_steps,
            })
        }
        None => None,
    };
    if a.sweep {
        for &mu in &cfg.mu_line_sweep {
            let mut run = cfg.clone();
            run.env.mu_line = mu;
            let hash = sha256_hex(format!("{}:mu_line={mu}", cfg.source_hash).as_bytes());
            let dir = out.join(format!("mu_line_{mu}"));
            train_one(&bench, &run, steps, &dir, &hash, resume.clone())?;
        }
        Ok(())
    } else {
        train_one(&bench, &cfg, steps, &out, &cfg.source_hash, resume)
    }
}

fn train_one(
    bench: &Workbench,
    cfg: &RunConfig,
    steps: u64,
    dir: &Path,
    config_hash: &str,
    resume: Option<Resume>,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let setup = bench.train_setup(cfg);
    let TrainOutput {
        checkpoint,
        log,
        env_steps,
        critical_steps,
        updates,
        epsilon,
        beta,
    } = train_from(&setup, steps, resume)?;
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        step: env_steps,
        epsilon,
        learning_rate: checkpoint.adam.learning_rate(),
        beta,
        config_hash: config_hash.to_string(),
        critical_steps,
    };
    checkpoint.save(&dir.join("checkpoint.bin"), &meta)?;
    write(&dir.join("train_log.csv"), log_csv(&log))?;
    write(&dir.join("actions.csv"), bench.catalog.manifest_csv(&bench.grid))?;
    eprintln!(
        "{}: {env_steps} steps, {critical_steps} critical, {updates} updates, {} episodes",
        dir.display(),
        log.len()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = a.config.as_deref().map(RunConfig::load).transpose()?;
    let grid = a
        .grid
        .clone()
        .or_else(|| cfg.as_ref().map(|c| c.grid.clone()))
        .ok_or_else(|| anyhow!("--grid or --config is required"))?;
    let scenarios = if a.scenarios.is_empty() {
        cfg.as_ref().map(|c| c.scenarios.clone()).unwrap_or_default()
    } else {
        a.scenarios.clone()
    };
    if scenarios.is_empty() {
        bail!("--scenarios or --config is required");
    }
    let mut actions = cfg.as_ref().map(|c| c.actions).unwrap_or_default();
    if let Some(k) = a.redispatch_units {
        actions.count = k;
    }
    if a.redispatch_delta.is_some() {
        actions.delta = a.redispatch_delta;
    }
    let env = cfg.as_ref().map(|c| c.env.clone()).unwrap_or_default();
    let exec = if a.sequential { Exec::Sequential } else { cfg.as_ref().map(|c| c.exec).unwrap_or_default() };
    let bench = Workbench::load(&grid, &scenarios, actions)?;
    let policy = if a.policy.is_trained() {
        let path = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| anyhow!("policy {} needs --checkpoint", a.policy))?;
        let dims = dims_for(&bench.grid, &env, bench.catalog.len());
        let ck = Checkpoint::load(path, Some(dims)).with_context(|| format!("loading {}", path.display()))?;
        Policy::trained(a.policy, Arc::new(ck.online))
    } else {
        Policy::baseline(a.policy)
    };
    let metrics = evaluate(&policy, &bench.grid, &bench.catalog, &bench.scenarios, &env, a.seed, exec)?;
    let json = serde_json::to_string_pretty(&metrics)?;
    if let Some(p) = &a.out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        write(p, &json)?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let text = fs::read_to_string(&a.grid).with_context(|| format!("reading {}", a.grid.display()))?;
    let grid = Grid::parse(&text)?;
    let scenarios = generate_scenarios(&grid, a.count, a.length, a.profile, a.eta, a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for s in &scenarios {
        write(&a.out.join(format!("{}.csv", s.id)), s.to_csv(&grid))?;
    }
    eprintln!("wrote {} scenarios to {}", scenarios.len(), a.out.display());
    Ok(())
}

fn read_status(grid: &Grid, path: &Path) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut status = vec![true; grid.n_lines()];
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with(|c: char| c.is_alphabetic())) {
            continue;
        }
        let (id, st) = line
            .split_once(',')
            .ok_or_else(|| anyhow!("{}:{}: expected `line,status`", path.display(), n + 1))?;
        let id: usize = id.trim().parse().with_context(|| format!("{}:{}", path.display(), n + 1))?;
        let l = grid
            .line_index(id)
            .ok_or_else(|| anyhow!("{}:{}: unknown line {id}", path.display(), n + 1))?;
        status[l] = match st.trim() {
            "1" | "true" | "on" => true,
            "0" | "false" | "off" => false,
            other => bail!("{}:{}: bad status {other:?}", path.display(), n + 1),
        };
    }
    Ok(status)
}

fn num(v: f64) -> String {
    if v.is_nan() { "NaN".to_string() } else { format!("{v:.11e}") }
}

/// PTDF (lines × buses) and LODF (lines × outaged lines) with id headers.
pub fn sensitivity_csv(grid: &Grid, status: &[bool]) -> Result<(String, String)> {
    let s = SensitivitySet::compute(grid, status)?;
    let mut ptdf = String::from("line");
    for b in &grid.buses {
        let _ = write!(ptdf, ",{b}");
    }
    ptdf.push('\n');
    let mut lodf = String::from("line");
    for l in &grid.lines {
        let _ = write!(lodf, ",{}", l.id);
    }
    lodf.push('\n');
    for (l, line) in grid.lines.iter().enumerate() {
        let _ = write!(ptdf, "{}", line.id);
        for b in 0..grid.n_buses() {
            let _ = write!(ptdf, ",{}", num(s.ptdf(l, b).unwrap_or(f64::NAN)));
        }
        ptdf.push('\n');
        let _ = write!(lodf, "{}", line.id);
        for k in 0..grid.n_lines() {
            let _ = write!(lodf, ",{}", num(s.lodf(l, k).unwrap_or(f64::NAN)));
        }
        lodf.push('\n');
    }
    Ok((ptdf, lodf))
}

fn cmd_sens(a: SensArgs) -> Result<()> {
    let text = fs::read_to_string(&a.grid).with_context(|| format!("reading {}", a.grid.display()))?;
    let grid = Grid::parse(&text)?;
    let status = match &a.status {
        Some(p) => read_status(&grid, p)?,
        None => vec![true; grid.n_lines()],
    };
    let (ptdf, lodf) = sensitivity_csv(&grid, &status)?;
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write(&dir.join("ptdf.csv"), ptdf)?;
            write(&dir.join("lodf.csv"), lodf)?;
        }
        None => print!("{ptdf}\n{lodf}"),
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct WhatifReport {
    scenario_id: String,
    step: usize,
    action_id: usize,
    description: String,
    current_margins: Vec<f64>,
    predicted_flows: Vec<f64>,
    predicted_margins: Vec<f64>,
    reward_estimate: f64,
}

fn cmd_whatif(a: WhatifArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let bench = Workbench::from_config(&cfg)?;
    let scenario = match &a.scenario {
        Some(id) => bench
            .scenarios
            .iter()
            .find(|s| &s.id == id)
            .ok_or_else(|| anyhow!("no scenario {id}"))?,
        None => &bench.scenarios[0],
    };
    let mut env = Environment::reset(
        Arc::clone(&bench.grid),
        Arc::clone(&bench.catalog),
        cfg.env.clone(),
        Arc::clone(scenario),
    )?;
    for _ in 0..a.step {
        if env.is_done() {
            bail!("episode ended at step {}", env.state().step);
        }
        env.step(ActionId(0))?;
    }
    let id = ActionId(a.action);
    let action = env.check_legal(id).map_err(|r| anyhow!("action {id} is not legal: {r}"))?;
    let p = env.predict(action)?;
    let report = WhatifReport {
        scenario_id: scenario.id.clone(),
        step: env.state().step,
        action_id: id.0,
        description: bench.catalog.describe(&bench.grid, id),
        current_margins: env.state().risk_margin.clone(),
        predicted_flows: p.flows,
        predicted_margins: p.margins,
        reward_estimate: env.reward_estimate(id)?,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let bench = Workbench::from_config(&cfg)?;
    let network = match &a.checkpoint {
        Some(p) => {
            let dims = dims_for(&bench.grid, &cfg.env, bench.catalog.len());
            let ck = Checkpoint::load(p, Some(dims)).with_context(|| format!("loading {}", p.display()))?;
            Some(Arc::new(ck.online))
        }
        None => None,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let handle = SessionHandle::spawn(bench, cfg.env.clone(), network)?;
        service::serve(a.addr, service::router(handle, a.static_dir)).await
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("gridguard").chain(args.iter().copied()))
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let e = parse(&["eval", "--bogus"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(run(["gridguard", "train", "--nope"]), ExitCode::from(2));
    }

    #[test]
    fn policy_and_profile_names_parse() {
        let cli = parse(&["eval", "--grid", "g.json", "--scenarios", "a", "b", "--policy", "physics-guided"]).unwrap();
        match cli.command {
            Command::Eval(e) => {
                assert_eq!(e.policy, PolicyKind::PhysicsGuided);
                assert_eq!(e.scenarios.len(), 2);
            }
            other => panic!("{other:?}"),
        }
        assert!(parse(&["gen-scenarios", "--grid", "g", "--count", "1", "--length", "2", "--profile", "hot", "--seed", "1", "--out", "o"]).is_err());
    }

    #[test]
    fn sensitivity_csv_marks_bridges() {
        let g = gridguard::fixtures::triangle();
        let (ptdf, lodf) = sensitivity_csv(&g, &[true, false, true]).unwrap();
        let header = ptdf.lines().next().unwrap();
        assert_eq!(header.split(',').count(), 1 + g.n_buses());
        assert_eq!(lodf.lines().count(), 1 + g.n_lines());
        assert!(lodf.lines().nth(1).unwrap().contains("NaN"));
        assert!(ptdf.contains("e-1") || ptdf.contains("e0"));
    }
}
