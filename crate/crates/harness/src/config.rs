//! Run configuration and the loaded workbench it describes.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use gridguard::dqn::checkpoint::sha256_hex;
use gridguard::scenario::load_scenarios;
use gridguard::train::{TrainConfig, TrainSetup};
use gridguard::{ActionCatalog, EnvConfig, Exec, GenActionSpec, Grid, Scenario};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: PathBuf,
    /// Scenario CSV files or directories of them, loaded in order.
    pub scenarios: Vec<PathBuf>,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub dqn: TrainConfig,
    #[serde(default)]
    pub actions: GenActionSpec,
    pub seed: u64,
    /// Environment-step budget for `train` when `--steps` is not given.
    #[serde(default = "default_steps")]
    pub train_steps: u64,
    /// Line-switch cost weights for `train --sweep`.
    #[serde(default = "default_sweep")]
    pub mu_line_sweep: Vec<f64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub exec: Exec,
    /// Hash of the config as written, before path resolution.
    #[serde(skip)]
    pub source_hash: String,
}

fn default_steps() -> u64 {
    20_000
}

fn default_sweep() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 1.5]
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.source_hash = cfg.hash();
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.grid);
        cfg.scenarios.iter_mut().for_each(resolve);
        resolve(&mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.grid.exists() {
            bail!("grid file {} does not exist", self.grid.display());
        }
        if self.scenarios.is_empty() {
            bail!("no scenario paths configured");
        }
        for s in &self.scenarios {
            if !s.exists() {
                bail!("scenario path {} does not exist", s.display());
            }
        }
        self.env.validate().context("env config")?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

/// Grid, action catalog and scenarios loaded from disk.
#[derive(Debug, Clone)]
pub struct Workbench {
    pub grid: Arc<Grid>,
    pub catalog: Arc<ActionCatalog>,
    pub scenarios: Vec<Arc<Scenario>>,
}

impl Workbench {
    pub fn load(grid_path: &Path, scenarios: &[PathBuf], actions: GenActionSpec) -> Result<Self> {
        let text =
            std::fs::read_to_string(grid_path).with_context(|| format!("reading {}", grid_path.display()))?;
        let grid = Grid::parse(&text).with_context(|| format!("parsing {}", grid_path.display()))?;
        let catalog = ActionCatalog::new(&grid, actions).context("building the action catalog")?;
        let mut all = Vec::new();
        for p in scenarios {
            let loaded = load_scenarios(&grid, p).with_context(|| format!("loading {}", p.display()))?;
            all.extend(loaded.into_iter().map(Arc::new));
        }
        if all.is_empty() {
            bail!("no scenarios found");
        }
        Ok(Self {
            grid: Arc::new(grid),
            catalog: Arc::new(catalog),
            scenarios: all,
        })
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Self::load(&cfg.grid, &cfg.scenarios, cfg.actions)
    }

    pub fn train_setup(&self, cfg: &RunConfig) -> TrainSetup {
        TrainSetup {
            grid: Arc::clone(&self.grid),
            catalog: Arc::clone(&self.catalog),
            scenarios: self.scenarios.clone(),
            env: cfg.env.clone(),
            train: cfg.dqn.clone(),
            seed: cfg.seed,
            exec: cfg.exec,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, extra: &str) -> PathBuf {
        std::fs::write(dir.join("g.json"), gridguard::fixtures::TRIANGLE_JSON).unwrap();
        std::fs::create_dir_all(dir.join("sc")).unwrap();
        let path = dir.join("run.json");
        std::fs::write(
            &path,
            format!(r#"{{"grid": "g.json", "scenarios": ["sc"], "seed": 3, "output_dir": "out"{extra}}}"#),
        )
        .unwrap();
        path
    }

    #[test]
    fn paths_resolve_against_the_config_and_hash_ignores_location() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ca = RunConfig::load(&write_config(a.path(), "")).unwrap();
        let cb = RunConfig::load(&write_config(b.path(), "")).unwrap();
        assert_eq!(ca.grid, a.path().join("g.json"));
        assert_eq!(ca.output_dir, a.path().join("out"));
        assert_eq!(ca.source_hash, cb.source_hash);
        assert_eq!(ca.mu_line_sweep, [0.0, 0.5, 1.0, 1.5]);
        let cc = RunConfig::load(&write_config(b.path(), r#", "train_steps": 9"#)).unwrap();
        assert_ne!(cc.source_hash, cb.source_hash);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let d = tempfile::tempdir().unwrap();
        assert!(RunConfig::load(&write_config(d.path(), r#", "colour": 1"#)).is_err());
        assert!(RunConfig::load(&write_config(d.path(), r#", "env": {"eta": 0.2, "nu": 0.5}"#)).is_err());
        let p = write_config(d.path(), "");
        std::fs::remove_file(d.path().join("g.json")).unwrap();
        assert!(RunConfig::load(&p).is_err());
    }
}
