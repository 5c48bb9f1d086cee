//! Run configuration: one TOML document with every tunable section.
//!
//! ```toml
//! format = 1
//! seed = 0
//! scenarios = "scenarios.toml"   # file or directory of family files
//! checkpoint = "policy.ckpt"     # optional
//!
//! [agent]   # AgentParams
//! [sac]     # SacParams
//! [train]   # TrainParams
//! [eval]    # EvalParams
//! ```
//!
//! Relative paths are resolved against the directory holding the file.
//! Every section and key is optional.

use crate::error::{Error, Result};
use crate::eval::EvalParams;
use crate::hybrid::AgentParams;
use crate::sac::{SacParams, TrainParams};
use crate::world::{BenchmarkConfig, FamilyFile};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format: u32,
    pub seed: u64,
    pub scenarios: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub agent: AgentParams,
    pub sac: SacParams,
    pub train: TrainParams,
    pub eval: EvalParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format: Self::FORMAT,
            seed: 0,
            scenarios: None,
            checkpoint: None,
            agent: AgentParams::default(),
            sac: SacParams::default(),
            train: TrainParams::default(),
            eval: EvalParams::default(),
        }
    }
}

impl RunConfig {
    pub const FORMAT: u32 = 1;

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        if cfg.format != Self::FORMAT {
            return Err(Error::Config(format!(
                "unsupported config format {} (expected {})",
                cfg.format,
                Self::FORMAT
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.scenarios, &mut cfg.checkpoint].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.sac.validate()?;
        if self.sac.obs != self.agent.obs {
            return Err(Error::Config("sac.obs and agent.obs must match".into()));
        }
        if self.agent.decision_period == 0 {
            return Err(Error::Config("agent.decision_period must be positive".into()));
        }
        if !(self.eval.t_max > 0.0 && self.train.t_max > 0.0) {
            return Err(Error::Config("t_max must be positive".into()));
        }
        Ok(())
    }
}

/// Benchmark from a single scenario file or a directory of per-family files.
pub fn load_benchmark(path: &Path) -> Result<BenchmarkConfig> {
    if !path.is_dir() {
        return BenchmarkConfig::load(path);
    }
    let mut names: Vec<PathBuf> = std::fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    names.retain(|p| p.extension().is_some_and(|e| e == "toml"));
    names.sort();
    let files = names
        .iter()
        .map(|p| FamilyFile::from_toml(&std::fs::read_to_string(p)?))
        .collect::<Result<Vec<_>>>()?;
    BenchmarkConfig::from_family_files(&files)
}
