//! TOML experiment files.
//!
//! Every key is optional; an empty file resolves to the default run. The
//! run-level keys sit at the top level (`num_episodes`, `[mask]`, ...) and
//! three extra tables control the suite:
//!
//! ```toml
//! num_episodes = 20000
//! seeds = [0, 1, 2, 3, 4]
//!
//! [bandit]
//! noise_dim = 32
//!
//! [mask]
//! kind = "epic"
//! u_multiplier = 8
//!
//! [grid]            # cartesian product, empty lists keep the base value
//! mask_kinds = ["identity", "layernorm", "vector_filter", "epic"]
//! noise_dims = [32, 64]
//! u_multipliers = [4, 8]   # EPIC entries only
//!
//! [suite]
//! out_dir = "runs/noise32"
//! parallelism = 0          # worker threads, 0 = one per core
//! dump_reservoir = false
//!
//! [plot]
//! smooth = 100
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentSpec;
use crate::bandit::BanditSpec;
use crate::error::{Error, Result};
use crate::masks::{MaskKind, MaskSpec};
use crate::reservoir::ReservoirSpec;
use crate::trainer::{Bptt, RunConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSpec {
    pub out_dir: Option<PathBuf>,
    pub parallelism: usize,
    /// Write each run's reservoir matrices to the binary container.
    pub dump_reservoir: bool,
    /// Write final agent and mask parameters to the binary container.
    pub dump_checkpoint: bool,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            out_dir: None,
            parallelism: 0,
            dump_reservoir: false,
            dump_checkpoint: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSpec {
    /// Trailing-mean window; 0 uses `eval_window`.
    pub smooth: usize,
    pub width: u32,
    pub height: u32,
    pub title: String,
}

impl Default for PlotSpec {
    fn default() -> Self {
        PlotSpec {
            smooth: 0,
            width: 720,
            height: 440,
            title: String::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub mask_kinds: Vec<MaskKind>,
    pub noise_dims: Vec<usize>,
    pub u_multipliers: Vec<usize>,
}

/// A base run, a grid over it and the suite/plot settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_episodes: usize,
    pub seeds: Vec<u64>,
    pub eval_window: usize,
    pub convergence_threshold: f64,
    pub bptt: Bptt,
    pub mask_snapshot_interval: usize,
    pub stop_at_convergence: bool,
    pub bandit: BanditSpec,
    pub reservoir: ReservoirSpec,
    pub mask: MaskSpec,
    pub agent: AgentSpec,
    pub grid: GridSpec,
    pub suite: SuiteSpec,
    pub plot: PlotSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_run(RunConfig::default())
    }
}

impl ExperimentConfig {
    pub fn from_run(run: RunConfig) -> Self {
        ExperimentConfig {
            num_episodes: run.num_episodes,
            seeds: run.seeds,
            eval_window: run.eval_window,
            convergence_threshold: run.convergence_threshold,
            bptt: run.bptt,
            mask_snapshot_interval: run.mask_snapshot_interval,
            stop_at_convergence: run.stop_at_convergence,
            bandit: run.bandit,
            reservoir: run.reservoir,
            mask: run.mask,
            agent: run.agent,
            grid: GridSpec::default(),
            suite: SuiteSpec::default(),
            plot: PlotSpec::default(),
        }
    }

    /// The run described by the top-level keys, before grid expansion.
    pub fn base_run(&self) -> RunConfig {
        RunConfig {
            bandit: self.bandit.clone(),
            reservoir: self.reservoir.clone(),
            mask: self.mask.clone(),
            agent: self.agent.clone(),
            num_episodes: self.num_episodes,
            seeds: self.seeds.clone(),
            eval_window: self.eval_window,
            convergence_threshold: self.convergence_threshold,
            bptt: self.bptt,
            mask_snapshot_interval: self.mask_snapshot_interval,
            stop_at_convergence: self.stop_at_convergence,
        }
    }

    /// Grid expansion in `noise_dims × mask_kinds × u_multipliers` order.
    pub fn runs(&self) -> Vec<RunConfig> {
        let base = self.base_run();
        let noise_dims = if self.grid.noise_dims.is_empty() {
            vec![base.bandit.noise_dim]
        } else {
            self.grid.noise_dims.clone()
        };
        let kinds = if self.grid.mask_kinds.is_empty() {
            vec![base.mask.kind]
        } else {
            self.grid.mask_kinds.clone()
        };
        let mut out = Vec::new();
        for &noise in &noise_dims {
            for &kind in &kinds {
                let us = if kind == MaskKind::Epic && !self.grid.u_multipliers.is_empty() {
                    self.grid.u_multipliers.clone()
                } else {
                    vec![base.mask.u_multiplier]
                };
                for u in us {
                    let mut run = base.clone();
                    run.bandit.noise_dim = noise;
                    run.mask.kind = kind;
                    run.mask.u_multiplier = u;
                    run.mask = run.mask.resolved();
                    out.push(run);
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for run in self.runs() {
            run.validate()?;
        }
        if self.plot.width < 100 || self.plot.height < 100 {
            return Err(Error::config("plot.width", "plot must be at least 100x100"));
        }
        Ok(())
    }

    /// Per-kind coefficients made explicit. With a mask-kind grid an unset
    /// `reg_coef` stays unset so each expanded run gets its own kind's default.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if c.grid.mask_kinds.is_empty() {
            c.mask = c.mask.resolved();
        }
        c
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn smooth_window(&self) -> usize {
        if self.plot.smooth == 0 {
            self.eval_window
        } else {
            self.plot.smooth
        }
    }
}

/// Parses and validates a config document. Errors name the offending key.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    cfg.validate()?;
    Ok(cfg.resolved())
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// Writes the resolved config next to a run's outputs.
pub fn write_resolved(config: &ExperimentConfig, path: &Path) -> Result<()> {
    std::fs::write(path, config.resolved().to_toml())?;
    Ok(())
}

fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let msg = e.message().trim().to_string();
    let Some(span) = e.span() else {
        return Error::config("<document>", msg);
    };
    let line_no = text[..span.start].matches('\n').count() + 1;
    let mut table = String::new();
    let mut key = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if i + 1 > line_no {
            break;
        }
        if t.starts_with('[') {
            table = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if i + 1 == line_no {
            key = t.split('=').next().unwrap_or("").trim().to_string();
        }
    }
    let full = match (table.is_empty(), key.is_empty() || key.starts_with('[')) {
        (_, true) if !table.is_empty() => table,
        (true, _) => key,
        (false, false) => format!("{table}.{key}"),
        _ => "<document>".to_string(),
    };
    Error::config(full, format!("{msg} (line {line_no})"))
}
