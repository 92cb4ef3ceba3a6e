//! Episode loop, per-episode updates, convergence bookkeeping and multi-run suites.

mod curve;
mod episode;
mod suite;

use serde::{Deserialize, Serialize};

use crate::agent::AgentSpec;
use crate::bandit::BanditSpec;
use crate::error::{Error, Result};
use crate::masks::MaskSpec;
use crate::reservoir::ReservoirSpec;

pub use curve::{episodes_to_threshold, CurveRow, LearningCurve, RunMeta};
pub use episode::{feedback_width, input_dim, Rollout, Run, RunSink, NullSink};
pub use suite::{
    median, run_suite, run_suite_sequential, run_suite_sequential_with, run_suite_with,
    ConvergenceReport, KindSummary, RunOutcome, RunResult, SinkFactory,
};

#[cfg(feature = "parallel")]
pub use suite::{run_suite_parallel, run_suite_parallel_with};

/// How far gradients travel back through the reservoir recursion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bptt {
    /// Through every step of the episode.
    Full,
    /// Only through the current step's input injection.
    OneStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub bandit: BanditSpec,
    pub reservoir: ReservoirSpec,
    pub mask: MaskSpec,
    pub agent: AgentSpec,
    pub num_episodes: usize,
    pub seeds: Vec<u64>,
    pub eval_window: usize,
    pub convergence_threshold: f64,
    pub bptt: Bptt,
    /// Episodes between mask snapshots; `0` means every `eval_window` episodes.
    pub mask_snapshot_interval: usize,
    /// End a run at the episode where it first crosses the threshold.
    pub stop_at_convergence: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            bandit: BanditSpec::default(),
            reservoir: ReservoirSpec::default(),
            mask: MaskSpec::default(),
            agent: AgentSpec::default(),
            num_episodes: 20_000,
            seeds: vec![0],
            eval_window: 100,
            convergence_threshold: 0.9,
            bptt: Bptt::Full,
            mask_snapshot_interval: 0,
            stop_at_convergence: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.bandit.validate()?;
        self.reservoir.validate()?;
        self.mask.validate()?;
        self.agent.validate()?;
        if self.eval_window < 1 {
            return Err(Error::config("eval_window", "must be at least 1"));
        }
        if self.num_episodes < self.eval_window {
            return Err(Error::config(
                "num_episodes",
                format!("num_episodes >= eval_window violated ({} < {})", self.num_episodes, self.eval_window),
            ));
        }
        if !(self.convergence_threshold > 0.0 && self.convergence_threshold <= 1.0) {
            return Err(Error::config("convergence_threshold", "must lie in (0, 1]"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        Ok(())
    }

    pub fn snapshot_interval(&self) -> usize {
        if self.mask_snapshot_interval == 0 {
            self.eval_window
        } else {
            self.mask_snapshot_interval
        }
    }

    /// Input width seen by the mask and the reservoir.
    pub fn input_dim(&self) -> usize {
        input_dim(&self.bandit)
    }

    pub fn label(&self) -> String {
        self.mask.label(self.input_dim())
    }

    /// FNV-1a over the canonical TOML rendering.
    pub fn config_hash(&self) -> u64 {
        let text = toml::to_string(self).unwrap_or_default();
        let mut h = 0xCBF2_9CE4_8422_2325u64;
        for byte in text.bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }
}

/// Trains one run to completion and returns its learning curve.
pub fn train(config: &RunConfig, seed: u64) -> Result<LearningCurve> {
    Run::new(config, seed)?.train(&mut NullSink)
}
