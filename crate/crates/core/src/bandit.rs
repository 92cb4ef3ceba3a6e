//! Distracting multi-armed bandit.
//!
//! Each episode samples fresh arm probabilities. The observation carries no
//! reward information at all: it is a block of standard-normal noise whose first
//! half is redrawn every step and whose second half is drawn once at reset.

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Component};

/// How arm probabilities are drawn at the start of every episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScheme {
    /// Two arms with probabilities `(p, 1 - p)`, `p ~ U[0, 1]`.
    Complementary,
    /// Every arm independently `U[0, 1]`.
    Independent,
    /// The same probabilities every episode.
    Fixed(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditSpec {
    pub num_arms: usize,
    pub episode_len: usize,
    pub noise_dim: usize,
    pub reward_scheme: RewardScheme,
    pub seed: u64,
}

impl Default for BanditSpec {
    fn default() -> Self {
        BanditSpec {
            num_arms: 2,
            episode_len: 100,
            noise_dim: 32,
            reward_scheme: RewardScheme::Complementary,
            seed: 0,
        }
    }
}

/// Index ranges of the two noise halves inside an observation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoiseLayout {
    pub per_step: Range<usize>,
    pub per_episode: Range<usize>,
}

impl NoiseLayout {
    pub fn new(noise_dim: usize) -> Self {
        let half = noise_dim / 2;
        NoiseLayout {
            per_step: 0..half,
            per_episode: half..noise_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationVector {
    pub noise: Vec<f64>,
    pub layout: NoiseLayout,
}

impl BanditSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_arms < 2 {
            return Err(Error::config("bandit.num_arms", "must be at least 2"));
        }
        if self.episode_len < 1 {
            return Err(Error::config("bandit.episode_len", "must be at least 1"));
        }
        if self.noise_dim % 2 != 0 {
            return Err(Error::config("bandit.noise_dim", "must be even"));
        }
        match &self.reward_scheme {
            RewardScheme::Complementary if self.num_arms != 2 => Err(Error::config(
                "bandit.reward_scheme",
                "complementary probabilities need exactly 2 arms",
            )),
            RewardScheme::Fixed(p) if p.len() != self.num_arms => Err(Error::config(
                "bandit.reward_scheme",
                format!("fixed probabilities have {} entries for {} arms", p.len(), self.num_arms),
            )),
            RewardScheme::Fixed(p) if p.iter().any(|v| !(0.0..=1.0).contains(v)) => Err(
                Error::config("bandit.reward_scheme", "fixed probabilities must lie in [0, 1]"),
            ),
            _ => Ok(()),
        }
    }

    pub fn layout(&self) -> NoiseLayout {
        NoiseLayout::new(self.noise_dim)
    }

    /// Starts a new episode. Everything random in the episode flows from
    /// `(self.seed, episode_seed)`.
    pub fn reset(&self, episode_seed: u64) -> (EpisodeState, ObservationVector) {
        let mut rng = seed::rng(self.seed, episode_seed, Component::Environment);
        let arm_probs = match &self.reward_scheme {
            RewardScheme::Complementary => {
                let p: f64 = rng.random();
                vec![p, 1.0 - p]
            }
            RewardScheme::Independent => (0..self.num_arms).map(|_| rng.random()).collect(),
            RewardScheme::Fixed(p) => p.clone(),
        };
        let layout = self.layout();
        let fixed_noise = (0..layout.per_episode.len())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let mut state = EpisodeState {
            arm_probs,
            fixed_noise,
            step_index: 0,
            episode_len: self.episode_len,
            layout,
            rng,
        };
        let obs = state.observe();
        (state, obs)
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeState {
    pub arm_probs: Vec<f64>,
    pub fixed_noise: Vec<f64>,
    pub step_index: usize,
    episode_len: usize,
    layout: NoiseLayout,
    rng: ChaCha8Rng,
}

impl EpisodeState {
    fn observe(&mut self) -> ObservationVector {
        let mut noise = Vec::with_capacity(self.layout.per_episode.end);
        for _ in self.layout.per_step.clone() {
            noise.push(self.rng.sample(StandardNormal));
        }
        noise.extend_from_slice(&self.fixed_noise);
        ObservationVector {
            noise,
            layout: self.layout.clone(),
        }
    }

    pub fn num_arms(&self) -> usize {
        self.arm_probs.len()
    }

    pub fn is_done(&self) -> bool {
        self.step_index >= self.episode_len
    }

    /// Pulls `action`; returns the next observation, the Bernoulli reward and
    /// whether the episode just ended.
    pub fn step(&mut self, action: usize) -> Result<(ObservationVector, f64, bool)> {
        if action >= self.arm_probs.len() {
            return Err(Error::usage(format!(
                "action {action} out of range for {} arms",
                self.arm_probs.len()
            )));
        }
        if self.is_done() {
            return Err(Error::usage("step called after the episode finished"));
        }
        let u: f64 = self.rng.random();
        let reward = if u < self.arm_probs[action] { 1.0 } else { 0.0 };
        self.step_index += 1;
        let obs = self.observe();
        Ok((obs, reward, self.is_done()))
    }

    /// Per-step expected reward of a policy that knows the arm probabilities.
    pub fn oracle_expected_reward(&self) -> f64 {
        self.arm_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
