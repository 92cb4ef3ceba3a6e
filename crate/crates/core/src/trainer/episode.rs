use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::curve::{episodes_to_threshold, CurveRow, LearningCurve, RunMeta};
use super::{Bptt, RunConfig};
use crate::agent::{Adam, Advantages, Agent, StepRecord, Trajectory};
use crate::bandit::BanditSpec;
use crate::diffcore::{GradientTable, NodeId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::masks::{InputMask, PreparedMask};
use crate::reservoir::ReservoirWeights;
use crate::seed::{self, Component};

/// Feedback channels appended to the noise block: one-hot previous action,
/// previous reward, normalized step counter and a constant bias.
pub fn feedback_width(num_arms: usize) -> usize {
    num_arms + 3
}

pub fn input_dim(bandit: &BanditSpec) -> usize {
    bandit.noise_dim + feedback_width(bandit.num_arms)
}

/// Receives rows as they are produced so callers can stream them to disk.
pub trait RunSink {
    /// Before the first episode.
    fn start(&mut self, _run: &Run) -> Result<()> {
        Ok(())
    }
    /// After the last episode, with the trained parameters.
    fn finish(&mut self, _run: &Run) -> Result<()> {
        Ok(())
    }
    fn row(&mut self, _row: &CurveRow) -> Result<()> {
        Ok(())
    }
    fn mask_snapshot(&mut self, _episode: usize, _values: &[f64]) -> Result<()> {
        Ok(())
    }
    /// Called with the last parameters that produced finite gradients.
    fn checkpoint(&mut self, _store: &ParamStore) -> Result<()> {
        Ok(())
    }
}

pub struct NullSink;

impl RunSink for NullSink {}

/// Result of one rollout recorded on a tape.
pub struct Rollout {
    pub trajectory: Trajectory,
    pub prepared: PreparedMask,
    pub actions: Vec<usize>,
    pub total_reward: f64,
    pub oracle_reward: f64,
    /// Mask input vectors, in step order.
    pub inputs: Vec<Vec<f64>>,
}

/// Everything one `(config, seed)` run owns.
pub struct Run {
    config: RunConfig,
    seed: u64,
    env: BanditSpec,
    reservoir: ReservoirWeights,
    mask: InputMask,
    agent: Agent,
    store: ParamStore,
    adam: Adam,
    policy_rng: ChaCha8Rng,
}

impl Run {
    pub fn new(config: &RunConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.input_dim();
        let env = BanditSpec {
            seed: seed::derive(seed, config.bandit.seed, Component::Environment),
            ..config.bandit.clone()
        };
        let reservoir =
            ReservoirWeights::build(&config.reservoir, d, seed::derive(seed, 0, Component::Reservoir))?;
        let mut store = ParamStore::new();
        let mask = InputMask::init(&config.mask, d, seed::derive(seed, 0, Component::Mask), &mut store)?;
        let agent = Agent::init(
            &config.agent,
            reservoir.size(),
            config.bandit.num_arms,
            seed::derive(seed, 0, Component::Agent),
            &mut store,
        )?;
        let adam = Adam::new(&store, &config.agent);
        Ok(Run {
            config: config.clone(),
            seed,
            env,
            reservoir,
            mask,
            agent,
            store,
            adam,
            policy_rng: seed::rng(seed, 0, Component::Policy),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn reservoir(&self) -> &ReservoirWeights {
        &self.reservoir
    }

    pub fn mask(&self) -> &InputMask {
        &self.mask
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn policy_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.policy_rng
    }

    /// Samples an action index from a probability vector.
    pub fn sample_action(probs: &[f64], rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Plays one episode on `tape`. `choose` maps `(step, probabilities)` to an
    /// action; pass [`Run::sample_action`] through a closure for on-policy play.
    pub fn rollout<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        episode: u64,
        mut choose: impl FnMut(usize, &[f64]) -> usize,
    ) -> Result<Rollout> {
        let arms = self.config.bandit.num_arms;
        let len = self.config.bandit.episode_len;
        let prepared = self.mask.prepare(tape)?;
        let (mut state, mut obs) = self.env.reset(episode);
        let oracle_reward = len as f64 * state.oracle_expected_reward();

        let mut h = tape.input(vec![0.0; self.reservoir.size()]);
        let mut prev_action: Option<usize> = None;
        let mut prev_reward = 0.0;
        let mut traj = Trajectory::default();
        let mut actions = Vec::with_capacity(len);
        let mut inputs = Vec::with_capacity(len);
        let mut total = 0.0;

        for t in 0..len {
            let mut x = Vec::with_capacity(self.mask.input_dim());
            x.extend_from_slice(&obs.noise);
            for a in 0..arms {
                x.push(if prev_action == Some(a) { 1.0 } else { 0.0 });
            }
            x.push(prev_reward);
            x.push(t as f64 / len as f64);
            x.push(1.0);
            inputs.push(x.clone());

            let xn = tape.input(x);
            let masked = self.mask.apply_prepared(tape, &prepared, xn)?;
            let h_prev = match self.config.bptt {
                Bptt::Full => h,
                Bptt::OneStep => tape.detach(h),
            };
            h = self.reservoir.advance(tape, h_prev, masked)?;
            let policy = self.agent.policy_value(tape, h)?;
            let action = choose(t, tape.value(policy.probs));
            let (next, reward, _) = state.step(action)?;
            traj.steps.push(StepRecord {
                action,
                reward,
                policy,
                value_estimate: tape.value(policy.value)[0],
            });
            actions.push(action);
            total += reward;
            prev_action = Some(action);
            prev_reward = reward;
            obs = next;
        }
        Ok(Rollout {
            trajectory: traj,
            prepared,
            actions,
            total_reward: total,
            oracle_reward,
            inputs,
        })
    }

    /// Full episode loss for a rollout.
    pub fn loss<'a>(&'a self, tape: &mut Tape<'a>, rollout: &Rollout, advantages: &Advantages) -> Result<NodeId> {
        self.agent
            .episode_loss(tape, &rollout.trajectory, rollout.prepared.penalty(), advantages)
    }

    /// One on-policy episode followed by one optimizer step.
    fn train_episode(&mut self, episode: u64) -> Result<(f64, f64, f64)> {
        let (total, oracle, loss_value, grads, rng) = {
            let mut tape = Tape::new(&self.store);
            let mut rng = self.policy_rng.clone();
            let this = &*self;
            let rollout = this.rollout(&mut tape, episode, |_, p| Self::sample_action(p, &mut rng))?;
            let loss = this.loss(&mut tape, &rollout, &Advantages::FromValues)?;
            let loss_value = tape.scalar(loss);
            if !loss_value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {loss_value} at episode {episode}"
                )));
            }
            let mut grads = GradientTable::zeros_like(&self.store);
            tape.backward_into(loss, &mut grads)?;
            (rollout.total_reward, rollout.oracle_reward, loss_value, grads, rng)
        };
        self.policy_rng = rng;
        self.adam.step(&mut self.store, &grads, self.config.agent.lr)?;
        Ok((total, oracle, loss_value))
    }

    pub fn train(&mut self, sink: &mut dyn RunSink) -> Result<LearningCurve> {
        let start = Instant::now();
        let window = self.config.eval_window;
        let threshold = self.config.convergence_threshold;
        let snapshot_every = self.config.snapshot_interval();
        let res_start = self.reservoir.fingerprint();
        let src_start = self.mask.source_vector().map(fingerprint);
        sink.start(self)?;

        let mut rows: Vec<CurveRow> = Vec::with_capacity(self.config.num_episodes);
        let mut snapshots = Vec::new();
        let mut scores: Vec<f64> = Vec::with_capacity(self.config.num_episodes);
        let mut window_sum = 0.0;
        let mut converged = None;

        for episode in 0..self.config.num_episodes {
            let mask_values = self.mask.mask_values(&self.store);
            if episode % snapshot_every == 0 {
                sink.mask_snapshot(episode, &mask_values)?;
                snapshots.push((episode, mask_values.clone()));
            }
            let (total, oracle, loss) = match self.train_episode(episode as u64) {
                Ok(v) => v,
                Err(e) => {
                    sink.checkpoint(&self.store)?;
                    return Err(e);
                }
            };
            let score = if oracle > 0.0 {
                total / oracle
            } else if total == 0.0 {
                1.0
            } else {
                0.0
            };
            scores.push(score);
            window_sum += score;
            if episode >= window {
                window_sum -= scores[episode - window];
            }
            let filled = (episode + 1).min(window);
            let row = CurveRow {
                episode,
                total_reward: total,
                oracle_reward: oracle,
                score,
                smoothed_score: window_sum / filled as f64,
                loss,
                mean_mask: mask_values.iter().sum::<f64>() / mask_values.len() as f64,
            };
            sink.row(&row)?;
            rows.push(row);
            if converged.is_none() && episode + 1 >= window {
                converged = episodes_to_threshold(&scores[episode + 1 - window..], threshold, window)?
                    .map(|_| episode);
                if converged.is_some() && self.config.stop_at_convergence {
                    break;
                }
            }
        }

        if self.reservoir.fingerprint() != res_start {
            return Err(Error::Numerical("reservoir weights changed during training".into()));
        }
        let src_end = self.mask.source_vector().map(fingerprint);
        if src_end != src_start {
            return Err(Error::Numerical("EPIC source vector changed during training".into()));
        }
        let final_mask = self.mask.mask_values(&self.store);
        let last_episode = rows.len();
        if snapshots.last().map(|(e, _)| *e) != Some(last_episode) {
            sink.mask_snapshot(last_episode, &final_mask)?;
            snapshots.push((last_episode, final_mask));
        }

        sink.finish(self)?;
        let spec = self.mask.spec();
        Ok(LearningCurve {
            rows,
            snapshots,
            episodes_to_threshold: converged,
            meta: RunMeta {
                label: self.config.label(),
                kind: spec.kind,
                u_len: self.mask.source_vector().map_or(0, <[f64]>::len),
                noise_dim: self.config.bandit.noise_dim,
                seed: self.seed,
                config_hash: self.config.config_hash(),
                wall_time_s: start.elapsed().as_secs_f64(),
                reservoir_fingerprint: (res_start, self.reservoir.fingerprint()),
                source_fingerprint: src_start.zip(src_end),
            },
        })
    }
}

fn fingerprint(values: &[f64]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}
