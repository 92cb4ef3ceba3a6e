//! Entropy-regularized actor-critic readout of the reservoir state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{GradientTable, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::seed::{self, Component};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSpec {
    pub lr: f64,
    pub beta_e: f64,
    pub n_hidden: usize,
    pub k_layers: usize,
    pub discount: f64,
    pub value_coef: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for AgentSpec {
    fn default() -> Self {
        AgentSpec {
            lr: 1e-4,
            beta_e: 0.001,
            n_hidden: 256,
            k_layers: 2,
            discount: 0.9,
            value_coef: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl AgentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::config("agent.lr", "must be positive"));
        }
        if !(self.beta_e >= 0.0) {
            return Err(Error::config("agent.beta_e", "must be non-negative"));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::config("agent.discount", "must lie in (0, 1]"));
        }
        if self.n_hidden < 1 {
            return Err(Error::config("agent.n_hidden", "must be at least 1"));
        }
        if !(self.value_coef >= 0.0) {
            return Err(Error::config("agent.value_coef", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("agent.adam_beta1", "Adam decay rates must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("agent.adam_eps", "must be positive"));
        }
        Ok(())
    }
}

/// One dense layer: `(weight, bias)` ids in the store.
pub type Layer = (ParamId, ParamId);

#[derive(Clone, Debug, PartialEq)]
pub struct AgentParams {
    pub actor: Vec<Layer>,
    pub critic: Vec<Layer>,
}

#[derive(Clone, Copy, Debug)]
pub struct PolicyValue {
    pub probs: NodeId,
    pub log_probs: NodeId,
    pub value: NodeId,
}

#[derive(Clone, Debug)]
pub struct StepRecord {
    pub action: usize,
    pub reward: f64,
    pub policy: PolicyValue,
    /// `V(s_t)` at rollout time.
    pub value_estimate: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// `R_t = r_t + γ R_{t+1}`.
    pub fn discounted_returns(&self, discount: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.steps.len()];
        let mut acc = 0.0;
        for (t, step) in self.steps.iter().enumerate().rev() {
            acc = step.reward + discount * acc;
            out[t] = acc;
        }
        out
    }
}

/// Where the actor's advantage coefficients come from.
#[derive(Clone, Debug)]
pub enum Advantages {
    /// `R_t - V(s_t)` from the rollout's own value estimates.
    FromValues,
    /// Externally supplied constants (gradient checks freeze them).
    Fixed(Vec<f64>),
}

pub struct Agent {
    spec: AgentSpec,
    params: AgentParams,
    state_dim: usize,
    num_actions: usize,
}

fn mlp_layers(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    prefix: &str,
    sizes: &[usize],
) -> Vec<Layer> {
    let last = sizes.len() - 2;
    sizes
        .windows(2)
        .enumerate()
        .map(|(l, io)| {
            let (fan_in, fan_out) = (io[0], io[1]);
            let w = if l == last {
                vec![0.0; fan_in * fan_out]
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect()
            };
            (
                store.add(format!("{prefix}.{l}.w"), Tensor::from_vec(fan_out, fan_in, w)),
                store.add(format!("{prefix}.{l}.b"), Tensor::vector(vec![0.0; fan_out])),
            )
        })
        .collect()
}

impl Agent {
    /// Hidden layers `U(±1/√fan_in)`, output layers and all biases zero.
    pub fn init(
        spec: &AgentSpec,
        state_dim: usize,
        num_actions: usize,
        seed: u64,
        store: &mut ParamStore,
    ) -> Result<Self> {
        spec.validate()?;
        if state_dim < 1 || num_actions < 1 {
            return Err(Error::config("agent", "state and action dimensions must be at least 1"));
        }
        let mut rng = seed::rng(seed, 0, Component::Agent);
        let mut sizes = vec![state_dim];
        sizes.extend(std::iter::repeat_n(spec.n_hidden, spec.k_layers));
        sizes.push(num_actions);
        let actor = mlp_layers(store, &mut rng, "actor", &sizes);
        *sizes.last_mut().unwrap() = 1;
        let critic = mlp_layers(store, &mut rng, "critic", &sizes);
        Ok(Agent {
            spec: spec.clone(),
            params: AgentParams { actor, critic },
            state_dim,
            num_actions,
        })
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn params(&self) -> &AgentParams {
        &self.params
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn mlp(tape: &mut Tape<'_>, layers: &[Layer], x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (i, &(w, b)) in layers.iter().enumerate() {
            h = tape.affine(w, b, h)?;
            if i + 1 < layers.len() {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    pub fn policy_value(&self, tape: &mut Tape<'_>, h: NodeId) -> Result<PolicyValue> {
        let logits = Self::mlp(tape, &self.params.actor, h)?;
        let probs = tape.softmax(logits);
        let log_probs = tape.log_softmax(logits);
        let value = Self::mlp(tape, &self.params.critic, h)?;
        Ok(PolicyValue {
            probs,
            log_probs,
            value,
        })
    }

    /// `Σ_t [-log π(a_t|s_t)·Â_t + c_v·(R_t - V(s_t))² - β_e·H(π(·|s_t))] + penalty`.
    pub fn episode_loss(
        &self,
        tape: &mut Tape<'_>,
        traj: &Trajectory,
        mask_penalty: Option<NodeId>,
        advantages: &Advantages,
    ) -> Result<NodeId> {
        if traj.is_empty() {
            return Err(Error::usage("episode_loss on an empty trajectory"));
        }
        let returns = traj.discounted_returns(self.spec.discount);
        if let Advantages::Fixed(a) = advantages {
            if a.len() != traj.len() {
                return Err(Error::Dimension {
                    op: "advantages",
                    expected: traj.len(),
                    got: a.len(),
                });
            }
        }
        let mut terms = Vec::with_capacity(3 * traj.len() + 1);
        for (t, step) in traj.steps.iter().enumerate() {
            let adv = match advantages {
                Advantages::FromValues => returns[t] - step.value_estimate,
                Advantages::Fixed(a) => a[t],
            };
            let log_pi = tape.pick(step.policy.log_probs, step.action)?;
            terms.push((log_pi, -adv));
            let v = tape.pick(step.policy.value, 0)?;
            let err = tape.scale_shift(v, -1.0, returns[t]);
            let sq = tape.square(err);
            terms.push((sq, self.spec.value_coef));
            if self.spec.beta_e != 0.0 {
                // Σ p log p = -H
                let neg_entropy = tape.dot(step.policy.probs, step.policy.log_probs)?;
                terms.push((neg_entropy, self.spec.beta_e));
            }
        }
        if let Some(p) = mask_penalty {
            terms.push((p, 1.0));
        }
        tape.lin_comb(terms)
    }
}

/// Adaptive moment estimation over every tensor in a store.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(store: &ParamStore, spec: &AgentSpec) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        Adam {
            m: zeros(),
            v: zeros(),
            step: 0,
            beta1: spec.adam_beta1,
            beta2: spec.adam_beta2,
            eps: spec.adam_eps,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradientTable, lr: f64) -> Result<()> {
        if let Some(id) = grads.first_non_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient for `{}` at optimizer step {}",
                store.name(id),
                self.step + 1
            )));
        }
        if grads.len() != store.len() {
            return Err(Error::Dimension {
                op: "adam",
                expected: store.len(),
                got: grads.len(),
            });
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let g = grads.get(id).data();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
