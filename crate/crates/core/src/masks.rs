//! Input transformations placed between the agent input and the reservoir.
//!
//! * `identity`: pass-through.
//! * `layernorm`: standardize, then per-element gain `γ` and offset `β`, with an
//!   L2 penalty on `γ, β`.
//! * `vector_filter`: `m = (max - min)·σ(b) + min`, `y = x ⊙ m`.
//! * `epic`: `m = (max - min)·σ(W u + b) + min` for a frozen standard-normal
//!   vector `u` several times longer than the input, `y = x ⊙ m`.
//!
//! The two bounded masks are penalized by `reg_coef · mean(m)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{sigmoid, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::seed::{self, Component};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Identity,
    Layernorm,
    VectorFilter,
    Epic,
}

impl MaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskKind::Identity => "identity",
            MaskKind::Layernorm => "layernorm",
            MaskKind::VectorFilter => "vector_filter",
            MaskKind::Epic => "epic",
        }
    }

    pub fn parse(s: &str) -> Option<MaskKind> {
        match s {
            "identity" => Some(MaskKind::Identity),
            "layernorm" => Some(MaskKind::Layernorm),
            "vector_filter" => Some(MaskKind::VectorFilter),
            "epic" => Some(MaskKind::Epic),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpicInit {
    /// `W = 0`, `b = 0`: starts exactly where the vector filter starts.
    Zeros,
    /// `W ~ N(0, (scale / sqrt(len u))²)`, `b = 0`.
    ScaledNormal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub min_val: f64,
    pub max_val: f64,
    /// Defaults to 1e-4 for layernorm and 1e-5 otherwise.
    pub reg_coef: Option<f64>,
    pub u_multiplier: usize,
    pub ln_scale_init: f64,
    pub epsilon: f64,
    pub layernorm_centering: bool,
    pub epic_init: EpicInit,
    pub epic_init_scale: f64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            kind: MaskKind::Identity,
            min_val: 0.25,
            max_val: 5.0,
            reg_coef: None,
            u_multiplier: 4,
            ln_scale_init: 2.5,
            epsilon: 1e-5,
            layernorm_centering: true,
            epic_init: EpicInit::Zeros,
            epic_init_scale: 1.0,
        }
    }
}

impl MaskSpec {
    pub fn of_kind(kind: MaskKind) -> Self {
        MaskSpec {
            kind,
            ..MaskSpec::default()
        }
    }

    pub fn reg_coef(&self) -> f64 {
        self.reg_coef.unwrap_or(match self.kind {
            MaskKind::Layernorm => 1e-4,
            _ => 1e-5,
        })
    }

    /// Fills in kind-dependent defaults so the spec is self-describing.
    pub fn resolved(&self) -> Self {
        MaskSpec {
            reg_coef: Some(self.reg_coef()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_val < self.max_val) {
            return Err(Error::config(
                "mask.min_val",
                format!("min_val < max_val violated ({} >= {})", self.min_val, self.max_val),
            ));
        }
        if !(self.reg_coef() >= 0.0) {
            return Err(Error::config("mask.reg_coef", "must be non-negative"));
        }
        if self.u_multiplier < 1 {
            return Err(Error::config("mask.u_multiplier", "must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("mask.epsilon", "must be positive"));
        }
        Ok(())
    }

    /// Curve label: `EPIC (128)` style for EPIC, the kind name otherwise.
    pub fn label(&self, input_dim: usize) -> String {
        match self.kind {
            MaskKind::Identity => "No mask".into(),
            MaskKind::Layernorm => "LayerNorm".into(),
            MaskKind::VectorFilter => "Vector filter".into(),
            MaskKind::Epic => format!("EPIC ({})", input_dim * self.u_multiplier),
        }
    }
}

/// Trainable parameters of the active variant; ids point into the run's store.
#[derive(Clone, Debug, PartialEq)]
pub enum MaskParams {
    Identity,
    Layernorm { gamma: ParamId, beta: ParamId },
    VectorFilter { b: ParamId },
    Epic { u: Vec<f64>, w: ParamId, b: ParamId },
}

#[derive(Clone, Debug)]
pub struct InputMask {
    spec: MaskSpec,
    input_dim: usize,
    params: MaskParams,
}

/// Per-episode mask nodes. The bounded masks do not depend on the input, so
/// the mask vector and its penalty are built once per tape.
#[derive(Clone, Copy, Debug)]
pub struct PreparedMask {
    mask: Option<NodeId>,
    gain: Option<(NodeId, NodeId)>,
    penalty: Option<NodeId>,
}

impl PreparedMask {
    pub fn penalty(&self) -> Option<NodeId> {
        self.penalty
    }

    pub fn mask(&self) -> Option<NodeId> {
        self.mask
    }
}

#[derive(Clone, Debug)]
pub struct MaskOutput {
    pub masked_input: NodeId,
    /// Multiplicative mask (bounded kinds), ones (identity) or the effective
    /// per-element scale `γ / sqrt(var + ε)` (layernorm).
    pub mask_values: Vec<f64>,
    pub penalty: f64,
}

impl InputMask {
    pub fn init(spec: &MaskSpec, input_dim: usize, seed: u64, store: &mut ParamStore) -> Result<Self> {
        spec.validate()?;
        if input_dim < 1 {
            return Err(Error::config("mask.input_dim", "must be at least 1"));
        }
        let d = input_dim;
        let params = match spec.kind {
            MaskKind::Identity => MaskParams::Identity,
            MaskKind::Layernorm => MaskParams::Layernorm {
                gamma: store.add("mask.gamma", Tensor::vector(vec![spec.ln_scale_init; d])),
                beta: store.add("mask.beta", Tensor::vector(vec![0.0; d])),
            },
            MaskKind::VectorFilter => MaskParams::VectorFilter {
                b: store.add("mask.b", Tensor::vector(vec![0.0; d])),
            },
            MaskKind::Epic => {
                let mut rng = seed::rng(seed, 0, Component::Mask);
                let len_u = d * spec.u_multiplier;
                let u: Vec<f64> = (0..len_u).map(|_| rng.sample(StandardNormal)).collect();
                let w = match spec.epic_init {
                    EpicInit::Zeros => vec![0.0; d * len_u],
                    EpicInit::ScaledNormal => {
                        let s = spec.epic_init_scale / (len_u as f64).sqrt();
                        (0..d * len_u)
                            .map(|_| s * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    }
                };
                MaskParams::Epic {
                    u,
                    w: store.add("mask.w", Tensor::from_vec(d, len_u, w)),
                    b: store.add("mask.b", Tensor::vector(vec![0.0; d])),
                }
            }
        };
        Ok(InputMask {
            spec: spec.clone(),
            input_dim,
            params,
        })
    }

    pub fn spec(&self) -> &MaskSpec {
        &self.spec
    }

    pub fn params(&self) -> &MaskParams {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// The frozen EPIC source vector.
    pub fn source_vector(&self) -> Option<&[f64]> {
        match &self.params {
            MaskParams::Epic { u, .. } => Some(u),
            _ => None,
        }
    }

    pub fn prepare(&self, tape: &mut Tape<'_>) -> Result<PreparedMask> {
        let (lo, hi) = (self.spec.min_val, self.spec.max_val);
        let reg = self.spec.reg_coef();
        Ok(match &self.params {
            MaskParams::Identity => PreparedMask {
                mask: None,
                gain: None,
                penalty: None,
            },
            MaskParams::Layernorm { gamma, beta } => {
                let g = tape.param(*gamma);
                let b = tape.param(*beta);
                let gg = tape.sum_squares(g);
                let bb = tape.sum_squares(b);
                let penalty = tape.lin_comb(vec![(gg, reg / 2.0), (bb, reg / 2.0)])?;
                PreparedMask {
                    mask: None,
                    gain: Some((g, b)),
                    penalty: Some(penalty),
                }
            }
            MaskParams::VectorFilter { b } => {
                let bn = tape.param(*b);
                let m = tape.bounded_sigmoid(bn, lo, hi);
                let mean = tape.mean(m);
                let penalty = tape.lin_comb(vec![(mean, reg)])?;
                PreparedMask {
                    mask: Some(m),
                    gain: None,
                    penalty: Some(penalty),
                }
            }
            MaskParams::Epic { u, w, b } => {
                let un = tape.input(u.clone());
                let z = tape.affine(*w, *b, un)?;
                let m = tape.bounded_sigmoid(z, lo, hi);
                let mean = tape.mean(m);
                let penalty = tape.lin_comb(vec![(mean, reg)])?;
                PreparedMask {
                    mask: Some(m),
                    gain: None,
                    penalty: Some(penalty),
                }
            }
        })
    }

    /// Masks one input vector using nodes from [`InputMask::prepare`].
    pub fn apply_prepared(&self, tape: &mut Tape<'_>, prepared: &PreparedMask, x: NodeId) -> Result<NodeId> {
        if tape.value(x).len() != self.input_dim {
            return Err(Error::Dimension {
                op: "mask input",
                expected: self.input_dim,
                got: tape.value(x).len(),
            });
        }
        match (&self.params, prepared.mask, prepared.gain) {
            (MaskParams::Identity, ..) => Ok(x),
            (MaskParams::Layernorm { .. }, _, Some((g, b))) => {
                let s = tape.standardize(x, self.spec.epsilon, self.spec.layernorm_centering);
                let scaled = tape.hadamard(s, g)?;
                tape.add(scaled, b)
            }
            (_, Some(m), _) => tape.hadamard(x, m),
            _ => Err(Error::usage("prepared mask does not match the mask variant")),
        }
    }

    /// One-shot mask application: prepares, applies and reports values.
    pub fn apply(&self, tape: &mut Tape<'_>, x: Vec<f64>) -> Result<MaskOutput> {
        let prepared = self.prepare(tape)?;
        let xn = tape.input(x);
        let masked_input = self.apply_prepared(tape, &prepared, xn)?;
        let mask_values = match (&self.params, prepared.mask) {
            (MaskParams::Layernorm { gamma, .. }, _) => {
                let xv = tape.value(xn);
                let inv_std = inv_std(xv, self.spec.epsilon);
                tape.params()
                    .get(*gamma)
                    .data()
                    .iter()
                    .map(|g| g * inv_std)
                    .collect()
            }
            (_, Some(m)) => tape.value(m).to_vec(),
            _ => vec![1.0; self.input_dim],
        };
        let penalty = prepared.penalty.map_or(0.0, |p| tape.scalar(p));
        Ok(MaskOutput {
            masked_input,
            mask_values,
            penalty,
        })
    }

    /// Current per-element mask without a tape: `m` for the bounded kinds,
    /// `γ` for layernorm, ones for identity.
    pub fn mask_values(&self, store: &ParamStore) -> Vec<f64> {
        let (lo, hi) = (self.spec.min_val, self.spec.max_val);
        let bound = |z: f64| (lo + (hi - lo) * sigmoid(z)).clamp(lo.next_up(), hi.next_down());
        match &self.params {
            MaskParams::Identity => vec![1.0; self.input_dim],
            MaskParams::Layernorm { gamma, .. } => store.get(*gamma).data().to_vec(),
            MaskParams::VectorFilter { b } => store.get(*b).data().iter().map(|&z| bound(z)).collect(),
            MaskParams::Epic { u, w, b } => {
                let wt = store.get(*w);
                let bt = store.get(*b);
                (0..self.input_dim)
                    .map(|i| {
                        let z = crate::diffcore::kernels::dot(wt.row(i), u) + bt.data()[i];
                        bound(z)
                    })
                    .collect()
            }
        }
    }

    /// Max relative error of the analytic penalty gradient against central
    /// differences over every mask parameter.
    pub fn penalty_gradient_check(&self, store: &ParamStore, step: f64) -> Result<f64> {
        let report = crate::diffcore::grad_check(store, step, usize::MAX, 0, |params, with_grads| {
            let mut tape = Tape::new(params);
            let prepared = self.prepare(&mut tape)?;
            let root = match prepared.penalty {
                Some(p) => p,
                None => {
                    let zero = tape.input(vec![0.0]);
                    tape.lin_comb(vec![(zero, 1.0)])?
                }
            };
            crate::diffcore::Eval::from_tape(&tape, root, with_grads)
        })?;
        Ok(report.max_rel_error)
    }
}

fn inv_std(x: &[f64], eps: f64) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    1.0 / (var + eps).sqrt()
}
