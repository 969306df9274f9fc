//! Actor-critic learner and intrinsic-reward baselines.
//!
//! The learner is a synchronous advantage actor-critic: a shared
//! two-layer tanh trunk with linear policy and value heads, trained by
//! plain SGD on the summed value, policy, and entropy losses of short
//! trajectory segments. Advantages and value targets enter the losses as
//! constants (no gradient flows through them), which is made explicit by
//! splitting loss evaluation into [`advantage_signals`] followed by
//! [`losses_given_signals`]. Policy entropy is measured in nats; the
//! intrinsic-reward bits only ever enter through the scalar mixed reward.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    self, Activation, DenseLayer, LayerGrad, Mlp, MlpGrads, MlpTrace, NnError,
};

/// Probabilities below this are clamped before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("observation has {got} values, network expects {expected}")]
    ObservationShape { expected: usize, got: usize },
    #[error("{rewards} rewards need {expected} values, got {values}")]
    AdvantageShape {
        rewards: usize,
        values: usize,
        expected: usize,
    },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("segment of {got} steps exceeds k_steps = {k}")]
    SegmentTooLong { got: usize, k: usize },
    #[error(transparent)]
    Numeric(#[from] NnError),
}

/// Loss coefficients and optimization constants (Eq. weights, discount,
/// intrinsic mix, segment length, step size).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha_value: f64,
    pub alpha_policy: f64,
    pub alpha_entropy: f64,
    pub gamma: f64,
    pub beta: f64,
    pub k_steps: usize,
    pub learning_rate: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_value: 0.5,
            alpha_policy: 1.0,
            alpha_entropy: 0.01,
            gamma: 0.99,
            beta: 0.5,
            k_steps: 20,
            learning_rate: 1e-4,
        }
    }
}

/// Policy/value network: shared trunk `obs -> 128 -> 128` (tanh) with
/// linear heads. Heads start at zero, so the initial policy is exactly
/// uniform and the initial value exactly 0.
#[derive(Debug, Clone)]
pub struct PolicyValueNet {
    pub trunk: Mlp,
    pub policy_head: DenseLayer,
    pub value_head: DenseLayer,
    pub updates: u64,
}

pub const TRUNK_WIDTH: usize = 128;

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub layer_shapes: Vec<(usize, usize)>,
    pub action_count: usize,
    pub seed: u64,
    pub updates: u64,
}

impl PolicyValueNet {
    pub fn new(obs_dim: usize, action_count: usize, rng: &mut impl Rng) -> Self {
        let trunk = Mlp::new(
            &[obs_dim, TRUNK_WIDTH, TRUNK_WIDTH],
            &[Activation::Tanh, Activation::Tanh],
            rng,
        );
        Self {
            trunk,
            policy_head: DenseLayer::zeros(TRUNK_WIDTH, action_count, Activation::Linear),
            value_head: DenseLayer::zeros(TRUNK_WIDTH, 1, Activation::Linear),
            updates: 0,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    pub fn action_count(&self) -> usize {
        self.policy_head.out_dim
    }

    fn check_obs(&self, observation: &[f64]) -> Result<(), AgentError> {
        if observation.len() != self.obs_dim() {
            return Err(AgentError::ObservationShape {
                expected: self.obs_dim(),
                got: observation.len(),
            });
        }
        Ok(())
    }

    /// Action probabilities (softmax over logits) and value estimate.
    pub fn forward(&self, observation: &[f64]) -> Result<(Vec<f64>, f64), AgentError> {
        self.check_obs(observation)?;
        let h = self.trunk.forward(observation);
        let mut logits = Vec::new();
        self.policy_head.forward_into(&h, &mut logits);
        let mut value = Vec::new();
        self.value_head.forward_into(&h, &mut value);
        Ok((softmax(&logits), value[0]))
    }

    /// dL/d(observation) for L = log pi(action | observation). Exists for
    /// finite-difference verification of the backward pass.
    pub fn log_prob_input_gradient(
        &self,
        observation: &[f64],
        action: usize,
    ) -> Result<Vec<f64>, AgentError> {
        self.check_obs(observation)?;
        let mut trace = MlpTrace::default();
        self.trunk.forward_traced(observation, &mut trace);
        let h = self.trunk.output_of(&trace);
        let mut logits = Vec::new();
        self.policy_head.forward_into(h, &mut logits);
        let probs = softmax(&logits);
        // d log softmax_a / d logits = onehot_a - probs.
        let d_logits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, &p)| if j == action { 1.0 - p } else { -p })
            .collect();
        let mut head_grad = LayerGrad::zeros_for(&self.policy_head);
        let mut d_h = vec![0.0; h.len()];
        self.policy_head
            .backward_dense(h, &logits, &d_logits, &mut head_grad, Some(&mut d_h));
        let mut trunk_grads = MlpGrads::zeros_for(&self.trunk);
        Ok(self
            .trunk
            .backward_with_input_grad(&trace, &d_h, &mut trunk_grads))
    }

    /// All parameters: trunk layers, then policy head, then value head.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut p = self.trunk.flat_params();
        p.extend_from_slice(&self.policy_head.weights);
        p.extend_from_slice(&self.policy_head.bias);
        p.extend_from_slice(&self.value_head.weights);
        p.extend_from_slice(&self.value_head.bias);
        p
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<(), AgentError> {
        let trunk_n = self.trunk.param_count();
        let total = self.param_count();
        if params.len() != total {
            return Err(AgentError::Numeric(NnError::ParamCount {
                expected: total,
                got: params.len(),
            }));
        }
        self.trunk.set_flat_params(&params[..trunk_n])?;
        let mut at = trunk_n;
        for (dst_w, dst_b) in [
            (&mut self.policy_head.weights, &mut self.policy_head.bias),
            (&mut self.value_head.weights, &mut self.value_head.bias),
        ] {
            let wl = dst_w.len();
            dst_w.copy_from_slice(&params[at..at + wl]);
            at += wl;
            let bl = dst_b.len();
            dst_b.copy_from_slice(&params[at..at + bl]);
            at += bl;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count()
            + self.policy_head.param_count()
            + self.value_head.param_count()
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes: Vec<(usize, usize)> = self
            .trunk
            .layers
            .iter()
            .map(|l| (l.in_dim, l.out_dim))
            .collect();
        shapes.push((self.policy_head.in_dim, self.policy_head.out_dim));
        shapes.push((self.value_head.in_dim, self.value_head.out_dim));
        shapes
    }

    /// Checkpoint: JSON header (shapes, seed, update count) + flat weights.
    pub fn save_checkpoint(&self, path: &Path, seed: u64) -> Result<(), NnError> {
        let header = CheckpointHeader {
            layer_shapes: self.layer_shapes(),
            action_count: self.action_count(),
            seed,
            updates: self.updates,
        };
        nn::save_params(path, &header, &self.flat_params())
    }

    /// Bit-exact reload of a checkpoint written by [`Self::save_checkpoint`].
    pub fn load_checkpoint(path: &Path) -> Result<(Self, CheckpointHeader), NnError> {
        let (header, params): (CheckpointHeader, Vec<f64>) = nn::load_params(path)?;
        let shapes = &header.layer_shapes;
        if shapes.len() != 4 {
            return Err(NnError::Payload(format!(
                "expected 4 layer shapes, found {}",
                shapes.len()
            )));
        }
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let mut net = Self::new(shapes[0].0, header.action_count, &mut rng);
        net.updates = header.updates;
        net.set_flat_params(&params)
            .map_err(|e| NnError::Payload(e.to_string()))?;
        Ok((net, header))
    }
}

/// Numerically safe softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

fn ln_clamped(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Sample an action index from `probs` (training-time behavior).
pub fn sample_action(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Highest-probability action, lowest index winning ties (evaluation-time
/// behavior).
pub fn greedy_action(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Uniform-random baseline policy.
pub fn uniform_random_policy(action_count: usize, rng: &mut impl Rng) -> usize {
    assert!(action_count >= 1, "need at least one action");
    rng.gen_range(0..action_count)
}

/// k-step advantage for the first state of a segment:
/// `sum_i gamma^i r_i + gamma^k V(s_k) - V(s_0)`, with the bootstrap
/// zeroed when the segment ends the episode.
pub fn k_step_advantage(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    done_at_end: bool,
) -> Result<f64, AgentError> {
    if values.len() != rewards.len() + 1 || rewards.is_empty() {
        return Err(AgentError::AdvantageShape {
            rewards: rewards.len(),
            values: values.len(),
            expected: rewards.len() + 1,
        });
    }
    let bootstrap = if done_at_end { 0.0 } else { values[rewards.len()] };
    let mut ret = bootstrap;
    for &r in rewards.iter().rev() {
        ret = r + gamma * ret;
    }
    Ok(ret - values[0])
}

/// `extrinsic + beta * intrinsic`.
pub fn mix_reward(extrinsic: f64, intrinsic: f64, beta: f64) -> f64 {
    extrinsic + beta * intrinsic
}

/// One step of a rollout segment, reward already mixed.
#[derive(Debug, Clone)]
pub struct SegmentStep {
    pub observation: Vec<f64>,
    pub action: usize,
    pub mixed_reward: f64,
}

/// Contiguous trajectory slice of at most `k_steps` transitions.
/// `bootstrap_observation` is the state after the last step, or `None`
/// when that step ended the episode (bootstrap value 0).
#[derive(Debug, Clone, Default)]
pub struct Segment {
    pub steps: Vec<SegmentStep>,
    pub bootstrap_observation: Option<Vec<f64>>,
}

/// Per-step constants for the differentiable part of the loss: the value
/// target and advantage, detached from the parameters.
#[derive(Debug, Clone, Copy)]
pub struct SignalStep<'a> {
    pub observation: &'a [f64],
    pub action: usize,
    pub target: f64,
    pub advantage: f64,
}

/// Loss components, summed over a batch. `value` and `policy` and
/// `entropy` already include their alpha weights.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Losses {
    pub value: f64,
    pub policy: f64,
    pub entropy: f64,
}

impl Losses {
    pub fn total(&self) -> f64 {
        self.value + self.policy + self.entropy
    }
}

/// Gradients for every parameter of a [`PolicyValueNet`].
#[derive(Debug, Clone)]
pub struct PolicyValueGrads {
    pub trunk: MlpGrads,
    pub policy_head: LayerGrad,
    pub value_head: LayerGrad,
}

impl PolicyValueGrads {
    pub fn zeros_for(net: &PolicyValueNet) -> Self {
        Self {
            trunk: MlpGrads::zeros_for(&net.trunk),
            policy_head: LayerGrad::zeros_for(&net.policy_head),
            value_head: LayerGrad::zeros_for(&net.value_head),
        }
    }
}

/// Computes the detached targets and advantages of a segment under the
/// current value function: discounted returns bootstrapped with V of the
/// final state (0 at episode end), advantage = return - V(s_i).
pub fn advantage_signals<'a>(
    segment: &'a Segment,
    net: &PolicyValueNet,
    gamma: f64,
) -> Result<Vec<SignalStep<'a>>, AgentError> {
    if segment.steps.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let values: Vec<f64> = segment
        .steps
        .iter()
        .map(|s| net.forward(&s.observation).map(|(_, v)| v))
        .collect::<Result<_, _>>()?;
    let mut ret = match &segment.bootstrap_observation {
        Some(obs) => net.forward(obs)?.1,
        None => 0.0,
    };
    let mut signals = vec![None; segment.steps.len()];
    for (i, step) in segment.steps.iter().enumerate().rev() {
        ret = step.mixed_reward + gamma * ret;
        signals[i] = Some(SignalStep {
            observation: step.observation.as_slice(),
            action: step.action,
            target: ret,
            advantage: ret - values[i],
        });
    }
    Ok(signals.into_iter().map(|s| s.expect("filled")).collect())
}

/// Differentiable loss evaluation with `target` and `advantage` held
/// constant. Per step:
/// value loss `alpha_value (target - V)^2`, policy loss
/// `alpha_policy (-A log pi(a|s))`, entropy loss
/// `alpha_entropy (-H(pi))` in nats; summed over the batch. Returns the
/// losses and the gradients of their sum.
pub fn losses_given_signals(
    signals: &[SignalStep],
    net: &PolicyValueNet,
    weights: &LossWeights,
) -> Result<(Losses, PolicyValueGrads), AgentError> {
    if signals.is_empty() {
        return Err(AgentError::EmptyBatch);
    }
    let mut losses = Losses::default();
    let mut grads = PolicyValueGrads::zeros_for(net);
    let mut trace = MlpTrace::default();
    let mut logits = Vec::new();
    let mut value_out = Vec::new();
    let mut d_h = vec![0.0; TRUNK_WIDTH];
    for s in signals {
        net.check_obs(s.observation)?;
        net.trunk.forward_traced(s.observation, &mut trace);
        let h = net.trunk.output_of(&trace).to_vec();
        net.policy_head.forward_into(&h, &mut logits);
        net.value_head.forward_into(&h, &mut value_out);
        let probs = softmax(&logits);
        let value = value_out[0];

        let log_probs: Vec<f64> = probs.iter().map(|&p| ln_clamped(p)).collect();
        let entropy_nats: f64 = -probs
            .iter()
            .zip(&log_probs)
            .map(|(&p, &lp)| p * lp)
            .sum::<f64>();
        losses.value += weights.alpha_value * (s.target - value) * (s.target - value);
        losses.policy += weights.alpha_policy * (-s.advantage * log_probs[s.action]);
        losses.entropy += weights.alpha_entropy * (-entropy_nats);

        // d(policy loss)/d logits_j = alpha_policy (-A)(onehot_j - pi_j);
        // d(-H)/d logits_j = pi_j (log pi_j + H).
        let d_logits: Vec<f64> = probs
            .iter()
            .zip(&log_probs)
            .enumerate()
            .map(|(j, (&p, &lp))| {
                let onehot = if j == s.action { 1.0 } else { 0.0 };
                weights.alpha_policy * (-s.advantage) * (onehot - p)
                    + weights.alpha_entropy * p * (lp + entropy_nats)
            })
            .collect();
        let d_value = [-2.0 * weights.alpha_value * (s.target - value)];

        d_h.iter_mut().for_each(|v| *v = 0.0);
        net.policy_head.backward_dense(
            &h,
            &logits,
            &d_logits,
            &mut grads.policy_head,
            Some(&mut d_h),
        );
        net.value_head.backward_dense(
            &h,
            &value_out,
            &d_value,
            &mut grads.value_head,
            Some(&mut d_h),
        );
        net.trunk.backward(&trace, &d_h, &mut grads.trunk);
    }
    Ok((losses, grads))
}

/// Actor-critic losses and gradients over one segment (Eq. 1 form):
/// computes the detached advantage signals under the current parameters,
/// then differentiates the weighted losses.
pub fn actor_critic_losses(
    segment: &Segment,
    net: &PolicyValueNet,
    weights: &LossWeights,
) -> Result<(Losses, PolicyValueGrads), AgentError> {
    if segment.steps.len() > weights.k_steps {
        return Err(AgentError::SegmentTooLong {
            got: segment.steps.len(),
            k: weights.k_steps,
        });
    }
    let signals = advantage_signals(segment, net, weights.gamma)?;
    losses_given_signals(&signals, net, weights)
}

/// SGD step over every parameter; clears `grads`. Any non-finite gradient
/// fails the step with the parameters untouched, naming the layer
/// (trunk layers first, then policy head, then value head).
pub fn apply_gradients(
    net: &mut PolicyValueNet,
    grads: &mut PolicyValueGrads,
    learning_rate: f64,
) -> Result<(), AgentError> {
    let trunk_layers = grads.trunk.layers.len();
    for (l, grad) in grads.trunk.layers.iter().enumerate() {
        if !grad.is_finite() {
            return Err(AgentError::Numeric(NnError::NumericInstability { layer: l }));
        }
    }
    if !grads.policy_head.is_finite() {
        return Err(AgentError::Numeric(NnError::NumericInstability {
            layer: trunk_layers,
        }));
    }
    if !grads.value_head.is_finite() {
        return Err(AgentError::Numeric(NnError::NumericInstability {
            layer: trunk_layers + 1,
        }));
    }
    net.trunk.apply_gradients(&mut grads.trunk, learning_rate)?;
    grads.policy_head.apply_and_reset(&mut net.policy_head, learning_rate);
    grads.value_head.apply_and_reset(&mut net.value_head, learning_rate);
    net.updates += 1;
    Ok(())
}

/// Random-network-distillation pair: a frozen random target and a
/// trainable predictor of the same architecture. The intrinsic reward is
/// `alpha_encode * MSE(target(s), predictor(s))`, and gradients flow only
/// into the predictor.
#[derive(Debug, Clone)]
pub struct RndPair {
    pub target: Mlp,
    pub predictor: Mlp,
    pub alpha_encode: f64,
    target_checksum: u64,
}

pub const RND_HIDDEN: usize = 128;
pub const RND_FEATURES: usize = 64;

impl RndPair {
    pub fn new(obs_dim: usize, alpha_encode: f64, rng: &mut impl Rng) -> Self {
        let dims = [obs_dim, RND_HIDDEN, RND_FEATURES];
        let acts = [Activation::Tanh, Activation::Linear];
        let target = Mlp::new(&dims, &acts, rng);
        let predictor = Mlp::new(&dims, &acts, rng);
        let target_checksum = nn::params_checksum(&target);
        Self {
            target,
            predictor,
            alpha_encode,
            target_checksum,
        }
    }

    /// True while the frozen target still matches its construction-time
    /// checksum; verified at run end.
    pub fn target_intact(&self) -> bool {
        nn::params_checksum(&self.target) == self.target_checksum
    }
}

/// RND intrinsic reward for one observation plus the predictor gradients
/// of that same scalar.
pub fn rnd_intrinsic(
    observation: &[f64],
    rnd: &RndPair,
) -> Result<(f64, MlpGrads), AgentError> {
    if observation.len() != rnd.target.in_dim() {
        return Err(AgentError::ObservationShape {
            expected: rnd.target.in_dim(),
            got: observation.len(),
        });
    }
    let target_features = rnd.target.forward(observation);
    let mut trace = MlpTrace::default();
    rnd.predictor.forward_traced(observation, &mut trace);
    let predicted = rnd.predictor.output_of(&trace);
    let m = predicted.len() as f64;
    let mse: f64 = predicted
        .iter()
        .zip(&target_features)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<f64>()
        / m;
    let reward = rnd.alpha_encode * mse;
    // d reward / d predicted_j = alpha * 2 (p_j - t_j) / m.
    let d_out: Vec<f64> = predicted
        .iter()
        .zip(&target_features)
        .map(|(&p, &t)| rnd.alpha_encode * 2.0 * (p - t) / m)
        .collect();
    let mut grads = MlpGrads::zeros_for(&rnd.predictor);
    rnd.predictor.backward(&trace, &d_out, &mut grads);
    Ok((reward, grads))
}
