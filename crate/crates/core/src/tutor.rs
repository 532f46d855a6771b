//! The tutor: a Gaussian policy over sample-weight logits with a separate
//! critic, behavioral-cloning pretraining against a heuristic expert, and a
//! clipped-surrogate PPO update over a rollout buffer of one-step episodes.
//!
//! The policy samples a logit `z ~ N(mu(s), sigma^2)` and emits the weight
//! `sigmoid(z)`. Log-probabilities are taken in logit space; the squash is
//! deterministic post-processing, and its Jacobian cancels in the PPO ratio
//! because the same stored `z` is scored under both old and new parameters.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Result, TsrlError};
use crate::nn::{Activation, DenseNet, Gradients};
use crate::optim::Optimizer;
use crate::state::TutorState;

pub const MIN_LOG_STD: f64 = -6.907_755_278_982_137; // ln 1e-3
pub const MAX_LOG_STD: f64 = std::f64::consts::LN_10;
/// Sampled logits are clamped here so `sigmoid(z)` stays strictly inside (0, 1).
pub const MAX_ABS_LOGIT: f64 = 30.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Log-density of `z` under `N(mean, exp(log_std)^2)`.
#[inline]
pub fn gaussian_log_prob(z: f64, mean: f64, log_std: f64) -> f64 {
    let u = (z - mean) / log_std.exp();
    -0.5 * u * u - log_std - HALF_LN_2PI
}

#[inline]
pub fn gaussian_entropy(log_std: f64) -> f64 {
    log_std + 0.5 * (1.0 + (2.0 * PI).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TutorNetConfig {
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for TutorNetConfig {
    fn default() -> Self {
        TutorNetConfig {
            hidden: vec![32, 32],
            init_log_std: 0.5f64.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TutorPolicy {
    /// state -> mean logit
    pub actor: DenseNet,
    pub log_std: f64,
    /// state -> value estimate
    pub critic: DenseNet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub weight: f64,
    pub logit: f64,
    pub log_prob: f64,
    pub value: f64,
}

impl TutorPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        cfg: &TutorNetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        let actor = DenseNet::glorot(&sizes, Activation::Tanh, Activation::Identity, rng)?;
        let critic = DenseNet::glorot(&sizes, Activation::Tanh, Activation::Identity, rng)?;
        Ok(TutorPolicy {
            actor,
            log_std: cfg.init_log_std.clamp(MIN_LOG_STD, MAX_LOG_STD),
            critic,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    fn check_state(&self, state: &TutorState) -> Result<Vec<f64>> {
        let v = state.to_vec();
        if v.len() != self.state_dim() {
            return Err(TsrlError::DimensionMismatch {
                expected: self.state_dim(),
                actual: v.len(),
                context: "tutor state",
            });
        }
        Ok(v)
    }

    pub fn mean_logit(&self, state: &TutorState) -> Result<f64> {
        let v = self.check_state(state)?;
        Ok(self.actor.forward_one(&v)?[0])
    }

    pub fn value(&self, state: &TutorState) -> Result<f64> {
        let v = self.check_state(state)?;
        Ok(self.critic.forward_one(&v)?[0])
    }

    /// Stochastic action for rollouts.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        state: &TutorState,
        rng: &mut R,
    ) -> Result<ActionSample> {
        let v = self.check_state(state)?;
        let mean = self.actor.forward_one(&v)?[0];
        let value = self.critic.forward_one(&v)?[0];
        let noise: f64 = rng.sample(StandardNormal);
        let logit = (mean + self.log_std.exp() * noise).clamp(-MAX_ABS_LOGIT, MAX_ABS_LOGIT);
        Ok(ActionSample {
            weight: sigmoid(logit),
            logit,
            log_prob: gaussian_log_prob(logit, mean, self.log_std),
            value,
        })
    }

    /// Deterministic action at the policy mean.
    pub fn mean_action(&self, state: &TutorState) -> Result<f64> {
        Ok(sigmoid(
            self.mean_logit(state)?.clamp(-MAX_ABS_LOGIT, MAX_ABS_LOGIT),
        ))
    }

    /// The mean action packaged with its log-density and value.
    pub fn greedy_action(&self, state: &TutorState) -> Result<ActionSample> {
        let v = self.check_state(state)?;
        let mean = self.actor.forward_one(&v)?[0];
        let logit = mean.clamp(-MAX_ABS_LOGIT, MAX_ABS_LOGIT);
        Ok(ActionSample {
            weight: sigmoid(logit),
            logit,
            log_prob: gaussian_log_prob(logit, mean, self.log_std),
            value: self.critic.forward_one(&v)?[0],
        })
    }

    /// Writes `actor.net`, `critic.net` and `log_std.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save_net(&self.actor, &dir.join("actor.net"))?;
        checkpoint::save_net(&self.critic, &dir.join("critic.net"))?;
        let path = dir.join("log_std.txt");
        std::fs::write(&path, format!("log_std {}\n", self.log_std))
            .map_err(|e| TsrlError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let actor = checkpoint::load_net(&dir.join("actor.net"))?;
        let critic = checkpoint::load_net(&dir.join("critic.net"))?;
        let path = dir.join("log_std.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| TsrlError::io(&path, e))?;
        let log_std = text
            .trim()
            .strip_prefix("log_std ")
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| TsrlError::Format {
                what: "log_std record",
                detail: format!("expected `log_std <value>`, got {:?}", text.trim()),
            })?;
        Ok(TutorPolicy {
            actor,
            log_std,
            critic,
        })
    }
}

/// Heuristic self-paced expert: a Gaussian bump over the normalized EMA loss.
///
/// The default center sits at chance-level cross-entropy (ln 2 over the
/// default normalization cap of 3.5), so the bump favors samples the student
/// is unsure about and floors both mastered and confidently-wrong ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    pub center: f64,
    pub width: f64,
    pub floor: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            center: 0.2,
            width: 0.15,
            floor: 0.05,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width.is_nan() || self.width <= 0.0 || !(0.0..=1.0).contains(&self.floor) {
            return Err(TsrlError::config(
                "expert width must be > 0 and floor in [0, 1]",
            ));
        }
        Ok(())
    }
}

pub fn expert_weight(state: &TutorState, cfg: &ExpertConfig) -> f64 {
    let d = state.ema_loss_norm - cfg.center;
    (-d * d / (2.0 * cfg.width * cfg.width))
        .exp()
        .clamp(cfg.floor, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub lr: f64,
    /// Share of harvested states kept out of training to measure the final MSE.
    pub holdout_fraction: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            epochs: 60,
            minibatch_size: 64,
            lr: 1e-3,
            holdout_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcReport {
    pub initial_mse: f64,
    pub train_mse: f64,
    /// MSE on the held-out states (the training states when too few to split).
    pub final_mse: f64,
    pub steps: usize,
}

fn bc_mse(actor: &DenseNet, inputs: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
    let acts = actor.forward_cached(inputs)?;
    let out = acts.output();
    Ok(out
        .iter()
        .zip(targets)
        .map(|(z, a)| {
            let d = sigmoid(*z) - a;
            d * d
        })
        .sum::<f64>()
        / inputs.len() as f64)
}

/// Fits the actor's mean action to `expert` by minibatch Adam on squared error.
/// The critic and `log_std` are untouched.
pub fn bc_pretrain<R, F>(
    policy: &mut TutorPolicy,
    states: &[TutorState],
    expert: F,
    cfg: &BcConfig,
    rng: &mut R,
) -> Result<BcReport>
where
    R: Rng + ?Sized,
    F: Fn(&TutorState) -> f64,
{
    if states.is_empty() {
        return Err(TsrlError::contract(
            "behavioral cloning needs at least one state",
        ));
    }
    if cfg.minibatch_size == 0 {
        return Err(TsrlError::config("bc minibatch_size must be positive"));
    }
    let inputs: Vec<Vec<f64>> = states.iter().map(TutorState::to_vec).collect();
    let targets: Vec<f64> = states.iter().map(&expert).collect();

    let mut order: Vec<usize> = (0..states.len()).collect();
    order.shuffle(rng);
    let n_hold = ((states.len() as f64) * cfg.holdout_fraction).floor() as usize;
    let (held, train) = if n_hold == 0 || n_hold == states.len() {
        (order.clone(), order)
    } else {
        let (h, t) = order.split_at(n_hold);
        (h.to_vec(), t.to_vec())
    };
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            idx.iter().map(|&i| inputs[i].clone()).collect(),
            idx.iter().map(|&i| targets[i]).collect(),
        )
    };
    let (held_x, held_y) = pick(&held);
    let (train_x, train_y) = pick(&train);

    let initial_mse = bc_mse(&policy.actor, &held_x, &held_y)?;
    let mut opt = Optimizer::adam(cfg.lr);
    let mut steps = 0;
    let mut train_order: Vec<usize> = (0..train_x.len()).collect();
    for _ in 0..cfg.epochs {
        train_order.shuffle(rng);
        for chunk in train_order.chunks(cfg.minibatch_size) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| train_x[i].as_slice()).collect();
            let acts = policy.actor.forward_cached(&xs)?;
            let b = chunk.len() as f64;
            let d_out: Vec<f64> = acts
                .output()
                .iter()
                .zip(chunk)
                .map(|(z, &i)| {
                    let w = sigmoid(*z);
                    2.0 * (w - train_y[i]) * w * (1.0 - w) / b
                })
                .collect();
            let grads = policy.actor.backward(&acts, &d_out)?;
            if !grads.all_finite() {
                return Err(TsrlError::NonFinite("behavioral cloning gradient".into()));
            }
            opt.step(policy.actor.param_tensors_mut(), grads.tensors())?;
            steps += 1;
        }
    }
    Ok(BcReport {
        initial_mse,
        train_mse: bc_mse(&policy.actor, &train_x, &train_y)?,
        final_mse: bc_mse(&policy.actor, &held_x, &held_y)?,
        steps,
    })
}

/// One tutor decision and its outcome. Episodes are a single step long.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: TutorState,
    pub action: ActionSample,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    experiences: Vec<Experience>,
}

impl RolloutBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, e: Experience) {
        self.experiences.push(e);
    }

    pub fn len(&self) -> usize {
        self.experiences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiences.is_empty()
    }

    pub fn clear(&mut self) {
        self.experiences.clear();
    }

    pub fn experiences(&self) -> &[Experience] {
        &self.experiences
    }
}

impl FromIterator<Experience> for RolloutBuffer {
    fn from_iter<I: IntoIterator<Item = Experience>>(iter: I) -> Self {
        RolloutBuffer {
            experiences: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub ppo_epochs: usize,
    pub minibatch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub advantage_norm: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.2,
            actor_lr: 1e-4,
            critic_lr: 3e-4,
            ppo_epochs: 4,
            minibatch_size: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            advantage_norm: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(TsrlError::config(format!(
                "clip_eps {} not in (0, 1)",
                self.clip_eps
            )));
        }
        if self.ppo_epochs == 0 || self.minibatch_size == 0 {
            return Err(TsrlError::config(
                "ppo_epochs and minibatch_size must be positive",
            ));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(TsrlError::config("learning rates must be positive"));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err(TsrlError::config(
                "entropy_coef and value_coef must be non-negative",
            ));
        }
        Ok(())
    }
}

const ADV_STD_EPS: f64 = 1e-8;

/// One-step advantages `r - V(s)` and returns `r`, optionally standardized.
pub fn compute_advantages(
    buffer: &RolloutBuffer,
    policy: &TutorPolicy,
    normalize: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if buffer.is_empty() {
        return Err(TsrlError::contract("empty rollout buffer"));
    }
    let inputs: Vec<Vec<f64>> = buffer
        .experiences
        .iter()
        .map(|e| e.state.to_vec())
        .collect();
    let values = policy.critic.forward_cached(&inputs)?;
    let returns: Vec<f64> = buffer.experiences.iter().map(|e| e.reward).collect();
    let mut adv: Vec<f64> = returns
        .iter()
        .zip(values.output())
        .map(|(r, v)| r - v)
        .collect();
    if normalize {
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        for a in &mut adv {
            *a = (*a - mean) / (std + ADV_STD_EPS);
        }
    }
    Ok((adv, returns))
}

/// Frozen inputs for evaluating the clipped surrogate on one minibatch.
#[derive(Debug, Clone)]
pub struct SurrogateBatch {
    pub states: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Actor-side loss `-(mean clipped surrogate + entropy_coef * H)` and its gradients.
#[derive(Debug, Clone)]
pub struct SurrogateEval {
    pub loss: f64,
    pub per_sample_objective: Vec<f64>,
    pub ratios: Vec<f64>,
    pub clip_fraction: f64,
    pub entropy: f64,
    pub actor_grads: Gradients,
    pub log_std_grad: f64,
}

/// Per-sample clipped surrogate `min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)`.
#[inline]
pub fn clipped_objective(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    unclipped.min(clipped)
}

pub fn surrogate(
    policy: &TutorPolicy,
    batch: &SurrogateBatch,
    cfg: &PpoConfig,
) -> Result<SurrogateEval> {
    let n = batch.states.len();
    if n == 0
        || batch.logits.len() != n
        || batch.old_log_probs.len() != n
        || batch.advantages.len() != n
    {
        return Err(TsrlError::contract("inconsistent surrogate minibatch"));
    }
    let acts = policy.actor.forward_cached(&batch.states)?;
    let means = acts.output();
    let var = (2.0 * policy.log_std).exp();
    let b = n as f64;
    let mut per_sample = Vec::with_capacity(n);
    let mut ratios = Vec::with_capacity(n);
    let mut d_mean = vec![0.0; n];
    let mut d_log_std = 0.0;
    let mut clipped = 0usize;
    for i in 0..n {
        let (z, mu, a) = (batch.logits[i], means[i], batch.advantages[i]);
        let logp = gaussian_log_prob(z, mu, policy.log_std);
        let ratio = (logp - batch.old_log_probs[i]).exp();
        if (ratio - 1.0).abs() > cfg.clip_eps {
            clipped += 1;
        }
        let unclipped = ratio * a;
        let obj = clipped_objective(ratio, a, cfg.clip_eps);
        // gradient flows only through the unclipped branch when it is the minimum
        let g = if unclipped <= obj { ratio * a } else { 0.0 };
        let diff = z - mu;
        d_mean[i] = -g * diff / var / b;
        d_log_std += -g * (diff * diff / var - 1.0) / b;
        per_sample.push(obj);
        ratios.push(ratio);
    }
    let entropy = gaussian_entropy(policy.log_std);
    d_log_std -= cfg.entropy_coef;
    let loss = -(per_sample.iter().sum::<f64>() / b) - cfg.entropy_coef * entropy;
    let actor_grads = policy.actor.backward(&acts, &d_mean)?;
    Ok(SurrogateEval {
        loss,
        per_sample_objective: per_sample,
        ratios,
        clip_fraction: clipped as f64 / b,
        entropy,
        actor_grads,
        log_std_grad: d_log_std,
    })
}

/// Adam state for the actor (including `log_std`) and the critic.
#[derive(Debug, Clone)]
pub struct PpoOptimizers {
    pub actor: Optimizer,
    pub critic: Optimizer,
}

impl PpoOptimizers {
    pub fn new(cfg: &PpoConfig) -> Self {
        PpoOptimizers {
            actor: Optimizer::adam(cfg.actor_lr),
            critic: Optimizer::adam(cfg.critic_lr),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinibatchDiagnostics {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub objective: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoReport {
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub minibatches: usize,
    /// Snapshot of the very first minibatch, taken before any parameter moved.
    pub first_minibatch: MinibatchDiagnostics,
}

/// Clipped-surrogate PPO over the buffer: `ppo_epochs` passes of shuffled
/// minibatches, actor (with `log_std`) and critic stepped on every minibatch.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut TutorPolicy,
    optimizers: &mut PpoOptimizers,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoReport> {
    let (advantages, returns) = compute_advantages(buffer, policy, cfg.advantage_norm)?;
    let exps = buffer.experiences();
    let inputs: Vec<Vec<f64>> = exps.iter().map(|e| e.state.to_vec()).collect();

    let mut order: Vec<usize> = (0..exps.len()).collect();
    let mut ratio_sum = 0.0;
    let mut ratio_count = 0usize;
    let mut clip_sum = 0.0;
    let mut actor_loss_sum = 0.0;
    let mut critic_loss_sum = 0.0;
    let mut minibatches = 0usize;
    let mut first = None;

    for _ in 0..cfg.ppo_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let batch = SurrogateBatch {
                states: chunk.iter().map(|&i| inputs[i].clone()).collect(),
                logits: chunk.iter().map(|&i| exps[i].action.logit).collect(),
                old_log_probs: chunk.iter().map(|&i| exps[i].action.log_prob).collect(),
                advantages: chunk.iter().map(|&i| advantages[i]).collect(),
            };
            let eval = surrogate(policy, &batch, cfg)?;
            if !eval.loss.is_finite()
                || !eval.actor_grads.all_finite()
                || !eval.log_std_grad.is_finite()
            {
                return Err(TsrlError::NonFinite(format!(
                    "PPO actor loss {} in minibatch {minibatches}",
                    eval.loss
                )));
            }
            if first.is_none() {
                first = Some(MinibatchDiagnostics {
                    mean_ratio: eval.ratios.iter().sum::<f64>() / eval.ratios.len() as f64,
                    clip_fraction: eval.clip_fraction,
                    objective: eval.per_sample_objective.clone(),
                    advantages: batch.advantages.clone(),
                });
            }

            // critic regression onto returns
            let critic_acts = policy.critic.forward_cached(&batch.states)?;
            let b = chunk.len() as f64;
            let mut critic_loss = 0.0;
            let d_value: Vec<f64> = critic_acts
                .output()
                .iter()
                .zip(chunk)
                .map(|(v, &i)| {
                    let d = v - returns[i];
                    critic_loss += d * d / b;
                    cfg.value_coef * 2.0 * d / b
                })
                .collect();
            let critic_grads = policy.critic.backward(&critic_acts, &d_value)?;
            if !critic_loss.is_finite() || !critic_grads.all_finite() {
                return Err(TsrlError::NonFinite(format!(
                    "PPO critic loss {critic_loss} in minibatch {minibatches}"
                )));
            }

            let mut actor_tensors = policy.actor.param_tensors_mut();
            actor_tensors.push(std::slice::from_mut(&mut policy.log_std));
            let mut actor_grads = eval.actor_grads.tensors();
            let log_std_grad = [eval.log_std_grad];
            actor_grads.push(&log_std_grad);
            optimizers.actor.step(actor_tensors, actor_grads)?;
            policy.log_std = policy.log_std.clamp(MIN_LOG_STD, MAX_LOG_STD);
            optimizers
                .critic
                .step(policy.critic.param_tensors_mut(), critic_grads.tensors())?;

            ratio_sum += eval.ratios.iter().sum::<f64>();
            ratio_count += eval.ratios.len();
            clip_sum += eval.clip_fraction;
            actor_loss_sum += eval.loss;
            critic_loss_sum += critic_loss;
            minibatches += 1;
        }
    }
    let m = minibatches as f64;
    Ok(PpoReport {
        mean_ratio: ratio_sum / ratio_count as f64,
        clip_fraction: clip_sum / m,
        actor_loss: actor_loss_sum / m,
        critic_loss: critic_loss_sum / m,
        minibatches,
        first_minibatch: first.expect("buffer is non-empty"),
    })
}
