//! Group-relative policy optimization.
//!
//! Each step samples a group of G completions per task from a frozen copy of
//! the current policy, grades them with the verifiable rewards, standardizes
//! rewards within each group into advantages, and ascends the surrogate
//!
//! ```text
//! J = (1/G) sum_i [ exp(log pi(o_i) - log pi_old(o_i)) * A_i - beta * KL_i ]
//! ```
//!
//! averaged over the task batch. There is no critic: the group statistics are
//! the baseline. The KL term penalizes drift from the frozen reference policy
//! and is estimated per token by `k3 = rho - ln rho - 1` with
//! `rho = pi_ref(token|ctx) / pi(token|ctx)`, averaged over the sequence;
//! `k3` is non-negative and unbiased. The importance ratio is sequence-level
//! and computed in log space. No ratio clipping by default; an optional clip
//! is available for ablations.

use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::policy::{
    self, greedy_completion, sample_completion, Completion, PolicyParams, PolicySnapshot, Role,
};
use crate::reward::{self, RewardBreakdown, RewardWeights};
use crate::rng::{namespace, Stream};
use crate::task::Task;

/// Optimizer used for the parameter update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    /// Adam with decay 0.9/0.999 and epsilon 1e-8.
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(CoreError::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Group size G (completions per task).
    pub group_size: usize,
    /// KL penalty coefficient.
    pub beta: f64,
    pub weights: RewardWeights,
    pub lr: f64,
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
    pub steps: usize,
    /// Below this reward standard deviation a group is degenerate and its
    /// advantages are zeroed instead of epsilon-inflated.
    pub eps_std: f64,
    pub optimizer: OptimizerKind,
    /// Optional PPO-style ratio clip for ablations; off by default.
    pub clip_eps: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            group_size: 8,
            beta: 0.04,
            weights: RewardWeights::default(),
            lr: 1e-2,
            temperature: 1.0,
            max_len: 24,
            seed: 42,
            steps: 562,
            eps_std: 1e-8,
            optimizer: OptimizerKind::Adam,
            clip_eps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(CoreError::Config(format!(
                "group size must be at least 2, got {}",
                self.group_size
            )));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return Err(CoreError::Config(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if self.lr <= 0.0 {
            return Err(CoreError::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.temperature <= 0.0 {
            return Err(CoreError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.max_len == 0 {
            return Err(CoreError::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// One task's group of completions with rewards and standardized advantages.
#[derive(Debug, Clone)]
pub struct GroupSample {
    pub task: Task,
    pub completions: Vec<Completion>,
    pub breakdowns: Vec<RewardBreakdown>,
    /// Total rewards r_i.
    pub rewards: Vec<f64>,
    /// Standardized advantages A_i.
    pub advantages: Vec<f64>,
}

/// Per-step training metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub mean_total_reward: f64,
    pub mean_acc_reward: f64,
    pub mean_fmt_reward: f64,
    pub mean_kl: f64,
    pub mean_completion_len: f64,
}

impl StepMetrics {
    fn validate(&self) -> Result<()> {
        let fields = [
            self.loss,
            self.mean_total_reward,
            self.mean_acc_reward,
            self.mean_fmt_reward,
            self.mean_kl,
            self.mean_completion_len,
        ];
        if fields.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::Numerical(format!(
                "non-finite metric at step {}: {self:?}",
                self.step
            )));
        }
        Ok(())
    }
}

/// Standardize rewards within a group: `A_i = (r_i - mean) / std` with the
/// population (divide-by-G) standard deviation. A group whose std falls
/// below `eps_std` gets all-zero advantages.
pub fn compute_advantages(rewards: &[f64], eps_std: f64) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(CoreError::Config(format!("group size must be at least 2, got {g}")));
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    if std < eps_std {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// Mean per-token `k3` estimate of `KL[pi_current || pi_ref]` along one
/// realized sequence: `k3_t = rho_t - ln rho_t - 1`,
/// `rho_t = pi_ref(token_t|ctx) / pi_current(token_t|ctx)`. Each term is
/// non-negative and the result is exactly zero when the parameter vectors
/// coincide.
pub fn kl_to_reference(
    current: &PolicyParams,
    reference: &PolicySnapshot,
    task: &Task,
    token_ids: &[usize],
    temperature: f64,
) -> Result<f64> {
    if token_ids.is_empty() {
        return Ok(0.0);
    }
    let lp_cur = policy::step_logprobs(current, task, token_ids, temperature)?;
    let lp_ref = policy::step_logprobs(reference.params(), task, token_ids, temperature)?;
    let mut acc = 0.0;
    for (lc, lr) in lp_cur.iter().zip(&lp_ref) {
        let log_rho = lr - lc;
        acc += log_rho.exp() - log_rho - 1.0;
    }
    Ok(acc / token_ids.len() as f64)
}

/// GRPO surrogate loss and its exact gradient for one group.
///
/// Returns `loss = -J` (minimization convention) and `d loss / d current`,
/// assembled from the closed-form per-step gradients. `clip_eps`, when set,
/// applies the pessimistic PPO-style clipped objective
/// `min(ratio * A, clamp(ratio, 1-eps, 1+eps) * A)`.
pub fn grpo_loss_and_grad(
    current: &PolicyParams,
    old: &PolicySnapshot,
    reference: &PolicySnapshot,
    group: &GroupSample,
    beta: f64,
    temperature: f64,
    clip_eps: Option<f64>,
) -> Result<(f64, Vec<f64>)> {
    let g = group.completions.len();
    if g == 0 || group.advantages.len() != g {
        return Err(CoreError::Config("group completions/advantages length mismatch".into()));
    }
    let v = current.vocab_size;
    let d = current.dim();
    let mut objective = 0.0;
    let mut grad_j = vec![0.0; v * d];

    for (i, comp) in group.completions.iter().enumerate() {
        let ids = &comp.token_ids;
        let t_len = ids.len();
        if t_len == 0 {
            continue;
        }
        let adv = group.advantages[i];
        let cache = policy::step_cache(current, task_of(group), ids, temperature)?;
        let lp_old = policy::sequence_logprob(old.params(), task_of(group), ids, temperature)?;
        let lp_ref = policy::step_logprobs(reference.params(), task_of(group), ids, temperature)?;

        let lp_cur_total: f64 = cache.logp.iter().sum();
        // sequence-level importance ratio, formed in log space
        let ratio = (lp_cur_total - lp_old).exp();
        if !ratio.is_finite() {
            return Err(CoreError::Numerical(format!(
                "non-finite importance ratio for sample {i} (log ratio {})",
                lp_cur_total - lp_old
            )));
        }

        // surrogate term and the coefficient its gradient puts on every step
        let (surrogate, ratio_coeff) = match clip_eps {
            None => (ratio * adv, ratio * adv),
            Some(eps) => {
                let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
                let raw = ratio * adv;
                if raw <= clipped {
                    (raw, raw)
                } else {
                    // clipped branch active; zero slope once the clamp saturates
                    let slope = if (1.0 - eps..=1.0 + eps).contains(&ratio) { raw } else { 0.0 };
                    (clipped, slope)
                }
            }
        };

        // per-token k3 and its gradient coefficient (1 - rho_t)
        let mut kl = 0.0;
        let mut step_coeff = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let log_rho = lp_ref[t] - cache.logp[t];
            let rho = log_rho.exp();
            kl += rho - log_rho - 1.0;
            step_coeff.push(ratio_coeff - beta / t_len as f64 * (1.0 - rho));
        }
        kl /= t_len as f64;
        objective += surrogate - beta * kl;

        for t in 0..t_len {
            let coeff = step_coeff[t];
            if coeff == 0.0 {
                continue;
            }
            let phi = &cache.phi[t];
            let probs = &cache.probs[t];
            let tok = ids[t];
            for row in 0..v {
                let c = coeff * (((row == tok) as u8 as f64) - probs[row]) / temperature;
                if c == 0.0 {
                    continue;
                }
                let dst = &mut grad_j[row * d..(row + 1) * d];
                for (gslot, &x) in dst.iter_mut().zip(phi) {
                    *gslot += c * x;
                }
            }
        }
    }

    let scale = -1.0 / g as f64;
    let loss = scale * objective;
    for x in grad_j.iter_mut() {
        *x *= scale;
    }
    if !loss.is_finite() || grad_j.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::Numerical("non-finite loss or gradient".into()));
    }
    Ok((loss, grad_j))
}

fn task_of(group: &GroupSample) -> &Task {
    &group.task
}

/// Adam moments.
#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Training engine: owns the current parameters, the frozen reference
/// snapshot, and the optimizer moments. The reference is the initial policy
/// at construction time and never changes; the old policy is re-snapshotted
/// from the current parameters at the start of every step.
pub struct Engine {
    config: TrainConfig,
    current: PolicySnapshot,
    reference: PolicySnapshot,
    adam: AdamState,
    step: u64,
}

impl Engine {
    pub fn new(params: PolicyParams, vocab: crate::vocab::Vocabulary, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let current = PolicySnapshot::new(params, vocab, Role::Current)?;
        let reference = current.with_role(Role::Reference);
        let n = current.params().w.len();
        Ok(Engine {
            config,
            current,
            reference,
            adam: AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 },
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn current_snapshot(&self) -> PolicySnapshot {
        self.current.clone()
    }

    pub fn reference_snapshot(&self) -> &PolicySnapshot {
        &self.reference
    }

    /// Sample a group for each task from `old`, grade and standardize.
    ///
    /// Rollouts fan out over worker threads; each completion draws from its
    /// own stream `[ROLLOUT, step, task_index, rollout_index]` and results
    /// are merged back in that order, so scheduling cannot change anything.
    fn rollout_groups(&self, old: &PolicySnapshot, tasks: &[Task]) -> Result<Vec<GroupSample>> {
        let cfg = &self.config;
        let step = self.step;
        tasks
            .par_iter()
            .enumerate()
            .map(|(ti, task)| {
                let mut completions = Vec::with_capacity(cfg.group_size);
                for ri in 0..cfg.group_size {
                    let mut rng = Stream::derive(
                        cfg.seed,
                        &[namespace::ROLLOUT, step, ti as u64, ri as u64],
                    );
                    completions.push(sample_completion(
                        old,
                        task,
                        cfg.temperature,
                        cfg.max_len,
                        &mut rng,
                    )?);
                }
                let breakdowns: Vec<RewardBreakdown> = completions
                    .iter()
                    .map(|c| reward::grade_completion(c, task, cfg.weights))
                    .collect::<Result<_>>()?;
                let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
                let advantages = compute_advantages(&rewards, cfg.eps_std)?;
                Ok(GroupSample { task: task.clone(), completions, breakdowns, rewards, advantages })
            })
            .collect()
    }

    /// One training step over a task batch: snapshot the current policy as
    /// old, roll out G completions per task, grade, standardize, take one
    /// optimizer step on the averaged surrogate gradient, and report metrics.
    pub fn train_step(&mut self, tasks: &[Task]) -> Result<StepMetrics> {
        if tasks.is_empty() {
            return Err(CoreError::Config("empty task batch".into()));
        }
        let cfg = self.config.clone();
        let old = self.current.with_role(Role::Old);
        let groups = self.rollout_groups(&old, tasks)?;

        let n_params = self.current.params().w.len();
        let mut loss_acc = 0.0;
        let mut grad = vec![0.0; n_params];
        let mut kl_acc = 0.0;
        for group in &groups {
            let (loss, g) = grpo_loss_and_grad(
                self.current.params(),
                &old,
                &self.reference,
                group,
                cfg.beta,
                cfg.temperature,
                cfg.clip_eps,
            )?;
            loss_acc += loss;
            for (dst, src) in grad.iter_mut().zip(&g) {
                *dst += src;
            }
            for comp in &group.completions {
                kl_acc += kl_to_reference(
                    self.current.params(),
                    &self.reference,
                    &group.task,
                    &comp.token_ids,
                    cfg.temperature,
                )?;
            }
        }
        let n_groups = groups.len() as f64;
        let loss = loss_acc / n_groups;
        for g in grad.iter_mut() {
            *g /= n_groups;
        }

        self.apply_update(&grad)?;

        let n_samples = (groups.len() * cfg.group_size) as f64;
        let eos = self.current.vocab().eos_id();
        let mut total = 0.0;
        let mut acc = 0.0;
        let mut fmt = 0.0;
        let mut len = 0.0;
        for group in &groups {
            for b in &group.breakdowns {
                total += b.total;
                acc += b.r_acc;
                fmt += b.r_fmt;
            }
            for c in &group.completions {
                len += c.len_before_eos(eos) as f64;
            }
        }
        let metrics = StepMetrics {
            step: self.step,
            loss,
            mean_total_reward: total / n_samples,
            mean_acc_reward: acc / n_samples,
            mean_fmt_reward: fmt / n_samples,
            mean_kl: kl_acc / n_samples,
            mean_completion_len: len / n_samples,
        };
        metrics.validate()?;
        self.step += 1;
        Ok(metrics)
    }

    fn apply_update(&mut self, grad: &[f64]) -> Result<()> {
        let lr = self.config.lr;
        let mut params = self.current.params().clone();
        match self.config.optimizer {
            OptimizerKind::Sgd => {
                for (w, g) in params.w.iter_mut().zip(grad) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.adam.t += 1;
                let t = self.adam.t as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for (i, (w, &g)) in params.w.iter_mut().zip(grad).enumerate() {
                    let m = &mut self.adam.m[i];
                    let v = &mut self.adam.v[i];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                }
            }
        }
        if params.w.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::Numerical(format!(
                "non-finite parameter after update at step {}",
                self.step
            )));
        }
        self.current = PolicySnapshot::new(params, self.current.vocab().clone(), Role::Current)?;
        Ok(())
    }
}

/// Greedy-decode every task and return mean answer accuracy.
pub fn evaluate(snapshot: &PolicySnapshot, tasks: &[Task], max_len: usize) -> Result<f64> {
    if tasks.is_empty() {
        return Err(CoreError::Config("empty evaluation set".into()));
    }
    let weights = RewardWeights::default();
    let mut correct = 0.0;
    for task in tasks {
        let completion = greedy_completion(snapshot, task, max_len)?;
        correct += reward::grade_completion(&completion, task, weights)?.r_acc;
    }
    Ok(correct / tasks.len() as f64)
}
