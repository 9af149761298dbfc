//! Clipped, KL-regularized group objective and the two-phase training loop.
//!
//! One step samples a solution group per instance, scores it, turns the
//! rewards into advantages with the configured [`Strategy`], and takes a
//! single gradient-ascent step on the batch-averaged objective
//!
//! ```text
//! J = 1/G sum_i min(rho_i A_i, clip(rho_i, 1 - eps, 1 + eps) A_i) - beta KL(pi || pi_ref)
//! ```
//!
//! Samples are drawn from the current weights and the update happens once per
//! batch, so `rho_i = 1` whenever the objective is evaluated inside the loop.
//!
//! Training runs an answer-only phase followed by a think-answer phase that
//! adds the format reward. The KL reference is re-frozen at each phase start.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::{self, compute_advantages, AdvantageError, Strategy};
use crate::env::{self, EnvError, TaskInstance, NUM_TEMPLATES};
use crate::math;
use crate::policy::{interval_action_index, ActionPair, IntervalPolicy, PolicyError, PolicyGradient};
use crate::rewards::{score_solution, RewardBreakdown, DEFAULT_FORMAT_WEIGHT};
use crate::stats::Quartiles;
use crate::structured::Schema;
use crate::temporal::{RewardGroup, ShapingConfig, Source, TemporalError};

/// Version of the run-log and summary layouts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config field `{field}`: {reason}")]
    ConfigInvalid { field: &'static str, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("length mismatch: {0}")]
    LengthMismatch(&'static str),
    #[error("sink rejected a record: {0}")]
    Sink(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
}

fn invalid(field: &'static str, reason: &str) -> TrainError {
    TrainError::ConfigInvalid {
        field,
        reason: String::from(reason),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Solutions per group, including the injected one.
    #[serde(rename = "g")]
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    /// Steps of the answer-only phase and the think-answer phase.
    pub steps_per_phase: (usize, usize),
    /// Instances per step.
    pub batch_size: usize,
    pub num_bins: usize,
    pub strategy: Strategy,
    pub shaping: ShapingConfig,
    pub w_f: f64,
    /// Append the ground truth to every group.
    pub inject_off_policy: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            clip_epsilon: 0.2,
            kl_beta: 0.04,
            learning_rate: 0.05,
            steps_per_phase: (500, 500),
            batch_size: 8,
            num_bins: 16,
            strategy: Strategy::NonLinearShape,
            shaping: ShapingConfig::default(),
            w_f: DEFAULT_FORMAT_WEIGHT,
            inject_off_policy: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.group_size < 2 {
            return Err(invalid("g", "G ≥ 2 required"));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(invalid("clip_epsilon", "ε ∈ (0, 1) required"));
        }
        if !(self.kl_beta.is_finite() && self.kl_beta >= 0.0) {
            return Err(invalid("kl_beta", "β ≥ 0 required"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid("learning_rate", "learning_rate > 0 required"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "batch_size ≥ 1 required"));
        }
        if self.num_bins < 2 {
            return Err(invalid("num_bins", "num_bins ≥ 2 required"));
        }
        if !(self.w_f.is_finite() && self.w_f >= 0.0) {
            return Err(invalid("w_f", "w_f ≥ 0 required"));
        }
        if let Err(TemporalError::InvalidShaping(reason)) = self.shaping.validate() {
            return Err(invalid("shaping", reason));
        }
        if self.strategy.requires_off_policy() && !self.inject_off_policy {
            return Err(invalid(
                "strategy",
                "downscale and anchor need off-policy injection",
            ));
        }
        if self.strategy == Strategy::Anchor && self.group_size < 3 {
            return Err(invalid("g", "anchor needs G ≥ 3 (two on-policy solutions)"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_phase.0 + self.steps_per_phase.1
    }
}

/// Value and gradient of the group objective for one observation.
///
/// `actions`, `advantages` and `old_log_probs` are aligned, one entry per
/// solution. The KL term is skipped when `kl_beta` is zero.
pub fn grpo_objective(
    policy: &IntervalPolicy,
    observation: &[f64],
    actions: &[ActionPair],
    advantages: &[f64],
    old_log_probs: &[f64],
    clip_epsilon: f64,
    kl_beta: f64,
) -> Result<(f64, PolicyGradient), TrainError> {
    if actions.len() != advantages.len() || actions.len() != old_log_probs.len() {
        return Err(TrainError::LengthMismatch(
            "actions, advantages and old log-probs must align",
        ));
    }
    if actions.is_empty() {
        return Err(TrainError::LengthMismatch("empty solution group"));
    }
    let inv_g = 1.0 / actions.len() as f64;
    let mut surrogate = 0.0;
    let mut grad = PolicyGradient::zeros_like(policy);
    for ((&action, &adv), &old) in actions.iter().zip(advantages).zip(old_log_probs) {
        let log_prob = policy.log_prob(observation, action)?;
        let ratio = math::exp(log_prob - old);
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv;
        if unclipped <= clipped {
            surrogate += unclipped;
            if adv != 0.0 {
                let score = policy.grad_log_prob(observation, action)?;
                grad.add_scaled(&score, inv_g * adv * ratio);
            }
        } else {
            surrogate += clipped;
        }
    }
    let mut objective = inv_g * surrogate;
    if kl_beta > 0.0 {
        let (kl, kl_grad) = policy.kl_and_grad(observation)?;
        objective -= kl_beta * kl;
        grad.add_scaled(&kl_grad, -kl_beta);
    }
    Ok((objective, grad))
}

/// Per-step training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: Schema,
    pub strategy: Strategy,
    /// Total rewards per group, in solution order (off-policy last).
    pub rewards: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
    /// Best on-policy task reward of each group.
    pub top1_rewards: Vec<f64>,
    /// Skewness of all advantages of the step pooled; `None` when degenerate.
    pub skewness: Option<f64>,
    /// Mean KL to the reference over the batch.
    pub kl: f64,
    /// Mean group objective over the batch.
    pub objective: f64,
    /// Mean probability of the ground-truth interval action, before the update.
    pub gt_action_prob: f64,
}

/// Receives step records as they are produced.
pub trait StepSink {
    fn record(&mut self, record: &StepRecord) -> Result<(), String>;
}

impl StepSink for Vec<StepRecord> {
    fn record(&mut self, record: &StepRecord) -> Result<(), String> {
        self.push(record.clone());
        Ok(())
    }
}

/// Discards every record.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl StepSink for NullSink {
    fn record(&mut self, _record: &StepRecord) -> Result<(), String> {
        Ok(())
    }
}

/// Scores and weights one sampled group.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredGroup {
    pub breakdowns: Vec<RewardBreakdown>,
    pub group: RewardGroup,
    pub advantages: Vec<f64>,
}

pub fn score_group(
    sample: &env::GroupSample,
    instance: &TaskInstance,
    phase: Schema,
    cfg: &TrainConfig,
) -> Result<ScoredGroup, TrainError> {
    let breakdowns: Vec<RewardBreakdown> = sample
        .solutions
        .iter()
        .map(|s| score_solution(s.raw_text(), &instance.gt, phase, cfg.w_f))
        .collect();
    let group = RewardGroup::new(
        breakdowns.iter().map(|b| b.total).collect(),
        sample.solutions.iter().map(|s| s.source()).collect(),
    )?;
    let advantages = compute_advantages(&group, cfg.strategy, &cfg.shaping)?.values;
    Ok(ScoredGroup {
        breakdowns,
        group,
        advantages,
    })
}

/// One sampling + update step over `batch`.
pub fn train_step<R: RngCore>(
    policy: &mut IntervalPolicy,
    batch: &[&TaskInstance],
    step: usize,
    phase: Schema,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepRecord, TrainError> {
    let mut grad = PolicyGradient::zeros_like(policy);
    let mut rewards = Vec::with_capacity(batch.len());
    let mut advantages = Vec::with_capacity(batch.len());
    let mut top1_rewards = Vec::with_capacity(batch.len());
    let mut pooled = Vec::new();
    let mut objective = 0.0;
    let mut kl = 0.0;
    let mut gt_prob = 0.0;
    for instance in batch {
        let seed = rng.next_u64();
        let sample = env::sample_solutions(
            policy,
            instance,
            cfg.group_size,
            phase,
            cfg.inject_off_policy,
            seed,
        )?;
        let scored = score_group(&sample, instance, phase, cfg)?;
        let actions = sample.all_actions();
        let mut old_log_probs = sample.log_probs.clone();
        if let Some(off) = sample.off_policy_action {
            old_log_probs.push(policy.log_prob(&instance.observation, off)?);
        }
        let (value, group_grad) = grpo_objective(
            policy,
            &instance.observation,
            &actions,
            &scored.advantages,
            &old_log_probs,
            cfg.clip_epsilon,
            cfg.kl_beta,
        )?;
        grad.add_scaled(&group_grad, 1.0);
        objective += value;
        if policy.reference().is_some() {
            kl += policy.kl_to_ref(&instance.observation)?;
        }
        if let Some(action) = gt_interval_action(instance, policy.num_bins()) {
            gt_prob += policy.action_probs(&instance.observation)?[action];
        }
        let top1 = scored
            .breakdowns
            .iter()
            .zip(scored.group.sources())
            .filter(|(_, s)| **s == Source::OnPolicy)
            .map(|(b, _)| b.task_reward)
            .fold(f64::NEG_INFINITY, f64::max);
        top1_rewards.push(top1);
        pooled.extend_from_slice(&scored.advantages);
        rewards.push(scored.group.rewards().to_vec());
        advantages.push(scored.advantages);
    }
    let inv_b = 1.0 / batch.len() as f64;
    grad.scale(inv_b);
    policy.apply(&grad, cfg.learning_rate);
    Ok(StepRecord {
        step,
        phase,
        strategy: cfg.strategy,
        rewards,
        advantages,
        top1_rewards,
        skewness: advantage::sample_skewness(&pooled).ok(),
        kl: kl * inv_b,
        objective: objective * inv_b,
        gt_action_prob: gt_prob * inv_b,
    })
}

fn gt_interval_action(instance: &TaskInstance, num_bins: usize) -> Option<usize> {
    let (first, last) = instance.gt_bins(num_bins)?;
    interval_action_index(num_bins, first, last)
}

/// Mean absolute skewness per phase; `None` when the phase had no defined value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSkewness {
    pub answer_only: Option<f64>,
    pub think_answer: Option<f64>,
}

/// End-of-run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub total_steps: usize,
    /// Steps in the trailing window the quartiles are taken over.
    pub final_window_steps: usize,
    /// Quartiles of top-1 on-policy task rewards over the final 20% of steps.
    pub final_top1: Option<Quartiles>,
    pub mean_abs_skewness: PhaseSkewness,
    pub final_kl: Option<f64>,
    pub final_gt_action_prob: Option<f64>,
}

/// Number of trailing steps summarized: 20% of the run, at least one step.
pub fn final_window(total_steps: usize) -> usize {
    if total_steps == 0 {
        0
    } else {
        total_steps.div_ceil(5)
    }
}

fn mean_abs(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v.abs(), c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Runs both phases from a uniform policy and streams every step to `sink`.
pub fn train<S: StepSink + ?Sized>(
    cfg: &TrainConfig,
    dataset: &[TaskInstance],
    sink: &mut S,
) -> Result<(IntervalPolicy, RunSummary), TrainError> {
    cfg.validate()?;
    let first = dataset.first().ok_or(TrainError::EmptyDataset)?;
    let feature_dim = first.observation.len();
    if let Some(bad) = dataset.iter().find(|i| i.observation.len() != feature_dim) {
        return Err(TrainError::Policy(PolicyError::DimensionMismatch {
            expected: feature_dim,
            got: bad.observation.len(),
        }));
    }
    let mut policy = IntervalPolicy::zeros(feature_dim, cfg.num_bins, NUM_TEMPLATES);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.total_steps();
    let window_start = total - final_window(total);
    let mut window_top1 = Vec::new();
    let mut skew = [Vec::new(), Vec::new()];
    let mut last: Option<StepRecord> = None;
    let mut step = 0;
    let phases = [
        (Schema::AnswerOnly, cfg.steps_per_phase.0),
        (Schema::ThinkAnswer, cfg.steps_per_phase.1),
    ];
    for (phase_index, (phase, steps)) in phases.into_iter().enumerate() {
        if steps == 0 {
            continue;
        }
        policy.snapshot_reference();
        for _ in 0..steps {
            let batch: Vec<&TaskInstance> = (0..cfg.batch_size)
                .map(|k| &dataset[(step * cfg.batch_size + k) % dataset.len()])
                .collect();
            let record = train_step(&mut policy, &batch, step, phase, cfg, &mut rng)?;
            sink.record(&record).map_err(TrainError::Sink)?;
            if step >= window_start {
                window_top1.extend_from_slice(&record.top1_rewards);
            }
            skew[phase_index].extend(record.skewness);
            last = Some(record);
            step += 1;
        }
    }
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        total_steps: total,
        final_window_steps: final_window(total),
        final_top1: Quartiles::of(&window_top1),
        mean_abs_skewness: PhaseSkewness {
            answer_only: mean_abs(skew[0].iter().copied()),
            think_answer: mean_abs(skew[1].iter().copied()),
        },
        final_kl: last.as_ref().map(|r| r.kl),
        final_gt_action_prob: last.as_ref().map(|r| r.gt_action_prob),
    };
    Ok((policy, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_dataset, DatasetSpec};
    use crate::structured::Task;
    use alloc::vec;

    #[test]
    fn config_validation_names_the_field() {
        let cfg = TrainConfig {
            group_size: 1,
            ..TrainConfig::default()
        };
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, TrainError::ConfigInvalid { field: "g", .. }));
        assert!(alloc::format!("{err}").contains("G ≥ 2"));
        let cfg = TrainConfig {
            strategy: Strategy::Anchor,
            inject_off_policy: false,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn zero_advantages_at_reference_give_zero_objective_and_gradient() {
        let mut policy = IntervalPolicy::zeros(4, 2, NUM_TEMPLATES);
        policy.snapshot_reference();
        let obs = [1.0, 0.0, 0.0, 1.0];
        let actions = vec![ActionPair { interval: 0, template: 1 }, ActionPair { interval: 2, template: 0 }];
        let old: Vec<f64> = actions.iter().map(|a| policy.log_prob(&obs, *a).unwrap()).collect();
        let (value, grad) = grpo_objective(&policy, &obs, &actions, &[0.0, 0.0], &old, 0.2, 0.04).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn unit_ratio_surrogate_equals_mean_advantage() {
        let mut policy = IntervalPolicy::zeros(2, 2, NUM_TEMPLATES);
        policy.weights_mut().as_mut_slice()[1] = 0.7;
        let obs = [0.5, 1.0];
        let actions = vec![ActionPair { interval: 1, template: 3 }, ActionPair { interval: 2, template: 0 }];
        let old: Vec<f64> = actions.iter().map(|a| policy.log_prob(&obs, *a).unwrap()).collect();
        let (value, _) = grpo_objective(&policy, &obs, &actions, &[1.5, -0.5], &old, 0.2, 0.0).unwrap();
        assert_eq!(value, 0.5);
    }

    #[test]
    fn clipped_ratio_blocks_gradient() {
        let policy = IntervalPolicy::zeros(1, 2, NUM_TEMPLATES);
        let obs = [1.0];
        let a = ActionPair { interval: 0, template: 0 };
        let lp = policy.log_prob(&obs, a).unwrap();
        // rho = e^{0.5} > 1.2 with positive advantage: clipped branch active.
        let (value, grad) = grpo_objective(&policy, &obs, &[a], &[1.0], &[lp - 0.5], 0.2, 0.0).unwrap();
        assert!((value - 1.2).abs() < 1e-15);
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn empty_schedule_returns_initial_policy() {
        let data = generate_dataset(&DatasetSpec {
            num_instances: 4,
            num_bins: 4,
            ..DatasetSpec::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            steps_per_phase: (0, 0),
            num_bins: 4,
            ..TrainConfig::default()
        };
        let mut records: Vec<StepRecord> = Vec::new();
        let (policy, summary) = train(&cfg, &data, &mut records).unwrap();
        assert_eq!(policy, IntervalPolicy::zeros(8, 4, NUM_TEMPLATES));
        assert!(records.is_empty());
        assert_eq!(summary.total_steps, 0);
        assert!(summary.final_top1.is_none());
        assert!(matches!(train(&cfg, &[], &mut NullSink), Err(TrainError::EmptyDataset)));
    }

    #[test]
    fn answer_only_phase_excludes_format_reward() {
        let data = generate_dataset(&DatasetSpec {
            num_instances: 4,
            num_bins: 4,
            task: Task::Grounding,
            ..DatasetSpec::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            num_bins: 4,
            ..TrainConfig::default()
        };
        let policy = IntervalPolicy::zeros(8, 4, NUM_TEMPLATES);
        for seed in 0..20 {
            let sample = env::sample_solutions(&policy, &data[0], 4, Schema::AnswerOnly, true, seed).unwrap();
            let scored = score_group(&sample, &data[0], Schema::AnswerOnly, &cfg).unwrap();
            for b in &scored.breakdowns {
                assert_eq!(b.total, b.task_reward);
            }
        }
    }

    #[test]
    fn final_window_is_a_fifth_rounded_up() {
        assert_eq!(final_window(0), 0);
        assert_eq!(final_window(1), 1);
        assert_eq!(final_window(10), 2);
        assert_eq!(final_window(2000), 400);
        assert_eq!(final_window(11), 3);
    }
}
