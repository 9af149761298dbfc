//! Synthetic temporal grounding and highlight episodes, and mixed-policy
//! group sampling on top of [`IntervalPolicy`].
//!
//! Every instance hides a ground-truth bin pair `(i, j)`. The observation is
//! `onehot(i) ++ onehot(j)` plus optional Gaussian noise, so with zero noise the
//! optimal answer is exactly representable by the policy.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use crate::rewards::{GroundTruth, SalientAnnotation};
use crate::policy::{
    interval_action_bins, interval_action_index, num_interval_actions, ActionPair,
    IntervalPolicy, PolicyError,
};
use crate::structured::{self, HighlightAnswer, Payload, Schema, Task};
use crate::temporal::{SaliencyTrack, Solution, TemporalError, TimeInterval};

/// Number of output templates on the format head.
pub const NUM_TEMPLATES: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnvError {
    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("observation noise must be finite and non-negative, got {0}")]
    InvalidNoise(f64),
    #[error("bin length must be positive and finite, got {0}")]
    InvalidBinLength(f64),
    #[error("instance {0} has a ground truth that is not bin-aligned")]
    UnalignedGroundTruth(u64),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Temporal(#[from] TemporalError),
}

/// How a sampled answer is wrapped into text. Two templates are well formed
/// (one per schema), two are deliberately broken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    ThinkAnswer,
    AnswerOnly,
    /// Think block never closed; the answer is still readable.
    UnclosedThink,
    /// No tags at all; nothing can be read back.
    Untagged,
}

impl Template {
    pub const ALL: [Template; NUM_TEMPLATES] = [
        Template::ThinkAnswer,
        Template::AnswerOnly,
        Template::UnclosedThink,
        Template::Untagged,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// The well-formed template for a schema.
    pub fn canonical(schema: Schema) -> Self {
        match schema {
            Schema::ThinkAnswer => Template::ThinkAnswer,
            Schema::AnswerOnly => Template::AnswerOnly,
        }
    }

    pub fn render(self, payload: &Payload, think: &str) -> String {
        let schema = match self {
            Template::ThinkAnswer => Schema::ThinkAnswer,
            _ => Schema::AnswerOnly,
        };
        let think_arg = (schema == Schema::ThinkAnswer).then_some(think);
        // Payloads built here are finite and think text carries no tags.
        let canonical = structured::emit_output(payload, think_arg, schema)
            .expect("environment payloads always render");
        match self {
            Template::ThinkAnswer | Template::AnswerOnly => canonical,
            Template::UnclosedThink => format!("<Think>{think}{canonical}"),
            Template::Untagged => {
                let mut body = String::from("Answer: ");
                let _ = structured::write_payload(&mut body, payload);
                body
            }
        }
    }
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub num_instances: usize,
    pub num_bins: usize,
    pub obs_noise: f64,
    pub task: Task,
    /// Seconds per bin (clip length for highlight instances).
    pub bin_seconds: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_instances: 64,
            num_bins: 16,
            obs_noise: 0.0,
            task: Task::Grounding,
            bin_seconds: 10.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.num_bins < 2 {
            return Err(EnvError::TooFewBins(self.num_bins));
        }
        if !(self.obs_noise.is_finite() && self.obs_noise >= 0.0) {
            return Err(EnvError::InvalidNoise(self.obs_noise));
        }
        if !(self.bin_seconds.is_finite() && self.bin_seconds > 0.0) {
            return Err(EnvError::InvalidBinLength(self.bin_seconds));
        }
        Ok(())
    }
}

/// One synthetic episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub instance_id: u64,
    pub duration: f64,
    pub observation: Vec<f64>,
    pub gt: GroundTruth,
}

/// Bin edge `k` of a timeline, rounded to the millisecond so rendered answers
/// read back exactly.
pub fn bin_edge(duration: f64, num_bins: usize, k: usize) -> f64 {
    libm::round(k as f64 * duration / num_bins as f64 * 1000.0) / 1000.0
}

impl TaskInstance {
    pub fn task(&self) -> Task {
        self.gt.task()
    }

    /// Ground-truth bin pair on a `num_bins` timeline, if bin-aligned.
    pub fn gt_bins(&self, num_bins: usize) -> Option<(usize, usize)> {
        match &self.gt {
            GroundTruth::Interval(iv) => {
                let first = (0..num_bins).find(|&k| bin_edge(self.duration, num_bins, k) == iv.start())?;
                let last = (first..num_bins)
                    .find(|&k| bin_edge(self.duration, num_bins, k + 1) == iv.end())?;
                Some((first, last))
            }
            GroundTruth::Highlights(ann) => {
                let first = *ann.salient.first()?;
                let last = *ann.salient.last()?;
                (ann.track.len() == num_bins && ann.salient.len() == last - first + 1)
                    .then_some((first, last))
            }
        }
    }

    /// Payload an interval action stands for on this instance.
    pub fn action_payload(&self, num_bins: usize, interval_action: usize) -> Option<Payload> {
        let (first, last) = interval_action_bins(num_bins, interval_action)?;
        match self.task() {
            Task::Grounding => TimeInterval::new(
                bin_edge(self.duration, num_bins, first),
                bin_edge(self.duration, num_bins, last + 1),
            )
            .ok()
            .map(Payload::Interval),
            Task::Highlight => HighlightAnswer::new((first..=last).map(|k| (k, 1.0)).collect())
                .ok()
                .map(Payload::Saliency),
        }
    }

    /// The annotation itself as a payload.
    pub fn gt_payload(&self) -> Payload {
        match &self.gt {
            GroundTruth::Interval(iv) => Payload::Interval(*iv),
            GroundTruth::Highlights(ann) => Payload::Saliency(
                HighlightAnswer::new(ann.track.scores().iter().copied().enumerate().collect())
                    .expect("track scores are valid answer scores"),
            ),
        }
    }
}

fn think_text(first: usize, last: usize) -> String {
    format!("the event covers bins {first} to {last}")
}

/// Generates a deterministic dataset.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<TaskInstance>, EnvError> {
    spec.validate()?;
    let n = spec.num_bins;
    let duration = bin_edge(n as f64 * spec.bin_seconds, 1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.obs_noise > 0.0)
        .then(|| Normal::new(0.0, spec.obs_noise).expect("noise validated"));
    let mut out = Vec::with_capacity(spec.num_instances);
    for id in 0..spec.num_instances {
        let action = rng.random_range(0..num_interval_actions(n));
        let (first, last) = interval_action_bins(n, action).expect("action in range");
        let mut observation = alloc::vec![0.0; 2 * n];
        observation[first] = 1.0;
        observation[n + last] = 1.0;
        let gt = match spec.task {
            Task::Grounding => GroundTruth::Interval(TimeInterval::new(
                bin_edge(duration, n, first),
                bin_edge(duration, n, last + 1),
            )?),
            Task::Highlight => {
                let scores = (0..n)
                    .map(|k| {
                        let milli = if (first..=last).contains(&k) {
                            rng.random_range(600..=1000)
                        } else {
                            rng.random_range(0..=300)
                        };
                        milli as f64 / 1000.0
                    })
                    .collect();
                let track = SaliencyTrack::new(spec.bin_seconds, scores)?;
                GroundTruth::Highlights(SalientAnnotation::from_track(track))
            }
        };
        if let Some(normal) = &noise {
            for x in &mut observation {
                *x += normal.sample(&mut rng);
            }
        }
        out.push(TaskInstance {
            instance_id: id as u64,
            duration,
            observation,
            gt,
        });
    }
    Ok(out)
}

/// A solution group for one instance: `G - 1` policy draws plus, when
/// injection is on, the rendered ground truth as the last entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    pub instance_id: u64,
    pub solutions: Vec<Solution>,
    /// Log-probabilities of the on-policy draws at sampling time.
    pub log_probs: Vec<f64>,
    /// On-policy action pairs, aligned with `log_probs`.
    pub actions: Vec<ActionPair>,
    /// Action pair the off-policy solution corresponds to.
    pub off_policy_action: Option<ActionPair>,
}

impl GroupSample {
    /// Action pairs of every solution, in solution order.
    pub fn all_actions(&self) -> Vec<ActionPair> {
        self.actions
            .iter()
            .copied()
            .chain(self.off_policy_action)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.solutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solutions.is_empty()
    }
}

/// Samples a solution group of size `group_size`.
///
/// With `inject_off_policy`, the last solution is the ground truth rendered
/// with the canonical template of `schema`; otherwise all `group_size`
/// solutions come from the policy.
pub fn sample_solutions(
    policy: &IntervalPolicy,
    instance: &TaskInstance,
    group_size: usize,
    schema: Schema,
    inject_off_policy: bool,
    seed: u64,
) -> Result<GroupSample, EnvError> {
    if group_size < 2 {
        return Err(EnvError::GroupTooSmall(group_size));
    }
    let n = policy.num_bins();
    let on_count = if inject_off_policy { group_size - 1 } else { group_size };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut solutions = Vec::with_capacity(group_size);
    let mut log_probs = Vec::with_capacity(on_count);
    let mut actions = Vec::with_capacity(on_count);
    for _ in 0..on_count {
        let action = policy.sample_action(&instance.observation, &mut rng)?;
        let (first, last) = interval_action_bins(n, action.interval)
            .ok_or(PolicyError::IndexOutOfRange { index: action.interval, size: policy.num_actions() })?;
        let template = Template::from_index(action.template).unwrap_or(Template::Untagged);
        let payload = instance
            .action_payload(n, action.interval)
            .ok_or(EnvError::UnalignedGroundTruth(instance.instance_id))?;
        let raw = template.render(&payload, &think_text(first, last));
        let parsed = structured::extract_answer(&raw, instance.task());
        solutions.push(Solution::on_policy(raw, parsed));
        log_probs.push(policy.log_prob(&instance.observation, action)?);
        actions.push(action);
    }
    let off_policy_action = if inject_off_policy {
        let (first, last) = instance
            .gt_bins(n)
            .ok_or(EnvError::UnalignedGroundTruth(instance.instance_id))?;
        let interval = interval_action_index(n, first, last)
            .ok_or(EnvError::UnalignedGroundTruth(instance.instance_id))?;
        let template = Template::canonical(schema);
        let payload = instance.gt_payload();
        let raw = template.render(&payload, &think_text(first, last));
        solutions.push(Solution::off_policy(raw, payload));
        Some(ActionPair {
            interval,
            template: template.index(),
        })
    } else {
        None
    };
    Ok(GroupSample {
        instance_id: instance.instance_id,
        solutions,
        log_probs,
        actions,
        off_policy_action,
    })
}

/// Ranked answers of a policy for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePrediction {
    pub instance_id: u64,
    /// Most likely interval actions first, as time intervals.
    pub ranked_intervals: Vec<TimeInterval>,
    /// Action probabilities aligned with `ranked_intervals`.
    pub confidences: Vec<f64>,
    /// Every clip with the probability that the chosen span covers it,
    /// highest first; highlight instances only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranked_clips: Option<Vec<(usize, f64)>>,
}

fn sort_descending(scored: &mut [(usize, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
}

/// The `top_k` most likely interval actions; ties keep the lower action index.
pub fn rank_interval_actions(
    policy: &IntervalPolicy,
    observation: &[f64],
    top_k: usize,
) -> Result<Vec<(usize, f64)>, PolicyError> {
    let mut scored: Vec<(usize, f64)> = policy.action_probs(observation)?.into_iter().enumerate().collect();
    sort_descending(&mut scored);
    scored.truncate(top_k);
    Ok(scored)
}

/// Probability that each bin lies inside the sampled interval.
pub fn bin_marginals(policy: &IntervalPolicy, observation: &[f64]) -> Result<Vec<f64>, PolicyError> {
    let n = policy.num_bins();
    let mut marginals = alloc::vec![0.0; n];
    for (action, p) in policy.action_probs(observation)?.into_iter().enumerate() {
        let (first, last) = interval_action_bins(n, action).expect("action in range");
        for m in &mut marginals[first..=last] {
            *m += p;
        }
    }
    Ok(marginals)
}

/// Ranks the policy's answers for `instance`.
pub fn predict(
    policy: &IntervalPolicy,
    instance: &TaskInstance,
    top_k: usize,
) -> Result<InstancePrediction, EnvError> {
    let n = policy.num_bins();
    let ranked = rank_interval_actions(policy, &instance.observation, top_k)?;
    let mut ranked_intervals = Vec::with_capacity(ranked.len());
    let mut confidences = Vec::with_capacity(ranked.len());
    for (action, p) in ranked {
        let (first, last) = interval_action_bins(n, action).expect("action in range");
        ranked_intervals.push(TimeInterval::new(
            bin_edge(instance.duration, n, first),
            bin_edge(instance.duration, n, last + 1),
        )?);
        confidences.push(p);
    }
    let ranked_clips = match instance.task() {
        Task::Grounding => None,
        Task::Highlight => {
            let mut clips: Vec<(usize, f64)> =
                bin_marginals(policy, &instance.observation)?.into_iter().enumerate().collect();
            sort_descending(&mut clips);
            Some(clips)
        }
    };
    Ok(InstancePrediction {
        instance_id: instance.instance_id,
        ranked_intervals,
        confidences,
        ranked_clips,
    })
}
