//! Scalar rewards for grounding and highlight solutions.

use alloc::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::structured::{self, Payload, Schema, Task};
use crate::temporal::{SaliencyTrack, TimeInterval, SALIENT_THRESHOLD};

/// Weight of the F2 term in the timestamp matching reward.
pub const LAMBDA_REC: f64 = 0.6;
/// Weight of the score-fidelity term in the timestamp matching reward.
pub const LAMBDA_SCORE: f64 = 0.4;
/// Default weight of the format reward in the think-answer phase.
pub const DEFAULT_FORMAT_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("score sequences differ in length ({pred} vs {gt})")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("clip lengths differ ({pred} vs {gt})")]
    ClipLenMismatch { pred: f64, gt: f64 },
    #[error("empty score sequence")]
    Empty,
}

/// Temporal intersection over union, clamped to `[0, 1]`.
pub fn iou_reward(pred: &TimeInterval, gt: &TimeInterval) -> f64 {
    let union = pred.end().max(gt.end()) - pred.start().min(gt.start());
    if union <= 0.0 {
        // Both intervals collapse onto one point.
        return if pred == gt { 1.0 } else { 0.0 };
    }
    let inter = (pred.end().min(gt.end()) - pred.start().max(gt.start())).max(0.0);
    (inter / union).clamp(0.0, 1.0)
}

/// Recall-weighted F-measure (beta = 2) between predicted and reference clip sets.
pub fn f2_score(pred: &BTreeSet<usize>, gt: &BTreeSet<usize>) -> f64 {
    if pred.is_empty() || gt.is_empty() {
        return 0.0;
    }
    let hits = pred.intersection(gt).count() as f64;
    if hits == 0.0 {
        return 0.0;
    }
    let precision = hits / pred.len() as f64;
    let recall = hits / gt.len() as f64;
    5.0 * precision * recall / (4.0 * precision + recall)
}

/// Squared error of saliency scores weighted by the squared reference score.
/// Falls back to uniform weights when every reference score is zero.
pub fn wmse(pred: &[f64], gt: &[f64]) -> Result<f64, RewardError> {
    if pred.len() != gt.len() {
        return Err(RewardError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if gt.is_empty() {
        return Err(RewardError::Empty);
    }
    let total_weight: f64 = gt.iter().map(|s| s * s).sum();
    if total_weight > 0.0 {
        let weighted: f64 = pred
            .iter()
            .zip(gt)
            .map(|(p, s)| s * s * (p - s) * (p - s))
            .sum();
        Ok(weighted / total_weight)
    } else {
        let plain: f64 = pred.iter().zip(gt).map(|(p, s)| (p - s) * (p - s)).sum();
        Ok(plain / gt.len() as f64)
    }
}

/// A saliency track together with its salient-clip set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalientAnnotation {
    pub track: SaliencyTrack,
    pub salient: BTreeSet<usize>,
}

impl SalientAnnotation {
    /// Salient set derived by thresholding scores at 0.5.
    pub fn from_track(track: SaliencyTrack) -> Self {
        let salient = track.salient_set(SALIENT_THRESHOLD);
        Self { track, salient }
    }
}

/// Sub-scores of one timestamp matching evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimestampScore {
    pub reward: f64,
    pub f2: f64,
    pub wmse: f64,
}

pub fn timestamp_matching(
    pred: &SalientAnnotation,
    gt: &SalientAnnotation,
) -> Result<TimestampScore, RewardError> {
    if pred.track.clip_len() != gt.track.clip_len() {
        return Err(RewardError::ClipLenMismatch {
            pred: pred.track.clip_len(),
            gt: gt.track.clip_len(),
        });
    }
    let f2 = f2_score(&pred.salient, &gt.salient);
    let wmse = wmse(pred.track.scores(), gt.track.scores())?;
    Ok(TimestampScore {
        reward: LAMBDA_REC * f2 + LAMBDA_SCORE * (1.0 / (1.0 + wmse)),
        f2,
        wmse,
    })
}

/// `0.6 * F2 + 0.4 / (1 + WMSE)`.
pub fn timestamp_matching_reward(
    pred: &SalientAnnotation,
    gt: &SalientAnnotation,
) -> Result<f64, RewardError> {
    timestamp_matching(pred, gt).map(|s| s.reward)
}

/// 1 when `raw` is well formed under `schema` for `task`, else 0.
pub fn format_reward(raw: &str, schema: Schema, task: Task) -> f64 {
    if structured::parse_output(raw, schema, task).well_formed {
        1.0
    } else {
        0.0
    }
}

/// Named sub-scores behind a task reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wmse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub task_reward: f64,
    pub format_reward: f64,
    pub total: f64,
    pub components: RewardComponents,
}

/// Merges task and format rewards. The answer-only phase ignores format;
/// the think-answer phase averages with weight `w_f`, staying in `[0, 1]`.
pub fn combine_rewards(task: f64, format: f64, phase: Schema, w_f: f64) -> RewardBreakdown {
    let total = match phase {
        Schema::AnswerOnly => task,
        Schema::ThinkAnswer => (task + w_f * format) / (1.0 + w_f),
    };
    RewardBreakdown {
        task_reward: task,
        format_reward: format,
        total,
        components: RewardComponents::default(),
    }
}

/// Reference annotation of one task instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruth {
    Interval(TimeInterval),
    Highlights(SalientAnnotation),
}

impl GroundTruth {
    pub fn task(&self) -> Task {
        match self {
            GroundTruth::Interval(_) => Task::Grounding,
            GroundTruth::Highlights(_) => Task::Highlight,
        }
    }
}

/// Task reward of a decoded answer; a missing or mismatched answer scores 0.
pub fn task_reward(answer: Option<&Payload>, gt: &GroundTruth) -> (f64, RewardComponents) {
    match (answer, gt) {
        (Some(Payload::Interval(pred)), GroundTruth::Interval(target)) => {
            let iou = iou_reward(pred, target);
            (
                iou,
                RewardComponents {
                    iou: Some(iou),
                    ..RewardComponents::default()
                },
            )
        }
        (Some(Payload::Saliency(answer)), GroundTruth::Highlights(target)) => {
            let scored = answer
                .to_track(target.track.len(), target.track.clip_len())
                .ok()
                .and_then(|track| {
                    let pred = SalientAnnotation {
                        track,
                        salient: answer.salient_set(),
                    };
                    timestamp_matching(&pred, target).ok()
                });
            match scored {
                Some(s) => (
                    s.reward,
                    RewardComponents {
                        f2: Some(s.f2),
                        wmse: Some(s.wmse),
                        ..RewardComponents::default()
                    },
                ),
                None => (0.0, RewardComponents::default()),
            }
        }
        _ => (0.0, RewardComponents::default()),
    }
}

/// Full reward of one raw solution string. The task reward reads the first
/// answer block regardless of structure; the format reward checks structure
/// under `phase`.
pub fn score_solution(raw: &str, gt: &GroundTruth, phase: Schema, w_f: f64) -> RewardBreakdown {
    let task = gt.task();
    let answer = structured::extract_answer(raw, task);
    let (task_value, components) = task_reward(answer.as_ref(), gt);
    let format = format_reward(raw, phase, task);
    RewardBreakdown {
        components,
        ..combine_rewards(task_value, format, phase, w_f)
    }
}
