//! Shared domain values. Everything here is validated at construction and
//! immutable afterwards.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::structured::Payload;

/// Default threshold turning saliency scores into a salient-clip set.
pub const SALIENT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TemporalError {
    #[error("time values must be finite (got start={start}, end={end})")]
    NonFinite { start: f64, end: f64 },
    #[error("negative time (start={start}, end={end})")]
    NegativeTime { start: f64, end: f64 },
    #[error("interval start {start} is after end {end}")]
    OrderViolation { start: f64, end: f64 },
    #[error("clip length must be positive and finite, got {0}")]
    InvalidClipLen(f64),
    #[error("saliency track must contain at least one clip")]
    EmptyTrack,
    #[error("saliency score {score} at clip {index} is outside [0, 1]")]
    ScoreOutOfRange { index: usize, score: f64 },
    #[error("reward group needs at least 2 entries, got {0}")]
    GroupTooSmall(usize),
    #[error("rewards ({rewards}) and sources ({sources}) differ in length")]
    LengthMismatch { rewards: usize, sources: usize },
    #[error("reward group holds {0} off-policy entries, at most one is allowed")]
    TooManyOffPolicy(usize),
    #[error("reward {value} at index {index} is not finite")]
    NonFiniteReward { index: usize, value: f64 },
    #[error("off-policy solutions must carry a parsed payload")]
    MissingOffPolicyPayload,
    #[error("invalid shaping config: {0}")]
    InvalidShaping(&'static str),
}

/// A closed time segment `[start, end]` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct TimeInterval {
    start: f64,
    end: f64,
}

impl TimeInterval {
    /// Builds a validated interval. Reversed bounds are rejected, never swapped.
    pub fn new(start: f64, end: f64) -> Result<Self, TemporalError> {
        if !start.is_finite() || !end.is_finite() {
            return Err(TemporalError::NonFinite { start, end });
        }
        if start < 0.0 || end < 0.0 {
            return Err(TemporalError::NegativeTime { start, end });
        }
        if start > end {
            return Err(TemporalError::OrderViolation { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }
}

impl TryFrom<[f64; 2]> for TimeInterval {
    type Error = TemporalError;

    fn try_from(value: [f64; 2]) -> Result<Self, Self::Error> {
        Self::new(value[0], value[1])
    }
}

impl From<TimeInterval> for [f64; 2] {
    fn from(value: TimeInterval) -> Self {
        [value.start, value.end]
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.3}, {:.3}]", self.start, self.end)
    }
}

#[derive(Serialize, Deserialize)]
struct RawTrack {
    clip_len: f64,
    scores: Vec<f64>,
}

/// Per-clip saliency scores on fixed-length clips, normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrack", into = "RawTrack")]
pub struct SaliencyTrack {
    clip_len: f64,
    scores: Vec<f64>,
}

impl SaliencyTrack {
    pub fn new(clip_len: f64, scores: Vec<f64>) -> Result<Self, TemporalError> {
        if !(clip_len.is_finite() && clip_len > 0.0) {
            return Err(TemporalError::InvalidClipLen(clip_len));
        }
        if scores.is_empty() {
            return Err(TemporalError::EmptyTrack);
        }
        if let Some((index, &score)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(0.0..=1.0).contains(*s))
        {
            return Err(TemporalError::ScoreOutOfRange { index, score });
        }
        Ok(Self { clip_len, scores })
    }

    /// Builds a track from annotations on a 0–4 scale (divided by 4).
    pub fn from_five_level(clip_len: f64, labels: &[f64]) -> Result<Self, TemporalError> {
        Self::new(clip_len, labels.iter().map(|l| l / 4.0).collect())
    }

    pub fn clip_len(&self) -> f64 {
        self.clip_len
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.clip_len * self.scores.len() as f64
    }

    /// Clips whose score is at least `threshold`.
    pub fn salient_set(&self, threshold: f64) -> BTreeSet<usize> {
        self.scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= threshold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Maximal runs of consecutive salient clips, as time intervals.
    pub fn salient_runs(&self, threshold: f64) -> Vec<TimeInterval> {
        let mut runs = Vec::new();
        let mut open: Option<usize> = None;
        for (i, &s) in self.scores.iter().enumerate() {
            match (s >= threshold, open) {
                (true, None) => open = Some(i),
                (false, Some(first)) => {
                    runs.push(self.clip_span(first, i - 1));
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(first) = open {
            runs.push(self.clip_span(first, self.scores.len() - 1));
        }
        runs
    }

    fn clip_span(&self, first: usize, last: usize) -> TimeInterval {
        TimeInterval {
            start: first as f64 * self.clip_len,
            end: (last + 1) as f64 * self.clip_len,
        }
    }
}

impl TryFrom<RawTrack> for SaliencyTrack {
    type Error = TemporalError;

    fn try_from(raw: RawTrack) -> Result<Self, Self::Error> {
        Self::new(raw.clip_len, raw.scores)
    }
}

impl From<SaliencyTrack> for RawTrack {
    fn from(track: SaliencyTrack) -> Self {
        RawTrack {
            clip_len: track.clip_len,
            scores: track.scores,
        }
    }
}

/// Where a solution came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Sampled from the policy being trained.
    OnPolicy,
    /// Injected from outside the policy (the ground-truth annotation).
    OffPolicy,
}

/// One member of a solution group.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    raw_text: String,
    parsed: Option<Payload>,
    source: Source,
}

impl Solution {
    pub fn on_policy(raw_text: String, parsed: Option<Payload>) -> Self {
        Self {
            raw_text,
            parsed,
            source: Source::OnPolicy,
        }
    }

    pub fn off_policy(raw_text: String, parsed: Payload) -> Self {
        Self {
            raw_text,
            parsed: Some(parsed),
            source: Source::OffPolicy,
        }
    }

    pub fn new(
        raw_text: String,
        parsed: Option<Payload>,
        source: Source,
    ) -> Result<Self, TemporalError> {
        if source == Source::OffPolicy && parsed.is_none() {
            return Err(TemporalError::MissingOffPolicyPayload);
        }
        Ok(Self {
            raw_text,
            parsed,
            source,
        })
    }

    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }

    pub fn parsed(&self) -> Option<&Payload> {
        self.parsed.as_ref()
    }

    pub fn source(&self) -> Source {
        self.source
    }
}

/// The rewards of one query's solution group, with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardGroup {
    rewards: Vec<f64>,
    sources: Vec<Source>,
}

impl RewardGroup {
    pub fn new(rewards: Vec<f64>, sources: Vec<Source>) -> Result<Self, TemporalError> {
        if rewards.len() != sources.len() {
            return Err(TemporalError::LengthMismatch {
                rewards: rewards.len(),
                sources: sources.len(),
            });
        }
        if rewards.len() < 2 {
            return Err(TemporalError::GroupTooSmall(rewards.len()));
        }
        let off = sources.iter().filter(|s| **s == Source::OffPolicy).count();
        if off > 1 {
            return Err(TemporalError::TooManyOffPolicy(off));
        }
        if let Some((index, &value)) = rewards.iter().enumerate().find(|(_, r)| !r.is_finite()) {
            return Err(TemporalError::NonFiniteReward { index, value });
        }
        Ok(Self { rewards, sources })
    }

    /// All entries on-policy.
    pub fn on_policy(rewards: Vec<f64>) -> Result<Self, TemporalError> {
        let sources = alloc::vec![Source::OnPolicy; rewards.len()];
        Self::new(rewards, sources)
    }

    /// On-policy rewards followed by a single off-policy reward.
    pub fn mixed(on_policy: &[f64], off_policy: f64) -> Result<Self, TemporalError> {
        let mut rewards = on_policy.to_vec();
        rewards.push(off_policy);
        let mut sources = alloc::vec![Source::OnPolicy; on_policy.len()];
        sources.push(Source::OffPolicy);
        Self::new(rewards, sources)
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn off_policy_index(&self) -> Option<usize> {
        self.sources.iter().position(|s| *s == Source::OffPolicy)
    }

    pub fn on_policy_count(&self) -> usize {
        self.sources
            .iter()
            .filter(|s| **s == Source::OnPolicy)
            .count()
    }

    /// Same provenance, new reward values. The length must match.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self, TemporalError> {
        Self::new(rewards, self.sources.clone())
    }
}

/// Constants of the off-policy stabilization strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapingConfig {
    /// Reward threshold between the compressing and expanding branches.
    pub tau: f64,
    /// Compression strength above `tau`.
    pub alpha1: f64,
    /// Expansion strength below `tau`.
    pub alpha2: f64,
    /// Anchoring multiplier on the best on-policy advantage.
    pub lambda_off: f64,
    /// Off-policy reward cap as a fraction of `r_max`.
    pub kappa: f64,
    /// Maximum attainable reward.
    pub r_max: f64,
    /// Group standard deviations below this are treated as ties.
    pub sigma_floor: f64,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            tau: 0.8,
            alpha1: 0.01,
            alpha2: 1.0,
            lambda_off: 1.2,
            kappa: 0.8,
            r_max: 1.0,
            sigma_floor: 1e-8,
        }
    }
}

impl ShapingConfig {
    pub fn validate(&self) -> Result<(), TemporalError> {
        let all_finite = [
            self.tau,
            self.alpha1,
            self.alpha2,
            self.lambda_off,
            self.kappa,
            self.r_max,
            self.sigma_floor,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(TemporalError::InvalidShaping("all constants must be finite"));
        }
        if !(self.tau > 0.0 && self.tau < self.r_max) {
            return Err(TemporalError::InvalidShaping("tau must satisfy 0 < tau < r_max"));
        }
        if self.alpha1 <= 0.0 {
            return Err(TemporalError::InvalidShaping("alpha1 must be > 0"));
        }
        if self.alpha2 <= 0.0 {
            return Err(TemporalError::InvalidShaping("alpha2 must be > 0"));
        }
        if self.lambda_off <= 0.0 {
            return Err(TemporalError::InvalidShaping("lambda_off must be > 0"));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(TemporalError::InvalidShaping("kappa must satisfy 0 < kappa <= 1"));
        }
        if self.sigma_floor <= 0.0 {
            return Err(TemporalError::InvalidShaping("sigma_floor must be > 0"));
        }
        Ok(())
    }
}
