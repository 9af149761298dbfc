//! Evaluation metrics for moment retrieval and highlight detection.
//!
//! Ground truths are keyed by instance id. When an instance holds several
//! ground-truth segments, rank-1 metrics use the best-matching one.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rewards::iou_reward;
use crate::temporal::{SaliencyTrack, TimeInterval};

/// Default IoU thresholds for recall at rank 1.
pub const RECALL_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];
/// Default IoU thresholds for mAP.
pub const MAP_THRESHOLDS: [f64; 2] = [0.5, 0.75];
/// Normalized saliency that counts as the top ("Very Good") label.
pub const VERY_GOOD_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no ground truth for instance {0}")]
    MissingGroundTruth(u64),
    #[error("instance {0} has no ranked prediction")]
    EmptyPrediction(u64),
    #[error("instance {0}: predictions lack non-increasing confidences")]
    UnrankedPredictions(u64),
    #[error("instance {instance}: clip {clip} outside a track of {len} clips")]
    InvalidClip { instance: u64, clip: usize, len: usize },
    #[error("no predictions to evaluate")]
    NoPredictions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingPrediction {
    pub instance_id: u64,
    /// Rank 1 first.
    pub ranked_intervals: Vec<TimeInterval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidences: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighlightPrediction {
    pub instance_id: u64,
    /// `(clip index, score)`, top-ranked first.
    pub ranked_clips: Vec<(usize, f64)>,
}

fn lookup<T>(gts: &BTreeMap<u64, T>, id: u64) -> Result<&T, MetricsError> {
    gts.get(&id).ok_or(MetricsError::MissingGroundTruth(id))
}

/// Rank-1 IoU of each prediction against its best ground-truth segment.
pub fn rank1_ious(
    preds: &[GroundingPrediction],
    gts: &BTreeMap<u64, Vec<TimeInterval>>,
) -> Result<Vec<f64>, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::NoPredictions);
    }
    preds
        .iter()
        .map(|p| {
            let segments = lookup(gts, p.instance_id)?;
            let top = p
                .ranked_intervals
                .first()
                .ok_or(MetricsError::EmptyPrediction(p.instance_id))?;
            Ok(segments
                .iter()
                .map(|g| iou_reward(top, g))
                .fold(0.0, f64::max))
        })
        .collect()
}

/// Fraction of instances whose rank-1 IoU reaches `threshold`.
pub fn recall_at_1(
    preds: &[GroundingPrediction],
    gts: &BTreeMap<u64, Vec<TimeInterval>>,
    threshold: f64,
) -> Result<f64, MetricsError> {
    let ious = rank1_ious(preds, gts)?;
    let hits = ious.iter().filter(|&&iou| iou >= threshold).count();
    Ok(hits as f64 / ious.len() as f64)
}

/// Mean rank-1 IoU.
pub fn mean_iou(
    preds: &[GroundingPrediction],
    gts: &BTreeMap<u64, Vec<TimeInterval>>,
) -> Result<f64, MetricsError> {
    let ious = rank1_ious(preds, gts)?;
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Predictions sorted by confidence, ties broken by earlier start.
fn ranked(pred: &GroundingPrediction) -> Result<Vec<TimeInterval>, MetricsError> {
    let conf = pred
        .confidences
        .as_ref()
        .filter(|c| c.len() == pred.ranked_intervals.len())
        .ok_or(MetricsError::UnrankedPredictions(pred.instance_id))?;
    if conf
        .windows(2)
        .any(|w| matches!(w[0].partial_cmp(&w[1]), None | Some(core::cmp::Ordering::Less)))
    {
        return Err(MetricsError::UnrankedPredictions(pred.instance_id));
    }
    let mut order: Vec<usize> = (0..conf.len()).collect();
    order.sort_by(|&a, &b| {
        conf[b]
            .total_cmp(&conf[a])
            .then(pred.ranked_intervals[a].start().total_cmp(&pred.ranked_intervals[b].start()))
    });
    Ok(order.into_iter().map(|k| pred.ranked_intervals[k]).collect())
}

/// All-point average precision of one ranked list with greedy one-to-one matching.
pub fn average_precision(ranked: &[TimeInterval], gts: &[TimeInterval], threshold: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut matched = alloc::vec![false; gts.len()];
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, pred) in ranked.iter().enumerate() {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, _)| !matched[*g])
            .map(|(g, gt)| (g, iou_reward(pred, gt)))
            .filter(|(_, iou)| *iou >= threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((g, _)) = best {
            matched[g] = true;
            hits += 1;
            // Recall rises by 1/|gt| at this rank.
            ap += (hits as f64 / (k + 1) as f64) / gts.len() as f64;
        }
    }
    ap
}

/// mAP per threshold and averaged over thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub per_threshold: Vec<(f64, f64)>,
    pub mean: f64,
}

pub fn mean_average_precision(
    preds: &[GroundingPrediction],
    gts: &BTreeMap<u64, Vec<TimeInterval>>,
    thresholds: &[f64],
) -> Result<MapReport, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::NoPredictions);
    }
    let lists = preds
        .iter()
        .map(|p| Ok((ranked(p)?, lookup(gts, p.instance_id)?)))
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let per_threshold: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let sum: f64 = lists
                .iter()
                .map(|(ranked, segments)| average_precision(ranked, segments, t))
                .sum();
            (t, sum / lists.len() as f64)
        })
        .collect();
    let mean = per_threshold.iter().map(|(_, m)| m).sum::<f64>() / per_threshold.len().max(1) as f64;
    Ok(MapReport {
        per_threshold,
        mean,
    })
}

/// Fraction of instances whose top-ranked clip has ground-truth saliency of
/// at least `very_good`.
pub fn hit_at_1(
    preds: &[HighlightPrediction],
    gts: &BTreeMap<u64, SaliencyTrack>,
    very_good: f64,
) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::NoPredictions);
    }
    let mut hits = 0usize;
    for p in preds {
        let track = lookup(gts, p.instance_id)?;
        let &(clip, _) = p
            .ranked_clips
            .first()
            .ok_or(MetricsError::EmptyPrediction(p.instance_id))?;
        let score = *track.scores().get(clip).ok_or(MetricsError::InvalidClip {
            instance: p.instance_id,
            clip,
            len: track.len(),
        })?;
        if score >= very_good {
            hits += 1;
        }
    }
    Ok(hits as f64 / preds.len() as f64)
}
