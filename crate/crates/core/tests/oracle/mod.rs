//! Independent reference computations used as test oracles. Nothing here
//! calls the code path it checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempsamp_core::env::TaskInstance;
use tempsamp_core::policy::{interval_action_bins, ActionPair, IntervalPolicy, PolicyGradient};
use tempsamp_core::rewards::GroundTruth;
use tempsamp_core::TimeInterval;

/// IoU by counting 1 ms timeline samples (cell midpoints) covered by each interval.
pub fn brute_force_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let lo = a.0.min(b.0);
    let hi = a.1.max(b.1);
    let cells = ((hi - lo) * 1000.0).ceil() as usize + 1;
    let (mut inter, mut union) = (0usize, 0usize);
    for k in 0..cells {
        let t = lo + (k as f64 + 0.5) * 1e-3;
        let in_a = t >= a.0 && t <= a.1;
        let in_b = t >= b.0 && t <= b.1;
        inter += (in_a && in_b) as usize;
        union += (in_a || in_b) as usize;
    }
    if union == 0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter as f64 / union as f64
}

/// Precision, recall and F-beta from explicit counts.
pub fn f_beta(pred: &BTreeSet<usize>, gt: &BTreeSet<usize>, beta: f64) -> f64 {
    let tp = pred.iter().filter(|p| gt.contains(p)).count() as f64;
    if pred.is_empty() || gt.is_empty() || tp == 0.0 {
        return 0.0;
    }
    let p = tp / pred.len() as f64;
    let r = tp / gt.len() as f64;
    (1.0 + beta * beta) * p * r / (beta * beta * p + r)
}

/// Weighted MSE with explicit weight vector.
pub fn weighted_mse(pred: &[f64], gt: &[f64]) -> f64 {
    let mut weights: Vec<f64> = gt.iter().map(|s| s.powi(2)).collect();
    if weights.iter().all(|w| *w == 0.0) {
        weights = vec![1.0; gt.len()];
    }
    let num: f64 = (0..gt.len())
        .map(|i| weights[i] * (pred[i] - gt[i]).powi(2))
        .sum();
    num / weights.iter().sum::<f64>()
}

/// `(r - mean) / std` with explicit two-pass moments; zeros when std < floor.
pub fn grpo_advantages(rewards: &[f64], floor: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mut total = 0.0;
    for r in rewards {
        total += r;
    }
    let mu = total / n;
    let mut sq = 0.0;
    for r in rewards {
        sq += (r - mu) * (r - mu);
    }
    let sigma = (sq / n).sqrt();
    if sigma < floor {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mu) / sigma).collect()
}

/// Fisher–Pearson g1 written with `powi`.
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mu).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Shaping function evaluated in the textbook form with `ln` and `exp`.
pub fn shape_direct(r: f64, tau: f64, alpha1: f64, alpha2: f64) -> f64 {
    if r >= tau {
        tau + alpha1 * ((r - tau) + 1.0).ln()
    } else {
        tau - ((alpha2 * (tau - r)).exp() - 1.0) / (alpha2.exp() - 1.0)
    }
}

/// Temporal IoU from the textbook formula.
pub fn iou_formula(a: &TimeInterval, b: &TimeInterval) -> f64 {
    let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
    let union = a.end().max(b.end()) - a.start().min(b.start());
    if union == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    inter / union
}

/// R1@t by an explicit per-instance loop.
pub fn recall_loop(
    preds: &[(u64, Vec<TimeInterval>)],
    gts: &BTreeMap<u64, Vec<TimeInterval>>,
    threshold: f64,
) -> f64 {
    let mut hits = 0.0;
    for (id, ranked) in preds {
        let best = gts[id]
            .iter()
            .map(|g| iou_formula(&ranked[0], g))
            .fold(0.0, f64::max);
        if best >= threshold {
            hits += 1.0;
        }
    }
    hits / preds.len() as f64
}

pub fn miou_loop(preds: &[(u64, Vec<TimeInterval>)], gts: &BTreeMap<u64, Vec<TimeInterval>>) -> f64 {
    let mut total = 0.0;
    for (id, ranked) in preds {
        total += gts[id]
            .iter()
            .map(|g| iou_formula(&ranked[0], g))
            .fold(0.0, f64::max);
    }
    total / preds.len() as f64
}

/// One row of a precision/recall table.
#[derive(Debug, Clone, Copy)]
pub struct PrRow {
    pub rank: usize,
    pub true_positive: bool,
    pub precision: f64,
    pub recall: f64,
}

/// Builds the explicit precision/recall table of a ranked list.
pub fn pr_table(ranked: &[TimeInterval], gts: &[TimeInterval], threshold: f64) -> Vec<PrRow> {
    let mut used = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut rows = Vec::new();
    for (k, pred) in ranked.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] {
                continue;
            }
            let iou = iou_formula(pred, gt);
            if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
            tp += 1;
        }
        rows.push(PrRow {
            rank: k + 1,
            true_positive: best.is_some(),
            precision: tp as f64 / (k + 1) as f64,
            recall: tp as f64 / gts.len() as f64,
        });
    }
    rows
}

/// All-point AP summed from the table: sum of (R_k - R_{k-1}) P_k.
pub fn ap_from_table(rows: &[PrRow]) -> f64 {
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for row in rows {
        ap += (row.recall - prev_recall) * row.precision;
        prev_recall = row.recall;
    }
    ap
}

/// mAP: sort each instance by (confidence desc, start asc), table per threshold.
pub fn map_tables(
    preds: &[(u64, Vec<TimeInterval>, Vec<f64>)],
    gts: &BTreeMap<u64, Vec<TimeInterval>>,
    thresholds: &[f64],
) -> (Vec<f64>, f64) {
    let mut per = Vec::new();
    for &t in thresholds {
        let mut sum = 0.0;
        for (id, ivs, conf) in preds {
            let mut idx: Vec<usize> = (0..ivs.len()).collect();
            idx.sort_by(|&a, &b| {
                conf[b]
                    .partial_cmp(&conf[a])
                    .unwrap()
                    .then(ivs[a].start().partial_cmp(&ivs[b].start()).unwrap())
            });
            let ranked: Vec<TimeInterval> = idx.iter().map(|&k| ivs[k]).collect();
            sum += ap_from_table(&pr_table(&ranked, &gts[id], t));
        }
        per.push(sum / preds.len() as f64);
    }
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    (per, mean)
}

/// HIT@1 by explicit loop.
pub fn hit_loop(preds: &[(u64, usize)], gts: &BTreeMap<u64, Vec<f64>>, very_good: f64) -> f64 {
    let mut hits = 0.0;
    for (id, clip) in preds {
        if gts[id][*clip] >= very_good {
            hits += 1.0;
        }
    }
    hits / preds.len() as f64
}

/// Output of the reference GRPO loop for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStep {
    pub rewards: Vec<Vec<f64>>,
    pub advantages: Vec<Vec<f64>>,
    pub top1: Vec<f64>,
    pub objective: f64,
}

/// Plain on-policy GRPO on grounding instances in the answer-only phase: `G`
/// policy draws per instance, IoU reward (0 for the untagged template),
/// group-normalized advantages, one gradient-ascent step on
/// `1/G sum A_i log pi(o_i) - beta KL` averaged over the batch.
///
/// Uses only policy primitives (sampling, score function, KL gradient); the
/// reward, advantage and update logic is written out here.
#[allow(clippy::too_many_arguments)]
pub fn reference_grpo(
    policy: &mut IntervalPolicy,
    dataset: &[TaskInstance],
    group_size: usize,
    batch_size: usize,
    steps: usize,
    learning_rate: f64,
    kl_beta: f64,
    seed: u64,
) -> Vec<ReferenceStep> {
    const UNTAGGED: usize = 3;
    let n = policy.num_bins();
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    policy.snapshot_reference();
    let mut out = Vec::new();
    for step in 0..steps {
        let mut batch_grad = PolicyGradient::zeros_like(policy);
        let mut rec = ReferenceStep {
            rewards: vec![],
            advantages: vec![],
            top1: vec![],
            objective: 0.0,
        };
        for k in 0..batch_size {
            let inst = &dataset[(step * batch_size + k) % dataset.len()];
            let GroundTruth::Interval(gt) = &inst.gt else {
                panic!("grounding only");
            };
            let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
            let actions: Vec<ActionPair> = (0..group_size)
                .map(|_| policy.sample_action(&inst.observation, &mut rng).unwrap())
                .collect();
            let rewards: Vec<f64> = actions
                .iter()
                .map(|a| {
                    if a.template == UNTAGGED {
                        return 0.0;
                    }
                    let (i, j) = interval_action_bins(n, a.interval).unwrap();
                    let edge = |b: usize| (b as f64 * inst.duration / n as f64 * 1000.0).round() / 1000.0;
                    iou_formula(&TimeInterval::new(edge(i), edge(j + 1)).unwrap(), gt)
                })
                .collect();
            let adv = grpo_advantages(&rewards, 1e-8);
            let inv_g = 1.0 / group_size as f64;
            let mut group_grad = PolicyGradient::zeros_like(policy);
            let mut surrogate = 0.0;
            for (a, &ad) in actions.iter().zip(&adv) {
                surrogate += ad;
                if ad != 0.0 {
                    let score = policy.grad_log_prob(&inst.observation, *a).unwrap();
                    group_grad.add_scaled(&score, inv_g * ad);
                }
            }
            let mut objective = inv_g * surrogate;
            if kl_beta > 0.0 {
                let (kl, kl_grad) = policy.kl_and_grad(&inst.observation).unwrap();
                objective -= kl_beta * kl;
                group_grad.add_scaled(&kl_grad, -kl_beta);
            }
            batch_grad.add_scaled(&group_grad, 1.0);
            rec.objective += objective;
            rec.top1.push(rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            rec.rewards.push(rewards);
            rec.advantages.push(adv);
        }
        batch_grad.scale(1.0 / batch_size as f64);
        rec.objective *= 1.0 / batch_size as f64;
        policy.apply(&batch_grad, learning_rate);
        out.push(rec);
    }
    out
}
