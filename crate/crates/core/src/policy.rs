//! Linear-softmax policy over discretized candidate intervals.
//!
//! Two categorical heads share one observation vector `x`:
//!
//! - the interval head scores every bin pair `(i, j)` with `i <= j`, so a
//!   timeline of `N` bins has `N (N + 1) / 2` actions;
//! - the format head scores the output templates.
//!
//! Logits are `W^T x` for each head. Log-probabilities, score-function
//! gradients and the KL divergence to a frozen reference are exact.

use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("observation has dimension {got}, policy expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("action index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("no reference snapshot has been taken")]
    MissingReference,
    #[error("invalid policy shape: {0}")]
    InvalidShape(&'static str),
    #[error("policy weights must be finite")]
    NonFinite,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, PolicyError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PolicyError::InvalidShape("ragged matrix rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).take(self.rows).collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// `self^T x`.
    fn transpose_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.cols];
        for (row, &xr) in self.data.chunks(self.cols).zip(x) {
            if xr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * xr;
            }
        }
        out
    }

    /// `self += scale * x y^T`.
    fn add_outer(&mut self, scale: f64, x: &[f64], y: &[f64]) {
        for (row, &xr) in self.data.chunks_mut(self.cols).zip(x) {
            let s = scale * xr;
            if s == 0.0 {
                continue;
            }
            for (w, yc) in row.iter_mut().zip(y) {
                *w += s * yc;
            }
        }
    }

    fn add_scaled(&mut self, other: &Matrix, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    fn dot(&self, other: &Matrix) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Number of interval actions on `num_bins` bins.
pub const fn num_interval_actions(num_bins: usize) -> usize {
    num_bins * (num_bins + 1) / 2
}

/// Index of bin pair `(first, last)`, enumerating `first` major.
pub fn interval_action_index(num_bins: usize, first: usize, last: usize) -> Option<usize> {
    if first > last || last >= num_bins {
        return None;
    }
    // Rows before `first` hold N, N-1, ..., N-first+1 actions.
    let before = first * num_bins - first * first.saturating_sub(1) / 2;
    Some(before + (last - first))
}

/// Bin pair of an interval action.
pub fn interval_action_bins(num_bins: usize, action: usize) -> Option<(usize, usize)> {
    let mut offset = action;
    for first in 0..num_bins {
        let row = num_bins - first;
        if offset < row {
            return Some((first, first + offset));
        }
        offset -= row;
    }
    None
}

/// One joint draw: an interval action and a format template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionPair {
    pub interval: usize,
    pub template: usize,
}

/// Gradient with the same shape as the policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub weights: Matrix,
    pub format_weights: Matrix,
}

impl PolicyGradient {
    pub fn zeros_like(policy: &IntervalPolicy) -> Self {
        Self {
            weights: Matrix::zeros(policy.feature_dim, policy.num_actions()),
            format_weights: Matrix::zeros(policy.feature_dim, policy.num_templates()),
        }
    }

    pub fn add_scaled(&mut self, other: &PolicyGradient, scale: f64) {
        self.weights.add_scaled(&other.weights, scale);
        self.format_weights.add_scaled(&other.format_weights, scale);
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self
            .weights
            .as_mut_slice()
            .iter_mut()
            .chain(self.format_weights.as_mut_slice())
        {
            *v *= factor;
        }
    }

    pub fn dot(&self, other: &PolicyGradient) -> f64 {
        self.weights.dot(&other.weights) + self.format_weights.dot(&other.format_weights)
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .as_slice()
            .iter()
            .chain(self.format_weights.as_slice())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Reference {
    weights: Matrix,
    format_weights: Matrix,
}

/// Categorical interval policy with a format-template head.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalPolicy {
    feature_dim: usize,
    num_bins: usize,
    weights: Matrix,
    format_weights: Matrix,
    reference: Option<Reference>,
}

/// Numerically stable log-softmax.
fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| math::exp(z - max)).sum();
    let lse = max + math::ln(sum);
    logits.iter().map(|z| z - lse).collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|z| math::exp(z - max)).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

/// Exact `KL(p || q)` from log-probabilities, plus its gradient in the logits of `p`.
fn categorical_kl(log_p: &[f64], log_q: &[f64]) -> (f64, Vec<f64>) {
    let p: Vec<f64> = log_p.iter().map(|l| math::exp(*l)).collect();
    let kl: f64 = p
        .iter()
        .zip(log_p.iter().zip(log_q))
        .map(|(pk, (lp, lq))| pk * (lp - lq))
        .sum();
    let grad = p
        .iter()
        .zip(log_p.iter().zip(log_q))
        .map(|(pk, (lp, lq))| pk * (lp - lq - kl))
        .collect();
    (kl.max(0.0), grad)
}

impl IntervalPolicy {
    /// Uniform policy (all weights zero) without a reference snapshot.
    pub fn zeros(feature_dim: usize, num_bins: usize, num_templates: usize) -> Self {
        Self {
            feature_dim,
            num_bins,
            weights: Matrix::zeros(feature_dim, num_interval_actions(num_bins)),
            format_weights: Matrix::zeros(feature_dim, num_templates),
            reference: None,
        }
    }

    pub fn from_parts(
        num_bins: usize,
        weights: Matrix,
        format_weights: Matrix,
        reference: Option<(Matrix, Matrix)>,
    ) -> Result<Self, PolicyError> {
        if num_bins == 0 {
            return Err(PolicyError::InvalidShape("num_bins must be positive"));
        }
        if weights.cols() != num_interval_actions(num_bins) {
            return Err(PolicyError::InvalidShape(
                "interval weights need N(N+1)/2 columns",
            ));
        }
        if format_weights.rows() != weights.rows() {
            return Err(PolicyError::InvalidShape(
                "format weights need the same feature dimension",
            ));
        }
        if format_weights.cols() == 0 {
            return Err(PolicyError::InvalidShape("format head needs at least one template"));
        }
        let finite = |m: &Matrix| m.as_slice().iter().all(|v| v.is_finite());
        if !finite(&weights) || !finite(&format_weights) {
            return Err(PolicyError::NonFinite);
        }
        let reference = match reference {
            Some((rw, rf)) => {
                if rw.rows() != weights.rows()
                    || rw.cols() != weights.cols()
                    || rf.rows() != format_weights.rows()
                    || rf.cols() != format_weights.cols()
                {
                    return Err(PolicyError::InvalidShape("reference shape differs from policy"));
                }
                if !finite(&rw) || !finite(&rf) {
                    return Err(PolicyError::NonFinite);
                }
                Some(Reference {
                    weights: rw,
                    format_weights: rf,
                })
            }
            None => None,
        };
        Ok(Self {
            feature_dim: weights.rows(),
            num_bins,
            weights,
            format_weights,
            reference,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_actions(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_templates(&self) -> usize {
        self.format_weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn format_weights(&self) -> &Matrix {
        &self.format_weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn format_weights_mut(&mut self) -> &mut Matrix {
        &mut self.format_weights
    }

    /// Reference weights, when a snapshot exists.
    pub fn reference(&self) -> Option<(&Matrix, &Matrix)> {
        self.reference
            .as_ref()
            .map(|r| (&r.weights, &r.format_weights))
    }

    /// Freezes the current weights as the KL reference.
    pub fn snapshot_reference(&mut self) {
        self.reference = Some(Reference {
            weights: self.weights.clone(),
            format_weights: self.format_weights.clone(),
        });
    }

    fn check_obs(&self, observation: &[f64]) -> Result<(), PolicyError> {
        if observation.len() != self.feature_dim {
            return Err(PolicyError::DimensionMismatch {
                expected: self.feature_dim,
                got: observation.len(),
            });
        }
        Ok(())
    }

    fn check_action(&self, action: ActionPair) -> Result<(), PolicyError> {
        if action.interval >= self.num_actions() {
            return Err(PolicyError::IndexOutOfRange {
                index: action.interval,
                size: self.num_actions(),
            });
        }
        if action.template >= self.num_templates() {
            return Err(PolicyError::IndexOutOfRange {
                index: action.template,
                size: self.num_templates(),
            });
        }
        Ok(())
    }

    pub fn interval_logits(&self, observation: &[f64]) -> Result<Vec<f64>, PolicyError> {
        self.check_obs(observation)?;
        Ok(self.weights.transpose_mul(observation))
    }

    pub fn template_logits(&self, observation: &[f64]) -> Result<Vec<f64>, PolicyError> {
        self.check_obs(observation)?;
        Ok(self.format_weights.transpose_mul(observation))
    }

    /// Probabilities of the interval actions.
    pub fn action_probs(&self, observation: &[f64]) -> Result<Vec<f64>, PolicyError> {
        Ok(softmax(&self.interval_logits(observation)?))
    }

    /// Probabilities of the format templates.
    pub fn template_probs(&self, observation: &[f64]) -> Result<Vec<f64>, PolicyError> {
        Ok(softmax(&self.template_logits(observation)?))
    }

    /// Joint log-probability of an action pair.
    pub fn log_prob(&self, observation: &[f64], action: ActionPair) -> Result<f64, PolicyError> {
        self.check_action(action)?;
        let li = log_softmax(&self.interval_logits(observation)?);
        let lt = log_softmax(&self.template_logits(observation)?);
        Ok(li[action.interval] + lt[action.template])
    }

    /// `grad_W log pi(action | x)`: `x (onehot - p)^T` for each head.
    pub fn grad_log_prob(
        &self,
        observation: &[f64],
        action: ActionPair,
    ) -> Result<PolicyGradient, PolicyError> {
        self.check_action(action)?;
        let mut grad = PolicyGradient::zeros_like(self);
        let mut d_int = self.action_probs(observation)?;
        d_int.iter_mut().for_each(|p| *p = -*p);
        d_int[action.interval] += 1.0;
        grad.weights.add_outer(1.0, observation, &d_int);
        let mut d_tmpl = self.template_probs(observation)?;
        d_tmpl.iter_mut().for_each(|p| *p = -*p);
        d_tmpl[action.template] += 1.0;
        grad.format_weights.add_outer(1.0, observation, &d_tmpl);
        Ok(grad)
    }

    /// `KL(pi || pi_ref)` summed over both heads.
    pub fn kl_to_ref(&self, observation: &[f64]) -> Result<f64, PolicyError> {
        self.kl_and_grad(observation).map(|(kl, _)| kl)
    }

    /// KL to the reference and its gradient in the weights.
    pub fn kl_and_grad(&self, observation: &[f64]) -> Result<(f64, PolicyGradient), PolicyError> {
        self.check_obs(observation)?;
        let reference = self.reference.as_ref().ok_or(PolicyError::MissingReference)?;
        let lp = log_softmax(&self.weights.transpose_mul(observation));
        let lq = log_softmax(&reference.weights.transpose_mul(observation));
        let (kl_int, g_int) = categorical_kl(&lp, &lq);
        let lp = log_softmax(&self.format_weights.transpose_mul(observation));
        let lq = log_softmax(&reference.format_weights.transpose_mul(observation));
        let (kl_tmpl, g_tmpl) = categorical_kl(&lp, &lq);
        let mut grad = PolicyGradient::zeros_like(self);
        grad.weights.add_outer(1.0, observation, &g_int);
        grad.format_weights.add_outer(1.0, observation, &g_tmpl);
        Ok((kl_int + kl_tmpl, grad))
    }

    /// Draws an action pair from both heads.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        observation: &[f64],
        rng: &mut R,
    ) -> Result<ActionPair, PolicyError> {
        let interval = draw(&self.action_probs(observation)?, rng);
        let template = draw(&self.template_probs(observation)?, rng);
        Ok(ActionPair { interval, template })
    }

    /// `W += step * grad` on both heads. The reference is left untouched.
    pub fn apply(&mut self, grad: &PolicyGradient, step: f64) {
        self.weights.add_scaled(&grad.weights, step);
        self.format_weights.add_scaled(&grad.format_weights, step);
    }

    /// Largest absolute deviation of the weights from the reference.
    pub fn max_deviation_from_reference(&self) -> Option<f64> {
        let reference = self.reference.as_ref()?;
        let diff = |a: &Matrix, b: &Matrix| {
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        };
        Some(
            diff(&self.weights, &reference.weights)
                .max(diff(&self.format_weights, &reference.format_weights)),
        )
    }
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    // Weights come from a softmax, so they are positive and finite.
    WeightedIndex::new(probs)
        .expect("softmax output is a valid weight vector")
        .sample(rng)
}
