//! Group-relative advantages for mixed on/off-policy solution groups.
//!
//! A group holds `G - 1` on-policy rewards and, optionally, one off-policy
//! (ground-truth) reward. Plain joint normalization lets a dominant off-policy
//! reward push every on-policy advantage negative, so three alternatives are
//! offered:
//!
//! - [`Strategy::Downscale`] caps the off-policy reward at `kappa * r_max`
//!   before joint normalization.
//! - [`Strategy::Anchor`] normalizes the on-policy rewards alone and gives the
//!   off-policy entry `lambda_off` times the best on-policy advantage.
//! - [`Strategy::NonLinearShape`] maps every reward through [`shape_reward`]
//!   (log-compressed above `tau`, exponentially expanded below) before joint
//!   normalization.
//!
//! All standard deviations are population deviations. A group whose deviation
//! falls below `sigma_floor` yields all-zero advantages.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::stats;
use crate::temporal::{RewardGroup, ShapingConfig, Source, TemporalError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdvantageError {
    #[error("strategy requires an off-policy entry in the group")]
    NoOffPolicyEntry,
    #[error("anchoring needs at least 2 on-policy entries, got {0}")]
    TooFewOnPolicy(usize),
    #[error("reward {0} is outside [0, r_max]")]
    OutOfRange(f64),
    #[error("skewness needs at least 3 values, got {0}")]
    TooFewValues(usize),
    #[error("sample variance {0} is below the degeneracy floor")]
    DegenerateSample(f64),
    #[error(transparent)]
    Group(#[from] TemporalError),
}

/// How off-policy rewards enter the advantage computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Joint normalization over every reward, no stabilization.
    #[serde(rename = "none")]
    Joint,
    Downscale,
    Anchor,
    NonLinearShape,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Joint,
        Strategy::Downscale,
        Strategy::Anchor,
        Strategy::NonLinearShape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Joint => "none",
            Strategy::Downscale => "downscale",
            Strategy::Anchor => "anchor",
            Strategy::NonLinearShape => "non_linear_shape",
        }
    }

    /// Strategies that need an off-policy entry in every group.
    pub fn requires_off_policy(self) -> bool {
        matches!(self, Strategy::Downscale | Strategy::Anchor)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownStrategy;

impl fmt::Display for UnknownStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("expected one of: none, downscale, anchor, non_linear_shape")
    }
}

impl FromStr for Strategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" | "joint" => Ok(Strategy::Joint),
            "downscale" => Ok(Strategy::Downscale),
            "anchor" => Ok(Strategy::Anchor),
            "non_linear_shape" | "nonlinearshape" | "shape" => Ok(Strategy::NonLinearShape),
            _ => Err(UnknownStrategy),
        }
    }
}

/// Advantages aligned with a [`RewardGroup`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub group_mean: f64,
    pub group_std: f64,
    pub strategy: Strategy,
    pub degenerate: bool,
}

/// Joint normalization `(r - mean) / std` over all rewards.
pub fn normalize_group(group: &RewardGroup, cfg: &ShapingConfig) -> AdvantageVector {
    let (values, group_mean, group_std, degenerate) = normalize(group.rewards(), cfg.sigma_floor);
    AdvantageVector {
        values,
        group_mean,
        group_std,
        strategy: Strategy::Joint,
        degenerate,
    }
}

fn normalize(rewards: &[f64], floor: f64) -> (Vec<f64>, f64, f64, bool) {
    let mu = stats::mean(rewards);
    let sigma = math::sqrt(stats::population_variance(rewards, mu));
    if sigma < floor {
        return (alloc::vec![0.0; rewards.len()], mu, sigma, true);
    }
    let values = rewards.iter().map(|r| (r - mu) / sigma).collect();
    (values, mu, sigma, false)
}

/// Caps the off-policy reward at `kappa * r_max`.
pub fn downscale_offpolicy(
    group: &RewardGroup,
    cfg: &ShapingConfig,
) -> Result<RewardGroup, AdvantageError> {
    let off = group
        .off_policy_index()
        .ok_or(AdvantageError::NoOffPolicyEntry)?;
    let mut rewards = group.rewards().to_vec();
    rewards[off] = rewards[off].min(cfg.kappa * cfg.r_max);
    Ok(group.with_rewards(rewards)?)
}

/// Normalizes on-policy rewards among themselves and anchors the off-policy
/// advantage at `lambda_off` times the largest on-policy advantage.
pub fn anchor_offpolicy(
    group: &RewardGroup,
    cfg: &ShapingConfig,
) -> Result<AdvantageVector, AdvantageError> {
    let off = group
        .off_policy_index()
        .ok_or(AdvantageError::NoOffPolicyEntry)?;
    let on_rewards: Vec<f64> = group
        .rewards()
        .iter()
        .zip(group.sources())
        .filter(|(_, s)| **s == Source::OnPolicy)
        .map(|(r, _)| *r)
        .collect();
    if on_rewards.len() < 2 {
        return Err(AdvantageError::TooFewOnPolicy(on_rewards.len()));
    }
    let (on_values, group_mean, group_std, degenerate) = normalize(&on_rewards, cfg.sigma_floor);
    let anchored = if degenerate {
        0.0
    } else {
        let best = on_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        cfg.lambda_off * best
    };
    let mut on_iter = on_values.into_iter();
    let values = (0..group.len())
        .map(|i| {
            if i == off {
                anchored
            } else {
                on_iter.next().unwrap_or(0.0)
            }
        })
        .collect();
    Ok(AdvantageVector {
        values,
        group_mean,
        group_std,
        strategy: Strategy::Anchor,
        degenerate,
    })
}

/// Asymmetric reward transform: `tau + alpha1 * ln(1 + r - tau)` at or above
/// `tau`, `tau - (exp(alpha2 * (tau - r)) - 1) / (exp(alpha2) - 1)` below.
pub fn shape_reward(r: f64, cfg: &ShapingConfig) -> Result<f64, AdvantageError> {
    if !(0.0..=cfg.r_max).contains(&r) {
        return Err(AdvantageError::OutOfRange(r));
    }
    let tau = cfg.tau;
    Ok(if r >= tau {
        tau + cfg.alpha1 * math::ln_1p(r - tau)
    } else {
        tau - math::exp_m1(cfg.alpha2 * (tau - r)) / math::exp_m1(cfg.alpha2)
    })
}

/// Applies [`shape_reward`] to every entry, keeping provenance.
pub fn shape_group(group: &RewardGroup, cfg: &ShapingConfig) -> Result<RewardGroup, AdvantageError> {
    let shaped = group
        .rewards()
        .iter()
        .map(|&r| shape_reward(r, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(group.with_rewards(shaped)?)
}

/// Dispatches to the chosen strategy.
pub fn compute_advantages(
    group: &RewardGroup,
    strategy: Strategy,
    cfg: &ShapingConfig,
) -> Result<AdvantageVector, AdvantageError> {
    let mut out = match strategy {
        Strategy::Joint => normalize_group(group, cfg),
        Strategy::Downscale => normalize_group(&downscale_offpolicy(group, cfg)?, cfg),
        Strategy::Anchor => return anchor_offpolicy(group, cfg),
        Strategy::NonLinearShape => normalize_group(&shape_group(group, cfg)?, cfg),
    };
    out.strategy = strategy;
    Ok(out)
}

/// Variance floor used by [`sample_skewness`].
pub const SKEWNESS_VARIANCE_FLOOR: f64 = 1e-8;

/// Unadjusted Fisher–Pearson skewness `m3 / m2^1.5` with population moments.
pub fn sample_skewness(values: &[f64]) -> Result<f64, AdvantageError> {
    if values.len() < 3 {
        return Err(AdvantageError::TooFewValues(values.len()));
    }
    let mu = stats::mean(values);
    let m2 = stats::population_variance(values, mu);
    if m2 < SKEWNESS_VARIANCE_FLOOR {
        return Err(AdvantageError::DegenerateSample(m2));
    }
    let m3 = values.iter().map(|v| (v - mu) * (v - mu) * (v - mu)).sum::<f64>() / values.len() as f64;
    Ok(m3 / (m2 * math::sqrt(m2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cfg() -> ShapingConfig {
        ShapingConfig::default()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn normalize_examples() {
        let a = normalize_group(&RewardGroup::on_policy(vec![0.2, 0.4, 0.6]).unwrap(), &cfg());
        assert!(close(a.group_mean, 0.4, 1e-12));
        assert!(close(a.group_std, 0.163299, 1e-6));
        let k = 1.224745;
        for (v, e) in a.values.iter().zip([-k, 0.0, k]) {
            assert!(close(*v, e, 1e-6), "{v} vs {e}");
        }
        let tied = normalize_group(&RewardGroup::on_policy(vec![0.5; 4]).unwrap(), &cfg());
        assert!(tied.degenerate);
        assert_eq!(tied.values, vec![0.0; 4]);
        let pair = normalize_group(&RewardGroup::on_policy(vec![0.0, 1.0]).unwrap(), &cfg());
        assert_eq!(pair.values, vec![-1.0, 1.0]);
    }

    #[test]
    fn downscale_examples() {
        let g = RewardGroup::mixed(&[0.1, 0.9], 1.0).unwrap();
        let d = downscale_offpolicy(&g, &cfg()).unwrap();
        assert_eq!(d.rewards(), &[0.1, 0.9, 0.8]);
        let g = RewardGroup::mixed(&[0.1, 0.9], 0.5).unwrap();
        assert_eq!(downscale_offpolicy(&g, &cfg()).unwrap().rewards(), &[0.1, 0.9, 0.5]);
        let on = RewardGroup::on_policy(vec![0.1, 0.9]).unwrap();
        assert_eq!(downscale_offpolicy(&on, &cfg()), Err(AdvantageError::NoOffPolicyEntry));
    }

    #[test]
    fn anchor_examples() {
        let g = RewardGroup::mixed(&[0.2, 0.4, 0.6], 1.0).unwrap();
        let a = anchor_offpolicy(&g, &cfg()).unwrap();
        assert!(close(a.values[3], 1.469694, 1e-6));
        assert_eq!(a.values[3], 1.2 * a.values[2]);
        let tied = anchor_offpolicy(&RewardGroup::mixed(&[0.3, 0.3, 0.3], 1.0).unwrap(), &cfg()).unwrap();
        assert!(tied.degenerate);
        assert_eq!(tied.values, vec![0.0; 4]);
        let small = RewardGroup::mixed(&[0.3], 1.0).unwrap();
        assert_eq!(anchor_offpolicy(&small, &cfg()), Err(AdvantageError::TooFewOnPolicy(1)));
    }

    #[test]
    fn anchor_handles_off_policy_in_the_middle() {
        let g = RewardGroup::new(
            vec![0.2, 1.0, 0.6],
            vec![Source::OnPolicy, Source::OffPolicy, Source::OnPolicy],
        )
        .unwrap();
        let a = anchor_offpolicy(&g, &cfg()).unwrap();
        assert!(close(a.values[0], -1.0, 1e-12));
        assert!(close(a.values[2], 1.0, 1e-12));
        assert_eq!(a.values[1], 1.2 * a.values[2]);
    }

    #[test]
    fn shape_examples() {
        assert_eq!(shape_reward(0.8, &cfg()).unwrap(), 0.8);
        assert!(close(shape_reward(1.0, &cfg()).unwrap(), 0.801823, 1e-6));
        // 0.8 - (e^0.8 - 1)/(e - 1) = 0.0867637...
        assert!(close(shape_reward(0.0, &cfg()).unwrap(), 0.0867637, 1e-7));
        assert_eq!(shape_reward(1.1, &cfg()), Err(AdvantageError::OutOfRange(1.1)));
        assert!(shape_reward(f64::NAN, &cfg()).is_err());
        let g = shape_group(&RewardGroup::on_policy(vec![1.0, 0.0]).unwrap(), &cfg()).unwrap();
        assert!(close(g.rewards()[0], 0.801823, 1e-6));
        assert!(close(g.rewards()[1], 0.0867637, 1e-7));
    }

    #[test]
    fn compute_dispatch_examples() {
        let g = RewardGroup::on_policy(vec![0.2, 0.4, 0.6]).unwrap();
        assert_eq!(
            compute_advantages(&g, Strategy::Joint, &cfg()).unwrap(),
            normalize_group(&g, &cfg())
        );
        let tied = RewardGroup::mixed(&[0.7, 0.7], 0.7).unwrap();
        let s = compute_advantages(&tied, Strategy::NonLinearShape, &cfg()).unwrap();
        assert!(s.degenerate && s.values.iter().all(|v| *v == 0.0));

        let mixed = RewardGroup::mixed(&[0.2, 0.4], 1.0).unwrap();
        let d = compute_advantages(&mixed, Strategy::Downscale, &cfg()).unwrap();
        assert!(close(d.group_mean, 0.466667, 1e-6));
        assert!(close(d.group_std, 0.249444, 1e-6));
        for (v, e) in d.values.iter().zip([-1.069045, -0.267261, 1.336306]) {
            assert!(close(*v, e, 1e-6));
        }
        assert_eq!(d.strategy, Strategy::Downscale);
    }

    #[test]
    fn skewness_examples() {
        assert!(close(sample_skewness(&[-1.0, 0.0, 1.0]).unwrap(), 0.0, 1e-15));
        let h = core::f64::consts::SQRT_2 / 2.0;
        assert!(close(sample_skewness(&[0.0, 0.0, 1.0]).unwrap(), h, 1e-12));
        assert!(close(sample_skewness(&[0.0, 1.0, 1.0]).unwrap(), -h, 1e-12));
        assert!(matches!(sample_skewness(&[1.0, 1.0, 1.0]), Err(AdvantageError::DegenerateSample(_))));
        assert_eq!(sample_skewness(&[1.0, 2.0]), Err(AdvantageError::TooFewValues(2)));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>(), Ok(s));
        }
        assert_eq!("non-linear-shape".parse::<Strategy>(), Ok(Strategy::NonLinearShape));
        assert!("bogus".parse::<Strategy>().is_err());
    }
}
