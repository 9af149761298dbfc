//! Mixed-policy group-relative policy optimization for temporal grounding.
//!
//! The crate is `no_std` (with `alloc`) and holds every numeric piece of the
//! engine:
//!
//! - [`temporal`]: validated domain values (intervals, saliency tracks, reward groups).
//! - [`rewards`]: temporal IoU, timestamp matching (F2 + WMSE) and format rewards.
//! - [`structured`]: the `<Think>`/`<Answer>` output grammar, parser and emitter.
//! - [`advantage`]: group normalization with an injected off-policy solution and the
//!   three stabilization strategies (downscaling, anchoring, non-linear shaping).
//! - [`policy`] and [`env`]: a linear-softmax interval policy with closed-form
//!   gradients and a synthetic grounding / highlight environment.
//! - [`trainer`]: the clipped, KL-regularized group objective and the two-phase loop.
//! - [`metrics`]: R1@IoU, mIoU, mAP and HIT@1.
//!
//! File formats, configuration and the command line live in the `tempsamp` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod math;

pub mod advantage;
pub mod env;
pub mod metrics;
pub mod policy;
pub mod rewards;
pub mod stats;
pub mod structured;
pub mod temporal;
pub mod trainer;

pub use advantage::{compute_advantages, AdvantageError, AdvantageVector, Strategy};
pub use env::{generate_dataset, DatasetSpec, GroundTruth, GroupSample, TaskInstance};
pub use policy::{ActionPair, IntervalPolicy, PolicyError, PolicyGradient};
pub use rewards::{RewardBreakdown, RewardError};
pub use structured::{ParsedOutput, Payload, Schema, Task};
pub use temporal::{
    RewardGroup, SaliencyTrack, ShapingConfig, Solution, Source, TemporalError, TimeInterval,
};
pub use trainer::{train, RunSummary, StepRecord, TrainConfig, TrainError};
