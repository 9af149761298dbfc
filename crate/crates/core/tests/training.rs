use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempsamp_core::advantage::Strategy;
use tempsamp_core::env::{generate_dataset, DatasetSpec, TaskInstance, NUM_TEMPLATES};
use tempsamp_core::policy::IntervalPolicy;
use tempsamp_core::rewards::GroundTruth;
use tempsamp_core::trainer::{train, train_step, NullSink, StepRecord, TrainConfig, TrainError};
use tempsamp_core::{Schema, Task, TimeInterval};

fn dataset(task: Task, seed: u64) -> Vec<TaskInstance> {
    generate_dataset(&DatasetSpec {
        num_instances: 32,
        num_bins: 6,
        obs_noise: 0.0,
        task,
        bin_seconds: 10.0,
        seed,
    })
    .unwrap()
}

fn config(strategy: Strategy, inject: bool) -> TrainConfig {
    TrainConfig {
        group_size: 4,
        batch_size: 8,
        num_bins: 6,
        learning_rate: 0.2,
        steps_per_phase: (150, 150),
        strategy,
        inject_off_policy: inject,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let data = dataset(Task::Grounding, 1);
    let cfg = config(Strategy::NonLinearShape, true);
    let mut a: Vec<StepRecord> = Vec::new();
    let mut b: Vec<StepRecord> = Vec::new();
    let (pa, sa) = train(&cfg, &data, &mut a).unwrap();
    let (pb, sb) = train(&cfg, &data, &mut b).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    assert_eq!(pa, pb);
    let other = TrainConfig { seed: 10, ..cfg };
    let mut c: Vec<StepRecord> = Vec::new();
    train(&other, &data, &mut c).unwrap();
    assert_ne!(a, c);
}

#[test]
fn unreachable_ground_truth_gives_zero_updates() {
    let obs = vec![1.0, 0.0, 0.0, 1.0];
    let data = vec![TaskInstance {
        instance_id: 0,
        duration: 20.0,
        observation: obs,
        gt: GroundTruth::Interval(TimeInterval::new(100.0, 110.0).unwrap()),
    }];
    let cfg = TrainConfig {
        num_bins: 2,
        batch_size: 2,
        steps_per_phase: (20, 0),
        strategy: Strategy::Joint,
        inject_off_policy: false,
        ..TrainConfig::default()
    };
    let mut records: Vec<StepRecord> = Vec::new();
    let (policy, _) = train(&cfg, &data, &mut records).unwrap();
    assert!(records.iter().all(|r| r.advantages.iter().flatten().all(|a| *a == 0.0)));
    assert!(policy.weights().as_slice().iter().all(|w| *w == 0.0));
    assert!(policy.format_weights().as_slice().iter().all(|w| *w == 0.0));
    assert!(records.iter().all(|r| r.skewness.is_none()));
}

#[test]
fn large_kl_penalty_keeps_policy_at_reference() {
    let data = dataset(Task::Grounding, 2);
    let cfg = TrainConfig {
        kl_beta: 1e3,
        learning_rate: 1e-4,
        steps_per_phase: (100, 0),
        ..config(Strategy::NonLinearShape, true)
    };
    let (policy, summary) = train(&cfg, &data, &mut NullSink).unwrap();
    let dev = policy.max_deviation_from_reference().unwrap();
    assert!(dev < 1e-3, "deviation {dev}");
    assert!(summary.final_kl.unwrap() < 1e-6);
}

fn gt_likelihood_growth(strategy: Strategy, task: Task) -> (f64, f64) {
    let data = dataset(task, 3);
    let mut records: Vec<StepRecord> = Vec::new();
    train(&config(strategy, true), &data, &mut records).unwrap();
    let tenth = records.len() / 10;
    let mean = |rs: &[StepRecord]| rs.iter().map(|r| r.gt_action_prob).sum::<f64>() / rs.len() as f64;
    (mean(&records[..tenth]), mean(&records[records.len() - tenth..]))
}

#[test]
fn anchoring_raises_ground_truth_likelihood() {
    let (early, late) = gt_likelihood_growth(Strategy::Anchor, Task::Grounding);
    assert!(late > early, "early {early} late {late}");
}

#[test]
fn shaping_raises_ground_truth_likelihood() {
    for task in [Task::Grounding, Task::Highlight] {
        let (early, late) = gt_likelihood_growth(Strategy::NonLinearShape, task);
        assert!(late > early, "{task:?}: early {early} late {late}");
    }
}

#[test]
fn top1_ignores_the_off_policy_solution() {
    let data = dataset(Task::Grounding, 4);
    // A policy that always answers with the single first bin and the untagged template.
    let mut policy = IntervalPolicy::zeros(data[0].observation.len(), 6, NUM_TEMPLATES);
    let cols = policy.weights().cols();
    for row in 0..policy.feature_dim() {
        policy.weights_mut().as_mut_slice()[row * cols] = 50.0;
        policy.format_weights_mut().as_mut_slice()[row * NUM_TEMPLATES + 3] = 50.0;
    }
    policy.snapshot_reference();
    let cfg = TrainConfig { learning_rate: 0.0, ..config(Strategy::Downscale, true) };
    let batch: Vec<&TaskInstance> = data.iter().take(8).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let rec = train_step(&mut policy, &batch, 0, Schema::AnswerOnly, &cfg, &mut rng).unwrap();
    for (rewards, top1) in rec.rewards.iter().zip(&rec.top1_rewards) {
        assert_eq!(*rewards.last().unwrap(), 1.0);
        assert_eq!(*top1, 0.0);
    }
}

#[test]
fn answer_only_phase_total_equals_task_reward() {
    let data = dataset(Task::Grounding, 5);
    let cfg = TrainConfig { steps_per_phase: (5, 5), ..config(Strategy::Joint, false) };
    let mut records: Vec<StepRecord> = Vec::new();
    train(&cfg, &data, &mut records).unwrap();
    for r in records.iter().filter(|r| r.phase == Schema::AnswerOnly) {
        for (rewards, top1) in r.rewards.iter().zip(&r.top1_rewards) {
            let best = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(best, *top1);
        }
    }
    assert!(records.iter().any(|r| r.phase == Schema::ThinkAnswer));
}

#[test]
fn invalid_configs_are_rejected_before_training() {
    let data = dataset(Task::Grounding, 6);
    let bad = TrainConfig { group_size: 1, ..TrainConfig::default() };
    assert!(matches!(train(&bad, &data, &mut NullSink), Err(TrainError::ConfigInvalid { field: "g", .. })));
    assert!(matches!(train(&TrainConfig::default(), &[], &mut NullSink), Err(TrainError::EmptyDataset)));
}
