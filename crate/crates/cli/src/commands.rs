use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::thread;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use tempsamp_core::advantage::{shape_reward, Strategy};
use tempsamp_core::env::{self, generate_dataset, DatasetSpec, TaskInstance};
use tempsamp_core::metrics::{
    hit_at_1, mean_average_precision, mean_iou, recall_at_1, GroundingPrediction,
    HighlightPrediction, MetricsError, MAP_THRESHOLDS, RECALL_THRESHOLDS,
};
use tempsamp_core::rewards::GroundTruth;
use tempsamp_core::stats::Quartiles;
use tempsamp_core::trainer::{self, NullSink, PhaseSkewness, RunSummary, SCHEMA_VERSION};
use tempsamp_core::{SaliencyTrack, ShapingConfig, Task, TimeInterval};

use crate::config::{ExperimentConfig, Overrides};
use crate::error::CliError;
use crate::io::{self, JsonlSink, PolicyFile};

fn load_validated(config: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}

fn dataset_for(cfg: &ExperimentConfig) -> Result<Vec<TaskInstance>, CliError> {
    match &cfg.dataset_path {
        Some(path) => io::read_jsonl(path),
        None => generate_dataset(&cfg.dataset).map_err(|e| CliError::Validation(e.to_string())),
    }
}

fn train_error(e: trainer::TrainError) -> CliError {
    match e {
        trainer::TrainError::ConfigInvalid { .. } => CliError::Validation(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn train(config: Option<&Path>, overrides: &Overrides) -> Result<(), CliError> {
    let cfg = load_validated(config, overrides)?;
    let data = dataset_for(&cfg)?;
    info!(
        "training {} on {} instances for {} steps",
        cfg.train.strategy,
        data.len(),
        cfg.train.total_steps()
    );
    let log_path = cfg.output.log_path();
    let mut sink = JsonlSink::new(io::create(&log_path)?);
    let (policy, summary) = trainer::train(&cfg.train, &data, &mut sink).map_err(train_error)?;
    sink.finish().map_err(|e| CliError::runtime(log_path.display(), e))?;
    io::write_json(&cfg.output.summary_path(), &summary)?;
    io::write_json(&cfg.output.policy_path(), &PolicyFile::from_policy(&policy))?;
    if let Some(q) = summary.final_top1 {
        info!("final top-1 reward median {:.4} iqr {:.4}", q.median, q.iqr);
    }
    Ok(())
}

/// One line of a predictions file; which fields are required depends on the task.
#[derive(Debug, Clone, Deserialize)]
struct PredictionLine {
    instance_id: u64,
    #[serde(default)]
    ranked_intervals: Option<Vec<TimeInterval>>,
    #[serde(default)]
    confidences: Option<Vec<f64>>,
    #[serde(default)]
    ranked_clips: Option<Vec<(usize, f64)>>,
}

impl PredictionLine {
    fn grounding(&self) -> Result<GroundingPrediction, CliError> {
        let ranked_intervals = self.ranked_intervals.clone().ok_or_else(|| {
            CliError::Validation(format!("instance {}: missing ranked_intervals", self.instance_id))
        })?;
        Ok(GroundingPrediction {
            instance_id: self.instance_id,
            ranked_intervals,
            confidences: self.confidences.clone(),
        })
    }

    fn highlight(&self) -> Result<HighlightPrediction, CliError> {
        let ranked_clips = self.ranked_clips.clone().ok_or_else(|| {
            CliError::Validation(format!("instance {}: missing ranked_clips", self.instance_id))
        })?;
        Ok(HighlightPrediction {
            instance_id: self.instance_id,
            ranked_clips,
        })
    }
}

fn metric_error(e: MetricsError) -> CliError {
    CliError::Validation(e.to_string())
}

/// Flat metric report, in column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub task: Task,
    pub instances: usize,
    pub metrics: Vec<(String, f64)>,
}

const TIE_BREAK: &str = "equal confidences rank the earlier interval start first";

fn grounding_report(
    preds: &[PredictionLine],
    data: &[TaskInstance],
) -> Result<Vec<(String, f64)>, CliError> {
    let preds = preds.iter().map(PredictionLine::grounding).collect::<Result<Vec<_>, _>>()?;
    let gts: BTreeMap<u64, Vec<TimeInterval>> = data
        .iter()
        .filter_map(|i| match &i.gt {
            GroundTruth::Interval(iv) => Some((i.instance_id, vec![*iv])),
            GroundTruth::Highlights(_) => None,
        })
        .collect();
    let mut metrics = Vec::new();
    for t in RECALL_THRESHOLDS {
        metrics.push((format!("r1@{t}"), recall_at_1(&preds, &gts, t).map_err(metric_error)?));
    }
    metrics.push(("miou".into(), mean_iou(&preds, &gts).map_err(metric_error)?));
    Ok(metrics)
}

fn highlight_report(
    preds: &[PredictionLine],
    data: &[TaskInstance],
    very_good: f64,
) -> Result<Vec<(String, f64)>, CliError> {
    let moments = preds.iter().map(PredictionLine::grounding).collect::<Result<Vec<_>, _>>()?;
    let clips = preds.iter().map(PredictionLine::highlight).collect::<Result<Vec<_>, _>>()?;
    let mut segments: BTreeMap<u64, Vec<TimeInterval>> = BTreeMap::new();
    let mut tracks: BTreeMap<u64, SaliencyTrack> = BTreeMap::new();
    for inst in data {
        if let GroundTruth::Highlights(ann) = &inst.gt {
            segments.insert(inst.instance_id, io::salient_segments(ann));
            tracks.insert(inst.instance_id, ann.track.clone());
        }
    }
    let map = mean_average_precision(&moments, &segments, &MAP_THRESHOLDS).map_err(metric_error)?;
    let mut metrics: Vec<(String, f64)> =
        map.per_threshold.iter().map(|(t, v)| (format!("map@{t}"), *v)).collect();
    metrics.push(("map".into(), map.mean));
    metrics.push(("hit@1".into(), hit_at_1(&clips, &tracks, very_good).map_err(metric_error)?));
    Ok(metrics)
}

pub fn evaluate(
    preds_path: &Path,
    gt_path: &Path,
    task: Option<Task>,
    very_good: f64,
) -> Result<Report, CliError> {
    let preds: Vec<PredictionLine> = io::read_jsonl(preds_path)?;
    let data: Vec<TaskInstance> = io::read_jsonl(gt_path)?;
    let task = match task.or_else(|| data.first().map(TaskInstance::task)) {
        Some(t) => t,
        None => return Err(CliError::Validation(format!("{} holds no instances", gt_path.display()))),
    };
    if let Some(bad) = data.iter().find(|i| i.task() != task) {
        return Err(CliError::Validation(format!(
            "instance {} is a {:?} instance, expected {task:?}",
            bad.instance_id,
            bad.task()
        )));
    }
    if !(0.0..=1.0).contains(&very_good) {
        return Err(CliError::Validation(format!("--threshold {very_good} is outside [0, 1]")));
    }
    let metrics = match task {
        Task::Grounding => grounding_report(&preds, &data)?,
        Task::Highlight => highlight_report(&preds, &data, very_good)?,
    };
    Ok(Report {
        task,
        instances: preds.len(),
        metrics,
    })
}

/// A reader closing stdout early (for example `| head`) is not a failure.
fn stdout_result(result: std::io::Result<()>) -> Result<(), CliError> {
    match result {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => other.map_err(|e| CliError::runtime("stdout", e)),
    }
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Grounding => "grounding",
        Task::Highlight => "highlight",
    }
}

pub fn eval(
    preds_path: &Path,
    gt_path: &Path,
    task: Option<Task>,
    report_path: Option<&Path>,
    very_good: f64,
) -> Result<(), CliError> {
    let report = evaluate(preds_path, gt_path, task, very_good)?;
    let mut doc = serde_json::Map::new();
    doc.insert("task".into(), task_name(report.task).into());
    doc.insert("instances".into(), report.instances.into());
    doc.insert("tie_break".into(), TIE_BREAK.into());
    for (k, v) in &report.metrics {
        doc.insert(k.clone(), (*v).into());
    }
    let Some(path) = report_path else {
        let text = serde_json::to_string_pretty(&doc).expect("report serializes");
        return stdout_result(writeln!(std::io::stdout().lock(), "{text}"));
    };
    io::write_json(path, &doc)?;
    let csv_path = path.with_extension("csv");
    let mut w = csv::Writer::from_writer(io::create(&csv_path)?);
    let csv_err = |e: csv::Error| CliError::runtime(csv_path.display(), e);
    let mut header = vec!["task".to_string(), "instances".to_string()];
    header.extend(report.metrics.iter().map(|(k, _)| k.clone()));
    w.write_record(&header).map_err(csv_err)?;
    let mut row = vec![task_name(report.task).to_string(), report.instances.to_string()];
    row.extend(report.metrics.iter().map(|(_, v)| v.to_string()));
    w.write_record(&row).map_err(csv_err)?;
    w.flush().map_err(|e| CliError::runtime(csv_path.display(), e))?;
    info!("wrote {} and {}", path.display(), csv_path.display());
    Ok(())
}

/// `(r, shaped r)` over an even grid on `[0, 1]`, with the exact `tau` row.
pub fn shape_rows(cfg: &ShapingConfig, resolution: usize) -> Result<Vec<(f64, f64)>, CliError> {
    cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
    if resolution == 0 {
        return Err(CliError::Validation("--resolution must be at least 1".into()));
    }
    let mut grid: Vec<f64> = (0..=resolution)
        .map(|k| k as f64 / resolution as f64 * cfg.r_max)
        .collect();
    if !grid.contains(&cfg.tau) {
        grid.push(cfg.tau);
        grid.sort_by(f64::total_cmp);
    }
    grid.into_iter()
        .map(|r| {
            shape_reward(r, cfg)
                .map(|s| (r, s))
                .map_err(|e| CliError::Runtime(e.to_string()))
        })
        .collect()
}

pub fn shape(
    tau: Option<f64>,
    alpha1: Option<f64>,
    alpha2: Option<f64>,
    resolution: usize,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let defaults = ShapingConfig::default();
    let cfg = ShapingConfig {
        tau: tau.unwrap_or(defaults.tau),
        alpha1: alpha1.unwrap_or(defaults.alpha1),
        alpha2: alpha2.unwrap_or(defaults.alpha2),
        ..defaults
    };
    let rows = shape_rows(&cfg, resolution)?;
    let write = |w: &mut dyn std::io::Write| -> csv::Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["r", "shaped"])?;
        for (r, s) in &rows {
            csv.write_record([r.to_string(), s.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    };
    match out {
        Some(path) => {
            let mut file = io::create(path)?;
            write(&mut file).map_err(|e| CliError::runtime(path.display(), e))
        }
        None => stdout_result(write(&mut std::io::stdout().lock()).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => io,
            other => std::io::Error::other(format!("{other:?}")),
        })),
    }
}

/// One comparison arm: a strategy and whether the ground truth is injected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Arm {
    pub label: String,
    pub strategy: Strategy,
    pub inject_off_policy: bool,
}

impl Arm {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let label = s.trim().to_ascii_lowercase();
        if label == "grpo" {
            return Ok(Self {
                label,
                strategy: Strategy::Joint,
                inject_off_policy: false,
            });
        }
        let strategy: Strategy = label
            .parse()
            .map_err(|e| CliError::Validation(format!("--strategies: {label:?}: {e}, or grpo")))?;
        Ok(Self {
            label: strategy.name().to_string(),
            strategy,
            inject_off_policy: true,
        })
    }
}

/// Plot-data row of one comparison run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub arm: String,
    pub strategy: Strategy,
    pub inject_off_policy: bool,
    pub seed: u64,
    pub window_steps: usize,
    pub q1: Option<f64>,
    pub median: Option<f64>,
    pub q3: Option<f64>,
    pub iqr: Option<f64>,
    pub mean: Option<f64>,
    pub mean_abs_skew_answer_only: Option<f64>,
    pub mean_abs_skew_think_answer: Option<f64>,
}

impl CompareRow {
    fn new(arm: &Arm, seed: u64, summary: &RunSummary) -> Self {
        let q = summary.final_top1;
        let pick = |f: fn(&Quartiles) -> f64| q.as_ref().map(f);
        let PhaseSkewness {
            answer_only,
            think_answer,
        } = summary.mean_abs_skewness;
        Self {
            arm: arm.label.clone(),
            strategy: arm.strategy,
            inject_off_policy: arm.inject_off_policy,
            seed,
            window_steps: summary.final_window_steps,
            q1: pick(|q| q.q1),
            median: pick(|q| q.median),
            q3: pick(|q| q.q3),
            iqr: pick(|q| q.iqr),
            mean: pick(|q| q.mean),
            mean_abs_skew_answer_only: answer_only,
            mean_abs_skew_think_answer: think_answer,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct ArmSummary {
    arm: String,
    runs: usize,
    mean_median: Option<f64>,
    mean_iqr: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct CompareSummary {
    schema_version: u32,
    arms: Vec<ArmSummary>,
    runs: Vec<CompareRow>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.collect::<Option<Vec<f64>>>()?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn run_one(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let data = dataset_for(cfg)?;
    trainer::train(&cfg.train, &data, &mut NullSink)
        .map(|(_, summary)| summary)
        .map_err(train_error)
}

pub fn compare(
    config: Option<&Path>,
    overrides: &Overrides,
    strategies: &[String],
    seeds: &[u64],
) -> Result<(), CliError> {
    let base = load_validated(config, overrides)?;
    let arms = strategies.iter().map(|s| Arm::parse(s)).collect::<Result<Vec<_>, _>>()?;
    if arms.is_empty() || seeds.is_empty() {
        return Err(CliError::Validation("need at least one strategy and one seed".into()));
    }
    let mut jobs = Vec::new();
    for arm in &arms {
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.train.strategy = arm.strategy;
            cfg.train.inject_off_policy = arm.inject_off_policy;
            cfg.train.seed = seed;
            cfg.dataset.seed = seed;
            cfg.validate()
                .map_err(|e| CliError::Validation(format!("arm {} seed {seed}: {e}", arm.label)))?;
            jobs.push((arm, seed, cfg));
        }
    }
    let workers = thread::available_parallelism().map_or(1, |n| n.get());
    info!("running {} comparison runs on {workers} threads", jobs.len());
    let mut summaries: Vec<Result<RunSummary, CliError>> = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(workers) {
        thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|(_, _, cfg)| s.spawn(move || run_one(cfg))).collect();
            for h in handles {
                summaries.push(h.join().unwrap_or_else(|_| Err(CliError::Runtime("run panicked".into()))));
            }
        });
    }
    let out_dir = &base.output.out_dir;
    let mut rows = Vec::with_capacity(jobs.len());
    for ((arm, seed, _), summary) in jobs.iter().zip(summaries) {
        let summary = summary?;
        if summary.final_top1.is_none() {
            warn!("arm {} seed {seed} produced no top-1 rewards", arm.label);
        }
        io::write_json(&out_dir.join("runs").join(format!("{}_seed{seed}.json", arm.label)), &summary)?;
        rows.push(CompareRow::new(arm, *seed, &summary));
    }
    let csv_path = out_dir.join("compare.csv");
    let mut w = csv::Writer::from_writer(io::create(&csv_path)?);
    for row in &rows {
        w.serialize(row).map_err(|e| CliError::runtime(csv_path.display(), e))?;
    }
    w.flush().map_err(|e| CliError::runtime(csv_path.display(), e))?;
    let arm_summaries = arms
        .iter()
        .map(|arm| {
            let mine: Vec<&CompareRow> = rows.iter().filter(|r| r.arm == arm.label).collect();
            ArmSummary {
                arm: arm.label.clone(),
                runs: mine.len(),
                mean_median: mean_of(mine.iter().map(|r| r.median)),
                mean_iqr: mean_of(mine.iter().map(|r| r.iqr)),
            }
        })
        .collect();
    io::write_json(
        &out_dir.join("compare_summary.json"),
        &CompareSummary {
            schema_version: SCHEMA_VERSION,
            arms: arm_summaries,
            runs: rows,
        },
    )
}

/// Flag values that replace fields of the config's dataset section.
#[derive(Debug, Clone, Copy, Default)]
pub struct DatasetOverrides {
    pub seed: Option<u64>,
    pub num_instances: Option<usize>,
    pub num_bins: Option<usize>,
    pub task: Option<Task>,
    pub noise: Option<f64>,
}

pub fn gen_data(config: Option<&Path>, out: &Path, o: DatasetOverrides) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config)?;
    let spec = DatasetSpec {
        seed: o.seed.unwrap_or(cfg.dataset.seed),
        num_instances: o.num_instances.unwrap_or(cfg.dataset.num_instances),
        num_bins: o.num_bins.unwrap_or(cfg.dataset.num_bins),
        task: o.task.unwrap_or(cfg.dataset.task),
        obs_noise: o.noise.unwrap_or(cfg.dataset.obs_noise),
        bin_seconds: cfg.dataset.bin_seconds,
    };
    let data = generate_dataset(&spec)
        .map_err(|e| CliError::Validation(format!("invalid config field `dataset`: {e}")))?;
    io::write_jsonl(out, &data)?;
    info!("wrote {} instances to {}", data.len(), out.display());
    Ok(())
}

pub fn predict(policy_path: &Path, data_path: &Path, out: &Path, top_k: usize) -> Result<(), CliError> {
    if top_k == 0 {
        return Err(CliError::Validation("--top-k must be at least 1".into()));
    }
    let policy = io::read_json::<PolicyFile>(policy_path)?.into_policy()?;
    let data: Vec<TaskInstance> = io::read_jsonl(data_path)?;
    let preds = data
        .iter()
        .map(|inst| {
            env::predict(&policy, inst, top_k)
                .map_err(|e| CliError::Validation(format!("instance {}: {e}", inst.instance_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    io::write_jsonl(out, &preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_rows_include_tau_and_increase() {
        let cfg = ShapingConfig {
            tau: 0.75,
            ..ShapingConfig::default()
        };
        let rows = shape_rows(&cfg, 10).unwrap();
        assert_eq!(rows.len(), 12);
        assert!(rows.iter().any(|&(r, s)| r == 0.75 && s == 0.75));
        assert!(rows.windows(2).all(|w| w[1].1 > w[0].1));
        let defaults = shape_rows(&ShapingConfig::default(), 100).unwrap();
        assert_eq!(defaults.len(), 101);
        assert!(shape_rows(&ShapingConfig { alpha1: 0.0, ..cfg }, 10).is_err());
    }

    #[test]
    fn arms_parse() {
        let grpo = Arm::parse("grpo").unwrap();
        assert_eq!((grpo.strategy, grpo.inject_off_policy), (Strategy::Joint, false));
        let none = Arm::parse("none").unwrap();
        assert_eq!((none.strategy, none.inject_off_policy), (Strategy::Joint, true));
        assert_eq!(Arm::parse("Non-Linear-Shape").unwrap().strategy, Strategy::NonLinearShape);
        assert!(Arm::parse("bogus").is_err());
    }
}
